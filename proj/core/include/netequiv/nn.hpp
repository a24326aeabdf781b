#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace netequiv::nn {

enum class Activation { kTanh, kIdentity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Layer widths from input to output. `activations[l]` applies to layer l+1,
// so there is one entry per non-input layer.
struct ArchitectureSpec {
  std::vector<int> layer_widths;
  std::vector<Activation> activations;

  // tanh on every hidden layer, identity on the output layer.
  static ArchitectureSpec tanh_mlp(std::vector<int> widths);
  // Parses "1-8-8-8-1".
  static ArchitectureSpec parse(const std::string& dashed);

  void validate() const;
  int num_layers() const { return static_cast<int>(layer_widths.size()); }
  int input_dim() const { return layer_widths.front(); }
  int output_dim() const { return layer_widths.back(); }
  std::string to_string() const;
};

// Layer 0 is the input layer; layer num_layers()-1 is the output layer.
struct NeuronId {
  int layer = 0;
  int index = 0;
  friend bool operator==(const NeuronId&, const NeuronId&) = default;
};

struct TapSelection {
  std::vector<NeuronId> neurons;

  int size() const { return static_cast<int>(neurons.size()); }

  static TapSelection output(const ArchitectureSpec& spec);
  static TapSelection whole_layer(const ArchitectureSpec& spec, int layer);
  // Throws kTapSelection if empty or any id is out of range.
  void validate(const ArchitectureSpec& spec) const;
};

// Whitney rule: at least 2d+1 taps, and every hidden layer strictly before a
// tapped layer has width >= 2d+1. The input layer is the manifold embedding
// itself and is not counted.
struct WhitneyCheck {
  bool valid = true;
  std::string message;
};
WhitneyCheck check_whitney(const ArchitectureSpec& spec, const TapSelection& taps, int intrinsic_dim);

class Mlp {
 public:
  Mlp() = default;
  Mlp(ArchitectureSpec spec, std::vector<Eigen::MatrixXd> weights, std::vector<Eigen::VectorXd> biases,
      std::uint64_t seed);

  // Uniform weights and biases in +-1/sqrt(fan_in).
  static Mlp initialize(const ArchitectureSpec& spec, std::uint64_t seed);

  const ArchitectureSpec& spec() const { return spec_; }
  // weights()[l] maps layer l to layer l+1 (shape width[l+1] x width[l]).
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
  std::uint64_t seed() const { return seed_; }

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  ArchitectureSpec spec_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  std::uint64_t seed_ = 0;
};

Eigen::VectorXd forward(const Mlp& net, const Eigen::VectorXd& x);
// Rows of `inputs` are samples; returns one output row per sample.
Eigen::MatrixXd forward_batch(const Mlp& net, const Eigen::MatrixXd& inputs);

// Post-activation values of the tapped neurons, in tap order.
Eigen::VectorXd forward_with_taps(const Mlp& net, const TapSelection& taps, const Eigen::VectorXd& x);
Eigen::MatrixXd forward_with_taps_batch(const Mlp& net, const TapSelection& taps, const Eigen::MatrixXd& inputs);

// d(tap activations)/d(input), taps x input_dim, by forward-mode propagation.
Eigen::MatrixXd jacobian_to_taps(const Mlp& net, const TapSelection& taps, const Eigen::VectorXd& x);

enum class Optimizer { kSgd, kAdam };

struct TrainingConfig {
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 1e-3;
  int epochs = 1000;
  // 0 selects full batch below 4096 samples and 256 otherwise.
  int batch_size = 0;
  std::uint64_t seed = 0;
  // Every `record_every` epochs the full-data MSE is appended to the curve.
  int record_every = 1;

  void validate() const;
};

struct TrainingData {
  Eigen::MatrixXd inputs;   // n x k
  Eigen::MatrixXd targets;  // n x m
};

struct TrainingResult {
  Mlp net;
  double final_mse = 0.0;
  std::vector<std::pair<int, double>> curve;
};

// Mean squared error over all samples and output components.
double mean_squared_error(const Mlp& net, const TrainingData& data);

// Single-threaded; identical (net, data, cfg) give bit-identical weights.
TrainingResult train(const Mlp& net, const TrainingData& data, const TrainingConfig& cfg);

nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);
void save_network(const std::filesystem::path& path, const Mlp& net);
Mlp load_network(const std::filesystem::path& path);

nlohmann::json to_json(const TapSelection& taps);
TapSelection taps_from_json(const nlohmann::json& j);

}  // namespace netequiv::nn
