#include "netequiv/nn.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "netequiv/error.hpp"
#include "netequiv/io.hpp"
#include "netequiv/rng.hpp"

namespace netequiv::nn {

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "identity"; }

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  throw Error(ErrorKind::kSpec, "unknown activation '" + name + "'");
}

ArchitectureSpec ArchitectureSpec::tanh_mlp(std::vector<int> widths) {
  ArchitectureSpec spec;
  spec.layer_widths = std::move(widths);
  if (spec.layer_widths.size() >= 2) {
    spec.activations.assign(spec.layer_widths.size() - 1, Activation::kTanh);
    spec.activations.back() = Activation::kIdentity;
  }
  spec.validate();
  return spec;
}

ArchitectureSpec ArchitectureSpec::parse(const std::string& dashed) {
  std::vector<int> widths;
  std::stringstream ss(dashed);
  std::string part;
  while (std::getline(ss, part, '-')) {
    try {
      std::size_t used = 0;
      const int w = std::stoi(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
      widths.push_back(w);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kSpec, "bad architecture '" + dashed + "'");
    }
  }
  return tanh_mlp(std::move(widths));
}

void ArchitectureSpec::validate() const {
  if (layer_widths.size() < 2) throw Error(ErrorKind::kSpec, "architecture needs at least input and output layers");
  for (int w : layer_widths)
    if (w < 1) throw Error(ErrorKind::kSpec, "layer widths must be >= 1");
  if (activations.size() != layer_widths.size() - 1)
    throw Error(ErrorKind::kSpec, "need one activation per non-input layer");
}

std::string ArchitectureSpec::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < layer_widths.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(layer_widths[i]);
  }
  return out;
}

TapSelection TapSelection::output(const ArchitectureSpec& spec) { return whole_layer(spec, spec.num_layers() - 1); }

TapSelection TapSelection::whole_layer(const ArchitectureSpec& spec, int layer) {
  if (layer < 0 || layer >= spec.num_layers())
    throw Error(ErrorKind::kTapSelection, "layer " + std::to_string(layer) + " does not exist");
  TapSelection taps;
  for (int i = 0; i < spec.layer_widths[static_cast<std::size_t>(layer)]; ++i) taps.neurons.push_back({layer, i});
  return taps;
}

void TapSelection::validate(const ArchitectureSpec& spec) const {
  if (neurons.empty()) throw Error(ErrorKind::kTapSelection, "tap selection is empty");
  for (const auto& id : neurons) {
    if (id.layer < 0 || id.layer >= spec.num_layers() || id.index < 0 ||
        id.index >= spec.layer_widths[static_cast<std::size_t>(id.layer)]) {
      throw Error(ErrorKind::kTapSelection, "tap (" + std::to_string(id.layer) + "," + std::to_string(id.index) +
                                                ") does not address a neuron of " + spec.to_string());
    }
  }
}

WhitneyCheck check_whitney(const ArchitectureSpec& spec, const TapSelection& taps, int intrinsic_dim) {
  taps.validate(spec);
  const int needed = 2 * intrinsic_dim + 1;
  WhitneyCheck check;
  if (taps.size() < needed) {
    check.valid = false;
    check.message = std::to_string(taps.size()) + " taps < 2d+1 = " + std::to_string(needed);
  }
  int deepest = 0;
  for (const auto& id : taps.neurons) deepest = std::max(deepest, id.layer);
  for (int l = 1; l < deepest; ++l) {
    if (spec.layer_widths[static_cast<std::size_t>(l)] < needed) {
      check.valid = false;
      if (!check.message.empty()) check.message += "; ";
      check.message += "layer " + std::to_string(l) + " has width " +
                       std::to_string(spec.layer_widths[static_cast<std::size_t>(l)]) + " < " + std::to_string(needed);
    }
  }
  return check;
}

Mlp::Mlp(ArchitectureSpec spec, std::vector<Eigen::MatrixXd> weights, std::vector<Eigen::VectorXd> biases,
         std::uint64_t seed)
    : spec_(std::move(spec)), weights_(std::move(weights)), biases_(std::move(biases)), seed_(seed) {
  spec_.validate();
  const auto layers = static_cast<std::size_t>(spec_.num_layers());
  if (weights_.size() != layers - 1 || biases_.size() != layers - 1)
    throw Error(ErrorKind::kShape, "expected " + std::to_string(layers - 1) + " weight matrices");
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    if (weights_[l].rows() != spec_.layer_widths[l + 1] || weights_[l].cols() != spec_.layer_widths[l] ||
        biases_[l].size() != spec_.layer_widths[l + 1]) {
      throw Error(ErrorKind::kShape, "weight shapes of layer " + std::to_string(l + 1) + " do not match " +
                                         spec_.to_string());
    }
  }
}

Mlp Mlp::initialize(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    const int fan_in = spec.layer_widths[l];
    const int fan_out = spec.layer_widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
    Eigen::VectorXd b(fan_out);
    for (int r = 0; r < fan_out; ++r) b(r) = rng.uniform(-bound, bound);
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
  return Mlp(spec, std::move(weights), std::move(biases), seed);
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.spec_.layer_widths != b.spec_.layer_widths || a.spec_.activations != b.spec_.activations ||
      a.seed_ != b.seed_)
    return false;
  for (std::size_t l = 0; l < a.weights_.size(); ++l) {
    if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
  }
  return true;
}

namespace {

void apply_activation(Activation act, Eigen::MatrixXd& z) {
  if (act == Activation::kTanh) z = z.array().tanh().matrix();
}

// Columns are samples. Returns the post-activation values of every layer.
std::vector<Eigen::MatrixXd> all_layers(const Mlp& net, const Eigen::MatrixXd& inputs_by_col) {
  const auto& w = net.weights();
  const auto& b = net.biases();
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(w.size() + 1);
  acts.push_back(inputs_by_col);
  for (std::size_t l = 0; l < w.size(); ++l) {
    Eigen::MatrixXd z = w[l] * acts.back();
    z.colwise() += b[l];
    apply_activation(net.spec().activations[l], z);
    acts.push_back(std::move(z));
  }
  return acts;
}

void check_input(const Mlp& net, Eigen::Index dim) {
  if (dim != net.spec().input_dim()) {
    throw Error(ErrorKind::kShape, "input has dimension " + std::to_string(dim) + ", network expects " +
                                       std::to_string(net.spec().input_dim()));
  }
}

}  // namespace

Eigen::VectorXd forward(const Mlp& net, const Eigen::VectorXd& x) {
  check_input(net, x.size());
  return all_layers(net, x).back().col(0);
}

Eigen::MatrixXd forward_batch(const Mlp& net, const Eigen::MatrixXd& inputs) {
  check_input(net, inputs.cols());
  return all_layers(net, inputs.transpose()).back().transpose();
}

Eigen::VectorXd forward_with_taps(const Mlp& net, const TapSelection& taps, const Eigen::VectorXd& x) {
  return forward_with_taps_batch(net, taps, x.transpose()).row(0).transpose();
}

Eigen::MatrixXd forward_with_taps_batch(const Mlp& net, const TapSelection& taps, const Eigen::MatrixXd& inputs) {
  taps.validate(net.spec());
  check_input(net, inputs.cols());
  int deepest = 0;
  for (const auto& id : taps.neurons) deepest = std::max(deepest, id.layer);
  // Only propagate as far as the deepest tap.
  std::vector<Eigen::MatrixXd> acts;
  acts.push_back(inputs.transpose());
  for (int l = 0; l < deepest; ++l) {
    Eigen::MatrixXd z = net.weights()[static_cast<std::size_t>(l)] * acts.back();
    z.colwise() += net.biases()[static_cast<std::size_t>(l)];
    apply_activation(net.spec().activations[static_cast<std::size_t>(l)], z);
    acts.push_back(std::move(z));
  }
  Eigen::MatrixXd out(inputs.rows(), taps.size());
  for (int t = 0; t < taps.size(); ++t) {
    const auto& id = taps.neurons[static_cast<std::size_t>(t)];
    out.col(t) = acts[static_cast<std::size_t>(id.layer)].row(id.index).transpose();
  }
  return out;
}

Eigen::MatrixXd jacobian_to_taps(const Mlp& net, const TapSelection& taps, const Eigen::VectorXd& x) {
  taps.validate(net.spec());
  check_input(net, x.size());
  int deepest = 0;
  for (const auto& id : taps.neurons) deepest = std::max(deepest, id.layer);
  const auto k = x.size();
  // tangents[l] = d(layer l activations)/dx
  std::vector<Eigen::MatrixXd> tangents;
  tangents.push_back(Eigen::MatrixXd::Identity(k, k));
  Eigen::VectorXd a = x;
  for (int l = 0; l < deepest; ++l) {
    const auto& w = net.weights()[static_cast<std::size_t>(l)];
    Eigen::VectorXd z = w * a + net.biases()[static_cast<std::size_t>(l)];
    Eigen::MatrixXd t = w * tangents.back();
    if (net.spec().activations[static_cast<std::size_t>(l)] == Activation::kTanh) {
      z = z.array().tanh().matrix();
      const Eigen::VectorXd slope = (1.0 - z.array().square()).matrix();
      t = slope.asDiagonal() * t;
    }
    a = std::move(z);
    tangents.push_back(std::move(t));
  }
  Eigen::MatrixXd jac(taps.size(), k);
  for (int r = 0; r < taps.size(); ++r) {
    const auto& id = taps.neurons[static_cast<std::size_t>(r)];
    jac.row(r) = tangents[static_cast<std::size_t>(id.layer)].row(id.index);
  }
  return jac;
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::kConfig, "learning_rate must be positive");
  if (epochs < 1) throw Error(ErrorKind::kConfig, "epochs must be positive");
  if (batch_size < 0) throw Error(ErrorKind::kConfig, "batch_size must be positive (or 0 for automatic)");
  if (record_every < 1) throw Error(ErrorKind::kConfig, "record_every must be positive");
}

double mean_squared_error(const Mlp& net, const TrainingData& data) {
  const Eigen::MatrixXd out = forward_batch(net, data.inputs);
  return (out - data.targets).squaredNorm() / static_cast<double>(out.size());
}

namespace {

struct Gradients {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
};

// Loss and gradient of the mean squared error over the given columns.
double loss_and_gradient(const Mlp& net, const Eigen::MatrixXd& x_cols, const Eigen::MatrixXd& y_cols,
                         Gradients& grad) {
  const auto acts = all_layers(net, x_cols);
  const Eigen::MatrixXd residual = acts.back() - y_cols;
  const double count = static_cast<double>(residual.size());
  const double loss = residual.squaredNorm() / count;
  Eigen::MatrixXd delta = (2.0 / count) * residual;
  const auto& weights = net.weights();
  for (std::size_t l = weights.size(); l-- > 0;) {
    if (net.spec().activations[l] == Activation::kTanh) {
      delta.array() *= 1.0 - acts[l + 1].array().square();
    }
    grad.w[l].noalias() = delta * acts[l].transpose();
    grad.b[l] = delta.rowwise().sum();
    if (l > 0) delta = weights[l].transpose() * delta;
  }
  return loss;
}

}  // namespace

TrainingResult train(const Mlp& initial, const TrainingData& data, const TrainingConfig& cfg) {
  cfg.validate();
  if (data.inputs.rows() == 0) throw Error(ErrorKind::kShape, "training data is empty");
  if (data.inputs.rows() != data.targets.rows())
    throw Error(ErrorKind::kShape, "inputs and targets have different sample counts");
  check_input(initial, data.inputs.cols());
  if (data.targets.cols() != initial.spec().output_dim())
    throw Error(ErrorKind::kShape, "targets have dimension " + std::to_string(data.targets.cols()) +
                                       ", network outputs " + std::to_string(initial.spec().output_dim()));

  const auto n = data.inputs.rows();
  int batch = cfg.batch_size;
  if (batch == 0) batch = n < 4096 ? static_cast<int>(n) : 256;
  batch = static_cast<int>(std::min<Eigen::Index>(batch, n));

  std::vector<Eigen::MatrixXd> weights = initial.weights();
  std::vector<Eigen::VectorXd> biases = initial.biases();
  Gradients grad{weights, biases};
  Gradients m1{weights, biases}, m2{weights, biases};
  for (std::size_t l = 0; l < weights.size(); ++l) {
    m1.w[l].setZero();
    m1.b[l].setZero();
    m2.w[l].setZero();
    m2.b[l].setZero();
  }

  const Eigen::MatrixXd x_all = data.inputs.transpose();
  const Eigen::MatrixXd y_all = data.targets.transpose();
  const bool full_batch = batch == n;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(mix_seed(cfg.seed, 0x7261696eULL));

  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::int64_t step = 0;
  TrainingResult result;
  Mlp net(initial.spec(), weights, biases, initial.seed());
  Eigen::MatrixXd xb, yb;

  auto update = [&](double loss, int epoch) {
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::kTraining, "loss became non-finite at epoch " + std::to_string(epoch));
    }
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (cfg.optimizer == Optimizer::kSgd) {
        weights[l] -= cfg.learning_rate * grad.w[l];
        biases[l] -= cfg.learning_rate * grad.b[l];
        continue;
      }
      m1.w[l] = beta1 * m1.w[l] + (1.0 - beta1) * grad.w[l];
      m2.w[l] = beta2 * m2.w[l] + (1.0 - beta2) * grad.w[l].cwiseAbs2();
      weights[l].array() -= cfg.learning_rate * (m1.w[l].array() / bc1) / ((m2.w[l].array() / bc2).sqrt() + adam_eps);
      m1.b[l] = beta1 * m1.b[l] + (1.0 - beta1) * grad.b[l];
      m2.b[l] = beta2 * m2.b[l] + (1.0 - beta2) * grad.b[l].cwiseAbs2();
      biases[l].array() -= cfg.learning_rate * (m1.b[l].array() / bc1) / ((m2.b[l].array() / bc2).sqrt() + adam_eps);
    }
    net = Mlp(initial.spec(), weights, biases, initial.seed());
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (full_batch) {
      const double loss = loss_and_gradient(net, x_all, y_all, grad);
      if (epoch % cfg.record_every == 0 || epoch == 1) result.curve.emplace_back(epoch - 1, loss);
      update(loss, epoch);
      continue;
    }
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);
    }
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min<Eigen::Index>(batch, n - start);
      xb.resize(x_all.rows(), len);
      yb.resize(y_all.rows(), len);
      for (Eigen::Index j = 0; j < len; ++j) {
        xb.col(j) = x_all.col(order[static_cast<std::size_t>(start + j)]);
        yb.col(j) = y_all.col(order[static_cast<std::size_t>(start + j)]);
      }
      update(loss_and_gradient(net, xb, yb, grad), epoch);
    }
    if (epoch % cfg.record_every == 0 || epoch == 1) result.curve.emplace_back(epoch, mean_squared_error(net, data));
  }

  result.final_mse = mean_squared_error(net, data);
  if (!std::isfinite(result.final_mse)) {
    throw Error(ErrorKind::kTraining, "loss became non-finite at epoch " + std::to_string(cfg.epochs));
  }
  result.curve.emplace_back(cfg.epochs, result.final_mse);
  result.net = std::move(net);
  return result;
}

nlohmann::json to_json(const Mlp& net) {
  nlohmann::json j;
  j["format"] = "netequiv.mlp/1";
  j["layer_widths"] = net.spec().layer_widths;
  std::vector<std::string> acts;
  for (auto a : net.spec().activations) acts.push_back(to_string(a));
  j["activations"] = acts;
  j["seed"] = net.seed();
  nlohmann::json weights = nlohmann::json::array(), biases = nlohmann::json::array();
  for (std::size_t l = 0; l < net.weights().size(); ++l) {
    const auto& w = net.weights()[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    weights.push_back(flat);
    biases.push_back(io::vector_to_json(net.biases()[l]));
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
  try {
    ArchitectureSpec spec;
    spec.layer_widths = j.at("layer_widths").get<std::vector<int>>();
    for (const auto& a : j.at("activations")) spec.activations.push_back(activation_from_string(a.get<std::string>()));
    spec.validate();
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    const auto& jw = j.at("weights");
    const auto& jb = j.at("biases");
    for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
      const int rows = spec.layer_widths[l + 1], cols = spec.layer_widths[l];
      const auto flat = jw.at(l).get<std::vector<double>>();
      if (static_cast<int>(flat.size()) != rows * cols)
        throw Error(ErrorKind::kShape, "weight array " + std::to_string(l) + " has wrong length");
      Eigen::MatrixXd w(rows, cols);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) w(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
      weights.push_back(std::move(w));
      biases.push_back(io::vector_from_json(jb.at(l)));
    }
    return Mlp(std::move(spec), std::move(weights), std::move(biases), j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, std::string("malformed network json: ") + e.what());
  }
}

void save_network(const std::filesystem::path& path, const Mlp& net) { io::write_json(path, to_json(net)); }

Mlp load_network(const std::filesystem::path& path) { return mlp_from_json(io::read_json(path)); }

nlohmann::json to_json(const TapSelection& taps) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& id : taps.neurons) arr.push_back({id.layer, id.index});
  return arr;
}

TapSelection taps_from_json(const nlohmann::json& j) {
  TapSelection taps;
  for (const auto& pair : j) taps.neurons.push_back({pair.at(0).get<int>(), pair.at(1).get<int>()});
  return taps;
}

}  // namespace netequiv::nn
