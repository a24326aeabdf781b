#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "netequiv/nn.hpp"

namespace netequiv::experiments {

enum class ScenarioId { kParabola41, kDifferentInputs42, kVectorField43 };

std::string to_string(ScenarioId id);
ScenarioId scenario_from_string(const std::string& name);

struct NetworkConfig {
  std::string architecture;
  int training_size = 0;
  int validation_size = 0;
  nn::TrainingConfig training;
  // Layer whose neurons are tapped; -1 selects the last hidden layer.
  int tap_layer = -1;
};

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;

  ScenarioId scenario = ScenarioId::kDifferentInputs42;
  std::uint64_t seed = 0;
  int n = 0;                       // neighborhoods / base points
  int q = 0;                       // neighborhood size; unused with analytic covariances
  std::optional<double> epsilon;   // overrides the median rule for the Mahalanobis fits
  double delta = 0.0;              // ball radius
  int k_neighbors = 10;
  // Rank cap of covariance pseudoinverses: -1 uses the intrinsic dimension,
  // 0 keeps every direction above the relative cutoff.
  int pinv_max_rank = -1;
  int correspondences = 0;         // 0: max(ell, 10)
  int fold_probes = 0;
  bool euclidean_control = false;
  bool write_bundle = true;
  std::array<NetworkConfig, 2> networks;
  std::filesystem::path output_dir;

  // Reference defaults for the scenario.
  static ExperimentConfig defaults(ScenarioId id);
  // Keys missing from `j` keep the scenario defaults. Throws kConfig naming
  // the offending field.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

struct ScenarioReport {
  nlohmann::json report;  // contents of report.json
  nlohmann::json timings;
  std::filesystem::path output_dir;
};

// Runs the scenario and writes report.json, timings.json, CSVs and the
// transform bundle under cfg.output_dir. On a stage failure report.json
// records the failed stage before the error propagates.
ScenarioReport run_scenario(const ExperimentConfig& cfg);

}  // namespace netequiv::experiments
