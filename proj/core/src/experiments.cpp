#include "netequiv/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "netequiv/align.hpp"
#include "netequiv/dmap.hpp"
#include "netequiv/error.hpp"
#include "netequiv/io.hpp"
#include "netequiv/mahalanobis.hpp"
#include "netequiv/rng.hpp"
#include "netequiv/sampling.hpp"
#include "netequiv/tasks.hpp"
#include "netequiv/transform.hpp"

namespace netequiv::experiments {

using nlohmann::json;

std::string to_string(ScenarioId id) {
  switch (id) {
    case ScenarioId::kParabola41: return "parabola_41";
    case ScenarioId::kDifferentInputs42: return "different_inputs_42";
    case ScenarioId::kVectorField43: return "vectorfield_43";
  }
  return "unknown";
}

ScenarioId scenario_from_string(const std::string& name) {
  for (auto id : {ScenarioId::kParabola41, ScenarioId::kDifferentInputs42, ScenarioId::kVectorField43})
    if (to_string(id) == name) return id;
  throw Error(ErrorKind::kConfig,
              "field \"scenario\": unknown scenario '" + name +
                  "' (expected parabola_41, different_inputs_42 or vectorfield_43)");
}

namespace {

NetworkConfig network(const std::string& arch, int train, int validation, int epochs, int tap_layer) {
  NetworkConfig nc;
  nc.architecture = arch;
  nc.training_size = train;
  nc.validation_size = validation;
  nc.training.epochs = epochs;
  nc.training.record_every = std::max(1, epochs / 200);
  nc.tap_layer = tap_layer;
  return nc;
}

std::string optimizer_name(nn::Optimizer o) { return o == nn::Optimizer::kAdam ? "adam" : "sgd"; }

json network_to_json(const NetworkConfig& nc) {
  return {{"architecture", nc.architecture},
          {"training_size", nc.training_size},
          {"validation_size", nc.validation_size},
          {"epochs", nc.training.epochs},
          {"learning_rate", nc.training.learning_rate},
          {"batch_size", nc.training.batch_size},
          {"optimizer", optimizer_name(nc.training.optimizer)},
          {"record_every", nc.training.record_every},
          {"tap_layer", nc.tap_layer}};
}

[[noreturn]] void config_error(const std::string& field, const std::string& what) {
  throw Error(ErrorKind::kConfig, "field \"" + field + "\": " + what);
}

template <typename T>
T get_field(const json& j, const std::string& key, const std::string& field) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(field, "has the wrong type");
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& prefix) {
  if (!j.is_object()) config_error(prefix.empty() ? "<root>" : prefix, "must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) config_error(prefix + key, "unknown field");
}

NetworkConfig network_from_json(const json& j, NetworkConfig nc, const std::string& prefix) {
  check_keys(j,
             {"architecture", "training_size", "validation_size", "epochs", "learning_rate", "batch_size", "optimizer",
              "record_every", "tap_layer"},
             prefix);
  if (j.contains("architecture")) nc.architecture = get_field<std::string>(j, "architecture", prefix + "architecture");
  if (j.contains("training_size")) nc.training_size = get_field<int>(j, "training_size", prefix + "training_size");
  if (j.contains("validation_size"))
    nc.validation_size = get_field<int>(j, "validation_size", prefix + "validation_size");
  if (j.contains("epochs")) nc.training.epochs = get_field<int>(j, "epochs", prefix + "epochs");
  if (j.contains("learning_rate"))
    nc.training.learning_rate = get_field<double>(j, "learning_rate", prefix + "learning_rate");
  if (j.contains("batch_size")) nc.training.batch_size = get_field<int>(j, "batch_size", prefix + "batch_size");
  if (j.contains("record_every")) nc.training.record_every = get_field<int>(j, "record_every", prefix + "record_every");
  if (j.contains("tap_layer")) nc.tap_layer = get_field<int>(j, "tap_layer", prefix + "tap_layer");
  if (j.contains("optimizer")) {
    const auto name = get_field<std::string>(j, "optimizer", prefix + "optimizer");
    if (name == "adam") nc.training.optimizer = nn::Optimizer::kAdam;
    else if (name == "sgd") nc.training.optimizer = nn::Optimizer::kSgd;
    else config_error(prefix + "optimizer", "expected adam or sgd");
  }
  return nc;
}

int scenario_input_dim(ScenarioId id) { return id == ScenarioId::kVectorField43 ? 2 : 1; }

}  // namespace

ExperimentConfig ExperimentConfig::defaults(ScenarioId id) {
  ExperimentConfig c;
  c.scenario = id;
  c.seed = 0;
  c.output_dir = "results/" + to_string(id);
  switch (id) {
    case ScenarioId::kParabola41:
      c.n = 512;
      c.q = 1024;
      c.delta = 0.05;
      c.fold_probes = 401;
      // A rank-1 metric on the curved 8-neuron tap curve lets distant points
      // with tangents orthogonal to their chord look close.
      c.pinv_max_rank = 0;
      c.networks = {network("1-1-1", 10240, 512, 300, 1), network("1-8-8-8-1", 10240, 512, 300, -1)};
      break;
    case ScenarioId::kDifferentInputs42:
      c.n = 990;
      c.q = 11;
      c.epsilon = 5.0;
      c.delta = 0.01;
      c.fold_probes = 0;
      c.euclidean_control = true;
      c.networks = {network("1-3-1", 900, 100, 40000, 1), network("1-3-1", 900, 100, 40000, 1)};
      break;
    case ScenarioId::kVectorField43:
      c.n = 10000;
      c.q = 0;
      c.delta = 0.0;
      c.correspondences = 20;
      c.networks = {network("2-5-5-5-5-2", 3600, 400, 10000, -1), network("2-5-5-5-5-2", 3600, 400, 10000, -1)};
      break;
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j,
             {"schema_version", "scenario", "seed", "n", "q", "epsilon", "delta", "k_neighbors", "pinv_max_rank", "correspondences",
              "fold_probes", "euclidean_control", "write_bundle", "networks", "output_dir"},
             "");
  if (j.contains("schema_version")) {
    const int v = get_field<int>(j, "schema_version", "schema_version");
    if (v != kSchemaVersion)
      config_error("schema_version", "unsupported version " + std::to_string(v) + " (expected " +
                                         std::to_string(kSchemaVersion) + ")");
  }
  if (!j.contains("scenario")) config_error("scenario", "is required");
  ExperimentConfig c = defaults(scenario_from_string(get_field<std::string>(j, "scenario", "scenario")));
  if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed", "seed");
  if (j.contains("n")) c.n = get_field<int>(j, "n", "n");
  if (j.contains("q")) c.q = get_field<int>(j, "q", "q");
  if (j.contains("epsilon")) {
    if (j.at("epsilon").is_null()) c.epsilon.reset();
    else c.epsilon = get_field<double>(j, "epsilon", "epsilon");
  }
  if (j.contains("delta")) c.delta = get_field<double>(j, "delta", "delta");
  if (j.contains("k_neighbors")) c.k_neighbors = get_field<int>(j, "k_neighbors", "k_neighbors");
  if (j.contains("pinv_max_rank")) c.pinv_max_rank = get_field<int>(j, "pinv_max_rank", "pinv_max_rank");
  if (j.contains("correspondences")) c.correspondences = get_field<int>(j, "correspondences", "correspondences");
  if (j.contains("fold_probes")) c.fold_probes = get_field<int>(j, "fold_probes", "fold_probes");
  if (j.contains("euclidean_control"))
    c.euclidean_control = get_field<bool>(j, "euclidean_control", "euclidean_control");
  if (j.contains("write_bundle")) c.write_bundle = get_field<bool>(j, "write_bundle", "write_bundle");
  if (j.contains("output_dir")) c.output_dir = get_field<std::string>(j, "output_dir", "output_dir");
  if (j.contains("networks")) {
    const auto& nets = j.at("networks");
    if (!nets.is_array() || nets.size() != 2) config_error("networks", "must be an array of two objects");
    for (std::size_t i = 0; i < 2; ++i)
      c.networks[i] = network_from_json(nets[i], c.networks[i], "networks[" + std::to_string(i) + "].");
  }
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["scenario"] = to_string(scenario);
  j["seed"] = seed;
  j["n"] = n;
  j["q"] = q;
  j["epsilon"] = epsilon ? json(*epsilon) : json(nullptr);
  j["delta"] = delta;
  j["k_neighbors"] = k_neighbors;
  j["pinv_max_rank"] = pinv_max_rank;
  j["correspondences"] = correspondences;
  j["fold_probes"] = fold_probes;
  j["euclidean_control"] = euclidean_control;
  j["write_bundle"] = write_bundle;
  j["networks"] = json::array({network_to_json(networks[0]), network_to_json(networks[1])});
  j["output_dir"] = output_dir.string();
  return j;
}

void ExperimentConfig::validate() const {
  if (k_neighbors < 1) config_error("k_neighbors", "must be >= 1");
  if (n <= k_neighbors) config_error("n", "must exceed k_neighbors (" + std::to_string(k_neighbors) + ")");
  if (scenario != ScenarioId::kVectorField43) {
    if (q < 2) config_error("q", "must be >= 2, got " + std::to_string(q));
    if (!(delta > 0.0)) config_error("delta", "must be positive");
  } else if (q < 0) {
    config_error("q", "must not be negative, got " + std::to_string(q));
  }
  if (epsilon && !(*epsilon > 0.0)) config_error("epsilon", "must be positive");
  if (pinv_max_rank < -1) config_error("pinv_max_rank", "must be -1, 0 or a positive rank");
  if (correspondences < 0) config_error("correspondences", "must not be negative");
  if (correspondences > n) config_error("correspondences", "cannot exceed n");
  if (scenario == ScenarioId::kParabola41 && fold_probes < 3) config_error("fold_probes", "must be >= 3");
  if (fold_probes < 0) config_error("fold_probes", "must not be negative");
  if (output_dir.empty()) config_error("output_dir", "must not be empty");
  const int dim = scenario_input_dim(scenario);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& nc = networks[i];
    const std::string prefix = "networks[" + std::to_string(i) + "].";
    nn::ArchitectureSpec spec;
    try {
      spec = nn::ArchitectureSpec::parse(nc.architecture);
    } catch (const Error& e) {
      config_error(prefix + "architecture", e.detail());
    }
    if (spec.input_dim() != dim || spec.output_dim() != dim)
      config_error(prefix + "architecture", "scenario needs " + std::to_string(dim) + " inputs and outputs");
    if (nc.training_size < 1) config_error(prefix + "training_size", "must be positive");
    if (nc.validation_size < 0) config_error(prefix + "validation_size", "must not be negative");
    if (nc.training.epochs < 1) config_error(prefix + "epochs", "must be positive");
    if (!(nc.training.learning_rate > 0.0)) config_error(prefix + "learning_rate", "must be positive");
    if (nc.training.batch_size < 0) config_error(prefix + "batch_size", "must not be negative");
    if (nc.training.record_every < 1) config_error(prefix + "record_every", "must be positive");
    const int layer = nc.tap_layer < 0 ? spec.num_layers() - 2 : nc.tap_layer;
    if (layer < 1 || layer >= spec.num_layers())
      config_error(prefix + "tap_layer", "layer " + std::to_string(nc.tap_layer) + " is out of range");
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = io::read_json(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, e.detail());
  }
  return ExperimentConfig::from_json(j);
}

namespace {

// Stable sub-seed streams.
enum Stream : std::uint64_t {
  kTrainingData = 1,
  kValidationData = 2,
  kBasePoints = 3,
  kNeighborhoods = 4,
  kSolver = 5,
  kInit1 = 10,
  kInit2 = 11,
  kShuffle1 = 20,
  kShuffle2 = 21,
};

class Run {
 public:
  Run(const ExperimentConfig& cfg) : cfg_(cfg), out_(cfg.output_dir) {}

  template <typename Fn>
  decltype(auto) stage(const std::string& name, Fn&& fn) {
    current_ = name;
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&] {
      timings_[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    if constexpr (std::is_void_v<decltype(fn())>) {
      run_stage(name, fn);
      finish();
    } else {
      decltype(auto) r = run_stage(name, fn);
      finish();
      return r;
    }
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const std::filesystem::path& out() const { return out_; }
  json& report() { return report_; }
  json& timings() { return timings_; }
  const std::string& current() const { return current_; }
  std::uint64_t seed(Stream s) const { return mix_seed(cfg_.seed, s); }

 private:
  const ExperimentConfig& cfg_;
  std::filesystem::path out_;
  json report_;
  json timings_ = json::object();
  std::string current_;
};

struct TrainedNetwork {
  nn::Mlp net;
  nn::TapSelection taps;
  double training_mse = 0.0;
  double validation_mse = 0.0;
  std::vector<std::pair<int, double>> curve;
};

TrainedNetwork train_network(Run& run, int index, const nn::TrainingData& data, const nn::TrainingData& validation) {
  const auto& nc = run.cfg().networks[static_cast<std::size_t>(index)];
  const auto spec = nn::ArchitectureSpec::parse(nc.architecture);
  auto tcfg = nc.training;
  tcfg.seed = run.seed(index == 0 ? kShuffle1 : kShuffle2);
  const auto init = nn::Mlp::initialize(spec, run.seed(index == 0 ? kInit1 : kInit2));
  const auto result = nn::train(init, data, tcfg);
  TrainedNetwork t;
  t.net = result.net;
  t.training_mse = result.final_mse;
  t.validation_mse = validation.inputs.rows() > 0 ? nn::mean_squared_error(t.net, validation) : 0.0;
  t.curve = result.curve;
  const int layer = nc.tap_layer < 0 ? spec.num_layers() - 2 : nc.tap_layer;
  t.taps = nn::TapSelection::whole_layer(spec, layer);
  return t;
}

void write_network_artifacts(Run& run, int index, const TrainedNetwork& t) {
  const std::string suffix = std::to_string(index + 1);
  nn::save_network(run.out() / ("network_" + suffix + ".json"), t.net);
  Eigen::MatrixXd curve(static_cast<Eigen::Index>(t.curve.size()), 2);
  for (std::size_t i = 0; i < t.curve.size(); ++i) {
    curve(static_cast<Eigen::Index>(i), 0) = t.curve[i].first;
    curve(static_cast<Eigen::Index>(i), 1) = t.curve[i].second;
  }
  io::write_csv(run.out() / ("training_curve_" + suffix + ".csv"), curve, std::vector<std::string>{"epoch", "mse"});
  run.report()["training"].push_back({{"architecture", t.net.spec().to_string()},
                                      {"training_mse", t.training_mse},
                                      {"validation_mse", t.validation_mse},
                                      {"taps", nn::to_json(t.taps)}});
}

Eigen::MatrixXd map_rows(const Eigen::MatrixXd& x, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f) {
  Eigen::MatrixXd out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd y = f(x.row(i).transpose());
    if (i == 0) out.resize(x.rows(), y.size());
    out.row(i) = y.transpose();
  }
  return out;
}

double embedding_diameter(const Eigen::MatrixXd& e) {
  if (e.cols() == 1) return e.maxCoeff() - e.minCoeff();
  double best = 0.0;
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = i + 1; j < e.rows(); ++j) best = std::max(best, (e.row(i) - e.row(j)).squaredNorm());
  return std::sqrt(best);
}

// Rows: O phi_i, for comparison against psi_i.
Eigen::MatrixXd aligned(const transform::NetworkTransform& t) { return t.phi.embedding() * t.map.matrix.transpose(); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

json diagnostics_json(const dmap::FitResult& r) {
  const auto& d = r.diagnostics;
  json j;
  j["epsilon_median_rule"] = d.epsilon_median_rule;
  j["epsilon_used"] = r.model.epsilon();
  j["markov_row_sum_deviation"] = d.markov_row_sum_deviation;
  j["leading_eigenvalue"] = d.leading_eigenvalue;
  j["candidate_eigenvalues"] = d.candidate_eigenvalues;
  json residuals = json::array();
  for (double v : d.harmonic_residuals) residuals.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  j["harmonic_residuals"] = residuals;
  j["kept_indices"] = r.model.kept_indices();
  j["eigenvalues"] = io::vector_to_json(r.model.eigenvalues());
  j["raw_eigenvalues"] = io::vector_to_json(r.model.raw_eigenvalues());
  j["lanczos_iterations"] = d.lanczos_iterations;
  if (!d.covariance_ranks.empty()) {
    const auto [lo, hi] = std::minmax_element(d.covariance_ranks.begin(), d.covariance_ranks.end());
    j["covariance_rank_min"] = *lo;
    j["covariance_rank_max"] = *hi;
  }
  return j;
}

struct AlignmentMetrics {
  double rmse = 0.0;
  double diameter = 0.0;
  double normalized_rmse = 0.0;
};

AlignmentMetrics alignment_metrics(const transform::NetworkTransform& t) {
  AlignmentMetrics m;
  const Eigen::MatrixXd diff = aligned(t) - t.psi.embedding();
  m.rmse = std::sqrt(diff.squaredNorm() / static_cast<double>(diff.rows()));
  m.diameter = embedding_diameter(t.psi.embedding());
  m.normalized_rmse = m.diameter > 0.0 ? m.rmse / m.diameter : 0.0;
  return m;
}

json alignment_json(const transform::NetworkTransform& t, const AlignmentMetrics& m) {
  return {{"matrix", io::matrix_to_json(t.map.matrix)},
          {"determinant", t.map.matrix.determinant()},
          {"residual", t.map.residual},
          {"normalized_residual", t.normalized_residual},
          {"correspondences", t.map.correspondences_used},
          {"ambiguous", t.map.ambiguous},
          {"poor_alignment", t.poor_alignment},
          {"aligned_rmse", m.rmse},
          {"embedding_diameter", m.diameter},
          {"normalized_aligned_rmse", m.normalized_rmse},
          {"warnings", t.warnings}};
}

// Round trip and accuracy of T over phi's reference points, against the
// matched network 2 tap values.
json transform_metrics(const transform::NetworkTransform& t, const Eigen::MatrixXd& y2_matched) {
  const int n = t.phi.n();
  int exact = 0;
  std::vector<double> errors;
  errors.reserve(static_cast<std::size_t>(n));
  const Eigen::RowVectorXd mean2 = y2_matched.colwise().mean();
  const double spread = std::sqrt((y2_matched.rowwise() - mean2).squaredNorm() / static_cast<double>(n));
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd y1 = t.phi.reference_points().row(i).transpose();
    const Eigen::VectorXd y2 = transform::apply_transform(t, y1);
    if ((transform::invert_transform(t, y2) - y1).norm() == 0.0) ++exact;
    errors.push_back((y2 - y2_matched.row(i).transpose()).norm() / (spread > 0.0 ? spread : 1.0));
  }
  return {{"round_trip_exact_fraction", static_cast<double>(exact) / n},
          {"median_relative_error", median(errors)},
          {"tap2_spread", spread}};
}

void write_embeddings(Run& run, const Eigen::MatrixXd& inputs1, const Eigen::MatrixXd& inputs2,
                      const transform::NetworkTransform& t, const std::string& prefix) {
  const int ell = t.ell();
  const int dim = static_cast<int>(inputs1.cols());
  auto names = [&](const std::string& base, int count) {
    std::vector<std::string> h;
    for (int i = 0; i < count; ++i) h.push_back(base + std::to_string(i + 1));
    return h;
  };
  auto concat = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  Eigen::MatrixXd e1(t.phi.n(), dim + ell), e2(t.psi.n(), dim + ell);
  e1 << inputs1, t.phi.embedding();
  e2 << inputs2, t.psi.embedding();
  io::write_csv(run.out() / (prefix + "embedding_1.csv"), e1, concat(names("x", dim), names("phi", ell)));
  io::write_csv(run.out() / (prefix + "embedding_2.csv"), e2, concat(names("xhat", dim), names("psi", ell)));
  if (t.phi.n() == t.psi.n()) {
    const Eigen::MatrixXd a = aligned(t);
    Eigen::MatrixXd rows(t.phi.n(), dim + 2 * ell + 1);
    rows << inputs1, a, t.psi.embedding(), (a - t.psi.embedding()).rowwise().norm();
    io::write_csv(run.out() / (prefix + "aligned_embedding.csv"), rows,
                  concat(concat(concat(names("x", dim), names("aligned_phi", ell)), names("psi", ell)),
                         {"displacement"}));
  }
}

// Sweep over the reference points ordered by their generating input.
transform::FoldReport reference_sweep(Run& run, const Eigen::VectorXd& x, const transform::NetworkTransform& t,
                                      const std::string& file) {
  std::vector<int> order(static_cast<std::size_t>(x.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x(a) < x(b); });
  std::vector<double> xs, g1, g2;
  for (int i : order) {
    xs.push_back(x(i));
    g1.push_back(t.phi.embedding()(i, 0));
    g2.push_back(t.psi.embedding()(i, 0));
  }
  const auto report = transform::detect_fold(xs, g1, g2);
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(xs.size()), 4);
  for (std::size_t k = 0; k < xs.size(); ++k)
    rows.row(static_cast<Eigen::Index>(k)) << xs[k], g1[k], g2[k], report.injectivity_flags[k] ? 1.0 : 0.0;
  io::write_csv(run.out() / file, rows, std::vector<std::string>{"x", "phi1", "psi1", "violation"});
  return report;
}

json fold_json(const transform::FoldReport& r) {
  return {{"probes", r.probe_points.size()},
          {"violations", r.monotonicity_pairs_violated},
          {"invertible", r.invertible()},
          {"first_failure", r.first_failure ? json(*r.first_failure) : json(nullptr)}};
}

dmap::FitOptions base_fit_options(const Run& run, int ell, std::uint64_t solver_seed) {
  dmap::FitOptions fo;
  fo.ell = ell;
  fo.k_neighbors = run.cfg().k_neighbors;
  fo.epsilon = run.cfg().epsilon;
  const int cap = run.cfg().pinv_max_rank;
  if (cap < 0) fo.pinv.max_rank = ell;
  else if (cap > 0) fo.pinv.max_rank = cap;
  fo.solver.lanczos.seed = solver_seed;
  return fo;
}

transform::BuildOptions build_options(const Run& run, int ell) {
  transform::BuildOptions bo;
  bo.correspondence_count = run.cfg().correspondences;
  bo.intrinsic_dim = ell;
  bo.provenance = to_string(run.cfg().scenario) + " seed " + std::to_string(run.cfg().seed);
  return bo;
}

nn::TrainingData make_data(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
  nn::TrainingData d;
  d.inputs = inputs;
  d.targets = targets;
  return d;
}

void run_parabola(Run& run) {
  const auto& cfg = run.cfg();
  tasks::TaskSpec task;
  task.id = tasks::TaskId::kParabola;
  // Both networks share the training set on the left half; validation spans
  // the whole domain.
  const auto train_x = sampling::sample_uniform(sampling::Box::interval(-1.0, 0.0), cfg.networks[0].training_size,
                                                run.seed(kTrainingData));
  const auto valid_x = sampling::sample_uniform(sampling::Box::interval(-1.0, 1.0), cfg.networks[0].validation_size,
                                                run.seed(kValidationData));
  const auto data = make_data(train_x.points, task.evaluate_batch(train_x.points));
  const auto valid = make_data(valid_x.points, task.evaluate_batch(valid_x.points));
  std::array<TrainedNetwork, 2> nets;
  for (int i = 0; i < 2; ++i) {
    nets[static_cast<std::size_t>(i)] =
        run.stage("train-" + std::to_string(i + 1), [&] { return train_network(run, i, data, valid); });
    write_network_artifacts(run, i, nets[static_cast<std::size_t>(i)]);
  }

  // Output-only pair.
  run.stage("fold-output", [&] {
    const Eigen::VectorXd probes = sampling::linspace(-1.0, 1.0, cfg.fold_probes);
    const Eigen::MatrixXd g1 = nn::forward_batch(nets[0].net, probes);
    const Eigen::MatrixXd g2 = nn::forward_batch(nets[1].net, probes);
    std::vector<double> xs(probes.data(), probes.data() + probes.size());
    std::vector<double> a(g1.data(), g1.data() + g1.size()), b(g2.data(), g2.data() + g2.size());
    const auto report = transform::detect_fold(xs, a, b);
    Eigen::MatrixXd rows(probes.size(), 5);
    for (Eigen::Index k = 0; k < probes.size(); ++k)
      rows.row(k) << probes(k), g1(k, 0), g2(k, 0), task.evaluate(probes.segment(k, 1))(0),
          report.injectivity_flags[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
    io::write_csv(run.out() / "fold_sweep_output.csv", rows, std::vector<std::string>{"x", "n1", "n2", "f", "violation"});
    auto j = fold_json(report);
    j["outside_training_domain"] = report.first_failure && *report.first_failure > 0.0;
    run.report()["fold_output"] = j;
  });

  // Hidden-tap transform from delta-ball neighborhoods.
  const auto base = sampling::sample_uniform(sampling::Box::interval(-1.0, 1.0), cfg.n, run.seed(kBasePoints));
  const auto nbhds = run.stage("neighborhoods", [&] {
    return sampling::delta_ball_neighborhoods(base, cfg.delta, cfg.q, run.seed(kNeighborhoods));
  });
  const auto tap1 = run.stage("evaluate-1", [&] { return sampling::evaluate_neighborhoods(nbhds, nets[0].net, nets[0].taps); });
  const auto tap2 = run.stage("evaluate-2", [&] { return sampling::evaluate_neighborhoods(nbhds, nets[1].net, nets[1].taps); });
  const auto fo = base_fit_options(run, 1, run.seed(kSolver));
  auto fit1 = run.stage("fit-phi", [&] { return dmap::fit(tap1, fo); });
  auto fit2 = run.stage("fit-psi", [&] { return dmap::fit(tap2, fo); });
  run.report()["dmap"] = {diagnostics_json(fit1), diagnostics_json(fit2)};
  auto bo = build_options(run, 1);
  auto t = run.stage("align", [&] {
    auto tr = transform::assemble(fit1.model, fit2.model, nets[0].taps, nets[1].taps, bo);
    for (int i = 0; i < 2; ++i) {
      const auto check = nn::check_whitney(nets[static_cast<std::size_t>(i)].net.spec(),
                                           nets[static_cast<std::size_t>(i)].taps, 1);
      if (!check.valid) tr.warnings.push_back("network " + std::to_string(i + 1) + ": " + check.message);
    }
    return tr;
  });
  const auto metrics = alignment_metrics(t);
  run.report()["alignment"] = alignment_json(t, metrics);
  run.stage("sweep-hidden", [&] {
    run.report()["fold_hidden"] = fold_json(reference_sweep(run, base.points.col(0), t, "fold_sweep_hidden.csv"));
  });
  run.stage("transform-metrics", [&] { run.report()["transform"] = transform_metrics(t, tap2.base_points); });
  write_embeddings(run, base.points, base.points, t, "");
  if (cfg.write_bundle) transform::save_bundle(run.out() / "transform", t);
  run.report()["reference_epsilon"] = {13.3, 55.4};
}

void run_different_inputs(Run& run) {
  const auto& cfg = run.cfg();
  const auto warp = sampling::DiffeomorphismSpec::from_name("sine_warp");
  const auto domain1 = sampling::Box::interval(-1.0, 1.0);
  run.stage("injectivity", [&] {
    if (!sampling::check_injective(warp, domain1)) throw Error(ErrorKind::kDomain, "S is not injective on the domain");
  });
  // Network 1 sees x in [0, 1]; network 2 sees S(x) in [2, 4]. Both learn
  // f(x) = -(x - 0.25)^2 - 1 on their own inputs.
  const auto train_x = sampling::sample_uniform(sampling::Box::interval(0.0, 1.0), cfg.networks[0].training_size,
                                                run.seed(kTrainingData));
  const auto valid_x = sampling::sample_uniform(sampling::Box::interval(0.0, 1.0), cfg.networks[0].validation_size,
                                                run.seed(kValidationData));
  auto warped = [&](const Eigen::MatrixXd& x) { return map_rows(x, [&](const Eigen::VectorXd& v) { return warp.apply(v); }); };
  tasks::TaskSpec task;
  task.id = tasks::TaskId::kShiftedParabola;
  std::array<nn::TrainingData, 2> data{make_data(train_x.points, task.evaluate_batch(train_x.points)),
                                       make_data(warped(train_x.points), task.evaluate_batch(warped(train_x.points)))};
  std::array<nn::TrainingData, 2> valid{make_data(valid_x.points, task.evaluate_batch(valid_x.points)),
                                        make_data(warped(valid_x.points), task.evaluate_batch(warped(valid_x.points)))};
  std::array<TrainedNetwork, 2> nets;
  for (int i = 0; i < 2; ++i) {
    const auto s = static_cast<std::size_t>(i);
    nets[s] = run.stage("train-" + std::to_string(i + 1), [&] { return train_network(run, i, data[s], valid[s]); });
    write_network_artifacts(run, i, nets[s]);
  }

  // Neighborhoods on domain 1 pushed to domain 2 = S(domain 1) = [0, 4].
  const auto base = sampling::sample_uniform(domain1, cfg.n, run.seed(kBasePoints));
  const auto nbhds1 = run.stage("neighborhoods", [&] {
    return sampling::delta_ball_neighborhoods(base, cfg.delta, cfg.q, run.seed(kNeighborhoods));
  });
  const auto nbhds2 = run.stage("pushforward", [&] { return sampling::pushforward_neighborhoods(nbhds1, warp); });
  const auto tap1 = run.stage("evaluate-1", [&] { return sampling::evaluate_neighborhoods(nbhds1, nets[0].net, nets[0].taps); });
  const auto tap2 = run.stage("evaluate-2", [&] { return sampling::evaluate_neighborhoods(nbhds2, nets[1].net, nets[1].taps); });

  const auto fo = base_fit_options(run, 1, run.seed(kSolver));
  auto fit1 = run.stage("fit-phi", [&] { return dmap::fit(tap1, fo); });
  auto fit2 = run.stage("fit-psi", [&] { return dmap::fit(tap2, fo); });
  run.report()["dmap"] = {diagnostics_json(fit1), diagnostics_json(fit2)};
  const auto bo = build_options(run, 1);
  auto t = run.stage("align", [&] { return transform::assemble(fit1.model, fit2.model, nets[0].taps, nets[1].taps, bo); });
  const auto metrics = alignment_metrics(t);
  run.report()["alignment"] = alignment_json(t, metrics);
  run.stage("sweep-hidden", [&] {
    run.report()["fold_hidden"] = fold_json(reference_sweep(run, base.points.col(0), t, "fold_sweep_hidden.csv"));
  });
  run.stage("transform-metrics", [&] { run.report()["transform"] = transform_metrics(t, tap2.base_points); });
  write_embeddings(run, base.points, nbhds2.base_points, t, "");
  if (cfg.write_bundle) transform::save_bundle(run.out() / "transform", t);

  if (cfg.euclidean_control) {
    auto eo = fo;
    eo.use_mahalanobis = false;
    eo.epsilon.reset();
    auto e1 = run.stage("control-fit-phi", [&] { return dmap::fit(tap1, eo); });
    auto e2 = run.stage("control-fit-psi", [&] { return dmap::fit(tap2, eo); });
    auto et = run.stage("control-align", [&] {
      return transform::assemble(e1.model, e2.model, nets[0].taps, nets[1].taps, bo);
    });
    const auto em = alignment_metrics(et);
    write_embeddings(run, base.points, nbhds2.base_points, et, "euclidean_");
    const double ratio = metrics.normalized_rmse > 0.0 ? em.normalized_rmse / metrics.normalized_rmse : 0.0;
    run.report()["euclidean_control"] = {{"dmap", {diagnostics_json(e1), diagnostics_json(e2)}},
                                         {"alignment", alignment_json(et, em)},
                                         {"rmse_ratio", ratio},
                                         {"gap_holds", metrics.normalized_rmse < 0.1 * em.normalized_rmse}};
  }
  run.report()["reference_epsilon"] = {5.0};
  run.report()["notes"] = {"neighborhood size q is configurable (default 11)"};
}

void run_vectorfield(Run& run) {
  const auto& cfg = run.cfg();
  const auto shear = sampling::DiffeomorphismSpec::from_name("quadratic_shear");
  const auto square = sampling::Box::square(-1.5, 1.5);
  run.stage("injectivity", [&] {
    if (!sampling::check_injective(shear, square)) throw Error(ErrorKind::kDomain, "s is not injective on the domain");
  });
  tasks::TaskSpec field1;
  field1.id = tasks::TaskId::kVectorField1;
  tasks::TaskSpec field2;
  field2.id = tasks::TaskId::kVectorField2;
  field2.shear = shear;
  field2.domain = square;
  auto sheared = [&](const Eigen::MatrixXd& x) { return map_rows(x, [&](const Eigen::VectorXd& v) { return shear.apply(v); }); };
  const auto train_x = sampling::sample_uniform(square, cfg.networks[0].training_size, run.seed(kTrainingData));
  const auto valid_x = sampling::sample_uniform(square, cfg.networks[0].validation_size, run.seed(kValidationData));
  const Eigen::MatrixXd train_xhat = sheared(train_x.points), valid_xhat = sheared(valid_x.points);
  std::array<nn::TrainingData, 2> data{make_data(train_x.points, field1.evaluate_batch(train_x.points)),
                                       make_data(train_xhat, field2.evaluate_batch(train_xhat))};
  std::array<nn::TrainingData, 2> valid{make_data(valid_x.points, field1.evaluate_batch(valid_x.points)),
                                        make_data(valid_xhat, field2.evaluate_batch(valid_xhat))};
  std::array<TrainedNetwork, 2> nets;
  for (int i = 0; i < 2; ++i) {
    const auto s = static_cast<std::size_t>(i);
    nets[s] = run.stage("train-" + std::to_string(i + 1), [&] { return train_network(run, i, data[s], valid[s]); });
    write_network_artifacts(run, i, nets[s]);
  }

  const auto base = sampling::sample_uniform(square, cfg.n, run.seed(kBasePoints));
  const Eigen::MatrixXd base_hat = sheared(base.points);
  auto fo = base_fit_options(run, 2, run.seed(kSolver));

  // Analytic covariances J J^T. For network 2 the Jacobian is taken with
  // respect to x through s, so both metrics measure the same input distances.
  std::vector<mahalanobis::CovarianceEstimate> cov1, cov2;
  Eigen::MatrixXd y1(cfg.n, nets[0].taps.size()), y2(cfg.n, nets[1].taps.size());
  run.stage("covariances", [&] {
    cov1.reserve(static_cast<std::size_t>(cfg.n));
    cov2.reserve(static_cast<std::size_t>(cfg.n));
    for (int i = 0; i < cfg.n; ++i) {
      const Eigen::VectorXd x = base.points.row(i).transpose();
      const Eigen::VectorXd xh = base_hat.row(i).transpose();
      y1.row(i) = nn::forward_with_taps(nets[0].net, nets[0].taps, x).transpose();
      y2.row(i) = nn::forward_with_taps(nets[1].net, nets[1].taps, xh).transpose();
      cov1.push_back(mahalanobis::analytic_covariance(nn::jacobian_to_taps(nets[0].net, nets[0].taps, x), fo.pinv));
      cov2.push_back(mahalanobis::analytic_covariance(
          nn::jacobian_to_taps(nets[1].net, nets[1].taps, xh) * shear.jacobian(x), fo.pinv));
    }
  });
  int rank2 = 0;
  for (std::size_t i = 0; i < cov1.size(); ++i) rank2 += (cov1[i].rank == 2 && cov2[i].rank == 2) ? 1 : 0;
  run.report()["covariance_ranks"] = {{"count", cfg.n}, {"rank_two_pairs", rank2}, {"all_rank_two", rank2 == cfg.n}};

  auto fit1 = run.stage("fit-phi", [&] { return dmap::fit(y1, cov1, fo); });
  cov1.clear();
  auto fit2 = run.stage("fit-psi", [&] { return dmap::fit(y2, cov2, fo); });
  cov2.clear();
  run.report()["dmap"] = {diagnostics_json(fit1), diagnostics_json(fit2)};
  const auto bo = build_options(run, 2);
  auto t = run.stage("align", [&] { return transform::assemble(fit1.model, fit2.model, nets[0].taps, nets[1].taps, bo); });
  const auto metrics = alignment_metrics(t);
  run.report()["alignment"] = alignment_json(t, metrics);

  // Displacement after alignment, at least 0.15 away from the edges of the square.
  run.stage("interior", [&] {
    const Eigen::MatrixXd a = aligned(t);
    std::vector<double> inner;
    for (int i = 0; i < cfg.n; ++i)
      if (base.points.row(i).cwiseAbs().maxCoeff() <= 1.35) inner.push_back((a.row(i) - t.psi.embedding().row(i)).norm());
    const double med = median(inner);
    run.report()["interior_displacement"] = {{"points", inner.size()},
                                             {"median", med},
                                             {"median_over_diameter", metrics.diameter > 0 ? med / metrics.diameter : 0.0}};
  });
  run.stage("transform-metrics", [&] { run.report()["transform"] = transform_metrics(t, y2); });
  run.stage("conditioning", [&] {
    const auto c = transform::local_condition_estimates(t, 2);
    run.report()["local_conditioning"] = {{"median", c.median}, {"p95", c.p95}, {"max", std::isfinite(c.max) ? json(c.max) : json(nullptr)}};
  });
  write_embeddings(run, base.points, base_hat, t, "");
  if (cfg.write_bundle) transform::save_bundle(run.out() / "transform", t);
  run.report()["reference_epsilon"] = {1.21e-3, 8.06e-4};
}

}  // namespace

ScenarioReport run_scenario(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  Run run(cfg);
  auto& report = run.report();
  report["format"] = "netequiv.report/1";
  report["scenario"] = to_string(cfg.scenario);
  report["config"] = cfg.to_json();
  // The echo must not depend on where the run was written.
  report["config"].erase("output_dir");
  report["training"] = json::array();
  const auto total0 = std::chrono::steady_clock::now();
  try {
    switch (cfg.scenario) {
      case ScenarioId::kParabola41: run_parabola(run); break;
      case ScenarioId::kDifferentInputs42: run_different_inputs(run); break;
      case ScenarioId::kVectorField43: run_vectorfield(run); break;
    }
  } catch (const Error& e) {
    report["status"] = "failed";
    report["failed_stage"] = e.stage().empty() ? run.current() : e.stage();
    report["error"] = {{"kind", std::string(to_string(e.kind()))}, {"message", e.detail()}};
    io::write_json(cfg.output_dir / "report.json", report);
    throw;
  }
  run.timings()["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - total0).count();
  report["status"] = "ok";
  io::write_json(cfg.output_dir / "report.json", report);
  io::write_json(cfg.output_dir / "timings.json", run.timings());
  return {report, run.timings(), cfg.output_dir};
}

}  // namespace netequiv::experiments
