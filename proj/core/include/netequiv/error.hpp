#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace netequiv {

enum class ErrorKind {
  kShape,
  kTapSelection,
  kTraining,
  kDomain,
  kSpec,
  kNumericPsd,
  kInsufficientPoints,
  kDegenerateBandwidth,
  kPropagation,
  kDegenerateKernel,
  kNumeric,
  kInsufficientDirections,
  kState,
  kAlignment,
  kInsufficientProbe,
  kIo,
  kConfig,
};

std::string_view to_string(ErrorKind kind);

// All library failures are reported through this type. `stage()` is empty
// unless the error was raised inside a multi-stage pipeline (dmap::fit,
// transform::build_transform, experiments::run_scenario).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string stage = {})
      : std::runtime_error(stage.empty() ? message : "[" + stage + "] " + message),
        kind_(kind),
        stage_(std::move(stage)),
        detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

  Error with_stage(const std::string& stage) const {
    return Error(kind_, detail_, stage_.empty() ? stage : stage + "/" + stage_);
  }

 private:
  ErrorKind kind_;
  std::string stage_;
  std::string detail_;
};

// Runs `fn`, re-throwing any netequiv::Error tagged with `stage`.
template <typename Fn>
decltype(auto) run_stage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw e.with_stage(stage);
  }
}

}  // namespace netequiv
