#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "zclf/pinn.hpp"
#include "zclf/pmp.hpp"
#include "zclf/riccati.hpp"
#include "zclf/system.hpp"
#include "zclf/transform.hpp"

namespace zclf {

struct VerifyConfig {
  double delta = 1e-4;
  double c_max = 0.0;  // 0: boundary minimum of the level function
  std::size_t max_boxes = 4'000'000;
  double rel_tol = 1e-3;
  bool mean_value = false;  // mean-value enclosures for the learned fields
  double global_half_width = 0.0;  // native global-style box [-h, h]^n; 0: system domain
  std::string smt_solver;          // command run as `<smt_solver> <file>`; empty: emit only
  int smt_digits = 6;  // significant digits of P for the smtlib backend; 0 keeps full precision
};

struct SimulateConfig {
  std::vector<std::vector<double>> x0;  // empty: a third of the domain's lower corner
  double T = 20.0;
  double dt = 0.01;
  double hysteresis = 0.05;
};

struct GridConfig {
  std::size_t resolution = 200;
  double extrapolation_half_width = 18.0;
  std::size_t area_samples = 200000;
  std::size_t annulus_samples = 100000;
};

/// Everything a run needs. The top-level seed, transform and thread count
/// are copied into the stage configurations.
struct RunConfig {
  std::string benchmark = "reversed_vdp";
  std::string system_file;  // JSON system description; overrides benchmark
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  unsigned threads = 0;
  std::string backend = "native";  // native | smtlib
  TransformSpec transform;
  DatasetConfig pmp;
  TrainConfig train;
  VerifyConfig verify;
  SimulateConfig simulate;
  GridConfig grid;
  bool ablation = false;  // also train a data-only model and compare residuals
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Canonical JSON; run_config_from_json(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Sets the leaf at a dotted path ("train.epochs") in a canonical config. The
/// value is parsed as JSON and taken as a plain string when that fails.
void apply_override(nlohmann::json& config, const std::string& path, const std::string& value);

Benchmark resolve_benchmark(const RunConfig& c);

/// Stage failure. Usage: missing inputs or bad arguments. Unverified: a
/// verification stage found a counterexample or ran out of budget. Numeric:
/// solver or training failure.
class StageError : public std::runtime_error {
 public:
  enum class Kind { Usage, Unverified, Numeric };
  StageError(std::string stage, Kind kind, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), kind_(kind) {}
  const std::string& stage() const { return stage_; }
  Kind kind() const { return kind_; }

 private:
  std::string stage_;
  Kind kind_;
};

using LogFn = std::function<void(const std::string&)>;

// Stages. Each writes its artifacts under `out` and returns a report fragment.

/// Riccati design, native global-style check (or SMT-LIB emission) and the
/// two-stage level search. Writes certificate.json and verify/{global,quadratic}.json.
nlohmann::json stage_qclf(const Benchmark& b, const RunConfig& c, const std::filesystem::path& out,
                          const LogFn& log = {});
/// Writes dataset.jsonl and dataset.config.json.
nlohmann::json stage_pmp(const Benchmark& b, const RunConfig& c, const std::filesystem::path& out,
                         const LogFn& log = {});
/// Reads the dataset, writes model.json and loss.csv (and the data-only
/// variant when ablation is on).
nlohmann::json stage_train(const Benchmark& b, const RunConfig& c, const std::filesystem::path& dataset,
                           const std::filesystem::path& out, const LogFn& log = {});
/// Writes verify/neural_clf.json and verify/roa.json.
nlohmann::json stage_verify(const Benchmark& b, const RunConfig& c, const QuadraticCertificate& cert,
                            const std::filesystem::path& model, const std::filesystem::path& out,
                            const LogFn& log = {});
/// Writes traj/{hjb,sontag}_<i>.csv and traj/cost_<i>.json.
nlohmann::json stage_simulate(const Benchmark& b, const RunConfig& c, const QuadraticCertificate& cert,
                              const std::filesystem::path& model, const std::filesystem::path& out,
                              const LogFn& log = {});
/// Level-set grids and Monte-Carlo areas (2-d systems only).
nlohmann::json stage_grids(const Benchmark& b, const RunConfig& c, const QuadraticCertificate& cert,
                           const std::filesystem::path& model, const nlohmann::json& levels,
                           const std::filesystem::path& out);

QuadraticCertificate read_certificate(const std::filesystem::path& path);

struct PipelineResult {
  nlohmann::json report;
  std::optional<StageError> error;
};

/// qclf -> pmp-data -> train -> verify -> simulate -> grids; report.json and
/// config.json are written even when a stage fails.
PipelineResult run_pipeline(const RunConfig& c, const LogFn& log = {});

/// Copy of a report without wall-clock fields (keys ending in _s or _ms).
nlohmann::json strip_timing(const nlohmann::json& report);

// Figure data.

/// CSV "x1,x2,value" over a resolution^2 grid spanning box (endpoints
/// included), plus a JSON sidecar with levels and the value range.
void export_levelset_grid(const std::function<double(std::span<const double>)>& fn, const Box& box,
                          std::size_t resolution, const std::vector<std::pair<std::string, double>>& levels,
                          const std::filesystem::path& csv, const std::string& name = "f");

/// Area (volume) of {x in box : inside(x)} from deterministic uniform samples.
double monte_carlo_area(const std::function<bool(std::span<const double>)>& inside, const Box& box,
                        std::size_t samples, std::uint64_t seed);

/// Mean |Zubov-HJB residual| over [-outer, outer]^n minus [-inner, inner]^n.
double annulus_mean_abs_residual(const ControlAffineSystem& sys, const CostSpec& cost,
                                 const NeuralValueFunction& net, double outer, double inner, std::size_t samples,
                                 std::uint64_t seed);

}  // namespace zclf
