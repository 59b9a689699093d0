#include "zclf/bench.hpp"

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "zclf/controlsim.hpp"
#include "zclf/value_model.hpp"
#include "zclf/verify.hpp"

namespace zclf {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

void say(const LogFn& log, const std::string& s) {
  if (log) log(s);
}

CheckOptions check_options(const RunConfig& c) {
  CheckOptions o;
  o.delta = c.verify.delta;
  o.max_boxes = c.verify.max_boxes;
  o.threads = c.threads;
  return o;
}

void check_keys(const nlohmann::json& j, const nlohmann::json& ref, const std::string& path) {
  if (!j.is_object()) throw ConfigError("'" + (path.empty() ? std::string("config") : path) + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!ref.contains(key)) throw ConfigError("unknown configuration key '" + here + "'");
    const auto& r = ref.at(key);
    // objects with a fixed schema; transform is checked by its own parser
    if (r.is_object() && key != "transform") check_keys(value, r, here);
  }
}

nlohmann::json level_json(const LevelSearch& s, const std::string& name, double delta) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& [c, o] : s.trace) trace.push_back({c, outcome_name(o)});
  std::string verdict = "unknown";
  if (s.found)
    verdict = "proved";
  else if (!s.trace.empty())
    verdict = outcome_name(s.trace.back().second);
  return {{"condition", name},
          {"verdict", verdict},
          {"c", s.found ? nlohmann::json(s.level) : nlohmann::json(nullptr)},
          {"delta", delta},
          {"boxes", s.boxes},
          {"time_ms", s.time_ms},
          {"witness", nullptr},
          {"trace", trace}};
}

std::vector<std::vector<double>> initial_states(const Benchmark& b, const RunConfig& c) {
  if (!c.simulate.x0.empty()) {
    for (const auto& x : c.simulate.x0)
      if (x.size() != b.system.n) throw StageError("simulate", StageError::Kind::Usage, "x0 has the wrong dimension");
    return c.simulate.x0;
  }
  std::vector<double> x(b.system.n);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = b.system.domain[i].lo / 3.0;
  return {x};
}

double max_half_width(const Box& box) {
  double h = 0.0;
  for (const auto& iv : box) h = std::max({h, std::abs(iv.lo), std::abs(iv.hi)});
  return h;
}

// Single-quoted for sh; embedded quotes become '\''.
std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char ch : s) q += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return q + "'";
}

std::string run_command(const std::string& cmd) {
  std::string out;
  if (FILE* pipe = popen(cmd.c_str(), "r")) {
    char buf[512];
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    pclose(pipe);
  }
  while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
  return out;
}

std::shared_ptr<const NetworkValue> load_model(const fs::path& model, const std::string& stage) {
  if (!fs::exists(model)) throw StageError(stage, StageError::Kind::Usage, "model not found: " + model.string());
  return std::make_shared<NetworkValue>(load_network(model));
}

// Entrywise rounding to the given number of significant digits; symmetric in, symmetric out.
Eigen::MatrixXd round_significant(const Eigen::MatrixXd& M, int digits) {
  Eigen::MatrixXd out = M;
  for (Eigen::Index i = 0; i < M.size(); ++i) {
    const double v = M(i);
    if (v == 0.0 || !std::isfinite(v)) continue;
    const double scale = std::pow(10.0, digits - 1 - int(std::floor(std::log10(std::abs(v)))));
    out(i) = std::round(v * scale) / scale;
  }
  return out;
}

}  // namespace

// ---- configuration ----

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json pmp = to_json(c.pmp);
  pmp.erase("seed");
  pmp.erase("transform");
  nlohmann::json train = to_json(c.train);
  train.erase("seed");
  train.erase("transform");
  train["domain"] = box_to_json(c.train.domain);
  return {{"benchmark", c.benchmark},
          {"system_file", c.system_file},
          {"seed", c.seed},
          {"out", c.out},
          {"threads", c.threads},
          {"backend", c.backend},
          {"transform", to_json(c.transform)},
          {"pmp", pmp},
          {"train", train},
          {"verify",
           {{"delta", c.verify.delta},
            {"c_max", c.verify.c_max},
            {"max_boxes", c.verify.max_boxes},
            {"rel_tol", c.verify.rel_tol},
            {"mean_value", c.verify.mean_value},
            {"global_half_width", c.verify.global_half_width},
            {"smt_solver", c.verify.smt_solver},
            {"smt_digits", c.verify.smt_digits}}},
          {"simulate",
           {{"x0", c.simulate.x0}, {"T", c.simulate.T}, {"dt", c.simulate.dt}, {"hysteresis", c.simulate.hysteresis}}},
          {"grid",
           {{"resolution", c.grid.resolution},
            {"extrapolation_half_width", c.grid.extrapolation_half_width},
            {"area_samples", c.grid.area_samples},
            {"annulus_samples", c.grid.annulus_samples}}},
          {"ablation", c.ablation}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  static const nlohmann::json reference = to_json(RunConfig{});
  check_keys(j, reference, "");
  try {
    RunConfig c;
    c.benchmark = j.value("benchmark", c.benchmark);
    c.system_file = j.value("system_file", c.system_file);
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
    c.threads = j.value("threads", c.threads);
    c.backend = j.value("backend", c.backend);
    if (c.backend != "native" && c.backend != "smtlib")
      throw ConfigError("backend must be 'native' or 'smtlib', got '" + c.backend + "'");
    if (j.contains("transform")) c.transform = transform_from_json(j.at("transform"));
    if (j.contains("pmp")) c.pmp = dataset_config_from_json(j.at("pmp"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    c.pmp.seed = c.train.seed = c.seed;
    c.pmp.transform = c.train.transform = c.transform;
    c.pmp.threads = c.threads;
    if (j.contains("verify")) {
      const auto& v = j.at("verify");
      c.verify.delta = v.value("delta", c.verify.delta);
      c.verify.c_max = v.value("c_max", c.verify.c_max);
      c.verify.max_boxes = v.value("max_boxes", c.verify.max_boxes);
      c.verify.rel_tol = v.value("rel_tol", c.verify.rel_tol);
      c.verify.mean_value = v.value("mean_value", c.verify.mean_value);
      c.verify.global_half_width = v.value("global_half_width", c.verify.global_half_width);
      c.verify.smt_solver = v.value("smt_solver", c.verify.smt_solver);
      c.verify.smt_digits = v.value("smt_digits", c.verify.smt_digits);
    }
    if (c.verify.smt_digits < 0 || c.verify.smt_digits > 17)
      throw ConfigError("verify.smt_digits must be in [0, 17]");
    if (!(c.verify.delta > 0.0)) throw ConfigError("verify.delta must be positive");
    if (!(c.verify.rel_tol > 0.0)) throw ConfigError("verify.rel_tol must be positive");
    if (j.contains("simulate")) {
      const auto& s = j.at("simulate");
      c.simulate.x0 = s.value("x0", c.simulate.x0);
      c.simulate.T = s.value("T", c.simulate.T);
      c.simulate.dt = s.value("dt", c.simulate.dt);
      c.simulate.hysteresis = s.value("hysteresis", c.simulate.hysteresis);
    }
    if (!(c.simulate.T > 0.0) || !(c.simulate.dt > 0.0)) throw ConfigError("simulate.T and simulate.dt must be positive");
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      c.grid.resolution = g.value("resolution", c.grid.resolution);
      c.grid.extrapolation_half_width = g.value("extrapolation_half_width", c.grid.extrapolation_half_width);
      c.grid.area_samples = g.value("area_samples", c.grid.area_samples);
      c.grid.annulus_samples = g.value("annulus_samples", c.grid.annulus_samples);
    }
    if (c.grid.resolution < 2) throw ConfigError("grid.resolution must be at least 2");
    c.ablation = j.value("ablation", c.ablation);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void apply_override(nlohmann::json& config, const std::string& path, const std::string& value) {
  nlohmann::json* node = &config;
  std::stringstream ss(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  if (keys.empty()) throw ConfigError("empty option name");
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!node->is_object() || !node->contains(keys[i])) throw ConfigError("unknown option --" + path);
    node = &(*node)[keys[i]];
  }
  if (node->is_object()) throw ConfigError("option --" + path + " names a section, not a value");
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    parsed = value;
  }
  if (node->is_string() && !parsed.is_string()) parsed = value;  // e.g. --out 123
  if (node->is_number() && !parsed.is_number())
    throw ConfigError("option --" + path + " expects a number, got '" + value + "'");
  if (node->is_boolean() && !parsed.is_boolean())
    throw ConfigError("option --" + path + " expects true or false, got '" + value + "'");
  *node = parsed;
}

Benchmark resolve_benchmark(const RunConfig& c) {
  if (!c.system_file.empty()) {
    std::ifstream in(c.system_file);
    if (!in) throw ConfigError("cannot read system file " + c.system_file);
    try {
      return benchmark_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed system file: " + std::string(e.what()));
    }
  }
  return get_benchmark(c.benchmark);
}

QuadraticCertificate read_certificate(const fs::path& path) {
  if (!fs::exists(path)) throw StageError("verify", StageError::Kind::Usage, "certificate not found: " + path.string());
  return certificate_from_json(read_json(path));
}

// ---- stages ----

nlohmann::json stage_qclf(const Benchmark& b, const RunConfig& c, const fs::path& out, const LogFn& log) {
  const auto t0 = Clock::now();
  const auto& sys = b.system;
  QuadraticCertificate cert;
  try {
    const auto [A, B] = linearize(sys);
    if (!b.cost.has_constant_R()) throw RiccatiError("the Riccati design needs a constant input weight R");
    cert = design_quadratic_clf(A, B, b.cost.Q, b.cost.R_at(std::vector<double>(sys.n, 0.0)));
  } catch (const RiccatiError& e) {
    throw StageError("qclf", StageError::Kind::Numeric, e.what());
  }
  {
    std::ostringstream s;
    s << "qclf: Riccati residual " << cert.residual_norm;
    say(log, s.str());
  }

  nlohmann::json rep;
  const CheckOptions chk = check_options(c);
  if (c.backend == "smtlib" && c.verify.smt_digits > 0) {
    // Full-precision entries make the solver's rationals huge; the rounded
    // matrix becomes the certificate so every later stage uses what was proved.
    const auto [A, B] = linearize(sys);
    const Eigen::MatrixXd R = b.cost.R_at(std::vector<double>(sys.n, 0.0));
    cert.P = round_significant(cert.P, c.verify.smt_digits);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cert.P);
    if (!(eig.eigenvalues().minCoeff() > 0.0))
      throw StageError("qclf", StageError::Kind::Numeric, "rounded P is not positive definite; raise verify.smt_digits");
    cert.K = lqr_gain(cert.P, B, R);
    cert.residual_norm = are_residual(cert.P, A, B, b.cost.Q, R);
    std::ostringstream s;
    s << "qclf: P rounded to " << c.verify.smt_digits << " significant digits, Riccati residual " << cert.residual_norm;
    say(log, s.str());
  }
  if (c.backend == "smtlib") {
    const auto cond = quadratic_clf_condition(sys, cert, Box{}, 0.0);
    const fs::path file = out / "verify" / "global.smt2";
    fs::create_directories(file.parent_path());
    std::ofstream(file) << emit_smtlib(cond);
    nlohmann::json g{{"backend", "smtlib"}, {"file", "verify/global.smt2"}, {"status", "emitted (not run)"}};
    if (!c.verify.smt_solver.empty()) {
      const auto t1 = Clock::now();
      const std::string answer = run_command(c.verify.smt_solver + " " + shell_quote(file.string()));
      const std::string status = answer == "unsat" ? "proved (external)"
                                 : answer == "sat" ? "counterexample (external)"
                                                   : "unknown (external)";
      g["status"] = status;
      g["solver_output"] = answer;
      g["solver_time_s"] = seconds_since(t1);
    }
    say(log, "qclf: global condition " + g["status"].get<std::string>());
    rep["global"] = g;
  } else {
    ControlAffineSystem boxed = sys;
    if (c.verify.global_half_width > 0.0)
      boxed.domain = make_box(sys.n, -c.verify.global_half_width, c.verify.global_half_width);
    double r = 0.0;
    const Verdict v = check_global_quadratic(boxed, cert, chk, &r);
    auto j = to_json(v, "global_quadratic");
    j["domain"] = box_to_json(boxed.domain);
    j["exclusion_radius"] = r;
    write_json(out / "verify" / "global.json", j);
    say(log, "qclf: native global-style check " + outcome_name(v.outcome));
    rep["global"] = {{"backend", "native"},
                     {"verdict", outcome_name(v.outcome)},
                     {"exclusion_radius", r},
                     {"witness", j["witness"]}};
  }

  // A proved global condition certifies every level inside the domain, which
  // beyond the learned-stage dimensions spares an interval search in high dimension.
  const std::string gstatus = rep["global"].contains("status") ? rep["global"]["status"].get<std::string>()
                                                               : rep["global"]["verdict"].get<std::string>();
  if (sys.n > kMaxValueDim && (gstatus == "proved" || gstatus == "proved (external)")) {
    // largest ellipsoid x^T P x <= c inside the box: c (P^-1)_ii <= h_i^2
    const Eigen::MatrixXd Pinv = cert.P.inverse();
    double c_max = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sys.n; ++i) {
      const double h = std::min(-sys.domain[i].lo, sys.domain[i].hi);
      c_max = std::min(c_max, h * h / Pinv(Eigen::Index(i), Eigen::Index(i)));
    }
    c_max *= 1.0 - 1e-9;
    cert.c_P = c_max;
    write_json(out / "certificate.json", to_json(cert));
    say(log, "qclf: level search skipped, global condition proved; c_P = " + std::to_string(c_max));
    rep["certificate"] = to_json(cert);
    rep["c_max"] = c_max;
    rep["level_search"] = "skipped: global condition proved";
    rep["time_s"] = seconds_since(t0);
    return rep;
  }

  QuadraticVerifyOptions qo;
  qo.check = chk;
  qo.rel_tol = c.verify.rel_tol;
  QuadraticVerification q;
  try {
    q = verify_quadratic(sys, cert, qo);
  } catch (const VerificationError& e) {
    write_json(out / "certificate.json", to_json(cert));
    throw StageError("qclf", StageError::Kind::Unverified, e.what());
  }
  write_json(out / "verify" / "quadratic_stage_a.json", level_json(q.stage_a, "quadratic_lyapunov", chk.delta));
  write_json(out / "verify" / "quadratic_stage_b.json", level_json(q.stage_b, "quadratic_clf", chk.delta));
  write_json(out / "certificate.json", to_json(q.cert));
  say(log, "qclf: c_P1 = " + std::to_string(q.cert.c_P1) + ", c_P = " + std::to_string(q.cert.c_P));
  rep["certificate"] = to_json(q.cert);
  rep["c_max"] = q.c_max;
  rep["origin_radius"] = q.origin_radius;
  rep["time_s"] = seconds_since(t0);
  return rep;
}

nlohmann::json stage_pmp(const Benchmark& b, const RunConfig& c, const fs::path& out, const LogFn& log) {
  DatasetConfig d = c.pmp;
  d.seed = c.seed;
  d.transform = c.transform;
  d.threads = c.threads;
  if (d.domain.empty()) d.domain = b.data_domain;
  std::size_t last = 0;
  auto progress = [&](std::size_t done, std::size_t total) {
    if (done * 10 / std::max<std::size_t>(total, 1) > last) {
      last = done * 10 / std::max<std::size_t>(total, 1);
      say(log, "pmp-data: " + std::to_string(done) + "/" + std::to_string(total));
    }
  };
  PMPDataset data;
  try {
    data = generate_dataset(b.system, b.cost, d, progress);
  } catch (const std::invalid_argument& e) {
    throw StageError("pmp-data", StageError::Kind::Usage, e.what());
  }
  write_dataset(data, out / "dataset.jsonl");
  if (data.samples.empty()) throw StageError("pmp-data", StageError::Kind::Numeric, "no trajectory optimization converged");
  say(log, "pmp-data: " + std::to_string(data.samples.size()) + "/" + std::to_string(data.attempted) + " converged");
  return {{"attempted", data.attempted},
          {"succeeded", data.samples.size()},
          {"success_fraction", data.success_fraction()},
          {"max_quadrature_error", data.max_quadrature_error},
          {"time_s", data.seconds}};
}

nlohmann::json stage_train(const Benchmark& b, const RunConfig& c, const fs::path& dataset, const fs::path& out,
                           const LogFn& log) {
  if (b.system.n > kMaxValueDim)
    throw StageError("train", StageError::Kind::Usage,
                     "learned value functions are supported up to dimension " + std::to_string(kMaxValueDim));
  if (!fs::exists(dataset)) throw StageError("train", StageError::Kind::Usage, "dataset not found: " + dataset.string());
  const PMPDataset data = read_dataset(dataset);
  std::vector<double> xs, ws;
  for (const auto& s : data.samples) {
    if (s.x0.size() != b.system.n) throw StageError("train", StageError::Kind::Usage, "dataset dimension mismatch");
    xs.insert(xs.end(), s.x0.begin(), s.x0.end());
    ws.push_back(s.W0);
  }
  TrainConfig t = c.train;
  t.seed = c.seed;
  t.transform = c.transform;
  auto on_log = [&](const LossRecord& r) {
    std::ostringstream s;
    s << "train: epoch " << r.epoch << " step " << r.step << " residual " << r.terms.residual << " data "
      << r.terms.data;
    say(log, s.str());
  };
  nlohmann::json rep;
  try {
    const auto res = train(b.system, b.cost, xs, ws, t, on_log);
    save_network(res.net, out / "model.json");
    write_loss_history(res.history, out / "loss.csv");
    rep = {{"samples", ws.size()},
           {"final_residual_mse", res.final_residual_mse},
           {"final_data_mse", res.final_data_mse},
           {"time_s", res.seconds}};
    if (c.ablation) {
      TrainConfig d = t;
      d.lambda_residual = 0.0;
      say(log, "train: data-only variant");
      const auto res_d = train(b.system, b.cost, xs, ws, d);
      save_network(res_d.net, out / "model_data_only.json");
      write_loss_history(res_d.history, out / "loss_data_only.csv");
      const double outer = c.grid.extrapolation_half_width, inner = max_half_width(b.system.domain);
      const double rp = annulus_mean_abs_residual(b.system, b.cost, res.net, outer, inner, c.grid.annulus_samples,
                                                  c.seed);
      const double rd = annulus_mean_abs_residual(b.system, b.cost, res_d.net, outer, inner,
                                                  c.grid.annulus_samples, c.seed);
      rep["ablation"] = {{"outer", outer},
                         {"inner", inner},
                         {"residual_physics_informed", rp},
                         {"residual_data_only", rd},
                         {"ratio", rp > 0.0 ? rd / rp : INFINITY},
                         {"data_only_time_s", res_d.seconds}};
    }
  } catch (const TrainingError& e) {
    throw StageError("train", StageError::Kind::Numeric, e.what());
  }
  say(log, "train: final residual MSE " + std::to_string(rep["final_residual_mse"].get<double>()));
  return rep;
}

nlohmann::json stage_verify(const Benchmark& b, const RunConfig& c, const QuadraticCertificate& cert,
                            const fs::path& model_path, const fs::path& out, const LogFn& log) {
  const auto t0 = Clock::now();
  const auto model = load_model(model_path, "verify");
  if (model->dim() != b.system.n) throw StageError("verify", StageError::Kind::Usage, "model dimension mismatch");
  if (!(cert.c_P > 0.0)) throw StageError("verify", StageError::Kind::Usage, "certificate has no verified level c_P");
  NeuralVerifyOptions o;
  o.check = check_options(c);
  o.c_max = c.verify.c_max;
  o.rel_tol = c.verify.rel_tol;
  o.mean_value = c.verify.mean_value;
  nlohmann::json rep;
  NeuralVerification nv;
  try {
    nv = verify_neural(b.system, model, cert, o);
  } catch (const VerificationError& e) {
    throw StageError("verify", StageError::Kind::Unverified, e.what());
  }
  write_json(out / "verify" / "neural_containment.json", level_json(nv.containment, "neural_containment", o.check.delta));
  write_json(out / "verify" / "neural_clf.json", level_json(nv.clf, "neural_clf", o.check.delta));
  rep["c1"] = nv.c1;
  rep["c2"] = nv.c2 ? nlohmann::json(*nv.c2) : nlohmann::json(nullptr);
  rep["c_max"] = nv.c_max;
  if (!nv.diagnostic.empty()) rep["diagnostic"] = nv.diagnostic;
  say(log, "verify: c1 = " + std::to_string(nv.c1) + ", c2 = " + (nv.c2 ? std::to_string(*nv.c2) : "none"));
  if (!nv.c2) throw StageError("verify", StageError::Kind::Unverified, nv.diagnostic);

  const auto fb = std::make_shared<HjbFeedback>(b.system, b.cost, model);
  const auto roa = verify_closed_loop_roa(b.system, fb, cert, o);
  write_json(out / "verify" / "roa_inner.json", level_json(roa.inner, "roa_inner", o.check.delta));
  write_json(out / "verify" / "roa.json", level_json(roa.outer, "roa", o.check.delta));
  rep["roa"] = {{"c", roa.c ? nlohmann::json(*roa.c) : nlohmann::json(nullptr)},
                {"inner_level", roa.inner_level},
                {"origin_radius", roa.origin_radius},
                {"c_max", roa.c_max}};
  if (!roa.diagnostic.empty()) rep["roa"]["diagnostic"] = roa.diagnostic;
  if (roa.c) rep["roa"]["relative_gap"] = std::abs(*nv.c2 - *roa.c) / *nv.c2;
  rep["time_s"] = seconds_since(t0);
  say(log, "verify: ROA level " + (roa.c ? std::to_string(*roa.c) : std::string("none")));
  if (!roa.c) throw StageError("verify", StageError::Kind::Unverified, "closed-loop ROA: " + roa.diagnostic);
  return rep;
}

nlohmann::json stage_simulate(const Benchmark& b, const RunConfig& c, const QuadraticCertificate& cert,
                              const fs::path& model_path, const fs::path& out, const LogFn& log) {
  const auto model = load_model(model_path, "simulate");
  if (!(cert.c_P > 0.0)) throw StageError("simulate", StageError::Kind::Usage, "certificate has no verified level c_P");
  const auto fb = std::make_shared<HjbFeedback>(b.system, b.cost, model);
  SimOptions so;
  so.T = c.simulate.T;
  so.dt = c.simulate.dt;
  nlohmann::json costs = nlohmann::json::array();
  const auto x0s = initial_states(b, c);
  for (std::size_t i = 0; i < x0s.size(); ++i) {
    auto hjb = make_hjb_controller(fb);
    auto sontag = make_hybrid_controller(b.system, make_sontag_controller(b.system, model_gradient_fn(model)),
                                         HybridLevels{cert.P, cert.c_P, c.simulate.hysteresis});
    const auto th = simulate(b.system, b.cost, *hjb, x0s[i], so);
    const auto ts = simulate(b.system, b.cost, *sontag, x0s[i], so);
    const std::string tag = std::to_string(i);
    write_trajectory_csv(th, out / "traj" / ("hjb_" + tag + ".csv"));
    write_trajectory_csv(ts, out / "traj" / ("sontag_" + tag + ".csv"));
    CostComparison cc{x0s[i], so.T, ts.final_cost(), th.final_cost(), ts.final_norm(), th.final_norm()};
    auto j = to_json(cc);
    if (!th.message.empty()) j["hjb_note"] = th.message;
    if (!ts.message.empty()) j["sontag_note"] = ts.message;
    write_json(out / "traj" / ("cost_" + tag + ".json"), j);
    costs.push_back(j);
    say(log, "simulate: J_hjb = " + std::to_string(cc.J_hjb) + ", J_sontag = " + std::to_string(cc.J_sontag));
  }
  return costs;
}

nlohmann::json stage_grids(const Benchmark& b, const RunConfig& c, const QuadraticCertificate& cert,
                           const fs::path& model_path, const nlohmann::json& levels, const fs::path& out) {
  const auto& sys = b.system;
  if (sys.n != 2) return {{"skipped", "level-set grids need a 2-d system"}};
  const Eigen::MatrixXd P = cert.P;
  auto VP = [&](std::span<const double> x) {
    const Eigen::Vector2d v(x[0], x[1]);
    return v.dot(P * v);
  };
  const auto res = c.grid.resolution;
  std::vector<std::pair<std::string, double>> vl{{"c_P1", cert.c_P1}, {"c_P", cert.c_P}};
  export_levelset_grid(VP, sys.domain, res, vl, out / "grids" / "V_P.csv", "V_P");
  nlohmann::json areas;
  const double aP = monte_carlo_area([&](std::span<const double> x) { return VP(x) <= cert.c_P; }, sys.domain,
                                     c.grid.area_samples, c.seed);
  areas["V_P"] = aP;
  areas["samples"] = c.grid.area_samples;
  if (!fs::exists(model_path)) return areas;  // quadratic certificate only

  const auto model = load_model(model_path, "grids");
  auto WN = [&](std::span<const double> x) { return model->eval(x); };
  auto level = [&](const char* key) { return levels.contains(key) && levels[key].is_number() ? levels[key].get<double>() : NAN; };
  std::vector<std::pair<std::string, double>> wl;
  for (const char* k : {"c1", "c2", "roa"})
    if (!std::isnan(level(k))) wl.emplace_back(k, level(k));
  export_levelset_grid(WN, sys.domain, res, wl, out / "grids" / "W_N.csv", "W_N");
  const double h = c.grid.extrapolation_half_width;
  const Box wide = make_box(2, -h, h);
  export_levelset_grid(WN, wide, res, wl, out / "grids" / "W_N_extrapolation.csv", "W_N");
  const ResidualTerms terms(sys, b.cost);
  auto residual_fn = [&](const NeuralValueFunction& net) {
    return [&terms, &net](std::span<const double> x) {
      Eigen::VectorXd f(2), p;
      Eigen::MatrixXd M(2, 2);
      std::vector<double> work;
      const double q = terms.at(x, f, M, work);
      const double W = net.value_and_gradient(x, p);
      return zubov_residual_value(W, p, f, M, q, net.transform());
    };
  };
  const NeuralValueFunction net = load_network(model_path);
  export_levelset_grid(residual_fn(net), wide, res, {}, out / "grids" / "residual.csv", "zubov_residual");
  const fs::path data_only = model_path.parent_path() / "model_data_only.json";
  if (fs::exists(data_only)) {
    const NeuralValueFunction dnet = load_network(data_only);
    export_levelset_grid([&](std::span<const double> x) { return dnet.forward(x); }, wide, res, wl,
                         out / "grids" / "W_N_data_only_extrapolation.csv", "W_N_data_only");
    export_levelset_grid(residual_fn(dnet), wide, res, {}, out / "grids" / "residual_data_only.csv",
                         "zubov_residual_data_only");
  }

  if (!std::isnan(level("c2"))) {
    const double c2 = level("c2");
    const double aW = monte_carlo_area([&](std::span<const double> x) { return WN(x) <= c2; }, sys.domain,
                                       c.grid.area_samples, c.seed);
    areas["W_N"] = aW;
    areas["ratio"] = aP > 0.0 ? aW / aP : INFINITY;
  }
  return areas;
}

// ---- pipeline ----

nlohmann::json strip_timing(const nlohmann::json& report) {
  if (report.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [k, v] : report.items()) {
      const bool timing = (k.size() > 2 && k.ends_with("_s")) || (k.size() > 3 && k.ends_with("_ms"));
      if (!timing) out[k] = strip_timing(v);
    }
    return out;
  }
  if (report.is_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : report) out.push_back(strip_timing(v));
    return out;
  }
  return report;
}

PipelineResult run_pipeline(const RunConfig& c, const LogFn& log) {
  const Benchmark b = resolve_benchmark(c);  // unknown benchmark: no artifacts
  const fs::path out = c.out;
  fs::create_directories(out);
  write_json(out / "config.json", to_json(c));
  const auto t0 = Clock::now();
  PipelineResult result;
  auto& rep = result.report;
  rep["benchmark"] = b.system.name;
  rep["seed"] = c.seed;
  std::string stage = "qclf";
  try {
    rep["qclf"] = stage_qclf(b, c, out, log);
    const auto cert = read_certificate(out / "certificate.json");
    if (b.system.n > kMaxValueDim) {
      rep["learned"] = "skipped: learned value functions are supported up to dimension " +
                       std::to_string(kMaxValueDim);
    } else {
      stage = "pmp-data";
      rep["dataset"] = stage_pmp(b, c, out, log);
      stage = "train";
      rep["training"] = stage_train(b, c, out / "dataset.jsonl", out, log);
      stage = "verify";
      rep["verification"] = stage_verify(b, c, cert, out / "model.json", out, log);
      stage = "simulate";
      rep["costs"] = stage_simulate(b, c, cert, out / "model.json", out, log);
      stage = "grids";
      const auto& v = rep["verification"];
      nlohmann::json levels{{"c1", v["c1"]}, {"c2", v["c2"]}, {"roa", v["roa"]["c"]}};
      rep["areas"] = stage_grids(b, c, cert, out / "model.json", levels, out);
    }
  } catch (const StageError& e) {
    result.error = e;
  } catch (const std::exception& e) {
    result.error = StageError(stage, StageError::Kind::Numeric, e.what());
  }
  if (result.error) {
    rep["failed_stage"] = result.error->stage();
    rep["error"] = result.error->what();
  }
  rep["total_time_s"] = seconds_since(t0);
  write_json(out / "report.json", rep);
  return result;
}

// ---- figure data ----

void export_levelset_grid(const std::function<double(std::span<const double>)>& fn, const Box& box,
                          std::size_t resolution, const std::vector<std::pair<std::string, double>>& levels,
                          const fs::path& csv, const std::string& name) {
  if (box.size() != 2) throw std::invalid_argument("level-set grids are two-dimensional");
  if (resolution < 2) throw std::invalid_argument("grid resolution must be at least 2");
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out.precision(12);
  out << "x1,x2,value\n";
  double lo = INFINITY, hi = -INFINITY;
  std::vector<double> x(2);
  for (std::size_t i = 0; i < resolution; ++i)
    for (std::size_t j = 0; j < resolution; ++j) {
      x[0] = box[0].lo + (box[0].hi - box[0].lo) * double(i) / double(resolution - 1);
      x[1] = box[1].lo + (box[1].hi - box[1].lo) * double(j) / double(resolution - 1);
      const double v = fn(x);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      out << x[0] << ',' << x[1] << ',' << v << '\n';
    }
  nlohmann::json lv = nlohmann::json::object();
  for (const auto& [k, v] : levels) lv[k] = v;
  fs::path meta = csv;
  meta.replace_extension(".json");
  write_json(meta, {{"function", name},
                    {"box", box_to_json(box)},
                    {"resolution", resolution},
                    {"levels", lv},
                    {"min", lo},
                    {"max", hi},
                    {"csv", csv.filename().string()}});
}

double monte_carlo_area(const std::function<bool(std::span<const double>)>& inside, const Box& box,
                        std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("need at least one sample");
  double volume = 1.0;
  for (const auto& iv : box) volume *= iv.hi - iv.lo;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples; ++i)
    if (inside(sample_uniform(box, seed ^ 0xa4eaULL, i))) ++hits;
  return volume * double(hits) / double(samples);
}

double annulus_mean_abs_residual(const ControlAffineSystem& sys, const CostSpec& cost, const NeuralValueFunction& net,
                                 double outer, double inner, std::size_t samples, std::uint64_t seed) {
  if (!(outer > inner) || inner < 0.0) throw std::invalid_argument("annulus needs outer > inner >= 0");
  if (samples == 0) throw std::invalid_argument("need at least one sample");
  const ResidualTerms terms(sys, cost);
  const Box box = make_box(sys.n, -outer, outer);
  Eigen::VectorXd f(Eigen::Index(sys.n)), p;
  Eigen::MatrixXd M(Eigen::Index(sys.n), Eigen::Index(sys.n));
  std::vector<double> work;
  double sum = 0.0;
  std::size_t taken = 0;
  for (std::uint64_t i = 0; taken < samples; ++i) {
    const auto x = sample_uniform(box, seed ^ 0xa22b1eULL, i);
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    if (m <= inner) continue;
    const double q = terms.at(x, f, M, work);
    const double W = net.value_and_gradient(x, p);
    sum += std::abs(zubov_residual_value(W, p, f, M, q, net.transform()));
    ++taken;
  }
  return sum / double(samples);
}

}  // namespace zclf
