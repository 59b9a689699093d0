// zubov_clf: command-line front end for the CLF synthesis and verification pipeline.
//
// Exit codes: 0 success, 1 verification counterexample or unknown (artifacts
// still written), 2 usage error, 3 numeric failure.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <set>

#include "zclf/bench.hpp"
#include "zclf/parallel.hpp"

#ifndef ZCLF_VERSION
#define ZCLF_VERSION "0.0.0"
#endif
#ifndef ZCLF_GIT_HASH
#define ZCLF_GIT_HASH "unknown"
#endif

namespace fs = std::filesystem;
using namespace zclf;

namespace {

constexpr int kOk = 0, kUnverified = 1, kUsage = 2, kNumeric = 3;

int exit_code(const StageError& e) {
  switch (e.kind()) {
    case StageError::Kind::Usage: return kUsage;
    case StageError::Kind::Unverified: return kUnverified;
    case StageError::Kind::Numeric: return kNumeric;
  }
  return kNumeric;
}

// Pulls `--a.b value`, `--a.b=value` and top-level config leaves without a
// dedicated flag out of argv; everything else goes to CLI11.
std::vector<std::pair<std::string, std::string>> take_dotted(std::vector<std::string>& args) {
  static const nlohmann::json reference = to_json(RunConfig{});
  static const std::set<std::string> flags{"benchmark", "out", "seed", "threads", "backend"};
  std::vector<std::pair<std::string, std::string>> out;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) == 0) {
      std::string name = a.substr(2), value;
      const auto eq = name.find('=');
      const bool inline_value = eq != std::string::npos;
      if (inline_value) {
        value = name.substr(eq + 1);
        name = name.substr(0, eq);
      }
      const bool leaf = reference.contains(name) && !reference[name].is_object() && !flags.contains(name);
      if (name.find('.') != std::string::npos || leaf) {
        if (!inline_value) {
          if (i + 1 >= args.size()) throw ConfigError("option --" + name + " needs a value");
          value = args[++i];
        }
        out.emplace_back(name, value);
        continue;
      }
    }
    rest.push_back(a);
  }
  args = rest;
  return out;
}

struct Inputs {
  std::string config_file;
  std::string model, certificate, dataset;
  bool quiet = false;
  // shortcuts for frequently used config keys, applied in this order
  std::vector<std::pair<std::string, std::string>> shortcuts;
};

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream(path) << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::pair<std::string, std::string>> dotted;
  try {
    dotted = take_dotted(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  CLI::App app{"Control Lyapunov function synthesis, learning and verification"};
  app.set_version_flag("--version", std::string("zubov_clf ") + ZCLF_VERSION + " (git " + ZCLF_GIT_HASH + ")");
  app.require_subcommand(1);
  app.footer(
      "Every configuration leaf can be set as --section.key value (e.g. --train.epochs 5).\n"
      "Precedence: defaults < --config file < flags. The effective configuration is\n"
      "written to <out>/config.json. ZUBOV_CLF_THREADS is used when --threads is absent.");

  Inputs in;
  std::string benchmark, system, out, backend, seed, threads, delta, solver;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", in.config_file, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--benchmark", benchmark, "registered benchmark name");
    sub->add_option("--system", system, "JSON system description (overrides --benchmark)");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--threads", threads, "worker threads for pmp and verify");
    sub->add_option("--backend", backend, "global check backend: native or smtlib");
    sub->add_option("--delta", delta, "verification delta");
    sub->add_option("--solver", solver, "external SMT solver command for --backend smtlib");
    sub->add_flag("--quiet", in.quiet, "no progress output");
  };
  auto* qclf = app.add_subcommand("qclf", "quadratic CLF: Riccati design, global check, level search");
  auto* pmp = app.add_subcommand("pmp-data", "trajectory-optimization dataset");
  auto* trn = app.add_subcommand("train", "physics-informed training of the value network");
  auto* ver = app.add_subcommand("verify", "verify the learned CLF and the closed-loop region of attraction");
  auto* sim = app.add_subcommand("simulate", "closed-loop simulation: HJB controller against Sontag");
  auto* pip = app.add_subcommand("pipeline", "all stages end to end");
  auto* grd = app.add_subcommand("export-grid", "level-set grids and areas for plotting");
  for (auto* s : {qclf, pmp, trn, ver, sim, pip, grd}) common(s);
  trn->add_option("--dataset", in.dataset, "dataset.jsonl (default <out>/dataset.jsonl)");
  for (auto* s : {ver, sim, grd}) {
    s->add_option("--model", in.model, "model.json (default <out>/model.json)");
    s->add_option("--certificate", in.certificate, "certificate.json (default <out>/certificate.json)");
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  RunConfig cfg;
  nlohmann::json effective;
  try {
    nlohmann::json j = to_json(RunConfig{});
    if (!in.config_file.empty()) {
      std::ifstream f(in.config_file);
      nlohmann::json file;
      try {
        file = nlohmann::json::parse(f);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("cannot parse " + in.config_file + ": " + e.what());
      }
      run_config_from_json(file);  // strict key check
      j.merge_patch(file);
    }
    auto set = [&](const char* key, const std::string& v) {
      if (!v.empty()) apply_override(j, key, v);
    };
    set("benchmark", benchmark);
    set("system_file", system);
    set("out", out);
    set("seed", seed);
    set("threads", threads);
    set("backend", backend);
    set("verify.delta", delta);
    set("verify.smt_solver", solver);
    for (const auto& [k, v] : dotted) apply_override(j, k, v);
    cfg = run_config_from_json(j);
    effective = to_json(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  const LogFn log = [&](const std::string& s) {
    if (!in.quiet) std::cerr << s << '\n';
  };
  const fs::path dir = cfg.out;
  auto path_or = [&](const std::string& given, const char* name) { return given.empty() ? dir / name : fs::path(given); };

  try {
    if (pip->parsed()) {
      const auto res = run_pipeline(cfg, log);
      if (res.error) {
        std::cerr << "error: " << res.error->what() << '\n';
        return exit_code(*res.error);
      }
      log("report written to " + (dir / "report.json").string());
      return kOk;
    }

    const Benchmark b = resolve_benchmark(cfg);
    // inputs are checked before anything is written
    const fs::path model = path_or(in.model, "model.json");
    const fs::path certificate = path_or(in.certificate, "certificate.json");
    const fs::path dataset = path_or(in.dataset, "dataset.jsonl");
    if (ver->parsed() || sim->parsed() || grd->parsed()) {
      if (!fs::exists(certificate))
        throw StageError("input", StageError::Kind::Usage,
                         "no certificate at " + certificate.string() + "; run qclf first or pass --certificate");
      if (!grd->parsed() && !fs::exists(model))
        throw StageError("input", StageError::Kind::Usage,
                         "no model at " + model.string() + "; run train first or pass --model");
    }
    if (trn->parsed() && !fs::exists(dataset))
      throw StageError("input", StageError::Kind::Usage,
                       "no dataset at " + dataset.string() + "; run pmp-data first or pass --dataset");

    fs::create_directories(dir);
    write_json(dir / "config.json", effective);
    nlohmann::json rep;
    std::string name;
    if (qclf->parsed()) {
      name = "qclf";
      rep = stage_qclf(b, cfg, dir, log);
    } else if (pmp->parsed()) {
      name = "pmp-data";
      rep = stage_pmp(b, cfg, dir, log);
    } else if (trn->parsed()) {
      name = "train";
      rep = stage_train(b, cfg, dataset, dir, log);
    } else if (ver->parsed()) {
      name = "verify";
      rep = stage_verify(b, cfg, read_certificate(certificate), model, dir, log);
    } else if (sim->parsed()) {
      name = "simulate";
      rep = stage_simulate(b, cfg, read_certificate(certificate), model, dir, log);
    } else if (grd->parsed()) {
      name = "export-grid";
      nlohmann::json levels = nlohmann::json::object();
      auto level_from = [&](const char* key, const fs::path& file) {
        if (!fs::exists(file)) return;
        std::ifstream f(file);
        const auto j = nlohmann::json::parse(f);
        if (j.contains("c") && j["c"].is_number()) levels[key] = j["c"];
      };
      level_from("c1", dir / "verify" / "neural_containment.json");
      level_from("c2", dir / "verify" / "neural_clf.json");
      level_from("roa", dir / "verify" / "roa.json");
      rep = stage_grids(b, cfg, read_certificate(certificate), model, levels, dir);
    }
    write_json(dir / (name + ".json"), rep);
    return kOk;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  }
}
