// massdist: collect pushes, train predictors and policies, evaluate, verify.
//
// Exit codes: 0 success, 1 failed check or run, 2 usage error.

#include "massdist/config.hpp"
#include "massdist/dataset_io.hpp"
#include "massdist/errors.hpp"
#include "massdist/identifiability.hpp"
#include "massdist/meta_trainer.hpp"
#include "massdist/verify.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace massdist;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
};

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.workers = *c.workers;
  cfg.validate();
  return cfg;
}

fs::path output_root(const Common& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("MASSDIST_RUNS_ROOT"); env && *env) return env;
  return "runs";
}

void add_common(CLI::App* cmd, Common& c, bool with_out_root) {
  cmd->add_option("--config", c.config_path, "experiment config (JSON); defaults when omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--workers", c.workers, "rollout worker threads (default 16)");
  if (with_out_root) {
    cmd->add_option("--out", c.out, "output root (else $MASSDIST_RUNS_ROOT, else ./runs)");
  }
}

void log_line(const std::string& msg) { std::cerr << "[massdist] " << msg << std::endl; }

std::string join_q(const Eigen::VectorXd& q) {
  std::ostringstream s;
  s << std::setprecision(6);
  for (Eigen::Index i = 0; i < q.size(); ++i) s << (i ? " " : "") << q(i);
  return s.str();
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Common& c, int pushes, const std::string& out_file) {
  ExperimentConfig cfg = resolve_config(c);
  if (pushes >= 0) cfg.pushes = pushes;
  const std::uint64_t seed_id = meta::episode_seed_id(meta::Split::Train, 0, 0);
  const EpisodeTrajectory ep = meta::rollout_from_seed(cfg, meta::uniform_source_factory(), seed_id);

  PredictionDataset ds{{ep}, "simulate", "uniform", config_hash(cfg)};
  const fs::path path = out_file.empty() ? fs::path("trajectory.jsonl") : fs::path(out_file);
  save_dataset(path, ds);

  std::cout << "masses (normalized): " << join_q(ep.m_true) << "  mu " << ep.mu << "\n";
  std::cout << "q0: " << join_q(ep.q_seq.front()) << "\n";
  for (int t = 0; t < ep.pushes(); ++t) {
    std::cout << "push " << t + 1 << ": a = (" << ep.a_seq[t].a1 << ", " << ep.a_seq[t].a2 << ")  settled in "
              << ep.settle_steps[t] << " steps  q: " << join_q(ep.q_seq[t + 1]) << "\n";
  }
  std::cout << "wrote " << path.string() << "\n";
  return kOk;
}

int cmd_train(const Common& c, const std::string& stage, const std::string& run_id) {
  const ExperimentConfig cfg = resolve_config(c);
  const std::string id = run_id.empty() ? "run-" + config_hash(cfg) : run_id;
  const meta::RunDirectory run(output_root(c) / id, cfg);
  meta::TrainHooks hooks;
  hooks.log = log_line;
  log_line("run directory " + run.root().string() + " (config " + run.config_hash() + ")");

  if (stage == "rp") {
    meta::train_rp(cfg, &run, hooks);
  } else if (stage == "rp+") {
    meta::train_rp_plus(cfg, &run, hooks);
  } else {
    const auto result = meta::alternate_train(cfg, &run, hooks);
    for (const auto& h : result.history) {
      std::cout << "meta-iteration " << h.meta_iteration << ": validation error " << std::fixed
                << std::setprecision(3) << h.val_error << " (" << h.episodes_used << " episodes)\n";
    }
  }
  std::cout << run.root().string() << "\n";
  return kOk;
}

int cmd_evaluate(const Common& c, const std::vector<std::string>& runs, const std::string& seed_range,
                 bool deterministic) {
  if (runs.empty()) throw CLI::ValidationError("evaluate", "at least one run directory is required");
  ExperimentConfig cfg = c.config_path.empty() ? load_config(fs::path(runs.front()) / "config.json")
                                               : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.workers = *c.workers;
  std::uint64_t first = 0;
  if (!seed_range.empty()) {
    const auto colon = seed_range.find(':');
    if (colon == std::string::npos) throw CLI::ValidationError("--test-seed-range", "expected START:COUNT");
    first = std::stoull(seed_range.substr(0, colon));
    cfg.test_episodes = std::stol(seed_range.substr(colon + 1));
  }
  const std::string hash = config_hash(cfg);

  // Keep loaded networks alive for the whole evaluation.
  std::vector<std::unique_ptr<estimator::Predictor>> predictors;
  std::vector<meta::EvalModel> models;
  for (const auto& r : runs) {
    const fs::path dir(r);
    const std::string stored = config_hash(load_config(dir / "config.json"));
    if (stored != hash) throw ConfigMismatch("run " + r + " has config " + stored + ", expected " + hash);
    const std::string prefix = runs.size() > 1 ? dir.filename().string() + "/" : "";
    auto add = [&](const std::string& name, const std::string& ckpt, meta::SourceFactory source) {
      const fs::path p = dir / "checkpoints" / (ckpt + ".ckpt");
      if (!fs::exists(p)) return;
      predictors.push_back(meta::load_predictor(p, cfg));
      models.push_back({prefix + name, predictors.back().get(), std::move(source)});
    };
    add("RP", "predictor_stage0", meta::uniform_source_factory());
    add("RP+", "predictor_rp_plus", meta::uniform_source_factory());
    for (int m = 1; m <= cfg.meta_iterations; ++m) {
      const fs::path pol = dir / "checkpoints" / ("policy_meta" + std::to_string(m) + ".ckpt");
      if (!fs::exists(pol)) continue;
      const bool last = m == cfg.meta_iterations;
      const std::string name = m == 1 ? "TP" : last ? "TP+" : "TP" + std::to_string(m);
      // Each predictor is paired with the action source that produced its data.
      const bool mean_action = last || deterministic;
      add(name, "predictor_stage" + std::to_string(m),
          meta::policy_source_factory(meta::load_policy(pol, cfg), mean_action));
    }
  }
  if (models.empty()) throw std::runtime_error("no trained predictors found in the given runs");

  const meta::EvaluationReport report = meta::evaluate(models, cfg, first);
  // Completed runs stay untouched: the default report sits next to the first run.
  fs::path first_run = fs::path(runs.front()).lexically_normal();
  if (first_run.filename().empty()) first_run = first_run.parent_path();
  const fs::path base = c.out.empty() ? first_run.parent_path() / (first_run.filename().string() + ".report")
                                      : fs::path(c.out);
  write_text_atomic(base.string() + ".csv", report.to_csv());
  write_text_atomic(base.string() + ".txt", report.to_text());
  std::cout << report.to_text();
  return kOk;
}

int cmd_verify(const std::string& suite) {
  const auto results = verify::run_suite(suite);
  int failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.suite << "/" << r.name << ": " << r.detail << " ["
              << std::fixed << std::setprecision(2) << r.seconds << " s]\n";
    if (!r.passed) ++failed;
  }
  std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed ? kFailed : kOk;
}

int cmd_identifiability(const Common& c, int configurations, int pushes, const std::string& out_file) {
  const ExperimentConfig cfg = resolve_config(c);
  Rng rng(derive_seed(cfg.seed, {0x1de7}));
  CsvTable table;
  table.header = {"config", "q", "link", "rank", "nullity", "score_mean", "score_min", "score_max"};
  for (int i = 0; i < configurations; ++i) {
    const ChainModel model = sample_chain(cfg, rng);
    const ChainState state = random_initial_state(model, rng);
    const auto analysis = ident::analyze(model, state.q);
    std::vector<std::vector<double>> scores(model.links());
    for (int p = 0; p < pushes; ++p) {
      const PushAction a{uniform(rng, -1, 1), uniform(rng, -1, 1)};
      const PushCommand cmd = resolve_action(model, state.q, a, cfg.push);
      const Eigen::VectorXd qdd =
          ident::push_response(model, state.q, cmd.link_index, contact_point(model, cmd), cmd.direction);
      const auto s = ident::excitation_score(model, state.q, qdd);
      for (int k = 0; k < model.links(); ++k) scores[k].push_back(s[k]);
    }
    for (int k = 0; k < model.links(); ++k) {
      double mean = 0.0, lo = 1.0, hi = 0.0;
      for (double v : scores[k]) {
        mean += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (!scores[k].empty()) mean /= static_cast<double>(scores[k].size());
      const auto& l = analysis.links[k];
      table.add({std::to_string(i), join_q(state.q), std::to_string(k), std::to_string(l.rank),
                 std::to_string(l.null_basis.cols()), fmt_double(mean), fmt_double(scores[k].empty() ? 0.0 : lo),
                 fmt_double(hi)});
    }
  }
  const fs::path path = out_file.empty() ? fs::path("identifiability.csv") : fs::path(out_file);
  write_csv(path, table);
  std::cout << "wrote " << table.rows.size() << " rows to " << path.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mass-distribution estimation by interactive pushing"};
  app.require_subcommand(1);

  Common common;

  auto* sim = app.add_subcommand("simulate", "roll out one uniform-random episode");
  add_common(sim, common, false);
  int pushes = -1;
  std::string sim_out;
  sim->add_option("--pushes", pushes, "pushes in the episode (default from config)");
  sim->add_option("--out", sim_out, "trajectory file (JSONL)");

  auto* train = app.add_subcommand("train", "train predictors and policies into a run directory");
  add_common(train, common, true);
  std::string stage = "alternate", run_id;
  train->add_option("--stage", stage, "rp | rp+ | alternate")->check(CLI::IsMember({"rp", "rp+", "alternate"}));
  train->add_option("--run-id", run_id, "run directory name (default run-<config hash>)");

  auto* eval = app.add_subcommand("evaluate", "compare the predictors of one or more runs on held-out episodes");
  add_common(eval, common, false);
  std::vector<std::string> runs;
  std::string seed_range, report_out;
  bool deterministic = false;
  eval->add_option("runs", runs, "run directories")->required();
  eval->add_option("--test-seed-range", seed_range, "START:COUNT test episode indices");
  eval->add_flag("--deterministic-policy", deterministic, "drive every policy with its mean action");
  eval->add_option("--out", report_out, "report path prefix (default <first run>.report)");

  auto* ver = app.add_subcommand("verify", "run the built-in physics, gradient and identifiability checks");
  std::string suite = "all";
  ver->add_option("--suite", suite, "physics | gradients | identifiability | all")
      ->check(CLI::IsMember({"physics", "gradients", "identifiability", "all"}));

  auto* idt = app.add_subcommand("identifiability", "per-link rank, nullity and excitation scores as CSV");
  add_common(idt, common, false);
  int configurations = 20, id_pushes = 50;
  std::string id_out;
  idt->add_option("--configurations", configurations, "random chains to analyze");
  idt->add_option("--pushes", id_pushes, "sampled pushes per chain");
  idt->add_option("--out", id_out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*sim) return cmd_simulate(common, pushes, sim_out);
    if (*train) return cmd_train(common, stage, run_id);
    if (*eval) {
      common.out = report_out;
      return cmd_evaluate(common, runs, seed_range, deterministic);
    }
    if (*ver) return cmd_verify(suite);
    if (*idt) return cmd_identifiability(common, configurations, id_pushes, id_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
