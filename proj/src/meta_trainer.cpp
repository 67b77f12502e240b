#include "massdist/meta_trainer.hpp"

#include "massdist/checkpoint.hpp"
#include "massdist/errors.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#ifndef MASSDIST_BUILD_ID
#define MASSDIST_BUILD_ID "unknown"
#endif

namespace massdist::meta {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Runs f(i) for i in [0, n) on up to `workers` threads. The first exception
// thrown by any task is rethrown on the caller's thread.
template <class F>
void parallel_for(long n, int workers, F&& f) {
  if (n <= 0) return;
  const int threads = static_cast<int>(std::min<long>(std::max(1, workers), n));
  if (threads == 1) {
    for (long i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (long i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

void say(const TrainHooks& hooks, const std::string& msg) {
  if (hooks.log) hooks.log(msg);
}

constexpr std::uint64_t kPredictorInitTag = 0x9ed1c7;
constexpr std::uint64_t kPolicyInitTag = 0x9011c7;
constexpr std::uint64_t kPredictorBatchTag = 0x7a11;
constexpr std::uint64_t kPpoShuffleTag = 0x5ff1e;

}  // namespace

std::uint64_t episode_seed_id(Split split, int stream, std::uint64_t index) {
  if (stream < 0 || static_cast<std::uint64_t>(stream) >= kSplitBlock / kStreamBlock) {
    throw std::invalid_argument("seed stream out of range");
  }
  if (index >= kStreamBlock) throw std::invalid_argument("episode index exceeds its stream block");
  const std::uint64_t base = static_cast<std::uint64_t>(split) * kSplitBlock;
  return base + static_cast<std::uint64_t>(stream) * kStreamBlock + index;
}

Split split_of(std::uint64_t seed_id) {
  const std::uint64_t s = seed_id / kSplitBlock;
  if (s > 2) throw std::invalid_argument("seed id outside every split");
  return static_cast<Split>(s);
}

SourceFactory uniform_source_factory() {
  return [] { return uniform_action_source(); };
}

SourceFactory policy_source_factory(std::shared_ptr<const explorer::PolicyNet> policy, bool deterministic) {
  return [policy, deterministic] { return explorer::policy_action_source(*policy, deterministic); };
}

EpisodeTrajectory rollout_from_seed(const ExperimentConfig& cfg, const SourceFactory& source,
                                    std::uint64_t seed_id) {
  Rng rng(derive_seed(cfg.seed, {seed_id}));
  const ChainModel model = sample_chain(cfg, rng);
  EpisodeTrajectory traj = rollout_episode(model, source(), cfg.pushes, cfg.noise_std, rng, cfg.push);
  traj.seed = seed_id;
  return traj;
}

std::vector<EpisodeTrajectory> collect_dataset(const SourceFactory& source, const ExperimentConfig& cfg,
                                               Split split, int stream, long count, int workers,
                                               CollectStats* stats) {
  if (count < 1) throw std::invalid_argument("collect_dataset: count must be >= 1");
  std::vector<EpisodeTrajectory> out;
  out.reserve(static_cast<std::size_t>(count));
  CollectStats st;
  std::uint64_t next = 0;
  while (static_cast<long>(out.size()) < count) {
    const long block = count - static_cast<long>(out.size());
    std::vector<std::optional<EpisodeTrajectory>> results(static_cast<std::size_t>(block));
    parallel_for(block, workers, [&](long i) {
      try {
        results[i] = rollout_from_seed(cfg, source, episode_seed_id(split, stream, next + i));
      } catch (const EpisodeFailure&) {
      }
    });
    next += static_cast<std::uint64_t>(block);
    for (auto& r : results) {
      ++st.attempts;
      if (r) {
        out.push_back(std::move(*r));
      } else {
        ++st.failures;
      }
    }
    // Small samples are noisy; only judge the rate once there is something to judge.
    if (st.attempts >= 10 && st.failures * 5 > st.attempts) {
      if (stats) *stats = st;
      throw CollectionStalled("episode failure rate " + std::to_string(st.failures) + "/" +
                              std::to_string(st.attempts) + " exceeds 20%; check the config ranges");
    }
    if (st.attempts > 10 * count + 100) throw CollectionStalled("collection made no progress");
  }
  if (stats) *stats = st;
  return out;
}

double uniform_guess_baseline(const ExperimentConfig& cfg, long samples, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xba5e11}));
  const double guess = 1.0 / cfg.links;
  double acc = 0.0;
  Eigen::VectorXd m(cfg.links);
  for (long s = 0; s < samples; ++s) {
    for (int k = 0; k < cfg.links; ++k) m(k) = uniform(rng, cfg.mass.lo, cfg.mass.hi);
    m /= m.sum();
    acc += (m.array() - guess).abs().sum();
  }
  return 100.0 * acc / static_cast<double>(samples);
}

// ---------------------------------------------------------------------------

std::string build_identifier() { return MASSDIST_BUILD_ID; }

RunDirectory::RunDirectory(fs::path root, const ExperimentConfig& cfg)
    : root_(std::move(root)), hash_(massdist::config_hash(cfg)) {
  for (const char* sub : {"datasets", "checkpoints", "metrics"}) fs::create_directories(root_ / sub);
  const fs::path stored = root_ / "config.json";
  if (fs::exists(stored)) {
    const std::string existing = massdist::config_hash(load_config(stored));
    if (existing != hash_) {
      throw ConfigMismatch("run directory " + root_.string() + " holds config " + existing +
                           ", requested " + hash_);
    }
  } else {
    write_text_atomic(stored, to_json(cfg) + "\n");
  }
}

fs::path RunDirectory::dataset(const std::string& name) const { return root_ / "datasets" / (name + ".jsonl"); }
fs::path RunDirectory::checkpoint(const std::string& name) const { return root_ / "checkpoints" / (name + ".ckpt"); }
fs::path RunDirectory::metrics(const std::string& name) const { return root_ / "metrics" / (name + ".csv"); }
fs::path RunDirectory::report(const std::string& ext) const { return root_ / ("report." + ext); }

void RunDirectory::record(const std::string& event, const std::vector<fs::path>& artifacts) const {
  json j;
  j["event"] = event;
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  j["time"] = ts.str();
  j["run_id"] = root_.filename().string();
  j["config_hash"] = hash_;
  j["build"] = build_identifier();
  json paths = json::array();
  for (const auto& p : artifacts) {
    if (!fs::exists(p)) throw std::runtime_error("manifest: artifact missing: " + p.string());
    paths.push_back(fs::relative(p, root_).string());
  }
  j["artifacts"] = paths;
  std::ofstream out(root_ / "manifest.jsonl", std::ios::app);
  out << j.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoint helpers

namespace {

std::map<std::string, std::string> ckpt_meta(const ExperimentConfig& cfg, const std::string& kind) {
  return {{"config_hash", massdist::config_hash(cfg)}, {"kind", kind}, {"links", std::to_string(cfg.links)}};
}

void check_meta(const nn::Checkpoint& c, const ExperimentConfig& cfg, const std::string& kind,
                const fs::path& path) {
  const auto hash = c.metadata.find("config_hash");
  if (hash == c.metadata.end() || hash->second != massdist::config_hash(cfg)) {
    throw ConfigMismatch("checkpoint " + path.string() + " belongs to another config");
  }
  const auto k = c.metadata.find("kind");
  if (k == c.metadata.end() || k->second != kind) {
    throw std::runtime_error("checkpoint " + path.string() + " is not a " + kind);
  }
}

void save_predictor(const fs::path& path, const estimator::Predictor& net, const ExperimentConfig& cfg) {
  nn::save_checkpoint(path, nn::Checkpoint::from_params(net.params(), ckpt_meta(cfg, "predictor")));
}

void save_policy(const fs::path& path, const explorer::PolicyNet& policy, const ExperimentConfig& cfg) {
  nn::save_checkpoint(path, nn::Checkpoint::from_params(policy.params(), ckpt_meta(cfg, "policy")));
}

std::unique_ptr<estimator::Predictor> fresh_predictor(const ExperimentConfig& cfg) {
  return std::make_unique<estimator::Predictor>(cfg.links, cfg.predictor,
                                                derive_seed(cfg.seed, {kPredictorInitTag}));
}

// Training progress: current and best parameters, schedule position, history.
void save_progress(const fs::path& path, const estimator::TrainProgress& p, const ExperimentConfig& cfg) {
  nn::Checkpoint c;
  c.metadata = ckpt_meta(cfg, "progress");
  c.metadata["step"] = std::to_string(p.step);
  c.metadata["best_val"] = fmt_double(p.best_val);
  c.metadata["best_step"] = std::to_string(p.best_step);
  json hist = json::array();
  for (const auto& r : p.history) hist.push_back({r.step, fmt_double(r.train_loss), fmt_double(r.val_l1), fmt_double(r.lr)});
  c.metadata["history"] = hist.dump();
  for (const auto& b : p.current.blocks()) c.blocks.emplace_back("current/" + b.name, b.value);
  for (const auto& b : p.best.blocks()) c.blocks.emplace_back("best/" + b.name, b.value);
  nn::save_checkpoint(path, c);
}

estimator::TrainProgress load_progress(const fs::path& path, const estimator::Predictor& shape,
                                       const ExperimentConfig& cfg) {
  const nn::Checkpoint c = nn::load_checkpoint(path);
  check_meta(c, cfg, "progress", path);
  estimator::TrainProgress p;
  p.step = std::stol(c.metadata.at("step"));
  p.best_val = std::stod(c.metadata.at("best_val"));
  p.best_step = std::stol(c.metadata.at("best_step"));
  for (const auto& r : json::parse(c.metadata.at("history"))) {
    p.history.push_back({r[0].get<long>(), std::stod(r[1].get<std::string>()),
                         std::stod(r[2].get<std::string>()), std::stod(r[3].get<std::string>())});
  }
  p.current = shape.params();
  p.best = shape.params();
  nn::Checkpoint cur, best;
  for (const auto& [name, value] : c.blocks) {
    if (name.rfind("current/", 0) == 0) cur.blocks.emplace_back(name.substr(8), value);
    if (name.rfind("best/", 0) == 0) best.blocks.emplace_back(name.substr(5), value);
  }
  cur.restore(p.current);
  best.restore(p.best);
  return p;
}

std::uint64_t tag_of(const std::string& phase) {
  std::uint64_t h = 0;
  for (char ch : phase) h = h * 131 + static_cast<unsigned char>(ch);
  return h;
}

// Train (or resume, or load the finished result of) one predictor phase.
void run_predictor_phase(estimator::Predictor& net, const std::string& phase,
                         const std::vector<EpisodeTrajectory>& train,
                         const std::vector<EpisodeTrajectory>& val, long steps,
                         const ExperimentConfig& cfg, const RunDirectory* run, const TrainHooks& hooks) {
  if (run && fs::exists(run->checkpoint(phase))) {
    const nn::Checkpoint c = nn::load_checkpoint(run->checkpoint(phase));
    check_meta(c, cfg, "predictor", run->checkpoint(phase));
    c.restore(net.params());
    say(hooks, phase + ": loaded finished checkpoint");
    return;
  }
  estimator::TrainOptions opts;
  opts.schedule = cfg.schedule;
  opts.schedule.total_steps = steps;
  opts.seed = derive_seed(cfg.seed, {kPredictorBatchTag, tag_of(phase)});
  if (hooks.interrupt && hooks.interrupt->first == phase) opts.stop_after = hooks.interrupt->second;

  std::optional<estimator::TrainProgress> resume;
  fs::path progress_path;
  if (run) {
    progress_path = run->checkpoint(phase + ".progress");
    if (fs::exists(progress_path)) {
      resume = load_progress(progress_path, net, cfg);
      say(hooks, phase + ": resuming at step " + std::to_string(resume->step));
    }
    opts.on_eval = [&](const estimator::TrainProgress& p) { save_progress(progress_path, p, cfg); };
  }
  say(hooks, phase + ": training predictor on " + std::to_string(train.size()) + " episodes for " +
                 std::to_string(steps) + " steps");
  const estimator::TrainResult res = estimator::train_predictor(net, train, val, opts, std::move(resume));
  if (!res.completed) throw Interrupted(phase + " interrupted");
  if (run) {
    CsvTable t;
    t.header = {"step", "train_loss", "val_l1", "lr"};
    for (const auto& r : res.history) {
      t.add({std::to_string(r.step), fmt_double(r.train_loss), fmt_double(r.val_l1), fmt_double(r.lr)});
    }
    write_csv(run->metrics(phase), t);
    save_predictor(run->checkpoint(phase), net, cfg);
    run->record("predictor " + phase, {run->checkpoint(phase), run->metrics(phase)});
  }
}

std::vector<EpisodeTrajectory> dataset_phase(const std::string& name, const SourceFactory& source,
                                             const std::string& provenance, Split split, int stream,
                                             long count, const ExperimentConfig& cfg,
                                             const RunDirectory* run, const TrainHooks& hooks) {
  if (run && fs::exists(run->dataset(name))) {
    PredictionDataset ds = load_dataset(run->dataset(name), run->config_hash());
    if (static_cast<long>(ds.episodes.size()) == count) {
      say(hooks, name + ": loaded " + std::to_string(count) + " episodes");
      return std::move(ds.episodes);
    }
  }
  CollectStats stats;
  auto episodes = collect_dataset(source, cfg, split, stream, count, cfg.workers, &stats);
  say(hooks, name + ": collected " + std::to_string(count) + " episodes (" + std::to_string(stats.failures) +
                 " failures)");
  if (run) {
    PredictionDataset ds{episodes, split == Split::Train ? "train" : split == Split::Validation ? "validation" : "test",
                         provenance, run->config_hash()};
    save_dataset(run->dataset(name), ds);
    run->record("dataset " + name, {run->dataset(name)});
  }
  return episodes;
}

CsvTable ppo_table(const std::vector<PpoRow>& rows) {
  CsvTable t;
  t.header = {"meta_iteration", "update", "mean_reward", "mean_prediction_error", "entropy", "clip_fraction",
              "approx_kl"};
  for (const auto& r : rows) {
    t.add({std::to_string(r.meta_iteration), std::to_string(r.update), fmt_double(r.mean_reward),
           fmt_double(r.mean_prediction_error), fmt_double(r.entropy), fmt_double(r.clip_fraction),
           fmt_double(r.approx_kl)});
  }
  return t;
}

std::vector<PpoRow> read_ppo_table(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  std::vector<PpoRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw std::runtime_error("malformed PPO metrics " + path.string());
    rows.push_back({std::stoi(cells[0]), std::stoi(cells[1]), std::stod(cells[2]), std::stod(cells[3]),
                    std::stod(cells[4]), std::stod(cells[5]), std::stod(cells[6])});
  }
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------

long predictor_episodes(const ExperimentConfig& cfg, int meta_iterations) {
  return cfg.stage0_episodes + static_cast<long>(meta_iterations) * cfg.episodes_per_meta;
}

SourceFactory stage_source(const AlternateResult& result, const ExperimentConfig& cfg, int stage) {
  if (stage == 0) return uniform_source_factory();
  return policy_source_factory(result.policies.at(static_cast<std::size_t>(stage - 1)),
                               stage == cfg.meta_iterations);
}

std::vector<PpoRow> train_policy(explorer::PolicyNet& policy, const estimator::Predictor& predictor,
                                 const ExperimentConfig& cfg, int meta_iteration) {
  std::vector<PpoRow> rows;
  if (cfg.pushes < 1) return rows;
  nn::AdamState adam;
  Rng shuffle(derive_seed(cfg.seed, {kPpoShuffleTag, static_cast<std::uint64_t>(meta_iteration)}));
  // Whole episodes per rollout slot, rounded up so each slot covers its step quota.
  const long per_slot = (cfg.ppo_steps_per_worker + cfg.pushes - 1) / cfg.pushes;
  const long per_update = per_slot * cfg.ppo_parallel_envs;
  const int stream = ppo_stream(meta_iteration);

  std::uint64_t index = 0;
  long steps = 0;
  int update = 0;
  while (steps < cfg.ppo_env_steps) {
    // Workers read an immutable snapshot while the update below writes `policy`.
    const explorer::PolicyNet snapshot = policy;
    std::vector<std::optional<explorer::EpisodeRecord>> records(static_cast<std::size_t>(per_update));
    parallel_for(per_update, cfg.workers, [&](long i) {
      const std::uint64_t seed_id = episode_seed_id(Split::Train, stream, index + static_cast<std::uint64_t>(i));
      Rng rng(derive_seed(cfg.seed, {seed_id}));
      const ChainModel model = sample_chain(cfg, rng);
      auto actor = std::make_shared<explorer::PolicyActor>(snapshot, false);
      ActionSource source = [actor](std::span<const Eigen::VectorXd> h, Rng& r) { return (*actor)(h, r); };
      try {
        const EpisodeTrajectory traj = rollout_episode(model, source, cfg.pushes, cfg.noise_std, rng, cfg.push);
        explorer::EpisodeRecord rec = actor->take_record();
        explorer::score_episode(rec, traj, predictor, cfg.reward_beta);
        records[i] = std::move(rec);
      } catch (const EpisodeFailure&) {
      }
    });
    index += static_cast<std::uint64_t>(per_update);

    explorer::RolloutBuffer buffer;
    for (auto& r : records) {
      if (r) buffer.episodes.push_back(std::move(*r));
    }
    if (buffer.episodes.empty()) throw CollectionStalled("PPO rollouts all failed");
    steps += static_cast<long>(buffer.steps()) + static_cast<long>(per_update - buffer.episodes.size()) * cfg.pushes;

    PpoRow row;
    row.meta_iteration = meta_iteration;
    row.update = update++;
    double reward_sum = 0.0, err_sum = 0.0;
    for (const auto& e : buffer.episodes) {
      for (double r : e.rewards) reward_sum += r;
      err_sum += e.prediction_error;
    }
    row.mean_reward = reward_sum / static_cast<double>(buffer.steps());
    row.mean_prediction_error = err_sum / static_cast<double>(buffer.episodes.size());

    const explorer::PpoMetrics m = explorer::ppo_update(policy, adam, buffer, cfg.ppo, shuffle);
    if (m.replay_mismatch > 1e-10) {
      throw std::logic_error("PPO replay of stored recurrent states disagrees with rollout");
    }
    row.entropy = m.entropy;
    row.clip_fraction = m.clip_fraction;
    row.approx_kl = m.approx_kl;
    rows.push_back(row);
  }
  return rows;
}

std::unique_ptr<estimator::Predictor> train_rp(const ExperimentConfig& cfg, const RunDirectory* run,
                                               const TrainHooks& hooks) {
  const auto uniform = uniform_source_factory();
  const auto train = dataset_phase("train_stage0", uniform, "uniform", Split::Train, dataset_stream(0),
                                   cfg.stage0_episodes, cfg, run, hooks);
  const auto val = dataset_phase("val_stage0", uniform, "uniform", Split::Validation, dataset_stream(0),
                                 cfg.validation_episodes, cfg, run, hooks);
  auto net = fresh_predictor(cfg);
  run_predictor_phase(*net, "predictor_stage0", train, val, cfg.schedule.total_steps, cfg, run, hooks);
  return net;
}

std::unique_ptr<estimator::Predictor> train_rp_plus(const ExperimentConfig& cfg, const RunDirectory* run,
                                                    const TrainHooks& hooks) {
  const auto uniform = uniform_source_factory();
  // Stream 0 extended: its first stage0_episodes coincide with the RP dataset.
  const long total = predictor_episodes(cfg, 1);
  const auto train = dataset_phase("train_rp_plus", uniform, "uniform", Split::Train, dataset_stream(0), total,
                                   cfg, run, hooks);
  const auto val = dataset_phase("val_stage0", uniform, "uniform", Split::Validation, dataset_stream(0),
                                 cfg.validation_episodes, cfg, run, hooks);
  auto net = fresh_predictor(cfg);
  const long steps = cfg.schedule.total_steps + cfg.finetune_steps;
  run_predictor_phase(*net, "predictor_rp_plus", train, val, steps, cfg, run, hooks);
  return net;
}

AlternateResult alternate_train(const ExperimentConfig& cfg, const RunDirectory* run, const TrainHooks& hooks) {
  cfg.validate();
  AlternateResult result;
  const auto uniform = uniform_source_factory();

  const auto val0 = dataset_phase("val_stage0", uniform, "uniform", Split::Validation, dataset_stream(0),
                                  cfg.validation_episodes, cfg, run, hooks);
  result.predictors.push_back(train_rp(cfg, run, hooks));
  result.history.push_back(
      {0, 100.0 * estimator::final_step_l1(*result.predictors.back(), val0), predictor_episodes(cfg, 0)});

  explorer::PolicyNet policy(estimator::observation_features(cfg.links), cfg.policy,
                             derive_seed(cfg.seed, {kPolicyInitTag}));

  for (int m = 1; m <= cfg.meta_iterations; ++m) {
    const std::string suffix = std::to_string(m);
    const std::string policy_name = "policy_meta" + suffix;
    // Current predictor, frozen while the policy trains against it.
    const estimator::Predictor& frozen_predictor = *result.predictors.back();
    if (run && fs::exists(run->checkpoint(policy_name))) {
      const nn::Checkpoint c = nn::load_checkpoint(run->checkpoint(policy_name));
      check_meta(c, cfg, "policy", run->checkpoint(policy_name));
      c.restore(policy.params());
      const auto rows = read_ppo_table(run->metrics("ppo_meta" + suffix));
      result.ppo.insert(result.ppo.end(), rows.begin(), rows.end());
      say(hooks, policy_name + ": loaded finished checkpoint");
    } else {
      say(hooks, policy_name + ": PPO for " + std::to_string(cfg.ppo_env_steps) + " pushes");
      const auto rows = train_policy(policy, frozen_predictor, cfg, m);
      result.ppo.insert(result.ppo.end(), rows.begin(), rows.end());
      if (run) {
        write_csv(run->metrics("ppo_meta" + suffix), ppo_table(rows));
        save_policy(run->checkpoint(policy_name), policy, cfg);
        run->record("policy " + policy_name, {run->checkpoint(policy_name), run->metrics("ppo_meta" + suffix)});
      }
    }
    result.policies.push_back(std::make_shared<const explorer::PolicyNet>(policy));

    const bool deterministic = m == cfg.meta_iterations;
    const SourceFactory source = stage_source(result, cfg, m);
    const std::string provenance = policy_name + (deterministic ? ":mean" : ":sampled");
    const auto train = dataset_phase("train_stage" + suffix, source, provenance, Split::Train, dataset_stream(m),
                                     cfg.episodes_per_meta, cfg, run, hooks);
    const auto val = dataset_phase("val_stage" + suffix, source, provenance, Split::Validation,
                                   dataset_stream(m), cfg.validation_episodes, cfg, run, hooks);
    auto next = std::make_unique<estimator::Predictor>(frozen_predictor);
    run_predictor_phase(*next, "predictor_stage" + suffix, train, val, cfg.finetune_steps, cfg, run, hooks);
    result.predictors.push_back(std::move(next));
    result.history.push_back(
        {m, 100.0 * estimator::final_step_l1(*result.predictors.back(), val), predictor_episodes(cfg, m)});
    say(hooks, "meta-iteration " + suffix + ": validation error " + fmt_double(result.history.back().val_error));
  }

  if (run) {
    CsvTable t;
    t.header = {"meta_iteration", "val_error_pct", "episodes_used"};
    for (const auto& h : result.history) {
      t.add({std::to_string(h.meta_iteration), fmt_double(h.val_error), std::to_string(h.episodes_used)});
    }
    write_csv(run->metrics("history"), t);
    write_csv(run->metrics("ppo"), ppo_table(result.ppo));
    run->record("alternate complete", {run->metrics("history"), run->metrics("ppo")});
  }
  return result;
}

// ---------------------------------------------------------------------------

const EvalRow* EvaluationReport::find(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream out;
  std::size_t steps = 0;
  for (const auto& r : rows) steps = std::max(steps, r.per_step.size());
  out << "model,error_pct,episodes,failures";
  for (std::size_t t = 0; t < steps; ++t) out << ",step_" << (t + 1) << "_pct";
  out << '\n';
  for (const auto& r : rows) {
    out << r.name << ',' << fmt_double(r.error_pct) << ',' << r.episodes << ',' << r.failures;
    for (std::size_t t = 0; t < steps; ++t) out << ',' << (t < r.per_step.size() ? fmt_double(r.per_step[t]) : "");
    out << '\n';
  }
  out << "monte_carlo_uniform_guess," << fmt_double(monte_carlo_uniform_guess) << ",,\n";
  return out.str();
}

std::string EvaluationReport::to_text() const {
  std::ostringstream out;
  out << "config " << config_hash << ", seed " << seed << ", " << test_episodes << " test episodes\n";
  out << "error = 100 x mean final-step L1 distance to the true mass distribution\n\n";
  out << std::left << std::setw(16) << "model" << std::right << std::setw(10) << "error" << std::setw(10)
      << "episodes" << std::setw(10) << "failures" << "  per-step\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    out << std::left << std::setw(16) << r.name << std::right << std::setw(10) << r.error_pct << std::setw(10)
        << r.episodes << std::setw(10) << r.failures << "  ";
    for (double v : r.per_step) out << v << ' ';
    out << '\n';
  }
  out << std::left << std::setw(16) << "mc uniform" << std::right << std::setw(10) << monte_carlo_uniform_guess
      << '\n';
  return out.str();
}

EvaluationReport evaluate(const std::vector<EvalModel>& models, const ExperimentConfig& cfg,
                          std::uint64_t first_test_index) {
  EvaluationReport report;
  report.test_episodes = cfg.test_episodes;
  report.seed = cfg.seed;
  report.config_hash = massdist::config_hash(cfg);

  auto guess = fresh_predictor(cfg);
  guess->zero_head();
  std::vector<EvalModel> all = models;
  all.push_back({"uniform_guess", guess.get(), uniform_source_factory()});

  for (const auto& model : all) {
    std::vector<std::optional<EpisodeTrajectory>> eps(static_cast<std::size_t>(cfg.test_episodes));
    parallel_for(cfg.test_episodes, cfg.workers, [&](long i) {
      try {
        eps[i] = rollout_from_seed(cfg, model.source,
                                   episode_seed_id(Split::Test, 0, first_test_index + static_cast<std::uint64_t>(i)));
      } catch (const EpisodeFailure&) {
      }
    });
    std::vector<EpisodeTrajectory> ok;
    EvalRow row;
    row.name = model.name;
    for (auto& e : eps) {
      if (e) {
        ok.push_back(std::move(*e));
      } else {
        ++row.failures;
      }
    }
    row.episodes = static_cast<long>(ok.size());
    if (!ok.empty() && cfg.pushes > 0) {
      row.error_pct = 100.0 * estimator::final_step_l1(*model.predictor, ok);
      for (double v : estimator::per_step_l1(*model.predictor, ok)) row.per_step.push_back(100.0 * v);
    }
    report.rows.push_back(std::move(row));
  }
  report.monte_carlo_uniform_guess = uniform_guess_baseline(cfg, 200000, cfg.seed);
  return report;
}

std::unique_ptr<estimator::Predictor> load_predictor(const fs::path& path, const ExperimentConfig& cfg) {
  const nn::Checkpoint c = nn::load_checkpoint(path);
  check_meta(c, cfg, "predictor", path);
  auto net = fresh_predictor(cfg);
  c.restore(net->params());
  return net;
}

std::shared_ptr<explorer::PolicyNet> load_policy(const fs::path& path, const ExperimentConfig& cfg) {
  const nn::Checkpoint c = nn::load_checkpoint(path);
  check_meta(c, cfg, "policy", path);
  auto policy = std::make_shared<explorer::PolicyNet>(estimator::observation_features(cfg.links), cfg.policy, 0);
  c.restore(policy->params());
  return policy;
}

}  // namespace massdist::meta
