#include "massdist/config.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace massdist {

using nlohmann::json;

namespace {

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

Range range_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("range must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

json to_tree(const ExperimentConfig& c) {
  json j;
  j["links"] = c.links;
  j["mass_range"] = range_json(c.mass);
  j["friction_range"] = range_json(c.friction);
  j["length_range"] = range_json(c.length);
  j["joint_limit"] = c.joint_limit;
  j["noise_std"] = c.noise_std;
  j["pushes"] = c.pushes;
  j["stage0_episodes"] = c.stage0_episodes;
  j["episodes_per_meta"] = c.episodes_per_meta;
  j["meta_iterations"] = c.meta_iterations;
  j["validation_episodes"] = c.validation_episodes;
  j["test_episodes"] = c.test_episodes;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["predictor"] = {{"encoder", c.predictor.encoder},
                    {"lstm", c.predictor.lstm},
                    {"head", c.predictor.head},
                    {"steps", c.schedule.total_steps},
                    {"finetune_steps", c.finetune_steps},
                    {"batch_size", c.schedule.batch_size},
                    {"lr", c.schedule.lr0},
                    {"halving_period", c.schedule.halving_period},
                    {"eval_every", c.schedule.eval_every},
                    {"grad_clip", c.schedule.grad_clip}};
  j["policy"] = {{"encoder", c.policy.encoder},
                 {"lstm", c.policy.lstm},
                 {"init_log_std", c.policy.init_log_std}};
  j["ppo"] = {{"env_steps", c.ppo_env_steps},
              {"steps_per_worker", c.ppo_steps_per_worker},
              {"parallel_envs", c.ppo_parallel_envs},
              {"clip", c.ppo.clip},
              {"entropy_coef", c.ppo.entropy_coef},
              {"value_coef", c.ppo.value_coef},
              {"epochs", c.ppo.epochs},
              {"minibatch_episodes", c.ppo.minibatch_episodes},
              {"lr", c.ppo.lr},
              {"gamma", c.ppo.gamma},
              {"lambda", c.ppo.lambda},
              {"max_grad_norm", c.ppo.max_grad_norm},
              {"reward_beta", c.reward_beta}};
  j["push"] = {{"min_speed", c.push.min_speed},
               {"max_speed", c.push.max_speed},
               {"offset_fraction", c.push.offset_fraction},
               {"control_steps", c.push.control_steps},
               {"substeps", c.push.substeps},
               {"dt", c.push.settle.step.dt},
               {"rest_speed", c.push.settle.rest_speed},
               {"rest_steps", c.push.settle.rest_steps},
               {"max_settle_steps", c.push.settle.max_steps}};
  return j;
}

// Overwrite `base` with `patch`, refusing keys the defaults do not have.
void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw std::invalid_argument("config: expected object at " + where);
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw std::invalid_argument("config: unknown key " + where + key);
    if (base[key].is_object()) {
      overlay(base[key], value, where + key + ".");
    } else {
      base[key] = value;
    }
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  auto check_range = [](const Range& r, const char* what, bool positive) {
    if (!(r.lo < r.hi)) throw std::invalid_argument(std::string("config: degenerate ") + what);
    if (positive && r.lo <= 0.0) throw std::invalid_argument(std::string("config: non-positive ") + what);
  };
  check_range(mass, "mass range", true);
  check_range(friction, "friction range", true);
  check_range(length, "length range", true);
  if (links < 1) throw std::invalid_argument("config: links must be >= 1");
  if (pushes < 0) throw std::invalid_argument("config: pushes must be >= 0");
  if (noise_std < 0.0) throw std::invalid_argument("config: negative noise");
  if (stage0_episodes < 1 || validation_episodes < 0 || test_episodes < 1 || episodes_per_meta < 1) {
    throw std::invalid_argument("config: dataset sizes");
  }
  if (meta_iterations < 0) throw std::invalid_argument("config: meta_iterations");
  if (workers < 1) throw std::invalid_argument("config: workers");
  if (schedule.batch_size < 1 || schedule.total_steps < 1 || schedule.eval_every < 1) {
    throw std::invalid_argument("config: predictor schedule");
  }
  if (ppo_steps_per_worker < 1 || ppo_parallel_envs < 1 || ppo_env_steps < 0) throw std::invalid_argument("config: ppo steps");
}

std::string to_json(const ExperimentConfig& cfg) { return to_tree(cfg).dump(2); }

ExperimentConfig config_from_json(const std::string& text) {
  json tree = to_tree(ExperimentConfig{});
  overlay(tree, json::parse(text), "");

  ExperimentConfig c;
  c.links = tree["links"];
  c.mass = range_from(tree["mass_range"]);
  c.friction = range_from(tree["friction_range"]);
  c.length = range_from(tree["length_range"]);
  c.joint_limit = tree["joint_limit"];
  c.noise_std = tree["noise_std"];
  c.pushes = tree["pushes"];
  c.stage0_episodes = tree["stage0_episodes"];
  c.episodes_per_meta = tree["episodes_per_meta"];
  c.meta_iterations = tree["meta_iterations"];
  c.validation_episodes = tree["validation_episodes"];
  c.test_episodes = tree["test_episodes"];
  c.seed = tree["seed"];
  c.workers = tree["workers"];

  const json& p = tree["predictor"];
  c.predictor.encoder = p["encoder"];
  c.predictor.lstm = p["lstm"];
  c.predictor.head = p["head"];
  c.schedule.total_steps = p["steps"];
  c.finetune_steps = p["finetune_steps"];
  c.schedule.batch_size = p["batch_size"];
  c.schedule.lr0 = p["lr"];
  c.schedule.halving_period = p["halving_period"];
  c.schedule.eval_every = p["eval_every"];
  c.schedule.grad_clip = p["grad_clip"];

  const json& pol = tree["policy"];
  c.policy.encoder = pol["encoder"];
  c.policy.lstm = pol["lstm"];
  c.policy.init_log_std = pol["init_log_std"];

  const json& o = tree["ppo"];
  c.ppo_env_steps = o["env_steps"];
  c.ppo_steps_per_worker = o["steps_per_worker"];
  c.ppo_parallel_envs = o["parallel_envs"];
  c.ppo.clip = o["clip"];
  c.ppo.entropy_coef = o["entropy_coef"];
  c.ppo.value_coef = o["value_coef"];
  c.ppo.epochs = o["epochs"];
  c.ppo.minibatch_episodes = o["minibatch_episodes"];
  c.ppo.lr = o["lr"];
  c.ppo.gamma = o["gamma"];
  c.ppo.lambda = o["lambda"];
  c.ppo.max_grad_norm = o["max_grad_norm"];
  c.reward_beta = o["reward_beta"];

  const json& pu = tree["push"];
  c.push.min_speed = pu["min_speed"];
  c.push.max_speed = pu["max_speed"];
  c.push.offset_fraction = pu["offset_fraction"];
  c.push.control_steps = pu["control_steps"];
  c.push.substeps = pu["substeps"];
  c.push.settle.step.dt = pu["dt"];
  c.push.settle.rest_speed = pu["rest_speed"];
  c.push.settle.rest_steps = pu["rest_steps"];
  c.push.settle.max_steps = pu["max_settle_steps"];

  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_hash(const ExperimentConfig& cfg) {
  // The worker count changes scheduling only, never results.
  json tree = to_tree(cfg);
  tree.erase("workers");
  const std::string canonical = tree.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ChainModel sample_chain(const ExperimentConfig& cfg, Rng& rng) {
  std::vector<double> lengths(cfg.links), masses(cfg.links);
  for (int k = 0; k < cfg.links; ++k) lengths[k] = uniform(rng, cfg.length.lo, cfg.length.hi);
  for (int k = 0; k < cfg.links; ++k) masses[k] = uniform(rng, cfg.mass.lo, cfg.mass.hi);
  const double mu = uniform(rng, cfg.friction.lo, cfg.friction.hi);
  return ChainModel::make(std::move(lengths), std::move(masses), mu, {-cfg.joint_limit, cfg.joint_limit});
}

}  // namespace massdist
