#include "massdist/dataset_io.hpp"

#include "massdist/errors.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace massdist {

using nlohmann::json;

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string episode_to_json(const EpisodeTrajectory& ep, const PredictionDataset& meta) {
  json j;
  j["schema_version"] = kDatasetSchema;
  j["config_hash"] = meta.config_hash;
  j["split"] = meta.split;
  j["provenance"] = meta.provenance;
  j["seed"] = ep.seed;
  j["n"] = ep.links();
  j["mu"] = ep.mu;
  j["lengths"] = ep.lengths;
  j["m_true"] = vec_json(ep.m_true);
  json qs = json::array();
  for (const auto& q : ep.q_seq) qs.push_back(vec_json(q));
  j["q_seq"] = std::move(qs);
  json as = json::array();
  for (const auto& a : ep.a_seq) as.push_back({a.a1, a.a2});
  j["a_seq"] = std::move(as);
  j["settle_steps"] = ep.settle_steps;
  return j.dump();
}

EpisodeTrajectory episode_from_json(const std::string& line) {
  const json j = json::parse(line);
  if (j.at("schema_version").get<int>() != kDatasetSchema) {
    throw std::runtime_error("dataset: unsupported schema version");
  }
  EpisodeTrajectory ep;
  ep.seed = j.at("seed").get<std::uint64_t>();
  ep.mu = j.at("mu").get<double>();
  ep.lengths = j.at("lengths").get<std::vector<double>>();
  ep.m_true = vec_from(j.at("m_true"));
  for (const auto& q : j.at("q_seq")) ep.q_seq.push_back(vec_from(q));
  for (const auto& a : j.at("a_seq")) ep.a_seq.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
  ep.settle_steps = j.at("settle_steps").get<std::vector<int>>();
  if (ep.links() != j.at("n").get<int>() || ep.q_seq.size() != ep.a_seq.size() + 1) {
    throw ShapeMismatch("dataset: malformed episode record");
  }
  return ep;
}

void save_dataset(const std::filesystem::path& path, const PredictionDataset& ds) {
  std::string text;
  for (const auto& ep : ds.episodes) {
    text += episode_to_json(ep, ds);
    text += '\n';
  }
  write_text_atomic(path, text);
}

PredictionDataset load_dataset(const std::filesystem::path& path, const std::string& expected_hash) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset " + path.string());
  PredictionDataset ds;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const std::string hash = j.at("config_hash");
    if (!expected_hash.empty() && hash != expected_hash) {
      throw ConfigMismatch("dataset " + path.string() + " was produced by config " + hash);
    }
    if (first) {
      ds.config_hash = hash;
      ds.split = j.at("split");
      ds.provenance = j.at("provenance");
      first = false;
    }
    ds.episodes.push_back(episode_from_json(line));
  }
  return ds;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ostringstream out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  write_text_atomic(path, out.str());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace massdist
