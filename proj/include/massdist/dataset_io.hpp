#pragma once

// Line-delimited JSON episode datasets and CSV metrics tables.

#include "massdist/interaction.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace massdist {

inline constexpr int kDatasetSchema = 1;

struct PredictionDataset {
  std::vector<EpisodeTrajectory> episodes;
  std::string split;       // train / validation / test
  std::string provenance;  // action source that generated it
  std::string config_hash;
};

std::string episode_to_json(const EpisodeTrajectory& ep, const PredictionDataset& meta);
EpisodeTrajectory episode_from_json(const std::string& line);

/// One record per line; every record carries split, provenance and config hash.
void save_dataset(const std::filesystem::path& path, const PredictionDataset& ds);
/// Throws ConfigMismatch when `expected_hash` is non-empty and a record differs.
PredictionDataset load_dataset(const std::filesystem::path& path, const std::string& expected_hash = "");

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
};

/// Shortest text that reads back to the same double.
std::string fmt_double(double v);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
/// Write through a temporary file and rename, so readers never see partial output.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace massdist
