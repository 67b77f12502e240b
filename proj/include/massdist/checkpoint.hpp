#pragma once

#include "massdist/neural.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace massdist::nn {

inline constexpr std::uint32_t kCheckpointSchema = 1;

struct Checkpoint {
  std::uint32_t schema_version = kCheckpointSchema;
  std::map<std::string, std::string> metadata;  // e.g. config_hash, kind
  std::vector<std::pair<std::string, Mat>> blocks;

  static Checkpoint from_params(const NetworkParams& p,
                                std::map<std::string, std::string> metadata = {});
  /// Copy block values into `p`; throws ShapeMismatch on any name/shape disagreement.
  void restore(NetworkParams& p) const;
};

// Layout: "MDCK", u32 schema, u32 #meta, (str key, str value)*, u32 #blocks,
// (str name, u64 rows, u64 cols, rows*cols f64 column-major)*. All integers
// and floats little-endian; strings are u32 length + bytes.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace massdist::nn
