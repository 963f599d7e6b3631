#pragma once

// Checkpoint archive:
//   8 bytes   magic "TVCKPT01"
//   8 bytes   header length N, little-endian
//   N bytes   JSON header (config, class set, format version, per-tensor
//             name/shape/offset/nbytes/sha256)
//   payload   raw little-endian tensor data in header order

#include <filesystem>
#include <json.hpp>
#include <string>
#include <variant>
#include <vector>

#include "twoview/nets.hpp"

namespace twoview {

inline constexpr int kCheckpointVersion = 1;

using AnyModel = std::variant<SingleViewModel<float>, SingleViewModel<double>, MultiViewModel<float>,
                              MultiViewModel<double>>;

struct Checkpoint {
  std::vector<std::string> class_set;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();  // carried verbatim
  AnyModel model;

  bool is_multiview() const { return model.index() >= 2; }
  bool is_double() const { return model.index() % 2 == 1; }
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws DataError on a bad magic, unknown version, digest mismatch or a
/// tensor that disagrees with the stored configuration.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace twoview
