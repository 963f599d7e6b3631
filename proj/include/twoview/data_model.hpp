#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace twoview {

// The six-class reference taxonomy. Integer codes are stable serialization values.
enum class StoneClass : std::uint8_t { WW = 0, WD = 1, AU = 2, STR = 3, BRU = 4, CYS = 5 };

inline constexpr std::array<StoneClass, 6> kAllStoneClasses = {
    StoneClass::WW, StoneClass::WD, StoneClass::AU, StoneClass::STR, StoneClass::BRU, StoneClass::CYS};

std::string_view to_string(StoneClass c);
std::optional<StoneClass> parse_stone_class(std::string_view name);

// Default class set: the six stone classes in code order.
std::vector<std::string> default_class_set();

enum class ViewKind : std::uint8_t { surface = 0, section = 1 };

std::string_view to_string(ViewKind v);
std::optional<ViewKind> parse_view(std::string_view name);

enum class Split : std::uint8_t { unassigned = 0, train = 1, val = 2, test = 3 };

std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view name);

// Index into a manifest's class_set.
using ClassIndex = std::int32_t;

struct ImageRecord {
  std::string image_id;
  std::string path;
  std::string stone_class;
  ViewKind view = ViewKind::surface;
  std::string specimen_id;
  Split split = Split::unassigned;

  bool operator==(const ImageRecord&) const = default;
};

inline constexpr int kManifestVersion = 1;

struct DatasetManifest {
  int version = kManifestVersion;
  std::vector<std::string> class_set;
  std::vector<ImageRecord> records;

  // Position of `name` in class_set, if present.
  std::optional<ClassIndex> class_index(std::string_view name) const;

  bool operator==(const DatasetManifest&) const = default;
};

/// Parse a JSON-lines manifest. The first line is a header object
/// {"version": 1, "classes": [...]}, every following non-blank line is one
/// ImageRecord. Syntax only; use validate_manifest for invariants.
/// Throws DataError with the offending line number.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::string_view text);

std::string serialize_manifest(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct ManifestViolation {
  std::size_t record_index = 0;  // 0-based position in records
  std::string image_id;
  std::string message;
};

struct ValidationOptions {
  bool check_files = false;
  std::filesystem::path base_dir;  // relative record paths resolve against this
};

std::vector<ManifestViolation> validate_manifest(const DatasetManifest& manifest,
                                                 const ValidationOptions& options = {});

}  // namespace twoview
