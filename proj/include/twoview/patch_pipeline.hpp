#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twoview/data_model.hpp"
#include "twoview/image.hpp"
#include "twoview/random.hpp"

namespace twoview {

struct Patch {
  std::string patch_id;
  Image pixels;
  ClassIndex label = 0;
  ViewKind view = ViewKind::surface;
  std::string source_image_id;
  std::string specimen_id;
  std::optional<std::string> augmented_from;  // empty for original crops
  Split split = Split::unassigned;
};

// Per-patch whitened tensor. values are H x W x 3, interleaved like Image.
struct NormalizedPatch {
  std::string patch_id;
  ClassIndex label = 0;
  ViewKind view = ViewKind::surface;
  std::string specimen_id;
  Split split = Split::unassigned;
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::array<double, 3> mean{};    // m_i
  std::array<double, 3> stddev{};  // sigma_i, population
  std::array<bool, 3> floored{};   // sigma_i fell below the floor

  bool any_floored() const { return floored[0] || floored[1] || floored[2]; }
};

struct AugmentationRanges {
  double rotation_deg = 25.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double translate_fraction = 0.1;
  double perspective_fraction = 0.1;
};

struct PipelineConfig {
  int patch_size = 256;
  int patches_per_image = 20;
  int target_per_class_per_view = 1000;
  double test_fraction = 0.20;
  double val_fraction = 0.10;  // carved from the training side; 0 disables
  int augmentation_variants = 7;
  double sigma_floor = 1e-6;
  std::uint64_t seed = 0;
  bool leak_free = true;

  // Foreground test: a crop is rejected when at least background_max_fraction
  // of its pixels lie within background_tolerance (max channel difference)
  // of background_color.
  std::array<std::uint8_t, 3> background_color{0, 0, 0};
  int background_tolerance = 12;
  double background_max_fraction = 0.8;

  AugmentationRanges augmentation;

  // Throws DataError on the first broken invariant.
  void validate() const;
};

nlohmann::ordered_json to_json(const PipelineConfig& config);
// Missing keys keep their defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});

struct Extraction {
  std::vector<Patch> patches;
  std::optional<std::string> warning;
};

/// Random crops of config.patch_size from one decoded image.
///
/// Origins are drawn uniformly without replacement among every origin whose
/// crop passes the foreground test; returns min(patches_per_image, #valid)
/// patches. The draw depends only on (seed, record.image_id).
/// Throws DataError when the image is smaller than the patch size.
Extraction extract_patches(const Image& image, const ImageRecord& record, ClassIndex label,
                           const PipelineConfig& config, std::uint64_t seed);

// True when the crop at (y0, x0) passes the foreground test.
bool crop_is_foreground(const Image& image, int y0, int x0, const PipelineConfig& config);

struct GroupDeficit {
  ClassIndex label = 0;
  ViewKind view = ViewKind::surface;
  std::size_t available = 0;
  std::size_t target = 0;
  std::size_t missing() const { return target - available; }
};

struct BalanceResult {
  std::vector<Patch> patches;  // input order preserved
  std::vector<GroupDeficit> deficits;
};

BalanceResult balance_classes(std::vector<Patch> patches, std::size_t target, std::uint64_t seed);

struct StratumReport {
  ClassIndex label = 0;
  ViewKind view = ViewKind::surface;
  std::size_t total = 0;
  std::size_t expected_test = 0;  // round(fraction * total)
  std::size_t actual_test = 0;
};

struct SplitResult {
  std::vector<Patch> train;
  std::vector<Patch> test;
  std::vector<StratumReport> strata;
};

/// Stratified (class, view) split. With leak_free, every specimen lands on
/// exactly one side and stratum sizes become approximate.
/// Throws DataError for a stratum with fewer than two patches.
SplitResult split_train_test(std::vector<Patch> patches, double test_fraction, std::uint64_t seed,
                             bool leak_free);

enum class TransformKind : std::uint8_t { hflip = 0, vflip = 1, affine = 2, perspective = 3 };

std::string_view to_string(TransformKind kind);

// Maps output pixel coordinates (x, y, 1) to source coordinates (row-major 3x3).
struct GeometricTransform {
  TransformKind kind = TransformKind::hflip;
  std::array<double, 9> output_to_source{1, 0, 0, 0, 1, 0, 0, 0, 1};
};

GeometricTransform draw_transform(int size, const AugmentationRanges& ranges, Rng& rng);

// Flips are exact pixel permutations; affine and perspective warps sample
// bilinearly with mirrored borders. Output has the input's size.
Image apply_transform(const Image& image, const GeometricTransform& transform);

std::vector<Patch> augment_patch(const Patch& patch, int variants, std::uint64_t seed,
                                 const AugmentationRanges& ranges = {});

/// Per-channel standardization: (I_i - m_i) / max(sigma_i, sigma_floor).
NormalizedPatch whiten_patch(const Patch& patch, double sigma_floor);

// ---------------------------------------------------------------------------
// Patch store: <dir>/<patch_id>.png plus <dir>/patches.jsonl.

struct PatchStore {
  std::vector<std::string> class_set;
  int patch_size = 0;
  std::vector<Patch> patches;
};

void write_patch_store(const std::filesystem::path& dir, const PatchStore& store);
PatchStore load_patch_store(const std::filesystem::path& dir);

struct PatchifySummary {
  std::size_t images = 0;
  std::size_t extracted = 0;
  std::size_t balanced = 0;
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::size_t augmented = 0;
  std::vector<GroupDeficit> deficits;
  std::vector<StratumReport> strata;
  std::vector<std::string> warnings;
};

/// Full dataset construction: crop every manifest image, balance, split,
/// carve validation, augment the training side, write the patch store and
/// run_metadata.json into out_dir. Record paths resolve against manifest_dir.
PatchifySummary run_patchify(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                             const PipelineConfig& config, const std::filesystem::path& out_dir);

}  // namespace twoview
