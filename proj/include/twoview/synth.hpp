#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "twoview/data_model.hpp"
#include "twoview/image.hpp"

namespace twoview {

enum class SynthMode : std::uint8_t { texture, joint_code };

std::string_view to_string(SynthMode mode);
std::optional<SynthMode> parse_synth_mode(std::string_view name);  // accepts joint-code and joint_code

struct SynthSpec {
  int classes = 6;
  int specimens_per_class = 30;
  int image_size = 128;
  SynthMode mode = SynthMode::texture;
  std::uint64_t seed = 0;

  void validate() const;  // throws DataError
};

// Class names: the stone codes for up to six classes, c<i> beyond.
std::vector<std::string> synth_class_names(int classes);

// Joint-code digit shown by one view: surface carries c / k, section c % k,
// with k = sqrt(classes).
int joint_code_symbol(int cls, ViewKind view, int classes);

/// One image of one specimen. Pure function of (spec, class, specimen, view).
Image render_synthetic(const SynthSpec& spec, int cls, int specimen, ViewKind view);

/// Writes <out>/images/*.png and <out>/manifest.jsonl (paths relative to
/// <out>) and returns the manifest. Two images per specimen, one per view.
DatasetManifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace twoview
