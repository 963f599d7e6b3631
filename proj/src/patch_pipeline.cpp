#include "twoview/patch_pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

#include "twoview/digest.hpp"
#include "twoview/error.hpp"

namespace twoview {

namespace {

std::string group_tag(ClassIndex label, ViewKind view) {
  return std::to_string(label) + ":" + std::string(to_string(view));
}

std::string indexed_id(const std::string& base, const char* tag, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03zu", tag, index);
  return base + buf;
}

}  // namespace

void PipelineConfig::validate() const {
  if (patch_size < 8) throw DataError("patch_size must be >= 8");
  if (patches_per_image < 1) throw DataError("patches_per_image must be >= 1");
  if (target_per_class_per_view < 1) throw DataError("target_per_class_per_view must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("test_fraction must be in (0, 1)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw DataError("val_fraction must be in [0, 1)");
  if (augmentation_variants < 0) throw DataError("augmentation_variants must be >= 0");
  if (!(sigma_floor > 0.0)) throw DataError("sigma_floor must be positive");
  if (background_tolerance < 0) throw DataError("background_tolerance must be >= 0");
  if (!(background_max_fraction > 0.0 && background_max_fraction <= 1.0)) {
    throw DataError("background_max_fraction must be in (0, 1]");
  }
  const auto& a = augmentation;
  if (a.rotation_deg < 0 || a.scale_min <= 0 || a.scale_max < a.scale_min || a.translate_fraction < 0 ||
      a.perspective_fraction < 0 || a.perspective_fraction >= 0.5) {
    throw DataError("augmentation ranges are inconsistent");
  }
}

nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["patch_size"] = c.patch_size;
  j["patches_per_image"] = c.patches_per_image;
  j["target_per_class_per_view"] = c.target_per_class_per_view;
  j["test_fraction"] = c.test_fraction;
  j["val_fraction"] = c.val_fraction;
  j["augmentation_variants"] = c.augmentation_variants;
  j["sigma_floor"] = c.sigma_floor;
  j["seed"] = c.seed;
  j["leak_free"] = c.leak_free;
  j["background_color"] = c.background_color;
  j["background_tolerance"] = c.background_tolerance;
  j["background_max_fraction"] = c.background_max_fraction;
  j["rotation_deg"] = c.augmentation.rotation_deg;
  j["scale_min"] = c.augmentation.scale_min;
  j["scale_max"] = c.augmentation.scale_max;
  j["translate_fraction"] = c.augmentation.translate_fraction;
  j["perspective_fraction"] = c.augmentation.perspective_fraction;
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("patch_size", c.patch_size);
  get("patches_per_image", c.patches_per_image);
  get("target_per_class_per_view", c.target_per_class_per_view);
  get("test_fraction", c.test_fraction);
  get("val_fraction", c.val_fraction);
  get("augmentation_variants", c.augmentation_variants);
  get("sigma_floor", c.sigma_floor);
  get("seed", c.seed);
  get("leak_free", c.leak_free);
  get("background_color", c.background_color);
  get("background_tolerance", c.background_tolerance);
  get("background_max_fraction", c.background_max_fraction);
  get("rotation_deg", c.augmentation.rotation_deg);
  get("scale_min", c.augmentation.scale_min);
  get("scale_max", c.augmentation.scale_max);
  get("translate_fraction", c.augmentation.translate_fraction);
  get("perspective_fraction", c.augmentation.perspective_fraction);
  return c;
}

// ---------------------------------------------------------------------------
// Extraction

namespace {

// Summed-area table of background pixels, (H+1) x (W+1).
std::vector<std::uint32_t> background_integral(const Image& image, const PipelineConfig& config) {
  const int h = image.height;
  const int w = image.width;
  std::vector<std::uint32_t> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0);
  for (int y = 0; y < h; ++y) {
    std::uint32_t row = 0;
    for (int x = 0; x < w; ++x) {
      bool bg = true;
      for (int c = 0; c < 3; ++c) {
        if (std::abs(int(image.at(y, x, c)) - int(config.background_color[c])) > config.background_tolerance) {
          bg = false;
          break;
        }
      }
      row += bg ? 1 : 0;
      sat[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = sat[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
    }
  }
  return sat;
}

std::uint32_t window_sum(const std::vector<std::uint32_t>& sat, int stride, int y0, int x0, int size) {
  const auto at = [&](int y, int x) { return sat[static_cast<std::size_t>(y) * stride + x]; };
  return at(y0 + size, x0 + size) - at(y0, x0 + size) - at(y0 + size, x0) + at(y0, x0);
}

bool window_is_foreground(std::uint32_t background_pixels, int size, double max_fraction) {
  return static_cast<double>(background_pixels) < max_fraction * static_cast<double>(size) * size;
}

}  // namespace

bool crop_is_foreground(const Image& image, int y0, int x0, const PipelineConfig& config) {
  std::uint32_t bg = 0;
  const int s = config.patch_size;
  for (int y = y0; y < y0 + s; ++y) {
    for (int x = x0; x < x0 + s; ++x) {
      bool is_bg = true;
      for (int c = 0; c < 3; ++c) {
        if (std::abs(int(image.at(y, x, c)) - int(config.background_color[c])) > config.background_tolerance) {
          is_bg = false;
        }
      }
      bg += is_bg ? 1 : 0;
    }
  }
  return window_is_foreground(bg, s, config.background_max_fraction);
}

Extraction extract_patches(const Image& image, const ImageRecord& record, ClassIndex label,
                           const PipelineConfig& config, std::uint64_t seed) {
  const int size = config.patch_size;
  if (image.height < size || image.width < size) {
    throw DataError("image '" + record.image_id + "' (" + std::to_string(image.width) + "x" +
                    std::to_string(image.height) + ") is smaller than the patch size " + std::to_string(size));
  }
  const auto sat = background_integral(image, config);
  const int stride = image.width + 1;
  std::vector<std::pair<int, int>> origins;
  for (int y = 0; y + size <= image.height; ++y) {
    for (int x = 0; x + size <= image.width; ++x) {
      if (window_is_foreground(window_sum(sat, stride, y, x, size), size, config.background_max_fraction)) {
        origins.emplace_back(y, x);
      }
    }
  }

  Extraction result;
  if (origins.empty()) {
    result.warning = "image '" + record.image_id + "' has no crop passing the foreground test";
    return result;
  }
  Rng rng(derive_seed(seed, "extract:" + record.image_id));
  const auto picks = rng.sample_without_replacement(origins.size(), static_cast<std::size_t>(config.patches_per_image));
  result.patches.reserve(picks.size());
  for (std::size_t k = 0; k < picks.size(); ++k) {
    const auto [y, x] = origins[picks[k]];
    Patch p;
    p.patch_id = indexed_id(record.image_id, "_p", k);
    p.pixels = image.crop(y, x, size, size);
    p.label = label;
    p.view = record.view;
    p.source_image_id = record.image_id;
    p.specimen_id = record.specimen_id;
    p.split = record.split;
    result.patches.push_back(std::move(p));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Balancing and splitting

BalanceResult balance_classes(std::vector<Patch> patches, std::size_t target, std::uint64_t seed) {
  std::map<std::pair<ClassIndex, ViewKind>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < patches.size(); ++i) groups[{patches[i].label, patches[i].view}].push_back(i);

  BalanceResult result;
  std::vector<char> keep(patches.size(), 0);
  for (const auto& [key, members] : groups) {
    if (members.size() < target) {
      result.deficits.push_back({key.first, key.second, members.size(), target});
      for (auto i : members) keep[i] = 1;
      continue;
    }
    Rng rng(derive_seed(seed, "balance:" + group_tag(key.first, key.second)));
    for (auto pick : rng.sample_without_replacement(members.size(), target)) keep[members[pick]] = 1;
  }
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (keep[i]) result.patches.push_back(std::move(patches[i]));
  }
  return result;
}

namespace {

std::size_t rounded_share(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace

SplitResult split_train_test(std::vector<Patch> patches, double test_fraction, std::uint64_t seed,
                             bool leak_free) {
  if (patches.empty()) throw DataError("cannot split an empty patch set");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("test_fraction must be in (0, 1)");

  std::map<std::pair<ClassIndex, ViewKind>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < patches.size(); ++i) strata[{patches[i].label, patches[i].view}].push_back(i);
  for (const auto& [key, members] : strata) {
    if (members.size() < 2) {
      throw DataError("stratum (class " + std::to_string(key.first) + ", view " + std::string(to_string(key.second)) +
                      ") has " + std::to_string(members.size()) + " patch(es); at least 2 are needed to split");
    }
  }

  std::vector<char> is_test(patches.size(), 0);
  if (!leak_free) {
    for (const auto& [key, members] : strata) {
      std::vector<std::size_t> order = members;
      Rng rng(derive_seed(seed, "split:" + group_tag(key.first, key.second)));
      rng.shuffle(std::span(order));
      const std::size_t n_test = rounded_share(test_fraction, members.size());
      for (std::size_t k = 0; k < n_test; ++k) is_test[order[k]] = 1;
    }
  } else {
    // Greedy specimen assignment per class toward the class-level target.
    std::map<ClassIndex, std::map<std::string, std::size_t>> class_specimen_counts;
    std::map<ClassIndex, std::size_t> class_target;
    for (const auto& [key, members] : strata) class_target[key.first] += rounded_share(test_fraction, members.size());
    for (const auto& p : patches) ++class_specimen_counts[p.label][p.specimen_id];

    std::unordered_map<std::string, bool> specimen_in_test;
    for (auto& [label, counts] : class_specimen_counts) {
      std::vector<std::string> specimens;
      std::size_t current = 0;
      for (const auto& [specimen, n] : counts) {
        const auto it = specimen_in_test.find(specimen);
        if (it == specimen_in_test.end()) {
          specimens.push_back(specimen);
        } else if (it->second) {
          current += n;
        }
      }
      Rng rng(derive_seed(seed, "split-specimens:" + std::to_string(label)));
      rng.shuffle(std::span(specimens));
      const auto target = static_cast<long long>(class_target[label]);
      for (const auto& specimen : specimens) {
        const auto n = static_cast<long long>(counts[specimen]);
        const auto cur = static_cast<long long>(current);
        const bool take = std::llabs(cur + n - target) < std::llabs(cur - target);
        specimen_in_test[specimen] = take;
        if (take) current += counts[specimen];
      }
    }
    for (std::size_t i = 0; i < patches.size(); ++i) is_test[i] = specimen_in_test.at(patches[i].specimen_id) ? 1 : 0;
  }

  SplitResult result;
  for (const auto& [key, members] : strata) {
    StratumReport r{key.first, key.second, members.size(), rounded_share(test_fraction, members.size()), 0};
    for (auto i : members) r.actual_test += is_test[i];
    result.strata.push_back(r);
  }
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (is_test[i]) {
      patches[i].split = Split::test;
      result.test.push_back(std::move(patches[i]));
    } else {
      patches[i].split = Split::train;
      result.train.push_back(std::move(patches[i]));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Augmentation

std::string_view to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::hflip: return "hflip";
    case TransformKind::vflip: return "vflip";
    case TransformKind::affine: return "affine";
    case TransformKind::perspective: return "perspective";
  }
  return "unknown";
}

namespace {

using Mat3 = Eigen::Matrix3d;

std::array<double, 9> to_array(const Mat3& m) {
  std::array<double, 9> a{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a[static_cast<std::size_t>(r * 3 + c)] = m(r, c);
  }
  return a;
}

// Homography H with H * dst_i ~ src_i for four point pairs.
Mat3 homography_from_points(const std::array<Eigen::Vector2d, 4>& dst, const std::array<Eigen::Vector2d, 4>& src) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = dst[i].x(), y = dst[i].y(), u = src[i].x(), v = src[i].y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  Mat3 m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return m;
}

int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

GeometricTransform draw_transform(int size, const AugmentationRanges& ranges, Rng& rng) {
  GeometricTransform t;
  t.kind = static_cast<TransformKind>(rng.uniform_index(4));
  const double s = size;
  // Pixel centers span [0, s-1]; c is the geometric center.
  const double c = (s - 1.0) / 2.0;
  switch (t.kind) {
    case TransformKind::hflip: {
      Mat3 m;
      m << -1, 0, s - 1, 0, 1, 0, 0, 0, 1;
      t.output_to_source = to_array(m);
      break;
    }
    case TransformKind::vflip: {
      Mat3 m;
      m << 1, 0, 0, 0, -1, s - 1, 0, 0, 1;
      t.output_to_source = to_array(m);
      break;
    }
    case TransformKind::affine: {
      const double theta = rng.uniform(-ranges.rotation_deg, ranges.rotation_deg) * 3.141592653589793 / 180.0;
      const double scale = rng.uniform(ranges.scale_min, ranges.scale_max);
      const double tx = rng.uniform(-ranges.translate_fraction, ranges.translate_fraction) * s;
      const double ty = rng.uniform(-ranges.translate_fraction, ranges.translate_fraction) * s;
      // forward: dst = c + t + scale * R(theta) (src - c); invert it.
      Mat3 to_center, rot_inv, from_center;
      to_center << 1, 0, -(c + tx), 0, 1, -(c + ty), 0, 0, 1;
      const double ct = std::cos(theta), st = std::sin(theta);
      rot_inv << ct / scale, st / scale, 0, -st / scale, ct / scale, 0, 0, 0, 1;
      from_center << 1, 0, c, 0, 1, c, 0, 0, 1;
      t.output_to_source = to_array(from_center * rot_inv * to_center);
      break;
    }
    case TransformKind::perspective: {
      const double j = ranges.perspective_fraction * s;
      const std::array<Eigen::Vector2d, 4> src = {Eigen::Vector2d(0, 0), Eigen::Vector2d(s - 1, 0),
                                                  Eigen::Vector2d(s - 1, s - 1), Eigen::Vector2d(0, s - 1)};
      std::array<Eigen::Vector2d, 4> dst;
      for (int i = 0; i < 4; ++i) {
        const double dx = rng.uniform(-j, j);
        const double dy = rng.uniform(-j, j);
        dst[i] = src[i] + Eigen::Vector2d(dx, dy);
      }
      t.output_to_source = to_array(homography_from_points(dst, src));
      break;
    }
  }
  return t;
}

Image apply_transform(const Image& image, const GeometricTransform& transform) {
  const int h = image.height;
  const int w = image.width;
  Image out(h, w);
  if (transform.kind == TransformKind::hflip || transform.kind == TransformKind::vflip) {
    const bool horizontal = transform.kind == TransformKind::hflip;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int sy = horizontal ? y : h - 1 - y;
        const int sx = horizontal ? w - 1 - x : x;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
      }
    }
    return out;
  }
  const auto& m = transform.output_to_source;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double zw = m[6] * x + m[7] * y + m[8];
      const double sx = (m[0] * x + m[1] * y + m[2]) / zw;
      const double sy = (m[3] * x + m[4] * y + m[5]) / zw;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const int xa = mirror(x0, w), xb = mirror(x0 + 1, w);
      const int ya = mirror(y0, h), yb = mirror(y0 + 1, h);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ay) * ((1 - ax) * image.at(ya, xa, c) + ax * image.at(ya, xb, c)) +
                         ay * ((1 - ax) * image.at(yb, xa, c) + ax * image.at(yb, xb, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

std::vector<Patch> augment_patch(const Patch& patch, int variants, std::uint64_t seed,
                                 const AugmentationRanges& ranges) {
  std::vector<Patch> out;
  if (variants <= 0) return out;
  out.reserve(static_cast<std::size_t>(variants));
  Rng rng(derive_seed(seed, "augment:" + patch.patch_id));
  for (int v = 0; v < variants; ++v) {
    const auto transform = draw_transform(patch.pixels.height, ranges, rng);
    Patch aug;
    aug.patch_id = indexed_id(patch.patch_id, "_a", static_cast<std::size_t>(v));
    aug.pixels = apply_transform(patch.pixels, transform);
    aug.label = patch.label;
    aug.view = patch.view;
    aug.source_image_id = patch.source_image_id;
    aug.specimen_id = patch.specimen_id;
    aug.augmented_from = patch.patch_id;
    aug.split = patch.split;
    out.push_back(std::move(aug));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whitening

NormalizedPatch whiten_patch(const Patch& patch, double sigma_floor) {
  NormalizedPatch out;
  out.patch_id = patch.patch_id;
  out.label = patch.label;
  out.view = patch.view;
  out.specimen_id = patch.specimen_id;
  out.split = patch.split;
  out.height = patch.pixels.height;
  out.width = patch.pixels.width;
  const auto& px = patch.pixels.pixels;
  const std::size_t n = px.size() / 3;
  out.values.resize(px.size());
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += px[i * 3 + c];
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = px[i * 3 + c] - mean;
      sq += d * d;
    }
    const double sigma = std::sqrt(sq / static_cast<double>(n));
    out.mean[c] = mean;
    out.stddev[c] = sigma;
    out.floored[c] = sigma < sigma_floor;
    const double denom = std::max(sigma, sigma_floor);
    for (std::size_t i = 0; i < n; ++i) out.values[i * 3 + c] = static_cast<float>((px[i * 3 + c] - mean) / denom);
  }
  return out;
}

}  // namespace twoview
