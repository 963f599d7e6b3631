#include "twoview/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "twoview/digest.hpp"
#include "twoview/error.hpp"
#include "twoview/random.hpp"

namespace twoview {

std::string_view to_string(SynthMode mode) { return mode == SynthMode::texture ? "texture" : "joint-code"; }

std::optional<SynthMode> parse_synth_mode(std::string_view name) {
  if (name == "texture") return SynthMode::texture;
  if (name == "joint-code" || name == "joint_code") return SynthMode::joint_code;
  return std::nullopt;
}

namespace {

int code_base(int classes) {
  const int k = int(std::lround(std::sqrt(double(classes))));
  return k * k == classes ? k : 0;
}

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = int(hh);
  const double f = hh - sector;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

std::uint8_t clamp_byte(double v) { return std::uint8_t(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

void SynthSpec::validate() const {
  if (classes < 1) throw DataError("synth: classes must be >= 1");
  if (specimens_per_class < 1) throw DataError("synth: specimens must be >= 1");
  if (image_size < 16) throw DataError("synth: image_size must be >= 16");
  if (mode == SynthMode::joint_code && (classes < 4 || code_base(classes) == 0)) {
    throw DataError("synth: joint-code mode needs a square class count >= 4, got " + std::to_string(classes));
  }
}

std::vector<std::string> synth_class_names(int classes) {
  std::vector<std::string> names;
  for (int c = 0; c < classes; ++c) {
    names.push_back(c < 6 ? std::string(to_string(kAllStoneClasses[std::size_t(c)])) : "c" + std::to_string(c));
  }
  return names;
}

int joint_code_symbol(int cls, ViewKind view, int classes) {
  const int k = code_base(classes);
  if (k == 0) throw DataError("joint code needs a square class count");
  return view == ViewKind::surface ? cls / k : cls % k;
}

Image render_synthetic(const SynthSpec& spec, int cls, int specimen, ViewKind view) {
  const std::string key = std::to_string(cls) + ":" + std::to_string(specimen);
  Rng specimen_rng(derive_seed(spec.seed, "synth.specimen:" + key));
  const double freq_jitter = specimen_rng.uniform(0.95, 1.05);
  const double angle_jitter = specimen_rng.uniform(-5.0, 5.0) * std::numbers::pi / 180.0;
  Rng rng(derive_seed(spec.seed, "synth.image:" + key + ":" + std::string(to_string(view))));

  double freq = 0.0;  // cycles per pixel
  Rgb color{};
  if (spec.mode == SynthMode::joint_code) {
    const int k = code_base(spec.classes);
    const int digit = joint_code_symbol(cls, view, spec.classes);
    freq = 0.06 + 0.10 * double(digit) / double(k - 1);
    color = hsv(0.08, 0.55, 0.85);
  } else {
    freq = spec.classes == 1 ? 0.1 : 0.05 + 0.15 * double(cls) / double(spec.classes - 1);
    color = hsv(double(cls) / double(spec.classes), 0.6, 0.85);
  }
  freq *= freq_jitter;
  // Surface stripes vary along y, section stripes along x.
  const double angle = (view == ViewKind::surface ? 0.0 : std::numbers::pi / 2) + angle_jitter +
                       rng.uniform(-2.0, 2.0) * std::numbers::pi / 180.0;
  const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
  const double n = spec.image_size;
  const double cx = n / 2 + rng.uniform(-0.03, 0.03) * n;
  const double cy = n / 2 + rng.uniform(-0.03, 0.03) * n;
  const double radius = n * rng.uniform(0.42, 0.47);
  const double dx = std::sin(angle), dy = std::cos(angle);
  const double two_pi_f = 2 * std::numbers::pi * freq;

  Image img(spec.image_size, spec.image_size);
  for (int y = 0; y < spec.image_size; ++y) {
    for (int x = 0; x < spec.image_size; ++x) {
      const double ry = y + 0.5 - cy, rx = x + 0.5 - cx;
      if (rx * rx + ry * ry > radius * radius) continue;
      const double wave = std::sin(two_pi_f * (rx * dx + ry * dy) + phase);
      const double intensity = 255.0 * (0.6 + 0.3 * wave);
      const double noise[3] = {12.0 * rng.normal(), 12.0 * rng.normal(), 12.0 * rng.normal()};
      img.at(y, x, 0) = clamp_byte(color.r * intensity + noise[0]);
      img.at(y, x, 1) = clamp_byte(color.g * intensity + noise[1]);
      img.at(y, x, 2) = clamp_byte(color.b * intensity + noise[2]);
    }
  }
  return img;
}

DatasetManifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.class_set = synth_class_names(spec.classes);
  for (int c = 0; c < spec.classes; ++c) {
    for (int s = 0; s < spec.specimens_per_class; ++s) {
      char specimen[64];
      std::snprintf(specimen, sizeof specimen, "%s_s%03d", manifest.class_set[std::size_t(c)].c_str(), s);
      for (ViewKind view : {ViewKind::surface, ViewKind::section}) {
        ImageRecord rec;
        rec.image_id = std::string(specimen) + "_" + std::string(to_string(view));
        rec.path = "images/" + rec.image_id + ".png";
        rec.stone_class = manifest.class_set[std::size_t(c)];
        rec.view = view;
        rec.specimen_id = specimen;
        manifest.records.push_back(rec);
      }
    }
  }
  std::vector<std::string> failures(manifest.records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    try {
      const int cls = int(i / (2 * std::size_t(spec.specimens_per_class)));
      const int specimen = int((i / 2) % std::size_t(spec.specimens_per_class));
      write_png(out_dir / rec.path, render_synthetic(spec, cls, specimen, rec.view));
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  }
  for (const auto& f : failures) {
    if (!f.empty()) throw DataError(f);
  }
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace twoview
