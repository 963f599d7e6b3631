#pragma once

// Small labelled patch sets built directly in whitened space.

#include <cmath>
#include <string>
#include <vector>

#include "twoview/patch_pipeline.hpp"

namespace testing {

// Class c: stripes at a class-specific frequency in channel c % 3, plus noise.
// Specimen k of class c yields one surface and one section patch.
inline std::vector<twoview::NormalizedPatch> toy_patches(int classes, int specimens, std::uint64_t seed,
                                                         double noise = 0.3, int size = 64) {
  twoview::Rng rng(seed);
  std::vector<twoview::NormalizedPatch> out;
  for (int c = 0; c < classes; ++c) {
    const double freq = 0.05 + 0.04 * c;
    for (int k = 0; k < specimens; ++k) {
      for (auto view : {twoview::ViewKind::surface, twoview::ViewKind::section}) {
        twoview::NormalizedPatch p;
        p.label = c;
        p.view = view;
        p.specimen_id = "c" + std::to_string(c) + "s" + std::to_string(k);
        p.patch_id = p.specimen_id + (view == twoview::ViewKind::surface ? "_surf" : "_sect");
        p.split = twoview::Split::train;
        p.height = p.width = size;
        p.values.resize(std::size_t(size) * size * 3);
        const double phase = rng.uniform(0, 6.283185307179586);
        for (int y = 0; y < size; ++y) {
          for (int x = 0; x < size; ++x) {
            const double t = view == twoview::ViewKind::surface ? y : x;
            for (int ch = 0; ch < 3; ++ch) {
              double v = noise * rng.normal();
              if (ch == c % 3) v += 1.4 * std::sin(6.283185307179586 * freq * t + phase);
              p.values[(std::size_t(y) * size + x) * 3 + ch] = float(v);
            }
          }
        }
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

}  // namespace testing
