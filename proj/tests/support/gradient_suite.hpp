#pragma once

// Finite-difference checks for every layer type and both fusions over random
// shapes. Shared by the nets unit tests and the acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "twoview/nets.hpp"

namespace testing {

struct FamilyResult {
  std::string family;
  int shapes = 0;
  double worst = 0.0;
  std::string where;
};

namespace detail {

inline int pick(twoview::Rng& rng, int lo, int hi) { return lo + int(rng.uniform_index(std::size_t(hi - lo + 1))); }

// Values bounded away from zero so no relu kink sits within the step.
inline twoview::Tensor<double> away_from_zero(std::vector<std::size_t> shape, twoview::Rng& rng) {
  twoview::Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = (rng.uniform01() < 0.5 ? -1 : 1) * rng.uniform(0.05, 1.0);
  return t;
}

// Distinct values spaced 0.01 apart so every pooling window has a clear winner.
inline twoview::Tensor<double> distinct(std::vector<std::size_t> shape, twoview::Rng& rng) {
  twoview::Tensor<double> t(std::move(shape));
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span(order));
  for (std::size_t i = 0; i < order.size(); ++i) t[order[i]] = 0.01 * double(i) - 0.005 * double(order.size());
  return t;
}

inline void record(FamilyResult& f, const GradReport& r, const std::string& shape) {
  ++f.shapes;
  if (r.worst >= f.worst) {
    f.worst = r.worst;
    f.where = shape + " " + r.where;
  }
}

}  // namespace detail

inline std::vector<FamilyResult> run_gradient_suite(int shapes_per_family, std::uint64_t seed) {
  using namespace twoview;
  using detail::pick;
  Rng rng(seed);
  std::vector<FamilyResult> results;

  auto layer_family = [&](const std::string& name,
                          const std::function<std::pair<Sequential<double>, Tensor<double>>()>& make,
                          ForwardMode mode = {}) {
    FamilyResult f{name};
    for (int s = 0; s < shapes_per_family; ++s) {
      auto [net, x] = make();
      net.initialize(rng.next());
      for (auto& p : net.params()) {
        for (auto& v : p.value.values()) v = rng.uniform(-0.5, 0.5);  // non-zero biases too
      }
      const auto report = check_sequential(net, x, rng, mode);
      detail::record(f, report, x.shape_string());
    }
    results.push_back(f);
  };

  layer_family("conv", [&] {
    const int k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, k - 1);
    const int h = pick(rng, k, k + 5), w = pick(rng, k, k + 5), c = pick(rng, 1, 3), b = pick(rng, 1, 2);
    Sequential<double> net({h, w, c, false}, {LayerSpec::conv(pick(rng, 1, 4), k, stride, pad)});
    return std::pair{net, random_tensor({std::size_t(b), std::size_t(h), std::size_t(w), std::size_t(c)}, rng)};
  });
  layer_family("dense", [&] {
    const int in = pick(rng, 1, 12), b = pick(rng, 1, 3);
    Sequential<double> net({1, 1, in, true}, {LayerSpec::dense(pick(rng, 1, 8))});
    return std::pair{net, random_tensor({std::size_t(b), std::size_t(in)}, rng)};
  });
  layer_family("relu", [&] {
    const int h = pick(rng, 1, 5), w = pick(rng, 1, 5), c = pick(rng, 1, 4);
    Sequential<double> net({h, w, c, false}, {LayerSpec::relu()});
    return std::pair{net, detail::away_from_zero({2, std::size_t(h), std::size_t(w), std::size_t(c)}, rng)};
  });
  layer_family("maxpool", [&] {
    const int k = pick(rng, 2, 3), stride = pick(rng, 1, 2);
    const int h = pick(rng, k, k + 5), w = pick(rng, k, k + 5), c = pick(rng, 1, 3);
    Sequential<double> net({h, w, c, false}, {LayerSpec::maxpool(k, stride)});
    return std::pair{net, detail::distinct({2, std::size_t(h), std::size_t(w), std::size_t(c)}, rng)};
  });
  layer_family("flatten", [&] {
    const int h = pick(rng, 1, 4), w = pick(rng, 1, 4), c = pick(rng, 1, 3);
    Sequential<double> net({h, w, c, false}, {LayerSpec::flatten(), LayerSpec::dense(pick(rng, 1, 5))});
    return std::pair{net, random_tensor({2, std::size_t(h), std::size_t(w), std::size_t(c)}, rng)};
  });
  layer_family(
      "dropout",
      [&] {
        const int in = pick(rng, 2, 20);
        Sequential<double> net({1, 1, in, true}, {LayerSpec::dense(in), LayerSpec::dropout(0.3)});
        return std::pair{net, random_tensor({3, std::size_t(in)}, rng)};
      },
      ForwardMode{true, 1234});
  layer_family("conv-block", [&] {
    const int h = pick(rng, 4, 8), w = pick(rng, 4, 8), c = pick(rng, 1, 3);
    Sequential<double> net({h, w, c, false}, {LayerSpec::conv(pick(rng, 2, 4), 3, 1, 1), LayerSpec::maxpool(2, 2),
                                              LayerSpec::flatten(), LayerSpec::dense(pick(rng, 2, 5))});
    return std::pair{net, random_tensor({2, std::size_t(h), std::size_t(w), std::size_t(c)}, rng)};
  });

  for (auto strategy : {FusionStrategy::concat, FusionStrategy::maxpool}) {
    FamilyResult f{strategy == FusionStrategy::concat ? "fusion-concat" : "fusion-maxpool"};
    for (int s = 0; s < shapes_per_family; ++s) {
      const std::size_t b = std::size_t(pick(rng, 1, 4)), d = std::size_t(pick(rng, 1, 10));
      auto a = random_tensor({b, d}, rng), c = random_tensor({b, d}, rng);
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - c[i]) < 0.01) c[i] += 0.05;
      }
      const auto r = random_tensor(fuse(a, c, strategy).shape(), rng);
      const auto [ga, gc] = fuse_backward(a, c, r, strategy);
      auto loss = [&] { return probe(fuse(a, c, strategy), r); };
      GradReport report;
      for (std::size_t i = 0; i < a.size(); ++i) {
        report.note(relative_error(ga[i], central_difference(loss, a[i])), "a[" + std::to_string(i) + "]");
        report.note(relative_error(gc[i], central_difference(loss, c[i])), "b[" + std::to_string(i) + "]");
      }
      detail::record(f, report, a.shape_string());
    }
    results.push_back(f);
  }

  {
    FamilyResult f{"softmax-cross-entropy"};
    for (int s = 0; s < shapes_per_family; ++s) {
      const std::size_t b = std::size_t(pick(rng, 1, 5)), classes = std::size_t(pick(rng, 2, 8));
      auto logits = random_tensor({b, classes}, rng, -3, 3);
      std::vector<std::int32_t> labels;
      for (std::size_t i = 0; i < b; ++i) labels.push_back(std::int32_t(rng.uniform_index(classes)));
      Tensor<double> grad;
      cross_entropy(logits, labels, &grad);
      auto loss = [&] { return cross_entropy<double>(logits, labels, nullptr); };
      GradReport report;
      for (std::size_t i = 0; i < logits.size(); ++i) {
        report.note(relative_error(grad[i], central_difference(loss, logits[i])), "logit[" + std::to_string(i) + "]");
      }
      detail::record(f, report, logits.shape_string());
    }
    results.push_back(f);
  }
  return results;
}

}  // namespace testing
