#include <doctest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "toy_patches.hpp"
#include "twoview/error.hpp"
#include "twoview/training.hpp"

using namespace twoview;

namespace {

template <typename T>
SingleViewModel<T> sv_model(int classes, std::uint64_t seed) {
  return {build_backbone<T>(BackboneConfig::mini(), seed), build_head<T>(HeadConfig::standard(128, classes), seed + 1)};
}

TrainConfig config(int epochs, int batch, std::uint64_t seed = 1) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  c.seed = seed;
  return c;
}

template <typename T>
std::vector<std::string> digests(const SingleViewModel<T>& m) {
  return {parameter_digest(m.extractor.net), parameter_digest(m.head.net)};
}

NormalizedPatch section_like(const NormalizedPatch& p, const std::string& specimen, const std::string& id) {
  NormalizedPatch q = p;
  q.view = ViewKind::section;
  q.specimen_id = specimen;
  q.patch_id = id;
  return q;
}

}  // namespace

TEST_CASE("config invariants") {
  CHECK_THROWS_AS(config(0, 8).validate(), DataError);
  auto c = config(1, 0);
  CHECK_THROWS_AS(c.validate(), DataError);
  c = config(1, 8);
  c.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), DataError);
  c.learning_rate = 0;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("zero learning rate leaves every parameter bitwise unchanged") {
  const auto data = testing::toy_patches(3, 4, 1);
  auto model = sv_model<float>(3, 2);
  const auto before = digests(model);
  auto c = config(3, 5);
  c.learning_rate = 0;
  train_single_view(model, std::span(data), {}, c);
  CHECK(digests(model) == before);
}

TEST_CASE("same seed and data reproduce the loss curve bitwise") {
  const auto data = testing::toy_patches(3, 4, 1);
  const auto val = testing::toy_patches(3, 1, 9);
  auto run = [&] {
    auto model = sv_model<double>(3, 2);
    auto h = train_single_view(model, std::span(data), std::span(val), config(3, 5, 77)).history;
    return std::make_pair(h, digests(model));
  };
  const auto [a, da] = run();
  const auto [b, db] = run();
  REQUIRE(a.epochs.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.epochs[e].epoch == int(e + 1));
    CHECK(a.epochs[e].train_loss == b.epochs[e].train_loss);
    CHECK(a.epochs[e].train_accuracy == b.epochs[e].train_accuracy);
    CHECK(*a.epochs[e].val_loss == *b.epochs[e].val_loss);
  }
  CHECK(da == db);

  auto other = sv_model<double>(3, 2);
  const auto c = train_single_view(other, std::span(data), std::span(val), config(3, 5, 78)).history;
  CHECK(c.epochs[1].train_loss != a.epochs[1].train_loss);
}

TEST_CASE("history CSV has one row per epoch") {
  TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.25, 0.75, 0.5, 1.0});
  h.epochs.push_back({2, 0.25, 0.5, std::nullopt, std::nullopt, 1.0});
  const auto csv = h.to_csv();
  CHECK(csv.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("mini backbone overfits a 60-patch 6-class set") {
  const auto data = testing::toy_patches(6, 5, 3);
  REQUIRE(data.size() == 60);
  auto model = sv_model<float>(6, 4);
  const auto h = train_single_view(model, std::span(data), {}, config(200, 16, 5)).history;
  INFO("final train accuracy " << h.epochs.back().train_accuracy);
  CHECK(h.epochs.back().train_accuracy >= 0.95);
  CHECK(h.epochs.back().train_loss < h.epochs.front().train_loss);
}

TEST_CASE("non-finite loss aborts naming epoch and batch") {
  auto data = testing::toy_patches(2, 3, 1);
  for (auto& v : data[0].values) v = 3e38f;
  auto model = sv_model<float>(2, 1);
  auto c = config(2, 4);
  c.shuffle = false;
  try {
    train_single_view(model, std::span(data), {}, c);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
  }
}

TEST_CASE("empty or mislabelled training sets are rejected") {
  auto model = sv_model<float>(2, 1);
  CHECK_THROWS_AS(train_single_view(model, std::span<const NormalizedPatch>{}, {}, config(1, 4)), DataError);
  auto data = testing::toy_patches(3, 1, 1);
  CHECK_THROWS_AS(train_single_view(model, std::span(data), {}, config(1, 4)), DataError);
}

TEST_CASE("a batch larger than the dataset is one partial batch") {
  const auto data = testing::toy_patches(2, 2, 1);
  auto model = sv_model<float>(2, 1);
  const auto h = train_single_view(model, std::span(data), {}, config(1, 500)).history;
  CHECK(h.epochs.size() == 1);
}

TEST_CASE("one Adam step does not increase the loss on its own batch") {
  const auto pool = testing::toy_patches(6, 10, 21, 0.5);
  Rng rng(22);
  int not_worse = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<NormalizedPatch> batch;
    for (auto i : rng.sample_without_replacement(pool.size(), 8)) batch.push_back(pool[i]);
    auto model = sv_model<float>(6, 1000 + trial);
    const std::vector<std::vector<std::size_t>> all = {{0, 1, 2, 3, 4, 5, 6, 7}};
    const double before = dataset_loss(model, std::span(batch), all);
    auto c = config(1, 8, trial);
    c.shuffle = false;
    train_single_view(model, std::span(batch), {}, c);
    if (dataset_loss(model, std::span(batch), all) <= before) ++not_worse;
  }
  CHECK(not_worse >= 95);
}

TEST_CASE("epoch loss does not depend on batch order") {
  const auto data = testing::toy_patches(3, 8, 4);
  const auto model = sv_model<float>(3, 5);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < data.size(); s += 7) {
    std::vector<std::size_t> b;
    for (std::size_t i = s; i < std::min(data.size(), s + 7); ++i) b.push_back(i);
    batches.push_back(b);
  }
  const double forward = dataset_loss(model, std::span(data), batches);
  auto reversed = batches;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(dataset_loss(model, std::span(data), reversed) == doctest::Approx(forward).epsilon(1e-5));
  Rng rng(1);
  rng.shuffle(std::span(reversed));
  CHECK(dataset_loss(model, std::span(data), reversed) == doctest::Approx(forward).epsilon(1e-5));
}

TEST_CASE("Adam converges on the quadratic probe") {
  constexpr std::size_t n = 16;
  Rng rng(90);
  Param<double> w{"w", Tensor<double>({n}), Tensor<double>({n})};
  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = rng.uniform(-3, 3);
    w.value[i] = target[i] + rng.uniform(-0.4, 0.4);
  }
  std::vector<testing::ScalarAdam> oracle(n, testing::ScalarAdam{2e-4L});
  std::vector<long double> shadow(w.value.values().begin(), w.value.values().end());
  Adam<double> adam({&w}, AdamConfig{});
  for (int step = 0; step < 5000; ++step) {
    for (std::size_t i = 0; i < n; ++i) {
      w.grad[i] = 2 * (w.value[i] - target[i]);
      shadow[i] = oracle[i].step(shadow[i], 2 * (shadow[i] - target[i]));
    }
    adam.step();
  }
  double dist = 0, drift = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dist += (w.value[i] - target[i]) * (w.value[i] - target[i]);
    drift = std::max(drift, double(std::abs(shadow[i] - w.value[i])));
  }
  INFO("distance " << std::sqrt(dist));
  CHECK(std::sqrt(dist) < 1e-3);
  CHECK(drift < 1e-9);
}

TEST_CASE("pairing policies") {
  const auto base = testing::toy_patches(1, 1, 1, 0.1, 8);
  const auto& surf = base[0];

  SUBCASE("same specimen is preferred") {
    std::vector<NormalizedPatch> ps;
    for (int i = 0; i < 3; ++i) {
      auto p = surf;
      p.patch_id = "s" + std::to_string(i);
      ps.push_back(p);
    }
    for (int i = 0; i < 5; ++i) ps.push_back(section_like(surf, surf.specimen_id, "x" + std::to_string(i)));
    ps.push_back(section_like(surf, "other", "y"));
    const auto pairs = pair_views(std::span(ps), PairingPolicy::specimen_first, 3);
    REQUIRE(pairs.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(pairs[i].surface == &ps[i]);
      CHECK(pairs[i].specimen_match);
      CHECK(pairs[i].section->specimen_id == surf.specimen_id);
    }
    const auto again = pair_views(std::span(ps), PairingPolicy::specimen_first, 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(again[i].section == pairs[i].section);
  }
  SUBCASE("falls back to the class") {
    std::vector<NormalizedPatch> ps = {surf, section_like(surf, "other", "y")};
    const auto pairs = pair_views(std::span(ps), PairingPolicy::specimen_first, 3);
    REQUIRE(pairs.size() == 1);
    CHECK_FALSE(pairs[0].specimen_match);
    CHECK(pairs[0].label == surf.label);
  }
  SUBCASE("class_random stays inside the class") {
    const auto ps = testing::toy_patches(3, 6, 2, 0.1, 8);
    const auto pairs = pair_views(std::span(ps), PairingPolicy::class_random, 4);
    CHECK(pairs.size() == 18);
    for (const auto& p : pairs) {
      CHECK(p.surface->view == ViewKind::surface);
      CHECK(p.section->view == ViewKind::section);
      CHECK(p.surface->label == p.label);
      CHECK(p.section->label == p.label);
      CHECK(p.specimen_match == (p.surface->specimen_id == p.section->specimen_id));
    }
  }
  SUBCASE("missing section view names the class") {
    std::vector<NormalizedPatch> ps = {surf};
    ps[0].label = 4;
    try {
      pair_views(std::span(ps), PairingPolicy::specimen_first, 1);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("4") != std::string::npos);
    }
  }
}

TEST_CASE("freezing") {
  const auto model = sv_model<float>(3, 8);
  const auto a = freeze_features(model);
  const auto b = freeze_features(a);
  CHECK(a.frozen);
  CHECK(parameter_digest(a.net) == parameter_digest(b.net));
  CHECK(parameter_digest(a.net) == parameter_digest(model.extractor.net));
  Rng rng(3);
  Tensor<float> x({2, 64, 64, 3});
  for (auto& v : x.values()) v = float(rng.normal());
  CHECK(forward_features(a, x) == forward_features(model.extractor, x));
  CHECK_THROWS_AS(build_multiview(model.extractor, FusionStrategy::maxpool, 3, {16}, 1), DataError);
}

TEST_CASE("multi-view construction") {
  const auto frozen = freeze_features(sv_model<float>(4, 8));
  const auto mx = build_multiview(frozen, FusionStrategy::maxpool, 4, {16}, 1);
  CHECK(parameter_digest(mx.branch_surface.net) == parameter_digest(mx.branch_section.net));
  CHECK(mx.fused_dim() == 128);
  CHECK_FALSE(mx.projection.has_value());
  CHECK(mx.head.config.input_dim == 128);

  const auto cc = build_multiview(frozen, FusionStrategy::concat, 4, {16}, 1);
  CHECK(cc.fused_dim() == 256);
  REQUIRE(cc.projection.has_value());
  CHECK(cc.projection->input_shape().size() == 256);
  CHECK(cc.projection->output_shape().size() == 128);
  CHECK(cc.head.config.input_dim == 128);
}

TEST_CASE("multi-view training leaves the frozen branches untouched") {
  const auto data = testing::toy_patches(4, 6, 11);
  auto sv = sv_model<double>(4, 12);
  train_single_view(sv, std::span(data), {}, config(2, 8));
  const auto frozen = freeze_features(sv);
  const auto reference = parameter_digest(frozen.net);
  for (auto fusion : {FusionStrategy::maxpool, FusionStrategy::concat}) {
    auto mv = build_multiview(frozen, fusion, 4, {16}, 13);
    const auto head_before = parameter_digest(mv.head.net);
    const auto pairs = pair_views(std::span(data), PairingPolicy::specimen_first, 14);
    auto c = config(3, 6);
    c.repair_each_epoch = true;
    RepairSource repair{std::span(data), PairingPolicy::specimen_first, 15};
    const auto result = train_multiview(mv, std::span(pairs), std::span(pairs), c, &repair);
    CHECK(result.history.epochs.size() == 3);
    CHECK(parameter_digest(mv.branch_surface.net) == reference);
    CHECK(parameter_digest(mv.branch_section.net) == reference);
    CHECK(parameter_digest(mv.head.net) != head_before);
    const auto probs = predict_multiview(mv, std::span(pairs), 5);
    CHECK(probs.shape() == std::vector<std::size_t>{pairs.size(), 4});
  }
}

TEST_CASE("keep_best snapshots the best validation epoch") {
  const auto data = testing::toy_patches(3, 4, 1);
  const auto val = testing::toy_patches(3, 2, 2);
  auto model = sv_model<float>(3, 2);
  auto c = config(4, 6);
  c.keep_best = true;
  const auto r = train_single_view(model, std::span(data), std::span(val), c);
  REQUIRE(r.best.has_value());
  REQUIRE(r.history.best_epoch >= 1);
  double best = -1;
  for (const auto& e : r.history.epochs) best = std::max(best, *e.val_accuracy);
  CHECK(*r.history.epochs[std::size_t(r.history.best_epoch - 1)].val_accuracy == best);
}
