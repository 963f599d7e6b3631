#include <doctest.h>

#include <fstream>

#include "gradcheck.hpp"
#include "temp_dir.hpp"
#include "twoview/checkpoint.hpp"
#include "twoview/error.hpp"
#include "twoview/training.hpp"

using namespace twoview;

namespace {

template <typename T>
SingleViewModel<T> sv_model(std::uint64_t seed) {
  auto extractor = build_backbone<T>(BackboneConfig::mini(), seed);
  auto head = build_head<T>(HeadConfig::standard(128, 4, {32}), seed + 1);
  return {std::move(extractor), std::move(head)};
}

template <typename T>
MultiViewModel<T> mv_model(FusionStrategy fusion) {
  auto frozen = freeze_features(sv_model<T>(3));
  return build_multiview(frozen, fusion, 4, {16}, 5);
}

const std::vector<std::string> kClasses = {"A", "B", "C", "D"};

template <typename T>
Tensor<T> input(std::size_t b) {
  Rng rng(17);
  Tensor<T> x({b, 64, 64, 3});
  for (auto& v : x.values()) v = T(rng.uniform(-2, 2));
  return x;
}

template <typename T>
Tensor<T> outputs(const AnyModel& any) {
  const auto x = input<T>(2);
  if (const auto* sv = std::get_if<SingleViewModel<T>>(&any)) {
    return classify(forward_features(sv->extractor, x), sv->head);
  }
  const auto& mv = std::get<MultiViewModel<T>>(any);
  auto fused = fuse(forward_features(mv.branch_surface, x), forward_features(mv.branch_section, x), mv.fusion);
  if (mv.projection) fused = mv.projection->forward(fused);
  return classify(fused, mv.head);
}

template <typename T>
void round_trip(AnyModel model) {
  testing::TempDir dir;
  Checkpoint ck{kClasses, {{"kind", "test"}, {"seed", 42}}, std::move(model)};
  save_checkpoint(dir / "a.ckpt", ck);
  const auto loaded = load_checkpoint(dir / "a.ckpt");
  CHECK(loaded.class_set == kClasses);
  CHECK(loaded.meta == ck.meta);
  CHECK(loaded.model.index() == ck.model.index());
  save_checkpoint(dir / "b.ckpt", loaded);
  CHECK(serialize_checkpoint(loaded) == serialize_checkpoint(ck));
  std::ifstream a(dir / "a.ckpt", std::ios::binary), b(dir / "b.ckpt", std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));

  const auto before = outputs<T>(ck.model);
  const auto after = outputs<T>(loaded.model);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

}  // namespace

TEST_CASE("single-view checkpoints round trip byte for byte") {
  round_trip<float>(sv_model<float>(1));
  round_trip<double>(sv_model<double>(1));
}

TEST_CASE("multi-view checkpoints round trip byte for byte") {
  round_trip<float>(mv_model<float>(FusionStrategy::maxpool));
  round_trip<double>(mv_model<double>(FusionStrategy::concat));
}

TEST_CASE("frozen branches stay frozen after loading") {
  Checkpoint ck{kClasses, {}, mv_model<float>(FusionStrategy::maxpool)};
  const auto loaded = parse_checkpoint(serialize_checkpoint(ck));
  const auto& mv = std::get<MultiViewModel<float>>(loaded.model);
  CHECK(mv.branch_surface.frozen);
  CHECK(mv.branch_section.frozen);
  CHECK(parameter_digest(mv.branch_surface.net) == parameter_digest(mv.branch_section.net));
}

TEST_CASE("damaged archives are rejected") {
  const auto bytes = serialize_checkpoint({kClasses, {}, sv_model<float>(2)});

  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(bad), DataError);
  }
  SUBCASE("flipped payload byte fails the digest") {
    auto bad = bytes;
    bad[bad.size() - 5] ^= 0x40;
    try {
      parse_checkpoint(bad);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("digest") != std::string::npos);
    }
  }
  SUBCASE("truncated") {
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 100)), DataError);
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, 12)), DataError);
  }
  SUBCASE("missing file") {
    testing::TempDir dir;
    CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), DataError);
  }
}
