#include <doctest.h>

#include <fstream>

#include "temp_dir.hpp"
#include "twoview/data_model.hpp"
#include "twoview/error.hpp"
#include "twoview/image.hpp"

using namespace twoview;

namespace {

const char* kHeader = R"({"version": 1, "classes": ["WW", "WD", "AU", "STR", "BRU", "CYS"]})";

std::string record(const std::string& id, const std::string& cls = "WW", const std::string& view = "surface") {
  return R"({"image_id": ")" + id + R"(", "path": "img/)" + id + R"(.png", "class": ")" + cls + R"(", "view": ")" +
         view + R"(", "specimen_id": "s1"})";
}

}  // namespace

TEST_CASE("stone classes keep their serialization codes") {
  CHECK(kAllStoneClasses.size() == 6);
  const char* names[] = {"WW", "WD", "AU", "STR", "BRU", "CYS"};
  for (int i = 0; i < 6; ++i) {
    CHECK(int(kAllStoneClasses[std::size_t(i)]) == i);
    CHECK(to_string(kAllStoneClasses[std::size_t(i)]) == names[i]);
    CHECK(parse_stone_class(names[i]) == kAllStoneClasses[std::size_t(i)]);
  }
  CHECK_FALSE(parse_stone_class("XYZ").has_value());
  CHECK(default_class_set() == std::vector<std::string>(names, names + 6));
}

TEST_CASE("two well-formed lines give two records") {
  const auto m = parse_manifest(std::string(kHeader) + "\n" + record("k001") + "\n" + record("k002", "AU", "section") + "\n");
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[1].stone_class == "AU");
  CHECK(m.records[1].view == ViewKind::section);
  CHECK(m.records[0].split == Split::unassigned);
  CHECK(m.class_index("STR") == 3);
}

TEST_CASE("empty file gives an empty valid manifest") {
  testing::TempDir dir;
  std::ofstream(dir / "m.jsonl").close();
  const auto m = load_manifest(dir / "m.jsonl");
  CHECK(m.records.empty());
  CHECK(validate_manifest(m).empty());
}

TEST_CASE("missing field is reported with line and field") {
  const std::string bad = R"({"image_id": "k9", "path": "p.png", "class": "WW", "specimen_id": "s"})";
  try {
    parse_manifest(std::string(kHeader) + "\n" + record("k1") + "\n" + bad + "\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("'view'") != std::string::npos);
  }
}

TEST_CASE("malformed JSON, unknown version and missing file are errors") {
  CHECK_THROWS_AS(parse_manifest(std::string(kHeader) + "\n{oops\n"), DataError);
  CHECK_THROWS_AS(parse_manifest(R"({"version": 7, "classes": []})"), DataError);
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.jsonl"), DataError);
}

TEST_CASE("validation finds duplicates and unknown classes") {
  SUBCASE("duplicate image id") {
    const auto m = parse_manifest(std::string(kHeader) + "\n" + record("k001") + "\n" + record("k001") + "\n");
    const auto v = validate_manifest(m);
    REQUIRE(v.size() == 1);
    CHECK(v[0].message.find("k001") != std::string::npos);
  }
  SUBCASE("class outside the class set") {
    const auto m = parse_manifest(std::string(kHeader) + "\n" + record("k1", "XYZ") + "\n");
    CHECK(validate_manifest(m).size() == 1);
  }
  SUBCASE("valid six-class manifest") {
    std::string text = std::string(kHeader) + "\n";
    int i = 0;
    for (auto c : default_class_set()) text += record("k" + std::to_string(i++), c) + "\n";
    CHECK(validate_manifest(parse_manifest(text)).empty());
  }
  SUBCASE("empty specimen") {
    auto m = parse_manifest(std::string(kHeader) + "\n" + record("k1") + "\n");
    m.records[0].specimen_id.clear();
    CHECK(validate_manifest(m).size() == 1);
  }
}

TEST_CASE("file checks resolve relative paths and need a PNG") {
  testing::TempDir dir;
  std::filesystem::create_directories(dir / "img");
  write_png(dir / "img/k1.png", Image(4, 4));
  std::ofstream(dir / "img/k2.png") << "not a png";
  const auto m = parse_manifest(std::string(kHeader) + "\n" + record("k1") + "\n" + record("k2") + "\n" + record("k3") + "\n");
  const auto v = validate_manifest(m, {true, dir.path()});
  REQUIRE(v.size() == 2);
  CHECK(v[0].image_id == "k2");
  CHECK(v[1].image_id == "k3");
}

TEST_CASE("write then load is the identity and re-writing is byte-identical") {
  DatasetManifest m;
  m.class_set = {"A", "B"};
  m.records.push_back({"i1", "a/i1.png", "A", ViewKind::surface, "s1", Split::train});
  m.records.push_back({"i2", "a/i2.png", "B", ViewKind::section, "s2", Split::test});
  testing::TempDir dir;
  write_manifest(dir / "m.jsonl", m);
  const auto back = load_manifest(dir / "m.jsonl");
  CHECK(back == m);
  CHECK(serialize_manifest(back) == serialize_manifest(m));
  CHECK(validate_manifest(back).empty());
}
