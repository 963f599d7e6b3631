#include "twoview/data_model.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unordered_map>

#include "twoview/error.hpp"

namespace twoview {

namespace {

constexpr std::array<std::string_view, 6> kStoneNames = {"WW", "WD", "AU", "STR", "BRU", "CYS"};
constexpr std::array<std::string_view, 2> kViewNames = {"surface", "section"};
constexpr std::array<std::string_view, 4> kSplitNames = {"unassigned", "train", "val", "test"};

std::string line_error(std::size_t line, const std::string& what) {
  return "manifest line " + std::to_string(line) + ": " + what;
}

std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw DataError(line_error(line, std::string("missing field '") + key + "'"));
  if (!it->is_string()) throw DataError(line_error(line, std::string("field '") + key + "' must be a string"));
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(StoneClass c) { return kStoneNames[static_cast<std::size_t>(c)]; }

std::optional<StoneClass> parse_stone_class(std::string_view name) {
  for (std::size_t i = 0; i < kStoneNames.size(); ++i) {
    if (kStoneNames[i] == name) return static_cast<StoneClass>(i);
  }
  return std::nullopt;
}

std::vector<std::string> default_class_set() {
  return {kStoneNames.begin(), kStoneNames.end()};
}

std::string_view to_string(ViewKind v) { return kViewNames[static_cast<std::size_t>(v)]; }

std::optional<ViewKind> parse_view(std::string_view name) {
  if (name == "surface") return ViewKind::surface;
  if (name == "section") return ViewKind::section;
  return std::nullopt;
}

std::string_view to_string(Split s) { return kSplitNames[static_cast<std::size_t>(s)]; }

std::optional<Split> parse_split(std::string_view name) {
  for (std::size_t i = 0; i < kSplitNames.size(); ++i) {
    if (kSplitNames[i] == name) return static_cast<Split>(i);
  }
  return std::nullopt;
}

std::optional<ClassIndex> DatasetManifest::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < class_set.size(); ++i) {
    if (class_set[i] == name) return static_cast<ClassIndex>(i);
  }
  return std::nullopt;
}

DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest manifest;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(line_error(line_no, std::string("malformed JSON: ") + e.what()));
    }
    if (!obj.is_object()) throw DataError(line_error(line_no, "expected a JSON object"));

    if (!have_header) {
      if (!obj.contains("version")) throw DataError(line_error(line_no, "missing header field 'version'"));
      if (!obj["version"].is_number_integer()) throw DataError(line_error(line_no, "'version' must be an integer"));
      manifest.version = obj["version"].get<int>();
      if (manifest.version != kManifestVersion) {
        throw DataError(line_error(line_no, "unknown manifest format version " + std::to_string(manifest.version)));
      }
      const auto classes = obj.find("classes");
      if (classes == obj.end() || !classes->is_array()) {
        throw DataError(line_error(line_no, "missing header field 'classes'"));
      }
      for (const auto& c : *classes) {
        if (!c.is_string()) throw DataError(line_error(line_no, "class names must be strings"));
        manifest.class_set.push_back(c.get<std::string>());
      }
      have_header = true;
      continue;
    }

    ImageRecord rec;
    rec.image_id = required_string(obj, "image_id", line_no);
    rec.path = required_string(obj, "path", line_no);
    rec.stone_class = required_string(obj, "class", line_no);
    const std::string view = required_string(obj, "view", line_no);
    const auto parsed_view = parse_view(view);
    if (!parsed_view) throw DataError(line_error(line_no, "field 'view' has unknown value '" + view + "'"));
    rec.view = *parsed_view;
    rec.specimen_id = required_string(obj, "specimen_id", line_no);
    if (obj.contains("split")) {
      const std::string split = required_string(obj, "split", line_no);
      const auto parsed_split = parse_split(split);
      if (!parsed_split) throw DataError(line_error(line_no, "field 'split' has unknown value '" + split + "'"));
      rec.split = *parsed_split;
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("manifest not found: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str());
}

std::string serialize_manifest(const DatasetManifest& manifest) {
  std::string out;
  nlohmann::ordered_json header;
  header["version"] = manifest.version;
  header["classes"] = manifest.class_set;
  out += header.dump() + "\n";
  for (const auto& rec : manifest.records) {
    nlohmann::ordered_json obj;
    obj["image_id"] = rec.image_id;
    obj["path"] = rec.path;
    obj["class"] = rec.stone_class;
    obj["view"] = std::string(to_string(rec.view));
    obj["specimen_id"] = rec.specimen_id;
    obj["split"] = std::string(to_string(rec.split));
    out += obj.dump() + "\n";
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << serialize_manifest(manifest);
}

std::vector<ManifestViolation> validate_manifest(const DatasetManifest& manifest,
                                                 const ValidationOptions& options) {
  std::vector<ManifestViolation> violations;
  std::unordered_map<std::string, std::size_t> first_seen;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    auto report = [&](std::string msg) { violations.push_back({i, rec.image_id, std::move(msg)}); };

    if (rec.image_id.empty()) report("empty image_id");
    const auto [it, inserted] = first_seen.emplace(rec.image_id, i);
    if (!inserted) {
      report("duplicate image_id '" + rec.image_id + "' (first at record " + std::to_string(it->second) + ")");
    }
    if (!manifest.class_index(rec.stone_class)) {
      report("class '" + rec.stone_class + "' of image '" + rec.image_id + "' is not in the class set");
    }
    if (rec.specimen_id.empty()) report("empty specimen_id for image '" + rec.image_id + "'");
    if (options.check_files) {
      std::filesystem::path p(rec.path);
      if (p.is_relative()) p = options.base_dir / p;
      std::ifstream f(p, std::ios::binary);
      char sig[8] = {};
      static constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
      if (!f || !f.read(sig, 8) || std::memcmp(sig, kPngSig, 8) != 0) {
        report("image file unreadable: " + p.string());
      }
    }
  }
  return violations;
}

}  // namespace twoview
