#include <algorithm>
#include <exception>
#include <fstream>
#include <sstream>

#include "twoview/digest.hpp"
#include "twoview/error.hpp"
#include "twoview/patch_pipeline.hpp"
#include "twoview/version.hpp"

namespace twoview {

namespace {

constexpr const char* kIndexName = "patches.jsonl";

nlohmann::ordered_json deficit_json(const GroupDeficit& d) {
  return {{"label", d.label}, {"view", to_string(d.view)}, {"available", d.available},
          {"target", d.target}, {"missing", d.missing()}};
}

nlohmann::ordered_json stratum_json(const StratumReport& s) {
  return {{"label", s.label}, {"view", to_string(s.view)}, {"total", s.total},
          {"expected_test", s.expected_test}, {"actual_test", s.actual_test}};
}

// Runs body(i) for i in [0, n) across OpenMP threads and rethrows the first
// (lowest-index) exception after the loop.
template <typename Body>
void parallel_for_each_index(std::size_t n, Body&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void write_patch_store(const std::filesystem::path& dir, const PatchStore& store) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / kIndexName, std::ios::binary);
  if (!index) throw DataError("cannot write patch index in " + dir.string());
  nlohmann::ordered_json header;
  header["version"] = 1;
  header["classes"] = store.class_set;
  header["patch_size"] = store.patch_size;
  index << header.dump() << "\n";
  for (const auto& p : store.patches) {
    nlohmann::ordered_json row;
    row["patch_id"] = p.patch_id;
    row["label"] = store.class_set.at(static_cast<std::size_t>(p.label));
    row["view"] = to_string(p.view);
    row["source_image_id"] = p.source_image_id;
    row["specimen_id"] = p.specimen_id;
    row["split"] = to_string(p.split);
    row["augmented_from"] = p.augmented_from ? nlohmann::ordered_json(*p.augmented_from) : nlohmann::ordered_json();
    index << row.dump() << "\n";
  }
  parallel_for_each_index(store.patches.size(), [&](std::size_t i) {
    write_png(dir / (store.patches[i].patch_id + ".png"), store.patches[i].pixels);
  });
}

PatchStore load_patch_store(const std::filesystem::path& dir) {
  std::ifstream index(dir / kIndexName, std::ios::binary);
  if (!index) throw DataError("patch store index not found: " + (dir / kIndexName).string());
  PatchStore store;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(index, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("patch index line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.at("version").get<int>() != 1) throw DataError("unknown patch store version");
        store.class_set = j.at("classes").get<std::vector<std::string>>();
        store.patch_size = j.at("patch_size").get<int>();
        have_header = true;
        continue;
      }
      Patch p;
      p.patch_id = j.at("patch_id").get<std::string>();
      const auto label = j.at("label").get<std::string>();
      const auto it = std::find(store.class_set.begin(), store.class_set.end(), label);
      if (it == store.class_set.end()) throw DataError("unknown label '" + label + "'");
      p.label = static_cast<ClassIndex>(it - store.class_set.begin());
      const auto view = parse_view(j.at("view").get<std::string>());
      const auto split = parse_split(j.at("split").get<std::string>());
      if (!view || !split) throw DataError("bad view or split");
      p.view = *view;
      p.split = *split;
      p.source_image_id = j.at("source_image_id").get<std::string>();
      p.specimen_id = j.at("specimen_id").get<std::string>();
      if (!j.at("augmented_from").is_null()) p.augmented_from = j.at("augmented_from").get<std::string>();
      store.patches.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("patch index line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("patch index line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError("patch index is empty: " + dir.string());
  parallel_for_each_index(store.patches.size(), [&](std::size_t i) {
    auto& p = store.patches[i];
    p.pixels = read_png(dir / (p.patch_id + ".png"));
    if (p.pixels.height != store.patch_size || p.pixels.width != store.patch_size) {
      throw DataError("patch '" + p.patch_id + "' does not have the store's patch size");
    }
  });
  return store;
}

PatchifySummary run_patchify(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                             const PipelineConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const auto violations = validate_manifest(manifest);
  if (!violations.empty()) throw DataError("manifest is invalid: " + violations.front().message);

  PatchifySummary summary;
  summary.images = manifest.records.size();
  const std::uint64_t extract_seed = derive_seed(config.seed, "patchify.extract");
  const std::uint64_t balance_seed = derive_seed(config.seed, "patchify.balance");
  const std::uint64_t split_seed = derive_seed(config.seed, "patchify.split");
  const std::uint64_t val_seed = derive_seed(config.seed, "patchify.val_split");
  const std::uint64_t augment_seed = derive_seed(config.seed, "patchify.augment");

  std::vector<Extraction> per_image(manifest.records.size());
  parallel_for_each_index(manifest.records.size(), [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    std::filesystem::path p(rec.path);
    if (p.is_relative()) p = manifest_dir / p;
    const Image image = read_png(p);
    per_image[i] = extract_patches(image, rec, *manifest.class_index(rec.stone_class), config, extract_seed);
  });
  std::vector<Patch> all;
  for (auto& e : per_image) {
    if (e.warning) summary.warnings.push_back(*e.warning);
    for (auto& p : e.patches) all.push_back(std::move(p));
  }
  per_image.clear();
  summary.extracted = all.size();

  auto balanced = balance_classes(std::move(all), static_cast<std::size_t>(config.target_per_class_per_view), balance_seed);
  summary.deficits = balanced.deficits;
  for (const auto& d : balanced.deficits) {
    summary.warnings.push_back("group (class " + manifest.class_set[static_cast<std::size_t>(d.label)] + ", view " +
                               std::string(to_string(d.view)) + ") short by " + std::to_string(d.missing()));
  }
  summary.balanced = balanced.patches.size();

  // Manifest-assigned splits win when every record carries one.
  const bool preassigned = !manifest.records.empty() &&
                           std::all_of(manifest.records.begin(), manifest.records.end(),
                                       [](const ImageRecord& r) { return r.split != Split::unassigned; });
  std::vector<Patch> train, val, test;
  if (preassigned) {
    for (auto& p : balanced.patches) {
      if (p.split == Split::test) test.push_back(std::move(p));
      else if (p.split == Split::val) val.push_back(std::move(p));
      else train.push_back(std::move(p));
    }
  } else {
    auto split = split_train_test(std::move(balanced.patches), config.test_fraction, split_seed, config.leak_free);
    summary.strata = split.strata;
    test = std::move(split.test);
    train = std::move(split.train);
    if (config.val_fraction > 0.0) {
      auto inner = split_train_test(std::move(train), config.val_fraction, val_seed, config.leak_free);
      train = std::move(inner.train);
      val = std::move(inner.test);
      for (auto& p : val) p.split = Split::val;
    }
  }

  std::vector<std::vector<Patch>> variants(train.size());
  parallel_for_each_index(train.size(), [&](std::size_t i) {
    variants[i] = augment_patch(train[i], config.augmentation_variants, augment_seed, config.augmentation);
  });

  PatchStore store;
  store.class_set = manifest.class_set;
  store.patch_size = config.patch_size;
  summary.train = train.size();
  summary.val = val.size();
  summary.test = test.size();
  for (std::size_t i = 0; i < train.size(); ++i) {
    store.patches.push_back(std::move(train[i]));
    for (auto& v : variants[i]) {
      store.patches.push_back(std::move(v));
      ++summary.augmented;
    }
  }
  for (auto& p : val) store.patches.push_back(std::move(p));
  for (auto& p : test) store.patches.push_back(std::move(p));
  write_patch_store(out_dir, store);

  nlohmann::ordered_json meta;
  meta["toolkit_version"] = kToolkitVersion;
  meta["pipeline_config"] = to_json(config);
  meta["seed"] = config.seed;
  meta["seeds"] = {{"patchify.extract", extract_seed}, {"patchify.balance", balance_seed},
                   {"patchify.split", split_seed}, {"patchify.val_split", val_seed},
                   {"patchify.augment", augment_seed}};
  meta["manifest_split_used"] = preassigned;
  meta["counts"] = {{"images", summary.images}, {"extracted", summary.extracted}, {"balanced", summary.balanced},
                    {"train", summary.train}, {"val", summary.val}, {"test", summary.test},
                    {"augmented", summary.augmented}};
  auto& deficits = meta["deficits"] = nlohmann::ordered_json::array();
  for (const auto& d : summary.deficits) deficits.push_back(deficit_json(d));
  auto& strata = meta["strata"] = nlohmann::ordered_json::array();
  for (const auto& s : summary.strata) strata.push_back(stratum_json(s));
  meta["warnings"] = summary.warnings;
  std::ofstream(out_dir / "run_metadata.json", std::ios::binary) << meta.dump(2) << "\n";
  return summary;
}

}  // namespace twoview
