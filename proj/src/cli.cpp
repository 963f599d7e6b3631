#include "twoview/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "twoview/checkpoint.hpp"
#include "twoview/digest.hpp"
#include "twoview/error.hpp"
#include "twoview/evaluation.hpp"
#include "twoview/patch_pipeline.hpp"
#include "twoview/synth.hpp"
#include "twoview/training.hpp"
#include "twoview/version.hpp"

namespace twoview {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Flat key/value configuration shared by config files and flags.

enum class KeyType { text, integer, seed, real, flag, text_list, int_list };

struct KeySpec {
  std::string key;
  KeyType type;
  ojson fallback;  // null: required
  std::string help;
};

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

ojson coerce_text(const std::string& key, const std::string& text, KeyType type) {
  auto bad = [&]() -> UsageError { return UsageError(flag_name(key) + ": cannot parse '" + text + "'"); };
  try {
    std::size_t used = 0;
    switch (type) {
      case KeyType::text: return text;
      case KeyType::integer: {
        const long long v = std::stoll(text, &used);
        if (used != text.size()) throw bad();
        return v;
      }
      case KeyType::seed: {
        if (!text.empty() && text[0] == '-') throw bad();
        const unsigned long long v = std::stoull(text, &used, 0);
        if (used != text.size()) throw bad();
        return std::uint64_t(v);
      }
      case KeyType::real: {
        const double v = std::stod(text, &used);
        if (used != text.size()) throw bad();
        return v;
      }
      case KeyType::flag:
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw bad();
      case KeyType::text_list: return ojson::array({text});
      case KeyType::int_list: {
        ojson out = ojson::array();
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (item.empty()) continue;
          const long long v = std::stoll(item, &used);
          if (used != item.size()) throw bad();
          out.push_back(v);
        }
        return out;
      }
    }
  } catch (const std::logic_error&) {
    throw bad();
  }
  throw bad();
}

ojson coerce_json(const std::string& key, const ojson& v, KeyType type) {
  auto bad = [&]() { return UsageError("config key '" + key + "' has the wrong type"); };
  switch (type) {
    case KeyType::text:
      if (!v.is_string()) throw bad();
      return v;
    case KeyType::integer:
      if (!v.is_number_integer()) throw bad();
      return v;
    case KeyType::seed:
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) throw bad();
      return v.get<std::uint64_t>();
    case KeyType::real:
      if (!v.is_number()) throw bad();
      return v.get<double>();
    case KeyType::flag:
      if (!v.is_boolean()) throw bad();
      return v;
    case KeyType::text_list:
      if (v.is_string()) return ojson::array({v});
      if (!v.is_array()) throw bad();
      for (const auto& s : v) {
        if (!s.is_string()) throw bad();
      }
      return v;
    case KeyType::int_list:
      if (!v.is_array()) throw bad();
      for (const auto& s : v) {
        if (!s.is_number_integer()) throw bad();
      }
      return v;
  }
  throw bad();
}

struct Command {
  std::string name;
  std::string description;
  std::vector<KeySpec> keys;
  bool run_directory = false;  // artifacts go under <out>/<name>-<stamp>-<digest>
};

// Raw flag values captured by CLI11, keyed by config key.
struct Captured {
  std::map<std::string, std::string> text;
  std::map<std::string, std::vector<std::string>> lists;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
  std::string run_name;
  int jobs = 0;
};

ojson resolve(const Command& cmd, const Captured& cap) {
  ojson cfg = ojson::object();
  for (const auto& k : cmd.keys) cfg[k.key] = k.fallback;
  if (!cap.config_path.empty()) {
    std::ifstream in(cap.config_path, std::ios::binary);
    if (!in) throw DataError("config file not found: " + cap.config_path);
    ojson file;
    try {
      file = ojson::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("config file " + cap.config_path + ": " + e.what());
    }
    if (!file.is_object()) throw DataError("config file " + cap.config_path + " must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (key == "subcommand") {
        if (value != cmd.name) {
          throw UsageError("config file was written for '" + value.dump() + "', not '" + cmd.name + "'");
        }
        continue;
      }
      const auto it = std::find_if(cmd.keys.begin(), cmd.keys.end(), [&](const KeySpec& k) { return k.key == key; });
      if (it == cmd.keys.end()) throw UsageError("unknown config key '" + key + "' for " + cmd.name);
      cfg[key] = value.is_null() ? value : coerce_json(key, value, it->type);
    }
  }
  for (const auto& k : cmd.keys) {
    const auto* opt = cap.options.at(k.key);
    if (opt->count() == 0) continue;
    if (k.type == KeyType::flag) {
      cfg[k.key] = cap.flags.at(k.key);
    } else if (k.type == KeyType::text_list) {
      cfg[k.key] = cap.lists.at(k.key);
    } else {
      cfg[k.key] = coerce_text(k.key, cap.text.at(k.key), k.type);
    }
  }
  for (const auto& k : cmd.keys) {
    if (cfg[k.key].is_null() && k.fallback.is_null() && k.help.find("(optional)") == std::string::npos) {
      throw UsageError(cmd.name + ": missing required option " + flag_name(k.key));
    }
  }
  ojson out = ojson::object();
  out["subcommand"] = cmd.name;
  for (const auto& [key, value] : cfg.items()) out[key] = value;
  return out;
}

const ojson kRequired = nullptr;

std::vector<KeySpec> pipeline_keys() {
  const PipelineConfig d;
  return {
      {"patch_size", KeyType::integer, d.patch_size, "square crop size in pixels"},
      {"patches_per_image", KeyType::integer, d.patches_per_image, "random crops drawn per image"},
      {"target_per_class_per_view", KeyType::integer, d.target_per_class_per_view, "balancing target"},
      {"test_fraction", KeyType::real, d.test_fraction, "held-out fraction"},
      {"val_fraction", KeyType::real, d.val_fraction, "validation fraction carved from the training side"},
      {"augmentation_variants", KeyType::integer, d.augmentation_variants, "augmented copies per training patch"},
      {"sigma_floor", KeyType::real, d.sigma_floor, "whitening standard-deviation floor"},
      {"leak_free", KeyType::flag, d.leak_free, "keep every specimen on one side of the split"},
      {"background_tolerance", KeyType::integer, d.background_tolerance, "background colour tolerance"},
      {"background_max_fraction", KeyType::real, d.background_max_fraction, "reject crops above this background share"},
  };
}

std::vector<Command> commands() {
  std::vector<Command> cmds;
  {
    Command c{"patchify", "build a whitened-ready patch store from a manifest", {}, true};
    c.keys = {{"manifest", KeyType::text, kRequired, "dataset manifest (JSON lines)"},
              {"out", KeyType::text, kRequired, "parent directory for the run directory"},
              {"seed", KeyType::seed, 0, "master seed"}};
    for (auto& k : pipeline_keys()) c.keys.push_back(k);
    cmds.push_back(c);
  }
  {
    Command c{"train-sv", "train the single-view network on mixed views", {}, true};
    c.keys = {{"patches", KeyType::text, kRequired, "patch store directory"},
              {"backbone", KeyType::text, "mini", "alexnet_like | vgg16_like | mini"},
              {"epochs", KeyType::integer, kRequired, "training epochs"},
              {"lr", KeyType::real, 2e-4, "Adam learning rate"},
              {"batch", KeyType::integer, 64, "mini-batch size"},
              {"head_hidden", KeyType::int_list, ojson::array({64}), "hidden widths of the classifier head"},
              {"keep_best", KeyType::flag, false, "also save the best-validation-accuracy epoch"},
              {"precision", KeyType::text, "float", "float | double"},
              {"sigma_floor", KeyType::real, nullptr, "(optional) whitening floor, default from the patch store"},
              {"seed", KeyType::seed, 0, "master seed"},
              {"out", KeyType::text, kRequired, "parent directory for the run directory"}};
    cmds.push_back(c);
  }
  {
    Command c{"train-mv", "train fusion and head on top of a frozen single-view extractor", {}, true};
    c.keys = {{"sv_checkpoint", KeyType::text, nullptr, "(optional) trained single-view checkpoint"},
              {"patches", KeyType::text, kRequired, "patch store directory"},
              {"fusion", KeyType::text, "maxpool", "concat | maxpool"},
              {"pairing", KeyType::text, "specimen_first", "specimen_first | class_random"},
              {"epochs", KeyType::integer, kRequired, "training epochs"},
              {"lr", KeyType::real, 2e-4, "Adam learning rate"},
              {"batch", KeyType::integer, 64, "mini-batch size"},
              {"head_hidden", KeyType::int_list, ojson::array({64}), "hidden widths of the classifier head"},
              {"keep_best", KeyType::flag, false, "also save the best-validation-accuracy epoch"},
              {"repair_each_epoch", KeyType::flag, false, "draw fresh surface/section pairs every epoch"},
              {"sigma_floor", KeyType::real, nullptr, "(optional) whitening floor, default from the patch store"},
              {"seed", KeyType::seed, 0, "master seed"},
              {"out", KeyType::text, kRequired, "parent directory for the run directory"}};
    cmds.push_back(c);
  }
  {
    Command c{"eval", "precision/recall report on the test split", {}, false};
    c.keys = {{"checkpoint", KeyType::text_list, kRequired, "checkpoint to evaluate (repeatable)"},
              {"patches", KeyType::text, kRequired, "patch store directory"},
              {"report_out", KeyType::text, kRequired, "directory receiving report.json, report.txt, config.json"},
              {"pairing", KeyType::text, "specimen_first", "specimen_first | class_random"},
              {"batch", KeyType::integer, 64, "inference batch size"},
              {"sigma_floor", KeyType::real, nullptr, "(optional) whitening floor, default from the patch store"},
              {"seed", KeyType::seed, 0, "master seed (pairing)"}};
    cmds.push_back(c);
  }
  {
    Command c{"export-features", "write extractor or fused feature vectors as CSV", {}, false};
    c.keys = {{"checkpoint", KeyType::text, kRequired, "checkpoint"},
              {"patches", KeyType::text, kRequired, "patch store directory"},
              {"out", KeyType::text, kRequired, "output CSV path"},
              {"split", KeyType::text, "test", "train | val | test | all"},
              {"pairing", KeyType::text, "specimen_first", "specimen_first | class_random"},
              {"batch", KeyType::integer, 64, "inference batch size"},
              {"sigma_floor", KeyType::real, nullptr, "(optional) whitening floor, default from the patch store"},
              {"seed", KeyType::seed, 0, "master seed (pairing)"}};
    cmds.push_back(c);
  }
  {
    Command c{"synth", "generate a synthetic two-view dataset", {}, false};
    c.keys = {{"classes", KeyType::integer, 6, "number of classes"},
              {"specimens", KeyType::integer, 30, "specimens per class"},
              {"image_size", KeyType::integer, 128, "image side in pixels"},
              {"mode", KeyType::text, "texture", "texture | joint-code"},
              {"seed", KeyType::seed, 0, "master seed"},
              {"out", KeyType::text, kRequired, "dataset directory"}};
    cmds.push_back(c);
  }
  {
    Command c{"validate", "check a manifest", {}, false};
    c.keys = {{"manifest", KeyType::text, kRequired, "dataset manifest (JSON lines)"},
              {"check_files", KeyType::flag, true, "verify that every image exists and is a PNG"}};
    cmds.push_back(c);
  }
  return cmds;
}

// ---------------------------------------------------------------------------
// Helpers shared by the subcommands.

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path make_run_dir(const ojson& cfg, const std::string& run_name) {
  const fs::path parent = cfg["out"].get<std::string>();
  fs::path dir;
  if (!run_name.empty()) {
    dir = parent / run_name;
    if (fs::exists(dir) && !fs::is_empty(dir)) throw DataError("run directory already exists: " + dir.string());
  } else {
    const std::string base =
        cfg["subcommand"].get<std::string>() + "-" + utc_stamp() + "-" + sha256_hex(cfg.dump()).substr(0, 8);
    dir = parent / base;
    for (int n = 2; fs::exists(dir); ++n) dir = parent / (base + "-" + std::to_string(n));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void write_json(const fs::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

template <typename T>
T get(const ojson& cfg, const char* key) {
  return cfg.at(key).get<T>();
}

std::uint64_t master_seed(const ojson& cfg) { return cfg.at("seed").get<std::uint64_t>(); }

struct LoadedPatches {
  PatchStore store;
  std::vector<NormalizedPatch> normalized;
  double sigma_floor = 0.0;

  std::vector<NormalizedPatch> with_split(std::initializer_list<Split> splits) const {
    std::vector<NormalizedPatch> out;
    for (const auto& p : normalized) {
      if (std::find(splits.begin(), splits.end(), p.split) != splits.end()) out.push_back(p);
    }
    return out;
  }
};

LoadedPatches load_patches(const ojson& cfg) {
  LoadedPatches lp;
  const fs::path dir = get<std::string>(cfg, "patches");
  lp.store = load_patch_store(dir);
  lp.sigma_floor = PipelineConfig{}.sigma_floor;
  if (!cfg.at("sigma_floor").is_null()) {
    lp.sigma_floor = cfg.at("sigma_floor").get<double>();
  } else if (std::ifstream meta(dir / "run_metadata.json"); meta) {
    try {
      const auto j = nlohmann::json::parse(meta);
      if (j.contains("pipeline_config") && j["pipeline_config"].contains("sigma_floor")) {
        lp.sigma_floor = j["pipeline_config"]["sigma_floor"].get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError((dir / "run_metadata.json").string() + ": " + e.what());
    }
  }
  if (!(lp.sigma_floor > 0)) throw DataError("sigma_floor must be > 0");
  lp.normalized.resize(lp.store.patches.size());
  std::vector<std::exception_ptr> errors(lp.store.patches.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(lp.store.patches.size()); ++i) {
    try {
      lp.normalized[std::size_t(i)] = whiten_patch(lp.store.patches[std::size_t(i)], lp.sigma_floor);
    } catch (...) {
      errors[std::size_t(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return lp;
}

TrainConfig train_config(const ojson& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.learning_rate = get<double>(cfg, "lr");
  tc.batch_size = get<int>(cfg, "batch");
  tc.epochs = get<int>(cfg, "epochs");
  tc.keep_best = get<bool>(cfg, "keep_best");
  if (cfg.contains("repair_each_epoch")) tc.repair_each_epoch = get<bool>(cfg, "repair_each_epoch");
  tc.seed = seed;
  tc.validate();
  return tc;
}

PairingPolicy pairing_from(const ojson& cfg) {
  const auto p = parse_pairing(get<std::string>(cfg, "pairing"));
  if (!p) throw UsageError("--pairing must be specimen_first or class_random");
  return *p;
}

void check_class_set(const std::vector<std::string>& a, const std::vector<std::string>& b, const std::string& what) {
  if (a != b) throw DataError(what + ": class set differs from the patch store");
}

ojson history_summary(const TrainHistory& h) {
  ojson j;
  j["epochs"] = h.epochs.size();
  j["best_epoch"] = h.best_epoch;
  if (!h.epochs.empty()) {
    j["final_train_loss"] = h.epochs.back().train_loss;
    j["final_train_accuracy"] = h.epochs.back().train_accuracy;
    if (h.epochs.back().val_accuracy) j["final_val_accuracy"] = *h.epochs.back().val_accuracy;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_patchify(const ojson& cfg, const Captured& cap, std::ostream& out) {
  const fs::path manifest_path = get<std::string>(cfg, "manifest");
  const auto manifest = load_manifest(manifest_path);
  ValidationOptions vo;
  vo.check_files = true;
  vo.base_dir = manifest_path.parent_path();
  const auto violations = validate_manifest(manifest, vo);
  if (!violations.empty()) {
    throw DataError("manifest has " + std::to_string(violations.size()) + " violations, first: " +
                    violations.front().image_id + ": " + violations.front().message);
  }
  ojson pj = cfg;
  PipelineConfig pc = pipeline_config_from_json(nlohmann::json::parse(pj.dump()));
  pc.seed = master_seed(cfg);
  pc.validate();
  const fs::path run = make_run_dir(cfg, cap.run_name);
  write_json(run / "config.json", cfg);
  const auto summary = run_patchify(manifest, manifest_path.parent_path(), pc, run);
  out << "images " << summary.images << ", extracted " << summary.extracted << ", balanced " << summary.balanced
      << ", train " << summary.train << ", val " << summary.val << ", test " << summary.test << ", augmented "
      << summary.augmented << "\n";
  for (const auto& w : summary.warnings) out << "warning: " << w << "\n";
  out << run.string() << "\n";
  return kExitOk;
}

template <typename T>
int train_sv(const ojson& cfg, const Captured& cap, std::ostream& out) {
  const auto patches = load_patches(cfg);
  const auto train = patches.with_split({Split::train});
  const auto val = patches.with_split({Split::val});
  if (train.empty()) throw DataError("patch store has no training patches");

  const auto family = parse_backbone_family(get<std::string>(cfg, "backbone"));
  if (!family) throw UsageError("--backbone must be alexnet_like, vgg16_like or mini");
  BackboneConfig bc = *family == BackboneFamily::alexnet_like ? BackboneConfig::alexnet_like(patches.store.patch_size)
                      : *family == BackboneFamily::vgg16_like ? BackboneConfig::vgg16_like(patches.store.patch_size)
                                                              : BackboneConfig::mini();
  if (bc.input_size != patches.store.patch_size) {
    throw DataError("backbone " + std::string(to_string(bc.family)) + " expects " + std::to_string(bc.input_size) +
                    "px patches, the store holds " + std::to_string(patches.store.patch_size) + "px patches");
  }
  const std::uint64_t master = master_seed(cfg);
  const std::uint64_t init_seed = derive_seed(master, "train-sv.init");
  const TrainConfig tc = train_config(cfg, derive_seed(master, "train-sv.train"));
  const int classes = int(patches.store.class_set.size());

  SingleViewModel<T> model{build_backbone<T>(bc, init_seed),
                           build_head<T>(HeadConfig::standard(bc.feature_dim, classes,
                                                              get<std::vector<int>>(cfg, "head_hidden")),
                                         derive_seed(init_seed, "head"))};
  const fs::path run = make_run_dir(cfg, cap.run_name);
  write_json(run / "config.json", cfg);
  const auto result = train_single_view(model, std::span<const NormalizedPatch>(train),
                                        std::span<const NormalizedPatch>(val), tc);

  ojson seeds = {{"master", master}, {"train-sv.init", init_seed}, {"train-sv.train", tc.seed}};
  ojson meta;
  meta["kind"] = "single_view";
  meta["toolkit_version"] = kToolkitVersion;
  meta["precision"] = std::is_same_v<T, double> ? "double" : "float";
  meta["train"] = to_json(tc);
  meta["seeds"] = seeds;
  meta["sigma_floor"] = patches.sigma_floor;
  save_checkpoint(run / "model.ckpt", Checkpoint{patches.store.class_set, meta, AnyModel{model}});
  if (result.best) {
    meta["best_epoch"] = result.history.best_epoch;
    save_checkpoint(run / "best.ckpt", Checkpoint{patches.store.class_set, meta, AnyModel{*result.best}});
  }
  write_text(run / "history.csv", result.history.to_csv());
  write_json(run / "run_metadata.json", {{"toolkit_version", kToolkitVersion},
                                          {"subcommand", "train-sv"},
                                          {"seeds", seeds},
                                          {"counts", {{"train", train.size()}, {"val", val.size()}}},
                                          {"history", history_summary(result.history)}});
  const auto& last = result.history.epochs.back();
  out << "epochs " << result.history.epochs.size() << ", final train accuracy " << last.train_accuracy;
  if (last.val_accuracy) out << ", val accuracy " << *last.val_accuracy;
  out << "\n" << run.string() << "\n";
  return kExitOk;
}

template <typename T>
int train_mv(const ojson& cfg, const Captured& cap, std::ostream& out, SingleViewModel<T> sv,
             const Checkpoint& sv_ckpt) {
  const auto patches = load_patches(cfg);
  check_class_set(sv_ckpt.class_set, patches.store.class_set, "single-view checkpoint");
  const auto train = patches.with_split({Split::train});
  const auto val = patches.with_split({Split::val});
  if (train.empty()) throw DataError("patch store has no training patches");
  const auto fusion = parse_fusion(get<std::string>(cfg, "fusion"));
  if (!fusion) throw UsageError("--fusion must be concat or maxpool");
  const PairingPolicy policy = pairing_from(cfg);

  const std::uint64_t master = master_seed(cfg);
  ojson seeds = {{"master", master},
                 {"train-mv.init", derive_seed(master, "train-mv.init")},
                 {"train-mv.pairing", derive_seed(master, "train-mv.pairing")},
                 {"train-mv.val_pairing", derive_seed(master, "train-mv.val_pairing")},
                 {"train-mv.repair", derive_seed(master, "train-mv.repair")},
                 {"train-mv.train", derive_seed(master, "train-mv.train")}};
  const TrainConfig tc = train_config(cfg, seeds["train-mv.train"].get<std::uint64_t>());

  auto model = build_multiview(freeze_features(sv), *fusion, int(patches.store.class_set.size()),
                               get<std::vector<int>>(cfg, "head_hidden"), seeds["train-mv.init"].get<std::uint64_t>());
  const auto pairs = pair_views(train, policy, seeds["train-mv.pairing"].get<std::uint64_t>());
  std::vector<PatchPair> val_pairs;
  if (!val.empty()) val_pairs = pair_views(val, policy, seeds["train-mv.val_pairing"].get<std::uint64_t>());
  const RepairSource repair{train, policy, seeds["train-mv.repair"].get<std::uint64_t>()};

  const fs::path run = make_run_dir(cfg, cap.run_name);
  write_json(run / "config.json", cfg);
  const auto result = train_multiview(model, std::span<const PatchPair>(pairs), std::span<const PatchPair>(val_pairs),
                                      tc, &repair);

  ojson meta;
  meta["kind"] = "multi_view";
  meta["toolkit_version"] = kToolkitVersion;
  meta["precision"] = std::is_same_v<T, double> ? "double" : "float";
  meta["fusion"] = std::string(to_string(*fusion));
  meta["pairing"] = std::string(to_string(policy));
  meta["train"] = to_json(tc);
  meta["seeds"] = seeds;
  meta["sigma_floor"] = patches.sigma_floor;
  meta["single_view"] = sv_ckpt.meta;
  save_checkpoint(run / "model.ckpt", Checkpoint{patches.store.class_set, meta, AnyModel{model}});
  if (result.best) {
    meta["best_epoch"] = result.history.best_epoch;
    save_checkpoint(run / "best.ckpt", Checkpoint{patches.store.class_set, meta, AnyModel{*result.best}});
  }
  std::size_t matched = 0;
  for (const auto& p : pairs) matched += p.specimen_match ? 1 : 0;
  write_text(run / "history.csv", result.history.to_csv());
  write_json(run / "run_metadata.json",
             {{"toolkit_version", kToolkitVersion},
              {"subcommand", "train-mv"},
              {"seeds", seeds},
              {"counts", {{"pairs", pairs.size()}, {"specimen_matched_pairs", matched}, {"val_pairs", val_pairs.size()}}},
              {"history", history_summary(result.history)}});
  const auto& last = result.history.epochs.back();
  out << "epochs " << result.history.epochs.size() << ", final train accuracy " << last.train_accuracy;
  if (last.val_accuracy) out << ", val accuracy " << *last.val_accuracy;
  out << "\n" << run.string() << "\n";
  return kExitOk;
}

int cmd_train_sv(const ojson& cfg, const Captured& cap, std::ostream& out) {
  const auto precision = get<std::string>(cfg, "precision");
  if (precision == "float") return train_sv<float>(cfg, cap, out);
  if (precision == "double") return train_sv<double>(cfg, cap, out);
  throw UsageError("--precision must be float or double");
}

int cmd_train_mv(const ojson& cfg, const Captured& cap, std::ostream& out) {
  if (cfg.at("sv_checkpoint").is_null()) {
    throw DataError("train-mv needs a trained single-view checkpoint: run train-sv first and pass --sv-checkpoint");
  }
  const fs::path path = get<std::string>(cfg, "sv_checkpoint");
  if (!fs::exists(path)) {
    throw DataError("single-view checkpoint not found: " + path.string() + " (run train-sv first)");
  }
  const auto ckpt = load_checkpoint(path);
  if (ckpt.is_multiview()) throw DataError(path.string() + " is a multi-view checkpoint, train-mv needs a single-view one");
  if (ckpt.is_double()) return train_mv<double>(cfg, cap, out, std::get<SingleViewModel<double>>(ckpt.model), ckpt);
  return train_mv<float>(cfg, cap, out, std::get<SingleViewModel<float>>(ckpt.model), ckpt);
}

int cmd_eval(const ojson& cfg, const Captured&, std::ostream& out) {
  const auto patches = load_patches(cfg);
  const auto test = patches.with_split({Split::test});
  if (test.empty()) throw DataError("patch store has no test patches");
  std::vector<Checkpoint> ckpts;
  for (const auto& path : get<std::vector<std::string>>(cfg, "checkpoint")) {
    ckpts.push_back(load_checkpoint(path));
    check_class_set(ckpts.back().class_set, patches.store.class_set, path);
  }
  std::vector<NamedModel> models;
  std::set<std::string> used;
  for (const auto& c : ckpts) {
    std::string id = default_model_id(c.model);
    for (int n = 2; used.count(id); ++n) id = default_model_id(c.model) + "#" + std::to_string(n);
    used.insert(id);
    models.push_back({id, &c.model});
  }
  const std::uint64_t master = master_seed(cfg);
  SuiteOptions so;
  so.pairing = pairing_from(cfg);
  so.pairing_seed = derive_seed(master, "eval.pairing");
  so.batch_size = get<int>(cfg, "batch");
  if (so.batch_size < 1) throw UsageError("--batch must be >= 1");
  auto suite = evaluate_suite(models, test, patches.store.class_set, so);
  suite.seeds["master"] = master;
  const fs::path dir = get<std::string>(cfg, "report_out");
  write_json(dir / "config.json", cfg);
  write_json(dir / "report.json", suite.to_json());
  const std::string text = suite.to_text();
  write_text(dir / "report.txt", text);
  out << text << dir.string() << "\n";
  return kExitOk;
}

int cmd_export(const ojson& cfg, const Captured&, std::ostream& out) {
  const auto patches = load_patches(cfg);
  const auto split = get<std::string>(cfg, "split");
  std::vector<NormalizedPatch> items;
  if (split == "all") items = patches.normalized;
  else if (const auto s = parse_split(split); s && *s != Split::unassigned) items = patches.with_split({*s});
  else throw UsageError("--split must be train, val, test or all");
  const auto ckpt = load_checkpoint(get<std::string>(cfg, "checkpoint"));
  check_class_set(ckpt.class_set, patches.store.class_set, "checkpoint");
  SuiteOptions so;
  so.pairing = pairing_from(cfg);
  so.pairing_seed = derive_seed(master_seed(cfg), "export.pairing");
  so.batch_size = get<int>(cfg, "batch");
  const fs::path path = get<std::string>(cfg, "out");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto rows = export_features(ckpt.model, items, patches.store.class_set, so, path);
  out << rows << " rows written to " << path.string() << "\n";
  return kExitOk;
}

int cmd_synth(const ojson& cfg, const Captured&, std::ostream& out) {
  SynthSpec spec;
  spec.classes = get<int>(cfg, "classes");
  spec.specimens_per_class = get<int>(cfg, "specimens");
  spec.image_size = get<int>(cfg, "image_size");
  const auto mode = parse_synth_mode(get<std::string>(cfg, "mode"));
  if (!mode) throw UsageError("--mode must be texture or joint-code");
  spec.mode = *mode;
  spec.seed = master_seed(cfg);
  const fs::path dir = get<std::string>(cfg, "out");
  const auto manifest = generate_synthetic(spec, dir);
  write_json(dir / "config.json", cfg);
  out << manifest.records.size() << " images written to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_validate(const ojson& cfg, const Captured&, std::ostream& out, std::ostream& err) {
  const fs::path path = get<std::string>(cfg, "manifest");
  const auto manifest = load_manifest(path);
  ValidationOptions vo;
  vo.check_files = get<bool>(cfg, "check_files");
  vo.base_dir = path.parent_path();
  const auto violations = validate_manifest(manifest, vo);
  for (const auto& v : violations) out << "record " << v.record_index << " (" << v.image_id << "): " << v.message << "\n";
  out << violations.size() << " violations\n";
  if (violations.empty()) return kExitOk;
  ojson report = {{"error", "validation"}, {"manifest", path.string()}, {"violations", ojson::array()}};
  for (const auto& v : violations) {
    report["violations"].push_back({{"record", v.record_index}, {"image_id", v.image_id}, {"message", v.message}});
  }
  err << report.dump() << "\n";
  return kExitData;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-view patch classification toolkit"};
  app.name("twoview");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolkitVersion));

  const auto cmds = commands();
  std::map<std::string, Captured> captured;
  std::map<std::string, CLI::App*> subs;
  for (const auto& cmd : cmds) {
    auto* sub = app.add_subcommand(cmd.name, cmd.description);
    auto& cap = captured[cmd.name];
    sub->add_option("--config", cap.config_path, "flat JSON config; flags override its values");
    sub->add_option("--jobs", cap.jobs, "worker threads (0 = OpenMP default)");
    if (cmd.run_directory) sub->add_option("--run-name", cap.run_name, "fixed run directory name under --out");
    for (const auto& k : cmd.keys) {
      const std::string name = flag_name(k.key);
      std::string help = k.help;
      if (!k.fallback.is_null()) help += " [" + (k.fallback.is_string() ? k.fallback.get<std::string>() : k.fallback.dump()) + "]";
      CLI::Option* opt = nullptr;
      if (k.type == KeyType::flag) {
        std::string spec = name + ",!--no-" + name.substr(2);
        opt = sub->add_flag(spec, cap.flags[k.key], help);
      } else if (k.type == KeyType::text_list) {
        opt = sub->add_option(name, cap.lists[k.key], help);
      } else {
        opt = sub->add_option(name, cap.text[k.key], help);
      }
      cap.options[k.key] = opt;
    }
    subs[cmd.name] = sub;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Command* cmd = nullptr;
  for (const auto& c : cmds) {
    if (subs[c.name]->parsed()) cmd = &c;
  }
  auto& cap = captured[cmd->name];
  try {
    if (cap.jobs < 0) throw UsageError("--jobs must be >= 0");
    if (cap.jobs > 0) omp_set_num_threads(cap.jobs);
    const ojson cfg = resolve(*cmd, cap);
    if (cmd->name == "patchify") return cmd_patchify(cfg, cap, out);
    if (cmd->name == "train-sv") return cmd_train_sv(cfg, cap, out);
    if (cmd->name == "train-mv") return cmd_train_mv(cfg, cap, out);
    if (cmd->name == "eval") return cmd_eval(cfg, cap, out);
    if (cmd->name == "export-features") return cmd_export(cfg, cap, out);
    if (cmd->name == "synth") return cmd_synth(cfg, cap, out);
    return cmd_validate(cfg, cap, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n\n" << subs[cmd->name]->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    const char* kind = dynamic_cast<const ShapeError*>(&e)      ? "shape_error"
                       : dynamic_cast<const DataError*>(&e)     ? "data_error"
                       : dynamic_cast<const TrainingError*>(&e) ? "training_error"
                                                                : "error";
    err << ojson{{"error", kind}, {"subcommand", cmd->name}, {"message", e.what()}}.dump() << "\n";
    return kExitData;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace twoview
