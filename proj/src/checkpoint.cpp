#include "twoview/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "twoview/digest.hpp"
#include "twoview/error.hpp"

namespace twoview {

namespace {

constexpr char kMagic[8] = {'T', 'V', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host order");

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

struct TensorRef {
  std::string name;
  const void* data;
  std::size_t bytes;
  std::vector<std::size_t> shape;
};

template <typename T>
void collect(const Sequential<T>& net, const std::string& group, std::vector<TensorRef>& out) {
  for (const auto& p : net.params()) {
    out.push_back({group + "/" + p.name, p.value.data(), p.value.size() * sizeof(T), p.value.shape()});
  }
}

template <typename T>
void restore(Sequential<T>& net, const std::string& group, const nlohmann::ordered_json& tensors, std::string_view payload) {
  for (auto& p : net.params()) {
    const std::string name = group + "/" + p.name;
    const nlohmann::ordered_json* entry = nullptr;
    for (const auto& t : tensors) {
      if (t.at("name").get<std::string>() == name) {
        entry = &t;
        break;
      }
    }
    if (!entry) throw DataError("checkpoint is missing tensor '" + name + "'");
    if ((*entry).at("shape").get<std::vector<std::size_t>>() != p.value.shape()) {
      throw DataError("checkpoint tensor '" + name + "' has a shape that disagrees with its configuration");
    }
    const auto offset = (*entry).at("offset").get<std::size_t>();
    const auto nbytes = (*entry).at("nbytes").get<std::size_t>();
    if (nbytes != p.value.size() * sizeof(T) || offset + nbytes > payload.size()) {
      throw DataError("checkpoint tensor '" + name + "' is truncated");
    }
    const std::string_view bytes = payload.substr(offset, nbytes);
    if (sha256_hex(bytes) != (*entry).at("sha256").get<std::string>()) {
      throw DataError("checkpoint tensor '" + name + "' failed its digest check");
    }
    std::memcpy(p.value.data(), bytes.data(), nbytes);
  }
}

template <typename T>
nlohmann::ordered_json describe(const SingleViewModel<T>& m, std::vector<TensorRef>& tensors) {
  nlohmann::ordered_json j;
  j["kind"] = "single_view";
  j["dtype"] = dtype_name<T>();
  j["backbone"] = to_json(m.extractor.config);
  j["extractor_frozen"] = m.extractor.frozen;
  j["head"] = to_json(m.head.config);
  collect(m.extractor.net, "extractor", tensors);
  collect(m.head.net, "head", tensors);
  return j;
}

template <typename T>
nlohmann::ordered_json describe(const MultiViewModel<T>& m, std::vector<TensorRef>& tensors) {
  nlohmann::ordered_json j;
  j["kind"] = "multi_view";
  j["dtype"] = dtype_name<T>();
  j["backbone"] = to_json(m.branch_surface.config);
  j["branches_frozen"] = m.branch_surface.frozen && m.branch_section.frozen;
  j["fusion"] = to_string(m.fusion);
  j["head"] = to_json(m.head.config);
  collect(m.branch_surface.net, "branch_surface", tensors);
  collect(m.branch_section.net, "branch_section", tensors);
  if (m.projection) collect(*m.projection, "projection", tensors);
  collect(m.head.net, "head", tensors);
  return j;
}

template <typename T>
FeatureExtractor<T> empty_extractor(const BackboneConfig& config, bool frozen) {
  auto fx = build_backbone<T>(config, 0);
  fx.frozen = frozen;
  return fx;
}

template <typename T>
SingleViewModel<T> rebuild_single(const nlohmann::ordered_json& h, const nlohmann::ordered_json& tensors, std::string_view payload) {
  SingleViewModel<T> m;
  m.extractor = empty_extractor<T>(backbone_from_json(h.at("backbone")), h.at("extractor_frozen").get<bool>());
  m.head = build_head<T>(head_from_json(h.at("head")), 0);
  restore(m.extractor.net, "extractor", tensors, payload);
  restore(m.head.net, "head", tensors, payload);
  return m;
}

template <typename T>
MultiViewModel<T> rebuild_multi(const nlohmann::ordered_json& h, const nlohmann::ordered_json& tensors, std::string_view payload) {
  MultiViewModel<T> m;
  const auto config = backbone_from_json(h.at("backbone"));
  const bool frozen = h.at("branches_frozen").get<bool>();
  m.branch_surface = empty_extractor<T>(config, frozen);
  m.branch_section = empty_extractor<T>(config, frozen);
  const auto fusion = parse_fusion(h.at("fusion").get<std::string>());
  if (!fusion) throw DataError("checkpoint has an unknown fusion strategy");
  m.fusion = *fusion;
  if (m.fusion == FusionStrategy::concat) {
    m.projection = Sequential<T>({1, 1, 2 * config.feature_dim, true},
                                 {LayerSpec::dense(config.feature_dim), LayerSpec::relu()});
    m.projection->set_name("projection");
  }
  m.head = build_head<T>(head_from_json(h.at("head")), 0);
  restore(m.branch_surface.net, "branch_surface", tensors, payload);
  restore(m.branch_section.net, "branch_section", tensors, payload);
  if (m.projection) restore(*m.projection, "projection", tensors, payload);
  restore(m.head.net, "head", tensors, payload);
  return m;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<TensorRef> tensors;
  nlohmann::ordered_json header;
  header["format_version"] = kCheckpointVersion;
  header["class_set"] = ckpt.class_set;
  header["model"] = std::visit([&](const auto& m) { return describe(m, tensors); }, ckpt.model);
  auto& list = header["tensors"] = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    const std::string_view bytes(static_cast<const char*>(t.data), t.bytes);
    list.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"nbytes", t.bytes},
                    {"sha256", sha256_hex(bytes)}});
    offset += t.bytes;
  }
  header["meta"] = ckpt.meta;
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  const std::uint64_t n = header_text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xFF));
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto& t : tensors) out.append(static_cast<const char*>(t.data), t.bytes);
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError("not a checkpoint archive (bad magic)");
  }
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (16 + n > bytes.size()) throw DataError("checkpoint header is truncated");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(16, n));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(16 + n);

  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) throw DataError("unknown checkpoint format version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.class_set = header.at("class_set").get<std::vector<std::string>>();
    ckpt.meta = header.at("meta");
    const auto& model = header.at("model");
    const auto kind = model.at("kind").get<std::string>();
    const auto dtype = model.at("dtype").get<std::string>();
    const auto& tensors = header.at("tensors");
    if (dtype != "float32" && dtype != "float64") throw DataError("unknown checkpoint dtype '" + dtype + "'");
    const bool f64 = dtype == "float64";
    if (kind == "single_view") {
      if (f64) ckpt.model = rebuild_single<double>(model, tensors, payload);
      else ckpt.model = rebuild_single<float>(model, tensors, payload);
    } else if (kind == "multi_view") {
      if (f64) ckpt.model = rebuild_multi<double>(model, tensors, payload);
      else ckpt.model = rebuild_multi<float>(model, tensors, payload);
    } else {
      throw DataError("unknown checkpoint model kind '" + kind + "'");
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is incomplete: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace twoview
