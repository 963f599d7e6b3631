#include "twoview/nets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "twoview/digest.hpp"
#include "twoview/error.hpp"
#include "twoview/kernels.hpp"
#include "twoview/random.hpp"

namespace twoview {

namespace {

std::string layer_label(std::size_t index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(kind)) + ")";
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename T>
std::size_t batch_of(const Tensor<T>& t) {
  return t.rank() == 0 ? 0 : t.dim(0);
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv(int out_channels, int kernel, int stride, int padding) {
  LayerSpec s;
  s.kind = LayerKind::conv;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::maxpool(int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

LayerSpec LayerSpec::dense(int out_features, int in_features) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.out_features = out_features;
  s.in_features = in_features;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.rate = rate;
  return s;
}

std::vector<ActivationShape> infer_shapes(const ActivationShape& input, const std::vector<LayerSpec>& layers) {
  std::vector<ActivationShape> shapes{input};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    ActivationShape cur = shapes.back();
    const auto fail = [&](const std::string& what) { throw ShapeError(layer_label(i, l.kind) + ": " + what); };
    switch (l.kind) {
      case LayerKind::conv: {
        if (cur.flat) fail("convolution after flatten");
        if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0) fail("invalid parameters");
        const int oh = (cur.h + 2 * l.padding - l.kernel) / l.stride + 1;
        const int ow = (cur.w + 2 * l.padding - l.kernel) / l.stride + 1;
        if (cur.h + 2 * l.padding < l.kernel || cur.w + 2 * l.padding < l.kernel) {
          fail("kernel " + std::to_string(l.kernel) + " exceeds padded input " + std::to_string(cur.h) + "x" +
               std::to_string(cur.w));
        }
        cur = {oh, ow, l.out_channels, false};
        break;
      }
      case LayerKind::maxpool: {
        if (cur.flat) fail("pooling after flatten");
        if (l.kernel < 1 || l.stride < 1) fail("invalid parameters");
        if (cur.h < l.kernel || cur.w < l.kernel) {
          fail("window " + std::to_string(l.kernel) + " exceeds input " + std::to_string(cur.h) + "x" +
               std::to_string(cur.w));
        }
        cur = {(cur.h - l.kernel) / l.stride + 1, (cur.w - l.kernel) / l.stride + 1, cur.c, false};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0)) fail("rate must be in [0, 1)");
        break;
      case LayerKind::flatten:
        cur = {1, 1, static_cast<int>(cur.size()), true};
        break;
      case LayerKind::dense: {
        if (!cur.flat && (cur.h != 1 || cur.w != 1)) fail("dense layer on an unflattened " + std::to_string(cur.h) +
                                                          "x" + std::to_string(cur.w) + "x" + std::to_string(cur.c) +
                                                          " activation");
        if (l.out_features < 1) fail("out_features must be positive");
        const int incoming = static_cast<int>(cur.size());
        if (l.in_features != 0 && l.in_features != incoming) {
          fail("expects " + std::to_string(l.in_features) + " inputs but the previous layer produces " +
               std::to_string(incoming));
        }
        cur = {1, 1, l.out_features, true};
        break;
      }
    }
    shapes.push_back(cur);
  }
  return shapes;
}

std::string_view to_string(BackboneFamily family) {
  switch (family) {
    case BackboneFamily::alexnet_like: return "alexnet_like";
    case BackboneFamily::vgg16_like: return "vgg16_like";
    case BackboneFamily::mini: return "mini";
  }
  return "unknown";
}

std::optional<BackboneFamily> parse_backbone_family(std::string_view name) {
  if (name == "alexnet_like") return BackboneFamily::alexnet_like;
  if (name == "vgg16_like") return BackboneFamily::vgg16_like;
  if (name == "mini") return BackboneFamily::mini;
  return std::nullopt;
}

BackboneConfig BackboneConfig::mini() {
  BackboneConfig c;
  c.family = BackboneFamily::mini;
  c.input_size = 64;
  c.feature_dim = 128;
  c.layers = {LayerSpec::conv(8, 3, 1, 1),  LayerSpec::relu(), LayerSpec::maxpool(2, 2),
              LayerSpec::conv(16, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
              LayerSpec::conv(32, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
              LayerSpec::flatten(),         LayerSpec::dense(128, 8 * 8 * 32), LayerSpec::relu()};
  return c;
}

BackboneConfig BackboneConfig::alexnet_like(int input_size) {
  BackboneConfig c;
  c.family = BackboneFamily::alexnet_like;
  c.input_size = input_size;
  c.feature_dim = 4096;
  c.layers = {LayerSpec::conv(96, 11, 4, 0),  LayerSpec::relu(), LayerSpec::maxpool(3, 2),
              LayerSpec::conv(256, 5, 1, 2),  LayerSpec::relu(), LayerSpec::maxpool(3, 2),
              LayerSpec::conv(384, 3, 1, 1),  LayerSpec::relu(), LayerSpec::conv(384, 3, 1, 1),
              LayerSpec::relu(),              LayerSpec::conv(256, 3, 1, 1), LayerSpec::relu(),
              LayerSpec::maxpool(3, 2),       LayerSpec::flatten(), LayerSpec::dense(4096), LayerSpec::relu()};
  return c;
}

BackboneConfig BackboneConfig::vgg16_like(int input_size) {
  BackboneConfig c;
  c.family = BackboneFamily::vgg16_like;
  c.input_size = input_size;
  c.feature_dim = 4096;
  const int blocks[5][2] = {{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}};
  for (const auto& [channels, convs] : blocks) {
    for (int i = 0; i < convs; ++i) {
      c.layers.push_back(LayerSpec::conv(channels, 3, 1, 1));
      c.layers.push_back(LayerSpec::relu());
    }
    c.layers.push_back(LayerSpec::maxpool(2, 2));
  }
  c.layers.push_back(LayerSpec::flatten());
  c.layers.push_back(LayerSpec::dense(4096));
  c.layers.push_back(LayerSpec::relu());
  return c;
}

BackboneConfig BackboneConfig::preset(BackboneFamily family) {
  switch (family) {
    case BackboneFamily::alexnet_like: return alexnet_like();
    case BackboneFamily::vgg16_like: return vgg16_like();
    case BackboneFamily::mini: break;
  }
  return mini();
}

HeadConfig HeadConfig::standard(int input_dim, int num_classes, std::vector<int> hidden) {
  HeadConfig h;
  h.input_dim = input_dim;
  h.num_classes = num_classes;
  for (int width : hidden) {
    h.layers.push_back(LayerSpec::dense(width));
    h.layers.push_back(LayerSpec::relu());
  }
  h.layers.push_back(LayerSpec::dense(num_classes));
  return h;
}

std::string_view to_string(FusionStrategy s) { return s == FusionStrategy::concat ? "concat" : "maxpool"; }

std::optional<FusionStrategy> parse_fusion(std::string_view name) {
  if (name == "concat") return FusionStrategy::concat;
  if (name == "maxpool") return FusionStrategy::maxpool;
  return std::nullopt;
}

nlohmann::ordered_json to_json(const LayerSpec& s) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(s.kind);
  switch (s.kind) {
    case LayerKind::conv:
      j["out_channels"] = s.out_channels;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      break;
    case LayerKind::maxpool:
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      break;
    case LayerKind::dense:
      j["in_features"] = s.in_features;
      j["out_features"] = s.out_features;
      break;
    case LayerKind::dropout:
      j["rate"] = s.rate;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "conv") {
    return LayerSpec::conv(j.at("out_channels").get<int>(), j.at("kernel").get<int>(), j.at("stride").get<int>(),
                           j.at("padding").get<int>());
  }
  if (kind == "maxpool") return LayerSpec::maxpool(j.at("kernel").get<int>(), j.at("stride").get<int>());
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "flatten") return LayerSpec::flatten();
  if (kind == "dense") return LayerSpec::dense(j.at("out_features").get<int>(), j.value("in_features", 0));
  if (kind == "dropout") return LayerSpec::dropout(j.at("rate").get<double>());
  throw DataError("unknown layer kind '" + kind + "'");
}

nlohmann::ordered_json to_json(const BackboneConfig& c) {
  nlohmann::ordered_json j;
  j["family"] = to_string(c.family);
  j["input_size"] = c.input_size;
  j["feature_dim"] = c.feature_dim;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : c.layers) layers.push_back(to_json(l));
  return j;
}

BackboneConfig backbone_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  const auto family = parse_backbone_family(j.at("family").get<std::string>());
  if (!family) throw DataError("unknown backbone family");
  c.family = *family;
  c.input_size = j.at("input_size").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  for (const auto& l : j.at("layers")) c.layers.push_back(layer_from_json(l));
  return c;
}

nlohmann::ordered_json to_json(const HeadConfig& c) {
  nlohmann::ordered_json j;
  j["input_dim"] = c.input_dim;
  j["num_classes"] = c.num_classes;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : c.layers) layers.push_back(to_json(l));
  return j;
}

HeadConfig head_from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  for (const auto& l : j.at("layers")) c.layers.push_back(layer_from_json(l));
  return c;
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
Sequential<T>::Sequential(ActivationShape input, std::vector<LayerSpec> layers)
    : layers_(std::move(layers)), shapes_(infer_shapes(input, layers_)), weight_index_(layers_.size(), -1) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const auto& in = shapes_[i];
    const auto& out = shapes_[i + 1];
    if (l.kind == LayerKind::conv) {
      weight_index_[i] = static_cast<int>(params_.size());
      const auto k = static_cast<std::size_t>(l.kernel);
      params_.push_back({"", Tensor<T>({k, k, std::size_t(in.c), std::size_t(out.c)}), {}});
      params_.push_back({"", Tensor<T>({std::size_t(out.c)}), {}});
    } else if (l.kind == LayerKind::dense) {
      weight_index_[i] = static_cast<int>(params_.size());
      params_.push_back({"", Tensor<T>({in.size(), std::size_t(out.c)}), {}});
      params_.push_back({"", Tensor<T>({std::size_t(out.c)}), {}});
    }
  }
  set_name("net");
}

template <typename T>
void Sequential<T>::set_name(const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (weight_index_[i] < 0) continue;
    params_[std::size_t(weight_index_[i])].name = prefix + "." + std::to_string(i) + ".weight";
    params_[std::size_t(weight_index_[i]) + 1].name = prefix + "." + std::to_string(i) + ".bias";
  }
}

template <typename T>
void Sequential<T>::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (weight_index_[i] < 0) continue;
    auto& w = params_[std::size_t(weight_index_[i])];
    auto& b = params_[std::size_t(weight_index_[i]) + 1];
    const std::size_t fan_in = w.value.size() / std::size_t(shapes_[i + 1].c);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Rng rng(derive_seed(seed, w.name));
    for (auto& v : w.value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    b.value.fill(T(0));
  }
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, const ForwardMode& mode, Trace<T>* trace) const {
  const std::size_t batch = batch_of(x);
  if (batch == 0 || x.size() != batch * shapes_.front().size()) {
    const auto& s = shapes_.front();
    throw ShapeError("network input: expected B x " + std::to_string(s.h) + "x" + std::to_string(s.w) + "x" +
                     std::to_string(s.c) + " (" + std::to_string(s.size()) + " values per sample), got " +
                     x.shape_string());
  }
  if (trace) {
    trace->inputs.assign(layers_.size(), {});
    trace->argmax.assign(layers_.size(), {});
    trace->masks.assign(layers_.size(), {});
  }
  const int b = static_cast<int>(batch);
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const auto& in = shapes_[i];
    const auto& os = shapes_[i + 1];
    std::vector<std::size_t> out_shape = os.flat ? std::vector<std::size_t>{batch, std::size_t(os.c)}
                                                 : std::vector<std::size_t>{batch, std::size_t(os.h), std::size_t(os.w),
                                                                            std::size_t(os.c)};
    Tensor<T> next;
    switch (l.kind) {
      case LayerKind::conv: {
        const kernels::ConvGeometry g{b, in.h, in.w, in.c, os.h, os.w, os.c, l.kernel, l.stride, l.padding};
        next = Tensor<T>(out_shape);
        const auto& w = params_[std::size_t(weight_index_[i])];
        const auto& bias = params_[std::size_t(weight_index_[i]) + 1];
        kernels::conv2d_forward<T>(g, cur.values(), w.value.values(), bias.value.values(), next.values());
        break;
      }
      case LayerKind::dense: {
        const kernels::DenseGeometry g{b, static_cast<int>(in.size()), os.c};
        next = Tensor<T>(out_shape);
        const auto& w = params_[std::size_t(weight_index_[i])];
        const auto& bias = params_[std::size_t(weight_index_[i]) + 1];
        kernels::dense_forward<T>(g, cur.values(), w.value.values(), bias.value.values(), next.values());
        break;
      }
      case LayerKind::maxpool: {
        const kernels::PoolGeometry g{b, in.h, in.w, in.c, os.h, os.w, l.kernel, l.stride};
        next = Tensor<T>(out_shape);
        std::vector<std::int32_t> argmax(next.size());
        kernels::maxpool_forward<T>(g, cur.values(), next.values(), argmax);
        if (trace) trace->argmax[i] = std::move(argmax);
        break;
      }
      case LayerKind::relu: {
        next = Tensor<T>(out_shape);
        const T* src = cur.data();
        T* dst = next.data();
        const std::size_t n = next.size();
#pragma omp parallel for simd schedule(static) if (n > 65536)
        for (std::size_t k = 0; k < n; ++k) dst[k] = src[k] < T(0) ? T(0) : src[k];  // NaN passes through
        break;
      }
      case LayerKind::flatten:
        next = cur.reshaped(out_shape);
        break;
      case LayerKind::dropout: {
        next = cur.reshaped(out_shape);
        if (mode.training && l.rate > 0.0) {
          std::vector<std::uint8_t> mask(next.size());
          const T scale = T(1.0 / (1.0 - l.rate));
          const std::uint64_t layer_seed = splitmix64(mode.dropout_seed ^ (0xD1B54A32D192ED03ULL * (i + 1)));
          for (std::size_t k = 0; k < mask.size(); ++k) {
            const double u = static_cast<double>(splitmix64(layer_seed + k) >> 11) * 0x1.0p-53;
            mask[k] = u >= l.rate ? 1 : 0;
            next[k] = mask[k] ? next[k] * scale : T(0);
          }
          if (trace) trace->masks[i] = std::move(mask);
        }
        break;
      }
    }
    if (trace) trace->inputs[i] = std::move(cur);
    cur = std::move(next);
  }
  return cur;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out, const Trace<T>& trace, bool need_input_grad) {
  if (trace.inputs.size() != layers_.size()) throw ShapeError("backward: trace does not match the network");
  Tensor<T> grad = grad_out;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const auto& l = layers_[idx];
    const auto& in = shapes_[idx];
    const auto& os = shapes_[idx + 1];
    const Tensor<T>& x = trace.inputs[idx];
    const int b = static_cast<int>(batch_of(x));
    const bool need_grad_here = need_input_grad || idx > 0;
    Tensor<T> prev;
    switch (l.kind) {
      case LayerKind::conv: {
        const kernels::ConvGeometry g{b, in.h, in.w, in.c, os.h, os.w, os.c, l.kernel, l.stride, l.padding};
        auto& w = params_[std::size_t(weight_index_[idx])];
        auto& bias = params_[std::size_t(weight_index_[idx]) + 1];
        if (w.grad.size() != w.value.size()) w.grad = Tensor<T>(w.value.shape());
        if (bias.grad.size() != bias.value.size()) bias.grad = Tensor<T>(bias.value.shape());
        kernels::conv2d_backward_params<T>(g, x.values(), grad.values(), w.grad.values(), bias.grad.values());
        if (need_grad_here) {
          prev = Tensor<T>(x.shape());
          kernels::conv2d_backward_input<T>(g, grad.values(), w.value.values(), prev.values());
        }
        break;
      }
      case LayerKind::dense: {
        const kernels::DenseGeometry g{b, static_cast<int>(in.size()), os.c};
        auto& w = params_[std::size_t(weight_index_[idx])];
        auto& bias = params_[std::size_t(weight_index_[idx]) + 1];
        if (w.grad.size() != w.value.size()) w.grad = Tensor<T>(w.value.shape());
        if (bias.grad.size() != bias.value.size()) bias.grad = Tensor<T>(bias.value.shape());
        kernels::dense_backward_params<T>(g, x.values(), grad.values(), w.grad.values(), bias.grad.values());
        if (need_grad_here) {
          prev = Tensor<T>(x.shape());
          kernels::dense_backward_input<T>(g, grad.values(), w.value.values(), prev.values());
        }
        break;
      }
      case LayerKind::maxpool: {
        if (!need_grad_here) break;
        const kernels::PoolGeometry g{b, in.h, in.w, in.c, os.h, os.w, l.kernel, l.stride};
        prev = Tensor<T>(x.shape());
        kernels::maxpool_backward<T>(g, grad.values(), trace.argmax[idx], prev.values());
        break;
      }
      case LayerKind::relu: {
        if (!need_grad_here) break;
        prev = Tensor<T>(x.shape());
        const std::size_t n = prev.size();
        for (std::size_t k = 0; k < n; ++k) prev[k] = x[k] > T(0) ? grad[k] : T(0);
        break;
      }
      case LayerKind::flatten:
        if (need_grad_here) prev = std::move(grad).reshaped(x.shape());
        break;
      case LayerKind::dropout: {
        if (!need_grad_here) break;
        prev = std::move(grad).reshaped(x.shape());
        const auto& mask = trace.masks[idx];
        if (!mask.empty()) {
          const T scale = T(1.0 / (1.0 - l.rate));
          for (std::size_t k = 0; k < prev.size(); ++k) prev[k] = mask[k] ? prev[k] * scale : T(0);
        }
        break;
      }
    }
    grad = std::move(prev);
  }
  return need_input_grad ? grad : Tensor<T>{};
}

// ---------------------------------------------------------------------------
// Models

template <typename T>
int MultiViewModel<T>::fused_dim() const {
  const int d = branch_surface.config.feature_dim;
  return fusion == FusionStrategy::concat ? 2 * d : d;
}

template <typename T>
FeatureExtractor<T> build_backbone(const BackboneConfig& config, std::uint64_t init_seed) {
  if (config.input_size < 1) throw ShapeError("backbone input_size must be positive");
  FeatureExtractor<T> fx;
  fx.config = config;
  fx.net = Sequential<T>({config.input_size, config.input_size, 3, false}, config.layers);
  const auto& out = fx.net.output_shape();
  if (!out.flat || out.c != config.feature_dim) {
    throw ShapeError("backbone output must be a flat vector of feature_dim " + std::to_string(config.feature_dim) +
                     ", got " + std::to_string(out.size()) + " values");
  }
  fx.net.set_name("extractor");
  fx.net.initialize(init_seed);
  return fx;
}

template <typename T>
ClassifierHead<T> build_head(const HeadConfig& config, std::uint64_t init_seed) {
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const auto k = config.layers[i].kind;
    if (k != LayerKind::dense && k != LayerKind::relu && k != LayerKind::dropout) {
      throw ShapeError("head " + layer_label(i, k) + ": only dense, relu and dropout layers are allowed");
    }
  }
  if (config.layers.empty() || config.layers.back().kind != LayerKind::dense ||
      config.layers.back().out_features != config.num_classes) {
    throw ShapeError("head must end in a dense layer with " + std::to_string(config.num_classes) + " outputs");
  }
  ClassifierHead<T> head;
  head.config = config;
  head.net = Sequential<T>({1, 1, config.input_dim, true}, config.layers);
  head.net.set_name("head");
  head.net.initialize(init_seed);
  return head;
}

template <typename T>
Tensor<T> forward_features(const FeatureExtractor<T>& extractor, const Tensor<T>& batch, Trace<T>* trace) {
  const int s = extractor.config.input_size;
  if (batch.rank() != 4 || batch.dim(1) != std::size_t(s) || batch.dim(2) != std::size_t(s) || batch.dim(3) != 3 ||
      batch.dim(0) == 0) {
    throw ShapeError("feature extractor expects B x " + std::to_string(s) + " x " + std::to_string(s) +
                     " x 3, got " + batch.shape_string());
  }
  return extractor.net.forward(batch, {}, trace);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& a, const Tensor<T>& b, FusionStrategy strategy) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw ShapeError("fuse: inputs must share a B x D shape, got " + a.shape_string() + " and " + b.shape_string());
  }
  const std::size_t rows = a.dim(0), d = a.dim(1);
  if (strategy == FusionStrategy::concat) {
    Tensor<T> out({rows, 2 * d});
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
      std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(d));
    }
    return out;
  }
  Tensor<T> out({rows, d});
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] >= b[k] ? a[k] : b[k];
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> fuse_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& grad_out,
                                              FusionStrategy strategy) {
  if (a.rank() != 2 || a.shape() != b.shape()) throw ShapeError("fuse_backward: input shapes differ");
  const std::size_t rows = a.dim(0), d = a.dim(1);
  Tensor<T> ga(a.shape()), gb(b.shape());
  if (strategy == FusionStrategy::concat) {
    if (grad_out.rank() != 2 || grad_out.dim(0) != rows || grad_out.dim(1) != 2 * d) {
      throw ShapeError("fuse_backward: gradient shape " + grad_out.shape_string() + " does not match concat output");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const auto g = grad_out.row(r);
      std::copy(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(d), ga.row(r).begin());
      std::copy(g.begin() + static_cast<std::ptrdiff_t>(d), g.end(), gb.row(r).begin());
    }
    return {std::move(ga), std::move(gb)};
  }
  if (grad_out.shape() != a.shape()) throw ShapeError("fuse_backward: gradient shape does not match maxpool output");
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] >= b[k]) {
      ga[k] = grad_out[k];
    } else {
      gb[k] = grad_out[k];
    }
  }
  return {std::move(ga), std::move(gb)};
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    const auto in = logits.row(r);
    auto out = p.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) sum += std::exp(static_cast<double>(in[c] - mx));
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = static_cast<T>(std::exp(static_cast<double>(in[c] - mx)) / sum);
  }
  return p;
}

template <typename T>
Tensor<T> classify(const Tensor<T>& features, const ClassifierHead<T>& head) {
  if (features.rank() != 2 || features.dim(1) != std::size_t(head.config.input_dim)) {
    throw ShapeError("classify: head expects B x " + std::to_string(head.config.input_dim) + " features, got " +
                     features.shape_string());
  }
  return softmax_rows(head.net.forward(features));
}

template <typename T>
double cross_entropy(const Tensor<T>& logits, const std::vector<std::int32_t>& labels, Tensor<T>* grad_logits) {
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != rows) throw ShapeError("cross_entropy: label count does not match batch");
  if (grad_logits) *grad_logits = Tensor<T>(logits.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto z = logits.row(r);
    const auto y = static_cast<std::size_t>(labels[r]);
    if (y >= classes) throw ShapeError("cross_entropy: label out of range");
    const double mx = static_cast<double>(*std::max_element(z.begin(), z.end()));
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(static_cast<double>(z[c]) - mx);
    const double log_sum = std::log(sum) + mx;
    total += log_sum - static_cast<double>(z[y]);
    if (grad_logits) {
      auto g = grad_logits->row(r);
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = std::exp(static_cast<double>(z[c]) - log_sum);
        g[c] = static_cast<T>((p - (c == y ? 1.0 : 0.0)) / static_cast<double>(rows));
      }
    }
  }
  return total / static_cast<double>(rows);
}

template <typename T>
std::int32_t argmax_row(std::span<const T> row) {
  std::int32_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[std::size_t(best)]) best = static_cast<std::int32_t>(c);
  }
  return best;
}

template <typename T>
std::string parameter_digest(const Sequential<T>& net) {
  static_assert(std::endian::native == std::endian::little, "parameter serialization assumes little-endian");
  std::string buf;
  for (const auto& p : net.params()) {
    buf += p.name;
    buf.push_back('\0');
    for (auto d : p.value.shape()) buf += std::to_string(d) + ",";
    buf.push_back('\0');
    buf.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(T));
  }
  return sha256_hex(buf);
}

#define TWOVIEW_INSTANTIATE_NETS(T)                                                                               \
  template class Sequential<T>;                                                                                 \
  template struct MultiViewModel<T>;                                                                            \
  template FeatureExtractor<T> build_backbone<T>(const BackboneConfig&, std::uint64_t);                         \
  template ClassifierHead<T> build_head<T>(const HeadConfig&, std::uint64_t);                                   \
  template Tensor<T> forward_features<T>(const FeatureExtractor<T>&, const Tensor<T>&, Trace<T>*);              \
  template Tensor<T> fuse<T>(const Tensor<T>&, const Tensor<T>&, FusionStrategy);                               \
  template std::pair<Tensor<T>, Tensor<T>> fuse_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                            FusionStrategy);                                    \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                         \
  template Tensor<T> classify<T>(const Tensor<T>&, const ClassifierHead<T>&);                                   \
  template double cross_entropy<T>(const Tensor<T>&, const std::vector<std::int32_t>&, Tensor<T>*);             \
  template std::int32_t argmax_row<T>(std::span<const T>);                                                      \
  template std::string parameter_digest<T>(const Sequential<T>&);

TWOVIEW_INSTANTIATE_NETS(float)
TWOVIEW_INSTANTIATE_NETS(double)

}  // namespace twoview
