#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "twoview/tensor.hpp"

namespace twoview {

enum class LayerKind : std::uint8_t { conv, maxpool, relu, flatten, dense, dropout };

std::string_view to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int out_channels = 0;  // conv
  int kernel = 0;        // conv, maxpool
  int stride = 1;        // conv, maxpool
  int padding = 0;       // conv
  int in_features = 0;   // dense: declared input width, 0 = take whatever arrives
  int out_features = 0;  // dense
  double rate = 0.0;     // dropout

  static LayerSpec conv(int out_channels, int kernel, int stride = 1, int padding = 0);
  static LayerSpec maxpool(int kernel, int stride);
  static LayerSpec relu();
  static LayerSpec flatten();
  static LayerSpec dense(int out_features, int in_features = 0);
  static LayerSpec dropout(double rate);

  bool operator==(const LayerSpec&) const = default;
};

// Per-sample activation shape; flattened activations have h = w = 1.
struct ActivationShape {
  int h = 1;
  int w = 1;
  int c = 0;
  bool flat = false;
  std::size_t size() const { return std::size_t(h) * w * c; }
  bool operator==(const ActivationShape&) const = default;
};

/// Shape of every layer boundary (layers.size() + 1 entries). Throws
/// ShapeError naming the first inconsistent layer.
std::vector<ActivationShape> infer_shapes(const ActivationShape& input, const std::vector<LayerSpec>& layers);

enum class BackboneFamily : std::uint8_t { alexnet_like, vgg16_like, mini };

std::string_view to_string(BackboneFamily family);
std::optional<BackboneFamily> parse_backbone_family(std::string_view name);

struct BackboneConfig {
  BackboneFamily family = BackboneFamily::mini;
  int input_size = 64;
  int feature_dim = 128;
  std::vector<LayerSpec> layers;

  // Desk-scale: 64x64 input, three conv blocks, D = 128.
  static BackboneConfig mini();
  static BackboneConfig alexnet_like(int input_size = 256);
  static BackboneConfig vgg16_like(int input_size = 256);
  static BackboneConfig preset(BackboneFamily family);

  bool operator==(const BackboneConfig&) const = default;
};

struct HeadConfig {
  int input_dim = 0;
  int num_classes = 0;
  std::vector<LayerSpec> layers;  // dense / relu / dropout, last is dense(num_classes)

  // dense(hidden) -> relu for every hidden width, then dense(num_classes).
  static HeadConfig standard(int input_dim, int num_classes, std::vector<int> hidden = {64});

  bool operator==(const HeadConfig&) const = default;
};

enum class FusionStrategy : std::uint8_t { concat, maxpool };

std::string_view to_string(FusionStrategy s);
std::optional<FusionStrategy> parse_fusion(std::string_view name);

nlohmann::ordered_json to_json(const LayerSpec& spec);
LayerSpec layer_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const BackboneConfig& config);
BackboneConfig backbone_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const HeadConfig& config);
HeadConfig head_from_json(const nlohmann::json& j);

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first backward
};

// Values recorded by a training-mode forward pass for the backward pass.
template <typename T>
struct Trace {
  std::vector<Tensor<T>> inputs;                   // input of each layer
  std::vector<std::vector<std::int32_t>> argmax;   // maxpool layers
  std::vector<std::vector<std::uint8_t>> masks;    // dropout layers
};

struct ForwardMode {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

// A chain of layers over per-sample activations. Batches are B x (shape).
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(ActivationShape input, std::vector<LayerSpec> layers);

  /// Fan-in scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in)) for
  /// weights, zero biases. Each parameter's stream is derived from
  /// (seed, parameter name).
  void initialize(std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x, const ForwardMode& mode = {}, Trace<T>* trace = nullptr) const;

  /// Fills every parameter gradient from the trace; returns dL/dx when
  /// need_input_grad, otherwise an empty tensor.
  Tensor<T> backward(const Tensor<T>& grad_out, const Trace<T>& trace, bool need_input_grad);

  const ActivationShape& input_shape() const { return shapes_.front(); }
  const ActivationShape& output_shape() const { return shapes_.back(); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }

  // Prefix used for parameter names ("<prefix>.<layer>.weight").
  void set_name(const std::string& prefix);

 private:
  std::vector<LayerSpec> layers_;
  std::vector<ActivationShape> shapes_;
  std::vector<int> weight_index_;  // per layer, -1 when parameter-free
  std::vector<Param<T>> params_;
};

template <typename T>
struct FeatureExtractor {
  BackboneConfig config;
  Sequential<T> net;
  bool frozen = false;
};

template <typename T>
struct ClassifierHead {
  HeadConfig config;
  Sequential<T> net;
};

template <typename T>
struct SingleViewModel {
  FeatureExtractor<T> extractor;
  ClassifierHead<T> head;
};

template <typename T>
struct MultiViewModel {
  FeatureExtractor<T> branch_surface;
  FeatureExtractor<T> branch_section;
  FusionStrategy fusion = FusionStrategy::maxpool;
  // Concat only: dense 2D -> D followed by relu.
  std::optional<Sequential<T>> projection;
  ClassifierHead<T> head;

  int fused_dim() const;  // D' entering projection/head
};

/// Throws ShapeError naming the offending layer when the layer list is inconsistent.
template <typename T>
FeatureExtractor<T> build_backbone(const BackboneConfig& config, std::uint64_t init_seed);

template <typename T>
ClassifierHead<T> build_head(const HeadConfig& config, std::uint64_t init_seed);

/// B x H x W x 3 -> B x D. Throws ShapeError on a spatial/channel mismatch.
template <typename T>
Tensor<T> forward_features(const FeatureExtractor<T>& extractor, const Tensor<T>& batch, Trace<T>* trace = nullptr);

/// Late fusion of two B x D feature batches.
///   concat:  B x 2D, row = [a_row, b_row]
///   maxpool: B x D,  element j = max(a_j, b_j)
template <typename T>
Tensor<T> fuse(const Tensor<T>& a, const Tensor<T>& b, FusionStrategy strategy);

/// Gradient of fuse w.r.t. both inputs. maxpool routes each element's
/// gradient to the larger input; ties go to `a` (the surface branch).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> fuse_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& grad_out,
                                              FusionStrategy strategy);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

/// Softmax probabilities, B x C.
template <typename T>
Tensor<T> classify(const Tensor<T>& features, const ClassifierHead<T>& head);

/// Mean cross-entropy of logits against labels; fills grad_logits with
/// (softmax - onehot) / B when non-null. Accumulates in double.
template <typename T>
double cross_entropy(const Tensor<T>& logits, const std::vector<std::int32_t>& labels, Tensor<T>* grad_logits);

// First index of the row maximum.
template <typename T>
std::int32_t argmax_row(std::span<const T> row);

/// SHA-256 over every parameter tensor (name, shape, little-endian bytes).
template <typename T>
std::string parameter_digest(const Sequential<T>& net);

}  // namespace twoview
