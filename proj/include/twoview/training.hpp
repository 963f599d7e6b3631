#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twoview/nets.hpp"
#include "twoview/optim.hpp"
#include "twoview/patch_pipeline.hpp"

namespace twoview {

struct TrainConfig {
  double learning_rate = 2e-4;
  int batch_size = 64;
  int epochs = 0;  // required, no silent default
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;
  bool keep_best = false;          // snapshot the best-validation-accuracy epoch
  bool repair_each_epoch = false;  // multi-view only

  void validate() const;  // throws DataError
  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

nlohmann::ordered_json to_json(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 when no validation data

  // epoch,train_loss,train_acc,val_loss,val_acc,seconds
  std::string to_csv() const;
};

template <typename Model>
struct TrainResult {
  TrainHistory history;
  std::optional<Model> best;  // set when keep_best and validation data exist
};

/// Batch of whitened patches as B x H x W x 3.
template <typename T>
Tensor<T> make_batch(std::span<const NormalizedPatch* const> patches);

/// Single-view training on mixed surface and section patches: mean
/// cross-entropy, Adam, per-epoch shuffle derived from (seed, epoch).
/// Throws TrainingError on a non-finite loss, naming epoch and batch.
template <typename T>
TrainResult<SingleViewModel<T>> train_single_view(SingleViewModel<T>& model, std::span<const NormalizedPatch> train,
                                                  std::span<const NormalizedPatch> val, const TrainConfig& config);

/// Sum over batches of (batch mean loss * batch size), batches visited in
/// the given order; inference mode, no updates.
template <typename T>
double dataset_loss(const SingleViewModel<T>& model, std::span<const NormalizedPatch> data,
                    const std::vector<std::vector<std::size_t>>& batches);

template <typename T>
FeatureExtractor<T> freeze_features(const SingleViewModel<T>& model);
template <typename T>
FeatureExtractor<T> freeze_features(const FeatureExtractor<T>& extractor);

/// Two bitwise copies of a frozen extractor plus fresh fusion/head layers.
/// Throws DataError when the extractor is not frozen.
template <typename T>
MultiViewModel<T> build_multiview(const FeatureExtractor<T>& frozen, FusionStrategy strategy, int num_classes,
                                  std::vector<int> head_hidden, std::uint64_t init_seed);

enum class PairingPolicy : std::uint8_t { specimen_first, class_random };

std::string_view to_string(PairingPolicy policy);
std::optional<PairingPolicy> parse_pairing(std::string_view name);

struct PatchPair {
  const NormalizedPatch* surface = nullptr;
  const NormalizedPatch* section = nullptr;
  ClassIndex label = 0;
  bool specimen_match = false;
};

/// One pair per surface patch, in input order. specimen_first draws the
/// section partner from the same specimen when possible, else from the same
/// class; class_random always draws from the same class.
/// Throws DataError naming a class that has surface but no section patches.
std::vector<PatchPair> pair_views(std::span<const NormalizedPatch> patches, PairingPolicy policy, std::uint64_t seed);

struct RepairSource {
  std::span<const NormalizedPatch> patches;
  PairingPolicy policy = PairingPolicy::specimen_first;
  std::uint64_t seed = 0;
};

/// Trains the fusion projection (concat) and head only. Frozen branch
/// features are computed once and cached; branch digests are re-checked at
/// the end and any drift raises TrainingError.
template <typename T>
TrainResult<MultiViewModel<T>> train_multiview(MultiViewModel<T>& model, std::span<const PatchPair> pairs,
                                               std::span<const PatchPair> val_pairs, const TrainConfig& config,
                                               const RepairSource* repair = nullptr);

// Inference helpers, batched.
template <typename T>
Tensor<T> predict_single_view(const SingleViewModel<T>& model, std::span<const NormalizedPatch* const> patches,
                              int batch_size = 64);
template <typename T>
Tensor<T> single_view_features(const SingleViewModel<T>& model, std::span<const NormalizedPatch* const> patches,
                               int batch_size = 64);
template <typename T>
Tensor<T> predict_multiview(const MultiViewModel<T>& model, std::span<const PatchPair> pairs, int batch_size = 64);
// Post-fusion vectors (before the concat projection), B x D'.
template <typename T>
Tensor<T> multiview_fused_features(const MultiViewModel<T>& model, std::span<const PatchPair> pairs,
                                   int batch_size = 64);

}  // namespace twoview
