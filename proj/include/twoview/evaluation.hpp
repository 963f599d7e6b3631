#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "twoview/checkpoint.hpp"
#include "twoview/training.hpp"

namespace twoview {

// Row = true class, column = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0);

  int classes() const { return classes_; }
  std::int64_t at(int truth, int predicted) const { return counts_.at(index(truth, predicted)); }
  void add(int truth, int predicted, std::int64_t n = 1);
  std::int64_t row_sum(int truth) const;
  std::int64_t column_sum(int predicted) const;
  std::int64_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t index(int truth, int predicted) const;
  int classes_ = 0;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion_from_predictions(int classes, std::span<const std::int32_t> truth,
                                           std::span<const std::int32_t> predicted);

enum class EvalContext : std::uint8_t { surface_only, section_only, mixed, paired };

std::string_view to_string(EvalContext context);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  std::int64_t support = 0;
  bool no_predictions = false;  // empty predicted column, precision set to 0
};

struct MetricsReport {
  std::string model_id;
  EvalContext context = EvalContext::mixed;
  std::uint64_t seed = 0;
  std::vector<ClassMetrics> per_class;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double accuracy = 0.0;
  std::int64_t support = 0;
  ConfusionMatrix confusion;
};

/// Throws DataError on an all-zero matrix.
MetricsReport metrics_from_confusion(const ConfusionMatrix& cm);

/// Throws DataError on an empty item list.
template <typename T>
ConfusionMatrix confusion(const SingleViewModel<T>& model, std::span<const NormalizedPatch* const> items,
                          int batch_size = 64);
template <typename T>
ConfusionMatrix confusion(const MultiViewModel<T>& model, std::span<const PatchPair> pairs, int batch_size = 64);

struct NamedModel {
  std::string id;  // empty: derived from the model, e.g. SV-mini, MV-mini-max
  const AnyModel* model = nullptr;
};

std::string default_model_id(const AnyModel& model);

struct SuiteOptions {
  PairingPolicy pairing = PairingPolicy::specimen_first;
  std::uint64_t pairing_seed = 0;
  int batch_size = 64;
};

struct EvalSuite {
  std::vector<std::string> class_set;
  std::vector<MetricsReport> rows;
  std::vector<std::string> warnings;
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
  std::string to_text() const;
};

/// Single-view models give surface, section and mixed (union) rows;
/// multi-view models give one paired row. A context without data is
/// skipped with a warning.
EvalSuite evaluate_suite(const std::vector<NamedModel>& models, std::span<const NormalizedPatch> test,
                         const std::vector<std::string>& class_set, const SuiteOptions& options);

/// CSV: item_id,true_class,context,f0..f{D'-1}. Single-view models export
/// the extractor output per patch; multi-view models export the fused
/// vector per pair. Returns the number of rows written.
std::size_t export_features(const AnyModel& model, std::span<const NormalizedPatch> items,
                            const std::vector<std::string>& class_set, const SuiteOptions& options,
                            const std::filesystem::path& out);

}  // namespace twoview
