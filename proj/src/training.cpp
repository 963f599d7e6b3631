#include "twoview/training.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "twoview/digest.hpp"
#include "twoview/error.hpp"
#include "twoview/random.hpp"

namespace twoview {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw DataError("learning_rate must be >= 0");
  if (batch_size < 1) throw DataError("batch_size must be >= 1");
  if (epochs < 1) throw DataError("epochs must be >= 1 (no default is applied)");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0)) throw DataError("invalid Adam constants");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"loss", "cross_entropy"},        {"optimizer", "adam"},        {"beta1", c.beta1},
          {"beta2", c.beta2},               {"epsilon", c.epsilon},       {"seed", c.seed},
          {"shuffle", c.shuffle},           {"keep_best", c.keep_best},   {"repair_each_epoch", c.repair_each_epoch}};
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',';
    if (e.val_loss) out << *e.val_loss;
    out << ',';
    if (e.val_accuracy) out << *e.val_accuracy;
    out << ',' << e.seconds << '\n';
  }
  return out.str();
}

std::string_view to_string(PairingPolicy policy) {
  return policy == PairingPolicy::specimen_first ? "specimen_first" : "class_random";
}

std::optional<PairingPolicy> parse_pairing(std::string_view name) {
  if (name == "specimen_first") return PairingPolicy::specimen_first;
  if (name == "class_random") return PairingPolicy::class_random;
  return std::nullopt;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::size_t> epoch_order(std::size_t n, const TrainConfig& config, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (config.shuffle) {
    Rng rng(derive_seed(config.seed, "shuffle:" + std::to_string(epoch)));
    rng.shuffle(std::span(order));
  }
  return order;
}

std::uint64_t dropout_seed(const TrainConfig& config, int epoch, std::size_t batch) {
  return derive_seed(config.seed, "dropout:" + std::to_string(epoch) + ":" + std::to_string(batch));
}

template <typename T>
void check_finite(double loss, int epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

template <typename T>
std::size_t count_correct(const Tensor<T>& scores, std::span<const std::int32_t> labels) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) correct += argmax_row<T>(scores.row(r)) == labels[r] ? 1 : 0;
  return correct;
}

template <typename T>
std::vector<Param<T>*> trainable(Sequential<T>& net) {
  std::vector<Param<T>*> out;
  for (auto& p : net.params()) out.push_back(&p);
  return out;
}

template <typename T>
struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

template <typename T>
LossAccuracy<T> evaluate_single(const SingleViewModel<T>& model, std::span<const NormalizedPatch> data, int batch_size) {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(data.size(), start + std::size_t(batch_size));
    std::vector<const NormalizedPatch*> ptrs;
    std::vector<std::int32_t> labels;
    for (std::size_t i = start; i < end; ++i) {
      ptrs.push_back(&data[i]);
      labels.push_back(data[i].label);
    }
    const auto logits = model.head.net.forward(model.extractor.net.forward(make_batch<T>(ptrs)));
    loss_sum += cross_entropy<T>(logits, labels, nullptr) * double(end - start);
    correct += count_correct(logits, labels);
  }
  return {loss_sum / double(data.size()), double(correct) / double(data.size())};
}

template <typename T>
void check_labels(std::span<const NormalizedPatch> data, int num_classes) {
  for (const auto& p : data) {
    if (p.label < 0 || p.label >= num_classes) {
      throw DataError("patch '" + p.patch_id + "' has label " + std::to_string(p.label) + " outside the head's " +
                      std::to_string(num_classes) + " classes");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> make_batch(std::span<const NormalizedPatch* const> patches) {
  if (patches.empty()) throw DataError("make_batch: empty batch");
  const int h = patches.front()->height, w = patches.front()->width;
  Tensor<T> batch({patches.size(), std::size_t(h), std::size_t(w), 3});
  const std::size_t per = std::size_t(h) * w * 3;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto* p = patches[i];
    if (p->height != h || p->width != w || p->values.size() != per) {
      throw ShapeError("make_batch: patch '" + p->patch_id + "' has a different size");
    }
    std::copy(p->values.begin(), p->values.end(), batch.data() + i * per);
  }
  return batch;
}

template <typename T>
TrainResult<SingleViewModel<T>> train_single_view(SingleViewModel<T>& model, std::span<const NormalizedPatch> train,
                                                  std::span<const NormalizedPatch> val, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw DataError("empty training set");
  check_labels<T>(train, model.head.config.num_classes);
  check_labels<T>(val, model.head.config.num_classes);

  std::vector<Param<T>*> params;
  if (!model.extractor.frozen) params = trainable(model.extractor.net);
  for (auto* p : trainable(model.head.net)) params.push_back(p);
  Adam<T> adam(params, config.adam());

  TrainResult<SingleViewModel<T>> result;
  double best_val = -1.0;
  const std::size_t bs = std::size_t(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start_time = Clock::now();
    const auto order = epoch_order(train.size(), config, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += bs, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<const NormalizedPatch*> ptrs;
      std::vector<std::int32_t> labels;
      for (std::size_t k = start; k < end; ++k) {
        ptrs.push_back(&train[order[k]]);
        labels.push_back(train[order[k]].label);
      }
      const ForwardMode mode{true, dropout_seed(config, epoch, batch_no)};
      Trace<T> fx_trace, head_trace;
      const auto features = model.extractor.net.forward(make_batch<T>(ptrs), mode, &fx_trace);
      const auto logits = model.head.net.forward(features, mode, &head_trace);
      Tensor<T> grad;
      const double loss = cross_entropy(logits, labels, &grad);
      check_finite<T>(loss, epoch, batch_no);
      loss_sum += loss * double(end - start);
      correct += count_correct(logits, labels);
      const auto grad_features = model.head.net.backward(grad, head_trace, !model.extractor.frozen);
      if (!model.extractor.frozen) model.extractor.net.backward(grad_features, fx_trace, false);
      adam.step();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(train.size());
    rec.train_accuracy = double(correct) / double(train.size());
    if (!val.empty()) {
      const auto v = evaluate_single(model, val, config.batch_size);
      rec.val_loss = v.loss;
      rec.val_accuracy = v.accuracy;
      if (v.accuracy > best_val) {
        best_val = v.accuracy;
        result.history.best_epoch = epoch;
        if (config.keep_best) result.best = model;
      }
    }
    rec.seconds = seconds_since(start_time);
    result.history.epochs.push_back(rec);
  }
  return result;
}

template <typename T>
double dataset_loss(const SingleViewModel<T>& model, std::span<const NormalizedPatch> data,
                    const std::vector<std::vector<std::size_t>>& batches) {
  double total = 0.0;
  for (const auto& batch : batches) {
    std::vector<const NormalizedPatch*> ptrs;
    std::vector<std::int32_t> labels;
    for (auto i : batch) {
      ptrs.push_back(&data[i]);
      labels.push_back(data[i].label);
    }
    const auto logits = model.head.net.forward(model.extractor.net.forward(make_batch<T>(ptrs)));
    total += cross_entropy<T>(logits, labels, nullptr) * double(batch.size());
  }
  return total;
}

template <typename T>
FeatureExtractor<T> freeze_features(const SingleViewModel<T>& model) {
  return freeze_features(model.extractor);
}

template <typename T>
FeatureExtractor<T> freeze_features(const FeatureExtractor<T>& extractor) {
  FeatureExtractor<T> frozen = extractor;
  frozen.frozen = true;
  for (auto& p : frozen.net.params()) p.grad = Tensor<T>{};
  return frozen;
}

template <typename T>
MultiViewModel<T> build_multiview(const FeatureExtractor<T>& frozen, FusionStrategy strategy, int num_classes,
                                  std::vector<int> head_hidden, std::uint64_t init_seed) {
  if (!frozen.frozen) throw DataError("build_multiview requires a frozen feature extractor");
  MultiViewModel<T> mv;
  mv.branch_surface = frozen;
  mv.branch_section = frozen;
  mv.fusion = strategy;
  const int d = frozen.config.feature_dim;
  if (strategy == FusionStrategy::concat) {
    mv.projection = Sequential<T>({1, 1, 2 * d, true}, {LayerSpec::dense(d), LayerSpec::relu()});
    mv.projection->set_name("projection");
    mv.projection->initialize(derive_seed(init_seed, "projection"));
  }
  mv.head = build_head<T>(HeadConfig::standard(d, num_classes, std::move(head_hidden)), derive_seed(init_seed, "head"));
  return mv;
}

std::vector<PatchPair> pair_views(std::span<const NormalizedPatch> patches, PairingPolicy policy, std::uint64_t seed) {
  std::map<ClassIndex, std::vector<const NormalizedPatch*>> sections_by_class;
  std::map<std::pair<ClassIndex, std::string>, std::vector<const NormalizedPatch*>> sections_by_specimen;
  for (const auto& p : patches) {
    if (p.view != ViewKind::section) continue;
    sections_by_class[p.label].push_back(&p);
    sections_by_specimen[{p.label, p.specimen_id}].push_back(&p);
  }
  Rng rng(derive_seed(seed, "pair_views"));
  std::vector<PatchPair> pairs;
  for (const auto& p : patches) {
    if (p.view != ViewKind::surface) continue;
    const std::vector<const NormalizedPatch*>* pool = nullptr;
    bool match = false;
    if (policy == PairingPolicy::specimen_first) {
      const auto it = sections_by_specimen.find({p.label, p.specimen_id});
      if (it != sections_by_specimen.end()) {
        pool = &it->second;
        match = true;
      }
    }
    if (!pool) {
      const auto it = sections_by_class.find(p.label);
      if (it == sections_by_class.end()) {
        throw DataError("class " + std::to_string(p.label) + " has surface patches but no section patches to pair with");
      }
      pool = &it->second;
    }
    const auto* partner = (*pool)[rng.uniform_index(pool->size())];
    pairs.push_back({&p, partner, p.label, match || partner->specimen_id == p.specimen_id});
  }
  return pairs;
}

namespace {

template <typename T>
Tensor<T> extract_all(const FeatureExtractor<T>& fx, const std::vector<const NormalizedPatch*>& patches,
                      int batch_size) {
  const std::size_t d = std::size_t(fx.config.feature_dim);
  Tensor<T> out({patches.size(), d});
  for (std::size_t start = 0; start < patches.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(patches.size(), start + std::size_t(batch_size));
    const std::span<const NormalizedPatch* const> chunk(patches.data() + start, end - start);
    const auto f = forward_features(fx, make_batch<T>(chunk));
    std::copy(f.values().begin(), f.values().end(), out.data() + start * d);
  }
  return out;
}

// Frozen-branch features, computed once per distinct patch.
template <typename T>
struct FeatureCache {
  std::unordered_map<const NormalizedPatch*, std::size_t> surface_row, section_row;
  Tensor<T> surface, section;

  void build(const MultiViewModel<T>& model, const std::vector<std::span<const PatchPair>>& sets,
             std::span<const NormalizedPatch> extra, int batch_size) {
    std::vector<const NormalizedPatch*> surf, sect;
    auto add = [](const NormalizedPatch* p, auto& rows, auto& list) {
      if (rows.emplace(p, list.size()).second) list.push_back(p);
    };
    for (const auto& set : sets) {
      for (const auto& pair : set) {
        add(pair.surface, surface_row, surf);
        add(pair.section, section_row, sect);
      }
    }
    for (const auto& p : extra) {
      if (p.view == ViewKind::surface) add(&p, surface_row, surf);
      else add(&p, section_row, sect);
    }
    surface = extract_all(model.branch_surface, surf, batch_size);
    section = extract_all(model.branch_section, sect, batch_size);
  }

  std::pair<Tensor<T>, Tensor<T>> gather(std::span<const PatchPair> pairs, std::span<const std::size_t> idx) const {
    const std::size_t d = surface.dim(1);
    Tensor<T> a({idx.size(), d}), b({idx.size(), d});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& pair = pairs[idx[k]];
      const auto sa = surface.row(surface_row.at(pair.surface));
      const auto sb = section.row(section_row.at(pair.section));
      std::copy(sa.begin(), sa.end(), a.row(k).begin());
      std::copy(sb.begin(), sb.end(), b.row(k).begin());
    }
    return {std::move(a), std::move(b)};
  }
};

template <typename T>
Tensor<T> multiview_logits(const MultiViewModel<T>& model, const Tensor<T>& fused, const ForwardMode& mode,
                           Trace<T>* projection_trace, Trace<T>* head_trace) {
  if (model.projection) {
    return model.head.net.forward(model.projection->forward(fused, mode, projection_trace), mode, head_trace);
  }
  return model.head.net.forward(fused, mode, head_trace);
}

template <typename T>
LossAccuracy<T> evaluate_pairs(const MultiViewModel<T>& model, const FeatureCache<T>& cache,
                               std::span<const PatchPair> pairs, int batch_size) {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < pairs.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(pairs.size(), start + std::size_t(batch_size));
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    std::vector<std::int32_t> labels;
    for (auto i : idx) labels.push_back(pairs[i].label);
    const auto [a, b] = cache.gather(pairs, idx);
    const auto logits = multiview_logits<T>(model, fuse(a, b, model.fusion), {}, nullptr, nullptr);
    loss_sum += cross_entropy<T>(logits, labels, nullptr) * double(idx.size());
    correct += count_correct(logits, labels);
  }
  return {loss_sum / double(pairs.size()), double(correct) / double(pairs.size())};
}

}  // namespace

template <typename T>
TrainResult<MultiViewModel<T>> train_multiview(MultiViewModel<T>& model, std::span<const PatchPair> pairs,
                                               std::span<const PatchPair> val_pairs, const TrainConfig& config,
                                               const RepairSource* repair) {
  config.validate();
  if (!model.branch_surface.frozen || !model.branch_section.frozen) {
    throw DataError("multi-view training requires frozen branches");
  }
  if (pairs.empty()) throw DataError("empty training set");
  const int classes = model.head.config.num_classes;
  for (const auto& set : {pairs, val_pairs}) {
    for (const auto& p : set) {
      if (p.label < 0 || p.label >= classes) throw DataError("pair label outside the head's class range");
    }
  }
  const std::string surface_digest = parameter_digest(model.branch_surface.net);
  const std::string section_digest = parameter_digest(model.branch_section.net);

  const bool repairing = config.repair_each_epoch && repair != nullptr;
  FeatureCache<T> cache;
  cache.build(model, {pairs, val_pairs}, repairing ? repair->patches : std::span<const NormalizedPatch>{},
              config.batch_size);

  std::vector<Param<T>*> params;
  if (model.projection) params = trainable(*model.projection);
  for (auto* p : trainable(model.head.net)) params.push_back(p);
  Adam<T> adam(params, config.adam());

  TrainResult<MultiViewModel<T>> result;
  double best_val = -1.0;
  std::vector<PatchPair> repaired;
  const std::size_t bs = std::size_t(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start_time = Clock::now();
    std::span<const PatchPair> current = pairs;
    if (repairing && epoch > 1) {
      repaired = pair_views(repair->patches, repair->policy, derive_seed(repair->seed, "epoch:" + std::to_string(epoch)));
      current = repaired;
    }
    const auto order = epoch_order(current.size(), config, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += bs, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + bs);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::int32_t> labels;
      for (auto i : idx) labels.push_back(current[i].label);
      const auto [a, b] = cache.gather(current, idx);
      const ForwardMode mode{true, dropout_seed(config, epoch, batch_no)};
      Trace<T> projection_trace, head_trace;
      const auto logits = multiview_logits<T>(model, fuse(a, b, model.fusion), mode, &projection_trace, &head_trace);
      Tensor<T> grad;
      const double loss = cross_entropy(logits, labels, &grad);
      check_finite<T>(loss, epoch, batch_no);
      loss_sum += loss * double(idx.size());
      correct += count_correct(logits, labels);
      const auto grad_fused = model.head.net.backward(grad, head_trace, model.projection.has_value());
      if (model.projection) model.projection->backward(grad_fused, projection_trace, false);
      adam.step();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(current.size());
    rec.train_accuracy = double(correct) / double(current.size());
    if (!val_pairs.empty()) {
      const auto v = evaluate_pairs(model, cache, val_pairs, config.batch_size);
      rec.val_loss = v.loss;
      rec.val_accuracy = v.accuracy;
      if (v.accuracy > best_val) {
        best_val = v.accuracy;
        result.history.best_epoch = epoch;
        if (config.keep_best) result.best = model;
      }
    }
    rec.seconds = seconds_since(start_time);
    result.history.epochs.push_back(rec);
  }

  if (parameter_digest(model.branch_surface.net) != surface_digest ||
      parameter_digest(model.branch_section.net) != section_digest) {
    throw TrainingError("internal error: frozen branch parameters changed during multi-view training");
  }
  return result;
}

template <typename T>
Tensor<T> single_view_features(const SingleViewModel<T>& model, std::span<const NormalizedPatch* const> patches,
                               int batch_size) {
  return extract_all(model.extractor, {patches.begin(), patches.end()}, batch_size);
}

template <typename T>
Tensor<T> predict_single_view(const SingleViewModel<T>& model, std::span<const NormalizedPatch* const> patches,
                              int batch_size) {
  const auto features = single_view_features(model, patches, batch_size);
  return classify(features, model.head);
}

template <typename T>
Tensor<T> multiview_fused_features(const MultiViewModel<T>& model, std::span<const PatchPair> pairs, int batch_size) {
  std::vector<const NormalizedPatch*> surf, sect;
  for (const auto& p : pairs) {
    surf.push_back(p.surface);
    sect.push_back(p.section);
  }
  return fuse(extract_all(model.branch_surface, surf, batch_size), extract_all(model.branch_section, sect, batch_size),
              model.fusion);
}

template <typename T>
Tensor<T> predict_multiview(const MultiViewModel<T>& model, std::span<const PatchPair> pairs, int batch_size) {
  return softmax_rows(multiview_logits<T>(model, multiview_fused_features(model, pairs, batch_size), {}, nullptr,
                                          nullptr));
}

#define TWOVIEW_INSTANTIATE_TRAINING(T)                                                                               \
  template Tensor<T> make_batch<T>(std::span<const NormalizedPatch* const>);                                        \
  template TrainResult<SingleViewModel<T>> train_single_view<T>(SingleViewModel<T>&, std::span<const NormalizedPatch>, \
                                                                std::span<const NormalizedPatch>, const TrainConfig&); \
  template double dataset_loss<T>(const SingleViewModel<T>&, std::span<const NormalizedPatch>,                     \
                                  const std::vector<std::vector<std::size_t>>&);                                    \
  template FeatureExtractor<T> freeze_features<T>(const SingleViewModel<T>&);                                       \
  template FeatureExtractor<T> freeze_features<T>(const FeatureExtractor<T>&);                                      \
  template MultiViewModel<T> build_multiview<T>(const FeatureExtractor<T>&, FusionStrategy, int, std::vector<int>,  \
                                                std::uint64_t);                                                     \
  template TrainResult<MultiViewModel<T>> train_multiview<T>(MultiViewModel<T>&, std::span<const PatchPair>,        \
                                                             std::span<const PatchPair>, const TrainConfig&,        \
                                                             const RepairSource*);                                  \
  template Tensor<T> predict_single_view<T>(const SingleViewModel<T>&, std::span<const NormalizedPatch* const>, int); \
  template Tensor<T> single_view_features<T>(const SingleViewModel<T>&, std::span<const NormalizedPatch* const>, int); \
  template Tensor<T> predict_multiview<T>(const MultiViewModel<T>&, std::span<const PatchPair>, int);               \
  template Tensor<T> multiview_fused_features<T>(const MultiViewModel<T>&, std::span<const PatchPair>, int);

TWOVIEW_INSTANTIATE_TRAINING(float)
TWOVIEW_INSTANTIATE_TRAINING(double)

}  // namespace twoview
