#include "twoview/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "twoview/error.hpp"
#include "twoview/version.hpp"

namespace twoview {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes), counts_(std::size_t(classes) * classes, 0) {
  if (classes < 0) throw DataError("negative class count");
}

std::size_t ConfusionMatrix::index(int truth, int predicted) const {
  if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
    throw DataError("class index outside the confusion matrix");
  }
  return std::size_t(truth) * classes_ + predicted;
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t n) {
  if (n < 0) throw DataError("negative confusion count");
  counts_[index(truth, predicted)] += n;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

std::int64_t ConfusionMatrix::column_sum(int predicted) const {
  std::int64_t s = 0;
  for (int t = 0; t < classes_; ++t) s += at(t, predicted);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

ConfusionMatrix confusion_from_predictions(int classes, std::span<const std::int32_t> truth,
                                           std::span<const std::int32_t> predicted) {
  if (truth.size() != predicted.size()) throw DataError("truth and prediction lists differ in length");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

std::string_view to_string(EvalContext context) {
  switch (context) {
    case EvalContext::surface_only: return "surface";
    case EvalContext::section_only: return "section";
    case EvalContext::mixed: return "mixed";
    case EvalContext::paired: return "paired";
  }
  return "?";
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw DataError("confusion matrix is empty");
  MetricsReport r;
  r.confusion = cm;
  r.support = total;
  std::int64_t diagonal = 0;
  double wp = 0.0, wr = 0.0;
  for (int c = 0; c < cm.classes(); ++c) {
    ClassMetrics m;
    const std::int64_t hit = cm.at(c, c);
    const std::int64_t col = cm.column_sum(c);
    m.support = cm.row_sum(c);
    m.no_predictions = col == 0;
    m.precision = col == 0 ? 0.0 : double(hit) / double(col);
    m.recall = m.support == 0 ? 0.0 : double(hit) / double(m.support);
    wp += double(m.support) * m.precision;
    wr += double(m.support) * m.recall;
    diagonal += hit;
    r.per_class.push_back(m);
  }
  r.weighted_precision = wp / double(total);
  r.weighted_recall = wr / double(total);
  r.accuracy = double(diagonal) / double(total);
  return r;
}

namespace {

template <typename T>
void tally(ConfusionMatrix& cm, const Tensor<T>& probs, std::span<const std::int32_t> labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], argmax_row<T>(probs.row(i)));
}

}  // namespace

template <typename T>
ConfusionMatrix confusion(const SingleViewModel<T>& model, std::span<const NormalizedPatch* const> items,
                          int batch_size) {
  if (items.empty()) throw DataError("empty test set");
  ConfusionMatrix cm(model.head.config.num_classes);
  std::vector<std::int32_t> labels;
  for (const auto* p : items) labels.push_back(p->label);
  tally(cm, predict_single_view(model, items, batch_size), labels);
  return cm;
}

template <typename T>
ConfusionMatrix confusion(const MultiViewModel<T>& model, std::span<const PatchPair> pairs, int batch_size) {
  if (pairs.empty()) throw DataError("empty test set");
  ConfusionMatrix cm(model.head.config.num_classes);
  std::vector<std::int32_t> labels;
  for (const auto& p : pairs) labels.push_back(p.label);
  tally(cm, predict_multiview(model, pairs, batch_size), labels);
  return cm;
}

template ConfusionMatrix confusion<float>(const SingleViewModel<float>&, std::span<const NormalizedPatch* const>, int);
template ConfusionMatrix confusion<double>(const SingleViewModel<double>&, std::span<const NormalizedPatch* const>,
                                           int);
template ConfusionMatrix confusion<float>(const MultiViewModel<float>&, std::span<const PatchPair>, int);
template ConfusionMatrix confusion<double>(const MultiViewModel<double>&, std::span<const PatchPair>, int);

std::string default_model_id(const AnyModel& model) {
  return std::visit(
      [](const auto& m) -> std::string {
        using M = std::decay_t<decltype(m)>;
        if constexpr (requires { m.extractor; }) {
          return "SV-" + std::string(to_string(m.extractor.config.family));
        } else {
          (void)sizeof(M);
          return "MV-" + std::string(to_string(m.branch_surface.config.family)) +
                 (m.fusion == FusionStrategy::maxpool ? "-max" : "-conc");
        }
      },
      model);
}

namespace {

int model_classes(const AnyModel& model) {
  return std::visit([](const auto& m) { return m.head.config.num_classes; }, model);
}

std::vector<const NormalizedPatch*> select(std::span<const NormalizedPatch> test, std::optional<ViewKind> view) {
  std::vector<const NormalizedPatch*> out;
  for (const auto& p : test) {
    if (!view || p.view == *view) out.push_back(&p);
  }
  return out;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string lpad(const std::string& s, std::size_t width) {
  return s.size() < width ? std::string(width - s.size(), ' ') + s : s;
}

}  // namespace

EvalSuite evaluate_suite(const std::vector<NamedModel>& models, std::span<const NormalizedPatch> test,
                         const std::vector<std::string>& class_set, const SuiteOptions& options) {
  EvalSuite suite;
  suite.class_set = class_set;
  suite.seeds["pairing"] = options.pairing_seed;
  suite.seeds["pairing_policy"] = std::string(to_string(options.pairing));
  const auto surface = select(test, ViewKind::surface);
  const auto section = select(test, ViewKind::section);
  const auto mixed = select(test, std::nullopt);

  for (const auto& named : models) {
    const AnyModel& any = *named.model;
    const std::string id = named.id.empty() ? default_model_id(any) : named.id;
    if (model_classes(any) != int(class_set.size())) {
      throw DataError("model '" + id + "' predicts " + std::to_string(model_classes(any)) +
                      " classes but the test set has " + std::to_string(class_set.size()));
    }
    auto push = [&](const ConfusionMatrix& cm, EvalContext context) {
      auto report = metrics_from_confusion(cm);
      report.model_id = id;
      report.context = context;
      report.seed = options.pairing_seed;
      suite.rows.push_back(std::move(report));
    };
    std::visit(
        [&](const auto& m) {
          if constexpr (requires { m.extractor; }) {
            const std::pair<const std::vector<const NormalizedPatch*>*, EvalContext> contexts[] = {
                {&surface, EvalContext::surface_only},
                {&section, EvalContext::section_only},
                {&mixed, EvalContext::mixed}};
            for (const auto& [items, context] : contexts) {
              if (items->empty()) {
                suite.warnings.push_back(id + ": no " + std::string(to_string(context)) + " test patches, row omitted");
                continue;
              }
              push(confusion(m, std::span<const NormalizedPatch* const>(*items), options.batch_size), context);
            }
          } else {
            std::vector<PatchPair> pairs;
            try {
              pairs = pair_views(test, options.pairing, options.pairing_seed);
            } catch (const DataError& e) {
              suite.warnings.push_back(id + ": " + e.what() + ", row omitted");
              return;
            }
            if (pairs.empty()) {
              suite.warnings.push_back(id + ": no surface/section pairs in the test set, row omitted");
              return;
            }
            push(confusion(m, std::span<const PatchPair>(pairs), options.batch_size), EvalContext::paired);
          }
        },
        any);
  }
  return suite;
}

namespace {

const MetricsReport* find_row(const EvalSuite& suite, const std::string& id, EvalContext context) {
  for (const auto& r : suite.rows) {
    if (r.model_id == id && r.context == context) return &r;
  }
  return nullptr;
}

std::vector<std::string> model_order(const EvalSuite& suite) {
  std::vector<std::string> ids;
  for (const auto& r : suite.rows) {
    if (std::find(ids.begin(), ids.end(), r.model_id) == ids.end()) ids.push_back(r.model_id);
  }
  return ids;
}

struct WeightedPair {
  double precision, recall;
};

// Support-weighted mean of the surface and section rows.
std::optional<WeightedPair> view_average(const EvalSuite& suite, const std::string& id) {
  const auto* s = find_row(suite, id, EvalContext::surface_only);
  const auto* x = find_row(suite, id, EvalContext::section_only);
  if (!s || !x) return std::nullopt;
  const double n = double(s->support + x->support);
  return WeightedPair{(double(s->support) * s->weighted_precision + double(x->support) * x->weighted_precision) / n,
                      (double(s->support) * s->weighted_recall + double(x->support) * x->weighted_recall) / n};
}

}  // namespace

nlohmann::ordered_json EvalSuite::to_json() const {
  nlohmann::ordered_json j;
  j["toolkit_version"] = kToolkitVersion;
  j["classes"] = class_set;
  j["seeds"] = seeds;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["model"] = r.model_id;
    row["context"] = std::string(to_string(r.context));
    row["seed"] = r.seed;
    row["weighted_precision"] = r.weighted_precision;
    row["weighted_recall"] = r.weighted_recall;
    row["accuracy"] = r.accuracy;
    row["support"] = r.support;
    auto& per = row["per_class"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
      const auto& m = r.per_class[c];
      per.push_back({{"class", c < class_set.size() ? class_set[c] : std::to_string(c)},
                     {"precision", m.precision},
                     {"recall", m.recall},
                     {"support", m.support},
                     {"no_predictions", m.no_predictions}});
    }
    auto& cm = row["confusion"] = nlohmann::ordered_json::array();
    for (int t = 0; t < r.confusion.classes(); ++t) {
      auto line = nlohmann::ordered_json::array();
      for (int p = 0; p < r.confusion.classes(); ++p) line.push_back(r.confusion.at(t, p));
      cm.push_back(line);
    }
    j["rows"].push_back(row);
  }
  j["sv_view_average"] = nlohmann::ordered_json::object();
  for (const auto& id : model_order(*this)) {
    if (const auto avg = view_average(*this, id)) {
      j["sv_view_average"][id] = {{"weighted_precision", avg->precision}, {"weighted_recall", avg->recall}};
    }
  }
  j["warnings"] = warnings;
  return j;
}

std::string EvalSuite::to_text() const {
  std::ostringstream out;
  out << "toolkit " << kToolkitVersion << "  seeds " << seeds.dump() << "\n\n";
  const std::size_t id_width = 18, cell = 10;
  out << pad("Model", id_width);
  for (const char* h : {"Surf P", "Surf R", "Sect P", "Sect R", "Mixed P", "Mixed R"}) out << lpad(h, cell);
  out << '\n';
  for (const auto& id : model_order(*this)) {
    out << pad(id, id_width);
    for (auto context : {EvalContext::surface_only, EvalContext::section_only}) {
      const auto* r = find_row(*this, id, context);
      out << lpad(r ? fixed(r->weighted_precision) : "--", cell) << lpad(r ? fixed(r->weighted_recall) : "--", cell);
    }
    const auto* mixed = find_row(*this, id, EvalContext::mixed);
    if (!mixed) mixed = find_row(*this, id, EvalContext::paired);
    out << lpad(mixed ? fixed(mixed->weighted_precision) : "--", cell)
        << lpad(mixed ? fixed(mixed->weighted_recall) : "--", cell) << '\n';
  }
  bool any_avg = false;
  for (const auto& id : model_order(*this)) {
    if (const auto avg = view_average(*this, id)) {
      if (!any_avg) out << "\nsurface/section support-weighted average (alternative Mixed reading)\n";
      any_avg = true;
      out << pad(id, id_width) << lpad(fixed(avg->precision), cell) << lpad(fixed(avg->recall), cell) << '\n';
    }
  }
  for (const auto& r : rows) {
    out << '\n' << r.model_id << " [" << to_string(r.context) << "]  accuracy " << fixed(r.accuracy) << "  n "
        << r.support << '\n';
    out << pad("class", 8) << lpad("P", cell) << lpad("R", cell) << lpad("support", cell) << '\n';
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
      const auto& m = r.per_class[c];
      out << pad(c < class_set.size() ? class_set[c] : std::to_string(c), 8) << lpad(fixed(m.precision), cell)
          << lpad(fixed(m.recall), cell) << lpad(std::to_string(m.support), cell)
          << (m.no_predictions ? "  (never predicted)" : "") << '\n';
    }
  }
  for (const auto& w : warnings) out << "\nwarning: " << w;
  if (!warnings.empty()) out << '\n';
  return out.str();
}

namespace {

template <typename T>
void write_rows(std::ostream& out, const Tensor<T>& features, const std::vector<std::string>& ids,
                const std::vector<std::int32_t>& labels, const std::vector<std::string>& contexts,
                const std::vector<std::string>& class_set) {
  const char* format = std::is_same_v<T, double> ? "%.17g" : "%.9g";
  const std::size_t d = features.dim(1);
  out << "item_id,true_class,context";
  for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << ',' << class_set.at(std::size_t(labels[i])) << ',' << contexts[i];
    for (const T v : features.row(i)) {
      std::snprintf(buf, sizeof buf, format, double(v));
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace

std::size_t export_features(const AnyModel& model, std::span<const NormalizedPatch> items,
                            const std::vector<std::string>& class_set, const SuiteOptions& options,
                            const std::filesystem::path& out_path) {
  if (items.empty()) throw DataError("no items to export");
  std::ostringstream out;
  std::size_t rows = 0;
  std::visit(
      [&](const auto& m) {
        std::vector<std::string> ids, contexts;
        std::vector<std::int32_t> labels;
        if constexpr (requires { m.extractor; }) {
          std::vector<const NormalizedPatch*> ptrs;
          for (const auto& p : items) {
            ptrs.push_back(&p);
            ids.push_back(p.patch_id);
            labels.push_back(p.label);
            contexts.emplace_back(to_string(p.view));
          }
          write_rows(out, single_view_features(m, std::span<const NormalizedPatch* const>(ptrs), options.batch_size),
                     ids, labels, contexts, class_set);
        } else {
          const auto pairs = pair_views(items, options.pairing, options.pairing_seed);
          if (pairs.empty()) throw DataError("no surface/section pairs to export");
          for (const auto& p : pairs) {
            ids.push_back(p.surface->patch_id + "+" + p.section->patch_id);
            labels.push_back(p.label);
            contexts.emplace_back("paired");
          }
          write_rows(out, multiview_fused_features(m, std::span<const PatchPair>(pairs), options.batch_size), ids,
                     labels, contexts, class_set);
        }
        rows = ids.size();
      },
      model);
  std::ofstream file(out_path, std::ios::binary);
  if (!file) throw DataError("cannot write " + out_path.string());
  file << out.str();
  if (!file) throw DataError("failed writing " + out_path.string());
  return rows;
}

}  // namespace twoview
