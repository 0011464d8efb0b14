#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ot3d/binary_io.hpp"
#include "ot3d/cloud_io.hpp"
#include "ot3d/config.hpp"
#include "ot3d/datasets.hpp"
#include "ot3d/features.hpp"
#include "ot3d/learner.hpp"
#include "ot3d/protocol.hpp"

namespace ot3d {

/// Wraps a Learner for the simulated teacher. Protocol runs are closed-set:
/// the threshold is infinite, so the answer is always the minimum-OCD category.
class LearnerAgent : public Agent {
 public:
  explicit LearnerAgent(Learner learner) : learner_(std::move(learner)) {}

  void teach(const std::string& category, const std::vector<View>& views) override {
    std::vector<FeatureSet> sets;
    for (const auto& v : views) sets.push_back(v.features);
    learner_.teach(category, sets);
  }

  std::string classify(const View& view) override {
    return learner_.classify(view.features, std::numeric_limits<double>::infinity()).label;
  }

  void correct(const std::string& category, const View& view) override { learner_.correct(category, view.features); }

  std::map<std::string, std::size_t> instance_counts() const override { return learner_.instance_counts(); }

  const Learner& learner() const { return learner_; }

 private:
  Learner learner_;
};

/// How the views of a protocol run are obtained.
struct DatasetSource {
  std::string root;  // directory dataset; empty selects synthetic generation
  DatasetLayout layout = DatasetLayout::automatic;
  std::string provenance = "synthetic";
  std::vector<ShapeFamily> families = all_families();
  std::size_t views_per_category = 20;
  std::size_t points = 1500;
  double noise = 0.001;
  double scale_jitter = 0.1;
  bool random_yaw = true;
  std::uint64_t seed = 7;
};

/// Views of every family, generated with per-view seeds derived from
/// source.seed.
inline std::vector<std::pair<std::string, std::vector<PointCloud>>> synthetic_clouds(const DatasetSource& source) {
  std::vector<std::pair<std::string, std::vector<PointCloud>>> out;
  for (std::size_t f = 0; f < source.families.size(); ++f) {
    std::vector<PointCloud> clouds;
    for (std::size_t v = 0; v < source.views_per_category; ++v) {
      SyntheticShapeSpec spec;
      spec.family = source.families[f];
      spec.scale_jitter = source.scale_jitter;
      spec.noise = source.noise;
      spec.points = source.points;
      spec.random_yaw = source.random_yaw;
      spec.seed = derive_seed(source.seed, (static_cast<std::uint64_t>(spec.family) << 32) | v);
      clouds.push_back(generate_synthetic(spec));
    }
    out.emplace_back(to_string(source.families[f]), std::move(clouds));
  }
  return out;
}

inline ProtocolDataset make_protocol_dataset(const DatasetSource& source, const FeatureParams& features,
                                             std::vector<std::string>* warnings = nullptr) {
  ProtocolDataset dataset;
  if (source.root.empty()) {
    for (auto& [name, clouds] : synthetic_clouds(source)) {
      dataset.categories.push_back(name);
      std::vector<FeatureSet> views;
      for (const auto& c : clouds) views.push_back(extract_features(c, features));
      dataset.views.push_back(std::move(views));
    }
    return dataset;
  }
  const auto index = load_dataset(source.root, source.layout, source.provenance);
  if (warnings) *warnings = index.warnings;
  for (const auto& [name, files] : index.categories) {
    std::vector<FeatureSet> views;
    for (const auto& f : files) {
      try {
        views.push_back(extract_features(read_cloud_file(f), features));
      } catch (const Error& e) {
        if (warnings) warnings->push_back(f + ": " + e.what());
      }
    }
    if (views.empty()) continue;
    dataset.categories.push_back(name);
    dataset.views.push_back(std::move(views));
  }
  return dataset;
}

/// A learner whose generic dictionary and topics come from a pool of the
/// dataset's views (pool_fraction of all objects, labels unused).
inline Learner pooled_learner(const Params& params, const ProtocolDataset& dataset) {
  std::vector<FeatureSet> objects;
  for (const auto& views : dataset.views) objects.insert(objects.end(), views.begin(), views.end());
  Learner learner(params);
  learner.bootstrap_generic(objects);
  return learner;
}

struct ExperimentResult {
  ExperimentTrace trace;
  Metrics metrics;
  std::map<std::string, std::size_t> instances;
};

inline ExperimentResult run_learner_experiment(const Params& params, const ProtocolConfig& protocol,
                                               const ProtocolDataset& dataset) {
  Params p = params;
  p.seed = derive_seed(params.seed, protocol.seed);
  LearnerAgent agent(pooled_learner(p, dataset));
  ExperimentResult result;
  result.trace = run_experiment(protocol, dataset, agent);
  result.instances = agent.instance_counts();
  result.metrics = compute_metrics(result.trace, result.instances);
  return result;
}

// ---------------------------------------------------------------------------
// run-protocol configuration: learner keys (see Params) plus protocol and
// dataset keys.

struct RunConfig {
  Params params;
  ProtocolConfig protocol;
  DatasetSource source;

  static RunConfig parse(std::string_view text) {
    ConfigMap cfg = ConfigMap::parse(text);
    RunConfig rc;
    rc.params = Params::from_config(cfg);
    rc.protocol.tau = cfg.get_double("tau", rc.protocol.tau);
    rc.protocol.stall_window = cfg.get_uint("stall_window", rc.protocol.stall_window);
    rc.protocol.window_factor = cfg.get_uint("window_factor", rc.protocol.window_factor);
    rc.protocol.teach_views = cfg.get_uint("teach_views", rc.protocol.teach_views);
    rc.protocol.seed = cfg.get_uint("protocol_seed", rc.protocol.seed);
    rc.protocol.validate();
    rc.source.root = cfg.get_string("dataset", "");
    const auto layout = cfg.get_string("layout", "auto");
    rc.source.layout = layout == "flat" ? DatasetLayout::flat
                       : layout == "nested" ? DatasetLayout::nested
                                            : DatasetLayout::automatic;
    rc.source.provenance = cfg.get_string("provenance", rc.source.root.empty() ? "synthetic" : "external");
    std::vector<std::string> names;
    for (auto f : rc.source.families) names.push_back(to_string(f));
    rc.source.families.clear();
    for (const auto& n : cfg.get_list("families", names)) rc.source.families.push_back(parse_family(n));
    rc.source.views_per_category = cfg.get_uint("views_per_category", rc.source.views_per_category);
    rc.source.points = cfg.get_uint("points", rc.source.points);
    rc.source.noise = cfg.get_double("noise", rc.source.noise);
    rc.source.scale_jitter = cfg.get_double("scale_jitter", rc.source.scale_jitter);
    rc.source.random_yaw = cfg.get_bool("random_yaw", rc.source.random_yaw);
    rc.source.seed = cfg.get_uint("synthetic_seed", rc.source.seed);
    cfg.reject_unused();
    return rc;
  }
};

inline std::string format_metric(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << v;
  return os.str();
}

/// Summary CSV: a comment line naming the accuracy estimator, a header row,
/// one row per seed and a trailing mean row.
inline std::string summary_csv(const std::vector<std::pair<std::uint64_t, Metrics>>& rows,
                               const ProtocolConfig& protocol) {
  std::ostringstream os;
  os << "# running accuracy: " << protocol.estimator() << "; tau=" << protocol.tau
     << "; stall_window=" << protocol.stall_window << '\n';
  os << "seed,QCI,ALC,AIC,GCA,APA\n";
  Metrics mean;
  double qci = 0;
  for (const auto& [seed, m] : rows) {
    os << seed << ',' << m.qci << ',' << format_metric(m.alc) << ',' << format_metric(m.aic) << ','
       << format_metric(m.gca) << ',' << format_metric(m.apa) << '\n';
    qci += static_cast<double>(m.qci);
    mean.alc += m.alc;
    mean.aic += m.aic;
    mean.gca += m.gca;
    mean.apa += m.apa;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    os << "mean," << format_metric(qci / n) << ',' << format_metric(mean.alc / n) << ','
       << format_metric(mean.aic / n) << ',' << format_metric(mean.gca / n) << ',' << format_metric(mean.apa / n)
       << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// SVG: protocol accuracy per iteration (top) and global accuracy against the
// number of learned categories (bottom), one polyline per trace.

inline std::string render_svg(const std::vector<ExperimentTrace>& traces, double tau) {
  const double width = 720, panel = 260, margin = 50;
  const double height = 2 * panel + 3 * margin;
  std::size_t max_iter = 1, max_cat = 1;
  for (const auto& t : traces) {
    max_iter = std::max(max_iter, t.records.size());
    for (const auto& r : t.records) max_cat = std::max(max_cat, r.known_categories);
  }
  const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  auto frame = [&](double top, const std::string& title, const std::string& xlabel) {
    os << "<rect x=\"" << margin << "\" y=\"" << top << "\" width=\"" << width - 2 * margin << "\" height=\""
       << panel << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << margin << "\" y=\"" << top - 8 << "\">" << title << "</text>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"" << top + panel + 30 << "\" text-anchor=\"middle\">" << xlabel
       << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
      const double y = top + panel - panel * i / 4.0;
      os << "<text x=\"" << margin - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << i / 4.0 << "</text>\n";
    }
  };
  const double plot_w = width - 2 * margin;

  const double top1 = margin;
  frame(top1, "Protocol accuracy", "iteration");
  const double tau_y = top1 + panel * (1.0 - tau);
  os << "<line x1=\"" << margin << "\" y1=\"" << tau_y << "\" x2=\"" << width - margin << "\" y2=\"" << tau_y
     << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t t = 0; t < traces.size(); ++t) {
    os << "<polyline fill=\"none\" stroke=\"" << palette[t % 10] << "\" points=\"";
    for (std::size_t i = 0; i < traces[t].records.size(); ++i) {
      const double x = margin + plot_w * static_cast<double>(i + 1) / static_cast<double>(max_iter);
      const double y = top1 + panel * (1.0 - traces[t].records[i].accuracy);
      os << x << ',' << y << ' ';
    }
    os << "\"/>\n";
  }

  const double top2 = 2 * margin + panel + 20;
  frame(top2, "Global accuracy vs learned categories", "learned categories");
  for (std::size_t t = 0; t < traces.size(); ++t) {
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> by_cat;  // cumulative hits/questions at each count
    std::size_t hits = 0, questions = 0;
    for (const auto& r : traces[t].records) {
      if (r.question()) {
        ++questions;
        if (r.correct) ++hits;
      }
      by_cat[r.known_categories] = {hits, questions};
    }
    os << "<polyline fill=\"none\" stroke=\"" << palette[t % 10] << "\" points=\"";
    for (const auto& [cats, hq] : by_cat) {
      if (hq.second == 0) continue;
      const double acc = static_cast<double>(hq.first) / static_cast<double>(hq.second);
      const double x = margin + plot_w * static_cast<double>(cats) / static_cast<double>(max_cat);
      const double y = top2 + panel * (1.0 - acc);
      os << x << ',' << y << ' ';
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// k-fold cross-validation on a directory dataset.

struct CrossValidationResult {
  std::size_t folds = 0;
  std::size_t predictions = 0;
  std::size_t correct = 0;
  double accuracy() const { return predictions == 0 ? 0.0 : static_cast<double>(correct) / predictions; }
};

/// Each fold teaches every category its training views, then classifies the
/// held-out views (closed-set). The generic side is pooled from the training
/// views of that fold.
inline CrossValidationResult cross_validate(const ProtocolDataset& dataset, const Params& params, std::size_t folds,
                                            std::uint64_t seed) {
  require(folds >= 2, ErrorCode::invalid_argument, "cross-validation needs >= 2 folds");
  std::vector<std::vector<std::size_t>> fold_of(dataset.categories.size());
  Pcg32 rng(seed);
  for (std::size_t c = 0; c < dataset.categories.size(); ++c) {
    std::vector<std::size_t> order(dataset.views[c].size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(std::span<std::size_t>(order), rng);
    fold_of[c].resize(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) fold_of[c][order[i]] = i % folds;
  }
  CrossValidationResult result;
  result.folds = folds;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<FeatureSet> train_objects;
    for (std::size_t c = 0; c < dataset.categories.size(); ++c) {
      for (std::size_t v = 0; v < dataset.views[c].size(); ++v) {
        if (fold_of[c][v] != f) train_objects.push_back(dataset.views[c][v]);
      }
    }
    if (train_objects.empty()) continue;
    Learner learner(params);
    learner.bootstrap_generic(train_objects);
    for (std::size_t c = 0; c < dataset.categories.size(); ++c) {
      std::vector<FeatureSet> train;
      for (std::size_t v = 0; v < dataset.views[c].size(); ++v) {
        if (fold_of[c][v] != f) train.push_back(dataset.views[c][v]);
      }
      if (!train.empty()) learner.teach(dataset.categories[c], train);
    }
    for (std::size_t c = 0; c < dataset.categories.size(); ++c) {
      for (std::size_t v = 0; v < dataset.views[c].size(); ++v) {
        if (fold_of[c][v] != f) continue;
        const auto r = learner.classify(dataset.views[c][v], std::numeric_limits<double>::infinity());
        ++result.predictions;
        if (r.label == dataset.categories[c]) ++result.correct;
      }
    }
  }
  return result;
}

}  // namespace ot3d
