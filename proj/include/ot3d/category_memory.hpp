#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ot3d/binary_io.hpp"
#include "ot3d/codebook.hpp"
#include "ot3d/error.hpp"
#include "ot3d/representation.hpp"
#include "ot3d/topic_model.hpp"

namespace ot3d {

inline constexpr std::string_view kUnknownLabel = "Unknown";

/// Half the bin-wise (P_i - Q_i)^2 / (P_i + Q_i); empty bins contribute 0.
inline double chi_squared(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), ErrorCode::dimension_mismatch,
          "chi-squared needs equal lengths (" + std::to_string(p.size()) + " vs " + std::to_string(q.size()) + ")");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double s = p[i] + q[i];
    if (s > 0.0) {
      const double d = p[i] - q[i];
      sum += d * d / s;
    }
  }
  return 0.5 * sum;
}

enum class RepresentationMode { full, generic_only };

inline const char* to_string(RepresentationMode mode) {
  return mode == RepresentationMode::full ? "full" : "generic_only";
}

/// How two representations are compared. With weight 1 the full mode equals
/// chi_squared over the concatenated vectors.
struct DistanceOptions {
  RepresentationMode mode = RepresentationMode::full;
  double specific_weight = 1.0;
};

inline double representation_distance(const ObjectRepresentation& a, const ObjectRepresentation& b,
                                      const DistanceOptions& options = {}) {
  const double generic = chi_squared(a.topic_histogram, b.topic_histogram);
  if (options.mode == RepresentationMode::generic_only) return generic;
  return generic + options.specific_weight * chi_squared(a.word_histogram, b.word_histogram);
}

struct Instance {
  FeatureSet features;
  ObjectRepresentation representation;
  std::uint64_t learned_at = 0;

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct CategoryModel {
  std::string name;
  Dictionary dictionary;
  std::vector<Instance> instances;
  std::uint64_t created_at = 0;

  friend bool operator==(const CategoryModel&, const CategoryModel&) = default;
};

/// Categories in creation order.
class InstanceStore {
 public:
  const std::vector<CategoryModel>& categories() const { return categories_; }
  std::vector<CategoryModel>& categories() { return categories_; }

  bool empty() const { return categories_.empty(); }
  std::size_t size() const { return categories_.size(); }

  const CategoryModel* find(std::string_view name) const {
    for (const auto& c : categories_) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }
  CategoryModel* find(std::string_view name) {
    for (auto& c : categories_) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }

  std::size_t total_instances() const {
    std::size_t n = 0;
    for (const auto& c : categories_) n += c.instances.size();
    return n;
  }

  friend bool operator==(const InstanceStore&, const InstanceStore&) = default;

 private:
  std::vector<CategoryModel> categories_;
};

struct MemoryOptions {
  std::size_t specific_words = 70;  // V^c
  std::uint64_t seed = 1;
};

inline std::uint64_t name_hash(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline void encode_instance(Instance& instance, const TopicModel& model, const Dictionary& dict) {
  instance.representation = encode_for_category(instance.features, model, dict);
}

/// Creates `name` from one or more views; its dictionary is initialized from
/// the pooled features of those views.
inline CategoryModel& teach(InstanceStore& store, const std::string& name, std::span<const FeatureSet> views,
                            const TopicModel& model, const MemoryOptions& options, std::uint64_t stamp = 0) {
  require(!name.empty() && name != kUnknownLabel, ErrorCode::invalid_argument, "invalid category name");
  require(store.find(name) == nullptr, ErrorCode::duplicate_category, "category '" + name + "' already exists");
  require(!views.empty(), ErrorCode::empty_input, "teach needs at least one view");
  FeatureSet pooled;
  for (const auto& v : views) {
    require(!v.empty(), ErrorCode::empty_input, "teach view without features");
    pooled.insert(pooled.end(), v.begin(), v.end());
  }

  CategoryModel category;
  category.name = name;
  category.created_at = stamp;
  category.dictionary =
      init_category_dictionary(name, pooled, options.specific_words, derive_seed(options.seed, name_hash(name)));
  for (const auto& v : views) {
    Instance instance{v, {}, stamp};
    encode_instance(instance, model, category.dictionary);
    category.instances.push_back(std::move(instance));
  }
  store.categories().push_back(std::move(category));
  return store.categories().back();
}

/// Adds a misclassified view to `name`, streams its features into the
/// category dictionary and re-encodes that category's instances.
inline CategoryModel& correct(InstanceStore& store, const std::string& name, const FeatureSet& view,
                              const TopicModel& model, std::uint64_t stamp = 0) {
  CategoryModel* category = store.find(name);
  require(category != nullptr, ErrorCode::unknown_category, "unknown category '" + name + "'");
  require(!view.empty(), ErrorCode::empty_input, "correct view without features");
  update_dictionary_incremental(category->dictionary, view);
  category->instances.push_back({view, {}, stamp});
  for (auto& instance : category->instances) encode_instance(instance, model, category->dictionary);
  return *category;
}

/// Re-encodes every stored instance against the current topics and its
/// category's current dictionary.
inline void recompute_all(InstanceStore& store, const TopicModel& model) {
  for (auto& category : store.categories()) {
    for (std::size_t i = 0; i < category.instances.size(); ++i) {
      auto& instance = category.instances[i];
      require(!instance.features.empty(), ErrorCode::empty_input,
              "instance " + std::to_string(i) + " of '" + category.name + "' has no raw features");
      encode_instance(instance, model, category.dictionary);
    }
  }
}

/// Object-Category-Distance for an already encoded target.
inline double ocd(const ObjectRepresentation& target, const CategoryModel& category,
                  const DistanceOptions& options = {}) {
  require(!category.instances.empty(), ErrorCode::empty_input, "category '" + category.name + "' is empty");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& instance : category.instances) {
    best = std::min(best, representation_distance(target, instance.representation, options));
  }
  return best;
}

inline double ocd(const FeatureSet& target, const CategoryModel& category, const TopicModel& model,
                  const DistanceOptions& options = {}) {
  return ocd(encode_for_category(target, model, category.dictionary), category, options);
}

struct CategoryDistance {
  std::string category;
  double ocd = 0.0;

  friend bool operator==(const CategoryDistance&, const CategoryDistance&) = default;
};

struct ClassificationResult {
  std::string label{kUnknownLabel};
  std::vector<CategoryDistance> per_category_ocd;  // store order
  std::optional<double> margin;                    // runner-up minus best, when >= 2 categories

  bool unknown() const { return label == kUnknownLabel; }

  /// Ascending by OCD, stable for equal distances.
  std::vector<CategoryDistance> ranked() const {
    auto out = per_category_ocd;
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.ocd < b.ocd; });
    return out;
  }

  friend bool operator==(const ClassificationResult&, const ClassificationResult&) = default;
};

/// Minimum-OCD rule: the argmin (first in store order on ties) when its OCD
/// is below `threshold`, Unknown otherwise.
inline ClassificationResult decide(std::vector<CategoryDistance> distances, double threshold) {
  require(threshold > 0.0, ErrorCode::invalid_argument, "unknown threshold must be positive");
  ClassificationResult result;
  result.per_category_ocd = std::move(distances);
  if (result.per_category_ocd.empty()) return result;
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.per_category_ocd.size(); ++i) {
    if (result.per_category_ocd[i].ocd < result.per_category_ocd[best].ocd) best = i;
  }
  if (result.per_category_ocd.size() >= 2) {
    double runner_up = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < result.per_category_ocd.size(); ++i) {
      if (i != best) runner_up = std::min(runner_up, result.per_category_ocd[i].ocd);
    }
    result.margin = runner_up - result.per_category_ocd[best].ocd;
  }
  if (result.per_category_ocd[best].ocd < threshold) result.label = result.per_category_ocd[best].category;
  return result;
}

inline ClassificationResult classify(const FeatureSet& target, const InstanceStore& store, const TopicModel& model,
                                     double threshold, const DistanceOptions& options = {}) {
  require(threshold > 0.0, ErrorCode::invalid_argument, "unknown threshold must be positive");
  if (store.empty()) return decide({}, threshold);
  require(!target.empty(), ErrorCode::empty_input, "cannot classify an object without features");
  const Histogram topic_histogram = encode_generic(target, model);
  std::vector<CategoryDistance> distances;
  distances.reserve(store.size());
  for (const auto& category : store.categories()) {
    const auto encoded = encode_for_category(target, topic_histogram, category.dictionary);
    distances.push_back({category.name, ocd(encoded, category, options)});
  }
  return decide(std::move(distances), threshold);
}

// ---------------------------------------------------------------------------
// Per-category binary: "OTCM", u32 version, str name, u64 created_at,
// embedded OTDC, u32 instance count, per instance {u64 learned_at,
// u32 n, u32 dim, f64 features[n*dim], u32 K, f64 h_t[K], u32 Vc, f64 h_c[Vc]}.

inline std::string encode_category(const CategoryModel& category) {
  binary::Writer out;
  out.magic("OTCM");
  out.u32(1);
  out.str(category.name);
  out.u64(category.created_at);
  write_dictionary(out, category.dictionary);
  out.u32(static_cast<std::uint32_t>(category.instances.size()));
  for (const auto& instance : category.instances) {
    out.u64(instance.learned_at);
    const std::size_t dim = instance.features.empty() ? 0 : instance.features.front().size();
    out.u32(static_cast<std::uint32_t>(instance.features.size()));
    out.u32(static_cast<std::uint32_t>(dim));
    for (const auto& f : instance.features) out.f64s(f);
    out.u32(static_cast<std::uint32_t>(instance.representation.topic_histogram.size()));
    out.f64s(instance.representation.topic_histogram);
    out.u32(static_cast<std::uint32_t>(instance.representation.word_histogram.size()));
    out.f64s(instance.representation.word_histogram);
  }
  return out.take();
}

inline CategoryModel decode_category(std::string_view bytes) {
  binary::Reader in(bytes);
  in.expect_magic("OTCM");
  require(in.u32() == 1, ErrorCode::format_error, "unsupported category file version");
  CategoryModel category;
  category.name = in.str();
  category.created_at = in.u64();
  category.dictionary = read_dictionary(in);
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Instance instance;
    instance.learned_at = in.u64();
    const std::uint32_t n = in.u32();
    const std::uint32_t dim = in.u32();
    in.need_items(static_cast<std::uint64_t>(n) * dim, 8);
    instance.features.reserve(n);
    for (std::uint32_t j = 0; j < n; ++j) instance.features.push_back(in.f64s(dim));
    instance.representation.topic_histogram = in.f64s(in.u32());
    instance.representation.word_histogram = in.f64s(in.u32());
    instance.representation.category = category.name;
    category.instances.push_back(std::move(instance));
  }
  require(in.done(), ErrorCode::format_error, "trailing bytes after category file");
  return category;
}

}  // namespace ot3d
