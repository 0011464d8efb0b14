#pragma once

#include <span>
#include <string>
#include <vector>

#include "ot3d/codebook.hpp"
#include "ot3d/error.hpp"
#include "ot3d/features.hpp"
#include "ot3d/topic_model.hpp"

namespace ot3d {

using Histogram = std::vector<double>;

/// h_t (shared topics) next to h_c (one category's words); each block is
/// L1-normalized on its own.
struct ObjectRepresentation {
  Histogram topic_histogram;  // length K
  Histogram word_histogram;   // length V^c of `category`
  std::string category;

  std::size_t size() const { return topic_histogram.size() + word_histogram.size(); }

  Histogram concatenated() const {
    Histogram out = topic_histogram;
    out.insert(out.end(), word_histogram.begin(), word_histogram.end());
    return out;
  }

  friend bool operator==(const ObjectRepresentation&, const ObjectRepresentation&) = default;
};

namespace detail {

inline void normalize_l1(Histogram& h) {
  double total = 0.0;
  for (double v : h) total += v;
  if (total > 0.0) {
    for (double& v : h) v /= total;
  }
}

}  // namespace detail

inline Histogram encode_generic(const FeatureSet& features, const TopicModel& model) {
  require(!features.empty(), ErrorCode::empty_input, "cannot encode an object without features");
  Histogram h(model.num_topics(), 0.0);
  for (const auto& f : features) h[model.assign_topic(f)] += 1.0;
  detail::normalize_l1(h);
  return h;
}

inline Histogram encode_specific(const FeatureSet& features, const Dictionary& dict) {
  require(!features.empty(), ErrorCode::empty_input, "cannot encode an object without features");
  require(dict.kind == Dictionary::Kind::category, ErrorCode::invalid_argument,
          "specific encoding needs a category dictionary");
  Histogram h(dict.size(), 0.0);
  for (const auto& f : features) h[assign_word(f, dict)] += 1.0;
  detail::normalize_l1(h);
  return h;
}

inline ObjectRepresentation encode_for_category(const FeatureSet& features, const TopicModel& model,
                                                const Dictionary& dict) {
  return {encode_generic(features, model), encode_specific(features, dict), dict.category};
}

/// Reuses an already computed h_t; classification encodes the target's topic
/// histogram once and its word histogram once per category.
inline ObjectRepresentation encode_for_category(const FeatureSet& features, const Histogram& topic_histogram,
                                                const Dictionary& dict) {
  return {topic_histogram, encode_specific(features, dict), dict.category};
}

}  // namespace ot3d
