#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ot3d/binary_io.hpp"
#include "ot3d/codebook.hpp"
#include "ot3d/error.hpp"
#include "ot3d/rng.hpp"

namespace ot3d {

/// Incremental LDA over generic-dictionary word indices, inferred with a
/// collapsed Gibbs sampler. New objects are sampled against the frozen
/// assignments of earlier objects; refresh() resamples everything jointly.
///
/// Counters: n_wk (V x K, row-major by word), n_k (per topic), and per-object
/// n_ok. Word i of object o is drawn from
///
///   P(z_i = k | rest) ~ (n_wk[w_i][k] + beta) / (n_k[k] + V beta) * (n_ok[o][k] + alpha)
///
/// with word i's own assignment removed from every counter.
class TopicModel {
 public:
  struct ObjectState {
    std::vector<std::uint32_t> words;
    std::vector<std::uint32_t> topics;
    std::vector<std::uint64_t> topic_counts;  // n_ok, length K

    friend bool operator==(const ObjectState&, const ObjectState&) = default;
  };

  TopicModel() = default;

  TopicModel(std::size_t num_topics, std::size_t vocabulary, double alpha = 1.0, double beta = 0.1,
             std::uint64_t seed = 1)
      : num_topics_(num_topics),
        vocabulary_(vocabulary),
        alpha_(alpha),
        beta_(beta),
        seed_(seed),
        rng_(seed),
        word_topic_(num_topics * vocabulary, 0),
        topic_totals_(num_topics, 0) {
    require(num_topics >= 1, ErrorCode::invalid_argument, "topic count must be >= 1");
    require(vocabulary >= 1, ErrorCode::invalid_argument, "vocabulary size must be >= 1");
    require(alpha > 0.0 && std::isfinite(alpha), ErrorCode::invalid_argument, "alpha must be positive");
    require(beta > 0.0 && std::isfinite(beta), ErrorCode::invalid_argument, "beta must be positive");
  }

  std::size_t num_topics() const { return num_topics_; }
  std::size_t vocabulary() const { return vocabulary_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  std::uint64_t seed() const { return seed_; }

  std::uint64_t word_topic(std::size_t word, std::size_t topic) const {
    return word_topic_[word * num_topics_ + topic];
  }
  std::uint64_t topic_total(std::size_t topic) const { return topic_totals_[topic]; }
  const std::vector<std::uint64_t>& word_topic_counts() const { return word_topic_; }
  const std::vector<std::uint64_t>& topic_totals() const { return topic_totals_; }
  const std::vector<ObjectState>& objects() const { return objects_; }
  const Pcg32& rng() const { return rng_; }

  /// Adds an object with uniformly random initial topics and runs `sweeps`
  /// Gibbs sweeps over its words only. An empty word list leaves the model
  /// untouched and returns nullopt.
  std::optional<std::size_t> absorb(std::span<const std::size_t> words, std::size_t sweeps) {
    require(sweeps >= 1, ErrorCode::invalid_argument, "Gibbs sweeps must be >= 1");
    for (std::size_t w : words) {
      require(w < vocabulary_, ErrorCode::out_of_range,
              "word index " + std::to_string(w) + " outside vocabulary of " + std::to_string(vocabulary_));
    }
    if (words.empty()) return std::nullopt;

    ObjectState state;
    state.topic_counts.assign(num_topics_, 0);
    state.words.reserve(words.size());
    state.topics.reserve(words.size());
    for (std::size_t w : words) {
      const auto k = rng_.below(num_topics_);
      state.words.push_back(static_cast<std::uint32_t>(w));
      state.topics.push_back(k);
      ++state.topic_counts[k];
      ++word_topic_[w * num_topics_ + k];
      ++topic_totals_[k];
    }
    objects_.push_back(std::move(state));
    const std::size_t id = objects_.size() - 1;
    for (std::size_t s = 0; s < sweeps; ++s) sweep(id);
    return id;
  }

  /// One Gibbs step for a single word; returns the drawn topic.
  std::size_t resample(std::size_t object, std::size_t position) {
    ObjectState& o = objects_.at(object);
    const std::size_t w = o.words.at(position);
    const std::size_t old_topic = o.topics[position];
    unassign(o, w, old_topic);

    scratch_.resize(num_topics_);
    const double vbeta = static_cast<double>(vocabulary_) * beta_;
    double total = 0.0;
    for (std::size_t k = 0; k < num_topics_; ++k) {
      const double p = (static_cast<double>(word_topic_[w * num_topics_ + k]) + beta_) /
                       (static_cast<double>(topic_totals_[k]) + vbeta) *
                       (static_cast<double>(o.topic_counts[k]) + alpha_);
      total += p;
      scratch_[k] = total;
    }
    const double u = rng_.uniform() * total;
    std::size_t k = 0;
    while (k + 1 < num_topics_ && scratch_[k] <= u) ++k;

    assign(o, w, k);
    o.topics[position] = static_cast<std::uint32_t>(k);
    return k;
  }

  void sweep(std::size_t object) {
    const std::size_t n = objects_.at(object).words.size();
    for (std::size_t i = 0; i < n; ++i) resample(object, i);
  }

  /// Runs `sweeps` joint sweeps over every retained object in absorption order.
  void refresh(std::size_t sweeps) {
    for (std::size_t s = 0; s < sweeps; ++s) {
      for (std::size_t o = 0; o < objects_.size(); ++o) sweep(o);
    }
  }

  /// refresh() followed by topic re-synthesis against the generic dictionary.
  void refresh_topics(std::size_t sweeps, const Dictionary& generic) {
    if (sweeps == 0) return;
    refresh(sweeps);
    synthesize_topics(generic);
  }

  /// Moves one word to `topic`, keeping every counter consistent.
  void set_assignment(std::size_t object, std::size_t position, std::size_t topic) {
    require(topic < num_topics_, ErrorCode::out_of_range, "topic index out of range");
    ObjectState& o = objects_.at(object);
    const std::size_t w = o.words.at(position);
    unassign(o, w, o.topics[position]);
    assign(o, w, topic);
    o.topics[position] = static_cast<std::uint32_t>(topic);
  }

  /// The normalized conditional the sampler draws from at (object, position).
  std::vector<double> conditional(std::size_t object, std::size_t position) const {
    const ObjectState& o = objects_.at(object);
    const std::size_t w = o.words.at(position);
    const std::size_t current = o.topics[position];
    const double vbeta = static_cast<double>(vocabulary_) * beta_;
    std::vector<double> p(num_topics_);
    double total = 0.0;
    for (std::size_t k = 0; k < num_topics_; ++k) {
      const double self = k == current ? 1.0 : 0.0;
      p[k] = (static_cast<double>(word_topic_[w * num_topics_ + k]) - self + beta_) /
             (static_cast<double>(topic_totals_[k]) - self + vbeta) *
             (static_cast<double>(o.topic_counts[k]) - self + alpha_);
      total += p[k];
    }
    for (double& v : p) v /= total;
    return p;
  }

  /// phi[w][k] = (n_wk + beta) / (n_k + V beta), V x K row-major.
  std::vector<double> estimate_phi() const {
    std::vector<double> phi(vocabulary_ * num_topics_);
    const double vbeta = static_cast<double>(vocabulary_) * beta_;
    for (std::size_t w = 0; w < vocabulary_; ++w) {
      for (std::size_t k = 0; k < num_topics_; ++k) {
        phi[w * num_topics_ + k] = (static_cast<double>(word_topic_[w * num_topics_ + k]) + beta_) /
                                   (static_cast<double>(topic_totals_[k]) + vbeta);
      }
    }
    return phi;
  }

  /// z_k = sum_w phi[w][k] * word_w, L1-normalized.
  void synthesize_topics(const Dictionary& generic) {
    require(generic.size() == vocabulary_, ErrorCode::dimension_mismatch,
            "generic dictionary size differs from the model vocabulary");
    const auto phi = estimate_phi();
    const std::size_t dim = generic.dim();
    topics_.assign(num_topics_, Descriptor(dim, 0.0));
    for (std::size_t k = 0; k < num_topics_; ++k) {
      auto& z = topics_[k];
      for (std::size_t w = 0; w < vocabulary_; ++w) {
        const double weight = phi[w * num_topics_ + k];
        const auto& word = generic.words[w];
        for (std::size_t d = 0; d < dim; ++d) z[d] += weight * word[d];
      }
      double norm = 0.0;
      for (double v : z) norm += std::abs(v);
      if (norm > 0.0) {
        for (double& v : z) v /= norm;
      }
    }
  }

  bool has_topics() const { return !topics_.empty(); }
  const std::vector<Descriptor>& topics() const { return topics_; }

  /// Nearest synthesized topic, lowest index on ties.
  std::size_t assign_topic(std::span<const double> feature) const {
    require(has_topics(), ErrorCode::not_ready, "topics have not been synthesized");
    require(feature.size() == topics_.front().size(), ErrorCode::dimension_mismatch,
            "feature dimension differs from topic dimension");
    return nearest_index(feature, topics_);
  }

  /// Recounts every counter from the stored assignments.
  bool counters_consistent() const {
    std::vector<std::uint64_t> wk(word_topic_.size(), 0), k_tot(num_topics_, 0);
    for (const auto& o : objects_) {
      std::vector<std::uint64_t> ok(num_topics_, 0);
      if (o.words.size() != o.topics.size()) return false;
      for (std::size_t i = 0; i < o.words.size(); ++i) {
        ++wk[o.words[i] * num_topics_ + o.topics[i]];
        ++k_tot[o.topics[i]];
        ++ok[o.topics[i]];
      }
      if (ok != o.topic_counts) return false;
    }
    return wk == word_topic_ && k_tot == topic_totals_;
  }

  friend bool operator==(const TopicModel& a, const TopicModel& b) {
    return a.num_topics_ == b.num_topics_ && a.vocabulary_ == b.vocabulary_ && a.alpha_ == b.alpha_ &&
           a.beta_ == b.beta_ && a.seed_ == b.seed_ && a.rng_ == b.rng_ && a.word_topic_ == b.word_topic_ &&
           a.topic_totals_ == b.topic_totals_ && a.objects_ == b.objects_ && a.topics_ == b.topics_;
  }

  // Persistence: "OTLM", u32 version, u32 K, u32 V, f64 alpha, f64 beta,
  // u64 seed, u64 rng state, u64 rng increment, n_wk (u64, V x K), n_k (u64),
  // u32 object count, per object {u32 n, u32 words[n], u32 topics[n]},
  // u32 topic dim, topics f64 (K x dim).
  void write(binary::Writer& out) const {
    out.magic("OTLM");
    out.u32(1);
    out.u32(static_cast<std::uint32_t>(num_topics_));
    out.u32(static_cast<std::uint32_t>(vocabulary_));
    out.f64(alpha_);
    out.f64(beta_);
    out.u64(seed_);
    const auto [state, inc] = rng_.state();
    out.u64(state);
    out.u64(inc);
    for (auto c : word_topic_) out.u64(c);
    for (auto c : topic_totals_) out.u64(c);
    out.u32(static_cast<std::uint32_t>(objects_.size()));
    for (const auto& o : objects_) {
      out.u32(static_cast<std::uint32_t>(o.words.size()));
      for (auto w : o.words) out.u32(w);
      for (auto k : o.topics) out.u32(k);
    }
    const std::size_t dim = topics_.empty() ? 0 : topics_.front().size();
    out.u32(static_cast<std::uint32_t>(dim));
    for (const auto& z : topics_) out.f64s(z);
  }

  static TopicModel read(binary::Reader& in) {
    in.expect_magic("OTLM");
    const std::uint32_t version = in.u32();
    require(version == 1, ErrorCode::format_error, "unsupported topic model version");
    const std::size_t k = in.u32();
    const std::size_t v = in.u32();
    const double alpha = in.f64();
    const double beta = in.f64();
    const std::uint64_t seed = in.u64();
    TopicModel model(k, v, alpha, beta, seed);
    const std::uint64_t state = in.u64();
    const std::uint64_t inc = in.u64();
    model.rng_.set_state(state, inc);
    in.need_items(static_cast<std::uint64_t>(k) * v, 8);
    for (auto& c : model.word_topic_) c = in.u64();
    for (auto& c : model.topic_totals_) c = in.u64();
    const std::uint32_t count = in.u32();
    model.objects_.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      ObjectState o;
      const std::uint32_t n = in.u32();
      in.need_items(n, 8);
      o.words.resize(n);
      o.topics.resize(n);
      for (auto& w : o.words) w = in.u32();
      for (auto& t : o.topics) t = in.u32();
      o.topic_counts.assign(k, 0);
      for (std::uint32_t j = 0; j < n; ++j) {
        require(o.words[j] < v && o.topics[j] < k, ErrorCode::format_error, "assignment out of range");
        ++o.topic_counts[o.topics[j]];
      }
      model.objects_.push_back(std::move(o));
    }
    const std::uint32_t dim = in.u32();
    if (dim > 0) {
      model.topics_.reserve(k);
      for (std::size_t t = 0; t < k; ++t) model.topics_.push_back(in.f64s(dim));
    }
    require(model.counters_consistent(), ErrorCode::format_error, "topic model counters are inconsistent");
    return model;
  }

  std::string encode() const {
    binary::Writer out;
    write(out);
    return out.take();
  }

  static TopicModel decode(std::string_view bytes) {
    binary::Reader in(bytes);
    TopicModel model = read(in);
    require(in.done(), ErrorCode::format_error, "trailing bytes after topic model");
    return model;
  }

 private:
  void unassign(ObjectState& o, std::size_t w, std::size_t k) {
    --word_topic_[w * num_topics_ + k];
    --topic_totals_[k];
    --o.topic_counts[k];
  }
  void assign(ObjectState& o, std::size_t w, std::size_t k) {
    ++word_topic_[w * num_topics_ + k];
    ++topic_totals_[k];
    ++o.topic_counts[k];
  }

  std::size_t num_topics_ = 0;
  std::size_t vocabulary_ = 0;
  double alpha_ = 1.0;
  double beta_ = 0.1;
  std::uint64_t seed_ = 1;
  Pcg32 rng_;
  std::vector<std::uint64_t> word_topic_;
  std::vector<std::uint64_t> topic_totals_;
  std::vector<ObjectState> objects_;
  std::vector<Descriptor> topics_;
  std::vector<double> scratch_;
};

}  // namespace ot3d
