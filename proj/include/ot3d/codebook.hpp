#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ot3d/binary_io.hpp"
#include "ot3d/error.hpp"
#include "ot3d/features.hpp"
#include "ot3d/rng.hpp"

namespace ot3d {

/// A codebook of visual words. Generic dictionaries are built once by batch
/// k-means; category dictionaries keep per-word counts so online updates stay
/// exact running means.
struct Dictionary {
  enum class Kind : std::uint8_t { generic = 0, category = 1 };

  Kind kind = Kind::generic;
  std::string category;  // empty for generic
  std::vector<Descriptor> words;
  std::vector<std::uint64_t> counts;

  std::size_t size() const { return words.size(); }
  bool empty() const { return words.empty(); }
  std::size_t dim() const { return words.empty() ? 0 : words.front().size(); }
  std::uint64_t total_count() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  }

  void validate() const {
    require(counts.size() == words.size(), ErrorCode::format_error, "dictionary count/word mismatch");
    for (const auto& w : words) {
      require(w.size() == dim(), ErrorCode::dimension_mismatch, "dictionary words differ in dimension");
      for (double v : w) require(std::isfinite(v), ErrorCode::format_error, "non-finite centroid");
    }
  }

  friend bool operator==(const Dictionary&, const Dictionary&) = default;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

/// Nearest centroid under Euclidean distance; lowest index wins ties.
inline std::size_t nearest_index(std::span<const double> feature, const std::vector<Descriptor>& centers) {
  require(!centers.empty(), ErrorCode::not_ready, "nearest search over an empty set");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centers.size(); ++j) {
    const double d = squared_distance(feature, centers[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

inline std::size_t assign_word(std::span<const double> feature, const Dictionary& dict) {
  require(!dict.empty(), ErrorCode::not_ready, "dictionary is empty");
  require(feature.size() == dict.dim(), ErrorCode::dimension_mismatch,
          "feature dimension " + std::to_string(feature.size()) + " != dictionary dimension " +
              std::to_string(dict.dim()));
  return nearest_index(feature, dict.words);
}

inline std::vector<std::size_t> quantize(const FeatureSet& features, const Dictionary& dict) {
  std::vector<std::size_t> words;
  words.reserve(features.size());
  for (const auto& f : features) words.push_back(assign_word(f, dict));
  return words;
}

// ---------------------------------------------------------------------------
// Batch k-means

struct KMeansOptions {
  std::size_t max_iterations = 300;
  double tolerance = 1e-6;  // max centroid shift
};

struct KMeansReport {
  std::vector<double> inertia;  // after each assignment step, last entry is final
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t reseeded = 0;
};

namespace detail {

inline std::vector<Descriptor> kmeanspp_seed(std::span<const Descriptor> pool, std::size_t k, Pcg32& rng) {
  std::vector<Descriptor> centers;
  centers.reserve(k);
  centers.push_back(pool[rng.below(pool.size())]);
  std::vector<double> d2(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) d2[i] = squared_distance(pool[i], centers[0]);
  while (centers.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      std::size_t last_positive = 0;
      bool found = false;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (d2[i] <= 0.0) continue;
        last_positive = i;
        acc += d2[i];
        if (acc > target) {
          pick = i;
          found = true;
          break;
        }
      }
      if (!found) pick = last_positive;
    } else {
      pick = rng.below(pool.size());
    }
    centers.push_back(pool[pick]);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      d2[i] = std::min(d2[i], squared_distance(pool[i], centers.back()));
    }
  }
  return centers;
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding. Stops when no centroid moves more
/// than `tolerance` or after `max_iterations`. Empty clusters are re-seeded at
/// the point farthest from its nearest centroid.
inline Dictionary build_dictionary(std::span<const Descriptor> pool, std::size_t num_words, std::uint64_t seed,
                                   const KMeansOptions& options = {}, KMeansReport* report = nullptr) {
  require(num_words >= 1, ErrorCode::invalid_argument, "dictionary size must be >= 1");
  require(pool.size() >= num_words, ErrorCode::invalid_argument,
          "feature pool (" + std::to_string(pool.size()) + ") smaller than dictionary size (" +
              std::to_string(num_words) + ")");
  const std::size_t dim = pool.front().size();
  for (const auto& f : pool) {
    require(f.size() == dim, ErrorCode::dimension_mismatch, "pool descriptors differ in dimension");
  }

  Pcg32 rng(seed);
  std::vector<Descriptor> centers = detail::kmeanspp_seed(pool, num_words, rng);
  std::vector<std::size_t> labels(pool.size(), 0);
  std::vector<double> dists(pool.size(), 0.0);
  KMeansReport local;

  auto assign_all = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      labels[i] = nearest_index(pool[i], centers);
      dists[i] = squared_distance(pool[i], centers[labels[i]]);
      inertia += dists[i];
    }
    return inertia;
  };

  std::vector<std::size_t> sizes(num_words);
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    local.inertia.push_back(assign_all());
    local.iterations = iter + 1;

    std::fill(sizes.begin(), sizes.end(), 0);
    for (std::size_t l : labels) ++sizes[l];
    for (std::size_t j = 0; j < num_words; ++j) {
      if (sizes[j] != 0) continue;
      const auto far = static_cast<std::size_t>(std::max_element(dists.begin(), dists.end()) - dists.begin());
      --sizes[labels[far]];
      labels[far] = j;
      sizes[j] = 1;
      dists[far] = 0.0;
      ++local.reseeded;
    }

    std::vector<Descriptor> next(num_words, Descriptor(dim, 0.0));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      auto& c = next[labels[i]];
      for (std::size_t d = 0; d < dim; ++d) c[d] += pool[i][d];
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < num_words; ++j) {
      if (sizes[j] == 0) {
        // Only reachable if re-seeding drained a singleton; keep the old center.
        next[j] = centers[j];
      } else {
        const double inv = 1.0 / static_cast<double>(sizes[j]);
        for (double& v : next[j]) v *= inv;
      }
      shift = std::max(shift, std::sqrt(squared_distance(next[j], centers[j])));
    }
    centers = std::move(next);
    if (shift < options.tolerance) {
      local.converged = true;
      break;
    }
  }

  local.inertia.push_back(assign_all());
  Dictionary dict;
  dict.words = std::move(centers);
  dict.counts.assign(num_words, 0);
  for (std::size_t l : labels) ++dict.counts[l];
  if (report) *report = std::move(local);
  return dict;
}

inline double inertia(std::span<const Descriptor> pool, const Dictionary& dict) {
  double sum = 0.0;
  for (const auto& f : pool) sum += squared_distance(f, dict.words[assign_word(f, dict)]);
  return sum;
}

struct PoolSelection {
  std::vector<std::size_t> objects;  // ascending indices of the sampled objects
  FeatureSet features;
};

/// Seeded sample of ceil(fraction * count) objects with their descriptors
/// concatenated in index order.
inline PoolSelection build_pool(std::span<const FeatureSet> objects, double fraction, std::uint64_t seed) {
  require(!objects.empty(), ErrorCode::empty_input, "cannot build a pool from zero objects");
  require(fraction > 0.0 && fraction <= 1.0, ErrorCode::invalid_argument, "pool fraction must be in (0, 1]");
  const auto take = std::min<std::size_t>(
      objects.size(), static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(objects.size()) - 1e-9)));

  std::vector<std::size_t> order(objects.size());
  std::iota(order.begin(), order.end(), 0);
  Pcg32 rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  order.resize(std::max<std::size_t>(take, 1));
  std::sort(order.begin(), order.end());

  PoolSelection pool;
  pool.objects = order;
  for (std::size_t i : order) {
    pool.features.insert(pool.features.end(), objects[i].begin(), objects[i].end());
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Online k-means

/// MacQueen sequential update: each feature moves its nearest word to the
/// running mean of everything it has absorbed. Returns the chosen word per
/// feature.
inline std::vector<std::size_t> update_dictionary_incremental(Dictionary& dict,
                                                              std::span<const Descriptor> features) {
  require(!dict.empty(), ErrorCode::not_ready, "dictionary not initialized");
  std::vector<std::size_t> log;
  log.reserve(features.size());
  for (const auto& x : features) {
    const std::size_t w = assign_word(x, dict);
    auto& center = dict.words[w];
    const double step = 1.0 / static_cast<double>(dict.counts[w] + 1);
    for (std::size_t d = 0; d < center.size(); ++d) center[d] += step * (x[d] - center[d]);
    ++dict.counts[w];
    log.push_back(w);
  }
  return log;
}

/// Cold start for a category codebook. With at least `num_words` features this
/// is batch k-means; otherwise the features themselves become words (count 1)
/// and the remainder are jittered copies with count 0, so the first feature
/// they absorb replaces them outright.
inline Dictionary init_category_dictionary(const std::string& name, std::span<const Descriptor> features,
                                           std::size_t num_words, std::uint64_t seed) {
  require(!features.empty(), ErrorCode::empty_input, "category '" + name + "' has no features");
  require(num_words >= 1, ErrorCode::invalid_argument, "dictionary size must be >= 1");
  Dictionary dict;
  if (features.size() >= num_words) {
    dict = build_dictionary(features, num_words, seed);
  } else {
    const std::size_t n = features.size();
    dict.words.assign(features.begin(), features.end());
    dict.counts.assign(n, 1);
    Pcg32 rng(seed, 0x6a09e667f3bcc909ULL);
    for (std::size_t j = n; j < num_words; ++j) {
      Descriptor copy = features[(j - n) % n];
      for (double& v : copy) v += 1e-6 * rng.uniform();
      dict.words.push_back(std::move(copy));
      dict.counts.push_back(0);
    }
  }
  dict.kind = Dictionary::Kind::category;
  dict.category = name;
  return dict;
}

// ---------------------------------------------------------------------------
// Persistence: "OTDC", u32 version, u8 kind, [v2: str category], u32 V,
// u32 dim, centroids row-major (v1 f32, v2 f64), counts u64.

inline constexpr std::uint32_t kDictionaryVersionF32 = 1;
inline constexpr std::uint32_t kDictionaryVersionF64 = 2;

inline void write_dictionary(binary::Writer& out, const Dictionary& dict,
                             std::uint32_t version = kDictionaryVersionF64) {
  require(version == kDictionaryVersionF32 || version == kDictionaryVersionF64, ErrorCode::invalid_argument,
          "unsupported dictionary version");
  out.magic("OTDC");
  out.u32(version);
  out.u8(static_cast<std::uint8_t>(dict.kind));
  if (version == kDictionaryVersionF64) out.str(dict.category);
  out.u32(static_cast<std::uint32_t>(dict.size()));
  out.u32(static_cast<std::uint32_t>(dict.dim()));
  for (const auto& w : dict.words) {
    for (double v : w) {
      if (version == kDictionaryVersionF32) {
        out.f32(static_cast<float>(v));
      } else {
        out.f64(v);
      }
    }
  }
  for (std::uint64_t c : dict.counts) out.u64(c);
}

inline Dictionary read_dictionary(binary::Reader& in) {
  in.expect_magic("OTDC");
  const std::uint32_t version = in.u32();
  require(version == kDictionaryVersionF32 || version == kDictionaryVersionF64, ErrorCode::format_error,
          "unsupported dictionary version " + std::to_string(version));
  Dictionary dict;
  const std::uint8_t kind = in.u8();
  require(kind <= 1, ErrorCode::format_error, "bad dictionary kind tag");
  dict.kind = static_cast<Dictionary::Kind>(kind);
  if (version == kDictionaryVersionF64) dict.category = in.str();
  const std::uint32_t size = in.u32();
  const std::uint32_t dim = in.u32();
  in.need_items(static_cast<std::uint64_t>(size) * dim, version == kDictionaryVersionF32 ? 4 : 8);
  dict.words.assign(size, Descriptor(dim));
  for (auto& w : dict.words) {
    for (double& v : w) v = version == kDictionaryVersionF32 ? static_cast<double>(in.f32()) : in.f64();
  }
  in.need_items(size, 8);
  dict.counts.resize(size);
  for (auto& c : dict.counts) c = in.u64();
  dict.validate();
  return dict;
}

inline std::string encode_dictionary(const Dictionary& dict, std::uint32_t version = kDictionaryVersionF64) {
  binary::Writer out;
  write_dictionary(out, dict, version);
  return out.take();
}

inline Dictionary decode_dictionary(std::string_view bytes) {
  binary::Reader in(bytes);
  Dictionary dict = read_dictionary(in);
  require(in.done(), ErrorCode::format_error, "trailing bytes after dictionary");
  return dict;
}

}  // namespace ot3d
