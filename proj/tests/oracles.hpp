#pragma once

// Independent reference computations used by the unit and acceptance tests.
// They favour directness over speed and share no code paths with the library
// beyond its data types.

#include <cmath>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "ot3d/category_memory.hpp"
#include "ot3d/codebook.hpp"
#include "ot3d/point_cloud.hpp"
#include "ot3d/protocol.hpp"
#include "ot3d/rng.hpp"
#include "ot3d/topic_model.hpp"

namespace oracle {

using ot3d::Descriptor;
using ot3d::FeatureSet;
using ot3d::Point3;

/// Spin-image by scanning every bin and testing every point against the bin's
/// interval bounds.
inline std::vector<double> spin_image(const std::vector<Point3>& points, const Point3& p, const Point3& n, int iw,
                                      double sl) {
  const int rows = iw + 1, cols = 2 * iw + 1;
  const double cell = sl / iw;
  std::vector<double> bins(static_cast<std::size_t>(rows * cols), 0.0);
  std::vector<std::pair<double, double>> coords;
  for (const auto& x : points) {
    const Point3 d = x - p;
    const double beta = n.dot(d);
    const double alpha = n.cross(d).norm();
    if (std::abs(beta) <= sl && alpha <= sl) coords.emplace_back(alpha, beta + sl);
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      for (const auto& [a, b] : coords) {
        const bool in_row = a >= r * cell && (a < (r + 1) * cell || r == rows - 1);
        const bool in_col = b >= c * cell && (b < (c + 1) * cell || c == cols - 1);
        if (in_row && in_col) bins[static_cast<std::size_t>(r * cols + c)] += 1.0;
      }
    }
  }
  double total = 0.0;
  for (double v : bins) total += v;
  if (total > 0.0) {
    for (double& v : bins) v /= total;
  }
  return bins;
}

/// Number of distinct occupied voxels of edge `vs`, grid anchored at the
/// per-axis minimum.
inline std::size_t occupied_voxels(const std::vector<Point3>& points, double vs) {
  Point3 lo = points.front();
  for (const auto& p : points) lo = lo.cwiseMin(p);
  std::set<std::tuple<long, long, long>> cells;
  for (const auto& p : points) {
    cells.emplace(static_cast<long>(std::floor((p.x() - lo.x()) / vs)),
                  static_cast<long>(std::floor((p.y() - lo.y()) / vs)),
                  static_cast<long>(std::floor((p.z() - lo.z()) / vs)));
  }
  return cells.size();
}

inline double sq_dist(const Descriptor& a, const Descriptor& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (long double)(a[i] - b[i]) * (a[i] - b[i]);
  return static_cast<double>(s);
}

inline std::size_t nearest(const Descriptor& x, const std::vector<Descriptor>& centers) {
  std::size_t best = 0;
  double best_d = sq_dist(x, centers[0]);
  for (std::size_t i = 1; i < centers.size(); ++i) {
    const double d = sq_dist(x, centers[i]);
    if (d < best_d) best = i, best_d = d;
  }
  return best;
}

inline double inertia(const std::vector<Descriptor>& pool, const std::vector<Descriptor>& centers) {
  double s = 0;
  for (const auto& x : pool) s += sq_dist(x, centers[nearest(x, centers)]);
  return s;
}

/// Plain Lloyd k-means from k distinct uniformly chosen pool points.
inline double random_restart_inertia(const std::vector<Descriptor>& pool, std::size_t k, std::uint64_t seed) {
  ot3d::Pcg32 rng(seed);
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  ot3d::shuffle(std::span<std::size_t>(idx), rng);
  std::vector<Descriptor> centers;
  for (std::size_t i = 0; i < k; ++i) centers.push_back(pool[idx[i]]);
  for (int it = 0; it < 300; ++it) {
    std::vector<Descriptor> sums(k, Descriptor(pool[0].size(), 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (const auto& x : pool) {
      const auto c = nearest(x, centers);
      ++counts[c];
      for (std::size_t d = 0; d < x.size(); ++d) sums[c][d] += x[d];
    }
    double shift = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
      shift = std::max(shift, std::sqrt(sq_dist(sums[c], centers[c])));
      centers[c] = sums[c];
    }
    if (shift < 1e-6) break;
  }
  return inertia(pool, centers);
}

/// Collapsed joint log-probability log P(w, z) of the model's current state.
inline double log_joint(const ot3d::TopicModel& m) {
  const std::size_t K = m.num_topics(), V = m.vocabulary();
  const double a = m.alpha(), b = m.beta();
  std::vector<double> nwk(V * K, 0), nk(K, 0);
  double lp = 0;
  for (const auto& o : m.objects()) {
    std::vector<double> nok(K, 0);
    for (std::size_t i = 0; i < o.words.size(); ++i) {
      nwk[o.words[i] * K + o.topics[i]] += 1;
      nk[o.topics[i]] += 1;
      nok[o.topics[i]] += 1;
    }
    lp += std::lgamma(K * a) - std::lgamma(o.words.size() + K * a);
    for (std::size_t k = 0; k < K; ++k) lp += std::lgamma(nok[k] + a) - std::lgamma(a);
  }
  for (std::size_t k = 0; k < K; ++k) {
    lp += std::lgamma(V * b) - std::lgamma(nk[k] + V * b);
    for (std::size_t w = 0; w < V; ++w) lp += std::lgamma(nwk[w * K + k] + b) - std::lgamma(b);
  }
  return lp;
}

/// P(z_i = k | z_-i, w) by enumerating k and normalizing the collapsed joint.
inline std::vector<double> enumerated_conditional(ot3d::TopicModel m, std::size_t object, std::size_t position) {
  const std::size_t K = m.num_topics();
  std::vector<double> lp(K);
  for (std::size_t k = 0; k < K; ++k) {
    m.set_assignment(object, position, k);
    lp[k] = log_joint(m);
  }
  const double hi = *std::max_element(lp.begin(), lp.end());
  double total = 0;
  for (double& v : lp) total += (v = std::exp(v - hi));
  for (double& v : lp) v /= total;
  return lp;
}

/// Topic vectors recomputed from counters recounted off the assignments.
inline std::vector<Descriptor> topics(const ot3d::TopicModel& m, const ot3d::Dictionary& dict) {
  const std::size_t K = m.num_topics(), V = m.vocabulary();
  std::vector<long double> nwk(V * K, 0), nk(K, 0);
  for (const auto& o : m.objects()) {
    for (std::size_t i = 0; i < o.words.size(); ++i) {
      nwk[o.words[i] * K + o.topics[i]] += 1;
      nk[o.topics[i]] += 1;
    }
  }
  std::vector<Descriptor> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<long double> z(dict.dim(), 0);
    for (std::size_t w = 0; w < V; ++w) {
      const long double phi = (nwk[w * K + k] + m.beta()) / (nk[k] + V * (long double)m.beta());
      for (std::size_t d = 0; d < z.size(); ++d) z[d] += phi * dict.words[w][d];
    }
    long double norm = 0;
    for (auto v : z) norm += std::fabs(v);
    for (auto v : z) out[k].push_back(static_cast<double>(v / norm));
  }
  return out;
}

inline std::vector<double> tally(const FeatureSet& features, const std::vector<Descriptor>& centers) {
  std::vector<double> h(centers.size(), 0.0);
  for (const auto& f : features) h[nearest(f, centers)] += 1.0;
  for (double& v : h) v /= static_cast<double>(features.size());
  return h;
}

inline double chi2(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] + q[i] != 0.0) s += 0.5 * (p[i] - q[i]) * (p[i] - q[i]) / (p[i] + q[i]);
  }
  return s;
}

/// Metrics recomputed from the raw records alone.
inline ot3d::Metrics metrics(const ot3d::ExperimentTrace& t, const std::map<std::string, std::size_t>& instances) {
  ot3d::Metrics m;
  std::set<std::string> known;
  double hits = 0, acc = 0;
  std::size_t questions = 0;
  for (const auto& r : t.records) {
    if (r.action == ot3d::Action::teach) {
      known.insert(r.category);
      continue;
    }
    ++questions;
    hits += r.correct ? 1 : 0;
    acc += r.accuracy;
  }
  m.qci = questions;
  m.alc = static_cast<double>(known.size());
  double total = 0;
  for (const auto& c : known) total += static_cast<double>(instances.at(c));
  m.aic = known.empty() ? 0 : total / static_cast<double>(known.size());
  m.gca = questions ? hits / questions : 0;
  m.apa = questions ? acc / questions : 0;
  return m;
}

}  // namespace oracle
