#pragma once

// Simulated-teacher, test-then-train evaluation of an open-ended learner.
//
// The teacher introduces one category with a teach action, then keeps drawing
// unseen views of known categories (uniformly over categories, then over that
// category's unseen views), asks the agent for a label, and sends a correct
// action on every mistake. Protocol accuracy is measured over the most recent
// window_factor * known_categories questions since the last introduction; once
// that window is full and accuracy exceeds tau, the next category is
// introduced. Every further question that still leaves accuracy at or below
// tau counts toward the stall limit, so an agent that never recovers is
// stopped exactly stall_window questions after its window first filled.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ot3d/error.hpp"
#include "ot3d/features.hpp"
#include "ot3d/rng.hpp"

namespace ot3d {

struct ProtocolConfig {
  double tau = 0.67;
  std::size_t stall_window = 100;
  std::size_t window_factor = 3;
  std::size_t teach_views = 1;
  std::uint64_t seed = 1;

  void validate() const {
    require(tau > 0.0 && tau < 1.0, ErrorCode::invalid_argument, "tau must be in (0, 1)");
    require(stall_window >= 1, ErrorCode::invalid_argument, "stall window must be >= 1");
    require(window_factor >= 1, ErrorCode::invalid_argument, "window factor must be >= 1");
    require(teach_views >= 1, ErrorCode::invalid_argument, "teach views must be >= 1");
  }

  std::string estimator() const {
    return "sliding window of " + std::to_string(window_factor) +
           " x known-category questions since the last introduction; empty window = 0";
  }
};

/// Views grouped by category, already reduced to descriptors.
struct ProtocolDataset {
  std::vector<std::string> categories;
  std::vector<std::vector<FeatureSet>> views;  // views[c][i]

  std::size_t total_views() const {
    std::size_t n = 0;
    for (const auto& v : views) n += v.size();
    return n;
  }
};

struct View {
  std::string id;  // "<category>/<index>"
  const FeatureSet& features;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual void teach(const std::string& category, const std::vector<View>& views) = 0;
  virtual std::string classify(const View& view) = 0;
  virtual void correct(const std::string& category, const View& view) = 0;
  virtual std::map<std::string, std::size_t> instance_counts() const = 0;
};

enum class Action { teach, ask, correct };
enum class TerminalStatus { running, stalled, dataset_exhausted };

inline const char* to_string(Action a) {
  switch (a) {
    case Action::teach: return "teach";
    case Action::ask: return "ask";
    case Action::correct: return "correct";
  }
  return "?";
}

inline const char* to_string(TerminalStatus s) {
  switch (s) {
    case TerminalStatus::running: return "running";
    case TerminalStatus::stalled: return "stalled";
    case TerminalStatus::dataset_exhausted: return "dataset-exhausted";
  }
  return "?";
}

/// One protocol step. Questions answered correctly are `ask`, questions that
/// triggered a correction are `correct`.
struct IterationRecord {
  std::size_t iteration = 0;
  Action action = Action::ask;
  std::string category;
  std::string predicted;  // empty for teach
  bool correct = false;
  std::size_t known_categories = 0;
  double accuracy = 0.0;  // running protocol accuracy after this step
  std::size_t views = 1;  // views taught (teach) or shown (questions)
  std::string view_id;

  bool question() const { return action != Action::teach; }

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct ExperimentTrace {
  ProtocolConfig config;
  std::size_t dataset_categories = 0;
  std::size_t dataset_views = 0;
  std::vector<IterationRecord> records;
  TerminalStatus terminal = TerminalStatus::running;
};

struct Metrics {
  std::size_t qci = 0;
  double alc = 0.0;
  double aic = 0.0;
  double gca = 0.0;
  double apa = 0.0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Fraction correct over the last min(window, available) questions after the
/// most recent teach record; 0 when there are none.
inline double running_accuracy(std::span<const IterationRecord> records, std::size_t window) {
  require(window >= 1, ErrorCode::invalid_argument, "window must be >= 1");
  std::size_t seen = 0, hits = 0;
  for (auto it = records.rbegin(); it != records.rend() && seen < window; ++it) {
    if (it->action == Action::teach) break;
    ++seen;
    if (it->correct) ++hits;
  }
  return seen == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(seen);
}

inline double running_accuracy(const ExperimentTrace& trace, std::size_t window) {
  return running_accuracy(std::span<const IterationRecord>(trace.records), window);
}

inline ExperimentTrace run_experiment(const ProtocolConfig& config, const ProtocolDataset& dataset, Agent& agent) {
  config.validate();
  require(dataset.categories.size() == dataset.views.size(), ErrorCode::invalid_argument,
          "dataset categories and views differ in length");
  require(!dataset.categories.empty() && dataset.total_views() > 0, ErrorCode::empty_input,
          "protocol dataset is empty");

  ExperimentTrace trace;
  trace.config = config;
  trace.dataset_categories = dataset.categories.size();
  trace.dataset_views = dataset.total_views();

  Pcg32 rng(config.seed);
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < dataset.categories.size(); ++c) {
    if (!dataset.views[c].empty()) order.push_back(c);
  }
  shuffle(std::span<std::size_t>(order), rng);

  std::vector<std::vector<std::size_t>> unseen(dataset.categories.size());
  for (std::size_t c = 0; c < dataset.categories.size(); ++c) {
    unseen[c].resize(dataset.views[c].size());
    std::iota(unseen[c].begin(), unseen[c].end(), 0);
  }
  auto draw_view = [&](std::size_t c) {
    auto& pool = unseen[c];
    const std::size_t j = rng.below(pool.size());
    const std::size_t v = pool[j];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    return v;
  };
  auto view_id = [&](std::size_t c, std::size_t v) { return dataset.categories[c] + "/" + std::to_string(v); };

  std::vector<std::size_t> known;
  std::size_t next_intro = 0;
  std::size_t asks_since = 0;
  std::size_t stall = 0;

  auto introduce = [&] {
    const std::size_t c = order[next_intro++];
    const std::size_t n = std::min(config.teach_views, unseen[c].size());
    std::vector<std::string> ids;
    std::vector<View> views;
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < n; ++i) picked.push_back(draw_view(c));
    for (std::size_t v : picked) {
      ids.push_back(view_id(c, v));
      views.push_back(View{ids.back(), dataset.views[c][v]});
    }
    agent.teach(dataset.categories[c], views);
    known.push_back(c);
    asks_since = 0;
    stall = 0;
    IterationRecord r;
    r.iteration = trace.records.size() + 1;
    r.action = Action::teach;
    r.category = dataset.categories[c];
    r.correct = false;
    r.known_categories = known.size();
    r.accuracy = 0.0;
    r.views = n;
    r.view_id = ids.empty() ? std::string{} : ids.front();
    trace.records.push_back(std::move(r));
  };

  introduce();
  for (;;) {
    std::vector<std::size_t> candidates;
    for (std::size_t c : known) {
      if (!unseen[c].empty()) candidates.push_back(c);
    }
    if (candidates.empty()) {
      trace.terminal = TerminalStatus::dataset_exhausted;
      break;
    }
    const std::size_t c = candidates[rng.below(candidates.size())];
    const std::size_t v = draw_view(c);
    const std::string id = view_id(c, v);
    const View view{id, dataset.views[c][v]};
    const std::string predicted = agent.classify(view);
    const bool hit = predicted == dataset.categories[c];
    if (!hit) agent.correct(dataset.categories[c], view);
    ++asks_since;

    const std::size_t window = config.window_factor * known.size();
    IterationRecord r;
    r.iteration = trace.records.size() + 1;
    r.action = hit ? Action::ask : Action::correct;
    r.category = dataset.categories[c];
    r.predicted = predicted;
    r.correct = hit;
    r.known_categories = known.size();
    r.view_id = id;
    trace.records.push_back(r);
    const double acc = running_accuracy(trace, window);
    trace.records.back().accuracy = acc;

    if (asks_since < window) continue;
    if (acc > config.tau) {
      if (next_intro < order.size()) {
        introduce();
        continue;
      }
      trace.terminal = TerminalStatus::dataset_exhausted;
      break;
    }
    if (asks_since > window && ++stall >= config.stall_window) {
      trace.terminal = TerminalStatus::stalled;
      break;
    }
  }
  return trace;
}

/// Stored instances per category implied by a trace: taught views plus one
/// per correction.
inline std::map<std::string, std::size_t> instance_counts_from_trace(const ExperimentTrace& trace) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : trace.records) {
    if (r.action == Action::teach) counts[r.category] += r.views;
    if (r.action == Action::correct) counts[r.category] += 1;
  }
  return counts;
}

inline Metrics compute_metrics(const ExperimentTrace& trace, const std::map<std::string, std::size_t>& instances) {
  require(!trace.records.empty(), ErrorCode::empty_input, "cannot compute metrics of an empty trace");
  Metrics m;
  std::size_t hits = 0;
  double accuracy_sum = 0.0;
  std::vector<std::string> learned;
  for (const auto& r : trace.records) {
    if (r.action == Action::teach) {
      learned.push_back(r.category);
      continue;
    }
    ++m.qci;
    if (r.correct) ++hits;
    accuracy_sum += r.accuracy;
  }
  m.alc = static_cast<double>(learned.size());
  std::size_t stored = 0;
  for (const auto& name : learned) {
    auto it = instances.find(name);
    if (it != instances.end()) stored += it->second;
  }
  m.aic = learned.empty() ? 0.0 : static_cast<double>(stored) / static_cast<double>(learned.size());
  if (m.qci > 0) {
    m.gca = static_cast<double>(hits) / static_cast<double>(m.qci);
    m.apa = accuracy_sum / static_cast<double>(m.qci);
  }
  return m;
}

inline Metrics compute_metrics(const ExperimentTrace& trace) {
  return compute_metrics(trace, instance_counts_from_trace(trace));
}

/// Accuracy over questions whose true category is in `categories`.
inline double subset_accuracy(const ExperimentTrace& trace, std::span<const std::string> categories) {
  std::size_t seen = 0, hits = 0;
  for (const auto& r : trace.records) {
    if (!r.question()) continue;
    if (std::find(categories.begin(), categories.end(), r.category) == categories.end()) continue;
    ++seen;
    if (r.correct) ++hits;
  }
  return seen == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(seen);
}

// ---------------------------------------------------------------------------
// Trace files: JSON lines. First line {"header": {...}}, then one record per
// iteration, last line {"terminal": "..."}.

inline std::string encode_trace(const ExperimentTrace& trace) {
  std::ostringstream os;
  nlohmann::ordered_json header;
  header["seed"] = trace.config.seed;
  header["tau"] = trace.config.tau;
  header["stall_window"] = trace.config.stall_window;
  header["window_factor"] = trace.config.window_factor;
  header["teach_views"] = trace.config.teach_views;
  header["accuracy_estimator"] = trace.config.estimator();
  header["dataset_categories"] = trace.dataset_categories;
  header["dataset_views"] = trace.dataset_views;
  os << nlohmann::ordered_json{{"header", header}}.dump() << '\n';
  for (const auto& r : trace.records) {
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["action"] = to_string(r.action);
    j["category"] = r.category;
    j["predicted"] = r.predicted;
    j["correct"] = r.correct;
    j["known_categories"] = r.known_categories;
    j["accuracy"] = r.accuracy;
    j["views"] = r.views;
    j["view"] = r.view_id;
    os << j.dump() << '\n';
  }
  os << nlohmann::ordered_json{{"terminal", to_string(trace.terminal)}}.dump() << '\n';
  return os.str();
}

inline ExperimentTrace decode_trace(std::string_view text) {
  ExperimentTrace trace;
  std::istringstream is{std::string(text)};
  std::string line;
  bool have_header = false;
  std::size_t previous = 0;
  try {
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.contains("header")) {
        const auto& h = j["header"];
        trace.config.seed = h.at("seed").get<std::uint64_t>();
        trace.config.tau = h.at("tau").get<double>();
        trace.config.stall_window = h.at("stall_window").get<std::size_t>();
        trace.config.window_factor = h.at("window_factor").get<std::size_t>();
        trace.config.teach_views = h.at("teach_views").get<std::size_t>();
        trace.dataset_categories = h.at("dataset_categories").get<std::size_t>();
        trace.dataset_views = h.at("dataset_views").get<std::size_t>();
        have_header = true;
        continue;
      }
      if (j.contains("terminal")) {
        const auto s = j["terminal"].get<std::string>();
        trace.terminal = s == "stalled"             ? TerminalStatus::stalled
                         : s == "dataset-exhausted" ? TerminalStatus::dataset_exhausted
                                                    : TerminalStatus::running;
        continue;
      }
      IterationRecord r;
      r.iteration = j.at("iteration").get<std::size_t>();
      const auto action = j.at("action").get<std::string>();
      r.action = action == "teach" ? Action::teach : action == "ask" ? Action::ask : Action::correct;
      r.category = j.at("category").get<std::string>();
      r.predicted = j.at("predicted").get<std::string>();
      r.correct = j.at("correct").get<bool>();
      r.known_categories = j.at("known_categories").get<std::size_t>();
      r.accuracy = j.at("accuracy").get<double>();
      r.views = j.at("views").get<std::size_t>();
      r.view_id = j.at("view").get<std::string>();
      require(r.iteration > previous, ErrorCode::format_error, "trace iterations must increase");
      previous = r.iteration;
      trace.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format_error, std::string("malformed trace: ") + e.what());
  }
  require(have_header, ErrorCode::format_error, "trace has no header line");
  return trace;
}

}  // namespace ot3d
