#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ot3d/binary_io.hpp"
#include "ot3d/category_memory.hpp"
#include "ot3d/codebook.hpp"
#include "ot3d/config.hpp"
#include "ot3d/error.hpp"
#include "ot3d/representation.hpp"
#include "ot3d/topic_model.hpp"

namespace ot3d {

/// Generic dictionary of `num_words` words from `features`; pads with
/// jittered copies when there are fewer features than words.
inline Dictionary init_generic_dictionary(std::span<const Descriptor> features, std::size_t num_words,
                                          std::uint64_t seed) {
  require(!features.empty(), ErrorCode::empty_input, "generic dictionary needs features");
  Dictionary dict = features.size() >= num_words ? build_dictionary(features, num_words, seed)
                                                 : init_category_dictionary("", features, num_words, seed);
  dict.kind = Dictionary::Kind::generic;
  dict.category.clear();
  return dict;
}

/// The open-ended learner: shared topics over a generic dictionary, one
/// dictionary per category, and an instance store of taught/corrected views.
///
/// The generic side is either prebuilt (bootstrap_generic / load) or grown
/// lazily: while fewer than `bootstrap_views` views have been learned, every
/// learning action rebuilds the generic dictionary and topic model from all
/// stored views.
class Learner {
 public:
  explicit Learner(Params params = {}) : params_(std::move(params)) { params_.validate(); }

  const Params& params() const { return params_; }
  const InstanceStore& store() const { return store_; }
  const TopicModel& model() const { return model_; }
  const Dictionary& generic_dictionary() const { return generic_; }
  bool ready() const { return model_.has_topics(); }
  bool prebuilt() const { return prebuilt_; }
  std::size_t views_learned() const { return views_learned_; }

  /// Builds the generic dictionary by k-means over a pool of
  /// `pool_fraction` of `objects`, then absorbs each pooled object into the
  /// topic model and synthesizes topics.
  void bootstrap_generic(std::span<const FeatureSet> objects) {
    const auto pool = build_pool(objects, params_.pool_fraction, derive_seed(params_.seed, 3));
    generic_ = init_generic_dictionary(pool.features, params_.generic_words, derive_seed(params_.seed, 1));
    model_ = fresh_model();
    for (std::size_t i : pool.objects) absorb(objects[i]);
    model_.synthesize_topics(generic_);
    prebuilt_ = true;
    if (!store_.empty()) recompute_all(store_, model_);
  }

  void load_generic(Dictionary generic, TopicModel model) {
    require(generic.size() == model.vocabulary(), ErrorCode::dimension_mismatch,
            "generic dictionary does not match the topic model vocabulary");
    require(model.vocabulary() == params_.generic_words && model.num_topics() == params_.topics,
            ErrorCode::dimension_mismatch, "prebuilt model does not match configured generic_words/topics");
    generic_ = std::move(generic);
    model_ = std::move(model);
    if (!model_.has_topics()) model_.synthesize_topics(generic_);
    prebuilt_ = true;
    if (!store_.empty()) recompute_all(store_, model_);
  }

  void teach(const std::string& name, std::span<const FeatureSet> views) {
    require(store_.find(name) == nullptr, ErrorCode::duplicate_category, "category '" + name + "' already exists");
    require(!views.empty(), ErrorCode::empty_input, "teach needs at least one view");
    for (const auto& v : views) require(!v.empty(), ErrorCode::empty_input, "teach view without features");
    ++stamp_;
    const bool changed = before_learning(views);
    ot3d::teach(store_, name, views, model_, memory_options(), stamp_);
    views_learned_ += views.size();
    if (changed) recompute_all(store_, model_);
  }

  void teach(const std::string& name, const FeatureSet& view) { teach(name, std::span<const FeatureSet>(&view, 1)); }

  void correct(const std::string& name, const FeatureSet& view) {
    require(store_.find(name) != nullptr, ErrorCode::unknown_category, "unknown category '" + name + "'");
    require(!view.empty(), ErrorCode::empty_input, "correct view without features");
    ++stamp_;
    const bool changed = before_learning(std::span<const FeatureSet>(&view, 1));
    ot3d::correct(store_, name, view, model_, stamp_);
    ++views_learned_;
    if (changed) recompute_all(store_, model_);
  }

  /// Minimum-OCD classification; `threshold` defaults to the configured
  /// unknown threshold (pass infinity for closed-set argmin).
  ClassificationResult classify(const FeatureSet& target, std::optional<double> threshold = std::nullopt) const {
    const double theta = threshold.value_or(params_.unknown_threshold);
    if (store_.empty() || !ready()) return decide({}, theta);
    return ot3d::classify(target, store_, model_, theta, params_.distance());
  }

  /// Joint Gibbs sweeps over every absorbed object, then re-synthesis and
  /// re-encoding of the whole store. No-op before the generic model exists.
  void refresh_topics(std::optional<std::size_t> sweeps = std::nullopt) {
    if (!ready()) return;
    model_.refresh_topics(sweeps.value_or(params_.gibbs_sweeps), generic_);
    recompute_all(store_, model_);
  }

  /// Re-clusters the generic dictionary from every stored view and re-absorbs
  /// them into a fresh topic model. No-op on an empty store.
  void rebuild_dictionary() {
    if (store_.empty()) return;
    rebuild_from_store({});
    recompute_all(store_, model_);
  }

  std::map<std::string, std::size_t> instance_counts() const {
    std::map<std::string, std::size_t> out;
    for (const auto& c : store_.categories()) out[c.name] = c.instances.size();
    return out;
  }

  // Directory layout: manifest.json, params.cfg, generic.otdc, model.otlm,
  // categories/NNNN.otcm (creation order).
  void save(const std::filesystem::path& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "categories");
    for (const auto& entry : fs::directory_iterator(dir / "categories")) {
      if (entry.path().extension() == ".otcm") fs::remove(entry.path());
    }
    binary::write_file((dir / "params.cfg").string(), params_.to_config());
    nlohmann::json manifest;
    manifest["format"] = "ot3d-store";
    manifest["version"] = 1;
    manifest["config_hash"] = params_.config_hash();
    manifest["prebuilt"] = prebuilt_;
    manifest["views_learned"] = views_learned_;
    manifest["stamp"] = stamp_;
    manifest["ready"] = ready();
    manifest["categories"] = nlohmann::json::array();
    for (std::size_t i = 0; i < store_.size(); ++i) {
      const auto& c = store_.categories()[i];
      char file[32];
      std::snprintf(file, sizeof file, "%04zu.otcm", i);
      binary::write_file((dir / "categories" / file).string(), encode_category(c));
      manifest["categories"].push_back({{"name", c.name}, {"instances", c.instances.size()}, {"file", file}});
    }
    if (ready()) {
      binary::write_file((dir / "generic.otdc").string(), encode_dictionary(generic_));
      binary::write_file((dir / "model.otlm").string(), model_.encode());
    }
    binary::write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  }

  static Learner load(const std::filesystem::path& dir) {
    const auto manifest_text = binary::read_file((dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(manifest_text);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::format_error, "manifest.json: " + std::string(e.what()));
    }
    require(manifest.value("format", "") == "ot3d-store", ErrorCode::format_error, "not an ot3d store");
    Learner learner(Params::parse(binary::read_file((dir / "params.cfg").string())));
    require(manifest.value("config_hash", "") == learner.params_.config_hash(), ErrorCode::format_error,
            "params.cfg does not match the manifest config hash");
    learner.prebuilt_ = manifest.value("prebuilt", false);
    learner.views_learned_ = manifest.value("views_learned", std::size_t{0});
    learner.stamp_ = manifest.value("stamp", std::uint64_t{0});
    if (manifest.value("ready", false)) {
      learner.generic_ = decode_dictionary(binary::read_file((dir / "generic.otdc").string()));
      learner.model_ = TopicModel::decode(binary::read_file((dir / "model.otlm").string()));
    }
    for (const auto& entry : manifest.at("categories")) {
      auto category = decode_category(binary::read_file((dir / "categories" / entry.at("file").get<std::string>()).string()));
      require(category.name == entry.at("name").get<std::string>(), ErrorCode::format_error,
              "category file does not match manifest entry");
      learner.store_.categories().push_back(std::move(category));
    }
    return learner;
  }

  /// Saves only the generic side (dictionary + topic model) for reuse as a
  /// prebuilt model.
  void save_generic(const std::filesystem::path& dir) const {
    require(ready(), ErrorCode::not_ready, "generic model not built yet");
    std::filesystem::create_directories(dir);
    binary::write_file((dir / "generic.otdc").string(), encode_dictionary(generic_));
    binary::write_file((dir / "model.otlm").string(), model_.encode());
  }

  void load_generic(const std::filesystem::path& dir) {
    load_generic(decode_dictionary(binary::read_file((dir / "generic.otdc").string())),
                 TopicModel::decode(binary::read_file((dir / "model.otlm").string())));
  }

 private:
  MemoryOptions memory_options() const { return {params_.specific_words, derive_seed(params_.seed, 4)}; }

  TopicModel fresh_model() const {
    return TopicModel(params_.topics, params_.generic_words, params_.alpha, params_.beta, derive_seed(params_.seed, 2));
  }

  void absorb(const FeatureSet& view) { model_.absorb(quantize(view, generic_), params_.gibbs_sweeps); }

  bool bootstrapping() const { return !prebuilt_ && views_learned_ < params_.bootstrap_views; }

  /// Brings the generic side up to date for `incoming` views. Returns true
  /// when topics changed and the store must be re-encoded.
  bool before_learning(std::span<const FeatureSet> incoming) {
    if (bootstrapping() || !ready()) {
      rebuild_from_store(incoming);
      return true;
    }
    if (!params_.absorb_on_learn) return false;
    for (const auto& v : incoming) absorb(v);
    model_.synthesize_topics(generic_);
    return true;
  }

  void rebuild_from_store(std::span<const FeatureSet> incoming) {
    std::vector<const FeatureSet*> views;
    for (const auto& c : store_.categories()) {
      for (const auto& instance : c.instances) views.push_back(&instance.features);
    }
    for (const auto& v : incoming) views.push_back(&v);
    FeatureSet pooled;
    for (const auto* v : views) pooled.insert(pooled.end(), v->begin(), v->end());
    generic_ = init_generic_dictionary(pooled, params_.generic_words, derive_seed(params_.seed, 1));
    model_ = fresh_model();
    for (const auto* v : views) absorb(*v);
    model_.synthesize_topics(generic_);
  }

  Params params_;
  Dictionary generic_;
  TopicModel model_;
  InstanceStore store_;
  bool prebuilt_ = false;
  std::size_t views_learned_ = 0;
  std::uint64_t stamp_ = 0;
};

}  // namespace ot3d
