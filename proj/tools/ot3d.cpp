// ot3d: command-line front end for the open-ended 3D object learner.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ot3d/experiment.hpp"
#include "ot3d/http_server.hpp"
#include "ot3d/service.hpp"

namespace fs = std::filesystem;
using namespace ot3d;

namespace {

std::string config_text(const std::string& path, const std::vector<std::string>& overrides) {
  std::string text = path.empty() ? std::string{} : binary::read_file(path);
  if (!text.empty() && text.back() != '\n') text += '\n';
  for (const auto& kv : overrides) text += kv + '\n';
  return text;
}

Learner open_store(const fs::path& store, const std::string& config, const std::vector<std::string>& overrides,
                   const std::string& model) {
  if (fs::exists(store / "manifest.json")) {
    if (!config.empty() || !overrides.empty()) {
      std::cerr << "note: " << store << " exists; its saved parameters are used\n";
    }
    return Learner::load(store);
  }
  Learner learner(Params::parse(config_text(config, overrides)));
  if (!model.empty()) learner.load_generic(fs::path(model));
  return learner;
}

FeatureSet features_of(const std::string& file, const Params& params) {
  return extract_features(read_cloud_file(file), params.features);
}

void print_result(const ClassificationResult& r, bool as_json) {
  if (as_json) {
    std::cout << service::to_json(r).dump(2) << '\n';
    return;
  }
  std::cout << r.label;
  if (r.margin) std::cout << "  (margin " << *r.margin << ')';
  std::cout << '\n';
  for (const auto& d : r.ranked()) std::printf("  %-24s %.6f\n", d.category.c_str(), d.ocd);
}

std::vector<fs::path> cloud_files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && is_cloud_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-ended 3D object category learning"};
  app.require_subcommand(1);

  std::string store = "ot3d-store";
  std::string config;
  std::vector<std::string> overrides;
  std::string model;
  auto add_store_opts = [&](CLI::App* cmd) {
    cmd->add_option("--store", store, "instance store directory")->capture_default_str();
    cmd->add_option("--config", config, "key = value parameter file (new stores only)");
    cmd->add_option("--set", overrides, "extra 'key = value' parameter lines");
    cmd->add_option("--model", model, "prebuilt generic model directory (new stores only)");
  };

  // teach / correct / classify --------------------------------------------
  std::string name;
  std::vector<std::string> files;
  auto* teach = app.add_subcommand("teach", "teach a new category from one or more views");
  add_store_opts(teach);
  teach->add_option("name", name, "category name")->required();
  teach->add_option("files", files, "cloud files (.pcd or .ot3d)")->required();

  std::string file;
  auto* correct = app.add_subcommand("correct", "add a misclassified view to an existing category");
  add_store_opts(correct);
  correct->add_option("name", name, "category name")->required();
  correct->add_option("file", file, "cloud file")->required();

  double threshold = std::numeric_limits<double>::quiet_NaN();
  bool as_json = false;
  auto* classify = app.add_subcommand("classify", "classify a view against the store");
  add_store_opts(classify);
  classify->add_option("file", file, "cloud file")->required();
  classify->add_option("--threshold", threshold, "unknown threshold (default: store parameter; inf = closed set)");
  classify->add_flag("--json", as_json, "print the result as JSON");

  auto* refresh = app.add_subcommand("refresh-topics", "resample topic assignments and re-encode the store");
  add_store_opts(refresh);
  std::size_t sweeps = 0;
  refresh->add_option("--sweeps", sweeps, "Gibbs sweeps (default: gibbs_sweeps parameter)");

  auto* rebuild = app.add_subcommand("rebuild-dictionary", "re-cluster the generic dictionary from stored views");
  add_store_opts(rebuild);

  auto* state = app.add_subcommand("state", "list categories and instance counts");
  state->add_option("--store", store, "instance store directory")->capture_default_str();

  // build-generic ------------------------------------------------------------
  std::string dataset;
  std::string layout = "auto";
  std::string out;
  auto* build = app.add_subcommand("build-generic", "build a generic dictionary and topic model from a dataset pool");
  build->add_option("--dataset", dataset, "dataset directory")->required();
  build->add_option("--layout", layout, "auto, flat or nested")->capture_default_str();
  build->add_option("--config", config, "parameter file");
  build->add_option("--set", overrides, "extra 'key = value' parameter lines");
  build->add_option("--out", out, "output model directory")->required();

  // run-protocol / plot ------------------------------------------------------
  std::size_t seeds = 10;
  std::uint64_t first_seed = 1;
  auto* run = app.add_subcommand("run-protocol", "simulated-teacher experiments, one per seed");
  run->add_option("--config", config, "run configuration (learner, protocol and dataset keys)");
  run->add_option("--set", overrides, "extra 'key = value' lines");
  run->add_option("--seeds", seeds, "number of protocol seeds")->capture_default_str();
  run->add_option("--first-seed", first_seed, "first protocol seed")->capture_default_str();
  run->add_option("--out", out, "results directory")->required();

  std::vector<std::string> traces;
  auto* plot = app.add_subcommand("plot", "render trace files to SVG");
  plot->add_option("traces", traces, "trace files or a results directory")->required();
  plot->add_option("--out", out, "SVG file")->required();

  // data utilities -------------------------------------------------------------
  std::string input;
  auto* convert = app.add_subcommand("convert", "convert a cloud file or a dataset tree between .pcd and .ot3d");
  std::string to_format = "ot3d";
  convert->add_option("input", input, "cloud file or directory")->required();
  convert->add_option("output", out, "output file or directory")->required();
  convert->add_option("--to", to_format, "target format for directories: ot3d or pcd")->capture_default_str();

  DatasetSource synth_source;
  std::vector<std::string> family_names;
  std::string synth_format = "pcd";
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (one directory per family)");
  synth->add_option("--families", family_names, "sphere, box, cylinder, cone, mug (default: all)")->delimiter(',');
  synth->add_option("--per-category", synth_source.views_per_category, "views per family")->capture_default_str();
  synth->add_option("--points", synth_source.points, "points per view")->capture_default_str();
  synth->add_option("--noise", synth_source.noise, "noise sigma along the normal (m)")->capture_default_str();
  synth->add_option("--scale-jitter", synth_source.scale_jitter, "relative scale jitter")->capture_default_str();
  synth->add_option("--seed", synth_source.seed, "generation seed")->capture_default_str();
  synth->add_option("--format", synth_format, "pcd or ot3d")->capture_default_str();
  synth->add_option("--out", out, "output directory")->required();

  auto* describe = app.add_subcommand("describe", "keypoint and descriptor summary of a cloud");
  describe->add_option("file", file, "cloud file")->required();
  describe->add_option("--config", config, "parameter file");
  describe->add_option("--set", overrides, "extra 'key = value' parameter lines");

  std::size_t folds = 10;
  std::uint64_t cv_seed = 1;
  auto* cv = app.add_subcommand("cross-validate", "k-fold cross-validation on a directory dataset");
  cv->add_option("--dataset", dataset, "dataset directory")->required();
  cv->add_option("--layout", layout, "auto, flat or nested")->capture_default_str();
  cv->add_option("--config", config, "parameter file");
  cv->add_option("--set", overrides, "extra 'key = value' parameter lines");
  cv->add_option("--folds", folds, "number of folds")->capture_default_str();
  cv->add_option("--seed", cv_seed, "fold assignment seed")->capture_default_str();

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "run the session service over HTTP");
  serve->add_option("--host", host, "bind address")->capture_default_str();
  serve->add_option("--port", port, "port")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (teach->parsed()) {
      Learner learner = open_store(store, config, overrides, model);
      std::vector<FeatureSet> views;
      for (const auto& f : files) views.push_back(features_of(f, learner.params()));
      learner.teach(name, views);
      learner.save(store);
      std::cout << "taught '" << name << "' (" << views.size() << " view" << (views.size() == 1 ? "" : "s")
                << "); " << learner.store().size() << " categories\n";
    } else if (correct->parsed()) {
      Learner learner = open_store(store, config, overrides, model);
      learner.correct(name, features_of(file, learner.params()));
      learner.save(store);
      std::cout << "corrected into '" << name << "' (" << learner.store().find(name)->instances.size()
                << " instances)\n";
    } else if (classify->parsed()) {
      Learner learner = open_store(store, config, overrides, model);
      const auto features = features_of(file, learner.params());
      const auto r = std::isnan(threshold) ? learner.classify(features) : learner.classify(features, threshold);
      print_result(r, as_json);
    } else if (refresh->parsed()) {
      Learner learner = open_store(store, config, overrides, model);
      learner.refresh_topics(sweeps == 0 ? std::nullopt : std::optional<std::size_t>(sweeps));
      learner.save(store);
      std::cout << "topics refreshed\n";
    } else if (rebuild->parsed()) {
      Learner learner = open_store(store, config, overrides, model);
      learner.rebuild_dictionary();
      learner.save(store);
      std::cout << "generic dictionary rebuilt\n";
    } else if (state->parsed()) {
      const Learner learner = Learner::load(store);
      for (const auto& [category, count] : learner.instance_counts()) {
        std::printf("%-24s %zu\n", category.c_str(), count);
      }
      std::cout << (learner.ready() ? "generic model ready" : "generic model not built") << '\n';
    } else if (build->parsed()) {
      const Params params = Params::parse(config_text(config, overrides));
      DatasetSource source;
      source.root = dataset;
      source.layout = layout == "flat" ? DatasetLayout::flat
                      : layout == "nested" ? DatasetLayout::nested
                                           : DatasetLayout::automatic;
      std::vector<std::string> warnings;
      const auto data = make_protocol_dataset(source, params.features, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      const Learner learner = pooled_learner(params, data);
      learner.save_generic(out);
      std::cout << "generic model (" << params.generic_words << " words, " << params.topics << " topics) written to "
                << out << '\n';
    } else if (run->parsed()) {
      const RunConfig rc = RunConfig::parse(config_text(config, overrides));
      std::vector<std::string> warnings;
      const auto data = make_protocol_dataset(rc.source, rc.params.features, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      fs::create_directories(out);
      std::vector<std::pair<std::uint64_t, Metrics>> rows;
      std::vector<ExperimentTrace> all;
      for (std::uint64_t s = first_seed; s < first_seed + seeds; ++s) {
        ProtocolConfig protocol = rc.protocol;
        protocol.seed = s;
        const auto result = run_learner_experiment(rc.params, protocol, data);
        const fs::path trace_file = fs::path(out) / ("trace_seed" + std::to_string(s) + ".jsonl");
        binary::write_file(trace_file.string(), encode_trace(result.trace));
        rows.emplace_back(s, result.metrics);
        all.push_back(result.trace);
        std::printf("seed %llu: QCI %zu ALC %.0f AIC %.2f GCA %.4f APA %.4f (%s)\n",
                    static_cast<unsigned long long>(s), result.metrics.qci, result.metrics.alc, result.metrics.aic,
                    result.metrics.gca, result.metrics.apa, to_string(result.trace.terminal));
      }
      binary::write_file((fs::path(out) / "summary.csv").string(), summary_csv(rows, rc.protocol));
      binary::write_file((fs::path(out) / "accuracy.svg").string(), render_svg(all, rc.protocol.tau));
      binary::write_file((fs::path(out) / "config.cfg").string(), config_text(config, overrides));
    } else if (plot->parsed()) {
      std::vector<ExperimentTrace> loaded;
      double tau = ProtocolConfig{}.tau;
      for (const auto& t : traces) {
        std::vector<fs::path> paths;
        if (fs::is_directory(t)) {
          for (const auto& e : fs::directory_iterator(t)) {
            if (e.path().extension() == ".jsonl") paths.push_back(e.path());
          }
          std::sort(paths.begin(), paths.end());
        } else {
          paths.emplace_back(t);
        }
        for (const auto& p : paths) loaded.push_back(decode_trace(binary::read_file(p.string())));
      }
      if (!loaded.empty()) tau = loaded.front().config.tau;
      binary::write_file(out, render_svg(loaded, tau));
      std::cout << loaded.size() << " traces plotted to " << out << '\n';
    } else if (convert->parsed()) {
      if (fs::is_directory(input)) {
        std::size_t n = 0;
        for (const auto& src : cloud_files_under(input)) {
          fs::path dst = fs::path(out) / fs::relative(src, input);
          dst.replace_extension(to_format == "pcd" ? ".pcd" : ".ot3d");
          fs::create_directories(dst.parent_path());
          try {
            write_cloud_file(dst.string(), read_cloud_file(src.string()));
            ++n;
          } catch (const Error& e) {
            std::cerr << "warning: skipped " << src << ": " << e.what() << '\n';
          }
        }
        std::cout << n << " clouds converted\n";
      } else {
        write_cloud_file(out, read_cloud_file(input));
      }
    } else if (synth->parsed()) {
      if (!family_names.empty()) {
        synth_source.families.clear();
        for (const auto& f : family_names) synth_source.families.push_back(parse_family(f));
      }
      const std::string ext = synth_format == "ot3d" ? ".ot3d" : ".pcd";
      for (const auto& [family, clouds] : synthetic_clouds(synth_source)) {
        const fs::path dir = fs::path(out) / family;
        fs::create_directories(dir);
        for (std::size_t i = 0; i < clouds.size(); ++i) {
          char stem[64];
          std::snprintf(stem, sizeof stem, "%s_%03zu", family.c_str(), i);
          write_cloud_file((dir / (stem + ext)).string(), clouds[i]);
        }
      }
      std::cout << synth_source.families.size() << " families x " << synth_source.views_per_category
                << " views written to " << out << '\n';
    } else if (describe->parsed()) {
      const Params params = Params::parse(config_text(config, overrides));
      const PointCloud cloud = ensure_normals(read_cloud_file(file), params.features.effective_normal_radius());
      const auto keypoints = select_keypoints(cloud, params.features.voxel_size);
      const auto images = describe_object(cloud, params.features);
      std::cout << "points      " << cloud.size() << '\n'
                << "keypoints   " << keypoints.size() << '\n'
                << "descriptors " << images.size() << " x " << params.features.descriptor_size() << '\n';
    } else if (cv->parsed()) {
      const Params params = Params::parse(config_text(config, overrides));
      DatasetSource source;
      source.root = dataset;
      source.layout = layout == "flat" ? DatasetLayout::flat
                      : layout == "nested" ? DatasetLayout::nested
                                           : DatasetLayout::automatic;
      std::vector<std::string> warnings;
      const auto data = make_protocol_dataset(source, params.features, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      const auto r = cross_validate(data, params, folds, cv_seed);
      std::printf("%zu-fold accuracy %.4f (%zu/%zu)\n", r.folds, r.accuracy(), r.correct, r.predictions);
    } else if (serve->parsed()) {
      service::SessionManager manager;
      httplib::Server server;
      service::bind_routes(server, manager);
      std::cout << "listening on http://" << host << ':' << port << '\n' << std::flush;
      if (!server.listen(host, port)) {
        std::cerr << "error: cannot bind " << host << ':' << port << '\n';
        return 1;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
