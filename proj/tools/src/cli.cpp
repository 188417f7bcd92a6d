#include "fer/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "fer/errors.hpp"
#include "fer/eval.hpp"
#include "fer/image.hpp"
#include "fer/interpret.hpp"
#include "fer/service.hpp"
#include "fer/train.hpp"
#include "fer/weights_io.hpp"
#include "json.hpp"

namespace fer {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<bool> g_interrupted{false};

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ArgumentError("unknown split '" + s + "' (train, val, test)");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

// Accepts any decodable image; larger or color inputs are converted with the
// standard preprocessing (gray + resize to 48x48).
GrayImage load_input_image(const fs::path& path) { return prepare_image(read_image(path)); }

void print_probs(std::ostream& out, const std::vector<double>& probs) {
  json j;
  j["probabilities"] = probs;
  json named = json::object();
  for (int c = 0; c < kNumClasses; ++c) named[std::string(emotion_name(emotion_from_index(c)))] = probs[c];
  j["by_class"] = named;
  j["label"] = emotion_name(emotion_from_index(argmax(probs)));
  out << j.dump(2) << "\n";
}

json counts_json(const ClassCounts& counts) {
  json j = json::object();
  std::size_t total = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    j[std::string(emotion_name(emotion_from_index(c)))] = counts[c];
    total += counts[c];
  }
  j["total"] = total;
  return j;
}

json eval_json(const ConfusionMatrix& cm) {
  json j;
  j["accuracy"] = cm.accuracy();
  j["total"] = cm.total();
  j["confusion"] = json::parse(confusion_json(cm));
  return j;
}

struct TrainArgs {
  std::string config;
  std::string arch;
  std::string dataset;
  std::string output;
  std::vector<std::string> aux;
  std::string webapp_dir;
  double webapp_train_fraction = -1;
  std::size_t train_subset = 0;
  std::size_t val_subset = 0;
  int epochs = -1;
  double lr0 = -1;
  bool quiet = false;
};

// Stratified subset of `n` samples (0 keeps everything).
Dataset subset(const Dataset& d, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= d.size()) return d;
  return stratified_split(d, static_cast<double>(n) / static_cast<double>(d.size()), seed).first;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::map<std::string, std::string> values;
  if (!a.config.empty()) values = read_key_values(a.config);
  std::map<std::string, std::string> workflow;
  TrainConfig config = parse_train_config(values, &workflow);

  auto take = [&](const char* key, const std::string& override_value) {
    if (!override_value.empty()) return override_value;
    auto it = workflow.find(key);
    return it == workflow.end() ? std::string() : it->second;
  };
  const std::string arch_name = take("arch", a.arch).empty() ? "five-layer" : take("arch", a.arch);
  const std::string dataset = take("dataset", a.dataset);
  std::string output = take("output", a.output);
  if (output.empty()) output = "weights.ferw";
  std::vector<std::string> aux = a.aux;
  if (aux.empty() && workflow.count("aux_dirs")) aux = split_list(workflow["aux_dirs"]);
  const std::string webapp_dir = take("webapp_dir", a.webapp_dir);
  double webapp_fraction = a.webapp_train_fraction;
  if (webapp_fraction < 0) webapp_fraction = workflow.count("webapp_train_fraction")
                                                 ? std::stod(workflow["webapp_train_fraction"])
                                                 : 0.8;
  std::size_t train_subset = a.train_subset;
  if (!train_subset && workflow.count("train_subset")) train_subset = std::stoul(workflow["train_subset"]);
  std::size_t val_subset = a.val_subset;
  if (!val_subset && workflow.count("val_subset")) val_subset = std::stoul(workflow["val_subset"]);
  for (const char* key : {"arch", "dataset", "output", "aux_dirs", "webapp_dir", "webapp_train_fraction",
                          "train_subset", "val_subset"}) {
    workflow.erase(key);
  }
  if (!workflow.empty()) throw DataError("unknown config key '" + workflow.begin()->first + "'");
  if (a.epochs > 0) config.max_epochs = a.epochs;
  if (a.lr0 >= 0) config.lr0 = a.lr0;
  if (dataset.empty()) throw ArgumentError("train needs a dataset (--dataset or 'dataset =' in the config)");
  config.validate();

  Dataset train, val;
  if (fs::is_directory(dataset)) {
    auto [tr, va] = stratified_split(load_class_directories(dataset), 0.9, config.seed);
    train = std::move(tr);
    val = std::move(va);
  } else {
    FerSplits splits = load_fer_csv(dataset);
    train = std::move(splits.train);
    val = std::move(splits.val);
  }
  std::vector<Dataset> train_parts{std::move(train)};
  for (const auto& dir : aux) train_parts.push_back(load_class_directories(dir));
  if (!webapp_dir.empty()) {
    auto [wtrain, wval] = stratified_split(load_class_directories(webapp_dir), webapp_fraction, config.seed);
    train_parts.push_back(std::move(wtrain));
    std::vector<Dataset> val_parts{std::move(val), std::move(wval)};
    val = merge(val_parts);
  }
  train = subset(merge(train_parts), train_subset, config.seed);
  val = subset(val, val_subset, config.seed ^ 0x7A1);
  train.split = Split::kTrain;
  val.split = Split::kVal;
  if (train.size() == 0 || val.size() == 0) throw DataError("training and validation sets must be non-empty");

  ModelGraph model = ModelGraph::build(parse_arch(arch_name), config.seed);
  if (!a.quiet) {
    err << "training " << arch_name << " (" << model.param_count() << " parameters) on " << train.size()
        << " samples, validating on " << val.size() << "\n";
  }
  std::ofstream history;
  auto on_epoch = [&](const EpochRecord& r, const ModelGraph&) {
    if (!a.quiet) err << history_json_line(r) << "\n";
    return !g_interrupted.load();
  };
  FitResult result = fit(std::move(model), train, val, config, on_epoch);
  save_weights(result.model, output);
  json summary;
  summary["weights"] = output;
  summary["epochs"] = result.state.epoch;
  summary["best_val_accuracy"] = result.state.best_val_accuracy;
  summary["final_lr"] = result.state.current_lr;
  out << summary.dump(2) << "\n";
  return kExitOk;
}

void on_sigint(int) { g_interrupted = true; }

}  // namespace

Dataset load_dataset(const fs::path& path, Split split) {
  if (fs::is_directory(path)) {
    Dataset d = load_class_directories(path);
    d.split = split;
    return d;
  }
  FerSplits splits = load_fer_csv(path);
  switch (split) {
    case Split::kTrain: return std::move(splits.train);
    case Split::kVal: return std::move(splits.val);
    case Split::kTest: return std::move(splits.test);
  }
  return {};
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Facial-expression recognition toolkit"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", train_args.config, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--arch", train_args.arch, "baseline | five-layer");
  train->add_option("--dataset", train_args.dataset, "FER2013 CSV or class-directory root");
  train->add_option("--output,-o", train_args.output, "Output weights file");
  train->add_option("--aux", train_args.aux, "Auxiliary class-directory roots merged into training");
  train->add_option("--webapp-dir", train_args.webapp_dir, "Collected samples, split into train/val");
  train->add_option("--webapp-train-fraction", train_args.webapp_train_fraction);
  train->add_option("--train-subset", train_args.train_subset, "Stratified training subset size");
  train->add_option("--val-subset", train_args.val_subset, "Stratified validation subset size");
  train->add_option("--epochs", train_args.epochs, "Override max_epochs");
  train->add_option("--lr0", train_args.lr0, "Override lr0");
  train->add_flag("--quiet,-q", train_args.quiet);

  std::string weights, dataset, split_text = "test", image, method = "occlusion", out_path, spec;
  bool tta = false;
  std::uint64_t seed = 0;
  std::size_t errors_top_k = 0;

  auto* eval = app.add_subcommand("eval", "Accuracy and confusion matrix");
  eval->add_option("--weights", weights)->required();
  eval->add_option("--dataset", dataset)->required();
  eval->add_option("--split", split_text, "train | val | test (CSV only)");
  eval->add_option("--errors", errors_top_k, "Write the top-K errors per confusion cell as JSON lines to --out");
  eval->add_option("--out", out_path);

  auto* predict = app.add_subcommand("predict", "Classify one image");
  predict->add_option("--weights", weights)->required();
  predict->add_option("image", image)->required();
  predict->add_flag("--tta", tta, "Average over the test-time augmentation set");
  predict->add_option("--seed", seed, "TTA seed");

  auto* ens = app.add_subcommand("ensemble-eval", "Evaluate a soft-voting ensemble");
  ens->add_option("spec", spec, "JSON list of {weights_path, tta}")->required();
  ens->add_option("--dataset", dataset)->required();
  ens->add_option("--split", split_text);
  ens->add_option("--seed", seed, "TTA seed");

  auto* explain = app.add_subcommand("explain", "Render an occlusion or saliency heatmap");
  explain->add_option("--weights", weights)->required();
  explain->add_option("image", image)->required();
  explain->add_option("--method", method)->check(CLI::IsMember({"occlusion", "saliency"}));
  explain->add_option("--out", out_path)->required();
  std::string target_text;
  explain->add_option("--target", target_text, "Class to explain (default: predicted)");

  auto* stats = app.add_subcommand("dataset-stats", "Per-class sample counts");
  stats->add_option("--dataset", dataset)->required();

  ServiceConfig service_config;
  std::string data_root;
  bool no_samples = false;
  auto* serve = app.add_subcommand("serve", "HTTP inference and sample-collection service");
  serve->add_option("--weights", weights)->required();
  serve->add_option("--port", service_config.port);
  serve->add_option("--host", service_config.host);
  serve->add_option("--data-root", data_root, "Class-directory root for /samples (default $FER_DATA_ROOT)");
  serve->add_flag("--no-samples", no_samples, "Disable POST /samples");
  serve->add_option("--cors-origin", service_config.cors_origin);
  serve->add_option("--seed", service_config.tta_seed, "TTA seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_args, out, err);

    if (*eval) {
      const ModelGraph model = load_weights(weights);
      const Dataset data = load_dataset(dataset, parse_split(split_text));
      const Tensor probs = predict_dataset(model, data);
      out << eval_json(confusion_matrix(probs, data)).dump(2) << "\n";
      if (errors_top_k > 0) {
        if (out_path.empty()) throw ArgumentError("--errors needs --out");
        std::ofstream f(out_path);
        f << error_report_jsonl(error_report(probs, data, errors_top_k));
        if (!f) throw DataError("cannot write " + out_path);
      }
      return kExitOk;
    }

    if (*predict) {
      const ModelGraph model = load_weights(weights);
      const GrayImage img = load_input_image(image);
      print_probs(out, tta ? predict_tta(model, img, AugmentPolicy{}, seed) : predict_single(model, img));
      return kExitOk;
    }

    if (*ens) {
      const Ensemble ensemble(load_ensemble_spec(spec), AugmentPolicy{}, seed);
      const Dataset data = load_dataset(dataset, parse_split(split_text));
      json j = eval_json(confusion_matrix(ensemble.predict_dataset(data), data));
      j["members"] = ensemble.size();
      out << j.dump(2) << "\n";
      return kExitOk;
    }

    if (*explain) {
      const ModelGraph model = load_weights(weights);
      const GrayImage img = load_input_image(image);
      std::optional<Emotion> target;
      if (!target_text.empty()) {
        target = parse_emotion(target_text);
        if (!target) throw ArgumentError("unknown class '" + target_text + "'");
      }
      Heatmap map;
      if (method == "saliency") {
        map = saliency_map(model, img, target ? *target : emotion_from_index(argmax(predict_single(model, img))));
      } else {
        OcclusionOptions opts;
        opts.target = target;
        map = occlusion_map(model, img, opts);
      }
      render_heatmap(map, img, out_path);
      out << heatmap_json(map) << "\n";
      return kExitOk;
    }

    if (*stats) {
      json j;
      if (fs::is_directory(dataset)) {
        DirectoryReport report;
        const Dataset d = load_class_directories(dataset, &report);
        j["all"] = counts_json(d.class_counts);
        j["warnings"] = report.warnings;
        j["skipped"] = report.skipped.size();
      } else {
        const FerSplits s = load_fer_csv(dataset);
        ClassCounts all{};
        for (const Dataset* d : {&s.train, &s.val, &s.test}) {
          j[std::string(split_name(d->split))] = counts_json(d->class_counts);
          for (int c = 0; c < kNumClasses; ++c) all[c] += d->class_counts[c];
        }
        j["all"] = counts_json(all);
      }
      out << j.dump(2) << "\n";
      return kExitOk;
    }

    if (*serve) {
      service_config.weights = weights;
      if (!data_root.empty()) service_config.data_root = data_root;
      service_config.enable_samples = !no_samples;
      InferenceService service(service_config);
      std::signal(SIGINT, on_sigint);
      std::signal(SIGTERM, on_sigint);
      const int port = service.start();
      err << "listening on " << service_config.host << ":" << port << "\n";
      while (!g_interrupted.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        if (!service.load_error().empty()) {
          err << "error: " << service.load_error() << "\n";
          service.stop();
          return kExitData;
        }
      }
      service.stop();
      return kExitOk;
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace fer
