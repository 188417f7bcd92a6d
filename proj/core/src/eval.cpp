#include "fer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "fer/errors.hpp"
#include "fer/weights_io.hpp"
#include "json.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

Tensor predict_dataset(const ModelGraph& model, const Dataset& dataset, std::size_t batch_size) {
  if (dataset.empty()) throw ArgumentError("predict_dataset: empty dataset");
  const std::size_t classes = model.num_outputs();
  Tensor out({dataset.size(), classes});
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t end = std::min(dataset.size(), start + batch_size);
    indices.resize(end - start);
    std::iota(indices.begin(), indices.end(), start);
    const Tensor probs = model.predict(make_batch(dataset, indices));
    std::copy(probs.values().begin(), probs.values().end(), out.data() + start * classes);
  }
  return out;
}

int argmax(std::span<const double> row) {
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

std::vector<double> probs_row(const Tensor& probs, std::size_t row) {
  const std::size_t cols = probs.dim(1);
  return std::vector<double>(probs.data() + row * cols, probs.data() + (row + 1) * cols);
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), std::size_t{0});
  return t;
}

std::size_t ConfusionMatrix::row_sum(int true_class) const {
  const auto& row = counts.at(static_cast<std::size_t>(true_class));
  return std::accumulate(row.begin(), row.end(), std::size_t{0});
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  if (n == 0) throw ArgumentError("accuracy: no samples evaluated");
  std::size_t diag = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) diag += counts[c][c];
  return static_cast<double>(diag) / static_cast<double>(n);
}

double ConfusionMatrix::misclassification_rate(int true_class) const {
  const std::size_t n = row_sum(true_class);
  if (n == 0) return 0.0;
  const auto c = static_cast<std::size_t>(true_class);
  return 1.0 - static_cast<double>(counts[c][c]) / static_cast<double>(n);
}

ConfusionMatrix confusion_matrix(const Tensor& probs, const Dataset& dataset) {
  if (probs.rank() != 2 || probs.dim(0) != dataset.size() || probs.dim(1) != kNumClasses) {
    throw ShapeError("confusion_matrix: expected " + std::to_string(dataset.size()) +
                     " x 7 probabilities");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto row = probs_row(probs, i);
    const int predicted = argmax(row);
    ++cm.counts[static_cast<std::size_t>(dataset.samples[i].label)][static_cast<std::size_t>(predicted)];
  }
  return cm;
}

ConfusionMatrix confusion_matrix(const ModelGraph& model, const Dataset& dataset) {
  if (dataset.empty()) return {};
  return confusion_matrix(predict_dataset(model, dataset), dataset);
}

double accuracy(const Tensor& probs, const Dataset& dataset) {
  if (dataset.empty()) throw ArgumentError("accuracy: empty dataset");
  return confusion_matrix(probs, dataset).accuracy();
}

double accuracy(const ModelGraph& model, const Dataset& dataset) {
  if (dataset.empty()) throw ArgumentError("accuracy: empty dataset");
  return confusion_matrix(model, dataset).accuracy();
}

std::string confusion_json(const ConfusionMatrix& cm) {
  nlohmann::ordered_json j;
  std::vector<std::string> labels;
  for (int c = 0; c < kNumClasses; ++c) labels.emplace_back(emotion_name(static_cast<Emotion>(c)));
  j["labels"] = labels;
  j["counts"] = cm.counts;
  j["total"] = cm.total();
  j["accuracy"] = cm.total() ? cm.accuracy() : 0.0;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (int c = 0; c < kNumClasses; ++c) {
    per_class[labels[static_cast<std::size_t>(c)]] = {
        {"support", cm.row_sum(c)},
        {"recall", cm.row_sum(c) ? 1.0 - cm.misclassification_rate(c) : 0.0},
        {"misclassification_rate", cm.misclassification_rate(c)}};
  }
  j["per_class"] = per_class;
  return j.dump(2);
}

std::string confusion_table(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << std::setw(10) << "true\\pred";
  for (int c = 0; c < kNumClasses; ++c) os << std::setw(9) << emotion_name(static_cast<Emotion>(c));
  os << std::setw(9) << "miss%" << '\n';
  for (int r = 0; r < kNumClasses; ++r) {
    os << std::setw(10) << emotion_name(static_cast<Emotion>(r));
    for (int c = 0; c < kNumClasses; ++c) {
      os << std::setw(9) << cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    os << std::setw(8) << std::fixed << std::setprecision(1)
       << 100.0 * cm.misclassification_rate(r) << "%\n";
  }
  return os.str();
}

std::vector<double> soft_vote(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw ArgumentError("soft_vote: no probability rows");
  const std::size_t width = rows.front().size();
  std::vector<double> mean(width, 0.0);
  for (const auto& row : rows) {
    if (row.size() != width) throw ArgumentError("soft_vote: rows differ in length");
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-5) throw ArgumentError("soft_vote: row does not sum to 1");
  }
  // Running mean over a sorted copy of each column: independent of member
  // order, and exactly idempotent on identical rows.
  std::vector<double> column(rows.size());
  for (std::size_t j = 0; j < width; ++j) {
    for (std::size_t i = 0; i < rows.size(); ++i) column[i] = rows[i][j];
    std::sort(column.begin(), column.end());
    double m = column.front();
    for (std::size_t i = 1; i < column.size(); ++i) {
      m += (column[i] - m) / static_cast<double>(i + 1);
    }
    mean[j] = m;
  }
  return mean;
}

std::vector<double> predict_single(const ModelGraph& model, const GrayImage& image) {
  return probs_row(model.predict(image_tensor(image)), 0);
}

std::vector<double> predict_tta(const ModelGraph& model, const GrayImage& image,
                                const AugmentPolicy& policy, std::uint64_t seed) {
  const auto images = tta_set(image, policy, seed);
  const Tensor probs = model.predict(images_tensor(images));
  std::vector<std::vector<double>> rows;
  rows.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) rows.push_back(probs_row(probs, i));
  return soft_vote(rows);
}

EnsembleSpec parse_ensemble_spec(const std::string& json_text, const std::filesystem::path& base_dir) {
  EnsembleSpec spec;
  try {
    const auto j = nlohmann::json::parse(json_text);
    if (!j.is_array()) throw DataError("ensemble spec must be a JSON list");
    for (const auto& entry : j) {
      EnsembleMember m;
      m.weights_path = entry.at("weights_path").get<std::string>();
      if (m.weights_path.is_relative() && !base_dir.empty()) m.weights_path = base_dir / m.weights_path;
      m.tta = entry.value("tta", false);
      spec.members.push_back(std::move(m));
    }
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(std::string("bad ensemble spec: ") + e.what());
  }
  if (spec.members.empty()) throw DataError("ensemble spec lists no members");
  return spec;
}

EnsembleSpec load_ensemble_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ensemble spec " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_ensemble_spec(buffer.str(), path.parent_path());
}

Ensemble::Ensemble(const EnsembleSpec& spec, AugmentPolicy tta_policy, std::uint64_t tta_seed)
    : policy_(tta_policy), seed_(tta_seed) {
  if (spec.members.empty()) throw ArgumentError("ensemble needs at least one member");
  for (std::size_t i = 0; i < spec.members.size(); ++i) {
    const auto& m = spec.members[i];
    try {
      models_.push_back(load_weights(m.weights_path));
    } catch (const std::exception& e) {
      throw DataError("ensemble member " + std::to_string(i) + " (" + m.weights_path.string() +
                      "): " + e.what());
    }
    if (models_.back().num_outputs() != kNumClasses) {
      throw DataError("ensemble member " + std::to_string(i) + " does not produce 7 classes");
    }
    tta_.push_back(m.tta);
  }
}

Ensemble::Ensemble(std::vector<ModelGraph> models, std::vector<bool> tta, AugmentPolicy tta_policy,
                   std::uint64_t tta_seed)
    : models_(std::move(models)), tta_(std::move(tta)), policy_(tta_policy), seed_(tta_seed) {
  if (models_.empty()) throw ArgumentError("ensemble needs at least one member");
  tta_.resize(models_.size(), false);
}

std::vector<double> Ensemble::predict(const GrayImage& image) const {
  std::vector<std::vector<double>> rows;
  rows.reserve(models_.size());
  for (std::size_t i = 0; i < models_.size(); ++i) {
    rows.push_back(tta_[i] ? predict_tta(models_[i], image, policy_, seed_)
                           : predict_single(models_[i], image));
  }
  return soft_vote(rows);
}

Tensor Ensemble::predict_dataset(const Dataset& dataset) const {
  if (dataset.empty()) throw ArgumentError("ensemble predict_dataset: empty dataset");
  std::vector<Tensor> member_probs;
  for (std::size_t m = 0; m < models_.size(); ++m) {
    if (tta_[m]) {
      Tensor p({dataset.size(), static_cast<std::size_t>(kNumClasses)});
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto row = predict_tta(models_[m], dataset.samples[i].image, policy_, seed_);
        std::copy(row.begin(), row.end(), p.data() + i * kNumClasses);
      }
      member_probs.push_back(std::move(p));
    } else {
      member_probs.push_back(fer::predict_dataset(models_[m], dataset));
    }
  }
  Tensor out({dataset.size(), static_cast<std::size_t>(kNumClasses)});
  std::vector<std::vector<double>> rows(models_.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t m = 0; m < models_.size(); ++m) rows[m] = probs_row(member_probs[m], i);
    const auto voted = soft_vote(rows);
    for (std::size_t c = 0; c < voted.size(); ++c) out[i * kNumClasses + c] = static_cast<Scalar>(voted[c]);
  }
  return out;
}

std::vector<double> ensemble_predict(const EnsembleSpec& spec, const GrayImage& image) {
  return Ensemble(spec).predict(image);
}

std::vector<ErrorEntry> error_report(const Tensor& probs, const Dataset& dataset, std::size_t top_k) {
  if (probs.rank() != 2 || probs.dim(0) != dataset.size()) {
    throw ShapeError("error_report: probabilities do not match the dataset");
  }
  std::map<std::pair<int, int>, std::vector<std::pair<double, ErrorEntry>>> cells;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto row = probs_row(probs, i);
    const int predicted = argmax(row);
    const int truth = emotion_index(dataset.samples[i].label);
    if (predicted == truth) continue;
    std::vector<int> order(row.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)];
    });
    ErrorEntry e;
    e.source_id = dataset.samples[i].source_id;
    e.true_label = static_cast<Emotion>(truth);
    e.predicted = static_cast<Emotion>(predicted);
    for (std::size_t k = 0; k < 3 && k < order.size(); ++k) {
      e.top3[k] = {static_cast<Emotion>(order[k]), row[static_cast<std::size_t>(order[k])]};
    }
    cells[{truth, predicted}].emplace_back(row[static_cast<std::size_t>(predicted)], std::move(e));
  }
  std::vector<std::pair<double, ErrorEntry>> kept;
  for (auto& [cell, entries] : cells) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    if (entries.size() > top_k) entries.resize(top_k);
    for (auto& e : entries) kept.push_back(std::move(e));
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<ErrorEntry> out;
  out.reserve(kept.size());
  for (auto& [conf, e] : kept) out.push_back(std::move(e));
  return out;
}

std::vector<ErrorEntry> error_report(const ModelGraph& model, const Dataset& dataset, std::size_t top_k) {
  if (dataset.empty()) return {};
  return error_report(predict_dataset(model, dataset), dataset, top_k);
}

std::string error_report_jsonl(const std::vector<ErrorEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["source_id"] = e.source_id;
    j["true"] = emotion_name(e.true_label);
    j["predicted"] = emotion_name(e.predicted);
    nlohmann::ordered_json top = nlohmann::ordered_json::array();
    for (const auto& [label, p] : e.top3) top.push_back({{"label", emotion_name(label)}, {"prob", p}});
    j["top3"] = top;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace FER_PRECISION_NS
}  // namespace fer
