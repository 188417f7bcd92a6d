#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fer/augment.hpp"
#include "fer/data.hpp"
#include "fer/model.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

using ProbRow = std::array<double, kNumClasses>;

/// Infer-mode class probabilities for every sample, N x 7, in dataset order.
Tensor predict_dataset(const ModelGraph& model, const Dataset& dataset, std::size_t batch_size = 256);

/// Argmax with ties resolved to the lowest class index.
int argmax(std::span<const double> row);

struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};  // [true][predicted]

  std::size_t total() const;
  std::size_t row_sum(int true_class) const;
  double accuracy() const;
  /// 1 - recall; 0 for a class with no samples.
  double misclassification_rate(int true_class) const;
};

ConfusionMatrix confusion_matrix(const Tensor& probs, const Dataset& dataset);
ConfusionMatrix confusion_matrix(const ModelGraph& model, const Dataset& dataset);

/// Throws ArgumentError on an empty dataset.
double accuracy(const Tensor& probs, const Dataset& dataset);
double accuracy(const ModelGraph& model, const Dataset& dataset);

std::string confusion_json(const ConfusionMatrix& cm);
std::string confusion_table(const ConfusionMatrix& cm);

/// Arithmetic mean of probability rows, accumulated in input order.
/// Throws ArgumentError on an empty list or a row that does not sum to 1.
std::vector<double> soft_vote(std::span<const std::vector<double>> rows);

std::vector<double> probs_row(const Tensor& probs, std::size_t row);

/// Soft vote over the 9-image TTA set.
std::vector<double> predict_tta(const ModelGraph& model, const GrayImage& image,
                                const AugmentPolicy& policy, std::uint64_t seed);
std::vector<double> predict_single(const ModelGraph& model, const GrayImage& image);

struct EnsembleMember {
  std::filesystem::path weights_path;
  bool tta = false;
};

struct EnsembleSpec {
  std::vector<EnsembleMember> members;
};

/// JSON list of {"weights_path": ..., "tta": bool}; relative paths resolve
/// against `base_dir`.
EnsembleSpec parse_ensemble_spec(const std::string& json_text, const std::filesystem::path& base_dir = {});
EnsembleSpec load_ensemble_spec(const std::filesystem::path& path);

// Loaded ensemble; members are immutable once built.
class Ensemble {
 public:
  /// Throws DataError naming the member whose weights fail to load.
  explicit Ensemble(const EnsembleSpec& spec, AugmentPolicy tta_policy = {},
                    std::uint64_t tta_seed = 0);
  Ensemble(std::vector<ModelGraph> models, std::vector<bool> tta, AugmentPolicy tta_policy = {},
           std::uint64_t tta_seed = 0);

  std::vector<double> predict(const GrayImage& image) const;
  /// Per-sample soft-voted probabilities, N x 7.
  Tensor predict_dataset(const Dataset& dataset) const;
  std::size_t size() const { return models_.size(); }

 private:
  std::vector<ModelGraph> models_;
  std::vector<bool> tta_;
  AugmentPolicy policy_;
  std::uint64_t seed_;
};

std::vector<double> ensemble_predict(const EnsembleSpec& spec, const GrayImage& image);

struct ErrorEntry {
  std::string source_id;
  Emotion true_label = Emotion::kNeutral;
  Emotion predicted = Emotion::kNeutral;
  std::array<std::pair<Emotion, double>, 3> top3{};
};

/// Misclassified samples, at most top_k per (true, predicted) cell, sorted
/// by predicted-class confidence, highest first.
std::vector<ErrorEntry> error_report(const Tensor& probs, const Dataset& dataset, std::size_t top_k);
std::vector<ErrorEntry> error_report(const ModelGraph& model, const Dataset& dataset, std::size_t top_k);
std::string error_report_jsonl(const std::vector<ErrorEntry>& entries);

}  // namespace FER_PRECISION_NS
}  // namespace fer
