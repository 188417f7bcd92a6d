#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fer/config.hpp"
#include "fer/image.hpp"
#include "fer/tensor.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

// Canonical FER2013 label order.
enum class Emotion : int { kAngry = 0, kDisgust, kFear, kHappy, kSad, kSurprise, kNeutral };

/// Capitalized display name ("Happy").
std::string_view emotion_name(Emotion e);
/// Lowercase directory name ("happy").
std::string_view emotion_dir(Emotion e);
/// Case-insensitive name lookup.
std::optional<Emotion> parse_emotion(std::string_view name);
Emotion emotion_from_index(int index);
inline int emotion_index(Emotion e) { return static_cast<int>(e); }

using ClassCounts = std::array<std::size_t, kNumClasses>;
using ClassWeights = std::array<double, kNumClasses>;

struct Sample {
  GrayImage image;  // 48 x 48, values in [0, 1]
  Emotion label = Emotion::kNeutral;
  std::string source_id;
};

enum class Split { kTrain, kVal, kTest };
std::string_view split_name(Split split);

struct Dataset {
  std::vector<Sample> samples;
  Split split = Split::kTrain;
  ClassCounts class_counts{};

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  void add(Sample sample);
  /// Recomputes class_counts from the labels.
  void recount();
};

ClassCounts count_labels(const Dataset& dataset);

// ---------------------------------------------------------------------------
// FER2013 CSV: header `emotion,pixels,Usage`.

struct RowIssue {
  std::size_t row = 0;  // 1-based line number in the file
  std::string message;
};

struct CsvOptions {
  bool strict = true;  // abort on the first malformed row; otherwise skip and report
};

struct FerSplits {
  Dataset train, val, test;
  std::vector<RowIssue> skipped;
};

FerSplits load_fer_csv(const std::filesystem::path& path, const CsvOptions& options = {});
FerSplits parse_fer_csv(std::string_view text, const CsvOptions& options = {});

// ---------------------------------------------------------------------------
// Seven-directory image trees: <root>/{angry,disgust,...,neutral}/*.{png,pgm,jpg}.

struct DirectoryReport {
  std::vector<std::string> warnings;  // unknown or missing subdirectories
  std::vector<RowIssue> skipped;      // undecodable files (row = index in scan order)
};

Dataset load_class_directories(const std::filesystem::path& root, DirectoryReport* report = nullptr);

/// Decode + BT.601 gray + bilinear resize to 48 x 48.
GrayImage prepare_image(const Image& image);

// ---------------------------------------------------------------------------

Dataset merge(std::span<const Dataset> datasets);

/// Per class, round(fraction * n_c) samples go to the first output. Original
/// order is preserved within each output.
std::pair<Dataset, Dataset> stratified_split(const Dataset& dataset, double fraction,
                                             std::uint64_t seed);

/// w_c = N / (K * n_c). Throws ArgumentError on a zero count.
ClassWeights class_weights(const ClassCounts& counts);

/// Stack samples into an N x 1 x H x W tensor.
Tensor make_batch(const Dataset& dataset, std::span<const std::size_t> indices);
Tensor image_tensor(const GrayImage& image);
Tensor images_tensor(std::span<const GrayImage> images);

}  // namespace FER_PRECISION_NS
}  // namespace fer
