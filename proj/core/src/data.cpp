#include "fer/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fer/errors.hpp"
#include "fer/rng.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {
namespace {

constexpr std::array<std::string_view, kNumClasses> kDisplayNames = {
    "Angry", "Disgust", "Fear", "Happy", "Sad", "Surprise", "Neutral"};
constexpr std::array<std::string_view, kNumClasses> kDirNames = {
    "angry", "disgust", "fear", "happy", "sad", "surprise", "neutral"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string_view unquote(std::string_view s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

// Parses one data row; returns an error message or empty on success.
std::string parse_row(std::string_view line, Sample& sample, Split& split) {
  const auto c1 = line.find(',');
  const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
  if (c2 == std::string_view::npos) return "expected 3 comma-separated fields";
  const std::string_view emotion_field = unquote(line.substr(0, c1));
  const std::string_view pixel_field = unquote(line.substr(c1 + 1, c2 - c1 - 1));
  const std::string_view usage = unquote(line.substr(c2 + 1));

  int emotion = -1;
  auto [eptr, eec] = std::from_chars(emotion_field.data(),
                                     emotion_field.data() + emotion_field.size(), emotion);
  if (eec != std::errc() || eptr != emotion_field.data() + emotion_field.size() || emotion < 0 ||
      emotion >= kNumClasses) {
    return "emotion must be an integer in 0-6, got '" + std::string(emotion_field) + "'";
  }
  if (usage == "Training") {
    split = Split::kTrain;
  } else if (usage == "PublicTest") {
    split = Split::kVal;
  } else if (usage == "PrivateTest") {
    split = Split::kTest;
  } else {
    return "unknown Usage '" + std::string(usage) + "'";
  }

  sample.image = GrayImage(kImageSide, kImageSide);
  std::size_t count = 0;
  const char* p = pixel_field.data();
  const char* end = p + pixel_field.size();
  while (true) {
    while (p < end && *p == ' ') ++p;
    if (p >= end) break;
    int value = 0;
    auto [ptr, ec] = std::from_chars(p, end, value);
    if (ec != std::errc() || (ptr < end && *ptr != ' ')) {
      const char* tok_end = std::find(p, end, ' ');
      return "non-integer pixel '" + std::string(p, tok_end) + "'";
    }
    if (value < 0 || value > 255) return "pixel value " + std::to_string(value) + " outside 0-255";
    if (count < static_cast<std::size_t>(kImagePixels)) {
      sample.image.values[count] = static_cast<Scalar>(value / 255.0);
    }
    ++count;
    p = ptr;
  }
  if (count != static_cast<std::size_t>(kImagePixels)) {
    return "expected 2304 pixels, got " + std::to_string(count);
  }
  sample.label = static_cast<Emotion>(emotion);
  return {};
}

bool has_image_extension(const std::filesystem::path& path) {
  const std::string ext = lower(path.extension().string());
  return ext == ".png" || ext == ".pgm" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::string_view emotion_name(Emotion e) { return kDisplayNames.at(static_cast<std::size_t>(e)); }
std::string_view emotion_dir(Emotion e) { return kDirNames.at(static_cast<std::size_t>(e)); }

std::optional<Emotion> parse_emotion(std::string_view name) {
  const std::string key = lower(trim(name));
  for (int i = 0; i < kNumClasses; ++i) {
    if (kDirNames[static_cast<std::size_t>(i)] == key) return static_cast<Emotion>(i);
  }
  return std::nullopt;
}

Emotion emotion_from_index(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw ArgumentError("emotion index " + std::to_string(index) + " outside 0-6");
  }
  return static_cast<Emotion>(index);
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

void Dataset::add(Sample sample) {
  ++class_counts[static_cast<std::size_t>(sample.label)];
  samples.push_back(std::move(sample));
}

void Dataset::recount() { class_counts = count_labels(*this); }

ClassCounts count_labels(const Dataset& dataset) {
  ClassCounts counts{};
  for (const auto& s : dataset.samples) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

FerSplits parse_fer_csv(std::string_view text, const CsvOptions& options) {
  FerSplits out;
  out.train.split = Split::kTrain;
  out.val.split = Split::kVal;
  out.test.split = Split::kTest;

  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (trim(line) != "emotion,pixels,Usage") {
        throw DataError("row 1: expected header 'emotion,pixels,Usage'");
      }
      header_seen = true;
      continue;
    }
    if (trim(line).empty()) continue;

    Sample sample;
    Split split = Split::kTrain;
    std::string error = parse_row(line, sample, split);
    if (!error.empty()) {
      if (options.strict) throw DataError("row " + std::to_string(line_no) + ": " + error);
      out.skipped.push_back({line_no, std::move(error)});
      continue;
    }
    sample.source_id = "fer2013:" + std::to_string(line_no);
    Dataset& target = split == Split::kTrain ? out.train : split == Split::kVal ? out.val : out.test;
    target.add(std::move(sample));
  }
  if (!header_seen) throw DataError("row 1: empty file, expected header 'emotion,pixels,Usage'");
  return out;
}

FerSplits load_fer_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  return parse_fer_csv(text, options);
}

GrayImage prepare_image(const Image& image) {
  return resize_bilinear(to_gray(image), kImageSide, kImageSide);
}

Dataset load_class_directories(const std::filesystem::path& root, DirectoryReport* report) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  DirectoryReport local;
  DirectoryReport& rep = report ? *report : local;

  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  std::array<bool, kNumClasses> present{};

  Dataset dataset;
  std::size_t scan_index = 0;
  for (const auto& dir : subdirs) {
    const std::string name = dir.filename().string();
    const auto emotion = parse_emotion(name);
    if (!emotion || name != emotion_dir(*emotion)) {
      rep.warnings.push_back("skipping unknown class directory '" + name + "'");
      continue;
    }
    present[static_cast<std::size_t>(*emotion)] = true;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      ++scan_index;
      Sample sample;
      try {
        sample.image = prepare_image(read_image(file));
      } catch (const DataError& e) {
        rep.skipped.push_back({scan_index, fs::relative(file, root).generic_string() + ": " + e.what()});
        continue;
      }
      sample.label = *emotion;
      sample.source_id = fs::relative(file, root).generic_string();
      dataset.add(std::move(sample));
    }
  }
  for (int i = 0; i < kNumClasses; ++i) {
    if (!present[static_cast<std::size_t>(i)]) {
      rep.warnings.push_back("missing class directory '" +
                             std::string(kDirNames[static_cast<std::size_t>(i)]) + "'");
    }
  }
  return dataset;
}

Dataset merge(std::span<const Dataset> datasets) {
  Dataset out;
  if (!datasets.empty()) out.split = datasets.front().split;
  std::size_t total = 0;
  for (const auto& d : datasets) total += d.size();
  out.samples.reserve(total);
  for (const auto& d : datasets) {
    out.samples.insert(out.samples.end(), d.samples.begin(), d.samples.end());
  }
  out.recount();
  return out;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& dataset, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ArgumentError("stratified_split: fraction must lie strictly between 0 and 1");
  }
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.samples[i].label)].push_back(i);
  }
  std::vector<bool> to_first(dataset.size(), false);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    Rng rng(derive_seed(seed, c));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < take && i < idx.size(); ++i) to_first[idx[i]] = true;
  }
  std::pair<Dataset, Dataset> out;
  out.first.split = dataset.split;
  out.second.split = dataset.split;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (to_first[i] ? out.first : out.second).add(dataset.samples[i]);
  }
  return out;
}

ClassWeights class_weights(const ClassCounts& counts) {
  double total = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw ArgumentError("class_weights: class " +
                          std::string(kDisplayNames[static_cast<std::size_t>(c)]) +
                          " has no samples; merge auxiliary data or drop the class");
    }
    total += static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  ClassWeights w{};
  for (std::size_t c = 0; c < w.size(); ++c) {
    w[c] = total / (static_cast<double>(kNumClasses) * static_cast<double>(counts[c]));
  }
  return w;
}

Tensor image_tensor(const GrayImage& image) {
  return Tensor({1, 1, image.height, image.width}, image.values);
}

Tensor images_tensor(std::span<const GrayImage> images) {
  if (images.empty()) throw ShapeError("images_tensor: empty image list");
  const std::size_t h = images.front().height, w = images.front().width;
  Tensor out({images.size(), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w) throw ShapeError("images_tensor: size mismatch");
    std::copy(images[i].values.begin(), images[i].values.end(), out.data() + i * h * w);
  }
  return out;
}

Tensor make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("make_batch: empty index list");
  const std::size_t pixels = static_cast<std::size_t>(kImagePixels);
  Tensor out({indices.size(), 1, static_cast<std::size_t>(kImageSide),
              static_cast<std::size_t>(kImageSide)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& values = dataset.samples.at(indices[i]).image.values;
    if (values.size() != pixels) throw ShapeError("make_batch: sample is not 48x48");
    std::copy(values.begin(), values.end(), out.data() + i * pixels);
  }
  return out;
}

}  // namespace FER_PRECISION_NS
}  // namespace fer
