#include "fer/service.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <span>

#include "fer/data.hpp"
#include "fer/errors.hpp"
#include "fer/eval.hpp"
#include "fer/image.hpp"
#include "fer/weights_io.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fer {
namespace {

using nlohmann::json;

std::string valid_labels() {
  std::string out;
  for (int c = 0; c < kNumClasses; ++c) {
    if (c) out += ", ";
    out += emotion_dir(static_cast<Emotion>(c));
  }
  return out;
}

std::string media_type(const std::string& content_type) {
  std::string t = content_type.substr(0, content_type.find(';'));
  while (!t.empty() && t.back() == ' ') t.pop_back();
  return t;
}

// Standard base64 with optional padding and whitespace; throws DataError.
std::string base64_decode(std::string_view in) {
  auto value = [](char ch) -> int {
    if (ch >= 'A' && ch <= 'Z') return ch - 'A';
    if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
    if (ch >= '0' && ch <= '9') return ch - '0' + 52;
    if (ch == '+' || ch == '-') return 62;
    if (ch == '/' || ch == '_') return 63;
    return -1;
  };
  // Tolerate a data-URL prefix.
  if (const auto comma = in.find(','); in.starts_with("data:") && comma != std::string_view::npos) {
    in.remove_prefix(comma + 1);
  }
  std::string out;
  std::uint32_t buffer = 0;
  int bits = 0;
  for (char ch : in) {
    if (ch == '=' || ch == '\n' || ch == '\r' || ch == ' ') continue;
    const int v = value(ch);
    if (v < 0) throw DataError("image_base64 is not valid base64");
    buffer = (buffer << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buffer >> bits) & 0xFF));
    }
  }
  return out;
}

// Decodes a 48x48 single-channel image from PNG/JPEG/PGM bytes.
GrayImage decode_crop(const std::string& bytes, bool allow_color) {
  const std::span<const std::uint8_t> view(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
  const Image img = decode_image(view);
  if (img.width != static_cast<std::size_t>(kImageSide) || img.height != static_cast<std::size_t>(kImageSide)) {
    throw ShapeError("expected 48x48, got " + std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  if (img.channels != 1 && !allow_color) {
    throw ShapeError("expected a single-channel (grayscale) image");
  }
  return to_gray(img);
}

}  // namespace

HttpResult error_result(int status, const std::string& message) {
  return {status, json{{"code", status}, {"message", message}}.dump()};
}

InferenceService::InferenceService(ServiceConfig config) : config_(std::move(config)) {
  if (config_.data_root.empty()) {
    if (const char* env = std::getenv("FER_DATA_ROOT")) config_.data_root = env;
  }
}

InferenceService::~InferenceService() { stop(); }

void InferenceService::set_model(ModelGraph model, std::string model_id) {
  auto shared = std::make_shared<const ModelGraph>(std::move(model));
  std::lock_guard lock(model_mutex_);
  model_ = std::move(shared);
  model_id_ = std::move(model_id);
}

bool InferenceService::ready() const { return model() != nullptr; }

std::shared_ptr<const ModelGraph> InferenceService::model() const {
  std::lock_guard lock(model_mutex_);
  return model_;
}

std::string InferenceService::load_error() const {
  std::lock_guard lock(model_mutex_);
  return load_error_;
}

HttpResult InferenceService::handle_health() const {
  std::shared_ptr<const ModelGraph> m;
  std::string id, failure;
  {
    std::lock_guard lock(model_mutex_);
    m = model_;
    id = model_id_;
    failure = load_error_;
  }
  if (!m) return error_result(503, failure.empty() ? "model is loading" : "model failed to load: " + failure);
  return {200, json{{"status", "ok"}, {"model_id", id}, {"param_count", m->param_count()}}.dump()};
}

HttpResult InferenceService::handle_predict(const std::string& body, const std::string& content_type,
                                            bool tta) const {
  std::shared_ptr<const ModelGraph> m;
  std::string id;
  {
    std::lock_guard lock(model_mutex_);
    m = model_;
    id = model_id_;
  }
  if (!m) return error_result(503, "model is loading");
  if (body.size() > config_.max_body_bytes) return error_result(413, "request body exceeds 1 MiB");

  GrayImage image;
  const std::string type = media_type(content_type);
  try {
    if (type == "application/octet-stream") {
      if (body.size() != static_cast<std::size_t>(kImagePixels)) {
        return error_result(400, "expected 48x48 raw grayscale (2304 bytes), got " +
                                     std::to_string(body.size()) + " bytes");
      }
      image = GrayImage(kImageSide, kImageSide);
      for (std::size_t i = 0; i < body.size(); ++i) {
        image.values[i] = static_cast<Scalar>(static_cast<unsigned char>(body[i]) / 255.0);
      }
    } else if (type.starts_with("image/")) {
      image = decode_crop(body, /*allow_color=*/false);
    } else {
      return error_result(400, "unsupported Content-Type '" + type +
                                   "' (use image/png or application/octet-stream)");
    }
  } catch (const ShapeError& e) {
    return error_result(400, e.what());
  } catch (const DataError& e) {
    return error_result(400, std::string("undecodable image: ") + e.what());
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> probs =
      tta ? predict_tta(*m, image, config_.tta_policy, config_.tta_seed) : predict_single(*m, image);
  const auto t1 = std::chrono::steady_clock::now();
  const double latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

  const int best = argmax(probs);
  json out;
  out["probabilities"] = probs;
  out["label"] = emotion_name(static_cast<Emotion>(best));
  out["latency_ms"] = latency_ms;
  out["model_id"] = id;
  out["tta"] = tta;
  return {200, out.dump()};
}

HttpResult InferenceService::handle_samples(const std::string& body, const std::string& content_type,
                                            const std::string& multipart_label,
                                            const std::string& multipart_image) const {
  if (!config_.enable_samples) return error_result(403, "sample collection is disabled");
  if (config_.data_root.empty()) return error_result(500, "no data root configured (set FER_DATA_ROOT)");
  if (body.size() > config_.max_body_bytes) return error_result(413, "request body exceeds 1 MiB");

  std::string label_text;
  std::string image_bytes;
  const std::string type = media_type(content_type);
  if (type == "multipart/form-data") {
    label_text = multipart_label;
    image_bytes = multipart_image;
  } else if (type == "application/json") {
    try {
      const json j = json::parse(body);
      label_text = j.at("label").get<std::string>();
      image_bytes = base64_decode(j.at("image_base64").get<std::string>());
    } catch (const DataError& e) {
      return error_result(400, e.what());
    } catch (const std::exception& e) {
      return error_result(400, std::string("expected JSON {label, image_base64}: ") + e.what());
    }
  } else {
    return error_result(400, "use multipart/form-data or application/json");
  }

  const auto label = parse_emotion(label_text);
  if (!label) {
    return error_result(400, "unknown label '" + label_text + "'; valid labels: " + valid_labels());
  }
  GrayImage image;
  try {
    image = decode_crop(image_bytes, /*allow_color=*/true);
  } catch (const ShapeError& e) {
    return error_result(400, e.what());
  } catch (const DataError& e) {
    return error_result(400, std::string("undecodable image: ") + e.what());
  }

  namespace fs = std::filesystem;
  const std::string dir_name(emotion_dir(*label));
  std::lock_guard lock(class_mutexes_[static_cast<std::size_t>(*label)]);
  try {
    const fs::path dir = config_.data_root / dir_name;
    fs::create_directories(dir);
    const auto stamp = std::chrono::duration_cast<std::chrono::microseconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                           .count();
    fs::path file;
    do {
      file = dir / (std::to_string(stamp) + "_" + std::to_string(sample_counter_++) + ".png");
    } while (fs::exists(file));
    write_png(file, to_image(image));
    const std::string id = dir_name + "/" + file.filename().string();
    return {201, json{{"id", id}, {"label", dir_name}}.dump()};
  } catch (const std::exception& e) {
    return error_result(500, std::string("failed to store sample: ") + e.what());
  }
}

int InferenceService::start() {
  server_ = std::make_unique<httplib::Server>();
  auto& srv = *server_;
  srv.set_payload_max_length(config_.max_body_bytes);

  auto reply = [this](httplib::Response& res, const HttpResult& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
    if (!config_.cors_origin.empty()) res.set_header("Access-Control-Allow-Origin", config_.cors_origin);
  };

  srv.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    res.set_content(error_result(res.status, httplib::status_message(res.status)).body, "application/json");
    if (!config_.cors_origin.empty()) res.set_header("Access-Control-Allow-Origin", config_.cors_origin);
    return httplib::Server::HandlerResponse::Handled;
  });

  srv.Options(R"(.*)", [this](const httplib::Request&, httplib::Response& res) {
    if (!config_.cors_origin.empty()) {
      res.set_header("Access-Control-Allow-Origin", config_.cors_origin);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    }
    res.status = 204;
  });

  srv.Get("/health", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_health());
  });

  srv.Post("/predict", [this, reply](const httplib::Request& req, httplib::Response& res) {
    const bool tta = req.has_param("tta") && req.get_param_value("tta") != "0";
    reply(res, handle_predict(req.body, req.get_header_value("Content-Type"), tta));
  });

  srv.Post("/samples", [this, reply](const httplib::Request& req, httplib::Response& res) {
    std::string label, image;
    if (req.is_multipart_form_data()) {
      if (req.has_file("label")) label = req.get_file_value("label").content;
      if (req.has_file("image")) image = req.get_file_value("image").content;
    }
    reply(res, handle_samples(req.body, req.get_header_value("Content-Type"), label, image));
  });

  if (config_.port == 0) {
    port_ = srv.bind_to_any_port(config_.host);
  } else {
    port_ = srv.bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ <= 0) throw DataError("cannot bind " + config_.host + ":" + std::to_string(config_.port));

  if (!config_.weights.empty() && !ready()) {
    loader_ = std::thread([this] {
      try {
        ModelGraph m = load_weights(config_.weights);
        set_model(std::move(m), config_.weights.filename().string());
      } catch (const std::exception& e) {
        std::lock_guard lock(model_mutex_);
        load_error_ = e.what();
      }
    });
  }
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void InferenceService::stop() {
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
  if (loader_.joinable()) loader_.join();
}

void InferenceService::wait() {
  if (listener_.joinable()) listener_.join();
  if (loader_.joinable()) loader_.join();
}

}  // namespace fer
