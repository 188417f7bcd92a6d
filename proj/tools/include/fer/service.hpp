#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "fer/augment.hpp"
#include "fer/model.hpp"

namespace httplib {
class Server;
}

namespace fer {

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;                   // 0 binds an ephemeral port
  std::filesystem::path weights;     // loaded in the background by start()
  std::filesystem::path data_root;   // /samples storage; empty -> $FER_DATA_ROOT
  bool enable_samples = true;
  std::string cors_origin;           // empty disables CORS headers
  std::uint64_t tta_seed = 0;
  AugmentPolicy tta_policy;
  std::size_t max_body_bytes = 1 << 20;
};

struct HttpResult {
  int status = 200;
  std::string body;  // JSON
};

/// JSON error body {"code": status, "message": ...}.
HttpResult error_result(int status, const std::string& message);

// Inference and sample-collection service. The loaded model is immutable and
// shared by all request threads.
class InferenceService {
 public:
  explicit InferenceService(ServiceConfig config);
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  /// Installs a model directly (tests, embedding).
  void set_model(ModelGraph model, std::string model_id);
  bool ready() const;

  /// Binds, starts listening on a background thread and, when a weights path
  /// is configured, loads it on another. Returns the bound port.
  int start();
  void stop();
  /// Blocks until the listener exits.
  void wait();
  int port() const { return port_; }
  /// Set when background weight loading failed.
  std::string load_error() const;

  HttpResult handle_predict(const std::string& body, const std::string& content_type, bool tta) const;
  HttpResult handle_samples(const std::string& body, const std::string& content_type,
                            const std::string& multipart_label, const std::string& multipart_image) const;
  HttpResult handle_health() const;

  const std::filesystem::path& data_root() const { return config_.data_root; }

 private:
  std::shared_ptr<const ModelGraph> model() const;

  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
  std::thread loader_;
  int port_ = 0;

  mutable std::mutex model_mutex_;
  std::shared_ptr<const ModelGraph> model_;
  std::string model_id_;
  std::string load_error_;

  mutable std::array<std::mutex, kNumClasses> class_mutexes_;
  mutable std::atomic<std::uint64_t> sample_counter_{0};
};

}  // namespace fer
