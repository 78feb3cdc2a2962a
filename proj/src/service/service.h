#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "phantom/phantom.h"
#include "scm/model.h"

namespace dscm::service {

inline constexpr const char* kSchema = "v1";
inline constexpr int kDefaultPort = 8080;
inline constexpr const char* kPortVariable = "DSCM_PORT";

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Request handlers over one immutable model and dataset. Every method is
// const and safe to call from concurrent threads. A null model answers 503
// on the endpoints that need it.
class InferenceService {
 public:
  InferenceService(std::shared_ptr<const scm::DeepScm> model, std::vector<phantom::PhantomRecord> records,
                   phantom::PhantomConfig config, std::string model_label = {});

  Response model_info() const;
  Response observations(int page, int page_size) const;
  Response observation(const std::string& id) const;
  Response thumbnail(const std::string& id) const;
  Response counterfactual(const std::string& body) const;

  // Routing used by the HTTP server and by tests.
  Response handle(const std::string& method, const std::string& path,
                  const std::map<std::string, std::string>& query, const std::string& body) const;

  const std::vector<phantom::PhantomRecord>& records() const { return records_; }

 private:
  const phantom::PhantomRecord* find(const std::string& id) const;

  std::shared_ptr<const scm::DeepScm> model_;
  std::vector<phantom::PhantomRecord> records_;
  std::map<std::string, size_t> index_;
  phantom::PhantomConfig config_;
  std::string label_;
};

std::string base64_encode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> base64_decode(const std::string& text);

// Signed difference to 8-bit: 128 + diff * 127 / 0.5, clamped.
Gray8 encode_difference(const Image& counterfactual, const Image& original);

// Port from DSCM_PORT when set and valid, else `fallback`.
int port_from_environment(int fallback = kDefaultPort);

class HttpServer {
 public:
  explicit HttpServer(const InferenceService& service);
  ~HttpServer();
  // Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  void run();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Binds and blocks serving HTTP until the process is stopped.
void serve(const InferenceService& service, const std::string& host, int port);

}  // namespace dscm::service
