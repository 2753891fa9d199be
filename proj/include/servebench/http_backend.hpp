#pragma once

#include <chrono>
#include <string>

#include <httplib.h>

#include "servebench/backend.hpp"

namespace servebench {

struct HttpEndpoint {
  std::string origin;  // "http://host:port"
  std::string base_path;
};

inline HttpEndpoint split_endpoint(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) throw ValidationError("backend.endpoint", "http:// URL required");
  const auto slash = url.find('/', scheme.size());
  if (slash == std::string::npos) return {url, ""};
  std::string path = url.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, slash), path};
}

inline void set_timeouts(httplib::Client& cli, double seconds) {
  const auto us = std::chrono::microseconds(static_cast<std::int64_t>(seconds * 1e6));
  cli.set_connection_timeout(us);
  cli.set_read_timeout(us);
  cli.set_write_timeout(us);
}

// Client for an external inference server: POST {endpoint}/infer with the raw
// payload as body. Each request is timed client-side; there is no stage
// decomposition beyond that. Thread-safe: one client per call.
class HttpBackend final : public ServingBackend {
 public:
  HttpBackend(std::string endpoint, double timeout) : endpoint_(split_endpoint(endpoint)), timeout_(timeout) {}

  std::string kind() const override { return "http"; }
  std::string version() const override { return std::string("servebench-http/") + kVersion; }
  bool virtual_time() const override { return false; }

  // External servers are already running; readiness is not probed.
  double start() override { return 0.0; }

  std::vector<InferOutcome> infer(std::span<const InferRequest> batch, Nanos) override {
    std::vector<InferOutcome> out;
    out.reserve(batch.size());
    httplib::Client cli(endpoint_.origin);
    set_timeouts(cli, timeout_);
    for (const auto& req : batch) {
      const auto t0 = std::chrono::steady_clock::now();
      auto res = cli.Post(endpoint_.base_path + "/infer", std::string(req.payload), "application/octet-stream");
      const auto t1 = std::chrono::steady_clock::now();
      InferOutcome o;
      o.elapsed = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
      if (!res) {
        o.ok = false;
        o.reason = httplib::to_string(res.error());
      } else if (res->status != 200) {
        o.ok = false;
        o.reason = "http status " + std::to_string(res->status);
      }
      out.push_back(std::move(o));
    }
    return out;
  }

  std::optional<ResourceSample> sample_resources(double, double) override { return std::nullopt; }
  void stop() override {}

 private:
  HttpEndpoint endpoint_;
  double timeout_;
};

}  // namespace servebench
