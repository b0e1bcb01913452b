// JSON-over-HTTP plumbing shared by the chat-completion and embedding
// backends: retrying POST client with exponential backoff and an optional
// token-bucket rate limiter. The transport is injectable so retry behavior
// is testable without sockets.
#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "robusteval/common.hpp"
#include "robusteval/retrieval.hpp"

namespace robusteval {

struct HttpOptions {
  std::string endpoint;  // full URL, e.g. http://host:8080/v1/chat/completions
  std::string api_key;   // empty = no Authorization header
  int timeout_seconds = 60;
  int max_retries = 3;
  double requests_per_second = 0.0;  // 0 = unthrottled
};

struct HttpResult {
  int status = 0;  // 0 = transport-level failure
  std::string body;
  std::string error;
};

using HttpTransport =
    std::function<HttpResult(const std::string& endpoint, const std::string& body,
                             const HttpOptions& options)>;

namespace detail {

struct SplitUrl {
  std::string host_port;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint missing scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

inline HttpTransport make_httplib_transport() {
  return [](const std::string& endpoint, const std::string& body, const HttpOptions& options) {
    const auto url = detail::split_url(endpoint);
    httplib::Client client(url.host_port);
    client.set_connection_timeout(options.timeout_seconds, 0);
    client.set_read_timeout(options.timeout_seconds, 0);
    client.set_write_timeout(options.timeout_seconds, 0);
    httplib::Headers headers;
    if (!options.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + options.api_key);
    }
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      return HttpResult{0, "", httplib::to_string(res.error())};
    }
    return HttpResult{res->status, res->body, ""};
  };
}

// Blocking token bucket; refills continuously at the configured rate.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second)
      : rate_(requests_per_second),
        tokens_(requests_per_second > 0 ? requests_per_second : 0),
        last_(std::chrono::steady_clock::now()) {}

  void acquire() {
    if (rate_ <= 0) return;
    std::unique_lock<std::mutex> lock(mutex_);
    for (;;) {
      refill();
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      const double deficit = 1.0 - tokens_;
      lock.unlock();
      std::this_thread::sleep_for(std::chrono::duration<double>(deficit / rate_));
      lock.lock();
    }
  }

 private:
  void refill() {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(rate_, tokens_ + elapsed * rate_);
  }

  double rate_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mutex_;
};

// POSTs a JSON payload with retries. Retries transport failures, HTTP 408,
// 409, 429 and 5xx with exponential backoff (100ms doubling); anything else
// is a hard failure. Throws TransportError once the budget is spent.
class RetryingJsonClient {
 public:
  explicit RetryingJsonClient(HttpOptions options, HttpTransport transport = nullptr,
                              std::shared_ptr<RateLimiter> limiter = nullptr)
      : options_(std::move(options)),
        transport_(transport ? std::move(transport) : make_httplib_transport()),
        limiter_(std::move(limiter)) {}

  const HttpOptions& options() const { return options_; }

  nlohmann::json post(const nlohmann::json& payload) {
    const std::string body = payload.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100ll << (attempt - 1)));
      }
      if (limiter_) limiter_->acquire();
      HttpResult res = transport_(options_.endpoint, body, options_);
      if (res.status == 0) {
        last_error = res.error.empty() ? "transport failure" : res.error;
        continue;
      }
      if (res.status >= 200 && res.status < 300) {
        try {
          return nlohmann::json::parse(res.body);
        } catch (const nlohmann::json::exception& ex) {
          throw TransportError(std::string("malformed JSON response: ") + ex.what());
        }
      }
      last_error = "HTTP " + std::to_string(res.status);
      if (!retryable(res.status)) {
        throw TransportError(last_error + " from " + options_.endpoint + ": " + res.body);
      }
    }
    throw TransportError("request to " + options_.endpoint + " failed after " +
                         std::to_string(options_.max_retries + 1) + " attempts: " + last_error);
  }

 private:
  static bool retryable(int status) {
    return status == 408 || status == 409 || status == 429 || status >= 500;
  }

  HttpOptions options_;
  HttpTransport transport_;
  std::shared_ptr<RateLimiter> limiter_;
};

// Chat-completion client over the common JSON protocol: messages array,
// model name, temperature; the reply is choices[0].message.content.
class HttpChatClient {
 public:
  HttpChatClient(HttpOptions options, std::string model, double temperature = 0.0,
                 HttpTransport transport = nullptr, std::shared_ptr<RateLimiter> limiter = nullptr)
      : client_(std::move(options), std::move(transport), std::move(limiter)),
        model_(std::move(model)),
        temperature_(temperature) {}

  std::string complete(const std::string& prompt) {
    nlohmann::json payload{
        {"model", model_},
        {"temperature", temperature_},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    nlohmann::json response = client_.post(payload);
    try {
      return response.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw TransportError(std::string("unexpected chat response shape: ") + ex.what());
    }
  }

  const std::string& model() const { return model_; }

 private:
  RetryingJsonClient client_;
  std::string model_;
  double temperature_;
};

// Hosted embedding service: {model, input: [...]} -> data[i].embedding.
class HttpEmbeddingBackend : public EmbeddingBackend {
 public:
  HttpEmbeddingBackend(HttpOptions options, std::string model, HttpTransport transport = nullptr,
                       std::shared_ptr<RateLimiter> limiter = nullptr)
      : client_(std::move(options), std::move(transport), std::move(limiter)),
        model_(std::move(model)) {}

  std::string fingerprint() const override { return "http-" + model_; }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    for (const auto& t : texts) {
      if (trim(t).empty()) throw ValidationError("embed: empty text");
    }
    nlohmann::json payload{{"model", model_}, {"input", texts}};
    nlohmann::json response = client_.post(payload);
    std::vector<EmbeddingVector> out(texts.size());
    try {
      const auto& data = response.at("data");
      if (data.size() != texts.size()) {
        throw TransportError("embedding response count mismatch");
      }
      std::size_t position = 0;
      for (const auto& item : data) {
        const std::size_t idx = item.value("index", position);
        if (idx >= out.size()) throw TransportError("embedding response index out of range");
        EmbeddingVector v;
        for (double x : item.at("embedding")) v.push_back(static_cast<float>(x));
        out[idx] = std::move(v);
        ++position;
      }
    } catch (const nlohmann::json::exception& ex) {
      throw TransportError(std::string("unexpected embedding response shape: ") + ex.what());
    }
    for (const auto& v : out) {
      if (v.empty()) throw TransportError("embedding response missing an entry");
      if (v.size() != out.front().size()) throw TransportError("embedding dimension mismatch");
    }
    return out;
  }

 private:
  RetryingJsonClient client_;
  std::string model_;
};

}  // namespace robusteval
