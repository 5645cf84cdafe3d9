/*
 * Copyright 2026 The stitchkit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdlib>
#include <regex>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "stitch/errors.hpp"
#include "stitch/search.hpp"

namespace stitch {

/// Chat-completions style advisor over plain HTTP. The bearer token is read
/// from the environment variable named by `key_env`, never from config.
class HttpAdvisor : public Advisor {
 public:
  HttpAdvisor(std::string endpoint, std::string model, std::string key_env, double timeout_s = 30.0)
      : model_(std::move(model)), key_env_(std::move(key_env)), timeout_s_(timeout_s) {
    static const std::regex url(R"(^(https?)://([^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(endpoint, m, url)) throw ConfigError("advisor endpoint is not an http URL");
    if (m[1] == "https")
      throw ConfigError("https advisor endpoints need a TLS-enabled build; use http");
    host_ = "http://" + m[2].str();
    path_ = m[3].matched ? m[3].str() : "/";
  }

  std::string ask(const std::string& prompt) override {
    httplib::Client client(host_);
    const auto secs = static_cast<time_t>(timeout_s_);
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(key_env_.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
    nlohmann::json body{{"model", model_},
                        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw AdvisorUnavailableError("advisor request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw AdvisorUnavailableError("advisor returned HTTP " + std::to_string(res->status));
    try {
      auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw AdvisorUnavailableError("advisor response is not a chat completion");
    }
  }

 private:
  std::string host_;
  std::string path_;
  std::string model_;
  std::string key_env_;
  double timeout_s_;
};

}  // namespace stitch
