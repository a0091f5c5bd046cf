// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "config.hpp"

namespace fibersde {

inline constexpr const char* version_string = "0.1.0";

enum class CheckStatus { pass, fail, skip };

inline const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::skip: return "skip";
  }
  return "?";
}

inline CheckStatus check_status_from(const std::string& s) {
  if (s == "pass") return CheckStatus::pass;
  if (s == "fail") return CheckStatus::fail;
  if (s == "skip") return CheckStatus::skip;
  throw std::invalid_argument("unknown check status '" + s + "'");
}

struct CheckRecord {
  std::string name;
  CheckStatus status = CheckStatus::pass;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;

  bool operator==(const CheckRecord&) const = default;
};

struct RunManifest {
  std::string command;
  std::string config;  // serialized, fully resolved
  std::string version = version_string;
  std::uint64_t seed = 0;
  std::string started_at;
  double wall_seconds = 0.0;
  std::vector<std::string> outputs;
  std::vector<CheckRecord> checks;

  bool operator==(const RunManifest&) const = default;
};

inline void to_json(nlohmann::json& j, const CheckRecord& c) {
  j = {{"name", c.name}, {"status", to_string(c.status)}, {"value", c.value}, {"threshold", c.threshold}, {"detail", c.detail}};
}

inline void from_json(const nlohmann::json& j, CheckRecord& c) {
  j.at("name").get_to(c.name);
  c.status = check_status_from(j.at("status").get<std::string>());
  j.at("value").get_to(c.value);
  j.at("threshold").get_to(c.threshold);
  j.at("detail").get_to(c.detail);
}

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  j = {{"command", m.command}, {"config", m.config},         {"version", m.version},
       {"seed", m.seed},       {"started_at", m.started_at}, {"wall_seconds", m.wall_seconds},
       {"outputs", m.outputs}, {"checks", m.checks}};
}

inline void from_json(const nlohmann::json& j, RunManifest& m) {
  j.at("command").get_to(m.command);
  j.at("config").get_to(m.config);
  j.at("version").get_to(m.version);
  j.at("seed").get_to(m.seed);
  j.at("started_at").get_to(m.started_at);
  j.at("wall_seconds").get_to(m.wall_seconds);
  j.at("outputs").get_to(m.outputs);
  j.at("checks").get_to(m.checks);
}

inline std::string manifest_to_text(const RunManifest& m) { return nlohmann::json(m).dump(2) + "\n"; }

inline RunManifest manifest_from_text(const std::string& text) { return nlohmann::json::parse(text).get<RunManifest>(); }

}  // namespace fibersde
