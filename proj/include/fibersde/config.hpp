// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "expression.hpp"
#include "solver.hpp"

namespace fibersde {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double x) { return fmt::format("{:.17g}", x); }

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double(v[i]);
  }
  return out;
}

}  // namespace detail

// Flat key = value configuration. '#' starts a comment; blank lines are
// ignored; every key may appear at most once.
class ConfigParser {
public:
  SimulationConfig parse(const std::string& text) {
    SimulationConfig cfg;
    std::map<std::string, Entry> entries;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const auto hash = raw.find('#');
      const std::string content = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (content.empty()) continue;
      const auto eq = content.find('=');
      if (eq == std::string::npos) throw ConfigError("", line, "expected 'key = value'");
      const std::string key = detail::trim(content.substr(0, eq));
      const std::string value = detail::trim(content.substr(eq + 1));
      if (key.empty()) throw ConfigError("", line, "empty key");
      if (!handlers().count(key)) throw ConfigError(key, line, "unknown key");
      if (entries.count(key)) throw ConfigError(key, line, "duplicate key (first set on line " + std::to_string(entries[key].line) + ")");
      entries[key] = {value, line};
    }

    for (const char* key : {"beam.l", "beam.b", "time.T", "time.dt", "grid.n"}) {
      if (!entries.count(key)) throw ConfigError(key, 0, "missing required key");
    }
    for (const auto& [key, entry] : entries) {
      try {
        handlers().at(key)(cfg, entry.value);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(key, entry.line, e.what());
      }
    }
    validate(cfg, entries);
    return cfg;
  }

private:
  struct Entry {
    std::string value;
    int line = 0;
  };

  using Handler = std::function<void(SimulationConfig&, const std::string&)>;

  static double to_double(const std::string& v) {
    double x = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x)) throw std::invalid_argument("expected a finite number, got '" + v + "'");
    return x;
  }

  template <class Int>
  static Int to_int(const std::string& v) {
    Int x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
    return x;
  }

  static bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("expected true or false, got '" + v + "'");
  }

  static std::vector<double> to_list(const std::string& v) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= v.size()) {
      const auto end = v.find(',', start);
      const std::string item = detail::trim(v.substr(start, end == std::string::npos ? std::string::npos : end - start));
      if (item.empty()) throw std::invalid_argument("empty entry in number list");
      out.push_back(to_double(item));
      if (end == std::string::npos) break;
      start = end + 1;
    }
    return out;
  }

  static std::string to_expression(const std::string& v) {
    Expression(v, field_variables());  // compile to validate
    return v;
  }

  static const std::map<std::string, Handler>& handlers() {
    static const std::map<std::string, Handler> table = [] {
      std::map<std::string, Handler> h;
      h["beam.l"] = [](SimulationConfig& c, const std::string& v) { c.l = to_double(v); };
      h["beam.b"] = [](SimulationConfig& c, const std::string& v) { c.b = to_double(v); };
      h["beam.g"] = [](SimulationConfig& c, const std::string& v) { c.g = to_double(v); };
      h["beam.lambda"] = [](SimulationConfig& c, const std::string& v) {
        if (v == "zero") c.lambda = TractionFamily::zero;
        else if (v == "bump") c.lambda = TractionFamily::bump;
        else if (v == "tabulated") c.lambda = TractionFamily::tabulated;
        else throw std::invalid_argument("expected zero, bump or tabulated");
      };
      h["beam.lambda.c0"] = [](SimulationConfig& c, const std::string& v) { c.modulation.c0 = to_double(v); };
      h["beam.lambda.modulation"] = [](SimulationConfig& c, const std::string& v) { c.modulation.modulation = to_double(v); };
      h["beam.lambda.frequency"] = [](SimulationConfig& c, const std::string& v) { c.modulation.frequency = to_double(v); };
      h["beam.lambda.table"] = [](SimulationConfig& c, const std::string& v) { c.lambda_table = to_list(v); };
      h["beam.fdet"] = [](SimulationConfig& c, const std::string& v) {
        if (v == "zero") c.fdet = ForceKind::zero;
        else if (v == "tabulated") c.fdet = ForceKind::tabulated;
        else if (v == "expression") c.fdet = ForceKind::expression;
        else throw std::invalid_argument("expected zero, tabulated or expression");
      };
      for (int i = 0; i < 3; ++i) {
        const std::string idx = std::to_string(i + 1);
        h["beam.fdet.x" + idx] = [i](SimulationConfig& c, const std::string& v) { c.fdet_expr[i] = to_expression(v); };
        h["beam.fdet.table" + idx] = [i](SimulationConfig& c, const std::string& v) { c.fdet_table[i] = to_list(v); };
        h["init.u" + idx] = [i](SimulationConfig& c, const std::string& v) { c.init_u[i] = to_expression(v); };
        h["init.v" + idx] = [i](SimulationConfig& c, const std::string& v) { c.init_v[i] = to_expression(v); };
      }
      h["beam.bc"] = [](SimulationConfig& c, const std::string& v) {
        if (v == "homogeneous") c.bc = BoundaryKind::homogeneous;
        else if (v == "nonhomogeneous") c.bc = BoundaryKind::nonhomogeneous;
        else throw std::invalid_argument("expected homogeneous or nonhomogeneous");
      };
      h["grid.n"] = [](SimulationConfig& c, const std::string& v) { c.n = to_int<int>(v); };
      h["time.T"] = [](SimulationConfig& c, const std::string& v) { c.T = to_double(v); };
      h["time.dt"] = [](SimulationConfig& c, const std::string& v) { c.dt = to_double(v); };
      h["time.scheme"] = [](SimulationConfig& c, const std::string& v) {
        if (v == "cayley-midpoint") c.scheme = PropagatorScheme::cayley_midpoint;
        else if (v == "picard") c.scheme = PropagatorScheme::picard;
        else throw std::invalid_argument("expected cayley-midpoint or picard");
      };
      h["noise.sigma"] = [](SimulationConfig& c, const std::string& v) { c.sigma = to_double(v); };
      h["noise.K"] = [](SimulationConfig& c, const std::string& v) {
        c.K = to_int<int>(v);
        c.K_explicit = true;
      };
      h["noise.spectrum"] = [](SimulationConfig& c, const std::string& v) {
        auto table = std::move(c.spectrum.table);
        c.spectrum = Spectrum::parse(v);
        c.spectrum.table = std::move(table);
      };
      h["noise.table"] = [](SimulationConfig& c, const std::string& v) { c.spectrum.table = to_list(v); };
      h["noise.seed"] = [](SimulationConfig& c, const std::string& v) { c.seed = to_int<std::uint64_t>(v); };
      h["run.N"] = [](SimulationConfig& c, const std::string& v) { c.paths = to_int<int>(v); };
      h["run.threads"] = [](SimulationConfig& c, const std::string& v) { c.threads = to_int<int>(v); };
      h["run.observables"] = [](SimulationConfig& c, const std::string& v) {
        parse_observables(v);
        c.observables = v;
      };
      h["run.output_stride"] = [](SimulationConfig& c, const std::string& v) { c.output_stride = to_int<int>(v); };
      h["run.write_trajectory"] = [](SimulationConfig& c, const std::string& v) { c.write_trajectory = to_bool(v); };
      h["picard.tol"] = [](SimulationConfig& c, const std::string& v) { c.picard.tol = to_double(v); };
      h["picard.max_iter"] = [](SimulationConfig& c, const std::string& v) { c.picard.max_iter = to_int<int>(v); };
      h["picard.alpha"] = [](SimulationConfig& c, const std::string& v) { c.picard.alpha = to_double(v); };
      return h;
    }();
    return table;
  }

  static void validate(const SimulationConfig& c, const std::map<std::string, Entry>& e) {
    auto line_of = [&](const char* key) { return e.count(key) ? e.at(key).line : 0; };
    auto require = [&](bool ok, const char* key, const std::string& msg) {
      if (!ok) throw ConfigError(key, line_of(key), msg);
    };
    require(c.l > 0.0, "beam.l", "must be positive");
    require(c.b > 0.0, "beam.b", "must be positive");
    require(c.n >= 4, "grid.n", "must be at least 4");
    require(c.T > 0.0, "time.T", "must be positive");
    require(c.dt > 0.0, "time.dt", "must be positive");
    const double ratio = c.T / c.dt;
    require(std::abs(ratio - std::round(ratio)) <= 1e-9 * std::max(1.0, ratio), "time.dt", "dt must divide T");
    require(c.sigma >= 0.0, "noise.sigma", "must be non-negative");
    require(c.K >= 0, "noise.K", "must be non-negative");
    require(!c.K_explicit || c.K <= c.n - 2, "noise.K",
            "exceeds the " + std::to_string(c.n - 2) + " sine modes representable on this grid");
    if (c.spectrum.kind == SpectrumKind::tabulated) {
      require(static_cast<int>(c.spectrum.table.size()) >= c.noise_modes(), "noise.table",
              "tabulated spectrum needs at least noise.K entries");
    }
    if (c.lambda == TractionFamily::tabulated) {
      require(c.lambda_table.size() >= 5, "beam.lambda.table", "needs at least 5 samples");
    }
    if (c.fdet == ForceKind::tabulated) {
      for (int i = 0; i < 3; ++i) {
        const std::string key = "beam.fdet.table" + std::to_string(i + 1);
        if (!c.fdet_table[i].empty() && c.fdet_table[i].size() < 2) throw ConfigError(key, line_of(key.c_str()), "needs at least 2 samples");
      }
    }
    require(c.paths >= 1, "run.N", "must be at least 1");
    require(c.threads >= 1, "run.threads", "must be at least 1");
    require(c.output_stride >= 1, "run.output_stride", "must be at least 1");
    require(c.picard.tol > 0.0, "picard.tol", "must be positive");
    require(c.picard.max_iter >= 1, "picard.max_iter", "must be at least 1");
    require(c.picard.alpha >= 0.0, "picard.alpha", "must be non-negative (0 selects the default)");
    for (const Observable& o : parse_observables(c.observables)) {
      require(o.mode <= c.n - 2, "run.observables", "mode " + std::to_string(o.mode) + " exceeds the grid dimension");
    }
  }
};

inline SimulationConfig parse_config(const std::string& text) { return ConfigParser().parse(text); }

// Writes every non-default-derived key so that parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const SimulationConfig& c) {
  using detail::format_double;
  std::string out;
  auto put = [&](const std::string& key, const std::string& value) { out += key + " = " + value + "\n"; };
  put("beam.l", format_double(c.l));
  put("beam.b", format_double(c.b));
  put("beam.g", format_double(c.g));
  put("beam.lambda", to_string(c.lambda));
  put("beam.lambda.c0", format_double(c.modulation.c0));
  put("beam.lambda.modulation", format_double(c.modulation.modulation));
  put("beam.lambda.frequency", format_double(c.modulation.frequency));
  if (!c.lambda_table.empty()) put("beam.lambda.table", detail::join_doubles(c.lambda_table));
  put("beam.fdet", c.fdet == ForceKind::zero ? "zero" : c.fdet == ForceKind::tabulated ? "tabulated" : "expression");
  for (int i = 0; i < 3; ++i) {
    const std::string idx = std::to_string(i + 1);
    if (c.fdet_expr[i] != "0") put("beam.fdet.x" + idx, c.fdet_expr[i]);
    if (!c.fdet_table[i].empty()) put("beam.fdet.table" + idx, detail::join_doubles(c.fdet_table[i]));
  }
  put("beam.bc", c.bc == BoundaryKind::homogeneous ? "homogeneous" : "nonhomogeneous");
  put("grid.n", std::to_string(c.n));
  put("time.T", format_double(c.T));
  put("time.dt", format_double(c.dt));
  put("time.scheme", to_string(c.scheme));
  put("noise.sigma", format_double(c.sigma));
  if (c.K_explicit) put("noise.K", std::to_string(c.K));
  put("noise.spectrum", c.spectrum.name());
  if (!c.spectrum.table.empty()) put("noise.table", detail::join_doubles(c.spectrum.table));
  put("noise.seed", std::to_string(c.seed));
  for (int i = 0; i < 3; ++i) {
    const std::string idx = std::to_string(i + 1);
    if (c.init_u[i] != "0") put("init.u" + idx, c.init_u[i]);
    if (c.init_v[i] != "0") put("init.v" + idx, c.init_v[i]);
  }
  put("run.N", std::to_string(c.paths));
  put("run.threads", std::to_string(c.threads));
  put("run.observables", c.observables);
  put("run.output_stride", std::to_string(c.output_stride));
  put("run.write_trajectory", c.write_trajectory ? "true" : "false");
  put("picard.tol", format_double(c.picard.tol));
  put("picard.max_iter", std::to_string(c.picard.max_iter));
  put("picard.alpha", format_double(c.picard.alpha));
  return out;
}

}  // namespace fibersde
