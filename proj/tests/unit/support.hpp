#pragma once

// Shared test helpers: finite-difference gradient checks, random tensors,
// scratch directories and a small JSON Schema checker.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpvit/tensor.hpp"

namespace testing {

using hpvit::Graph;
using hpvit::Shape;
using hpvit::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(hpvit::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Contracts any tensor to a scalar with fixed random weights, so every output
// element gets a distinct upstream gradient.
inline Tensor probe(Graph& g, const Tensor& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Tensor w = random_tensor(out.shape(), rng, -1.0, 1.0, false);
  return g.sum(g.mul(out, w));
}

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// Central differences of `objective` against backward() for every element of `wrt`.
inline GradReport grad_check(const std::function<Tensor(Graph&)>& objective, std::vector<Tensor> wrt,
                             double h = 1e-6) {
  for (auto& t : wrt) t.zero_grad();
  {
    Graph g;
    g.backward(objective(g));
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) {
    const auto gr = t.grad();
    analytic.emplace_back(gr.begin(), gr.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }
  GradReport r;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto data = wrt[ti].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      double up;
      {
        Graph g;
        up = objective(g).item();
      }
      data[i] = saved - h;
      double down;
      {
        Graph g;
        down = objective(g).item();
      }
      data[i] = saved;
      r.max_rel = std::max(r.max_rel, rel_error(analytic[ti][i], (up - down) / (2.0 * h)));
      ++r.checked;
    }
  }
  return r;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "hpvit-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Validates the JSON Schema keywords our published schemas use: type,
// properties, required, additionalProperties (bool), items, enum, const,
// minimum, maximum, minItems, pattern, and local $ref into $defs.
class SchemaChecker {
 public:
  explicit SchemaChecker(nlohmann::json root) : root_(std::move(root)) {}

  std::vector<std::string> errors(const nlohmann::json& doc) const {
    std::vector<std::string> out;
    check(root_, doc, "$", out);
    return out;
  }

 private:
  static bool has_type(const nlohmann::json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    if (t == "integer") return v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
    if (t == "number") return v.is_number();
    return false;
  }

  const nlohmann::json& resolve(const nlohmann::json& s) const {
    if (!s.contains("$ref")) return s;
    const std::string ref = s.at("$ref").get<std::string>();
    const std::string prefix = "#/$defs/";
    if (ref.rfind(prefix, 0) != 0) throw std::runtime_error("unsupported $ref " + ref);
    return root_.at("$defs").at(ref.substr(prefix.size()));
  }

  void check(const nlohmann::json& schema_in, const nlohmann::json& v, const std::string& at,
             std::vector<std::string>& out) const {
    const nlohmann::json& s = resolve(schema_in);
    if (s.contains("type")) {
      bool ok = false;
      if (s["type"].is_array()) {
        for (const auto& t : s["type"]) ok = ok || has_type(v, t.get<std::string>());
      } else {
        ok = has_type(v, s["type"].get<std::string>());
      }
      if (!ok) {
        out.push_back(at + ": wrong type, expected " + s["type"].dump());
        return;
      }
    }
    if (s.contains("enum") && std::find(s["enum"].begin(), s["enum"].end(), v) == s["enum"].end()) {
      out.push_back(at + ": not in enum");
    }
    if (s.contains("const") && s["const"] != v) out.push_back(at + ": const mismatch");
    if (v.is_number()) {
      if (s.contains("minimum") && v.get<double>() < s["minimum"].get<double>()) out.push_back(at + ": below minimum");
      if (s.contains("maximum") && v.get<double>() > s["maximum"].get<double>()) out.push_back(at + ": above maximum");
    }
    if (v.is_string() && s.contains("pattern") &&
        !std::regex_search(v.get<std::string>(), std::regex(s["pattern"].get<std::string>()))) {
      out.push_back(at + ": pattern mismatch");
    }
    if (v.is_object()) {
      if (s.contains("required")) {
        for (const auto& k : s["required"]) {
          if (!v.contains(k.get<std::string>())) out.push_back(at + ": missing " + k.get<std::string>());
        }
      }
      const nlohmann::json props = s.value("properties", nlohmann::json::object());
      for (const auto& [k, sub] : v.items()) {
        if (props.contains(k)) {
          check(props[k], sub, at + "." + k, out);
        } else if (s.contains("additionalProperties") && s["additionalProperties"] == false) {
          out.push_back(at + ": unexpected key " + k);
        }
      }
    }
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) out.push_back(at + ": too few items");
      if (s.contains("items")) {
        for (std::size_t i = 0; i < v.size(); ++i) check(s["items"], v[i], at + "[" + std::to_string(i) + "]", out);
      }
    }
  }

  nlohmann::json root_;
};

}  // namespace testing
