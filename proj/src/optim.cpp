#include "hpvit/optim.hpp"

#include <cmath>

#include "hpvit/error.hpp"

namespace hpvit {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

void AdamState::init(std::span<const Tensor> params) {
  step = 0;
  m.clear();
  v.clear();
  for (const Tensor& p : params) {
    m.emplace_back(p.numel(), 0.0);
    v.emplace_back(p.numel(), 0.0);
  }
}

void sgd_step(std::span<Tensor> params, double lr) {
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * g[i];
  }
}

void adam_step(std::span<Tensor> params, AdamState& state, const OptimizerConfig& hyper) {
  if (state.m.empty() && state.step == 0) state.init(std::span<const Tensor>(params.data(), params.size()));
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw ShapeError("optimizer state shape mismatch for parameter " + std::to_string(k));
    }
    auto data = p.mutable_data();
    const auto g = p.grad();
    const bool has = !g.empty();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      data[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

void optimizer_step(std::span<Tensor> params, AdamState& state, const OptimizerConfig& cfg, Precision precision) {
  if (cfg.kind == OptimizerKind::sgd) {
    sgd_step(params, cfg.lr);
    state.step += 1;
  } else {
    adam_step(params, state, cfg);
  }
  if (precision == Precision::f32) {
    for (Tensor& p : params) {
      for (double& x : p.mutable_data()) x = static_cast<float>(x);
    }
  }
}

}  // namespace hpvit
