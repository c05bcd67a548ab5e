#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hpvit/tensor.hpp"

namespace hpvit {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moment per parameter, plus the number of steps taken.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void init(std::span<const Tensor> params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// p <- p - lr * g. Parameters without an accumulated gradient are skipped.
void sgd_step(std::span<Tensor> params, double lr);

// Adam with bias correction. A missing gradient counts as zero.
void adam_step(std::span<Tensor> params, AdamState& state, const OptimizerConfig& hyper);

// Applies whichever update `cfg.kind` selects; rounds to float when asked.
void optimizer_step(std::span<Tensor> params, AdamState& state, const OptimizerConfig& cfg,
                    Precision precision = Precision::f64);

}  // namespace hpvit
