#pragma once

#include <cstdint>
#include <span>

#include "mrreparam/nn/autodiff.hpp"

namespace mrreparam::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every trainable parameter. Frozen parameters
/// are skipped entirely: value, moments and step count stay untouched.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& config);

/// Glorot-uniform initialization: zero mean, variance 2 / (fan_in + fan_out).
/// For 4-D kernels [A,B,k,k], fan_in = B*k*k and fan_out = A*k*k; for 1-D
/// shapes both fans equal the length.
template <typename T>
BasicTensor<T> xavier_init(const Shape& shape, std::uint64_t seed);

/// Fans used by xavier_init.
std::pair<std::int64_t, std::int64_t> fan_in_out(const Shape& shape);

}  // namespace mrreparam::nn
