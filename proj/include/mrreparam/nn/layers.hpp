#pragma once

// Differentiable counterparts of the kernels in functional.hpp, recorded on a Tape.

#include "mrreparam/nn/autodiff.hpp"
#include "mrreparam/nn/functional.hpp"

namespace mrreparam::nn {

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride);

template <typename T>
Var<T> tconv2d(Var<T> x, Var<T> w, Var<T> b);

template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, RunningStats<T>& stats, NormMode mode);

template <typename T>
Var<T> instancenorm2d(Var<T> x, Var<T> gamma, Var<T> beta);

template <typename T>
Var<T> activation(Var<T> x, Activation kind);

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

template <typename T>
Var<T> upsample_nearest2x(Var<T> x);

/// Scalar mean squared error.
template <typename T>
Var<T> mse(Var<T> pred, Var<T> target);

}  // namespace mrreparam::nn
