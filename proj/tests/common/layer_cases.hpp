#pragma once

// Per-layer forward maps for the finite-difference gradient suite.

#include <string>
#include <vector>

#include "mrreparam/nn/functional.hpp"
#include "test_util.hpp"

namespace testutil {

using namespace mrreparam;
using namespace mrreparam::nn;

struct LayerCase {
  std::string name;
  std::vector<Shape> shapes;
  GradFn<float> f32;
  GradFn<double> f64;
};

template <typename T>
GradFn<T> conv_fn(int stride) {
  return [stride](Tape<T>&, const std::vector<Var<T>>& v) { return conv2d(v[0], v[1], v[2], stride); };
}

template <typename T>
GradFn<T> bn_fn() {
  return [](Tape<T>&, const std::vector<Var<T>>& v) {
    static thread_local RunningStats<T> stats(3);
    return batchnorm2d(v[0], v[1], v[2], stats, NormMode::Train);
  };
}

template <typename T>
GradFn<T> act_fn(Activation kind) {
  return [kind](Tape<T>&, const std::vector<Var<T>>& v) { return activation(v[0], kind); };
}

inline std::vector<LayerCase> layer_cases() {
  const Shape x{2, 3, 8, 8};
  return {
      {"conv3x3_s1", {x, {4, 3, 3, 3}, {4}}, conv_fn<float>(1), conv_fn<double>(1)},
      {"conv3x3_s2", {x, {4, 3, 3, 3}, {4}}, conv_fn<float>(2), conv_fn<double>(2)},
      {"conv1x1", {x, {4, 3, 1, 1}, {4}}, conv_fn<float>(1), conv_fn<double>(1)},
      {"tconv3x3",
       {x, {3, 2, 3, 3}, {2}},
       [](Tape<float>&, const std::vector<Var<float>>& v) { return tconv2d(v[0], v[1], v[2]); },
       [](Tape<double>&, const std::vector<Var<double>>& v) { return tconv2d(v[0], v[1], v[2]); }},
      {"batchnorm", {x, {3}, {3}}, bn_fn<float>(), bn_fn<double>()},
      {"instancenorm",
       {x, {3}, {3}},
       [](Tape<float>&, const std::vector<Var<float>>& v) { return instancenorm2d(v[0], v[1], v[2]); },
       [](Tape<double>&, const std::vector<Var<double>>& v) { return instancenorm2d(v[0], v[1], v[2]); }},
      {"leaky_relu", {x}, act_fn<float>(Activation::LeakyRelu), act_fn<double>(Activation::LeakyRelu)},
      {"relu", {x}, act_fn<float>(Activation::Relu), act_fn<double>(Activation::Relu)},
      {"tanh", {x}, act_fn<float>(Activation::Tanh), act_fn<double>(Activation::Tanh)},
      {"mse", {x}, [](Tape<float>&, const std::vector<Var<float>>& v) { return v[0]; },
       [](Tape<double>&, const std::vector<Var<double>>& v) { return v[0]; }},
      {"concat_upsample",
       {x, {2, 2, 8, 8}},
       [](Tape<float>&, const std::vector<Var<float>>& v) { return upsample_nearest2x(concat_channels(v[0], v[1])); },
       [](Tape<double>&, const std::vector<Var<double>>& v) { return upsample_nearest2x(concat_channels(v[0], v[1])); }},
  };
}

inline std::vector<BasicTensor<double>> case_inputs(const LayerCase& c, std::uint64_t seed) {
  std::vector<BasicTensor<double>> in;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    // gammas near 1 keep the normalizations well conditioned
    const bool gamma = (c.name == "batchnorm" || c.name == "instancenorm") && i == 1;
    in.push_back(gamma ? random_tensor<double>(c.shapes[i], seed + i, 0.5, 1.5)
                       : random_tensor<double>(c.shapes[i], seed + i));
  }
  return in;
}

}  // namespace testutil
