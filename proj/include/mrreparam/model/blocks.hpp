#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mrreparam/nn/layers.hpp"
#include "mrreparam/nn/optim.hpp"

namespace mrreparam::model {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, nn::Parameter<T>&)>;
template <typename T>
using BufferVisitor = std::function<void(const std::string&, BasicTensor<T>&)>;

enum class ConvKind { Conv, Transposed };

/// Convolution weights plus bias. Transposed kernels are [in, out, 3, 3] and
/// always upsample by exactly 2.
template <typename T>
struct Conv {
  nn::Parameter<T> weight;
  nn::Parameter<T> bias;
  int stride = 1;
  ConvKind kind = ConvKind::Conv;

  Conv() = default;
  Conv(std::int64_t in, std::int64_t out, std::int64_t kernel, int stride_, ConvKind kind_,
       std::uint64_t seed)
      : weight(nn::xavier_init<T>(kind_ == ConvKind::Conv ? Shape{out, in, kernel, kernel}
                                                          : Shape{in, out, kernel, kernel},
                                  seed)),
        bias(BasicTensor<T>(Shape{out})),
        stride(stride_),
        kind(kind_) {}

  std::int64_t in_channels() const { return weight.value.dim(kind == ConvKind::Conv ? 1 : 0); }
  std::int64_t out_channels() const { return bias.value.dim(0); }

  nn::Var<T> operator()(nn::Tape<T>& tape, nn::Var<T> x) {
    auto w = tape.parameter(weight);
    auto b = tape.parameter(bias);
    return kind == ConvKind::Conv ? nn::conv2d(x, w, b, stride) : nn::tconv2d(x, w, b);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename T>
struct BatchNorm {
  nn::Parameter<T> gamma;
  nn::Parameter<T> beta;
  nn::RunningStats<T> stats;

  BatchNorm() = default;
  explicit BatchNorm(std::int64_t channels)
      : gamma(BasicTensor<T>(Shape{channels}, T{1})), beta(BasicTensor<T>(Shape{channels})),
        stats(channels) {}

  nn::Var<T> operator()(nn::Tape<T>& tape, nn::Var<T> x, nn::NormMode mode) {
    return nn::batchnorm2d(x, tape.parameter(gamma), tape.parameter(beta), stats, mode);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
  void visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn) {
    fn(prefix + ".running_mean", stats.mean);
    fn(prefix + ".running_var", stats.var);
  }
};

template <typename T>
struct InstanceNorm {
  nn::Parameter<T> gamma;
  nn::Parameter<T> beta;

  InstanceNorm() = default;
  explicit InstanceNorm(std::int64_t channels)
      : gamma(BasicTensor<T>(Shape{channels}, T{1})), beta(BasicTensor<T>(Shape{channels})) {}

  nn::Var<T> operator()(nn::Tape<T>& tape, nn::Var<T> x) {
    return nn::instancenorm2d(x, tape.parameter(gamma), tape.parameter(beta));
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

}  // namespace mrreparam::model
