#pragma once

// Pure tensor kernels: forward maps and their vector-Jacobian products.
// Every function is explicitly instantiated for float and double.

#include <cstdint>
#include <vector>

#include "mrreparam/tensor.hpp"

namespace mrreparam::nn {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

enum class Activation { LeakyRelu, Relu, Tanh };
enum class NormMode { Train, Eval };

/// Spatial padding used for a square kernel of size k (1 -> 0, 3 -> 1).
int conv_padding(std::int64_t kernel);

/// Output extent of a padded strided convolution along one axis.
std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, int stride);

template <typename T>
struct ConvGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dw;
  BasicTensor<T> db;
};

/// Cross-correlation. x [N,C,H,W], w [F,C,k,k] with k in {1,3}, b [F].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      int stride);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                             const BasicTensor<T>& dy, int stride);

/// 3x3 transposed convolution, stride 2, padding 1, output padding 1.
/// x [N,C,H,W], w [C,F,3,3], b [F] -> [N,F,2H,2W].
template <typename T>
BasicTensor<T> tconv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

template <typename T>
ConvGrads<T> tconv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                              const BasicTensor<T>& dy);

template <typename T>
struct RunningStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;
  explicit RunningStats(std::int64_t channels = 1)
      : mean(Shape{channels}, T{0}), var(Shape{channels}, T{1}) {}
};

/// Saved forward state for a normalization backward pass.
template <typename T>
struct NormCache {
  BasicTensor<T> xhat;
  std::vector<double> inv_std;  // one per normalization group
  NormMode mode = NormMode::Train;
};

template <typename T>
struct NormGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dgamma;
  BasicTensor<T> dbeta;
};

/// Per-channel normalization over (N,H,W). Train mode uses batch statistics and
/// folds them into `stats` (unbiased variance); eval mode reads `stats`.
template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                           const BasicTensor<T>& beta, RunningStats<T>& stats, NormMode mode,
                           NormCache<T>* cache = nullptr, double eps = kNormEps,
                           double momentum = kBatchNormMomentum);

template <typename T>
NormGrads<T> batchnorm2d_backward(const BasicTensor<T>& dy, const BasicTensor<T>& gamma,
                                  const NormCache<T>& cache);

/// Per-(n,c) normalization over spatial dims.
template <typename T>
BasicTensor<T> instancenorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                              const BasicTensor<T>& beta, NormCache<T>* cache = nullptr,
                              double eps = kNormEps);

template <typename T>
NormGrads<T> instancenorm2d_backward(const BasicTensor<T>& dy, const BasicTensor<T>& gamma,
                                     const NormCache<T>& cache);

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind);

/// `x` is the activation input, `y` its output; tanh uses y, the ReLUs use x.
template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& x, const BasicTensor<T>& y,
                                   const BasicTensor<T>& dy, Activation kind);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Channels [begin, end) of x.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t begin, std::int64_t end);

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& dy);

/// [1,1,H,W] filled with `value`.
template <typename T>
BasicTensor<T> broadcast_plane(T value, std::int64_t height, std::int64_t width);

/// values [N,P] -> [N,P,H,W]; plane (n,p) is constant values[n,p].
template <typename T>
BasicTensor<T> broadcast_planes(const BasicTensor<T>& values, std::int64_t height,
                                std::int64_t width);

template <typename T>
T mse(const BasicTensor<T>& pred, const BasicTensor<T>& target);

/// d mse / d pred.
template <typename T>
BasicTensor<T> mse_backward(const BasicTensor<T>& pred, const BasicTensor<T>& target);

/// Frobenius inner product, accumulated in double.
template <typename T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace mrreparam::nn
