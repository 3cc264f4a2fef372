#include "mrreparam/nn/functional.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace mrreparam::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct Geometry {
  std::int64_t channels, height, width;  // the "image" side
  std::int64_t kernel;
  int stride, pad;
  std::int64_t out_h, out_w;  // the "column" side

  std::int64_t col_rows() const { return channels * kernel * kernel; }
  std::int64_t col_cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* img, const Geometry& g, T* col) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = img + (c * g.height + iy) * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

// Scatter-add of columns back onto the image (adjoint of im2col).
template <typename T>
void col2im(const T* col, const Geometry& g, T* img) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = img + (c * g.height + iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw InvalidArgument(std::string(what) + " must have rank " + std::to_string(rank) +
                          ", got shape " + shape_str(s));
  }
}

template <typename T>
void check_conv_args(const BasicTensor<T>& x, const BasicTensor<T>& w, int stride) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  const auto k = w.dim(2);
  if (w.dim(3) != k || (k != 1 && k != 3)) {
    throw InvalidArgument("conv2d kernel must be 1x1 or 3x3, got " + shape_str(w.shape()));
  }
  if (w.dim(1) != x.dim(1)) {
    throw InvalidArgument("conv2d input channels " + std::to_string(x.dim(1)) +
                          " do not match weight " + shape_str(w.shape()));
  }
  if (stride != 1 && stride != 2) {
    throw InvalidArgument("conv2d stride must be 1 or 2, got " + std::to_string(stride));
  }
}

Geometry conv_geometry(const Shape& x, std::int64_t k, int stride) {
  const int pad = conv_padding(k);
  return {x[1], x[2], x[3], k, stride, pad, conv_out_size(x[2], k, stride),
          conv_out_size(x[3], k, stride)};
}

// tconv output [F, 2H, 2W] seen as the image side of a stride-2 conv.
Geometry tconv_geometry(std::int64_t out_channels, std::int64_t h, std::int64_t w) {
  return {out_channels, 2 * h, 2 * w, 3, 2, 1, h, w};
}

template <typename T>
T tanh_open(T v) {
  const T bound = std::nextafter(T{1}, T{0});
  return std::clamp(static_cast<T>(std::tanh(v)), -bound, bound);
}

}  // namespace

int conv_padding(std::int64_t kernel) { return kernel == 3 ? 1 : 0; }

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, int stride) {
  return (in + 2 * conv_padding(kernel) - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      int stride) {
  check_conv_args(x, w, stride);
  const auto n = x.dim(0);
  const auto f = w.dim(0);
  if (b.shape() != Shape{f}) {
    throw InvalidArgument("conv2d bias shape " + shape_str(b.shape()) + " != [" +
                          std::to_string(f) + "]");
  }
  const Geometry g = conv_geometry(x.shape(), w.dim(2), stride);
  BasicTensor<T> y(Shape{n, f, g.out_h, g.out_w});
  const bool direct = g.kernel == 1 && stride == 1;
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  ConstMatMap<T> wm(w.ptr(), f, g.col_rows());
  const std::int64_t in_stride = g.channels * g.height * g.width;
  const std::int64_t out_stride = f * g.col_cols();
  for (std::int64_t i = 0; i < n; ++i) {
    const T* src = x.ptr() + i * in_stride;
    if (!direct) im2col(src, g, col.data());
    ConstMatMap<T> cm(direct ? src : col.data(), g.col_rows(), g.col_cols());
    MatMap<T> ym(y.ptr() + i * out_stride, f, g.col_cols());
    ym.noalias() = wm * cm;
    for (std::int64_t o = 0; o < f; ++o) ym.row(o).array() += b[static_cast<std::size_t>(o)];
  }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                             const BasicTensor<T>& dy, int stride) {
  check_conv_args(x, w, stride);
  const auto n = x.dim(0);
  const auto f = w.dim(0);
  const Geometry g = conv_geometry(x.shape(), w.dim(2), stride);
  if (dy.shape() != Shape{n, f, g.out_h, g.out_w}) {
    throw InvalidArgument("conv2d upstream gradient shape " + shape_str(dy.shape()) +
                          " does not match output");
  }
  ConvGrads<T> grads{BasicTensor<T>(x.shape()), BasicTensor<T>(w.shape()),
                     BasicTensor<T>(Shape{f})};
  const bool direct = g.kernel == 1 && stride == 1;
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  std::vector<T> dcol(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  ConstMatMap<T> wm(w.ptr(), f, g.col_rows());
  MatMap<T> dwm(grads.dw.ptr(), f, g.col_rows());
  const std::int64_t in_stride = g.channels * g.height * g.width;
  const std::int64_t out_stride = f * g.col_cols();
  for (std::int64_t i = 0; i < n; ++i) {
    const T* src = x.ptr() + i * in_stride;
    if (!direct) im2col(src, g, col.data());
    ConstMatMap<T> cm(direct ? src : col.data(), g.col_rows(), g.col_cols());
    ConstMatMap<T> dym(dy.ptr() + i * out_stride, f, g.col_cols());
    dwm.noalias() += dym * cm.transpose();
    // Fixed-order sum; Eigen's vectorized reduction peels by pointer alignment.
    for (std::int64_t o = 0; o < f; ++o) {
      const T* row = dy.ptr() + i * out_stride + o * g.col_cols();
      double acc = 0.0;
      for (std::int64_t k = 0; k < g.col_cols(); ++k) acc += row[k];
      grads.db[static_cast<std::size_t>(o)] += static_cast<T>(acc);
    }
    T* dx = grads.dx.ptr() + i * in_stride;
    if (direct) {
      MatMap<T>(dx, g.col_rows(), g.col_cols()).noalias() = wm.transpose() * dym;
    } else {
      MatMap<T>(dcol.data(), g.col_rows(), g.col_cols()).noalias() = wm.transpose() * dym;
      col2im(dcol.data(), g, dx);
    }
  }
  return grads;
}

template <typename T>
BasicTensor<T> tconv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  require_rank(x.shape(), 4, "tconv2d input");
  require_rank(w.shape(), 4, "tconv2d weight");
  if (w.dim(0) != x.dim(1) || w.dim(2) != 3 || w.dim(3) != 3) {
    throw InvalidArgument("tconv2d weight " + shape_str(w.shape()) + " does not fit input " +
                          shape_str(x.shape()));
  }
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto f = w.dim(1);
  if (b.shape() != Shape{f}) throw InvalidArgument("tconv2d bias shape " + shape_str(b.shape()));
  const Geometry g = tconv_geometry(f, h, wd);
  BasicTensor<T> y(Shape{n, f, 2 * h, 2 * wd});
  std::vector<T> col(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  ConstMatMap<T> wm(w.ptr(), c, g.col_rows());
  const std::int64_t plane = 4 * h * wd;
  for (std::int64_t i = 0; i < n; ++i) {
    ConstMatMap<T> xm(x.ptr() + i * c * h * wd, c, h * wd);
    MatMap<T>(col.data(), g.col_rows(), g.col_cols()).noalias() = wm.transpose() * xm;
    T* dst = y.ptr() + i * f * plane;
    col2im(col.data(), g, dst);
    for (std::int64_t o = 0; o < f; ++o) {
      const T bias = b[static_cast<std::size_t>(o)];
      for (std::int64_t p = 0; p < plane; ++p) dst[o * plane + p] += bias;
    }
  }
  return y;
}

template <typename T>
ConvGrads<T> tconv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                              const BasicTensor<T>& dy) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto f = w.dim(1);
  if (dy.shape() != Shape{n, f, 2 * h, 2 * wd}) {
    throw InvalidArgument("tconv2d upstream gradient shape " + shape_str(dy.shape()));
  }
  const Geometry g = tconv_geometry(f, h, wd);
  ConvGrads<T> grads{BasicTensor<T>(x.shape()), BasicTensor<T>(w.shape()),
                     BasicTensor<T>(Shape{f})};
  std::vector<T> dcol(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  ConstMatMap<T> wm(w.ptr(), c, g.col_rows());
  MatMap<T> dwm(grads.dw.ptr(), c, g.col_rows());
  const std::int64_t plane = 4 * h * wd;
  for (std::int64_t i = 0; i < n; ++i) {
    const T* dyi = dy.ptr() + i * f * plane;
    im2col(dyi, g, dcol.data());
    ConstMatMap<T> dcm(dcol.data(), g.col_rows(), g.col_cols());
    ConstMatMap<T> xm(x.ptr() + i * c * h * wd, c, h * wd);
    MatMap<T>(grads.dx.ptr() + i * c * h * wd, c, h * wd).noalias() = wm * dcm;
    dwm.noalias() += xm * dcm.transpose();
    for (std::int64_t o = 0; o < f; ++o) {
      T s{0};
      for (std::int64_t p = 0; p < plane; ++p) s += dyi[o * plane + p];
      grads.db[static_cast<std::size_t>(o)] += s;
    }
  }
  return grads;
}

namespace {

// Normalization core shared by batch and instance norm. Elements of group g are
// x[n, c, :, :] for all (n, c) with group_of(n, c) == g.
template <typename T, typename GroupOf>
BasicTensor<T> normalize(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, std::int64_t groups, GroupOf group_of,
                         const std::vector<double>* fixed_mean, const std::vector<double>* fixed_inv,
                         NormCache<T>* cache, double eps, std::vector<double>* mean_out,
                         std::vector<double>* var_out) {
  const auto n = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> mean(static_cast<std::size_t>(groups), 0.0);
  std::vector<double> inv(static_cast<std::size_t>(groups), 0.0);
  if (fixed_mean) {
    mean = *fixed_mean;
    inv = *fixed_inv;
  } else {
    std::vector<double> count(static_cast<std::size_t>(groups), 0.0);
    std::vector<double> sq(static_cast<std::size_t>(groups), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t c = 0; c < ch; ++c) {
        const auto gi = static_cast<std::size_t>(group_of(i, c));
        const T* p = x.ptr() + (i * ch + c) * plane;
        double s = 0.0;
        for (std::int64_t k = 0; k < plane; ++k) s += p[k];
        mean[gi] += s;
        count[gi] += static_cast<double>(plane);
      }
    }
    for (std::size_t gi = 0; gi < mean.size(); ++gi) mean[gi] /= count[gi];
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t c = 0; c < ch; ++c) {
        const auto gi = static_cast<std::size_t>(group_of(i, c));
        const T* p = x.ptr() + (i * ch + c) * plane;
        double s = 0.0;
        for (std::int64_t k = 0; k < plane; ++k) {
          const double d = p[k] - mean[gi];
          s += d * d;
        }
        sq[gi] += s;
      }
    }
    for (std::size_t gi = 0; gi < mean.size(); ++gi) {
      const double var = sq[gi] / count[gi];
      inv[gi] = 1.0 / std::sqrt(var + eps);
      if (var_out) (*var_out)[gi] = var;
    }
    if (mean_out) *mean_out = mean;
  }
  BasicTensor<T> y(x.shape());
  BasicTensor<T> xhat(cache ? x.shape() : Shape{1});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < ch; ++c) {
      const auto gi = static_cast<std::size_t>(group_of(i, c));
      const auto off = (i * ch + c) * plane;
      const double gm = gamma[static_cast<std::size_t>(c)];
      const double bt = beta[static_cast<std::size_t>(c)];
      for (std::int64_t k = 0; k < plane; ++k) {
        const double xh = (x[static_cast<std::size_t>(off + k)] - mean[gi]) * inv[gi];
        if (cache) xhat[static_cast<std::size_t>(off + k)] = static_cast<T>(xh);
        y[static_cast<std::size_t>(off + k)] = static_cast<T>(gm * xh + bt);
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

template <typename T, typename GroupOf>
NormGrads<T> normalize_backward(const BasicTensor<T>& dy, const BasicTensor<T>& gamma,
                                const NormCache<T>& cache, std::int64_t groups, GroupOf group_of) {
  const auto& xhat = cache.xhat;
  if (xhat.shape() != dy.shape()) {
    throw InvalidArgument("normalization upstream gradient shape " + shape_str(dy.shape()));
  }
  const auto n = dy.dim(0), ch = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
  NormGrads<T> g{BasicTensor<T>(dy.shape()), BasicTensor<T>(Shape{ch}), BasicTensor<T>(Shape{ch})};
  std::vector<double> dgamma(static_cast<std::size_t>(ch), 0.0), dbeta(static_cast<std::size_t>(ch), 0.0);
  std::vector<double> sum1(static_cast<std::size_t>(groups), 0.0), sum2(static_cast<std::size_t>(groups), 0.0);
  std::vector<double> count(static_cast<std::size_t>(groups), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < ch; ++c) {
      const auto gi = static_cast<std::size_t>(group_of(i, c));
      const auto off = static_cast<std::size_t>((i * ch + c) * plane);
      const double gm = gamma[static_cast<std::size_t>(c)];
      for (std::int64_t k = 0; k < plane; ++k) {
        const double d = dy[off + static_cast<std::size_t>(k)];
        const double xh = xhat[off + static_cast<std::size_t>(k)];
        dgamma[static_cast<std::size_t>(c)] += d * xh;
        dbeta[static_cast<std::size_t>(c)] += d;
        sum1[gi] += d * gm;
        sum2[gi] += d * gm * xh;
      }
      count[gi] += static_cast<double>(plane);
    }
  }
  const bool train = cache.mode == NormMode::Train;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < ch; ++c) {
      const auto gi = static_cast<std::size_t>(group_of(i, c));
      const auto off = static_cast<std::size_t>((i * ch + c) * plane);
      const double gm = gamma[static_cast<std::size_t>(c)];
      const double inv = cache.inv_std[gi];
      const double m = count[gi];
      for (std::int64_t k = 0; k < plane; ++k) {
        const auto idx = off + static_cast<std::size_t>(k);
        const double dxh = dy[idx] * gm;
        g.dx[idx] = static_cast<T>(train ? inv / m * (m * dxh - sum1[gi] - xhat[idx] * sum2[gi])
                                         : dxh * inv);
      }
    }
  }
  for (std::int64_t c = 0; c < ch; ++c) {
    g.dgamma[static_cast<std::size_t>(c)] = static_cast<T>(dgamma[static_cast<std::size_t>(c)]);
    g.dbeta[static_cast<std::size_t>(c)] = static_cast<T>(dbeta[static_cast<std::size_t>(c)]);
  }
  return g;
}

template <typename T>
void check_norm_args(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                     const BasicTensor<T>& beta, const char* what) {
  require_rank(x.shape(), 4, what);
  const Shape ch{x.dim(1)};
  if (gamma.shape() != ch || beta.shape() != ch) {
    throw InvalidArgument(std::string(what) + " affine shape mismatch: gamma " +
                          shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()) +
                          ", channels " + std::to_string(x.dim(1)));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                           const BasicTensor<T>& beta, RunningStats<T>& stats, NormMode mode,
                           NormCache<T>* cache, double eps, double momentum) {
  check_norm_args(x, gamma, beta, "batchnorm2d");
  const auto ch = x.dim(1);
  if (stats.mean.shape() != Shape{ch} || stats.var.shape() != Shape{ch}) {
    throw InvalidArgument("batchnorm2d running stats do not match " + std::to_string(ch) +
                          " channels");
  }
  auto group_of = [](std::int64_t, std::int64_t c) { return c; };
  if (cache) cache->mode = mode;
  if (mode == NormMode::Eval) {
    std::vector<double> mean(static_cast<std::size_t>(ch)), inv(static_cast<std::size_t>(ch));
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = stats.mean[c];
      inv[c] = 1.0 / std::sqrt(static_cast<double>(stats.var[c]) + eps);
    }
    return normalize(x, gamma, beta, ch, group_of, &mean, &inv, cache, eps, nullptr, nullptr);
  }
  if (x.dim(0) * x.dim(2) * x.dim(3) < 2) {
    throw InvalidArgument("batchnorm2d degenerate variance: train mode needs N*H*W >= 2, got " +
                          shape_str(x.shape()));
  }
  std::vector<double> batch_mean(static_cast<std::size_t>(ch)), batch_var(static_cast<std::size_t>(ch));
  auto y = normalize(x, gamma, beta, ch, group_of, nullptr, nullptr, cache, eps, &batch_mean,
                     &batch_var);
  for (std::size_t c = 0; c < batch_mean.size(); ++c) {
    stats.mean[c] = static_cast<T>((1.0 - momentum) * stats.mean[c] + momentum * batch_mean[c]);
    stats.var[c] = static_cast<T>((1.0 - momentum) * stats.var[c] + momentum * batch_var[c]);
  }
  return y;
}

template <typename T>
NormGrads<T> batchnorm2d_backward(const BasicTensor<T>& dy, const BasicTensor<T>& gamma,
                                  const NormCache<T>& cache) {
  return normalize_backward(dy, gamma, cache, dy.dim(1),
                            [](std::int64_t, std::int64_t c) { return c; });
}

template <typename T>
BasicTensor<T> instancenorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                              const BasicTensor<T>& beta, NormCache<T>* cache, double eps) {
  check_norm_args(x, gamma, beta, "instancenorm2d");
  if (x.dim(2) * x.dim(3) < 2) {
    throw InvalidArgument("instancenorm2d degenerate variance: spatial size must be >= 2, got " +
                          shape_str(x.shape()));
  }
  const auto ch = x.dim(1);
  if (cache) cache->mode = NormMode::Train;
  return normalize(x, gamma, beta, x.dim(0) * ch,
                   [ch](std::int64_t n, std::int64_t c) { return n * ch + c; }, nullptr, nullptr,
                   cache, eps, nullptr, nullptr);
}

template <typename T>
NormGrads<T> instancenorm2d_backward(const BasicTensor<T>& dy, const BasicTensor<T>& gamma,
                                     const NormCache<T>& cache) {
  const auto ch = dy.dim(1);
  return normalize_backward(dy, gamma, cache, dy.dim(0) * ch,
                            [ch](std::int64_t n, std::int64_t c) { return n * ch + c; });
}

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind) {
  BasicTensor<T> y(x.shape());
  const auto slope = static_cast<T>(kLeakySlope);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    switch (kind) {
      case Activation::LeakyRelu: y[i] = v >= T{0} ? v : slope * v; break;
      case Activation::Relu: y[i] = v > T{0} ? v : T{0}; break;
      case Activation::Tanh: y[i] = tanh_open(v); break;
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& x, const BasicTensor<T>& y,
                                   const BasicTensor<T>& dy, Activation kind) {
  BasicTensor<T> dx(dy.shape());
  const auto slope = static_cast<T>(kLeakySlope);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    switch (kind) {
      case Activation::LeakyRelu: dx[i] = x[i] >= T{0} ? dy[i] : slope * dy[i]; break;
      case Activation::Relu: dx[i] = x[i] > T{0} ? dy[i] : T{0}; break;
      case Activation::Tanh: dx[i] = dy[i] * (T{1} - y[i] * y[i]); break;
    }
  }
  return dx;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 4, "concat_channels lhs");
  require_rank(b.shape(), 4, "concat_channels rhs");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw InvalidArgument("concat_channels spatial mismatch: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  BasicTensor<T> y(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.ptr() + i * ca * plane, ca * plane, y.ptr() + i * (ca + cb) * plane);
    std::copy_n(b.ptr() + i * cb * plane, cb * plane, y.ptr() + (i * (ca + cb) + ca) * plane);
  }
  return y;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t begin, std::int64_t end) {
  require_rank(x.shape(), 4, "slice_channels input");
  if (begin < 0 || end > x.dim(1) || begin >= end) {
    throw InvalidArgument("slice_channels range [" + std::to_string(begin) + "," +
                          std::to_string(end) + ") out of " + shape_str(x.shape()));
  }
  const auto n = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3), k = end - begin;
  BasicTensor<T> y(Shape{n, k, x.dim(2), x.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(x.ptr() + (i * ch + begin) * plane, k * plane, y.ptr() + i * k * plane);
  }
  return y;
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x) {
  require_rank(x.shape(), 4, "upsample input");
  const auto nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  BasicTensor<T> y(Shape{x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::int64_t p = 0; p < nc; ++p) {
    const T* src = x.ptr() + p * h * w;
    T* dst = y.ptr() + p * 4 * h * w;
    for (std::int64_t oy = 0; oy < 2 * h; ++oy) {
      for (std::int64_t ox = 0; ox < 2 * w; ++ox) dst[oy * 2 * w + ox] = src[(oy / 2) * w + ox / 2];
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& dy) {
  require_rank(dy.shape(), 4, "upsample gradient");
  const auto nc = dy.dim(0) * dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
  BasicTensor<T> dx(Shape{dy.dim(0), dy.dim(1), h, w});
  for (std::int64_t p = 0; p < nc; ++p) {
    const T* src = dy.ptr() + p * 4 * h * w;
    T* dst = dx.ptr() + p * h * w;
    for (std::int64_t oy = 0; oy < 2 * h; ++oy) {
      for (std::int64_t ox = 0; ox < 2 * w; ++ox) dst[(oy / 2) * w + ox / 2] += src[oy * 2 * w + ox];
    }
  }
  return dx;
}

template <typename T>
BasicTensor<T> broadcast_plane(T value, std::int64_t height, std::int64_t width) {
  if (!std::isfinite(value)) throw InvalidArgument("broadcast_plane value must be finite");
  return BasicTensor<T>(Shape{1, 1, height, width}, value);
}

template <typename T>
BasicTensor<T> broadcast_planes(const BasicTensor<T>& values, std::int64_t height,
                                std::int64_t width) {
  require_rank(values.shape(), 2, "broadcast_planes values");
  const auto n = values.dim(0), p = values.dim(1), plane = height * width;
  BasicTensor<T> y(Shape{n, p, height, width});
  for (std::int64_t i = 0; i < n * p; ++i) {
    std::fill_n(y.ptr() + i * plane, plane, values[static_cast<std::size_t>(i)]);
  }
  return y;
}

template <typename T>
T mse(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw InvalidArgument("mse shape mismatch: " + shape_str(pred.shape()) + " vs " +
                          shape_str(target.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    s += d * d;
  }
  return static_cast<T>(s / static_cast<double>(pred.size()));
}

template <typename T>
BasicTensor<T> mse_backward(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.shape() != target.shape()) throw InvalidArgument("mse shape mismatch");
  BasicTensor<T> g(pred.shape());
  const T scale = static_cast<T>(2.0 / static_cast<double>(pred.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - target[i]);
  return g;
}

template <typename T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.size() != b.size()) throw InvalidArgument("dot size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

#define MRREPARAM_INSTANTIATE(T)                                                                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                 const BasicTensor<T>&, int);                                     \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                        const BasicTensor<T>&, int);                              \
  template BasicTensor<T> tconv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                  const BasicTensor<T>&);                                         \
  template ConvGrads<T> tconv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                         const BasicTensor<T>&);                                  \
  template BasicTensor<T> batchnorm2d(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                      const BasicTensor<T>&, RunningStats<T>&, NormMode,          \
                                      NormCache<T>*, double, double);                             \
  template NormGrads<T> batchnorm2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                             const NormCache<T>&);                                \
  template BasicTensor<T> instancenorm2d(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                         const BasicTensor<T>&, NormCache<T>*, double);           \
  template NormGrads<T> instancenorm2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                                const NormCache<T>&);                             \
  template BasicTensor<T> activation(const BasicTensor<T>&, Activation);                          \
  template BasicTensor<T> activation_backward(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                              const BasicTensor<T>&, Activation);                 \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::int64_t, std::int64_t);      \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                              \
  template BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>&);                     \
  template BasicTensor<T> broadcast_plane(T, std::int64_t, std::int64_t);                         \
  template BasicTensor<T> broadcast_planes(const BasicTensor<T>&, std::int64_t, std::int64_t);    \
  template T mse(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> mse_backward(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template double dot(const BasicTensor<T>&, const BasicTensor<T>&);

MRREPARAM_INSTANTIATE(float)
MRREPARAM_INSTANTIATE(double)

#undef MRREPARAM_INSTANTIATE

}  // namespace mrreparam::nn
