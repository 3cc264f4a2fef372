#include "mrreparam/nn/layers.hpp"

#include <memory>

namespace mrreparam::nn {

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride) {
  Tape<T>& tape = *x.tape;
  auto y = conv2d(x.value(), w.value(), b.value(), stride);
  return tape.record(std::move(y), {x, w, b}, [x, w, b, stride](Tape<T>& t, Var<T>, const BasicTensor<T>& g) {
    auto grads = conv2d_backward(t.value(x), t.value(w), g, stride);
    t.accumulate(x, grads.dx);
    t.accumulate(w, grads.dw);
    t.accumulate(b, grads.db);
  });
}

template <typename T>
Var<T> tconv2d(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& tape = *x.tape;
  auto y = tconv2d(x.value(), w.value(), b.value());
  return tape.record(std::move(y), {x, w, b}, [x, w, b](Tape<T>& t, Var<T>, const BasicTensor<T>& g) {
    auto grads = tconv2d_backward(t.value(x), t.value(w), g);
    t.accumulate(x, grads.dx);
    t.accumulate(w, grads.dw);
    t.accumulate(b, grads.db);
  });
}

template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, RunningStats<T>& stats, NormMode mode) {
  Tape<T>& tape = *x.tape;
  auto cache = std::make_shared<NormCache<T>>();
  auto y = batchnorm2d(x.value(), gamma.value(), beta.value(), stats, mode, cache.get());
  return tape.record(std::move(y), {x, gamma, beta},
                     [x, gamma, beta, cache](Tape<T>& t, Var<T>, const BasicTensor<T>& g) {
                       auto grads = batchnorm2d_backward(g, t.value(gamma), *cache);
                       t.accumulate(x, grads.dx);
                       t.accumulate(gamma, grads.dgamma);
                       t.accumulate(beta, grads.dbeta);
                     });
}

template <typename T>
Var<T> instancenorm2d(Var<T> x, Var<T> gamma, Var<T> beta) {
  Tape<T>& tape = *x.tape;
  auto cache = std::make_shared<NormCache<T>>();
  auto y = instancenorm2d(x.value(), gamma.value(), beta.value(), cache.get());
  return tape.record(std::move(y), {x, gamma, beta},
                     [x, gamma, beta, cache](Tape<T>& t, Var<T>, const BasicTensor<T>& g) {
                       auto grads = instancenorm2d_backward(g, t.value(gamma), *cache);
                       t.accumulate(x, grads.dx);
                       t.accumulate(gamma, grads.dgamma);
                       t.accumulate(beta, grads.dbeta);
                     });
}

template <typename T>
Var<T> activation(Var<T> x, Activation kind) {
  auto y = activation(x.value(), kind);
  return x.tape->record(std::move(y), {x},
                        [x, kind](Tape<T>& t, Var<T> self, const BasicTensor<T>& g) {
                          t.accumulate(x, activation_backward(t.value(x), t.value(self), g, kind));
                        });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const auto ca = a.shape()[1];
  const auto cb = b.shape()[1];
  auto y = concat_channels(a.value(), b.value());
  return tape.record(std::move(y), {a, b}, [a, b, ca, cb](Tape<T>& t, Var<T>, const BasicTensor<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, slice_channels(g, 0, ca));
    if (t.requires_grad(b)) t.accumulate(b, slice_channels(g, ca, ca + cb));
  });
}

template <typename T>
Var<T> upsample_nearest2x(Var<T> x) {
  auto y = upsample_nearest2x(x.value());
  return x.tape->record(std::move(y), {x}, [x](Tape<T>& t, Var<T>, const BasicTensor<T>& g) {
    t.accumulate(x, upsample_nearest2x_backward(g));
  });
}

template <typename T>
Var<T> mse(Var<T> pred, Var<T> target) {
  const T loss = mse(pred.value(), target.value());
  return pred.tape->record(BasicTensor<T>::scalar(loss), {pred, target},
                           [pred, target](Tape<T>& t, Var<T>, const BasicTensor<T>& g) {
                             const T upstream = g[0];
                             auto dp = mse_backward(t.value(pred), t.value(target));
                             for (auto& v : dp.data()) v *= upstream;
                             if (t.requires_grad(target)) {
                               BasicTensor<T> dt = dp;
                               for (auto& v : dt.data()) v = -v;
                               t.accumulate(target, dt);
                             }
                             t.accumulate(pred, dp);
                           });
}

#define MRREPARAM_INSTANTIATE(T)                                                       \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int);                                 \
  template Var<T> tconv2d(Var<T>, Var<T>, Var<T>);                                     \
  template Var<T> batchnorm2d(Var<T>, Var<T>, Var<T>, RunningStats<T>&, NormMode);     \
  template Var<T> instancenorm2d(Var<T>, Var<T>, Var<T>);                              \
  template Var<T> activation(Var<T>, Activation);                                      \
  template Var<T> concat_channels(Var<T>, Var<T>);                                     \
  template Var<T> upsample_nearest2x(Var<T>);                                          \
  template Var<T> mse(Var<T>, Var<T>);

MRREPARAM_INSTANTIATE(float)
MRREPARAM_INSTANTIATE(double)

#undef MRREPARAM_INSTANTIATE

}  // namespace mrreparam::nn
