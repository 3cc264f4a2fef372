#include "mrreparam/nn/optim.hpp"

#include <cmath>

#include "mrreparam/random.hpp"

namespace mrreparam::nn {

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& config) {
  for (Parameter<T>* p : params) {
    if (!p->trainable) continue;
    p->step_count += 1;
    const double t = static_cast<double>(p->step_count);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    const auto b1 = static_cast<T>(config.beta1);
    const auto b2 = static_cast<T>(config.beta2);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T g = p->grad[i];
      p->adam_m[i] = b1 * p->adam_m[i] + (T{1} - b1) * g;
      p->adam_v[i] = b2 * p->adam_v[i] + (T{1} - b2) * g * g;
      const double m_hat = p->adam_m[i] / correction1;
      const double v_hat = p->adam_v[i] / correction2;
      p->value[i] -= static_cast<T>(config.lr * m_hat / (std::sqrt(v_hat) + config.eps));
    }
  }
}

std::pair<std::int64_t, std::int64_t> fan_in_out(const Shape& shape) {
  if (shape.size() == 4) {
    const auto field = shape[2] * shape[3];
    return {shape[1] * field, shape[0] * field};
  }
  if (shape.size() == 2) return {shape[1], shape[0]};
  const auto n = shape_numel(shape);
  return {n, n};
}

template <typename T>
BasicTensor<T> xavier_init(const Shape& shape, std::uint64_t seed) {
  const auto [fan_in, fan_out] = fan_in_out(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  BasicTensor<T> out(shape);
  Rng rng(seed);
  for (auto& v : out.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

template void adam_step<float>(std::span<Parameter<float>* const>, const AdamConfig&);
template void adam_step<double>(std::span<Parameter<double>* const>, const AdamConfig&);
template BasicTensor<float> xavier_init<float>(const Shape&, std::uint64_t);
template BasicTensor<double> xavier_init<double>(const Shape&, std::uint64_t);

}  // namespace mrreparam::nn
