#include "mrreparam/model/paramnet.hpp"

#include <algorithm>
#include <cmath>

#include "mrreparam/model/serialize.hpp"
#include "mrreparam/random.hpp"

namespace mrreparam::model {

ParamNetConfig ParamNetConfig::matching(const AutoencoderConfig& ae, Mode mode) {
  return {mode, ae.depth, ae.base_width, ae.width_cap};
}

AutoencoderConfig ParamNetConfig::encoder() const {
  AutoencoderConfig c;
  c.depth = depth;
  c.base_width = base_width;
  c.width_cap = width_cap;
  return c;
}

std::int64_t ParamNetConfig::block_width(int block) const {
  const auto enc = encoder();
  return block < depth ? enc.channels(depth - block) : enc.channels(1);
}

void ParamNetConfig::validate() const { encoder().validate(); }

io::Json to_json(const ParamNetConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"depth", c.depth},
          {"base_width", c.base_width},
          {"width_cap", c.encoder().cap()}};
}

ParamNetConfig paramnet_config_from_json(const io::Json& doc) {
  ParamNetConfig c;
  c.mode = parse_mode(doc.at("mode").get<std::string>());
  c.depth = doc.at("depth").get<int>();
  c.base_width = doc.at("base_width").get<int>();
  c.width_cap = doc.value("width_cap", 0);
  c.validate();
  return c;
}

std::array<double, 2> normalize_params(ScanParams p, bool lenient) {
  const bool in_range = p.te_s >= kTeMin && p.te_s <= kTeMax && p.tr_s >= kTrMin && p.tr_s <= kTrMax;
  if (!in_range) {
    if (!lenient) {
      throw InvalidArgument("scan params te=" + std::to_string(p.te_s) + " tr=" + std::to_string(p.tr_s) +
                            " outside [0.02,1] x [1.2,10]");
    }
    p.te_s = std::clamp(p.te_s, kTeMin, kTeMax);
    p.tr_s = std::clamp(p.tr_s, kTrMin, kTrMax);
  }
  const double te = 2.0 * (std::log(p.te_s / kTeMin) / std::log(kTeMax / kTeMin)) - 1.0;
  const double tr = 2.0 * ((p.tr_s - kTrMin) / (kTrMax - kTrMin)) - 1.0;
  return {te, tr};
}

std::vector<double> conditioning(Mode mode, ScanParams in, ScanParams out, bool lenient) {
  const auto o = normalize_params(out, lenient);
  if (mode == Mode::D2P) return {o[0], o[1]};
  const auto i = normalize_params(in, lenient);
  return {i[0], i[1], o[0], o[1]};
}

template <typename T>
BasicParamNet<T>::BasicParamNet(const ParamNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto enc = config_.encoder();
  const int d = config_.depth;
  std::int64_t prev = enc.channels(d);
  for (int i = 1; i <= d; ++i) {
    const auto w = config_.block_width(i);
    const auto skip = i < d ? enc.channels(d - i) : 0;
    auto s = [&](std::uint64_t k) { return derive_seed(seed, {static_cast<std::uint64_t>(i), k}); };
    Block b;
    b.up = Conv<T>(prev, w, 3, 2, ConvKind::Transposed, s(0));
    b.fuse = Conv<T>(w + skip, w, 3, 1, ConvKind::Conv, s(1));
    b.fuse_norm = InstanceNorm<T>(w);
    b.cond = Conv<T>(w + config_.param_channels(), w, 3, 1, ConvKind::Conv, s(2));
    b.cond_norm = InstanceNorm<T>(w);
    b.refine = Conv<T>(w, w, 3, 1, ConvKind::Conv, s(3));
    b.refine_norm = InstanceNorm<T>(w);
    blocks_.push_back(std::move(b));
    prev = w;
  }
  tail_a_ = Conv<T>(prev, prev, 3, 1, ConvKind::Conv, derive_seed(seed, {100}));
  tail_b_ = Conv<T>(prev, 1, 3, 1, ConvKind::Conv, derive_seed(seed, {101}));
}

template <typename T>
nn::Var<T> BasicParamNet<T>::forward(nn::Tape<T>& tape, const std::vector<nn::Var<T>>& pyramid,
                                     const BasicTensor<T>& params, const ForwardObserver* observer) {
  const int d = config_.depth;
  if (static_cast<int>(pyramid.size()) != d) {
    throw InvalidArgument("Param-Net depth " + std::to_string(d) + " does not match pyramid of " +
                          std::to_string(pyramid.size()) + " levels");
  }
  const auto n = pyramid.back().shape()[0];
  if (params.shape() != Shape{n, config_.param_channels()}) {
    throw InvalidArgument("parameter tensor " + shape_str(params.shape()) + " != [" + std::to_string(n) +
                          "," + std::to_string(config_.param_channels()) + "]");
  }
  auto norm_act = [&](InstanceNorm<T>& norm, nn::Var<T> x) {
    if (observer && observer->on_instancenorm) observer->on_instancenorm(x.shape());
    return nn::activation(norm(tape, x), nn::Activation::LeakyRelu);
  };

  nn::Var<T> x = pyramid.back();
  for (int i = 1; i <= d; ++i) {
    Block& b = blocks_[static_cast<std::size_t>(i - 1)];
    x = b.up(tape, x);
    if (i < d) {
      nn::Var<T> skip = pyramid[static_cast<std::size_t>(d - i - 1)];
      if (observer && observer->on_skip) observer->on_skip(i, x.shape(), skip.shape());
      x = nn::concat_channels(x, skip);
    }
    x = norm_act(b.fuse_norm, b.fuse(tape, x));
    const auto& s = x.shape();
    auto planes = nn::broadcast_planes(params, s[2], s[3]);
    if (observer && observer->on_param_planes) observer->on_param_planes(i, planes.template cast<float>());
    x = nn::concat_channels(x, tape.constant(std::move(planes)));
    x = norm_act(b.cond_norm, b.cond(tape, x));
    x = norm_act(b.refine_norm, b.refine(tape, x));
    if (observer && observer->on_block) observer->on_block(i, x.shape());
  }
  x = tail_b_(tape, tail_a_(tape, x));
  return nn::activation(x, nn::Activation::Tanh);
}

template <typename T>
BasicTensor<T> BasicParamNet<T>::predict(const std::vector<BasicTensor<T>>& pyramid,
                                         const BasicTensor<T>& params) {
  nn::Tape<T> tape(false);
  std::vector<nn::Var<T>> levels;
  for (const auto& t : pyramid) levels.push_back(tape.constant(t));
  return forward(tape, levels, params).value();
}

template <typename T>
void BasicParamNet<T>::for_each_parameter(const ParamVisitor<T>& fn) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block." + std::to_string(i + 1);
    auto& b = blocks_[i];
    b.up.visit(p + ".tconv", fn);
    b.fuse.visit(p + ".conv1", fn);
    b.fuse_norm.visit(p + ".norm1", fn);
    b.cond.visit(p + ".conv2", fn);
    b.cond_norm.visit(p + ".norm2", fn);
    b.refine.visit(p + ".conv3", fn);
    b.refine_norm.visit(p + ".norm3", fn);
  }
  tail_a_.visit("tail.conv1", fn);
  tail_b_.visit("tail.conv2", fn);
}

template <typename T>
std::vector<nn::Parameter<T>*> BasicParamNet<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  for_each_parameter([&](const std::string&, nn::Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
std::int64_t BasicParamNet<T>::param_conv_in_channels(int block) const {
  return blocks_.at(static_cast<std::size_t>(block - 1)).cond.in_channels();
}

template class BasicParamNet<float>;
template class BasicParamNet<double>;

io::Checkpoint to_checkpoint(ParamNet& model, std::uint64_t seed, std::int64_t step) {
  return model_checkpoint(model, {{"kind", "paramnet"},
                                  {"mode", to_string(model.config().mode)},
                                  {"config", to_json(model.config())},
                                  {"seed", seed},
                                  {"step", step}});
}

ParamNet paramnet_from_checkpoint(const io::Checkpoint& ckpt, const Mode* expected) {
  const auto kind = ckpt.metadata.value("kind", std::string());
  if (kind != "paramnet") throw ModeMismatch("checkpoint holds a '" + kind + "' model, expected paramnet");
  const auto config = paramnet_config_from_json(ckpt.metadata.at("config"));
  if (expected && config.mode != *expected) {
    throw ModeMismatch("checkpoint holds a " + to_string(config.mode) + " Param-Net, expected " +
                       to_string(*expected));
  }
  ParamNet model(config, ckpt.metadata.value("seed", std::uint64_t{0}));
  load_model_tensors(model, ckpt);
  return model;
}

}  // namespace mrreparam::model
