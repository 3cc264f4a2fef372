#include "mrreparam/model/autoencoder.hpp"

#include <algorithm>

#include "mrreparam/model/serialize.hpp"
#include "mrreparam/random.hpp"

namespace mrreparam::model {

std::int64_t AutoencoderConfig::channels(int level) const {
  if (level == 0) return 1;
  const std::int64_t w = static_cast<std::int64_t>(base_width) << (level - 1);
  return std::min<std::int64_t>(w, cap());
}

void AutoencoderConfig::validate() const {
  if (depth < 1 || depth > 12) throw ConfigError("autoencoder depth must be in [1, 12], got " + std::to_string(depth));
  if (base_width < 1) throw ConfigError("base_width must be >= 1");
  if (width_cap < 0) throw ConfigError("width_cap must be >= 0");
  if (resolution != 0 && resolution != (1 << depth)) {
    throw ConfigError("input resolution " + std::to_string(resolution) + " must equal 2^depth = " +
                      std::to_string(1 << depth));
  }
}

io::Json to_json(const AutoencoderConfig& c) {
  return {{"depth", c.depth}, {"base_width", c.base_width}, {"width_cap", c.cap()},
          {"resolution", c.input_resolution()}};
}

AutoencoderConfig autoencoder_config_from_json(const io::Json& doc) {
  AutoencoderConfig c;
  c.depth = doc.at("depth").get<int>();
  c.base_width = doc.at("base_width").get<int>();
  c.width_cap = doc.value("width_cap", 0);
  c.resolution = doc.value("resolution", 0);
  c.validate();
  return c;
}

template <typename T>
BasicAutoencoder<T>::BasicAutoencoder(const AutoencoderConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  const int d = config_.depth;
  for (int i = 1; i <= d; ++i) {
    enc_conv_.emplace_back(config_.channels(i - 1), config_.channels(i), 3, 2, ConvKind::Conv,
                           derive_seed(seed, {1, static_cast<std::uint64_t>(i)}));
    enc_bn_.emplace_back(config_.channels(i));
  }
  for (int j = 1; j < d; ++j) {
    dec_conv_.emplace_back(config_.channels(d - j + 1), config_.channels(d - j), 3, 2,
                           ConvKind::Transposed, derive_seed(seed, {2, static_cast<std::uint64_t>(j)}));
    dec_bn_.emplace_back(config_.channels(d - j));
  }
  const auto c1 = config_.channels(1);
  head_conv_ = Conv<T>(c1, c1, 3, 1, ConvKind::Conv, derive_seed(seed, {3}));
  head_pool_ = Conv<T>(c1, 1, 1, 1, ConvKind::Conv, derive_seed(seed, {4}));
}

template <typename T>
std::vector<nn::Var<T>> BasicAutoencoder<T>::encode(nn::Tape<T>& tape, nn::Var<T> image,
                                                    nn::NormMode mode) {
  const auto& s = image.shape();
  const std::int64_t r = config_.input_resolution();
  if (s.size() != 4 || s[1] != 1 || s[2] != r || s[3] != r) {
    throw InvalidArgument("autoencoder expects [N,1," + std::to_string(r) + "," + std::to_string(r) +
                          "] input, got " + shape_str(s));
  }
  std::vector<nn::Var<T>> pyramid;
  nn::Var<T> x = image;
  for (std::size_t i = 0; i < enc_conv_.size(); ++i) {
    x = nn::activation(enc_bn_[i](tape, enc_conv_[i](tape, x), mode), nn::Activation::LeakyRelu);
    pyramid.push_back(x);
  }
  return pyramid;
}

template <typename T>
nn::Var<T> BasicAutoencoder<T>::decode(nn::Tape<T>& tape, const std::vector<nn::Var<T>>& pyramid,
                                       nn::NormMode mode) {
  const int d = config_.depth;
  if (static_cast<int>(pyramid.size()) != d) {
    throw InvalidArgument("pyramid has " + std::to_string(pyramid.size()) + " levels, expected " +
                          std::to_string(d));
  }
  nn::Var<T> x = pyramid.back();
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != config_.channels(d) || s[2] != 1 || s[3] != 1) {
    throw InvalidArgument("deepest pyramid level has shape " + shape_str(s) + ", expected [N," +
                          std::to_string(config_.channels(d)) + ",1,1]");
  }
  for (std::size_t j = 0; j < dec_conv_.size(); ++j) {
    x = nn::activation(dec_bn_[j](tape, dec_conv_[j](tape, x), mode), nn::Activation::Relu);
  }
  x = nn::upsample_nearest2x(x);
  x = head_pool_(tape, head_conv_(tape, x));
  return nn::activation(x, nn::Activation::Tanh);
}

template <typename T>
std::vector<BasicTensor<T>> BasicAutoencoder<T>::encode(const BasicTensor<T>& image) {
  nn::Tape<T> tape(false);
  auto levels = encode(tape, tape.constant(image), nn::NormMode::Eval);
  std::vector<BasicTensor<T>> out;
  for (auto v : levels) out.push_back(v.value());
  return out;
}

template <typename T>
BasicTensor<T> BasicAutoencoder<T>::reconstruct(const BasicTensor<T>& image) {
  nn::Tape<T> tape(false);
  auto levels = encode(tape, tape.constant(image), nn::NormMode::Eval);
  return decode(tape, levels, nn::NormMode::Eval).value();
}

template <typename T>
void BasicAutoencoder<T>::for_each_parameter(const ParamVisitor<T>& fn) {
  for (std::size_t i = 0; i < enc_conv_.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i + 1);
    enc_conv_[i].visit(p + ".conv", fn);
    enc_bn_[i].visit(p + ".bn", fn);
  }
  for (std::size_t j = 0; j < dec_conv_.size(); ++j) {
    const std::string p = "decoder." + std::to_string(j + 1);
    dec_conv_[j].visit(p + ".tconv", fn);
    dec_bn_[j].visit(p + ".bn", fn);
  }
  head_conv_.visit("head.conv3x3", fn);
  head_pool_.visit("head.conv1x1", fn);
}

template <typename T>
void BasicAutoencoder<T>::for_each_buffer(const BufferVisitor<T>& fn) {
  for (std::size_t i = 0; i < enc_bn_.size(); ++i) enc_bn_[i].visit_buffers("encoder." + std::to_string(i + 1) + ".bn", fn);
  for (std::size_t j = 0; j < dec_bn_.size(); ++j) dec_bn_[j].visit_buffers("decoder." + std::to_string(j + 1) + ".bn", fn);
}

template <typename T>
std::vector<nn::Parameter<T>*> BasicAutoencoder<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  for_each_parameter([&](const std::string&, nn::Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
void BasicAutoencoder<T>::set_trainable(bool trainable) {
  for (auto* p : parameters()) p->trainable = trainable;
}

template class BasicAutoencoder<float>;
template class BasicAutoencoder<double>;

io::Checkpoint to_checkpoint(Autoencoder& model, std::uint64_t seed, std::int64_t step) {
  return model_checkpoint(model, {{"kind", "autoencoder"},
                                  {"config", to_json(model.config())},
                                  {"seed", seed},
                                  {"step", step}});
}

Autoencoder autoencoder_from_checkpoint(const io::Checkpoint& ckpt) {
  const auto kind = ckpt.metadata.value("kind", std::string());
  if (kind != "autoencoder") throw ModeMismatch("checkpoint holds a '" + kind + "' model, expected autoencoder");
  Autoencoder model(autoencoder_config_from_json(ckpt.metadata.at("config")),
                    ckpt.metadata.value("seed", std::uint64_t{0}));
  load_model_tensors(model, ckpt);
  return model;
}

}  // namespace mrreparam::model
