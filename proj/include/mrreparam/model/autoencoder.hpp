#pragma once

// Image-reconstruction autoencoder whose encoder outputs form a feature pyramid.
//
//   encoder: depth x [conv3x3/s2 -> batchnorm -> leaky_relu(0.2)]
//   decoder: (depth-1) x [tconv3x3/s2 -> batchnorm -> relu]
//            -> nearest 2x upsample -> conv3x3/s1 -> conv1x1/s1 -> tanh
//
// The decoder reads only the deepest level; the upsample restores the input
// resolution that depth-1 doublings of a 1x1 bottleneck cannot reach.

#include <cstdint>
#include <vector>

#include "mrreparam/io.hpp"
#include "mrreparam/model/blocks.hpp"

namespace mrreparam::model {

struct AutoencoderConfig {
  int depth = 8;
  int base_width = 16;
  int width_cap = 0;    // 0 selects 8 * base_width
  int resolution = 0;   // 0 selects 2^depth; anything else must equal it

  int cap() const { return width_cap > 0 ? width_cap : 8 * base_width; }
  int input_resolution() const { return resolution > 0 ? resolution : (1 << depth); }
  /// Channels of encoder level i in [1, depth]: min(base_width * 2^(i-1), cap).
  std::int64_t channels(int level) const;
  /// Throws ConfigError when the configuration cannot be built.
  void validate() const;

  friend bool operator==(const AutoencoderConfig&, const AutoencoderConfig&) = default;
};

io::Json to_json(const AutoencoderConfig& config);
AutoencoderConfig autoencoder_config_from_json(const io::Json& doc);

template <typename T>
class BasicAutoencoder {
 public:
  BasicAutoencoder(const AutoencoderConfig& config, std::uint64_t seed);

  const AutoencoderConfig& config() const noexcept { return config_; }

  /// image [N,1,R,R] in model units -> one post-activation tensor per encoder layer.
  std::vector<nn::Var<T>> encode(nn::Tape<T>& tape, nn::Var<T> image, nn::NormMode mode);
  /// Reconstruction [N,1,R,R] in (-1,1) from a pyramid of this configuration.
  nn::Var<T> decode(nn::Tape<T>& tape, const std::vector<nn::Var<T>>& pyramid, nn::NormMode mode);

  /// Eval-mode feature pyramid of a constant image.
  std::vector<BasicTensor<T>> encode(const BasicTensor<T>& image);
  BasicTensor<T> reconstruct(const BasicTensor<T>& image);

  void for_each_parameter(const ParamVisitor<T>& fn);
  void for_each_buffer(const BufferVisitor<T>& fn);
  std::vector<nn::Parameter<T>*> parameters();
  void set_trainable(bool trainable);

 private:
  AutoencoderConfig config_;
  std::vector<Conv<T>> enc_conv_;
  std::vector<BatchNorm<T>> enc_bn_;
  std::vector<Conv<T>> dec_conv_;
  std::vector<BatchNorm<T>> dec_bn_;
  Conv<T> head_conv_;
  Conv<T> head_pool_;
};

using Autoencoder = BasicAutoencoder<float>;

io::Checkpoint to_checkpoint(Autoencoder& model, std::uint64_t seed = 0, std::int64_t step = 0);
/// Throws ModeMismatch when the checkpoint holds another model kind.
Autoencoder autoencoder_from_checkpoint(const io::Checkpoint& checkpoint);

}  // namespace mrreparam::model
