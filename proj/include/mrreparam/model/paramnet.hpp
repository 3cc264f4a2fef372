#pragma once

// Coarse-to-fine Param-Net. Block i (1..depth) runs at spatial size 2^i:
//
//   tconv3x3/s2 -> [concat encoder level depth-i, for i < depth]
//   -> conv3x3 -> IN -> lrelu -> concat parameter planes
//   -> conv3x3 -> IN -> lrelu -> conv3x3 -> IN -> lrelu
//
// followed by conv3x3 -> conv3x3 -> tanh. Block 1 consumes the 1x1 bottleneck.

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "mrreparam/io.hpp"
#include "mrreparam/model/autoencoder.hpp"
#include "mrreparam/types.hpp"

namespace mrreparam::model {

struct ParamNetConfig {
  Mode mode = Mode::D2P;
  int depth = 8;
  int base_width = 16;
  int width_cap = 0;  // 0 selects 8 * base_width

  static ParamNetConfig matching(const AutoencoderConfig& ae, Mode mode);
  AutoencoderConfig encoder() const;
  /// 2 for D2P (te_out, tr_out), 4 for P2P (te_in, tr_in, te_out, tr_out).
  std::int64_t param_channels() const { return mode == Mode::D2P ? 2 : 4; }
  /// Channels produced by block i; mirrors the encoder at the same resolution.
  std::int64_t block_width(int block) const;
  void validate() const;
};

io::Json to_json(const ParamNetConfig& config);
ParamNetConfig paramnet_config_from_json(const io::Json& doc);

/// te on a log scale, tr linearly; both map their sampling bounds to -1 and +1.
/// Out-of-range values throw unless `lenient`, which clamps them.
std::array<double, 2> normalize_params(ScanParams params, bool lenient = false);

/// Conditioning vector of one sample in parameter-plane order.
std::vector<double> conditioning(Mode mode, ScanParams in, ScanParams out, bool lenient = false);

/// Observation points inside a forward pass, for structural tests.
struct ForwardObserver {
  std::function<void(int block, const Shape& upsampled, const Shape& skip)> on_skip;
  std::function<void(int block, const Tensor& planes)> on_param_planes;
  std::function<void(const Shape& input)> on_instancenorm;
  std::function<void(int block, const Shape& output)> on_block;
};

template <typename T>
class BasicParamNet {
 public:
  BasicParamNet(const ParamNetConfig& config, std::uint64_t seed);

  const ParamNetConfig& config() const noexcept { return config_; }

  /// pyramid: encoder levels 1..depth; params: [N, param_channels] normalized.
  nn::Var<T> forward(nn::Tape<T>& tape, const std::vector<nn::Var<T>>& pyramid,
                     const BasicTensor<T>& params, const ForwardObserver* observer = nullptr);

  BasicTensor<T> predict(const std::vector<BasicTensor<T>>& pyramid, const BasicTensor<T>& params);

  void for_each_parameter(const ParamVisitor<T>& fn);
  void for_each_buffer(const BufferVisitor<T>&) {}
  std::vector<nn::Parameter<T>*> parameters();

  /// Input channels of the conv that consumes the parameter planes in `block`.
  std::int64_t param_conv_in_channels(int block) const;

 private:
  struct Block {
    Conv<T> up;
    Conv<T> fuse;
    InstanceNorm<T> fuse_norm;
    Conv<T> cond;
    InstanceNorm<T> cond_norm;
    Conv<T> refine;
    InstanceNorm<T> refine_norm;
  };

  ParamNetConfig config_;
  std::vector<Block> blocks_;
  Conv<T> tail_a_;
  Conv<T> tail_b_;
};

using ParamNet = BasicParamNet<float>;

io::Checkpoint to_checkpoint(ParamNet& model, std::uint64_t seed = 0, std::int64_t step = 0);
/// Throws ModeMismatch for a non-Param-Net checkpoint or, when `expected` is
/// given, a Param-Net of the other variant.
ParamNet paramnet_from_checkpoint(const io::Checkpoint& checkpoint, const Mode* expected = nullptr);

}  // namespace mrreparam::model
