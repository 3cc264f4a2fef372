#pragma once

// Two-phase training: the autoencoder first, then Param-Net on features of the
// frozen autoencoder.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mrreparam/io.hpp"
#include "mrreparam/model/autoencoder.hpp"
#include "mrreparam/model/paramnet.hpp"
#include "mrreparam/types.hpp"

namespace mrreparam::train {

namespace fs = std::filesystem;

/// [0,1] -> [-1,1]. Values are clamped to the source range first.
Tensor to_model_units(const Tensor& image);
/// [-1,1] -> [0,1], clamped.
Tensor from_model_units(const Tensor& image);

struct TrainConfig {
  std::int64_t epochs = 20;
  std::int64_t batch_size = 8;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool deterministic = true;
  int workers = 1;
  std::int64_t checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
  std::int64_t max_steps = 0;         // 0 means epochs * steps per epoch
  double val_fraction = 0.1;          // of the training split

  void validate() const;
};

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double mean_loss = 0.0;
  double seconds = 0.0;
  std::optional<double> val_loss;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  double last_loss() const { return steps.empty() ? 0.0 : steps.back().loss; }
};

io::Json to_json(const TrainLog& log);

/// Hooks around a fit loop.
struct FitOptions {
  /// Number of optimizer steps already taken (resume position).
  std::int64_t start_step = 0;
  /// Called after every `checkpoint_every`-th step with the global step count.
  std::function<void(std::int64_t step)> on_checkpoint;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Epoch-local batches over a seeded permutation of n items. A trailing batch
/// smaller than `min_batch` is merged into its predecessor.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::int64_t batch_size,
                                                    std::uint64_t seed, std::int64_t epoch,
                                                    std::size_t min_batch = 1);

/// Trains on images in [0,1], each [R,R], minimizing mse(decode(encode(x)), x)
/// in model units. Batch norm needs at least two images.
TrainLog fit_autoencoder(model::Autoencoder& ae, const std::vector<Tensor>& images,
                         const std::vector<Tensor>& val_images, const TrainConfig& config,
                         const FitOptions& options = {});

/// Mean reconstruction MSE in model units; `train_mode` uses batch statistics.
double reconstruction_mse(model::Autoencoder& ae, const std::vector<Tensor>& images,
                          bool train_mode = false);

/// Param-Net training data. Samples reference a shared table of input images,
/// so D2P inputs reused by many targets are encoded once.
struct PairSample {
  std::size_t input = 0;
  Tensor target;  // [R,R] in [0,1]
  ScanParams params_in;
  ScanParams params_out;
  std::int64_t id = 0;
};

struct PairSet {
  Mode mode = Mode::D2P;
  std::vector<Tensor> inputs;
  std::vector<PairSample> samples;
};

/// Trains `pn` against mse(pn(encode(input)), target) with the autoencoder in
/// eval mode and all of its parameters frozen.
TrainLog fit_paramnet(model::ParamNet& pn, model::Autoencoder& ae, const PairSet& data,
                      const PairSet* val, const TrainConfig& config, const FitOptions& options = {});

/// Mean Param-Net MSE in model units over a pair set.
double paramnet_mse(model::ParamNet& pn, model::Autoencoder& ae, const PairSet& data);

/// Predicted image in [0,1] for one [R,R] input in [0,1].
Tensor predict(model::Autoencoder& ae, model::ParamNet& pn, const Tensor& input, ScanParams params_in,
               ScanParams params_out, bool lenient = false);

/// Unique images (inputs and targets) of a manifest split.
std::vector<Tensor> load_split_images(const io::DatasetManifest& manifest, io::Split split);
PairSet load_pairs(const io::DatasetManifest& manifest, io::Split split);
/// Grayscale .pgm and .mrs images of a folder, resized to size x size.
std::vector<Tensor> load_image_folder(const fs::path& folder, std::int64_t size);

/// Deterministic train/validation partition of n items.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    std::size_t n, double val_fraction, std::uint64_t seed);

struct AutoencoderJob {
  fs::path dataset;           // manifest.json
  fs::path output;            // checkpoint path
  model::AutoencoderConfig model;
  TrainConfig train;
  std::optional<fs::path> pretrain_dir;
  std::int64_t pretrain_epochs = 1;
  std::optional<fs::path> resume;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct ParamNetJob {
  fs::path dataset;
  fs::path output;
  fs::path autoencoder;       // required phase-1 checkpoint
  Mode mode = Mode::D2P;
  TrainConfig train;
  std::optional<fs::path> resume;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  TrainLog log;
  io::Checkpoint checkpoint;
};

/// Writes the checkpoint to `output`, the log to `output` + ".log.json", and
/// periodic checkpoints to `output` + ".step<N>".
TrainResult train_autoencoder(const AutoencoderJob& job);
/// Throws ConfigError without an autoencoder checkpoint and ModeMismatch when
/// the dataset was built for the other variant.
TrainResult train_paramnet(const ParamNetJob& job);

}  // namespace mrreparam::train
