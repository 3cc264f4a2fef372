#include "mrreparam/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "mrreparam/nn/optim.hpp"
#include "mrreparam/parallel.hpp"
#include "mrreparam/phantom.hpp"
#include "mrreparam/random.hpp"

namespace mrreparam::train {

namespace {

// Pyramids above this many floats are recomputed per batch instead of cached.
constexpr std::size_t kPyramidCacheFloats = std::size_t{256} << 20;

using Clock = std::chrono::steady_clock;

nn::AdamConfig adam_config(const TrainConfig& c) { return {c.lr, c.beta1, c.beta2, c.adam_eps}; }

/// Stacks [R,R] images into [B,1,R,R] model units.
Tensor stack_images(const std::vector<const Tensor*>& images) {
  const auto h = images.front()->dim(0);
  const auto w = images.front()->dim(1);
  Tensor out(Shape{static_cast<std::int64_t>(images.size()), 1, h, w});
  float* dst = out.ptr();
  for (const Tensor* img : images) {
    if (img->shape() != Shape{h, w}) {
      throw InvalidArgument("batch mixes image shapes " + shape_str(img->shape()) + " and [" +
                            std::to_string(h) + "," + std::to_string(w) + "]");
    }
    for (float v : img->data()) *dst++ = 2.0f * std::clamp(v, 0.0f, 1.0f) - 1.0f;
  }
  return out;
}

/// Concatenates [1,...] tensors along the batch axis.
Tensor stack_batch(const std::vector<const Tensor*>& parts) {
  Shape shape = parts.front()->shape();
  shape[0] = static_cast<std::int64_t>(parts.size());
  Tensor out(shape);
  float* dst = out.ptr();
  for (const Tensor* p : parts) dst = std::copy(p->ptr(), p->ptr() + p->size(), dst);
  return out;
}

void zero_grads(const std::vector<nn::Parameter<float>*>& params) {
  for (auto* p : params) p->zero_grad();
}

void check_finite(double loss, std::int64_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(step));
  }
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

/// Shared epoch/step loop. `step_fn` runs one optimizer step on a batch and
/// returns its loss; `val_fn` (optional) returns a validation loss.
TrainLog run_loop(std::size_t n, std::size_t min_batch, const TrainConfig& config,
                  const FitOptions& options,
                  const std::function<double(const std::vector<std::size_t>&)>& step_fn,
                  const std::function<std::optional<double>()>& val_fn) {
  config.validate();
  if (n < min_batch) {
    throw ConfigError("training needs at least " + std::to_string(min_batch) + " samples, got " +
                      std::to_string(n));
  }
  const auto steps_per_epoch =
      static_cast<std::int64_t>(epoch_batches(n, config.batch_size, config.seed, 0, min_batch).size());
  std::int64_t total = config.epochs * steps_per_epoch;
  if (config.max_steps > 0) total = std::min(total, config.max_steps);

  TrainLog log;
  std::int64_t step = options.start_step;
  while (step < total) {
    const std::int64_t epoch = step / steps_per_epoch;
    const auto batches = epoch_batches(n, config.batch_size, config.seed, epoch, min_batch);
    const auto start = Clock::now();
    double sum = 0.0;
    std::int64_t count = 0;
    for (auto b = static_cast<std::size_t>(step % steps_per_epoch); b < batches.size() && step < total; ++b) {
      const double loss = step_fn(batches[b]);
      check_finite(loss, step + 1);
      ++step;
      log.steps.push_back({step, loss});
      sum += loss;
      ++count;
      if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && options.on_checkpoint) {
        options.on_checkpoint(step);
      }
    }
    EpochRecord record;
    record.epoch = epoch + 1;
    record.mean_loss = count ? sum / static_cast<double>(count) : 0.0;
    record.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (val_fn) record.val_loss = val_fn();
    log.epochs.push_back(record);
    if (options.on_epoch) options.on_epoch(record);
  }
  return log;
}

Tensor params_tensor(Mode mode, const std::vector<const PairSample*>& samples) {
  const auto p = mode == Mode::D2P ? 2 : 4;
  Tensor out(Shape{static_cast<std::int64_t>(samples.size()), p});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto c = model::conditioning(mode, samples[i]->params_in, samples[i]->params_out);
    for (int k = 0; k < p; ++k) out[i * static_cast<std::size_t>(p) + static_cast<std::size_t>(k)] = static_cast<float>(c[static_cast<std::size_t>(k)]);
  }
  return out;
}

/// Eval-mode pyramids of a pair set's inputs, computed once when they fit the
/// cache budget.
class PyramidSource {
 public:
  PyramidSource(model::Autoencoder& ae, const PairSet& data, int workers) : ae_(ae), data_(data) {
    if (data.inputs.empty()) return;
    const auto per_input = pyramid_floats(data.inputs.front());
    if (per_input * data.inputs.size() > kPyramidCacheFloats) return;
    cache_.resize(data.inputs.size());
    parallel_for(data.inputs.size(), workers, [&](std::size_t i) {
      cache_[i] = ae_.encode(stack_images({&data_.inputs[i]}));
    });
  }

  std::vector<Tensor> batch(const std::vector<const PairSample*>& samples) const {
    if (cache_.empty()) {
      std::vector<const Tensor*> imgs;
      for (const auto* s : samples) imgs.push_back(&data_.inputs[s->input]);
      return ae_.encode(stack_images(imgs));
    }
    std::vector<Tensor> levels;
    for (std::size_t l = 0; l < cache_.front().size(); ++l) {
      std::vector<const Tensor*> parts;
      for (const auto* s : samples) parts.push_back(&cache_[s->input][l]);
      levels.push_back(stack_batch(parts));
    }
    return levels;
  }

 private:
  std::size_t pyramid_floats(const Tensor& input) const {
    const auto& c = ae_.config();
    std::size_t total = 0;
    auto size = input.dim(0);
    for (int i = 1; i <= c.depth; ++i) {
      size /= 2;
      total += static_cast<std::size_t>(c.channels(i) * size * size);
    }
    return total;
  }

  model::Autoencoder& ae_;
  const PairSet& data_;
  std::vector<std::vector<Tensor>> cache_;
};

double paramnet_batch_loss(model::ParamNet& pn, const std::vector<Tensor>& pyramid, const Tensor& params,
                           const Tensor& target, bool record, const std::vector<nn::Parameter<float>*>* params_list,
                           const nn::AdamConfig* adam) {
  nn::Tape<float> tape(record);
  std::vector<nn::Var<float>> levels;
  for (const auto& t : pyramid) levels.push_back(tape.constant(t));
  auto pred = pn.forward(tape, levels, params);
  auto loss = nn::mse(pred, tape.constant(target));
  const double value = loss.value()[0];
  if (record && std::isfinite(value)) {
    tape.backward(loss);
    nn::adam_step<float>(*params_list, *adam);
    zero_grads(*params_list);
  }
  return value;
}

void sort_unique(std::vector<std::string>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

void check_resolution(const model::AutoencoderConfig& config, std::int64_t resolution) {
  if (config.input_resolution() != resolution) {
    throw ConfigError("autoencoder expects " + std::to_string(config.input_resolution()) +
                      "x" + std::to_string(config.input_resolution()) + " images but the dataset has R=" +
                      std::to_string(resolution));
  }
}

fs::path step_path(const fs::path& output, std::int64_t step) {
  return fs::path(output.string() + ".step" + std::to_string(step));
}

void write_log(const fs::path& output, const TrainLog& log) {
  io::write_text_atomic(fs::path(output.string() + ".log.json"), to_json(log).dump(1) + "\n");
}

}  // namespace

Tensor to_model_units(const Tensor& image) {
  Tensor out = image;
  for (auto& v : out.data()) v = 2.0f * std::clamp(v, 0.0f, 1.0f) - 1.0f;
  return out;
}

Tensor from_model_units(const Tensor& image) {
  Tensor out = image;
  for (auto& v : out.data()) v = (std::clamp(v, -1.0f, 1.0f) + 1.0f) * 0.5f;
  return out;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must be in [0, 1)");
}

io::Json to_json(const TrainLog& log) {
  io::Json steps = io::Json::array();
  for (const auto& s : log.steps) steps.push_back({{"step", s.step}, {"loss", s.loss}});
  io::Json epochs = io::Json::array();
  for (const auto& e : log.epochs) {
    io::Json row = {{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"seconds", e.seconds}};
    if (e.val_loss) row["val_loss"] = *e.val_loss;
    epochs.push_back(std::move(row));
  }
  return {{"steps", std::move(steps)}, {"epochs", std::move(epochs)}};
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::int64_t batch_size,
                                                    std::uint64_t seed, std::int64_t epoch,
                                                    std::size_t min_batch) {
  const auto order = permutation(n, derive_seed(seed, {0x5eed, static_cast<std::uint64_t>(epoch)}));
  const auto bs = static_cast<std::size_t>(batch_size);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += bs) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + bs)));
  }
  if (batches.size() > 1 && batches.back().size() < min_batch) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    std::size_t n, double val_fraction, std::uint64_t seed) {
  auto order = permutation(n, derive_seed(seed, {0xa11d}));
  auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n > 0 ? n - 1 : 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

double reconstruction_mse(model::Autoencoder& ae, const std::vector<Tensor>& images, bool train_mode) {
  if (images.empty()) return 0.0;
  std::vector<const Tensor*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  const Tensor x = stack_images(ptrs);
  if (!train_mode) return nn::mse(ae.reconstruct(x), x);
  // Batch statistics without touching the stored running averages.
  auto copy = ae;
  nn::Tape<float> tape(false);
  auto in = tape.constant(x);
  auto y = copy.decode(tape, copy.encode(tape, in, nn::NormMode::Train), nn::NormMode::Train);
  return nn::mse(y.value(), x);
}

TrainLog fit_autoencoder(model::Autoencoder& ae, const std::vector<Tensor>& images,
                         const std::vector<Tensor>& val_images, const TrainConfig& config,
                         const FitOptions& options) {
  const auto params = ae.parameters();
  const auto adam = adam_config(config);
  zero_grads(params);
  auto step_fn = [&](const std::vector<std::size_t>& batch) {
    std::vector<const Tensor*> ptrs;
    for (auto i : batch) ptrs.push_back(&images[i]);
    nn::Tape<float> tape;
    auto x = tape.constant(stack_images(ptrs));
    auto y = ae.decode(tape, ae.encode(tape, x, nn::NormMode::Train), nn::NormMode::Train);
    auto loss = nn::mse(y, x);
    const double value = loss.value()[0];
    if (std::isfinite(value)) {
      tape.backward(loss);
      nn::adam_step<float>(params, adam);
      zero_grads(params);
    }
    return value;
  };
  std::function<std::optional<double>()> val_fn;
  if (!val_images.empty()) {
    val_fn = [&]() -> std::optional<double> { return reconstruction_mse(ae, val_images); };
  }
  return run_loop(images.size(), 2, config, options, step_fn, val_fn);
}

double paramnet_mse(model::ParamNet& pn, model::Autoencoder& ae, const PairSet& data) {
  if (data.samples.empty()) return 0.0;
  PyramidSource source(ae, data, 1);
  double sum = 0.0;
  constexpr std::size_t kChunk = 16;
  for (std::size_t i = 0; i < data.samples.size(); i += kChunk) {
    std::vector<const PairSample*> batch;
    std::vector<const Tensor*> targets;
    for (std::size_t k = i; k < std::min(data.samples.size(), i + kChunk); ++k) {
      batch.push_back(&data.samples[k]);
      targets.push_back(&data.samples[k].target);
    }
    const double loss = paramnet_batch_loss(pn, source.batch(batch), params_tensor(data.mode, batch),
                                            stack_images(targets), false, nullptr, nullptr);
    sum += loss * static_cast<double>(batch.size());
  }
  return sum / static_cast<double>(data.samples.size());
}

TrainLog fit_paramnet(model::ParamNet& pn, model::Autoencoder& ae, const PairSet& data,
                      const PairSet* val, const TrainConfig& config, const FitOptions& options) {
  if (pn.config().mode != data.mode) {
    throw ModeMismatch("Param-Net is " + to_string(pn.config().mode) + " but the data is " +
                       to_string(data.mode));
  }
  if (pn.config().depth != ae.config().depth) {
    throw ConfigError("Param-Net depth " + std::to_string(pn.config().depth) +
                      " differs from the autoencoder depth " + std::to_string(ae.config().depth));
  }
  if (data.mode == Mode::D2P) {
    for (const auto& s : data.samples) {
      if (s.params_in != kDefaultParams) {
        throw ModeMismatch("D2P sample " + std::to_string(s.id) + " has non-default input parameters");
      }
    }
  }
  ae.set_trainable(false);
  const auto params = pn.parameters();
  const auto adam = adam_config(config);
  zero_grads(params);
  PyramidSource source(ae, data, config.workers);
  auto step_fn = [&](const std::vector<std::size_t>& batch) {
    std::vector<const PairSample*> samples;
    std::vector<const Tensor*> targets;
    for (auto i : batch) {
      samples.push_back(&data.samples[i]);
      targets.push_back(&data.samples[i].target);
    }
    return paramnet_batch_loss(pn, source.batch(samples), params_tensor(data.mode, samples),
                               stack_images(targets), true, &params, &adam);
  };
  std::function<std::optional<double>()> val_fn;
  if (val && !val->samples.empty()) {
    val_fn = [&]() -> std::optional<double> { return paramnet_mse(pn, ae, *val); };
  }
  return run_loop(data.samples.size(), 1, config, options, step_fn, val_fn);
}

Tensor predict(model::Autoencoder& ae, model::ParamNet& pn, const Tensor& input, ScanParams params_in,
               ScanParams params_out, bool lenient) {
  const auto mode = pn.config().mode;
  const auto c = model::conditioning(mode, params_in, params_out, lenient);
  Tensor p(Shape{1, static_cast<std::int64_t>(c.size())});
  for (std::size_t k = 0; k < c.size(); ++k) p[k] = static_cast<float>(c[k]);
  const auto y = pn.predict(ae.encode(stack_images({&input})), p);
  return from_model_units(y).reshaped(input.shape());
}

std::vector<Tensor> load_split_images(const io::DatasetManifest& manifest, io::Split split) {
  std::vector<std::string> files;
  for (const auto* s : manifest.select(split)) {
    files.push_back(s->file_in);
    files.push_back(s->file_out);
  }
  sort_unique(files);
  std::vector<Tensor> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(io::read_slice(manifest.resolve(f)).pixels);
  return images;
}

PairSet load_pairs(const io::DatasetManifest& manifest, io::Split split) {
  PairSet set;
  set.mode = manifest.mode;
  const auto selected = manifest.select(split);
  std::vector<std::string> inputs;
  for (const auto* s : selected) inputs.push_back(s->file_in);
  sort_unique(inputs);
  for (const auto& f : inputs) set.inputs.push_back(io::read_slice(manifest.resolve(f)).pixels);
  for (const auto* s : selected) {
    PairSample p;
    p.input = static_cast<std::size_t>(std::lower_bound(inputs.begin(), inputs.end(), s->file_in) - inputs.begin());
    p.target = io::read_slice(manifest.resolve(s->file_out)).pixels;
    p.params_in = s->params_in;
    p.params_out = s->params_out;
    p.id = s->id;
    set.samples.push_back(std::move(p));
  }
  return set;
}

std::vector<Tensor> load_image_folder(const fs::path& folder, std::int64_t size) {
  if (!fs::is_directory(folder)) throw IoError("pretrain folder '" + folder.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(folder)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".mrs")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor> images;
  for (const auto& f : files) {
    Tensor img = f.extension() == ".pgm" ? io::decode_pgm(io::read_file(f)) : io::read_slice(f).pixels;
    if (img.dim(0) != size || img.dim(1) != size) img = phantom::resize_bilinear(img, size);
    images.push_back(std::move(img));
  }
  if (images.empty()) throw ConfigError("pretrain folder '" + folder.string() + "' holds no .pgm or .mrs images");
  return images;
}

TrainResult train_autoencoder(const AutoencoderJob& job) {
  const auto manifest = io::read_manifest(job.dataset);
  auto images = load_split_images(manifest, io::Split::Train);
  if (images.empty()) throw ConfigError("dataset '" + job.dataset.string() + "' has no training images");

  std::optional<model::Autoencoder> ae;
  std::int64_t start_step = 0;
  if (job.resume) {
    const auto ckpt = io::load_checkpoint(*job.resume);
    ae.emplace(model::autoencoder_from_checkpoint(ckpt));
    start_step = ckpt.metadata.value("step", std::int64_t{0});
  } else {
    ae.emplace(job.model, job.train.seed);
  }
  check_resolution(ae->config(), manifest.resolution);

  const auto [train_idx, val_idx] = split_validation(images.size(), job.train.val_fraction, job.train.seed);
  std::vector<Tensor> train_images, val_images;
  for (auto i : train_idx) train_images.push_back(images[i]);
  for (auto i : val_idx) val_images.push_back(images[i]);

  TrainLog log;
  if (job.pretrain_dir && !job.resume) {
    auto extra = load_image_folder(*job.pretrain_dir, manifest.resolution);
    TrainConfig pre = job.train;
    pre.epochs = job.pretrain_epochs;
    pre.max_steps = 0;
    pre.checkpoint_every = 0;
    log = fit_autoencoder(*ae, extra, {}, pre);
  }

  const std::int64_t offset = log.steps.empty() ? 0 : log.steps.back().step;
  FitOptions options;
  options.start_step = start_step;
  options.on_epoch = job.on_epoch;
  options.on_checkpoint = [&](std::int64_t step) {
    io::save_checkpoint(model::to_checkpoint(*ae, job.train.seed, offset + step), step_path(job.output, offset + step));
  };
  auto fine = fit_autoencoder(*ae, train_images, val_images, job.train, options);
  for (auto s : fine.steps) {
    s.step += offset;
    log.steps.push_back(s);
  }
  log.epochs.insert(log.epochs.end(), fine.epochs.begin(), fine.epochs.end());

  const std::int64_t final_step = log.steps.empty() ? start_step : log.steps.back().step;
  auto ckpt = model::to_checkpoint(*ae, job.train.seed, final_step);
  ckpt.metadata["deterministic"] = job.train.deterministic;
  io::save_checkpoint(ckpt, job.output);
  write_log(job.output, log);
  return {std::move(log), std::move(ckpt)};
}

TrainResult train_paramnet(const ParamNetJob& job) {
  if (job.autoencoder.empty() || !fs::exists(job.autoencoder)) {
    throw ConfigError("Param-Net training needs a trained autoencoder checkpoint (train-ae first); '" +
                      job.autoencoder.string() + "' not found");
  }
  const auto manifest = io::read_manifest(job.dataset);
  if (manifest.mode != job.mode) {
    throw ModeMismatch("dataset was built for " + to_string(manifest.mode) + " but " + to_string(job.mode) +
                       " training was requested");
  }
  auto ae = model::autoencoder_from_checkpoint(io::load_checkpoint(job.autoencoder));
  check_resolution(ae.config(), manifest.resolution);

  std::optional<model::ParamNet> pn;
  std::int64_t start_step = 0;
  if (job.resume) {
    const auto ckpt = io::load_checkpoint(*job.resume);
    pn.emplace(model::paramnet_from_checkpoint(ckpt, &job.mode));
    start_step = ckpt.metadata.value("step", std::int64_t{0});
  } else {
    pn.emplace(model::ParamNetConfig::matching(ae.config(), job.mode), job.train.seed);
  }

  const auto all = load_pairs(manifest, io::Split::Train);
  if (all.samples.empty()) throw ConfigError("dataset '" + job.dataset.string() + "' has no training samples");
  const auto [train_idx, val_idx] = split_validation(all.samples.size(), job.train.val_fraction, job.train.seed);
  PairSet train_set{all.mode, all.inputs, {}};
  PairSet val_set{all.mode, all.inputs, {}};
  for (auto i : train_idx) train_set.samples.push_back(all.samples[i]);
  for (auto i : val_idx) val_set.samples.push_back(all.samples[i]);

  FitOptions options;
  options.start_step = start_step;
  options.on_epoch = job.on_epoch;
  options.on_checkpoint = [&](std::int64_t step) {
    io::save_checkpoint(model::to_checkpoint(*pn, job.train.seed, step), step_path(job.output, step));
  };
  auto log = fit_paramnet(*pn, ae, train_set, &val_set, job.train, options);
  const std::int64_t final_step = log.steps.empty() ? start_step : log.steps.back().step;
  auto ckpt = model::to_checkpoint(*pn, job.train.seed, final_step);
  ckpt.metadata["deterministic"] = job.train.deterministic;
  ckpt.metadata["autoencoder_crc32"] = io::crc32(io::read_file(job.autoencoder));
  io::save_checkpoint(ckpt, job.output);
  write_log(job.output, log);
  return {std::move(log), std::move(ckpt)};
}

}  // namespace mrreparam::train
