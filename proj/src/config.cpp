#include "mrreparam/config.hpp"

#include <bit>

#include "mrreparam/parallel.hpp"

namespace mrreparam::config {

namespace {

template <typename T>
T get(const io::Json& config, const std::string& section, const std::string& key) {
  try {
    return config.at(section).at(key).get<T>();
  } catch (const io::Json::exception& e) {
    throw ConfigError("config value " + section + "." + key + ": " + e.what());
  }
}

template <typename T>
T get(const io::Json& config, const std::string& key) {
  try {
    return config.at(key).get<T>();
  } catch (const io::Json::exception& e) {
    throw ConfigError("config value " + key + ": " + e.what());
  }
}

io::Json train_defaults(std::int64_t epochs) {
  return {{"epochs", epochs},     {"batch_size", 8},       {"lr", 2e-4},
          {"beta1", 0.9},         {"beta2", 0.999},        {"adam_eps", 1e-8},
          {"checkpoint_every", 0}, {"max_steps", 0},       {"val_fraction", 0.1},
          {"pretrain_epochs", 1}};
}

}  // namespace

io::Json builtin_defaults() {
  io::Json out = {{"seed", 0},
          {"deterministic", false},
          {"workers", default_workers(1)},
          {"dataset",
           {{"mode", "d2p"},
            {"pairs", 200},
            {"slices", 24},
            {"resolution", 256},
            {"phantoms", 8},
            {"family", "standard"},
            {"noise_sigma", 0.0},
            {"train_fraction", sim::kTrainFraction}}},
          {"model", {{"depth", 0}, {"base_width", 16}, {"width_cap", 0}}},
          {"train_ae", train_defaults(20)},
          {"train_pn", train_defaults(20)}};
  out["train_pn"]["mode"] = "d2p";
  return out;
}

io::Json load_file(const std::filesystem::path& path) {
  io::Bytes bytes;
  try {
    bytes = io::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  auto doc = io::Json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw ConfigError("config file '" + path.string() + "' is not a JSON object");
  }
  return doc;
}

io::Json resolve(const io::Json& file_layer, const io::Json& cli_layer) {
  io::Json out = builtin_defaults();
  if (!file_layer.is_null()) out.merge_patch(file_layer);
  if (!cli_layer.is_null()) out.merge_patch(cli_layer);
  return out;
}

sim::DatasetConfig dataset_config(const io::Json& c) {
  sim::DatasetConfig d;
  try {
    d.mode = parse_mode(get<std::string>(c, "dataset", "mode"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  d.pairs = get<std::int64_t>(c, "dataset", "pairs");
  d.slices_per_pair = get<std::int64_t>(c, "dataset", "slices");
  d.resolution = get<std::int64_t>(c, "dataset", "resolution");
  d.noise_sigma = get<double>(c, "dataset", "noise_sigma");
  d.train_fraction = get<double>(c, "dataset", "train_fraction");
  d.family = get<std::string>(c, "dataset", "family");
  d.seed = get<std::uint64_t>(c, "seed");
  d.workers = get<int>(c, "workers");
  if (d.pairs < 1 || d.slices_per_pair < 1) throw ConfigError("pairs and slices must be >= 1");
  if (d.resolution < 2) throw ConfigError("resolution must be >= 2");
  if (d.noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  if (d.train_fraction < 0.0 || d.train_fraction > 1.0) throw ConfigError("train_fraction must be in [0, 1]");
  if (d.workers < 1) throw ConfigError("workers must be >= 1");
  return d;
}

model::AutoencoderConfig autoencoder_config(const io::Json& c, std::int64_t resolution) {
  model::AutoencoderConfig a;
  a.depth = get<int>(c, "model", "depth");
  a.base_width = get<int>(c, "model", "base_width");
  a.width_cap = get<int>(c, "model", "width_cap");
  if (a.depth == 0) {
    if (resolution < 2 || !std::has_single_bit(static_cast<std::uint64_t>(resolution))) {
      throw ConfigError("resolution " + std::to_string(resolution) + " is not a power of two");
    }
    a.depth = std::countr_zero(static_cast<std::uint64_t>(resolution));
  }
  a.resolution = static_cast<int>(resolution);
  a.validate();
  return a;
}

train::TrainConfig train_config(const io::Json& c, const std::string& section) {
  train::TrainConfig t;
  t.epochs = get<std::int64_t>(c, section, "epochs");
  t.batch_size = get<std::int64_t>(c, section, "batch_size");
  t.lr = get<double>(c, section, "lr");
  t.beta1 = get<double>(c, section, "beta1");
  t.beta2 = get<double>(c, section, "beta2");
  t.adam_eps = get<double>(c, section, "adam_eps");
  t.checkpoint_every = get<std::int64_t>(c, section, "checkpoint_every");
  t.max_steps = get<std::int64_t>(c, section, "max_steps");
  t.val_fraction = get<double>(c, section, "val_fraction");
  t.seed = get<std::uint64_t>(c, "seed");
  t.deterministic = get<bool>(c, "deterministic");
  t.workers = get<int>(c, "workers");
  t.validate();
  return t;
}

}  // namespace mrreparam::config
