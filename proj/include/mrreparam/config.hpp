#pragma once

// Layered run configuration: built-in defaults, then a JSON config file, then
// explicitly given command-line flags. Each layer is applied as a JSON merge
// patch. MRREPARAM_WORKERS replaces the built-in worker default.

#include <filesystem>
#include <string>

#include "mrreparam/io.hpp"
#include "mrreparam/model/autoencoder.hpp"
#include "mrreparam/sim.hpp"
#include "mrreparam/train.hpp"

namespace mrreparam::config {

io::Json builtin_defaults();
/// Throws ConfigError for unreadable or malformed files.
io::Json load_file(const std::filesystem::path& path);
io::Json resolve(const io::Json& file_layer, const io::Json& cli_layer);

sim::DatasetConfig dataset_config(const io::Json& config);
/// A depth of 0 selects log2(resolution).
model::AutoencoderConfig autoencoder_config(const io::Json& config, std::int64_t resolution);
/// `section` is "train_ae" or "train_pn".
train::TrainConfig train_config(const io::Json& config, const std::string& section);

}  // namespace mrreparam::config
