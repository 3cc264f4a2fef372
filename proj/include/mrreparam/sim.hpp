#pragma once

// Closed-form spin-echo simulation and dataset construction.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrreparam/io.hpp"
#include "mrreparam/phantom.hpp"
#include "mrreparam/random.hpp"
#include "mrreparam/types.hpp"

namespace mrreparam::sim {

/// S = pd * (1 - exp(-tr/t1)) * exp(-te/t2); zero where t1 or t2 is zero.
double spin_echo_signal(double pd, double t1_s, double t2_s, double te_s, double tr_s);

/// Pixelwise signal of co-registered 2-D maps.
Tensor simulate_image(const Tensor& t1, const Tensor& t2, const Tensor& pd, ScanParams params);
Tensor simulate_image(const phantom::SliceMaps& maps, ScanParams params);

/// One draw: tr uniform on [1.2, 10] s, te log-uniform on [0.02, 1] s.
ScanParams sample_params(Rng& rng);
std::vector<ScanParams> sample_param_pairs(std::uint64_t seed, std::size_t n = 200);

/// 1500 of 4800 samples train; the remainder is the test split.
inline constexpr double kTrainFraction = 1500.0 / 4800.0;

struct SplitCounts {
  std::int64_t train = 0;
  std::int64_t test = 0;
};
SplitCounts split_counts(std::int64_t total, double train_fraction = kTrainFraction);

struct DatasetConfig {
  Mode mode = Mode::D2P;
  std::int64_t pairs = 200;
  std::int64_t slices_per_pair = 24;
  std::int64_t resolution = 256;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  double train_fraction = kTrainFraction;
  std::string family = "standard";
  int workers = 1;
};

/// Phantoms with per-index seeds derived from `seed`.
std::vector<phantom::PhantomVolume> make_phantoms(std::int64_t count, std::uint64_t seed,
                                                  phantom::Family family,
                                                  const phantom::VolumeShape& shape = {});

/// Simulates every (pair, slice) sample, writes slice files under `out_dir`
/// and `out_dir/manifest.json`, and returns the manifest. Pair p uses phantom
/// p mod |phantoms|. The split assigns shuffled pairs whole, so at most one
/// pair straddles the train/test boundary.
io::DatasetManifest build_dataset(const std::vector<phantom::PhantomVolume>& phantoms,
                                  const DatasetConfig& config, const std::filesystem::path& out_dir);

}  // namespace mrreparam::sim
