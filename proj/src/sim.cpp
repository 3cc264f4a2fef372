#include "mrreparam/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mrreparam/parallel.hpp"

namespace mrreparam::sim {

double spin_echo_signal(double pd, double t1_s, double t2_s, double te_s, double tr_s) {
  if (pd < 0.0 || pd > 1.0) throw InvalidArgument("proton density must be in [0,1], got " + std::to_string(pd));
  if (t1_s < 0.0 || t2_s < 0.0) throw InvalidArgument("relaxation times must be non-negative");
  if (!(te_s > 0.0) || !(tr_s > 0.0)) throw InvalidArgument("te and tr must be positive");
  if (t1_s == 0.0 || t2_s == 0.0) return 0.0;
  return pd * (1.0 - std::exp(-tr_s / t1_s)) * std::exp(-te_s / t2_s);
}

Tensor simulate_image(const Tensor& t1, const Tensor& t2, const Tensor& pd, ScanParams params) {
  if (t1.rank() != 2 || t1.shape() != t2.shape() || t1.shape() != pd.shape()) {
    throw InvalidArgument("simulate_image maps are not co-registered: " + shape_str(t1.shape()) +
                          ", " + shape_str(t2.shape()) + ", " + shape_str(pd.shape()));
  }
  Tensor out(t1.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(spin_echo_signal(pd[i], t1[i], t2[i], params.te_s, params.tr_s));
  }
  return out;
}

Tensor simulate_image(const phantom::SliceMaps& maps, ScanParams params) {
  return simulate_image(maps.t1, maps.t2, maps.pd, params);
}

ScanParams sample_params(Rng& rng) {
  ScanParams p;
  p.tr_s = rng.uniform(kTrMin, kTrMax);
  p.te_s = kTeMin * std::exp(rng.uniform() * std::log(kTeMax / kTeMin));
  return p;
}

std::vector<ScanParams> sample_param_pairs(std::uint64_t seed, std::size_t n) {
  if (n < 1) throw InvalidArgument("need at least one parameter pair");
  Rng rng(derive_seed(seed, {0x7061697273ULL}));
  std::vector<ScanParams> out(n);
  for (auto& p : out) p = sample_params(rng);
  return out;
}

SplitCounts split_counts(std::int64_t total, double train_fraction) {
  const auto train = static_cast<std::int64_t>(std::llround(static_cast<double>(total) * train_fraction));
  return {train, total - train};
}

std::vector<phantom::PhantomVolume> make_phantoms(std::int64_t count, std::uint64_t seed,
                                                  phantom::Family family,
                                                  const phantom::VolumeShape& shape) {
  std::vector<phantom::PhantomVolume> out;
  for (std::int64_t i = 0; i < count; ++i) {
    out.push_back(phantom::generate_phantom(derive_seed(seed, {0x70686dULL, static_cast<std::uint64_t>(i)}),
                                            shape, family));
  }
  return out;
}

namespace {

std::string numbered(const char* pattern, long a, long b = 0) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

Tensor render(const phantom::SliceMaps& maps, ScanParams params, std::int64_t resolution,
              double noise_sigma, std::uint64_t noise_seed) {
  Tensor img = simulate_image(maps, params);
  if (img.dim(0) != resolution || img.dim(1) != resolution) img = phantom::resize_bilinear(img, resolution);
  if (noise_sigma > 0.0) {
    Rng rng(noise_seed);
    for (auto& v : img.data()) v = static_cast<float>(v + noise_sigma * rng.normal());
  }
  for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

}  // namespace

io::DatasetManifest build_dataset(const std::vector<phantom::PhantomVolume>& phantoms,
                                  const DatasetConfig& config, const std::filesystem::path& out_dir) {
  if (phantoms.empty()) throw InvalidArgument("build_dataset needs at least one phantom");
  if (config.pairs < 1 || config.slices_per_pair < 1) throw InvalidArgument("pairs and slices must be >= 1");
  if (config.resolution < 2) throw InvalidArgument("resolution must be >= 2");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "samples", ec);
  if (!ec && config.mode == Mode::D2P) std::filesystem::create_directories(out_dir / "inputs", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  std::vector<std::vector<phantom::SliceMaps>> slices;
  for (const auto& ph : phantoms) slices.push_back(phantom::extract_axial_slices(ph, config.slices_per_pair));

  const auto outputs = sample_param_pairs(config.seed, static_cast<std::size_t>(config.pairs));
  const auto k = config.slices_per_pair;
  const auto total = config.pairs * k;

  io::DatasetManifest manifest;
  manifest.mode = config.mode;
  manifest.resolution = config.resolution;
  manifest.seed = config.seed;
  manifest.family = config.family;
  manifest.root = out_dir;
  manifest.samples.resize(static_cast<std::size_t>(total));

  std::vector<std::int64_t> pair_order(static_cast<std::size_t>(config.pairs));
  std::iota(pair_order.begin(), pair_order.end(), 0);
  Rng split_rng(derive_seed(config.seed, {0x73706c6974ULL}));
  for (std::size_t i = pair_order.size(); i > 1; --i) {
    std::swap(pair_order[i - 1], pair_order[split_rng.below(i)]);
  }
  const auto counts = split_counts(total, config.train_fraction);
  std::vector<io::Split> split_of(static_cast<std::size_t>(total), io::Split::Test);
  std::int64_t assigned = 0;
  for (auto p : pair_order) {
    for (std::int64_t s = 0; s < k; ++s, ++assigned) {
      if (assigned < counts.train) split_of[static_cast<std::size_t>(p * k + s)] = io::Split::Train;
    }
  }

  const auto n_phantoms = static_cast<std::int64_t>(phantoms.size());
  for (std::int64_t id = 0; id < total; ++id) {
    const auto p = id / k, s = id % k;
    const auto ph = p % n_phantoms;
    auto& row = manifest.samples[static_cast<std::size_t>(id)];
    row.id = id;
    row.pair_index = p;
    row.phantom_id = ph;
    row.slice_index = slices[static_cast<std::size_t>(ph)][static_cast<std::size_t>(s)].index;
    row.params_out = outputs[static_cast<std::size_t>(p)];
    row.split = split_of[static_cast<std::size_t>(id)];
    row.file_out = numbered("samples/%06ld_out.mrs", id);
    if (config.mode == Mode::D2P) {
      row.params_in = kDefaultParams;
      row.file_in = numbered("inputs/p%03ld_z%03ld.mrs", ph, row.slice_index);
    } else {
      Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(ph), static_cast<std::uint64_t>(row.slice_index),
                                        static_cast<std::uint64_t>(p), 0x696eULL}));
      row.params_in = sample_params(rng);
      row.file_in = numbered("samples/%06ld_in.mrs", id);
    }
  }

  auto noise_seed = [&](std::int64_t ph, std::int64_t slice_index, std::int64_t pair, std::uint64_t tag) {
    return derive_seed(config.seed, {static_cast<std::uint64_t>(ph), static_cast<std::uint64_t>(slice_index),
                                     static_cast<std::uint64_t>(pair), tag});
  };

  if (config.mode == Mode::D2P) {
    const auto jobs = static_cast<std::size_t>(n_phantoms * k);
    parallel_for(jobs, config.workers, [&](std::size_t j) {
      const auto ph = static_cast<std::int64_t>(j) / k, s = static_cast<std::int64_t>(j) % k;
      const auto& maps = slices[static_cast<std::size_t>(ph)][static_cast<std::size_t>(s)];
      const auto img = render(maps, kDefaultParams, config.resolution, config.noise_sigma,
                              noise_seed(ph, maps.index, -1, 0x696eULL));
      io::write_slice(out_dir / numbered("inputs/p%03ld_z%03ld.mrs", ph, maps.index), img, kDefaultParams);
    });
  }

  parallel_for(static_cast<std::size_t>(total), config.workers, [&](std::size_t id) {
    const auto& row = manifest.samples[id];
    const auto& maps = slices[static_cast<std::size_t>(row.phantom_id)][static_cast<std::size_t>(row.id % k)];
    const auto out = render(maps, row.params_out, config.resolution, config.noise_sigma,
                            noise_seed(row.phantom_id, row.slice_index, row.pair_index, 0x6f7574ULL));
    io::write_slice(out_dir / row.file_out, out, row.params_out);
    if (config.mode == Mode::P2P) {
      const auto in = render(maps, row.params_in, config.resolution, config.noise_sigma,
                             noise_seed(row.phantom_id, row.slice_index, row.pair_index, 0x696eULL));
      io::write_slice(out_dir / row.file_in, in, row.params_in);
    }
  });

  io::write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace mrreparam::sim
