// Acceptance criteria runner. With no arguments every criterion runs; pass
// criterion numbers (1-8) to run a subset. Prints one PASS/FAIL line each and
// exits non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "layer_cases.hpp"
#include "mrreparam/eval.hpp"
#include "mrreparam/model/paramnet.hpp"
#include "mrreparam/sim.hpp"
#include "mrreparam/train.hpp"
#include "test_util.hpp"

using namespace mrreparam;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[fail] " << what << "; ";
    }
  }
  template <typename V>
  void note(const std::string& key, const V& value) {
    detail << key << "=" << value << " ";
  }
};

struct Criterion {
  int number;
  std::string name;
  double budget_s;
  std::function<void(Outcome&)> run;
};

// ---- 1. simulator exactness ------------------------------------------------

double closed_form(double pd, double t1, double t2, double te, double tr) {
  if (t1 == 0.0 || t2 == 0.0) return 0.0;
  return pd * (1.0 - 1.0 / std::exp(tr / t1)) / std::exp(te / t2);
}

void simulator_exactness(Outcome& out) {
  const auto palette = phantom::default_palette();
  std::vector<phantom::TissueClass> tissues;
  for (const auto& t : palette)
    if (t.t1_s > 0.0) tissues.push_back(t);
  out.require(tissues.size() == 5, "five non-background tissues");
  std::vector<double> te(10), tr(10);
  for (int i = 0; i < 10; ++i) {
    te[i] = kTeMin * std::pow(kTeMax / kTeMin, i / 9.0);
    tr[i] = kTrMin + (kTrMax - kTrMin) * i / 9.0;
  }
  double max_err = 0.0;
  bool monotone = true;
  for (const auto& t : tissues) {
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) {
        const double s = sim::spin_echo_signal(t.pd, t.t1_s, t.t2_s, te[i], tr[j]);
        max_err = std::max(max_err, std::abs(s - closed_form(t.pd, t.t1_s, t.t2_s, te[i], tr[j])));
        if (i > 0 && !(s < sim::spin_echo_signal(t.pd, t.t1_s, t.t2_s, te[i - 1], tr[j]))) monotone = false;
        if (j > 0 && !(s > sim::spin_echo_signal(t.pd, t.t1_s, t.t2_s, te[i], tr[j - 1]))) monotone = false;
      }
  }
  out.note("max_abs_err", max_err);
  out.require(max_err < 1e-7, "closed-form agreement < 1e-7");
  out.require(monotone, "decreasing in te and increasing in tr");
}

// ---- 2. gradient suite -----------------------------------------------------

void gradient_suite(Outcome& out) {
  double worst = 0.0;
  std::string worst_name;
  const auto cases = testutil::layer_cases();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const auto check = testutil::gradient_check<double>(c.f64, c.f64, testutil::case_inputs(c, 500 + i), 13, 100000);
    const double err = check.max_error();
    if (err > worst) {
      worst = err;
      worst_name = c.name;
    }
    out.require(err < 1e-5, c.name + " relative error " + std::to_string(err));
  }
  out.note("layers", cases.size());
  out.note("worst_layer", worst_name);
  out.note("worst_rel_err", worst);
}

// ---- 3. shape ledger -------------------------------------------------------

void shape_ledger(Outcome& out) {
  for (const auto& [depth, r] : {std::pair{6, 64}, std::pair{8, 256}}) {
    model::AutoencoderConfig ac;
    ac.depth = depth;
    ac.base_width = 4;
    ac.resolution = r;
    model::Autoencoder ae(ac, 1);
    const auto pyramid = ae.encode(testutil::random_tensor<float>({2, 1, r, r}, 3, -1.0, 1.0));
    bool ok = static_cast<int>(pyramid.size()) == depth;
    for (int i = 1; ok && i <= depth; ++i) {
      const auto& s = pyramid[static_cast<std::size_t>(i - 1)].shape();
      ok = s[2] == r >> i && s[3] == r >> i;
    }
    out.require(ok, "pyramid sizes R/2^i at D=" + std::to_string(depth));

    for (Mode mode : {Mode::D2P, Mode::P2P}) {
      model::ParamNet pn(model::ParamNetConfig::matching(ac, mode), 2);
      int skips = 0, blocks = 0;
      bool skip_ok = true, block_ok = true;
      model::ForwardObserver obs;
      obs.on_skip = [&](int block, const Shape& up, const Shape& skip) {
        ++skips;
        skip_ok = skip_ok && up[2] == skip[2] && up[3] == skip[3] &&
                  skip == pyramid[static_cast<std::size_t>(depth - block - 1)].shape();
      };
      obs.on_block = [&](int block, const Shape& s) {
        ++blocks;
        block_ok = block_ok && s[2] == (std::int64_t{1} << block) && s[3] == (std::int64_t{1} << block);
      };
      nn::Tape<float> tape(false);
      std::vector<nn::Var<float>> levels;
      for (const auto& t : pyramid) levels.push_back(tape.constant(t));
      Tensor params(Shape{2, pn.config().param_channels()}, 0.25f);
      const auto y = pn.forward(tape, levels, params, &obs).value();
      const std::string tag = " at D=" + std::to_string(depth) + " " + to_string(mode);
      out.require(blocks == depth && block_ok, "block outputs 2^i" + tag);
      out.require(skips == depth - 1 && skip_ok, "skip sizes match level D-i" + tag);
      out.require(y.shape() == (Shape{2, 1, r, r}), "output R x R" + tag);
    }
  }
}

// ---- 4. overfit smoke tests ------------------------------------------------

constexpr std::int64_t kOverfitRes = 64;

std::vector<phantom::SliceMaps> overfit_slices() {
  const auto vol = phantom::generate_phantom(21);
  return phantom::extract_axial_slices(vol, 8);
}

Tensor desk_image(const phantom::SliceMaps& maps, ScanParams p) {
  return phantom::resize_bilinear(sim::simulate_image(maps, p), kOverfitRes);
}

void overfit(Outcome& out) {
  const auto slices = overfit_slices();
  std::vector<Tensor> images;
  for (const auto& s : slices) images.push_back(desk_image(s, kDefaultParams));

  model::AutoencoderConfig ac;
  ac.depth = 6;
  ac.base_width = 8;
  ac.resolution = kOverfitRes;
  model::Autoencoder ae(ac, 1);
  train::TrainConfig tc;
  tc.batch_size = 8;
  tc.lr = 3e-3;
  tc.seed = 1;
  tc.val_fraction = 0.0;
  tc.max_steps = 2000;
  tc.epochs = 2000;
  const auto ae_log = train::fit_autoencoder(ae, images, {}, tc);
  const double ae_mse = train::reconstruction_mse(ae, images);
  out.note("ae_steps", ae_log.steps.size());
  out.note("ae_mse", ae_mse);
  out.note("ae_mse_batch_stats", train::reconstruction_mse(ae, images, true));
  out.require(static_cast<std::int64_t>(ae_log.steps.size()) <= 2000, "autoencoder within 2000 steps");
  out.require(ae_mse < 1e-3, "autoencoder memorizes 8 slices to MSE < 1e-3");

  train::PairSet pairs;
  pairs.mode = Mode::D2P;
  pairs.inputs = images;
  const auto targets = sim::sample_param_pairs(5, slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) {
    pairs.samples.push_back({i, desk_image(slices[i], targets[i]), kDefaultParams, targets[i],
                             static_cast<std::int64_t>(i)});
  }
  model::ParamNet pn(model::ParamNetConfig::matching(ac, Mode::D2P), 2);
  tc.lr = 1e-3;
  tc.max_steps = 3000;
  tc.epochs = 3000;
  const auto pn_log = train::fit_paramnet(pn, ae, pairs, nullptr, tc);
  const double pn_mse = train::paramnet_mse(pn, ae, pairs);
  out.note("pn_steps", pn_log.steps.size());
  out.note("pn_mse", pn_mse);
  out.require(static_cast<std::int64_t>(pn_log.steps.size()) <= 3000, "Param-Net within 3000 steps");
  out.require(pn_mse < 1e-3, "Param-Net memorizes 8 pairs to MSE < 1e-3");
}

// ---- 5. desk-scale trend reproduction --------------------------------------

struct DeskBudget {
  std::int64_t ae_epochs = 20;
  std::int64_t pn_epochs = 100;
  std::int64_t batch_size = 8;
  double lr = 1e-3;
};

void desk_trend(Outcome& out) {
  const DeskBudget budget;
  const auto root = testutil::scratch_dir("acceptance_desk");
  sim::DatasetConfig dc;
  dc.pairs = 40;
  dc.slices_per_pair = 24;
  dc.resolution = 64;
  dc.seed = 2024;
  const auto standard = sim::make_phantoms(8, dc.seed, phantom::Family::Standard);
  const auto shifted = sim::make_phantoms(8, dc.seed, phantom::Family::Shifted);
  std::map<std::string, io::DatasetManifest> sets;
  for (Mode mode : {Mode::D2P, Mode::P2P}) {
    dc.mode = mode;
    sets[to_string(mode)] = sim::build_dataset(standard, dc, root / to_string(mode));
    sets[to_string(mode) + "_shift"] = sim::build_dataset(shifted, dc, root / (to_string(mode) + "_shift"));
  }
  const auto& d2p = sets.at("d2p");
  const auto& p2p = sets.at("p2p");
  out.require(d2p.select(io::Split::Train).size() == 300 && d2p.select(io::Split::Test).size() == 660,
              "desk split 300/660");

  // One autoencoder serves both variants, trained on the union of their
  // training images.
  auto images = train::load_split_images(d2p, io::Split::Train);
  for (auto& img : train::load_split_images(p2p, io::Split::Train)) images.push_back(std::move(img));
  model::AutoencoderConfig ac;
  ac.depth = 6;
  ac.base_width = 8;
  ac.resolution = 64;
  model::Autoencoder ae(ac, 1);
  train::TrainConfig tc;
  tc.batch_size = budget.batch_size;
  tc.lr = budget.lr;
  tc.seed = 3;
  tc.val_fraction = 0.0;
  tc.epochs = budget.ae_epochs;
  train::fit_autoencoder(ae, images, {}, tc);
  out.note("ae_mse", train::reconstruction_mse(ae, images));

  tc.epochs = budget.pn_epochs;
  std::map<std::string, double> psnr;
  for (Mode mode : {Mode::D2P, Mode::P2P}) {
    const auto key = to_string(mode);
    model::ParamNet pn(model::ParamNetConfig::matching(ac, mode), 4);
    const auto log = train::fit_paramnet(pn, ae, train::load_pairs(sets.at(key), io::Split::Train), nullptr, tc);
    out.note(key + "_steps", log.steps.size());
    eval::Predictor predictor = [&](const io::ManifestSample& s, const Tensor& input) {
      return train::predict(ae, pn, input, s.params_in, s.params_out, true);
    };
    psnr[key] = eval::evaluate(sets.at(key), mode, predictor, "paramnet", "in").mean_psnr;
    psnr[key + "_shift"] = eval::evaluate(sets.at(key + "_shift"), mode, predictor, "paramnet", "shift").mean_psnr;
  }
  psnr["identity"] = eval::evaluate(d2p, Mode::D2P, eval::identity_predictor(), "identity", "in").mean_psnr;
  for (const auto& [k, v] : psnr) out.note("psnr_" + k, v);

  out.require(psnr["d2p"] >= psnr["p2p"], "(a) D2P >= P2P in distribution");
  out.require(psnr["d2p"] - psnr["identity"] >= 3.0, "(b) D2P beats identity by >= 3 dB");
  out.require(psnr["d2p_shift"] < psnr["d2p"] && psnr["p2p_shift"] < psnr["p2p"], "(c) both drop under shift");
  out.require(psnr["d2p_shift"] >= psnr["p2p_shift"], "(c) D2P >= P2P under shift");
  fs::remove_all(root);
}

// ---- 6. frozen weights -----------------------------------------------------

void frozen_weights(Outcome& out) {
  const auto root = testutil::scratch_dir("acceptance_frozen");
  sim::DatasetConfig dc;
  dc.pairs = 6;
  dc.slices_per_pair = 4;
  dc.resolution = 16;
  const auto phantoms = sim::make_phantoms(2, 6, phantom::Family::Standard, phantom::VolumeShape{32, 24, 24});
  sim::build_dataset(phantoms, dc, root);

  train::AutoencoderJob aj;
  aj.dataset = root / "manifest.json";
  aj.output = root / "ae.mrpt";
  aj.model.depth = 4;
  aj.model.base_width = 4;
  aj.train.epochs = 2;
  aj.train.batch_size = 4;
  train::train_autoencoder(aj);
  const auto before = io::read_file(aj.output);

  train::ParamNetJob pj;
  pj.dataset = aj.dataset;
  pj.autoencoder = aj.output;
  pj.output = root / "pn.mrpt";
  pj.train.epochs = 3;
  pj.train.batch_size = 4;
  const auto result = train::train_paramnet(pj);
  const auto after = io::read_file(aj.output);
  out.note("pn_steps", result.log.steps.size());
  out.note("ae_bytes", before.size());
  out.require(!result.log.steps.empty(), "phase-2 training ran");
  out.require(before == after, "autoencoder checkpoint bytes unchanged");
  fs::remove_all(root);
}

// ---- 7. dataset protocol ---------------------------------------------------

std::map<std::string, io::Bytes> tree_bytes(const fs::path& root) {
  std::map<std::string, io::Bytes> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  }
  return out;
}

void dataset_protocol(Outcome& out) {
  const auto root = testutil::scratch_dir("acceptance_dataset");
  const auto phantoms = sim::make_phantoms(2, 8, phantom::Family::Standard, phantom::VolumeShape{48, 32, 32});
  sim::DatasetConfig dc;  // canonical 200 pairs x 24 slices; small images keep it quick
  dc.resolution = 8;
  dc.noise_sigma = 0.01;
  std::vector<std::map<std::string, io::Bytes>> trees;
  for (int workers : {1, 2, 4}) {
    dc.workers = workers;
    const auto dir = root / ("w" + std::to_string(workers));
    const auto m = sim::build_dataset(phantoms, dc, dir);
    if (workers == 1) {
      const auto train_n = m.select(io::Split::Train).size();
      const auto test_n = m.select(io::Split::Test).size();
      out.note("samples", m.samples.size());
      out.note("split", std::to_string(train_n) + "/" + std::to_string(test_n));
      out.require(m.samples.size() == 4800 && train_n == 1500 && test_n == 3300, "4800 samples split 1500/3300");
    }
    trees.push_back(tree_bytes(dir));
  }
  out.require(trees[0] == trees[1] && trees[0] == trees[2], "byte-identical at 1, 2 and 4 workers");

  const auto draws = sim::sample_param_pairs(17, 10000);
  std::vector<double> te;
  for (const auto& p : draws) te.push_back(p.te_s);
  std::nth_element(te.begin(), te.begin() + 5000, te.end());
  const double median = te[5000];
  out.note("te_median", median);
  out.require(std::abs(median - 0.1414) <= 0.15 * 0.1414, "TE median within 15% of 0.1414 s");
  fs::remove_all(root);
}

// ---- 8. persistence --------------------------------------------------------

void persistence(Outcome& out) {
  const auto root = testutil::scratch_dir("acceptance_persist");
  model::AutoencoderConfig ac;
  ac.depth = 4;
  ac.base_width = 4;
  model::Autoencoder ae(ac, 9);
  model::ParamNet pn(model::ParamNetConfig::matching(ac, Mode::D2P), 10);

  for (const auto& [name, ckpt] : {std::pair{"ae", model::to_checkpoint(ae)}, std::pair{"pn", model::to_checkpoint(pn)}}) {
    const auto path = root / (std::string(name) + ".mrpt");
    io::save_checkpoint(ckpt, path);
    const auto back = io::load_checkpoint(path);
    bool same = back.tensors.size() == ckpt.tensors.size();
    for (std::size_t i = 0; same && i < ckpt.tensors.size(); ++i) {
      const auto& a = ckpt.tensors[i].second.data();
      const auto& b = back.tensors[i].second.data();
      same = ckpt.tensors[i].first == back.tensors[i].first && a.size() == b.size() &&
             std::equal(a.begin(), a.end(), b.begin(),
                        [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); });
    }
    out.require(same, std::string(name) + " checkpoint tensors bitwise equal");
    out.require(io::encode_checkpoint(back) == io::read_file(path), std::string(name) + " re-encoding identical");

    auto bytes = io::read_file(path);
    bytes[bytes.size() - 3] ^= 0x10;
    bool detected = false;
    try {
      io::decode_checkpoint(bytes);
    } catch (const FormatError&) {
      detected = true;
    }
    out.require(detected, std::string(name) + " corrupted checkpoint rejected");
  }

  auto image = testutil::random_tensor<float>({13, 11}, 4, 0.0, 1.0);
  image[0] = -0.0f;
  image[1] = std::numeric_limits<float>::denorm_min();
  io::write_slice(root / "s.mrs", image, {0.07, 3.3});
  const auto slice = io::read_slice(root / "s.mrs");
  out.require(io::encode_slice(slice.pixels, slice.params) == io::read_file(root / "s.mrs") &&
                  std::bit_cast<std::uint32_t>(slice.pixels[0]) == std::bit_cast<std::uint32_t>(-0.0f),
              "slice round-trip bitwise");
  auto sbytes = io::read_file(root / "s.mrs");
  sbytes.resize(sbytes.size() - 5);
  bool truncated = false;
  try {
    io::decode_slice(sbytes);
  } catch (const FormatError&) {
    truncated = true;
  }
  out.require(truncated, "truncated slice rejected");

  sim::DatasetConfig dc;
  dc.pairs = 5;
  dc.slices_per_pair = 4;
  dc.resolution = 16;
  const auto phantoms = sim::make_phantoms(1, 4, phantom::Family::Standard, phantom::VolumeShape{32, 24, 24});
  const auto m = sim::build_dataset(phantoms, dc, root / "data");
  eval::Predictor predictor = [&](const io::ManifestSample& s, const Tensor& input) {
    return train::predict(ae, pn, input, s.params_in, s.params_out, true);
  };
  const auto report = eval::evaluate(m, Mode::D2P, predictor, "paramnet", "t");
  const auto doc = io::Json::parse(eval::to_json(report).dump());
  const auto back = eval::report_from_json(doc);
  double sp = 0.0, sm = 0.0;
  for (const auto& row : back.rows) {
    sp += row.psnr;
    sm += row.mae;
  }
  const double n = static_cast<double>(back.rows.size());
  out.note("rows", back.rows.size());
  out.require(n > 0 && std::abs(sp / n - back.mean_psnr) < 1e-9 && std::abs(sm / n - back.mean_mae) < 1e-9,
              "report means recomputable from rows to 1e-9");
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "simulator exactness", 1.0, simulator_exactness},
      {2, "gradient suite", 120.0, gradient_suite},
      {3, "shape ledger", 1.0, shape_ledger},
      {4, "overfit smoke tests", 900.0, overfit},
      {5, "desk-scale trend reproduction", 7200.0, desk_trend},
      {6, "frozen-weights contract", 0.0, frozen_weights},
      {7, "dataset protocol", 0.0, dataset_protocol},
      {8, "persistence", 0.0, persistence},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.number)) continue;
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(out);
    } catch (const std::exception& e) {
      out.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0) out.require(secs < c.budget_s, "runtime under " + std::to_string(c.budget_s) + " s");
    failures += !out.pass;
    std::printf("criterion %d %-30s %s  (%.2fs)  %s\n", c.number, c.name.c_str(), out.pass ? "PASS" : "FAIL", secs,
                out.detail.str().c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
