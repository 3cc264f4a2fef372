// mrreparam command-line interface.
//
// Exit codes: 0 success, 1 usage error, 2 data/format/config error, 3 NaN loss.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mrreparam/config.hpp"
#include "mrreparam/eval.hpp"
#include "mrreparam/io.hpp"
#include "mrreparam/phantom.hpp"
#include "mrreparam/sim.hpp"
#include "mrreparam/train.hpp"

namespace fs = std::filesystem;
using namespace mrreparam;
using io::Json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

/// Options that map onto config keys. Only flags given on the command line
/// enter the CLI layer, so config-file values survive unless overridden.
class ConfigFlags {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app->add_option(flag, *value, help);
    entries_.push_back({opt, [value, pointer](Json& j) { j[Json::json_pointer(pointer)] = *value; }});
    return opt;
  }

  CLI::Option* add_flag(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    auto* opt = app->add_flag(flag, help);
    entries_.push_back({opt, [pointer](Json& j) { j[Json::json_pointer(pointer)] = true; }});
    return opt;
  }

  Json layer() const {
    Json j = Json::object();
    for (const auto& e : entries_) {
      if (e.option->count() > 0) e.apply(j);
    }
    return j;
  }

 private:
  struct Entry {
    CLI::Option* option;
    std::function<void(Json&)> apply;
  };
  std::vector<Entry> entries_;
};

void add_train_flags(ConfigFlags& flags, CLI::App* cmd, const std::string& section) {
  flags.add<std::int64_t>(cmd, "--epochs", section + "/epochs", "Epochs");
  flags.add<std::int64_t>(cmd, "--batch-size", section + "/batch_size", "Batch size");
  flags.add<double>(cmd, "--lr", section + "/lr", "Adam learning rate");
  flags.add<std::int64_t>(cmd, "--max-steps", section + "/max_steps", "Step cap (0: none)");
  flags.add<std::int64_t>(cmd, "--checkpoint-every", section + "/checkpoint_every", "Checkpoint period in steps");
  flags.add<double>(cmd, "--val-fraction", section + "/val_fraction", "Held-out share of the training split");
}

fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

void print_epoch(const char* phase, const train::EpochRecord& e) {
  std::fprintf(stderr, "[%s] epoch %lld  loss %.6g", phase, static_cast<long long>(e.epoch), e.mean_loss);
  if (e.val_loss) std::fprintf(stderr, "  val %.6g", *e.val_loss);
  std::fprintf(stderr, "  (%.1fs)\n", e.seconds);
}

Tensor scaled(const Tensor& map, double scale) {
  Tensor out = map;
  for (auto& v : out.data()) v = static_cast<float>(std::clamp(v / scale, 0.0, 1.0));
  return out;
}

io::ImageFormat format_for(const fs::path& path, const std::string& requested) {
  if (!requested.empty()) return io::parse_image_format(requested);
  return path.extension() == ".pgm" ? io::ImageFormat::Pgm : io::ImageFormat::Raw;
}

struct Models {
  model::Autoencoder ae;
  model::ParamNet pn;
};

Models load_models(const fs::path& ae_path, const fs::path& pn_path, const Mode* expected) {
  auto ae = model::autoencoder_from_checkpoint(io::load_checkpoint(ae_path));
  auto pn = model::paramnet_from_checkpoint(io::load_checkpoint(pn_path), expected);
  if (pn.config().depth != ae.config().depth) {
    throw ConfigError("Param-Net and autoencoder checkpoints have different depths");
  }
  return {std::move(ae), std::move(pn)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MR image re-parameterization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  ConfigFlags flags;

  std::string config_path;
  app.add_option("--config", config_path, "JSON configuration file");
  flags.add<std::uint64_t>(&app, "--seed", "/seed", "Random seed");
  flags.add_flag(&app, "--deterministic", "/deterministic", "Fixed batch and reduction order");
  flags.add<int>(&app, "--workers", "/workers", "Worker threads (default: MRREPARAM_WORKERS or 1)")
      ->check(CLI::PositiveNumber);

  // phantom
  auto* phantom_cmd = app.add_subcommand("phantom", "Generate phantoms and export slice maps");
  std::string phantom_out;
  std::int64_t phantom_count = 1, phantom_slices = 24;
  std::string phantom_family = "standard";
  phantom_cmd->add_option("--out", phantom_out, "Output directory")->required();
  phantom_cmd->add_option("--count", phantom_count, "Number of phantoms")->check(CLI::PositiveNumber);
  phantom_cmd->add_option("--slices", phantom_slices, "Axial slices per phantom")->check(CLI::PositiveNumber);
  phantom_cmd->add_option("--family", phantom_family, "standard or shifted");

  // dataset
  auto* dataset_cmd = app.add_subcommand("dataset", "Build a D2P or P2P dataset");
  std::string dataset_out;
  dataset_cmd->add_option("--out", dataset_out, "Output directory")->required();
  flags.add<std::string>(dataset_cmd, "--mode", "/dataset/mode", "d2p or p2p");
  flags.add<std::int64_t>(dataset_cmd, "--pairs", "/dataset/pairs", "Number of {TE,TR} pairs");
  flags.add<std::int64_t>(dataset_cmd, "--slices", "/dataset/slices", "Slices per pair");
  flags.add<std::int64_t>(dataset_cmd, "--resolution", "/dataset/resolution", "Image size R");
  flags.add<std::int64_t>(dataset_cmd, "--phantoms", "/dataset/phantoms", "Number of phantoms");
  flags.add<std::string>(dataset_cmd, "--family", "/dataset/family", "standard or shifted");
  flags.add<double>(dataset_cmd, "--noise", "/dataset/noise_sigma", "Additive Gaussian noise sigma");

  // train-ae
  auto* ae_cmd = app.add_subcommand("train-ae", "Phase 1: train the autoencoder");
  std::string ae_data, ae_out, ae_pretrain, ae_resume;
  ae_cmd->add_option("--data", ae_data, "Dataset directory or manifest")->required();
  ae_cmd->add_option("--out", ae_out, "Checkpoint path")->required();
  ae_cmd->add_option("--pretrain", ae_pretrain, "Folder of .pgm/.mrs images for pretraining");
  ae_cmd->add_option("--resume", ae_resume, "Resume from a checkpoint");
  flags.add<int>(ae_cmd, "--depth", "/model/depth", "Encoder depth (0: log2 R)");
  flags.add<int>(ae_cmd, "--width", "/model/base_width", "Channels of the first layer");
  flags.add<int>(ae_cmd, "--width-cap", "/model/width_cap", "Channel cap (0: 8x width)");
  add_train_flags(flags, ae_cmd, "/train_ae");
  flags.add<std::int64_t>(ae_cmd, "--pretrain-epochs", "/train_ae/pretrain_epochs", "Pretraining epochs");

  // train-pn
  auto* pn_cmd = app.add_subcommand("train-pn", "Phase 2: train Param-Net on a frozen autoencoder");
  std::string pn_data, pn_out, pn_ae, pn_resume;
  pn_cmd->add_option("--data", pn_data, "Dataset directory or manifest")->required();
  pn_cmd->add_option("--ae", pn_ae, "Autoencoder checkpoint")->required();
  pn_cmd->add_option("--out", pn_out, "Checkpoint path")->required();
  pn_cmd->add_option("--resume", pn_resume, "Resume from a checkpoint");
  flags.add<std::string>(pn_cmd, "--mode", "/train_pn/mode", "d2p or p2p");
  add_train_flags(flags, pn_cmd, "/train_pn");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Predict one slice at a target {TE,TR}");
  std::string infer_ae, infer_pn, infer_input, infer_out, infer_diff, infer_reference, infer_format;
  double infer_te = 0, infer_tr = 0;
  std::optional<double> infer_te_in, infer_tr_in;
  infer_cmd->add_option("--ae", infer_ae, "Autoencoder checkpoint")->required();
  infer_cmd->add_option("--pn", infer_pn, "Param-Net checkpoint")->required();
  infer_cmd->add_option("--input", infer_input, "Input slice file (.mrs)")->required();
  infer_cmd->add_option("--te", infer_te, "Target TE in seconds")->required();
  infer_cmd->add_option("--tr", infer_tr, "Target TR in seconds")->required();
  infer_cmd->add_option("--te-in", infer_te_in, "Input TE (default: slice header)");
  infer_cmd->add_option("--tr-in", infer_tr_in, "Input TR (default: slice header)");
  infer_cmd->add_option("--out", infer_out, "Prediction path")->required();
  infer_cmd->add_option("--format", infer_format, "pgm or raw (default: from extension)");
  infer_cmd->add_option("--diff", infer_diff, "Absolute difference map path");
  infer_cmd->add_option("--reference", infer_reference, "Ground-truth slice for the difference map");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a Param-Net on a test set");
  std::string eval_ae, eval_pn, eval_data, eval_out, eval_table, eval_testset, eval_split = "test";
  bool eval_baseline = false;
  eval_cmd->add_option("--ae", eval_ae, "Autoencoder checkpoint")->required();
  eval_cmd->add_option("--pn", eval_pn, "Param-Net checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset directory or manifest")->required();
  eval_cmd->add_option("--out", eval_out, "Report JSON path");
  eval_cmd->add_option("--table", eval_table, "Plain-text table path");
  eval_cmd->add_option("--testset", eval_testset, "Test-set label (default: dataset directory name)");
  eval_cmd->add_option("--split", eval_split, "test or train");
  eval_cmd->add_flag("--baseline", eval_baseline, "Also score the identity baseline");

  // export-figures
  auto* fig_cmd = app.add_subcommand("export-figures", "Export input/truth/prediction/difference images");
  std::string fig_ae, fig_pn, fig_data, fig_out, fig_split = "test";
  std::int64_t fig_count = 4;
  double fig_gain = 1.0;
  fig_cmd->add_option("--ae", fig_ae, "Autoencoder checkpoint")->required();
  fig_cmd->add_option("--pn", fig_pn, "Param-Net checkpoint")->required();
  fig_cmd->add_option("--data", fig_data, "Dataset directory or manifest")->required();
  fig_cmd->add_option("--out", fig_out, "Output directory")->required();
  fig_cmd->add_option("--count", fig_count, "Number of samples")->check(CLI::PositiveNumber);
  fig_cmd->add_option("--split", fig_split, "test or train");
  fig_cmd->add_option("--diff-gain", fig_gain, "Multiplier applied to difference maps")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    const Json file_layer = config_path.empty() ? Json() : config::load_file(config_path);
    const Json cfg = config::resolve(file_layer, flags.layer());
    const int workers = cfg.at("workers").get<int>();

    if (phantom_cmd->parsed()) {
      const auto family = phantom::parse_family(phantom_family);
      const auto seed = cfg.at("seed").get<std::uint64_t>();
      const auto volumes = sim::make_phantoms(phantom_count, seed, family);
      fs::create_directories(phantom_out);
      Json summary = Json::array();
      for (std::size_t p = 0; p < volumes.size(); ++p) {
        const auto& vol = volumes[p];
        const auto slices = phantom::extract_axial_slices(vol, phantom_slices);
        const fs::path dir = fs::path(phantom_out) / ("p" + std::to_string(p));
        fs::create_directories(dir);
        Json indices = Json::array();
        for (const auto& s : slices) {
          char name[32];
          std::snprintf(name, sizeof name, "z%03lld", static_cast<long long>(s.index));
          io::export_image(scaled(s.t1, phantom::kT1Max), dir / (std::string(name) + "_t1.pgm"), io::ImageFormat::Pgm);
          io::export_image(scaled(s.t2, phantom::kT2Max), dir / (std::string(name) + "_t2.pgm"), io::ImageFormat::Pgm);
          io::export_image(s.pd, dir / (std::string(name) + "_pd.pgm"), io::ImageFormat::Pgm);
          indices.push_back(s.index);
        }
        summary.push_back({{"phantom", p},
                           {"family", phantom::to_string(family)},
                           {"shape", {vol.shape.depth, vol.shape.height, vol.shape.width}},
                           {"tissue_fractions", phantom::tissue_fractions(vol)},
                           {"slice_indices", indices}});
      }
      io::write_text_atomic(fs::path(phantom_out) / "phantoms.json", Json{{"seed", seed}, {"phantoms", summary}}.dump(1) + "\n");
      std::cout << "wrote " << volumes.size() << " phantom(s) to " << phantom_out << "\n";
    } else if (dataset_cmd->parsed()) {
      auto dc = config::dataset_config(cfg);
      const auto family = phantom::parse_family(dc.family);
      const auto count = cfg.at("dataset").at("phantoms").get<std::int64_t>();
      const auto phantoms = sim::make_phantoms(count, dc.seed, family);
      const auto manifest = sim::build_dataset(phantoms, dc, dataset_out);
      const auto counts = sim::split_counts(static_cast<std::int64_t>(manifest.samples.size()), dc.train_fraction);
      std::cout << "wrote " << manifest.samples.size() << " samples (" << counts.train << " train, " << counts.test
                << " test) to " << dataset_out << "\n";
    } else if (ae_cmd->parsed()) {
      const auto manifest = io::read_manifest(manifest_path(ae_data), false);
      train::AutoencoderJob job;
      job.dataset = manifest_path(ae_data);
      job.output = ae_out;
      job.model = config::autoencoder_config(cfg, manifest.resolution);
      job.train = config::train_config(cfg, "train_ae");
      job.pretrain_epochs = cfg.at("train_ae").at("pretrain_epochs").get<std::int64_t>();
      if (!ae_pretrain.empty()) job.pretrain_dir = ae_pretrain;
      if (!ae_resume.empty()) job.resume = ae_resume;
      job.on_epoch = [](const train::EpochRecord& e) { print_epoch("ae", e); };
      const auto result = train::train_autoencoder(job);
      std::cout << "autoencoder: " << result.log.steps.size() << " steps, final loss " << result.log.last_loss()
                << ", checkpoint " << ae_out << "\n";
    } else if (pn_cmd->parsed()) {
      train::ParamNetJob job;
      job.dataset = manifest_path(pn_data);
      job.output = pn_out;
      job.autoencoder = pn_ae;
      job.mode = parse_mode(cfg.at("train_pn").at("mode").get<std::string>());
      job.train = config::train_config(cfg, "train_pn");
      if (!pn_resume.empty()) job.resume = pn_resume;
      job.on_epoch = [](const train::EpochRecord& e) { print_epoch("pn", e); };
      const auto result = train::train_paramnet(job);
      std::cout << "param-net (" << to_string(job.mode) << "): " << result.log.steps.size() << " steps, final loss "
                << result.log.last_loss() << ", checkpoint " << pn_out << "\n";
    } else if (infer_cmd->parsed()) {
      auto models = load_models(infer_ae, infer_pn, nullptr);
      const auto slice = io::read_slice(infer_input);
      ScanParams in = slice.params;
      if (infer_te_in) in.te_s = *infer_te_in;
      if (infer_tr_in) in.tr_s = *infer_tr_in;
      if (models.pn.config().mode == Mode::D2P && !infer_te_in && !infer_tr_in && in != kDefaultParams) {
        std::cerr << "warning: D2P model applied to an input acquired at TE=" << in.te_s << " TR=" << in.tr_s << "\n";
      }
      const ScanParams out{infer_te, infer_tr};
      const auto pred = train::predict(models.ae, models.pn, slice.pixels, in, out);
      const fs::path out_path(infer_out);
      const auto fmt = format_for(out_path, infer_format);
      if (fmt == io::ImageFormat::Raw) {
        io::write_slice(out_path, pred, out);
      } else {
        io::export_image(pred, out_path, fmt);
      }
      if (!infer_diff.empty()) {
        const Tensor reference = infer_reference.empty() ? slice.pixels : io::read_slice(infer_reference).pixels;
        const auto diff = eval::diff_map(eval::to_display_units(pred), eval::to_display_units(reference));
        io::export_image(scaled(diff, eval::kDisplayMax), infer_diff, format_for(infer_diff, ""));
        std::cout << "mae " << eval::mae(eval::to_display_units(pred), eval::to_display_units(reference)) << "\n";
      }
      std::cout << "wrote " << infer_out << "\n";
    } else if (eval_cmd->parsed()) {
      const auto path = manifest_path(eval_data);
      const auto manifest = io::read_manifest(path);
      const auto split = io::parse_split(eval_split);
      auto models = load_models(eval_ae, eval_pn, &manifest.mode);
      const std::string testset =
          eval_testset.empty() ? fs::absolute(path).parent_path().filename().string() : eval_testset;
      eval::Predictor predictor = [&](const io::ManifestSample& s, const Tensor& input) {
        return train::predict(models.ae, models.pn, input, s.params_in, s.params_out, true);
      };
      std::vector<eval::EvalReport> reports;
      reports.push_back(eval::evaluate(manifest, models.pn.config().mode, predictor, "paramnet", testset, workers, split));
      if (eval_baseline) {
        reports.push_back(eval::evaluate(manifest, manifest.mode, eval::identity_predictor(), "identity", testset,
                                         workers, split));
      }
      const auto table = eval::format_table(reports);
      std::cout << table;
      if (!eval_out.empty()) {
        Json doc = eval::to_json(reports.front());
        if (reports.size() > 1) doc["baseline"] = eval::to_json(reports.back());
        io::write_text_atomic(eval_out, doc.dump(1) + "\n");
      }
      if (!eval_table.empty()) io::write_text_atomic(eval_table, table);
    } else if (fig_cmd->parsed()) {
      const auto manifest = io::read_manifest(manifest_path(fig_data));
      auto models = load_models(fig_ae, fig_pn, &manifest.mode);
      const auto samples = manifest.select(io::parse_split(fig_split));
      fs::create_directories(fig_out);
      const auto n = std::min<std::size_t>(static_cast<std::size_t>(fig_count), samples.size());
      for (std::size_t i = 0; i < n; ++i) {
        const auto& s = *samples[i];
        const auto input = io::read_slice(manifest.resolve(s.file_in)).pixels;
        const auto truth = io::read_slice(manifest.resolve(s.file_out)).pixels;
        const auto pred = train::predict(models.ae, models.pn, input, s.params_in, s.params_out, true);
        auto diff = eval::diff_map(pred, truth);
        for (auto& v : diff.data()) v = static_cast<float>(std::min(1.0, v * fig_gain));
        char stem[32];
        std::snprintf(stem, sizeof stem, "%06lld", static_cast<long long>(s.id));
        const fs::path base = fs::path(fig_out) / stem;
        io::export_image(input, base.string() + "_input.pgm", io::ImageFormat::Pgm);
        io::export_image(truth, base.string() + "_truth.pgm", io::ImageFormat::Pgm);
        io::export_image(pred, base.string() + "_pred.pgm", io::ImageFormat::Pgm);
        io::export_image(diff, base.string() + "_diff.pgm", io::ImageFormat::Pgm);
        const auto a = eval::to_display_units(pred);
        const auto b = eval::to_display_units(truth);
        std::printf("%s  te_out=%.4f tr_out=%.3f  psnr %.2f dB  mae %.3f\n", stem, s.params_out.te_s,
                    s.params_out.tr_s, eval::psnr(a, b), eval::mae(a, b));
      }
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
