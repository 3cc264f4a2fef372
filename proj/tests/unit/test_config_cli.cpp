#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>

#include "mrreparam/config.hpp"
#include "mrreparam/eval.hpp"
#include "test_util.hpp"

using namespace mrreparam;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " \"" MRREPARAM_CLI_PATH "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::map<std::string, io::Bytes> tree_bytes(const fs::path& root) {
  std::map<std::string, io::Bytes> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  }
  return out;
}

}  // namespace

TEST(Config, CliOverridesFileOverridesDefault) {
  const io::Json file = {{"train_ae", {{"lr", 1e-3}, {"batch_size", 4}}}, {"seed", 5}};
  const io::Json cli = {{"train_ae", {{"lr", 5e-4}}}};
  const auto c = config::resolve(file, cli);
  const auto t = config::train_config(c, "train_ae");
  EXPECT_EQ(t.lr, 5e-4);
  EXPECT_EQ(t.batch_size, 4);
  EXPECT_EQ(t.seed, 5u);
  EXPECT_EQ(t.epochs, config::builtin_defaults()["train_ae"]["epochs"].get<std::int64_t>());
  const auto d = config::dataset_config(config::resolve(nullptr, nullptr));
  EXPECT_EQ(d.pairs, 200);
  EXPECT_EQ(d.slices_per_pair, 24);
  EXPECT_EQ(d.resolution, 256);
}

TEST(Config, LoadFileErrors) {
  const auto dir = testutil::scratch_dir("config_files");
  EXPECT_THROW(config::load_file(dir / "missing.json"), ConfigError);
  io::write_text_atomic(dir / "broken.json", "{ not json");
  EXPECT_THROW(config::load_file(dir / "broken.json"), ConfigError);
  io::write_text_atomic(dir / "array.json", "[1, 2]");
  EXPECT_THROW(config::load_file(dir / "array.json"), ConfigError);
  io::write_text_atomic(dir / "ok.json", R"({"dataset": {"pairs": 7}})");
  EXPECT_EQ(config::dataset_config(config::resolve(config::load_file(dir / "ok.json"), nullptr)).pairs, 7);
  fs::remove_all(dir);
}

TEST(Config, InvalidValuesAreConfigErrors) {
  auto c = config::resolve(nullptr, {{"dataset", {{"mode", "x2y"}}}});
  EXPECT_THROW(config::dataset_config(c), ConfigError);
  c = config::resolve(nullptr, {{"dataset", {{"pairs", "many"}}}});
  EXPECT_THROW(config::dataset_config(c), ConfigError);
  c = config::resolve(nullptr, {{"train_pn", {{"lr", -1.0}}}});
  EXPECT_THROW(config::train_config(c, "train_pn"), ConfigError);
}

TEST(Config, AutoencoderDepthDefaultsToLog2Resolution) {
  const auto c = config::resolve(nullptr, nullptr);
  EXPECT_EQ(config::autoencoder_config(c, 256).depth, 8);
  EXPECT_EQ(config::autoencoder_config(c, 64).depth, 6);
  EXPECT_THROW(config::autoencoder_config(c, 48), ConfigError);
  const auto fixed = config::resolve(nullptr, {{"model", {{"depth", 6}}}});
  EXPECT_EQ(config::autoencoder_config(fixed, 64).depth, 6);
  EXPECT_THROW(config::autoencoder_config(fixed, 256), ConfigError);
}

TEST(Config, WorkersEnvironmentDefault) {
  ::setenv("MRREPARAM_WORKERS", "3", 1);
  EXPECT_EQ(config::builtin_defaults()["workers"].get<int>(), 3);
  EXPECT_EQ(config::resolve(nullptr, {{"workers", 2}})["workers"].get<int>(), 2);
  ::unsetenv("MRREPARAM_WORKERS");
  EXPECT_EQ(config::builtin_defaults()["workers"].get<int>(), 1);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("dataset"), 1);
  EXPECT_EQ(run_cli("dataset --out /tmp/x --pairs notanumber"), 1);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, DatasetCanonicalCount) {
  const auto dir = testutil::scratch_dir("cli_canonical");
  ASSERT_EQ(run_cli("dataset --mode d2p --pairs 200 --slices 24 --resolution 8 --phantoms 2 --out " + q(dir)), 0);
  const auto m = io::read_manifest(dir / "manifest.json");
  EXPECT_EQ(m.samples.size(), 4800u);
  EXPECT_EQ(m.select(io::Split::Train).size(), 1500u);
  EXPECT_EQ(m.select(io::Split::Test).size(), 3300u);
  EXPECT_EQ(m.mode, Mode::D2P);
  fs::remove_all(dir);
}

TEST(Cli, ConfigFileIsLayeredUnderFlags) {
  const auto dir = testutil::scratch_dir("cli_layers");
  io::write_text_atomic(dir / "cfg.json", R"({"dataset": {"pairs": 3, "slices": 2, "resolution": 4, "phantoms": 1}})");
  ASSERT_EQ(run_cli("--config " + q(dir / "cfg.json") + " dataset --pairs 5 --out " + q(dir / "d")), 0);
  const auto m = io::read_manifest(dir / "d" / "manifest.json");
  EXPECT_EQ(m.samples.size(), 10u);
  EXPECT_EQ(m.resolution, 4);
  EXPECT_EQ(run_cli("--config " + q(dir / "missing.json") + " dataset --out " + q(dir / "e")), 2);
  fs::remove_all(dir);
}

TEST(Cli, WorkerCountDoesNotChangeOutput) {
  const auto dir = testutil::scratch_dir("cli_workers");
  const std::string common = "dataset --mode p2p --pairs 4 --slices 3 --resolution 8 --phantoms 2 --noise 0.01 --out ";
  ASSERT_EQ(run_cli("--workers 1 " + common + q(dir / "w1")), 0);
  ASSERT_EQ(run_cli("--workers 3 " + common + q(dir / "w3")), 0);
  ASSERT_EQ(run_cli(common + q(dir / "env")), 0);
  ASSERT_EQ(run_cli(common + q(dir / "env2"), "MRREPARAM_WORKERS=2"), 0);
  const auto ref = tree_bytes(dir / "w1");
  EXPECT_EQ(ref, tree_bytes(dir / "w3"));
  EXPECT_EQ(ref, tree_bytes(dir / "env"));
  EXPECT_EQ(ref, tree_bytes(dir / "env2"));
  fs::remove_all(dir);
}

TEST(Cli, TrainInferEvalPipeline) {
  const auto dir = testutil::scratch_dir("cli_pipeline");
  const auto d2p = dir / "d2p";
  const auto p2p = dir / "p2p";
  const std::string data = " --pairs 4 --slices 4 --resolution 8 --phantoms 1 --out ";
  ASSERT_EQ(run_cli("--seed 4 dataset --mode d2p" + data + q(d2p)), 0);
  ASSERT_EQ(run_cli("--seed 4 dataset --mode p2p" + data + q(p2p)), 0);
  ASSERT_EQ(run_cli("train-ae --data " + q(d2p) + " --width 2 --epochs 1 --batch-size 2 --out " + q(dir / "ae.mrpt")), 0);
  ASSERT_EQ(run_cli("train-pn --data " + q(d2p) + " --ae " + q(dir / "ae.mrpt") +
                    " --mode d2p --epochs 1 --batch-size 2 --out " + q(dir / "pn.mrpt")),
            0);
  // mode mismatch between dataset and requested mode
  EXPECT_EQ(run_cli("train-pn --data " + q(p2p) + " --ae " + q(dir / "ae.mrpt") +
                    " --mode d2p --epochs 1 --out " + q(dir / "bad.mrpt")),
            2);

  const auto m = io::read_manifest(d2p / "manifest.json");
  const auto& s = m.samples.front();
  const auto pred = dir / "pred.mrs";
  const auto diff = dir / "diff.mrs";
  ASSERT_EQ(run_cli("infer --ae " + q(dir / "ae.mrpt") + " --pn " + q(dir / "pn.mrpt") + " --input " +
                    q(m.resolve(s.file_in)) + " --te 0.08 --tr 3.0 --out " + q(pred) + " --diff " + q(diff) +
                    " --reference " + q(m.resolve(s.file_out))),
            0);
  const auto p = io::read_slice(pred);
  EXPECT_EQ(p.pixels.shape(), (Shape{8, 8}));
  EXPECT_EQ(p.params, (ScanParams{0.08, 3.0}));
  for (float v : io::read_slice(diff).pixels.data()) ASSERT_TRUE(std::isfinite(v));
  ASSERT_EQ(run_cli("infer --ae " + q(dir / "ae.mrpt") + " --pn " + q(dir / "pn.mrpt") + " --input " +
                    q(m.resolve(s.file_in)) + " --te 0.08 --tr 3.0 --out " + q(dir / "pred.pgm")),
            0);
  EXPECT_TRUE(fs::exists(dir / "pred.pgm"));
  // default setting in and out, diff map against the input itself
  ASSERT_EQ(run_cli("infer --ae " + q(dir / "ae.mrpt") + " --pn " + q(dir / "pn.mrpt") + " --input " +
                    q(m.resolve(s.file_in)) + " --te 0.05 --tr 4.5 --out " + q(dir / "same.mrs") + " --diff " +
                    q(dir / "same_diff.mrs")),
            0);
  EXPECT_TRUE(fs::exists(dir / "same.mrs"));
  for (float v : io::read_slice(dir / "same_diff.mrs").pixels.data()) ASSERT_TRUE(std::isfinite(v));

  ASSERT_EQ(run_cli("eval --baseline --ae " + q(dir / "ae.mrpt") + " --pn " + q(dir / "pn.mrpt") + " --data " +
                    q(d2p) + " --out " + q(dir / "report.json")),
            0);
  const auto report = eval::report_from_json(io::Json::parse(testutil::as_string(io::read_file(dir / "report.json"))));
  EXPECT_EQ(report.rows.size(), m.select(io::Split::Test).size());
  EXPECT_EQ(run_cli("eval --ae " + q(dir / "ae.mrpt") + " --pn " + q(dir / "pn.mrpt") + " --data " + q(p2p)), 2);

  ASSERT_EQ(run_cli("export-figures --count 2 --ae " + q(dir / "ae.mrpt") + " --pn " + q(dir / "pn.mrpt") +
                    " --data " + q(d2p) + " --out " + q(dir / "fig")),
            0);
  int pgms = 0;
  for (const auto& e : fs::directory_iterator(dir / "fig")) pgms += e.path().extension() == ".pgm";
  EXPECT_EQ(pgms, 8);
  fs::remove_all(dir);
}

TEST(Cli, CorruptInputsExitTwo) {
  const auto dir = testutil::scratch_dir("cli_corrupt");
  io::write_text_atomic(dir / "ae.mrpt", "garbage");
  EXPECT_EQ(run_cli("infer --ae " + q(dir / "ae.mrpt") + " --pn " + q(dir / "ae.mrpt") + " --input " +
                    q(dir / "none.mrs") + " --te 0.1 --tr 2 --out " + q(dir / "o.mrs")),
            2);
  EXPECT_EQ(run_cli("train-ae --data " + q(dir / "nowhere") + " --out " + q(dir / "a.mrpt")), 2);
  fs::remove_all(dir);
}

TEST(Cli, NaNLossExitsThree) {
  const auto dir = testutil::scratch_dir("cli_nan");
  ASSERT_EQ(run_cli("dataset --pairs 2 --slices 4 --resolution 8 --phantoms 1 --out " + q(dir)), 0)
      << "dataset";
  const auto m = io::read_manifest(dir / "manifest.json");
  for (const auto& s : m.samples) {
    for (const auto& file : {s.file_in, s.file_out}) {
      auto slice = io::read_slice(m.resolve(file));
      slice.pixels[3] = std::nanf("");
      io::write_slice(m.resolve(file), slice.pixels, slice.params);
    }
  }
  EXPECT_EQ(run_cli("train-ae --data " + q(dir) + " --width 2 --epochs 1 --batch-size 2 --out " + q(dir / "a.mrpt")),
            3);
  fs::remove_all(dir);
}
