#include "mrreparam/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mrreparam/model/autoencoder.hpp"
#include "mrreparam/model/paramnet.hpp"
#include "mrreparam/parallel.hpp"
#include "mrreparam/train.hpp"

namespace mrreparam::eval {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()) + " differ");
  }
}

std::pair<double, double> mean_std(const std::vector<SampleRow>& rows, double SampleRow::*field) {
  if (rows.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (const auto& r : rows) sum += r.*field;
  const double mean = sum / static_cast<double>(rows.size());
  double sq = 0.0;
  for (const auto& r : rows) sq += (r.*field - mean) * (r.*field - mean);
  return {mean, std::sqrt(sq / static_cast<double>(rows.size()))};
}

}  // namespace

Tensor to_display_units(const Tensor& image) {
  Tensor out = image;
  for (auto& v : out.data()) v = static_cast<float>(std::clamp(static_cast<double>(v), 0.0, 1.0) * kDisplayMax);
  return out;
}

double psnr(const Tensor& a, const Tensor& b, double max_val) {
  check_same_shape(a, b, "psnr");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

double mae(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mae");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return sum / static_cast<double>(a.size());
}

Tensor diff_map(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "diff_map");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::abs(a[i] - b[i]);
  return out;
}

EvalReport aggregate(Mode mode, std::string model, std::string testset, std::vector<SampleRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const SampleRow& x, const SampleRow& y) { return x.id < y.id; });
  EvalReport r;
  r.mode = mode;
  r.model = std::move(model);
  r.testset = std::move(testset);
  std::tie(r.mean_psnr, r.std_psnr) = mean_std(rows, &SampleRow::psnr);
  std::tie(r.mean_mae, r.std_mae) = mean_std(rows, &SampleRow::mae);
  r.rows = std::move(rows);
  return r;
}

io::Json to_json(const EvalReport& r) {
  io::Json rows = io::Json::array();
  for (const auto& s : r.rows) rows.push_back({{"id", s.id}, {"psnr", s.psnr}, {"mae", s.mae}});
  return {{"mode", to_string(r.mode)},   {"model", r.model},         {"testset", r.testset},
          {"mean_psnr", r.mean_psnr},    {"std_psnr", r.std_psnr},   {"mean_mae", r.mean_mae},
          {"std_mae", r.std_mae},        {"samples", r.rows.size()}, {"rows", std::move(rows)}};
}

EvalReport report_from_json(const io::Json& doc) {
  try {
    EvalReport r;
    r.mode = parse_mode(doc.at("mode").get<std::string>());
    r.model = doc.value("model", std::string());
    r.testset = doc.value("testset", std::string());
    r.mean_psnr = doc.at("mean_psnr").get<double>();
    r.std_psnr = doc.at("std_psnr").get<double>();
    r.mean_mae = doc.at("mean_mae").get<double>();
    r.std_mae = doc.at("std_mae").get<double>();
    for (const auto& row : doc.at("rows")) {
      r.rows.push_back({row.at("id").get<std::int64_t>(), row.at("psnr").get<double>(), row.at("mae").get<double>()});
    }
    return r;
  } catch (const io::Json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string format_table(const std::vector<EvalReport>& reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-6s %-16s %8s %10s %10s %9s %9s\n", "model", "mode", "testset",
                "samples", "mean_psnr", "std_psnr", "mean_mae", "std_mae");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-10s %-6s %-16s %8zu %10.3f %10.3f %9.3f %9.3f\n", r.model.c_str(),
                  to_string(r.mode).c_str(), r.testset.c_str(), r.rows.size(), r.mean_psnr, r.std_psnr,
                  r.mean_mae, r.std_mae);
    out += line;
  }
  return out;
}

Predictor identity_predictor() {
  return [](const io::ManifestSample&, const Tensor& input) { return input; };
}

EvalReport evaluate(const io::DatasetManifest& manifest, Mode mode, const Predictor& predictor,
                    const std::string& model_name, const std::string& testset, int workers, io::Split split) {
  if (manifest.mode != mode) {
    throw ModeMismatch("a " + to_string(mode) + " model cannot be evaluated on a " + to_string(manifest.mode) +
                       " test set");
  }
  const auto samples = manifest.select(split);
  std::vector<SampleRow> rows(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    const auto& s = *samples[i];
    const auto input = io::read_slice(manifest.resolve(s.file_in)).pixels;
    const auto truth = io::read_slice(manifest.resolve(s.file_out)).pixels;
    const auto pred = predictor(s, input);
    const auto a = to_display_units(pred);
    const auto b = to_display_units(truth);
    rows[i] = {s.id, psnr(a, b), mae(a, b)};
  });
  return aggregate(mode, model_name, testset, std::move(rows));
}

EvalReport evaluate(const std::filesystem::path& ae_checkpoint, const std::filesystem::path& pn_checkpoint,
                    const std::filesystem::path& manifest_path, const std::string& testset, int workers,
                    io::Split split) {
  const auto manifest = io::read_manifest(manifest_path);
  auto ae = model::autoencoder_from_checkpoint(io::load_checkpoint(ae_checkpoint));
  auto pn = model::paramnet_from_checkpoint(io::load_checkpoint(pn_checkpoint), &manifest.mode);
  Predictor predictor = [&](const io::ManifestSample& s, const Tensor& input) {
    return train::predict(ae, pn, input, s.params_in, s.params_out, true);
  };
  return evaluate(manifest, pn.config().mode, predictor, "paramnet", testset, workers, split);
}

}  // namespace mrreparam::eval
