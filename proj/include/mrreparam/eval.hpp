#pragma once

// Image-quality metrics in display units (0..255) and test-set reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mrreparam/io.hpp"
#include "mrreparam/types.hpp"

namespace mrreparam::eval {

inline constexpr double kPsnrCap = 99.0;
inline constexpr double kDisplayMax = 255.0;

/// [0,1] -> [0,255], clamped, no quantization.
Tensor to_display_units(const Tensor& image);
/// 10 log10(max^2 / mse); identical images give kPsnrCap.
double psnr(const Tensor& a, const Tensor& b, double max_val = kDisplayMax);
double mae(const Tensor& a, const Tensor& b);
/// Pixelwise |a - b|.
Tensor diff_map(const Tensor& a, const Tensor& b);

struct SampleRow {
  std::int64_t id = 0;
  double psnr = 0.0;
  double mae = 0.0;
};

struct EvalReport {
  Mode mode = Mode::D2P;
  std::string model;    // "paramnet", "identity", ...
  std::string testset;
  double mean_psnr = 0.0;
  double std_psnr = 0.0;
  double mean_mae = 0.0;
  double std_mae = 0.0;
  std::vector<SampleRow> rows;  // sorted by id
};

/// Sorts rows by id and computes means and population standard deviations.
EvalReport aggregate(Mode mode, std::string model, std::string testset, std::vector<SampleRow> rows);

io::Json to_json(const EvalReport& report);
EvalReport report_from_json(const io::Json& doc);
/// Aligned plain-text table with one line per report.
std::string format_table(const std::vector<EvalReport>& reports);

/// Prediction in [0,1] for a sample whose input image (in [0,1]) is given.
using Predictor = std::function<Tensor(const io::ManifestSample&, const Tensor& input)>;

/// Prediction = input image.
Predictor identity_predictor();

/// Scores every sample of `split`. `mode` is the predictor's variant and must
/// match the manifest (ModeMismatch otherwise).
EvalReport evaluate(const io::DatasetManifest& manifest, Mode mode, const Predictor& predictor,
                    const std::string& model_name, const std::string& testset, int workers = 1,
                    io::Split split = io::Split::Test);

/// Loads both checkpoints and scores the Param-Net on the manifest's test split.
EvalReport evaluate(const std::filesystem::path& ae_checkpoint, const std::filesystem::path& pn_checkpoint,
                    const std::filesystem::path& manifest, const std::string& testset, int workers = 1,
                    io::Split split = io::Split::Test);

}  // namespace mrreparam::eval
