#pragma once

// On-disk formats. All multi-byte values are little-endian.
//
// Slice file (.mrs):
//   "MRS1" | u32 width | u32 height | f64 te_s | f64 tr_s | f32[height*width] row-major
//
// Checkpoint (.mrpt):
//   "MRPT" | u32 version | u32 metadata length | metadata JSON (UTF-8)
//   | u32 tensor count | per tensor: u16 name length, name, u8 rank, u32 dims[rank], f32 payload
//   The metadata carries "crc32", the CRC-32 of everything after the metadata blob.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrreparam/tensor.hpp"
#include "mrreparam/types.hpp"

namespace mrreparam::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;
using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kSliceHeaderBytes = 28;
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

Bytes read_file(const fs::path& path);
/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const fs::path& path, const std::string& text);

struct SliceImage {
  Tensor pixels;  // [height, width]
  ScanParams params;
};

Bytes encode_slice(const Tensor& image, ScanParams params);
SliceImage decode_slice(std::span<const std::uint8_t> bytes);
void write_slice(const fs::path& path, const Tensor& image, ScanParams params);
SliceImage read_slice(const fs::path& path);

enum class Split { Train, Test };
std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestSample {
  std::int64_t id = 0;
  std::int64_t phantom_id = 0;
  std::int64_t slice_index = 0;
  std::int64_t pair_index = 0;
  ScanParams params_in;
  ScanParams params_out;
  std::string file_in;   // relative to the manifest directory
  std::string file_out;
  Split split = Split::Train;
};

struct DatasetManifest {
  int version = 1;
  Mode mode = Mode::D2P;
  std::int64_t resolution = 0;
  std::uint64_t seed = 0;
  ScanParams default_params = kDefaultParams;
  std::string family = "standard";
  std::string split_policy = "by-pair";
  std::vector<ManifestSample> samples;
  fs::path root;  // directory holding the manifest; not serialized

  fs::path resolve(const std::string& relative) const { return root / relative; }
  std::vector<const ManifestSample*> select(Split split) const;
};

Json manifest_to_json(const DatasetManifest& manifest);
/// Parses and validates ids, splits and D2P input settings. Paths are checked
/// against `root` when `check_files` is set.
DatasetManifest manifest_from_json(const Json& doc, const fs::path& root, bool check_files = true);
void write_manifest(const DatasetManifest& manifest, const fs::path& path);
DatasetManifest read_manifest(const fs::path& path, bool check_files = true);

struct Checkpoint {
  Json metadata = Json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

Bytes encode_checkpoint(const Checkpoint& checkpoint);
/// With `verify`, the stored CRC-32 must match the tensor table.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, bool verify = true);
void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path, bool verify = true);

enum class ImageFormat { Pgm, Raw };
ImageFormat parse_image_format(const std::string& text);

/// Binary P5, values in [0,1] quantized linearly to 0..255.
Bytes encode_pgm(const Tensor& image);
/// Reads P5 (8-bit) or P2 grayscale into [0,1].
Tensor decode_pgm(std::span<const std::uint8_t> bytes);
/// pgm: 8-bit P5; raw: slice file with te = tr = 0.
void export_image(const Tensor& image, const fs::path& path, ImageFormat format);

}  // namespace mrreparam::io
