#include "mrreparam/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace mrreparam::io {
namespace {

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  Bytes take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(le(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(le(8, what)); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw CorruptionError(std::string("truncated file while reading ") + what, data_.size());
    }
  }
  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void expect_magic(ByteReader& r, const char (&magic)[5], const char* what) {
  auto m = r.bytes(4, "magic");
  if (!std::equal(m.begin(), m.end(), magic)) {
    throw FormatError(std::string("bad magic: not a ") + what);
  }
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Bytes encode_slice(const Tensor& image, ScanParams params) {
  if (image.rank() != 2) throw InvalidArgument("slice image must be 2-D, got " + shape_str(image.shape()));
  ByteWriter w;
  w.bytes("MRS1", 4);
  w.u32(static_cast<std::uint32_t>(image.dim(1)));
  w.u32(static_cast<std::uint32_t>(image.dim(0)));
  w.f64(params.te_s);
  w.f64(params.tr_s);
  for (float v : image.data()) w.f32(v);
  return w.take();
}

SliceImage decode_slice(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  expect_magic(r, "MRS1", "slice file");
  const auto width = r.u32("width");
  const auto height = r.u32("height");
  SliceImage out;
  out.params.te_s = r.f64("te");
  out.params.tr_s = r.f64("tr");
  if (width == 0 || height == 0) throw FormatError("slice file has a zero dimension");
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (r.remaining() < n * 4) {
    throw CorruptionError("truncated slice payload: expected " + std::to_string(n * 4) +
                              " bytes, found " + std::to_string(r.remaining()),
                          r.offset() + r.remaining());
  }
  if (r.remaining() > n * 4) throw FormatError("trailing bytes after slice payload");
  std::vector<float> px(n);
  for (auto& v : px) v = r.f32("pixels");
  out.pixels = Tensor(Shape{height, width}, std::move(px));
  return out;
}

void write_slice(const fs::path& path, const Tensor& image, ScanParams params) {
  write_file_atomic(path, encode_slice(image, params));
}

SliceImage read_slice(const fs::path& path) { return decode_slice(read_file(path)); }

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw FormatError("invalid split '" + text + "'");
}

std::vector<const ManifestSample*> DatasetManifest::select(Split split) const {
  std::vector<const ManifestSample*> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(&s);
  }
  return out;
}

Json manifest_to_json(const DatasetManifest& m) {
  Json samples = Json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"id", s.id},
                       {"phantom_id", s.phantom_id},
                       {"slice_index", s.slice_index},
                       {"pair_index", s.pair_index},
                       {"te_in", s.params_in.te_s},
                       {"tr_in", s.params_in.tr_s},
                       {"te_out", s.params_out.te_s},
                       {"tr_out", s.params_out.tr_s},
                       {"file_in", s.file_in},
                       {"file_out", s.file_out},
                       {"split", to_string(s.split)}});
  }
  return {{"version", m.version},
          {"mode", to_string(m.mode)},
          {"R", m.resolution},
          {"seed", m.seed},
          {"default_params", {{"te", m.default_params.te_s}, {"tr", m.default_params.tr_s}}},
          {"family", m.family},
          {"split_policy", m.split_policy},
          {"samples", std::move(samples)}};
}

DatasetManifest manifest_from_json(const Json& doc, const fs::path& root, bool check_files) {
  DatasetManifest m;
  m.root = root;
  try {
    m.version = doc.at("version").get<int>();
    if (m.version != 1) throw FormatError("unsupported manifest version " + std::to_string(m.version));
    m.mode = parse_mode(doc.at("mode").get<std::string>());
    m.resolution = doc.at("R").get<std::int64_t>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.default_params = {doc.at("default_params").at("te").get<double>(),
                        doc.at("default_params").at("tr").get<double>()};
    m.family = doc.value("family", "standard");
    m.split_policy = doc.value("split_policy", "by-pair");
    std::set<std::int64_t> ids;
    for (const auto& row : doc.at("samples")) {
      ManifestSample s;
      s.id = row.at("id").get<std::int64_t>();
      s.phantom_id = row.at("phantom_id").get<std::int64_t>();
      s.slice_index = row.at("slice_index").get<std::int64_t>();
      s.pair_index = row.value("pair_index", std::int64_t{0});
      s.params_in = {row.at("te_in").get<double>(), row.at("tr_in").get<double>()};
      s.params_out = {row.at("te_out").get<double>(), row.at("tr_out").get<double>()};
      s.file_in = row.at("file_in").get<std::string>();
      s.file_out = row.at("file_out").get<std::string>();
      s.split = parse_split(row.at("split").get<std::string>());
      if (!ids.insert(s.id).second) throw FormatError("duplicate sample id " + std::to_string(s.id));
      if (m.mode == Mode::D2P && s.params_in != kDefaultParams) {
        throw FormatError("D2P sample " + std::to_string(s.id) + " has non-default input params");
      }
      if (check_files) {
        for (const auto* f : {&s.file_in, &s.file_out}) {
          if (!fs::exists(root / *f)) {
            throw FormatError("manifest sample " + std::to_string(s.id) + " references missing file " + *f);
          }
        }
      }
      m.samples.push_back(std::move(s));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  write_text_atomic(path, manifest_to_json(manifest).dump(1) + "\n");
}

DatasetManifest read_manifest(const fs::path& path, bool check_files) {
  const auto bytes = read_file(path);
  Json doc;
  try {
    doc = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::exception& e) {
    throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(doc, path.parent_path(), check_files);
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
}

Bytes encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter table;
  table.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::set<std::string> names;
  for (const auto& [name, t] : ckpt.tensors) {
    if (!names.insert(name).second) throw InvalidArgument("duplicate tensor name '" + name + "'");
    if (name.size() > 0xffff) throw InvalidArgument("tensor name too long");
    table.u16(static_cast<std::uint16_t>(name.size()));
    table.bytes(name.data(), name.size());
    table.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) table.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) table.f32(v);
  }
  const Bytes body = table.take();
  Json meta = ckpt.metadata;
  meta["crc32"] = crc32(body);
  const std::string meta_text = meta.dump();

  ByteWriter w;
  w.bytes("MRPT", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(meta_text.size()));
  w.bytes(meta_text.data(), meta_text.size());
  Bytes out = w.take();
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, bool verify) {
  ByteReader r(bytes);
  expect_magic(r, "MRPT", "checkpoint");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto meta_len = r.u32("metadata length");
  auto meta_bytes = r.bytes(meta_len, "metadata");
  Checkpoint ckpt;
  try {
    ckpt.metadata = Json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  const std::size_t table_start = r.offset();
  if (verify) {
    const auto stored = ckpt.metadata.value("crc32", std::uint64_t{0});
    if (stored != crc32(bytes.subspan(table_start))) {
      throw CorruptionError("checkpoint checksum mismatch", table_start);
    }
  }
  const auto count = r.u32("tensor count");
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u16("tensor name length");
    auto nb = r.bytes(name_len, "tensor name");
    std::string name(nb.begin(), nb.end());
    if (!names.insert(name).second) throw FormatError("duplicate tensor name '" + name + "'");
    const auto rank = r.u8("tensor rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32("tensor dims");
      if (d == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
    }
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    if (r.remaining() < n * 4) {
      throw CorruptionError("truncated payload of tensor '" + name + "'", bytes.size());
    }
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32("tensor payload");
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint tensor table");
  ckpt.metadata.erase("crc32");
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
  write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const fs::path& path, bool verify) {
  return decode_checkpoint(read_file(path), verify);
}

ImageFormat parse_image_format(const std::string& text) {
  if (text == "pgm") return ImageFormat::Pgm;
  if (text == "raw") return ImageFormat::Raw;
  throw InvalidArgument("unknown image format '" + text + "' (expected pgm or raw)");
}

Bytes encode_pgm(const Tensor& image) {
  if (image.rank() != 2) throw InvalidArgument("pgm export needs a 2-D image");
  const std::string header =
      "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.reserve(out.size() + image.size());
  for (float v : image.data()) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
  }
  return out;
}

Tensor decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw FormatError("truncated PGM header");
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw FormatError("bad magic: not a PGM image");
  std::int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::logic_error&) {
    throw FormatError("malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError("unsupported PGM header");
  Tensor out(Shape{h, w});
  if (magic == "P5") {
    ++pos;  // single whitespace after maxval
    if (bytes.size() - std::min(pos, bytes.size()) < out.size()) {
      throw CorruptionError("truncated PGM payload", bytes.size());
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<float>(bytes[pos + i]) / static_cast<float>(maxval);
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<float>(std::stoll(token())) / static_cast<float>(maxval);
    }
  }
  return out;
}

void export_image(const Tensor& image, const fs::path& path, ImageFormat format) {
  if (format == ImageFormat::Pgm) {
    write_file_atomic(path, encode_pgm(image));
  } else {
    write_slice(path, image, ScanParams{0.0, 0.0});
  }
}

}  // namespace mrreparam::io
