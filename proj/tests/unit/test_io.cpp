#include <gtest/gtest.h>

#include <bit>
#include <cstring>

#include "mrreparam/io.hpp"
#include "mrreparam/parallel.hpp"
#include "test_util.hpp"

using namespace mrreparam;
using namespace mrreparam::io;

namespace {

std::uint32_t read_u32(const Bytes& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.metadata = {{"kind", "autoencoder"}, {"step", 12}, {"config", {{"depth", 3}}}};
  c.tensors.emplace_back("enc.0.w", testutil::random_tensor<float>({4, 1, 3, 3}, 1));
  c.tensors.emplace_back("enc.0.b", testutil::random_tensor<float>({4}, 2));
  Tensor special(Shape{4}, std::vector<float>{-0.0f, 1e-42f, 3.4e38f, -1.0f});
  c.tensors.emplace_back("special", special);
  return c;
}

ManifestSample row(std::int64_t id, const std::string& in, const std::string& out) {
  ManifestSample s;
  s.id = id;
  s.params_in = kDefaultParams;
  s.params_out = {0.1, 2.0};
  s.file_in = in;
  s.file_out = out;
  return s;
}

}  // namespace

TEST(Crc32, KnownValue) {
  const std::string text = "123456789";
  EXPECT_EQ(crc32(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())), 0xCBF43926u);
}

TEST(SliceFile, LayoutIsLittleEndian) {
  Tensor img(Shape{2, 3}, std::vector<float>{0.0f, 0.25f, 0.5f, 0.75f, 1.0f, 0.125f});
  const auto b = encode_slice(img, {0.05, 4.5});
  ASSERT_EQ(b.size(), kSliceHeaderBytes + 6 * 4);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "MRS1");
  EXPECT_EQ(read_u32(b, 4), 3u);  // width
  EXPECT_EQ(read_u32(b, 8), 2u);  // height
  std::uint64_t te_bits = 0;
  for (int i = 0; i < 8; ++i) te_bits |= static_cast<std::uint64_t>(b[12 + i]) << (8 * i);
  EXPECT_EQ(std::bit_cast<double>(te_bits), 0.05);
  EXPECT_EQ(std::bit_cast<float>(read_u32(b, kSliceHeaderBytes + 4)), 0.25f);
}

TEST(SliceFile, RoundTripIsBitwise) {
  const auto dir = testutil::scratch_dir("io_slice");
  const auto img = testutil::random_tensor<float>({17, 9}, 3, 0.0, 1.0);
  write_slice(dir / "a.mrs", img, {0.0371, 9.25});
  const auto back = read_slice(dir / "a.mrs");
  EXPECT_EQ(back.pixels, img);
  EXPECT_EQ(back.params, (ScanParams{0.0371, 9.25}));
  EXPECT_EQ(encode_slice(back.pixels, back.params), read_file(dir / "a.mrs"));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.mrs.tmp"));
  std::filesystem::remove_all(dir);
}

TEST(SliceFile, RejectsBadInput) {
  const auto good = encode_slice(Tensor(Shape{4, 4}, 0.5f), kDefaultParams);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_slice(bad_magic), FormatError);

  Bytes truncated(good.begin(), good.end() - 3);
  try {
    decode_slice(truncated);
    FAIL() << "expected CorruptionError";
  } catch (const CorruptionError& e) {
    EXPECT_EQ(e.offset(), truncated.size());
  }
  EXPECT_THROW(decode_slice(Bytes(good.begin(), good.begin() + 10)), CorruptionError);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_slice(trailing), FormatError);
  EXPECT_THROW(encode_slice(Tensor(Shape{1, 2, 2}), kDefaultParams), InvalidArgument);
  EXPECT_THROW(read_slice("/nonexistent/x.mrs"), IoError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto dir = testutil::scratch_dir("io_ckpt");
  const auto c = sample_checkpoint();
  save_checkpoint(c, dir / "a.mrpt");
  const auto loaded = load_checkpoint(dir / "a.mrpt");
  ASSERT_EQ(loaded.tensors.size(), c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    EXPECT_EQ(loaded.tensors[i].first, c.tensors[i].first);
    const auto& a = loaded.tensors[i].second;
    const auto& b = c.tensors[i].second;
    ASSERT_EQ(a.shape(), b.shape());
    EXPECT_EQ(std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(float)), 0);
  }
  EXPECT_EQ(loaded.metadata, c.metadata);
  save_checkpoint(loaded, dir / "b.mrpt");
  EXPECT_EQ(read_file(dir / "a.mrpt"), read_file(dir / "b.mrpt"));
  EXPECT_TRUE(loaded.has("special"));
  EXPECT_THROW(loaded.tensor("missing"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, DetectsPayloadTampering) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  // Flip one byte in the last tensor payload.
  auto tampered = bytes;
  tampered[tampered.size() - 5] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(tampered), CorruptionError);
  // Without verification the value change goes through.
  const auto loose = decode_checkpoint(tampered, false);
  EXPECT_FALSE(loose.tensor("special") == sample_checkpoint().tensors[2].second);
}

TEST(Checkpoint, RejectsMalformedFiles) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  auto bad_magic = bytes;
  bad_magic[1] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);

  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), FormatError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
    Bytes t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_checkpoint(t, false), CorruptionError) << cut;
  }

  Checkpoint dup;
  dup.tensors.emplace_back("w", Tensor(Shape{1}));
  dup.tensors.emplace_back("w", Tensor(Shape{1}));
  EXPECT_THROW(encode_checkpoint(dup), InvalidArgument);
}

TEST(Checkpoint, DuplicateNameInFileIsRejected) {
  Checkpoint c;
  c.tensors.emplace_back("aa", Tensor(Shape{1}, 1.0f));
  c.tensors.emplace_back("ab", Tensor(Shape{1}, 2.0f));
  auto bytes = encode_checkpoint(c);
  // Rename the second tensor to the first in place; the length is unchanged.
  for (std::size_t i = bytes.size() - 1; i > 0; --i) {
    if (bytes[i - 1] == 'a' && bytes[i] == 'b') {
      bytes[i] = 'a';
      break;
    }
  }
  EXPECT_THROW(decode_checkpoint(bytes, false), FormatError);
}

TEST(Manifest, RoundTripAndValidation) {
  const auto dir = testutil::scratch_dir("io_manifest");
  write_slice(dir / "in.mrs", Tensor(Shape{2, 2}), kDefaultParams);
  write_slice(dir / "out.mrs", Tensor(Shape{2, 2}), {0.1, 2.0});
  DatasetManifest m;
  m.resolution = 2;
  m.seed = 4;
  m.samples = {row(0, "in.mrs", "out.mrs"), row(1, "in.mrs", "out.mrs")};
  m.samples[1].split = Split::Test;
  write_manifest(m, dir / "manifest.json");
  const auto back = read_manifest(dir / "manifest.json");
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  EXPECT_EQ(back.root, dir);
  EXPECT_EQ(back.select(Split::Test).size(), 1u);

  auto doc = manifest_to_json(m);
  auto dup = doc;
  dup["samples"][1]["id"] = 0;
  EXPECT_THROW(manifest_from_json(dup, dir), FormatError);

  auto dangling = doc;
  dangling["samples"][0]["file_out"] = "gone.mrs";
  EXPECT_THROW(manifest_from_json(dangling, dir), FormatError);
  EXPECT_NO_THROW(manifest_from_json(dangling, dir, false));

  auto bad_split = doc;
  bad_split["samples"][0]["split"] = "validation";
  EXPECT_THROW(manifest_from_json(bad_split, dir), FormatError);

  auto bad_d2p = doc;
  bad_d2p["samples"][0]["te_in"] = 0.06;
  EXPECT_THROW(manifest_from_json(bad_d2p, dir), FormatError);
  bad_d2p["mode"] = "p2p";
  EXPECT_NO_THROW(manifest_from_json(bad_d2p, dir));

  auto bad_mode = doc;
  bad_mode["mode"] = "x2y";
  EXPECT_THROW(manifest_from_json(bad_mode, dir), FormatError);
  EXPECT_THROW(manifest_from_json(Json::object(), dir), FormatError);

  io::write_text_atomic(dir / "broken.json", "{not json");
  EXPECT_THROW(read_manifest(dir / "broken.json"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Pgm, ConstantImagesAndHeader) {
  const auto ones = encode_pgm(Tensor(Shape{3, 5}, 1.0f));
  const std::string header = "P5\n5 3\n255\n";
  ASSERT_EQ(ones.size(), header.size() + 15);
  EXPECT_EQ(std::string(ones.begin(), ones.begin() + static_cast<std::ptrdiff_t>(header.size())), header);
  for (std::size_t i = header.size(); i < ones.size(); ++i) EXPECT_EQ(ones[i], 255);
  const auto zeros = encode_pgm(Tensor(Shape{3, 5}));
  for (std::size_t i = header.size(); i < zeros.size(); ++i) EXPECT_EQ(zeros[i], 0);
}

TEST(Pgm, DecodeRoundTripAndErrors) {
  Tensor img(Shape{2, 2}, std::vector<float>{0.0f, 1.0f, 0.2f, 0.6f});
  const auto back = decode_pgm(encode_pgm(img));
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 0.5 / 255.0 + 1e-7);
  const std::string ascii = "P2\n# comment\n2 1\n4\n0 4\n";
  const auto a = decode_pgm(Bytes(ascii.begin(), ascii.end()));
  EXPECT_EQ(a[1], 1.0f);
  const std::string bad = "P6\n1 1\n255\n";
  EXPECT_THROW(decode_pgm(Bytes(bad.begin(), bad.end())), FormatError);
  auto cut = encode_pgm(img);
  cut.pop_back();
  EXPECT_THROW(decode_pgm(cut), CorruptionError);
}

TEST(Export, RawAndPgm) {
  const auto dir = testutil::scratch_dir("io_export");
  const auto img = testutil::random_tensor<float>({4, 6}, 8, 0.0, 1.0);
  export_image(img, dir / "x.pgm", ImageFormat::Pgm);
  export_image(img, dir / "x.mrs", ImageFormat::Raw);
  EXPECT_EQ(read_file(dir / "x.pgm"), encode_pgm(img));
  const auto raw = read_slice(dir / "x.mrs");
  EXPECT_EQ(raw.pixels, img);
  EXPECT_EQ(raw.params, (ScanParams{0.0, 0.0}));
  EXPECT_EQ(parse_image_format("raw"), ImageFormat::Raw);
  EXPECT_THROW(parse_image_format("png"), InvalidArgument);
  io::write_text_atomic(dir / "file", "x");
  EXPECT_THROW(export_image(img, dir / "file" / "y.pgm", ImageFormat::Pgm), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Parallel, EveryIndexOnceAndErrorsPropagate) {
  for (int workers : {1, 2, 5}) {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw FormatError("boom");
               }),
               FormatError);
}

TEST(Parallel, WorkerDefaultFromEnvironment) {
  ::setenv("MRREPARAM_WORKERS", "3", 1);
  EXPECT_EQ(default_workers(1), 3);
  ::setenv("MRREPARAM_WORKERS", "zero", 1);
  EXPECT_EQ(default_workers(2), 2);
  ::unsetenv("MRREPARAM_WORKERS");
  EXPECT_EQ(default_workers(4), 4);
}
