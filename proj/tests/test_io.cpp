#include "vtu/dataset.hpp"
#include "vtu/io.hpp"
#include "vtu/keyvalue.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

using namespace vtu;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("vtu_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool bitwise_equal(const Tensorf& a, const Tensorf& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Vtt1, RoundTripKeepsBits) {
  Rng rng(3);
  for (const Shape& s : {Shape{7}, Shape{3, 5}, Shape{2, 3, 4}, Shape{1, 2, 2, 3}}) {
    auto t = rand_uniform<float>(s, rng, -10.0, 10.0);
    const auto back = decode_vtt1(encode_vtt1(t));
    EXPECT_TRUE(bitwise_equal(t, back));
  }
}

TEST(Vtt1, LayoutIsLittleEndian) {
  Tensorf t = Tensorf::zeros({1, 2});
  t.mutable_data()[1] = 1.0f;
  const auto bytes = encode_vtt1(t);
  ASSERT_EQ(bytes.size(), 8u + 4 + 8 + 8);
  EXPECT_TRUE(std::equal(bytes.begin(), bytes.begin() + 8, kVtt1Magic));
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 1);
  EXPECT_EQ(bytes[16], 2);
  // 1.0f is 0x3f800000.
  EXPECT_EQ(bytes[26], 0x80);
  EXPECT_EQ(bytes[27], 0x3f);
}

TEST(Vtt1, RejectsCorruptInput) {
  auto bytes = encode_vtt1(Tensorf::ones({2, 2}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_vtt1(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_vtt1(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_vtt1(trailing), FormatError);
  EXPECT_THROW(read_vtt1("/nonexistent/x.vtt1"), std::runtime_error);
}

TEST(Pgm, RoundTrip) {
  const auto dir = scratch("pgm");
  GrayImage img{5, 3, {}};
  for (int i = 0; i < 15; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 17));
  write_pgm(dir / "a.pgm", img);
  const auto back = read_pgm(dir / "a.pgm");
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.height, 3);
  EXPECT_EQ(back.pixels, img.pixels);
  Tensorf m = Tensorf::zeros({3, 4});
  m.mutable_data()[5] = 1.0f;
  write_mask_pgm(dir / "m.pgm", m);
  EXPECT_TRUE(bitwise_equal(read_mask_pgm(dir / "m.pgm"), m));
  write_text(dir / "bad.pgm", "P2\n1 1\n255\n0\n");
  EXPECT_THROW(read_pgm(dir / "bad.pgm"), FormatError);
}

TEST(KeyValue, ParseAndTypedAccess) {
  const auto kv = KeyValues::parse("# comment\n a = 1.5 \nb=7\n\nflag=true\nlist=1,3,5\n");
  EXPECT_EQ(kv.get("a"), "1.5");
  EXPECT_EQ(kv.get_double("a"), 1.5);
  EXPECT_EQ(kv.get_int("b"), 7);
  EXPECT_TRUE(kv.get_bool("flag"));
  EXPECT_EQ(kv.get_list("list"), (std::vector<std::string>{"1", "3", "5"}));
  EXPECT_EQ(kv.keys(), (std::vector<std::string>{"a", "b", "flag", "list"}));
  EXPECT_EQ(kv.get_or("missing", "x"), "x");
  EXPECT_THROW(kv.get("missing"), ConfigError);
  EXPECT_THROW(kv.get_int("a"), ConfigError);
}

TEST(KeyValue, RejectsMalformedText) {
  EXPECT_THROW(KeyValues::parse("a=1\na=2\n"), ConfigError);
  EXPECT_THROW(KeyValues::parse("novalue\n"), ConfigError);
  const auto kv = KeyValues::parse("a=1\nb=2\n");
  EXPECT_THROW(kv.require_known({"a"}), ConfigError);
  EXPECT_NO_THROW(kv.require_known({"a", "b"}));
}

TEST(KeyValue, TextRoundTrip) {
  KeyValues kv;
  kv.set("x", "1");
  kv.set("y", "two");
  const auto back = KeyValues::parse(kv.to_text());
  EXPECT_EQ(back.get("y"), "two");
  EXPECT_EQ(back.keys(), kv.keys());
}

TEST(KeyValue, DoubleFormatsAreExact) {
  for (double v : {0.1, 5e-4, 1.0 / 3.0, -2.5e-300, 12345.678}) {
    EXPECT_EQ(parse_double(format_double(v)), v);
    EXPECT_EQ(parse_double(format_hex(v)), v);
  }
  EXPECT_THROW(parse_double("1.0x"), ConfigError);
  EXPECT_EQ(split("a,,b"), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_EQ(join({"a", "b"}), "a,b");
}

TEST(Dataset, GenerateAndReload) {
  const auto root = scratch("dataset");
  SceneSpec spec;
  spec.seed = 21;
  spec.height = 32;
  spec.width = 32;
  spec.sequence_length = 8;
  const auto m = generate_dataset(root, spec, 4);
  EXPECT_EQ(m.sequences, 4);
  EXPECT_EQ(m.ids(), (std::vector<std::string>{"seq_000", "seq_001", "seq_002", "seq_003"}));
  EXPECT_TRUE(fs::exists(root / "seq_002" / "frames" / "7.vtt1"));
  EXPECT_TRUE(fs::exists(root / "seq_002" / "masks" / "7_pharynx.pgm"));

  const auto back = read_manifest(root);
  EXPECT_EQ(back.to_text(), m.to_text());
  EXPECT_EQ(back.spec.seed, 21u);

  const auto stored = load_sequence(root, "seq_001", 8);
  const auto fresh = generate_sequence(sequence_spec(spec, 1), "seq_001");
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_TRUE(bitwise_equal(stored.frames[k], fresh.frames[k]));
    EXPECT_TRUE(bitwise_equal(stored.masks[k].bolus, fresh.masks[k].bolus));
    EXPECT_TRUE(bitwise_equal(stored.masks[k].pharynx, fresh.masks[k].pharynx));
  }

  std::size_t stacks = 0;
  for (const char* name : {"train", "val", "test"}) {
    const auto split = load_split(root, back, name, 3);
    EXPECT_EQ(split.size(), back.split_ids(name).size() * 8);
    stacks += split.size();
  }
  EXPECT_EQ(stacks, 32u);
  EXPECT_THROW(back.split_ids("holdout"), std::invalid_argument);
}

TEST(Dataset, ManifestVersionIsChecked) {
  DatasetManifest m;
  m.sequences = 1;
  m.split.train = {"seq_000"};
  auto text = m.to_text();
  EXPECT_NO_THROW(DatasetManifest::parse(text, "m"));
  const auto pos = text.find("format_version=1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 16, "format_version=9");
  EXPECT_THROW(DatasetManifest::parse(text, "m"), FormatError);
  EXPECT_THROW(read_manifest("/nonexistent/dataset"), std::runtime_error);
}
