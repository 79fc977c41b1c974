#include <gtest/gtest.h>

#include <filesystem>

#include "sibcl/io/datastore.hpp"
#include "sibcl/nn/checkpoint.hpp"

using namespace sibcl;

namespace {

io::Dataset sample_cells(std::size_t count, std::uint64_t seed) {
  io::Dataset ds;
  ds.header.kind = "phc_cell";
  ds.header.shape = {32, 32};
  ds.header.seed = seed;
  ds.header.params = {{"generator", "levelset"}, {"eps_max", 20.0}};
  ds.header.units = {{"eps", "relative permittivity"}};
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> rec(32 * 32);
    for (auto& v : rec) v = rng.uniform(1.0, 20.0);
    ds.push(rec);
  }
  return ds;
}

}  // namespace

TEST(Datastore, RoundTripIsBitExact) {
  auto ds = sample_cells(1, 5);
  ds.data[3] = -0.0;
  ds.data[4] = std::numeric_limits<double>::denorm_min();
  const auto back = io::decode_dataset(io::encode_dataset(ds));
  EXPECT_EQ(back.header, ds.header);
  ASSERT_EQ(back.data.size(), ds.data.size());
  EXPECT_EQ(std::memcmp(back.data.data(), ds.data.data(), ds.data.size() * 8), 0);
}

TEST(Datastore, EmptyDataset) {
  io::Dataset ds;
  ds.header.kind = "tise_potential";
  ds.header.shape = {5, 5, 5};
  const auto back = io::decode_dataset(io::encode_dataset(ds));
  EXPECT_EQ(back.count(), 0u);
  EXPECT_TRUE(back.data.empty());
}

TEST(Datastore, FileRoundTripAndKindCheck) {
  const auto path = (std::filesystem::temp_directory_path() / "sibcl_io_test.sibd").string();
  auto ds = sample_cells(3, 9);
  io::write_dataset(path, ds);
  EXPECT_EQ(io::read_dataset(path, "phc_cell").data, ds.data);
  EXPECT_THROW(io::read_dataset(path, "dos_label"), ConfigError);
  std::filesystem::remove(path);
}

TEST(Datastore, CorruptionIsIntegrityError) {
  const auto bytes = io::encode_dataset(sample_cells(2, 1));
  auto truncated = bytes.substr(0, bytes.size() - 8);
  EXPECT_THROW(io::decode_dataset(truncated), IntegrityError);
  auto flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  EXPECT_THROW(io::decode_dataset(flipped), IntegrityError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(io::decode_dataset(magic), IntegrityError);
  EXPECT_THROW(io::decode_dataset(bytes.substr(0, 12)), IntegrityError);
}

TEST(Datastore, InconsistentHeaderRejectedOnWrite) {
  auto ds = sample_cells(2, 1);
  ds.header.count = 3;
  EXPECT_THROW(io::encode_dataset(ds), ConfigError);
  EXPECT_THROW(ds.push(std::vector<double>(10)), ConfigError);
}

TEST(Datastore, EncodingIsLittleEndian) {
  io::Dataset ds;
  ds.header.kind = "x";
  ds.header.shape = {1};
  ds.push(std::vector<double>{1.0});
  const auto bytes = io::encode_dataset(ds);
  // 1.0 = 0x3FF0000000000000 stored low byte first.
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 1]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0xF0);
  EXPECT_EQ(bytes.substr(0, 4), "SIBD");
}

TEST(Checkpoint, RoundTripRestoresNetwork) {
  using namespace sibcl::nn;
  Rng r1(1), r2(2);
  std::vector<LayerSpec> specs{LayerSpec::conv2d(2, 3), LayerSpec::batchnorm(), LayerSpec::relu(),
                               LayerSpec::flatten(), LayerSpec::fc(3)};
  Network a(specs, {1, 4, 4}, r1), b(specs, {1, 4, 4}, r2);
  a.forward(Var(Tensor({2, 1, 4, 4}, Scalar(0.3))), true);  // perturb running stats
  (void)a.forward(Var(Tensor({2, 1, 4, 4}, std::vector<Scalar>(32, 0.1))), true);
  Checkpoint c;
  c.meta["epoch"] = 7;
  c.capture(a, "encoder.");
  const auto bytes = c.encode();
  EXPECT_EQ(bytes.substr(0, 4), "SIBW");
  auto back = Checkpoint::decode(bytes);
  EXPECT_EQ(back.meta["epoch"], 7);
  back.restore(b, "encoder.");
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value(), pb[i].var.value());
  for (std::size_t i = 0; i < a.buffers().size(); ++i) EXPECT_EQ(*a.buffers()[i].data, *b.buffers()[i].data);

  auto bad = bytes;
  bad[bad.size() - 1] ^= 1;
  EXPECT_THROW(Checkpoint::decode(bad), IntegrityError);
  Network other({LayerSpec::flatten(), LayerSpec::fc(4)}, {1, 4, 4}, r1);
  EXPECT_THROW(back.restore(other, "encoder."), IntegrityError);
}
