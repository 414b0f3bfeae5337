#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ptee/dataset.hpp"
#include "ptee/errors.hpp"

using ptee::Dataset;
using ptee::DatasetSource;
using ptee::Error;
namespace fs = std::filesystem;

namespace {

fs::path scratch_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ptee_dataset_test";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_u32_be(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

std::vector<std::uint8_t> idx_images(std::uint32_t count, std::uint32_t h, std::uint32_t w,
                                     std::uint8_t dtype = 0x08) {
  std::vector<std::uint8_t> bytes{0, 0, dtype, 3};
  push_u32_be(bytes, count);
  push_u32_be(bytes, h);
  push_u32_be(bytes, w);
  for (std::uint32_t i = 0; i < count * h * w; ++i) bytes.push_back(static_cast<std::uint8_t>(i % 256));
  return bytes;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> bytes{0, 0, 0x08, 1};
  push_u32_be(bytes, static_cast<std::uint32_t>(labels.size()));
  bytes.insert(bytes.end(), labels.begin(), labels.end());
  return bytes;
}

DatasetSource blob_source(int count = 80, int classes = 5) {
  DatasetSource src;
  src.kind = "synthetic-blobs";
  src.seed = 7;
  src.classes = classes;
  src.count = count;
  src.image_size = 16;
  src.channels = 3;
  src.noise = 0.15f;
  return src;
}

}  // namespace

TEST_CASE("synthetic blobs are deterministic, bounded and labeled") {
  const auto src = blob_source();
  auto a = ptee::load_dataset(src);
  auto b = ptee::load_dataset(src);

  CHECK(a.size() == 80);
  CHECK(a.image_shape == ptee::nn::Shape{3, 16, 16});
  CHECK(a.has_labels());
  REQUIRE(a.labels.size() == 80);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);

  std::set<std::int64_t> seen;
  for (auto l : a.labels) {
    CHECK(l >= 0);
    CHECK(l < 5);
    seen.insert(l);
  }
  CHECK(seen.size() == 5);  // 80 draws over 5 classes hit every class

  for (const auto& img : a.images)
    for (float v : img) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }

  auto other_seed = src;
  other_seed.seed = 8;
  auto c = ptee::load_dataset(other_seed);
  CHECK(c.images != a.images);
}

TEST_CASE("split_dataset cuts a deterministic validation slice") {
  auto data = ptee::load_dataset(blob_source(100));
  auto [train, val] = ptee::split_dataset(data, 0.1, 13);
  CHECK(train.size() == 90);
  CHECK(val.size() == 10);
  CHECK(train.has_labels());
  CHECK(val.has_labels());

  auto [train2, val2] = ptee::split_dataset(data, 0.1, 13);
  CHECK(train.images == train2.images);
  CHECK(val.images == val2.images);

  // Different seed, different slice (same sizes).
  auto [train3, val3] = ptee::split_dataset(data, 0.1, 14);
  CHECK(val3.size() == 10);
  CHECK(val.images != val3.images);

  // The two parts partition the original multiset of samples.
  double total = 0.0, split_total = 0.0;
  for (const auto& img : data.images)
    for (float v : img) total += v;
  for (const auto& img : train.images)
    for (float v : img) split_total += v;
  for (const auto& img : val.images)
    for (float v : img) split_total += v;
  CHECK(split_total == doctest::Approx(total).epsilon(1e-9));

  auto [all, none] = ptee::split_dataset(data, 0.0, 13);
  CHECK(all.size() == 100);
  CHECK(none.size() == 0);
}

TEST_CASE("batch stacks samples in index order") {
  auto data = ptee::load_dataset(blob_source(10));
  const std::vector<std::size_t> idx{3, 7};
  auto t = data.batch(idx);
  CHECK(t.shape() == ptee::nn::Shape{2, 3, 16, 16});
  const auto v = t.values();
  for (std::size_t i = 0; i < data.images[3].size(); ++i) {
    CHECK(v[i] == data.images[3][i]);
    CHECK(v[i + data.images[3].size()] == data.images[7][i]);
  }

  auto single = data.one(7);
  CHECK(single.shape() == ptee::nn::Shape{1, 3, 16, 16});
  CHECK(single.values()[0] == data.images[7][0]);
}

TEST_CASE("idx files load with scaling, channel handling and labels") {
  const auto images = scratch_file("tiny.idx");
  write_bytes(images, idx_images(2, 4, 4));
  const auto labels = scratch_file("tiny-labels.idx");
  write_bytes(labels, idx_labels({3, 1}));

  DatasetSource src;
  src.kind = "idx-images";
  src.images_path = images.string();
  src.labels_path = labels.string();
  auto data = ptee::load_dataset(src);

  CHECK(data.size() == 2);
  CHECK(data.image_shape == ptee::nn::Shape{1, 4, 4});
  CHECK(data.labels == std::vector<std::int64_t>{3, 1});
  CHECK(data.images[0][0] == doctest::Approx(0.0f));
  CHECK(data.images[0][5] == doctest::Approx(5.0f / 255.0f));

  // Without a label file the dataset is unlabeled.
  src.labels_path.clear();
  CHECK(!ptee::load_dataset(src).has_labels());

  // 4-D layout carries explicit channels.
  std::vector<std::uint8_t> four{0, 0, 0x08, 4};
  push_u32_be(four, 2);
  push_u32_be(four, 3);
  push_u32_be(four, 4);
  push_u32_be(four, 4);
  for (int i = 0; i < 2 * 3 * 4 * 4; ++i) four.push_back(7);
  const auto images4 = scratch_file("tiny4.idx");
  write_bytes(images4, four);
  src.images_path = images4.string();
  CHECK(ptee::load_dataset(src).image_shape == ptee::nn::Shape{3, 4, 4});
}

TEST_CASE("idx parsing failures carry precise diagnostics") {
  DatasetSource src;
  src.kind = "idx-images";

  const auto bad_dtype = scratch_file("bad-dtype.idx");
  write_bytes(bad_dtype, idx_images(1, 2, 2, /*dtype=*/0x0D));
  src.images_path = bad_dtype.string();
  CHECK_THROWS_AS(ptee::load_dataset(src), Error);

  auto truncated_bytes = idx_images(4, 4, 4);
  truncated_bytes.resize(truncated_bytes.size() - 10);
  const auto truncated = scratch_file("truncated.idx");
  write_bytes(truncated, truncated_bytes);
  src.images_path = truncated.string();
  CHECK_THROWS_WITH_AS(ptee::load_dataset(src), doctest::Contains("byte"), Error);

  const auto images = scratch_file("pair.idx");
  write_bytes(images, idx_images(2, 4, 4));
  const auto labels = scratch_file("pair-labels.idx");
  write_bytes(labels, idx_labels({1, 2, 3}));  // three labels for two images
  src.images_path = images.string();
  src.labels_path = labels.string();
  CHECK_THROWS_AS(ptee::load_dataset(src), Error);

  src.images_path = "/nonexistent/file.idx";
  src.labels_path.clear();
  CHECK_THROWS_AS(ptee::load_dataset(src), Error);
}

TEST_CASE("cifar records split into label byte plus planes") {
  std::vector<std::uint8_t> bytes;
  for (std::uint8_t r = 0; r < 10; ++r) {
    bytes.push_back(r);  // label
    for (int i = 0; i < 3 * 32 * 32; ++i) bytes.push_back(static_cast<std::uint8_t>((r + i) % 256));
  }
  REQUIRE(bytes.size() == 30730);
  const auto path = scratch_file("batch.bin");
  write_bytes(path, bytes);

  DatasetSource src;
  src.kind = "cifar-binary";
  src.path = path.string();
  auto data = ptee::load_dataset(src);
  CHECK(data.size() == 10);
  CHECK(data.image_shape == ptee::nn::Shape{3, 32, 32});
  CHECK(data.labels[4] == 4);
  CHECK(data.images[1][0] == doctest::Approx(1.0f / 255.0f));

  src.limit = 3;
  CHECK(ptee::load_dataset(src).size() == 3);

  // A trailing partial record means the file is not CIFAR-shaped.
  bytes.push_back(0);
  write_bytes(path, bytes);
  src.limit = 0;
  CHECK_THROWS_AS(ptee::load_dataset(src), Error);
}

TEST_CASE("unknown dataset kinds are rejected") {
  DatasetSource src;
  src.kind = "imagenet-lmdb";
  CHECK_THROWS_AS(ptee::load_dataset(src), Error);
}
