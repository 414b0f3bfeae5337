#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ptee/tensor.hpp"

namespace ptee {

// Where a dataset comes from. `kind` selects the loader:
//   synthetic-blobs  seeded generator of K gaussian color blobs
//   idx-images       IDX image file (+ optional IDX label file)
//   cifar-binary     records of 1 label byte + 3*32*32 pixel bytes
struct DatasetSource {
  std::string kind = "synthetic-blobs";

  // synthetic-blobs
  std::uint64_t seed = 7;
  int classes = 10;
  int count = 1000;
  int image_size = 16;
  int channels = 3;
  float noise = 0.15f;

  // idx-images
  std::string images_path;
  std::string labels_path;  // optional; empty means unlabeled

  // cifar-binary
  std::string path;
  int limit = 0;  // 0 = all records
};

// In-memory dataset. Images are float32 in [0, 1], layout C*H*W per sample.
// labels is empty when the source carries none.
struct Dataset {
  nn::Shape image_shape;  // [C,H,W]
  std::vector<std::vector<float>> images;
  std::vector<std::int64_t> labels;

  bool has_labels() const { return !labels.empty(); }
  std::size_t size() const { return images.size(); }

  // Stacks the given sample indices into a [B,C,H,W] tensor.
  nn::Tensor batch(std::span<const std::size_t> indices) const;
  nn::Tensor one(std::size_t index) const;
};

Dataset load_dataset(const DatasetSource& source);

// Deterministic shuffle split; `fraction` of samples go to the second
// (validation) part.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace ptee
