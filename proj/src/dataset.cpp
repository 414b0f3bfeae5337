#include "ptee/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "ptee/errors.hpp"
#include "ptee/rng.hpp"

namespace ptee {

namespace {

// Each class gets a fixed bump center on a ring plus a fixed color mix; the
// generator draws per-sample jitter and pixel noise from the seeded stream.
Dataset make_blobs(const DatasetSource& s) {
  if (s.classes < 2) throw Error("dataset", "synthetic-blobs needs at least 2 classes");
  if (s.count < 1) throw Error("dataset", "synthetic-blobs needs a positive sample count");
  if (s.image_size < 4) throw Error("dataset", "synthetic-blobs image size must be at least 4");
  if (s.channels < 1) throw Error("dataset", "synthetic-blobs needs at least 1 channel");

  const int hw = s.image_size;
  const int c = s.channels;
  Dataset out;
  out.image_shape = {c, hw, hw};
  out.images.reserve(static_cast<std::size_t>(s.count));
  out.labels.reserve(static_cast<std::size_t>(s.count));

  Rng rng(s.seed);
  const double two_pi = 2.0 * std::numbers::pi;
  const double ring = 0.30 * hw;
  const double cx0 = 0.5 * (hw - 1);
  const double sigma = 0.16 * hw;

  for (int i = 0; i < s.count; ++i) {
    const auto label = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(s.classes)));
    const double angle = two_pi * static_cast<double>(label) / s.classes;
    const double cx = cx0 + ring * std::cos(angle) + rng.normal() * 0.06 * hw;
    const double cy = cx0 + ring * std::sin(angle) + rng.normal() * 0.06 * hw;

    std::vector<float> img(static_cast<std::size_t>(c) * hw * hw);
    for (int ch = 0; ch < c; ++ch) {
      // Color mix per class: phase-shifted cosine keeps channels distinct.
      const double mix =
          0.55 + 0.45 * std::cos(angle + two_pi * static_cast<double>(ch) / std::max(c, 1));
      for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
          const double dx = x - cx;
          const double dy = y - cy;
          const double bump = mix * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          double v = bump + s.noise * rng.normal();
          v = std::clamp(v, 0.0, 1.0);
          img[(static_cast<std::size_t>(ch) * hw + y) * hw + x] = static_cast<float>(v);
        }
      }
    }
    out.images.push_back(std::move(img));
    out.labels.push_back(label);
  }
  return out;
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("dataset", "cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const auto len = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(len);
  if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(len));
  if (!in) throw Error("dataset", "failed reading '" + path + "'");
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) {
    throw Error("dataset",
                "'" + path + "' truncated at byte offset " + std::to_string(off) +
                    ": expected 4-byte big-endian field");
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

// IDX format: magic 0x00 0x00 <dtype> <ndim>, then ndim big-endian u32 dims,
// then row-major payload. Only unsigned-byte (0x08) payloads are accepted.
Dataset load_idx(const DatasetSource& s) {
  if (s.images_path.empty()) throw Error("dataset", "idx-images needs images_path");
  const auto img = read_file_bytes(s.images_path);
  const std::uint32_t magic = be32(img, 0, s.images_path);
  if ((magic >> 16) != 0) {
    throw Error("dataset", "'" + s.images_path + "' bad magic at byte offset 0");
  }
  const std::uint32_t dtype = (magic >> 8) & 0xff;
  const std::uint32_t ndim = magic & 0xff;
  if (dtype != 0x08) {
    throw Error("dataset", "'" + s.images_path + "' unsupported element type " +
                               std::to_string(dtype) + " at byte offset 2");
  }
  if (ndim < 3 || ndim > 4) {
    throw Error("dataset", "'" + s.images_path + "' expected 3 or 4 dimensions, got " +
                               std::to_string(ndim) + " at byte offset 3");
  }
  std::vector<std::uint32_t> dims(ndim);
  for (std::uint32_t d = 0; d < ndim; ++d) dims[d] = be32(img, 4 + 4 * d, s.images_path);
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndim);
  const std::size_t n = dims[0];
  const std::size_t c = ndim == 4 ? dims[1] : 1;
  const std::size_t h = ndim == 4 ? dims[2] : dims[1];
  const std::size_t w = ndim == 4 ? dims[3] : dims[2];
  const std::size_t per = c * h * w;
  if (img.size() != header + n * per) {
    throw Error("dataset", "'" + s.images_path + "' payload is " +
                               std::to_string(img.size() - header) + " bytes, dims require " +
                               std::to_string(n * per));
  }

  Dataset out;
  out.image_shape = {static_cast<std::int64_t>(c), static_cast<std::int64_t>(h),
                     static_cast<std::int64_t>(w)};
  out.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> px(per);
    const std::size_t base = header + i * per;
    for (std::size_t j = 0; j < per; ++j) px[j] = static_cast<float>(img[base + j]) / 255.0f;
    out.images.push_back(std::move(px));
  }

  if (!s.labels_path.empty()) {
    const auto lab = read_file_bytes(s.labels_path);
    const std::uint32_t lmagic = be32(lab, 0, s.labels_path);
    if ((lmagic >> 16) != 0 || ((lmagic >> 8) & 0xff) != 0x08 || (lmagic & 0xff) != 1) {
      throw Error("dataset", "'" + s.labels_path + "' is not a 1-dimensional byte IDX file");
    }
    const std::uint32_t ln = be32(lab, 4, s.labels_path);
    if (ln != n) {
      throw Error("dataset", "label count " + std::to_string(ln) + " does not match image count " +
                                 std::to_string(n));
    }
    if (lab.size() != 8 + ln) {
      throw Error("dataset", "'" + s.labels_path + "' truncated label payload");
    }
    out.labels.reserve(ln);
    for (std::uint32_t i = 0; i < ln; ++i) out.labels.push_back(lab[8 + i]);
  }
  return out;
}

// One record = 1 label byte + 3*32*32 channel-major pixel bytes (3073 total).
Dataset load_cifar(const DatasetSource& s) {
  if (s.path.empty()) throw Error("dataset", "cifar-binary needs path");
  const auto bytes = read_file_bytes(s.path);
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  if (bytes.size() % kRecord != 0) {
    throw Error("dataset", "'" + s.path + "' is " + std::to_string(bytes.size()) +
                               " bytes, not a multiple of the " + std::to_string(kRecord) +
                               "-byte record size");
  }
  std::size_t n = bytes.size() / kRecord;
  if (s.limit > 0) n = std::min(n, static_cast<std::size_t>(s.limit));

  Dataset out;
  out.image_shape = {3, 32, 32};
  out.images.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = i * kRecord;
    out.labels.push_back(bytes[base]);
    std::vector<float> px(kRecord - 1);
    for (std::size_t j = 0; j < kRecord - 1; ++j) {
      px[j] = static_cast<float>(bytes[base + 1 + j]) / 255.0f;
    }
    out.images.push_back(std::move(px));
  }
  return out;
}

}  // namespace

nn::Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw Error("dataset", "batch needs at least one index");
  const auto per = static_cast<std::size_t>(nn::shape_numel(image_shape));
  nn::Shape shape = {static_cast<std::int64_t>(indices.size())};
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  auto t = nn::Tensor::zeros(shape);
  auto v = t.values_mut();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= images.size()) throw Error("dataset", "batch index out of range");
    std::copy(images[indices[b]].begin(), images[indices[b]].end(), v.begin() + b * per);
  }
  return t;
}

nn::Tensor Dataset::one(std::size_t index) const {
  const std::size_t idx[1] = {index};
  return batch(idx);
}

Dataset load_dataset(const DatasetSource& source) {
  if (source.kind == "synthetic-blobs") return make_blobs(source);
  if (source.kind == "idx-images") return load_idx(source);
  if (source.kind == "cifar-binary") return load_cifar(source);
  throw Error("dataset", "unknown dataset kind '" + source.kind + "'");
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double fraction,
                                          std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw Error("dataset", "split fraction must be in [0,1]");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const auto val_count = static_cast<std::size_t>(std::llround(fraction * data.size()));
  Dataset train, val;
  train.image_shape = data.image_shape;
  val.image_shape = data.image_shape;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Dataset& dst = i < val_count ? val : train;
    dst.images.push_back(data.images[order[i]]);
    if (data.has_labels()) dst.labels.push_back(data.labels[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

}  // namespace ptee
