#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "paa/rng.hpp"
#include "paa/tensor.hpp"

namespace paa::data {

struct DatasetSplit {
  Tensor images;  // [B,C,H,W] in [0,1]
  Tensor labels;  // [B,classes] one-hot
  long num_classes = 0;

  long size() const { return images.dim(0); }
};

namespace detail {

inline constexpr long kCifarRecord = 3073;  // 1 label byte + 3*1024 pixels

inline void parse_cifar_file(const std::filesystem::path& path,
                             std::vector<float>& pixels,
                             std::vector<long>& labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  long bytes = static_cast<long>(in.tellg());
  in.seekg(0);
  if (bytes % kCifarRecord != 0)
    throw std::runtime_error(path.string() + ": size " + std::to_string(bytes) +
                             " is not a multiple of 3073");
  long count = bytes / kCifarRecord;
  std::vector<unsigned char> rec(kCifarRecord);
  for (long i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(rec.data()), kCifarRecord);
    if (!in) throw std::runtime_error(path.string() + ": truncated record");
    if (rec[0] > 9)
      throw std::runtime_error(path.string() + ": label byte " +
                               std::to_string(int(rec[0])) + " > 9");
    labels.push_back(rec[0]);
    for (long j = 1; j < kCifarRecord; ++j)
      pixels.push_back(float(rec[j]) / 255.0f);
  }
}

inline DatasetSplit assemble(std::vector<float> pixels,
                             const std::vector<long>& labels,
                             long num_classes, long subset_per_class) {
  long count = static_cast<long>(labels.size());
  std::vector<long> keep;
  if (subset_per_class > 0) {
    std::vector<long> per_class(num_classes, 0);
    for (long i = 0; i < count; ++i)
      if (per_class[labels[i]]++ < subset_per_class) keep.push_back(i);
  } else {
    for (long i = 0; i < count; ++i) keep.push_back(i);
  }
  long n = static_cast<long>(keep.size());
  DatasetSplit split;
  split.num_classes = num_classes;
  split.images = Tensor::zeros({n, 3, 32, 32});
  split.labels = Tensor::zeros({n, num_classes});
  long img = 3 * 32 * 32;
  for (long i = 0; i < n; ++i) {
    std::copy_n(pixels.data() + keep[i] * img, img,
                split.images.data() + i * img);
    split.labels[i * num_classes + labels[keep[i]]] = 1.0f;
  }
  return split;
}

}  // namespace detail

// CIFAR-10 binary layout: 3073-byte records, label byte then R,G,B planes.
inline std::pair<DatasetSplit, DatasetSplit> load_cifar10(
    const std::string& dir, long subset_per_class = 0) {
  namespace fs = std::filesystem;
  fs::path root(dir);
  if (!fs::is_directory(root))
    throw std::runtime_error("cifar10 directory not found: " + dir);
  std::vector<float> train_px, test_px;
  std::vector<long> train_y, test_y;
  bool any = false;
  for (int i = 1; i <= 5; ++i) {
    fs::path p = root / ("data_batch_" + std::to_string(i) + ".bin");
    if (fs::exists(p)) {
      detail::parse_cifar_file(p, train_px, train_y);
      any = true;
    }
  }
  if (!any)
    throw std::runtime_error("no data_batch_*.bin files under " + dir);
  fs::path tp = root / "test_batch.bin";
  if (fs::exists(tp)) detail::parse_cifar_file(tp, test_px, test_y);
  DatasetSplit train =
      detail::assemble(std::move(train_px), train_y, 10, subset_per_class);
  DatasetSplit test =
      detail::assemble(std::move(test_px), test_y, 10, subset_per_class);
  return {std::move(train), std::move(test)};
}

// Procedural 32x32 dataset: each class pairs a shape with a color; position,
// size and background vary per sample. Deterministic per seed, balanced
// round-robin class assignment.
inline DatasetSplit make_synth_dataset(long n, long num_classes,
                                       std::uint64_t seed) {
  if (n < num_classes)
    throw std::invalid_argument("make_synth_dataset: n < num_classes");
  const long hw = 32;
  DatasetSplit split;
  split.num_classes = num_classes;
  split.images = Tensor::zeros({n, 3, hw, hw});
  split.labels = Tensor::zeros({n, num_classes});

  static const float palette[6][3] = {{0.9f, 0.15f, 0.15f}, {0.15f, 0.9f, 0.15f},
                                      {0.15f, 0.25f, 0.9f}, {0.9f, 0.9f, 0.2f},
                                      {0.85f, 0.2f, 0.85f}, {0.2f, 0.85f, 0.85f}};
  for (long i = 0; i < n; ++i) {
    long cls = i % num_classes;  // round robin
    split.labels[i * num_classes + cls] = 1.0f;
    CounterRng rng(CounterRng::derive_key(seed, {static_cast<std::uint64_t>(i), 7}));
    float bg = static_cast<float>(rng.uniform(0.0, 0.25));
    float* img = split.images.data() + i * 3 * hw * hw;
    for (long j = 0; j < 3 * hw * hw; ++j)
      img[j] = bg + static_cast<float>(rng.uniform(0.0, 0.08));

    int shape = static_cast<int>(cls % 3);  // 0 circle, 1 square, 2 triangle
    const float* color = palette[cls % 6];
    double cx = rng.uniform(10.0, 22.0);
    double cy = rng.uniform(10.0, 22.0);
    double radius = rng.uniform(5.0, 9.0);
    for (long y = 0; y < hw; ++y)
      for (long x = 0; x < hw; ++x) {
        double dx = double(x) - cx, dy = double(y) - cy;
        bool inside = false;
        if (shape == 0) {
          inside = dx * dx + dy * dy <= radius * radius;
        } else if (shape == 1) {
          inside = std::abs(dx) <= radius && std::abs(dy) <= radius;
        } else {
          inside = dy >= -radius && std::abs(dx) <= (dy + radius) * 0.6;
          inside = inside && dy <= radius;
        }
        if (inside)
          for (long ch = 0; ch < 3; ++ch)
            img[ch * hw * hw + y * hw + x] = color[ch];
      }
  }
  return split;
}

inline DatasetSplit take(const DatasetSplit& src, long begin, long count) {
  DatasetSplit out;
  out.num_classes = src.num_classes;
  long img = src.images.numel() / src.images.dim(0);
  long lab = src.num_classes;
  Shape is = src.images.shape();
  is[0] = count;
  out.images = Tensor::zeros(is);
  out.labels = Tensor::zeros({count, lab});
  std::copy_n(src.images.data() + begin * img, count * img, out.images.data());
  std::copy_n(src.labels.data() + begin * lab, count * lab, out.labels.data());
  return out;
}

}  // namespace paa::data
