#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kad/ops.hpp"
#include "kad/rng.hpp"
#include "kad/tensor.hpp"

namespace kad {

// Synthetic benchmark: colored circles, rectangles and triangles on a noisy
// background. Class ids: 0 background, 1 circle, 2 rectangle, 3 triangle.
struct DatasetSpec {
  int num_train = 200;
  int num_val = 50;
  int image_size = 64;
  int num_classes = 4;
  int min_shapes = 2;
  int max_shapes = 4;
  float noise = 0.15f;
  uint64_t seed = 1234;
};

struct SegSample {
  Tensor image;  // [3,H,W] in [0,1]
  IntMask mask;  // n == 1, values in [0,K) or 255
};

// Writes <out_dir>/train/..., <out_dir>/val/... plus one manifest per split.
// Same spec (and seed) produces byte-identical files.
struct GeneratedDataset {
  std::string train_manifest;
  std::string val_manifest;
};
GeneratedDataset generate(const DatasetSpec& spec, const std::string& out_dir);

// Renders one sample; exposed for generation statistics tests.
SegSample render_sample(const DatasetSpec& spec, uint64_t sample_seed);

class Dataset {
 public:
  static Dataset load(const std::string& manifest_path);

  int size() const { return static_cast<int>(samples_.size()); }
  const SegSample& sample(int i) const { return samples_[static_cast<size_t>(i)]; }
  int num_classes() const { return spec_.num_classes; }
  int image_size() const { return spec_.image_size; }
  const DatasetSpec& spec() const { return spec_; }

 private:
  DatasetSpec spec_;
  std::vector<SegSample> samples_;
};

struct Batch {
  Tensor images;  // [B,3,H,W]
  IntMask labels;  // [B,H,W]
};

// Deterministic batch source: the batch for a given iteration is a pure
// function of (seed, iteration), independent of any call history. Epoch
// permutations and per-sample augmentation draws are derived, not streamed,
// so resume needs only the iteration counter.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, int batch_size, bool augment,
              uint64_t seed);

  Batch at(int64_t iteration) const;
  int batch_size() const { return batch_size_; }

 private:
  int sample_index(int64_t epoch, int64_t pos) const;

  const Dataset* dataset_;
  int batch_size_;
  bool augment_;
  uint64_t seed_;
  mutable int64_t cached_epoch_ = -1;
  mutable std::vector<int> cached_perm_;
};

// Horizontal flip plus scale jitter with crop/pad back to the original
// extent; the image is resampled bilinearly, the mask nearest-neighbor,
// padding uses 0 for the image and the ignore label for the mask.
SegSample augment_sample(const SegSample& in, Rng& rng, float scale_min = 0.75f,
                         float scale_max = 1.25f);

}  // namespace kad
