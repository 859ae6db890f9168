#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kad/data.hpp"
#include "kad/net.hpp"
#include "kad/pnm.hpp"

namespace kad {

// K x K integer counts; rows are ground truth, columns are predictions.
// Ignore-labeled pixels are never scored.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(const IntMask& truth, const IntMask& prediction,
           int ignore = kIgnoreLabel);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return k_; }
  int64_t at(int truth, int prediction) const {
    return counts_[static_cast<size_t>(truth) * k_ + prediction];
  }
  int64_t total() const;

 private:
  int k_;
  std::vector<int64_t> counts_;
};

struct MiouReport {
  std::vector<double> per_class;  // IoU per class; meaningful when present
  std::vector<bool> present;      // class appears in truth or prediction
  double mean = 0.0;
};

// IoU_k = TP / (TP + FP + FN); classes absent from both sides are excluded
// from the mean. Throws on an empty confusion matrix.
MiouReport miou(const ConfusionMatrix& conf);

std::string format_miou_report(const MiouReport& r);

struct LayerCost {
  std::string name;
  int64_t macs = 0;         // multiply-accumulates (convolutions)
  int64_t params = 0;
  int64_t elementwise = 0;  // BN / ReLU / upsample element operations
  int out_c = 0, out_h = 0, out_w = 0;
};

struct FlopsReport {
  std::string arch;
  int output_stride = 0;
  int input_h = 0, input_w = 0;
  std::vector<LayerCost> layers;
  int64_t total_macs = 0;
  int64_t total_params = 0;
  int64_t total_elementwise = 0;

  int64_t total_flops() const { return 2 * total_macs; }
};

// Pure shape analysis; parameter values play no role.
FlopsReport count_flops(const Network& net, int input_h, int input_w);

std::string format_flops_report(const FlopsReport& r);

// Similarity of every position to the queried one, min-max scaled to
// [0,255] and bilinearly upsampled to (out_h, out_w). features [1,c,h,w].
ImageU8 affinity_map(const Tensor& features, int row, int col, int out_h,
                     int out_w);

struct EvalResult {
  ConfusionMatrix confusion;
  MiouReport report;
};

// Single-scale evaluation over a whole dataset, one image at a time.
EvalResult evaluate(Network& net, const Dataset& dataset);

// Argmax over the class axis of [1,K,H,W] logits.
IntMask predict_mask(const Tensor& logits);

}  // namespace kad
