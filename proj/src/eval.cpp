#include "kad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "kad/distill.hpp"
#include "kad/models.hpp"

namespace kad {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs >= 1 class");
  counts_.assign(static_cast<size_t>(k_) * k_, 0);
}

void ConfusionMatrix::add(const IntMask& truth, const IntMask& prediction,
                          int ignore) {
  if (truth.v.size() != prediction.v.size())
    throw ShapeError("confusion add: truth and prediction sizes differ");
  for (size_t i = 0; i < truth.v.size(); ++i) {
    const int32_t t = truth.v[i];
    if (t == ignore) continue;
    const int32_t p = prediction.v[i];
    if (t < 0 || t >= k_ || p < 0 || p >= k_)
      throw ShapeError("confusion add: label " + std::to_string(t) + "/" +
                       std::to_string(p) + " outside [0," + std::to_string(k_) +
                       ")");
    ++counts_[static_cast<size_t>(t) * k_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_)
    throw ShapeError("confusion merge: class counts differ");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts_) t += c;
  return t;
}

MiouReport miou(const ConfusionMatrix& conf) {
  if (conf.total() == 0)
    throw NumericError("miou: no scored pixels in the confusion matrix");
  const int k = conf.num_classes();
  MiouReport r;
  r.per_class.assign(static_cast<size_t>(k), 0.0);
  r.present.assign(static_cast<size_t>(k), false);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < k; ++c) {
    const int64_t tp = conf.at(c, c);
    int64_t fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += conf.at(o, c);
      fn += conf.at(c, o);
    }
    const int64_t uni = tp + fp + fn;
    if (uni == 0) continue;  // absent from truth and prediction
    r.present[static_cast<size_t>(c)] = true;
    r.per_class[static_cast<size_t>(c)] =
        static_cast<double>(tp) / static_cast<double>(uni);
    sum += r.per_class[static_cast<size_t>(c)];
    ++counted;
  }
  r.mean = counted ? sum / counted : 0.0;
  return r;
}

std::string format_miou_report(const MiouReport& r) {
  std::ostringstream os;
  char buf[64];
  for (size_t c = 0; c < r.per_class.size(); ++c) {
    if (r.present[c])
      std::snprintf(buf, sizeof(buf), "class_%zu iou=%.6f\n", c, r.per_class[c]);
    else
      std::snprintf(buf, sizeof(buf), "class_%zu iou=absent\n", c);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "miou=%.6f\n", r.mean);
  os << buf;
  return os.str();
}

FlopsReport count_flops(const Network& net, int input_h, int input_w) {
  FlopsReport rep;
  rep.arch = net.arch;
  rep.output_stride = net.output_stride;
  rep.input_h = input_h;
  rep.input_w = input_w;

  int c = net.layers.empty() ? 0 : net.layers.front().spec.in_channels;
  int h = input_h, w = input_w;

  for (const Layer& l : net.layers) {
    LayerCost cost;
    cost.name = l.name;
    switch (l.kind) {
      case LayerKind::Conv: {
        const auto hw = l.spec.conv_out_hw(h, w);
        if (hw.first <= 0 || hw.second <= 0)
          throw ShapeError("count_flops: layer " + l.name +
                           " produces an empty output for input " +
                           std::to_string(h) + "x" + std::to_string(w));
        cost.macs = static_cast<int64_t>(l.spec.kh) * l.spec.kw *
                    (l.spec.in_channels / l.spec.groups) * l.spec.out_channels *
                    hw.first * hw.second;
        cost.params = l.weight.numel() + (l.bias.defined() ? l.bias.numel() : 0);
        c = l.spec.out_channels;
        h = hw.first;
        w = hw.second;
        break;
      }
      case LayerKind::ConvTranspose: {
        const auto hw = l.spec.deconv_out_hw(h, w);
        if (hw.first <= 0 || hw.second <= 0)
          throw ShapeError("count_flops: layer " + l.name +
                           " produces an empty output");
        cost.macs = static_cast<int64_t>(l.spec.kh) * l.spec.kw *
                    (l.spec.out_channels / l.spec.groups) * l.spec.in_channels *
                    h * w;
        cost.params = l.weight.numel() + (l.bias.defined() ? l.bias.numel() : 0);
        c = l.spec.out_channels;
        h = hw.first;
        w = hw.second;
        break;
      }
      case LayerKind::BatchNorm:
        cost.elementwise = 2ll * c * h * w;  // scale and shift per element
        cost.params = l.gamma.numel() + l.beta.numel();
        break;
      case LayerKind::ReLU:
        cost.elementwise = static_cast<int64_t>(c) * h * w;
        break;
    }
    cost.out_c = c;
    cost.out_h = h;
    cost.out_w = w;
    rep.layers.push_back(cost);
    rep.total_macs += cost.macs;
    rep.total_params += cost.params;
    rep.total_elementwise += cost.elementwise;
  }

  if (net.head_index >= 0) {
    // bilinear restoration of the logits to input resolution
    LayerCost up;
    up.name = "logits_upsample";
    up.elementwise = static_cast<int64_t>(c) * input_h * input_w;
    up.out_c = c;
    up.out_h = input_h;
    up.out_w = input_w;
    rep.layers.push_back(up);
    rep.total_elementwise += up.elementwise;
  }
  return rep;
}

std::string format_flops_report(const FlopsReport& r) {
  std::ostringstream os;
  char buf[192];
  std::snprintf(buf, sizeof(buf), "arch=%s os=%d input=%dx%d\n", r.arch.c_str(),
                r.output_stride, r.input_h, r.input_w);
  os << buf;
  for (const auto& l : r.layers) {
    std::snprintf(buf, sizeof(buf),
                  "layer=%s out=%dx%dx%d macs=%lld params=%lld elementwise=%lld\n",
                  l.name.c_str(), l.out_c, l.out_h, l.out_w,
                  static_cast<long long>(l.macs), static_cast<long long>(l.params),
                  static_cast<long long>(l.elementwise));
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "total_macs=%lld total_flops=%lld total_params=%lld "
                "total_elementwise=%lld\n",
                static_cast<long long>(r.total_macs),
                static_cast<long long>(r.total_flops()),
                static_cast<long long>(r.total_params),
                static_cast<long long>(r.total_elementwise));
  os << buf;
  return os.str();
}

ImageU8 affinity_map(const Tensor& features, int row, int col, int out_h,
                     int out_w) {
  if (features.rank() != 4 || features.dim(0) != 1)
    throw ShapeError("affinity_map: expects [1,c,h,w] features");
  const int h = features.dim(2), w = features.dim(3);
  if (row < 0 || row >= h || col < 0 || col >= w)
    throw ShapeError("affinity_map: point (" + std::to_string(row) + "," +
                     std::to_string(col) + ") outside the " + std::to_string(h) +
                     "x" + std::to_string(w) + " grid");
  AffinityMatrix a = affinity_matrix(features);
  const int m = h * w;
  const int query = row * w + col;

  Tensor map = Tensor::zeros({1, 1, h, w});
  float lo = a.matrix.data()[query * m + 0], hi = lo;
  for (int j = 0; j < m; ++j) {
    const float v = a.matrix.data()[query * m + j];
    map.data()[j] = v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi - lo;
  for (int j = 0; j < m; ++j)
    map.data()[j] = range > 0 ? (map.data()[j] - lo) / range : 1.0f;

  Tensor big = upsample_bilinear(map, out_h, out_w, false);
  ImageU8 img;
  img.channels = 1;
  img.h = out_h;
  img.w = out_w;
  img.pixels.resize(static_cast<size_t>(out_h) * out_w);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<uint8_t>(
        std::lround(std::clamp(big.data()[i], 0.0f, 1.0f) * 255.0f));
  return img;
}

IntMask predict_mask(const Tensor& logits) {
  if (logits.rank() != 4 || logits.dim(0) != 1)
    throw ShapeError("predict_mask: expects [1,K,H,W] logits");
  const int k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  IntMask m;
  m.n = 1;
  m.h = h;
  m.w = w;
  m.v.resize(static_cast<size_t>(plane));
  for (int64_t p = 0; p < plane; ++p) {
    int best = 0;
    float best_v = logits.data()[p];
    for (int ki = 1; ki < k; ++ki) {
      const float v = logits.data()[ki * plane + p];
      if (v > best_v) {
        best_v = v;
        best = ki;
      }
    }
    m.v[static_cast<size_t>(p)] = best;
  }
  return m;
}

EvalResult evaluate(Network& net, const Dataset& dataset) {
  if (net.num_classes != dataset.num_classes())
    throw ConfigError("evaluate: network predicts " +
                      std::to_string(net.num_classes) + " classes but the "
                      "dataset defines " + std::to_string(dataset.num_classes()));
  ConfusionMatrix conf(net.num_classes);
  const int hw = dataset.image_size();
  for (int i = 0; i < dataset.size(); ++i) {
    const SegSample& s = dataset.sample(i);
    Tensor batched = Tensor::zeros({1, 3, hw, hw});
    std::copy(s.image.data(), s.image.data() + s.image.numel(), batched.data());
    Features f = forward_features(net, batched, Mode::Eval);
    conf.add(s.mask, predict_mask(f.logits));
  }
  EvalResult out{conf, miou(conf)};
  return out;
}

}  // namespace kad
