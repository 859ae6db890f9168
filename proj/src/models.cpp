#include "kad/models.hpp"

#include <string>

namespace kad {

std::vector<StageConfig> resolve_output_stride(const std::vector<int>& nominal,
                                               int stem_stride, int os) {
  std::vector<StageConfig> out;
  out.reserve(nominal.size());
  int cum = stem_stride;
  int rate = 1;
  for (int nom : nominal) {
    StageConfig sc;
    if (nom > 1 && cum >= os) {
      sc.stride = 1;
      rate *= nom;
    } else {
      sc.stride = nom;
      cum *= nom;
    }
    sc.dilation = rate;
    out.push_back(sc);
  }
  if (cum != os)
    throw ConfigError("unsupported output stride " + std::to_string(os) +
                      " for this backbone (reachable: up to " +
                      std::to_string(cum) + ")");
  return out;
}

namespace {

ConvSpec conv3x3(int cin, int cout, int stride, int dilation, int groups = 1) {
  ConvSpec s;
  s.in_channels = cin;
  s.out_channels = cout;
  s.kh = s.kw = 3;
  s.sh = s.sw = stride;
  s.ph = s.pw = dilation;  // keeps stride-1 layers size-preserving
  s.dh = s.dw = dilation;
  s.groups = groups;
  return s;
}

ConvSpec conv1x1(int cin, int cout) {
  ConvSpec s;
  s.in_channels = cin;
  s.out_channels = cout;
  return s;
}

void push_conv_bn_relu(Network& net, const std::string& name, const ConvSpec& spec,
                       Rng& rng) {
  net.layers.push_back(make_conv(name + ".conv", spec, false, rng));
  net.layers.push_back(make_batch_norm(name + ".bn", spec.out_channels));
  net.layers.push_back(make_relu(name + ".relu"));
}

// Depthwise 3x3 followed by pointwise 1x1, both batch-normalized.
void push_dw_separable(Network& net, const std::string& name, int cin, int cout,
                       int stride, int dilation, Rng& rng) {
  net.layers.push_back(
      make_conv(name + ".dw", conv3x3(cin, cin, stride, dilation, cin), false, rng));
  net.layers.push_back(make_batch_norm(name + ".dw_bn", cin));
  net.layers.push_back(make_relu(name + ".dw_relu"));
  net.layers.push_back(make_conv(name + ".pw", conv1x1(cin, cout), false, rng));
  net.layers.push_back(make_batch_norm(name + ".pw_bn", cout));
  net.layers.push_back(make_relu(name + ".pw_relu"));
}

Network build_teacher(int os, int num_classes, uint64_t seed) {
  if (os != 4 && os != 8 && os != 16)
    throw ConfigError("teacher output stride must be 4, 8 or 16, got " +
                      std::to_string(os));
  const std::vector<int> nominal{2, 2, 2, 1};
  const auto stages = resolve_output_stride(nominal, 2, os);
  const int channels[4] = {16, 32, 64, 64};

  Rng rng(seed);
  Network net;
  net.arch = "teacher";
  net.output_stride = os;
  net.num_classes = num_classes;
  push_conv_bn_relu(net, "stem", conv3x3(3, 16, 2, 1), rng);
  int cin = 16;
  for (int si = 0; si < 4; ++si) {
    const std::string stage = "stage" + std::to_string(si + 1);
    for (int bi = 0; bi < 2; ++bi) {
      const std::string block = stage + ".block" + std::to_string(bi);
      const int stride = bi == 0 ? stages[static_cast<size_t>(si)].stride : 1;
      const int cout = channels[si];
      push_conv_bn_relu(net, block,
                        conv3x3(cin, cout, stride,
                                stages[static_cast<size_t>(si)].dilation),
                        rng);
      cin = cout;
    }
  }
  net.head_index = static_cast<int>(net.layers.size());
  net.layers.push_back(make_conv("head", conv1x1(cin, num_classes), true, rng));
  return net;
}

Network build_student(int os, int num_classes, uint64_t seed) {
  if (os != 8 && os != 16 && os != 32)
    throw ConfigError("student output stride must be 8, 16 or 32, got " +
                      std::to_string(os));
  const std::vector<int> nominal{2, 2, 2, 2};
  const auto stages = resolve_output_stride(nominal, 2, os);
  const int channels[4] = {8, 16, 32, 32};
  const int blocks[4] = {1, 2, 4, 4};  // late-heavy, MobileNet-style

  Rng rng(seed);
  Network net;
  net.arch = "student";
  net.output_stride = os;
  net.num_classes = num_classes;
  push_conv_bn_relu(net, "stem", conv3x3(3, 8, 2, 1), rng);
  int cin = 8;
  for (int si = 0; si < 4; ++si) {
    const std::string stage = "stage" + std::to_string(si + 1);
    for (int bi = 0; bi < blocks[si]; ++bi) {
      const std::string block = stage + ".block" + std::to_string(bi);
      const int stride = bi == 0 ? stages[static_cast<size_t>(si)].stride : 1;
      const int cout = channels[si];
      push_dw_separable(net, block, cin, cout, stride,
                        stages[static_cast<size_t>(si)].dilation, rng);
      cin = cout;
    }
  }
  net.head_index = static_cast<int>(net.layers.size());
  net.layers.push_back(make_conv("head", conv1x1(cin, num_classes), true, rng));
  return net;
}

}  // namespace

Network build_network(SegArch arch, int os, int num_classes, uint64_t seed) {
  if (num_classes < 2)
    throw ConfigError("segmenter needs at least 2 classes, got " +
                      std::to_string(num_classes));
  return arch == SegArch::Teacher ? build_teacher(os, num_classes, seed)
                                  : build_student(os, num_classes, seed);
}

TranslatorAE build_translator(int channels, uint64_t seed) {
  Rng rng(seed);
  TranslatorAE ae;
  ae.encoder.arch = "encoder";
  const int enc_strides[3] = {2, 1, 1};
  for (int i = 0; i < 3; ++i)
    push_conv_bn_relu(ae.encoder, "enc" + std::to_string(i),
                      conv3x3(channels, channels, enc_strides[i], 1), rng);

  ae.decoder.arch = "decoder";
  for (int i = 0; i < 2; ++i) {
    ConvSpec s = conv3x3(channels, channels, 1, 1);
    ae.decoder.layers.push_back(
        make_conv_transpose("dec" + std::to_string(i) + ".conv", s, false, rng));
    ae.decoder.layers.push_back(
        make_batch_norm("dec" + std::to_string(i) + ".bn", channels));
    ae.decoder.layers.push_back(make_relu("dec" + std::to_string(i) + ".relu"));
  }
  ConvSpec last = conv3x3(channels, channels, 2, 1);
  last.output_pad_h = last.output_pad_w = 1;  // restores even extents exactly
  ae.decoder.layers.push_back(make_conv_transpose("dec2.conv", last, true, rng));
  return ae;
}

Network build_adapter(const std::string& name, int in_channels, int out_channels,
                      int depth, uint64_t seed) {
  if (depth != 1 && depth != 3)
    throw ConfigError("adapter depth must be 1 or 3, got " + std::to_string(depth));
  Rng rng(seed);
  Network net;
  net.arch = name;
  int cin = in_channels;
  for (int i = 0; i < depth; ++i) {
    push_conv_bn_relu(net, "layer" + std::to_string(i),
                      conv3x3(cin, out_channels, 1, 1), rng);
    cin = out_channels;
  }
  return net;
}

Features forward_features(Network& net, const Tensor& images, Mode mode) {
  if (images.rank() != 4)
    throw ShapeError("forward_features: expects NCHW images");
  const int h = images.dim(2), w = images.dim(3);
  if (h % 32 != 0 || w % 32 != 0)
    throw ShapeError("forward_features: input " + std::to_string(h) + "x" +
                     std::to_string(w) +
                     " must be divisible by 32; pad to " +
                     std::to_string((h + 31) / 32 * 32) + "x" +
                     std::to_string((w + 31) / 32 * 32));
  if (net.head_index < 0)
    throw ShapeError("forward_features: network has no classifier head");
  Features out;
  out.features = forward(net, images, mode, 0, net.head_index);
  Tensor logits = forward(net, out.features, mode, net.head_index, -1);
  out.logits = upsample_bilinear(logits, h, w, false);
  return out;
}

Tensor translate(Network& encoder, const Tensor& teacher_features, Mode mode) {
  if (teacher_features.rank() != 4)
    throw ShapeError("translate: expects NCHW features");
  if (teacher_features.dim(2) % 2 != 0 || teacher_features.dim(3) % 2 != 0)
    throw ShapeError("translate: spatial extents must be even, got " +
                     std::to_string(teacher_features.dim(2)) + "x" +
                     std::to_string(teacher_features.dim(3)));
  return forward(encoder, teacher_features, mode);
}

void validate_grid_alignment(int teacher_os, int student_os, int input_h,
                             int input_w) {
  if (input_h % 32 != 0 || input_w % 32 != 0)
    throw ConfigError("input size must be divisible by 32, got " +
                      std::to_string(input_h) + "x" + std::to_string(input_w));
  if (2 * teacher_os != student_os)
    throw ConfigError(
        "grid alignment requires student_os == 2 * teacher_os so the encoder "
        "output and the student features coincide; got teacher_os=" +
        std::to_string(teacher_os) + ", student_os=" +
        std::to_string(student_os));
}

}  // namespace kad
