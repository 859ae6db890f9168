#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kad/ops.hpp"
#include "kad/rng.hpp"
#include "kad/tensor.hpp"

namespace kad {

enum class LayerKind { Conv, ConvTranspose, BatchNorm, ReLU };

struct Layer {
  LayerKind kind = LayerKind::ReLU;
  std::string name;
  ConvSpec spec;        // Conv / ConvTranspose
  Tensor weight, bias;  // Conv / ConvTranspose (bias optional)
  Tensor gamma, beta;   // BatchNorm
  BatchNormState bn;    // BatchNorm
};

// An ordered layer pipeline with a named parameter registry. Segmenter
// networks carry a trailing 1x1 classifier conv marked by head_index;
// plain pipelines (translator halves, adapters) have head_index == -1.
struct Network {
  std::string arch;
  int output_stride = 0;
  int num_classes = 0;
  int head_index = -1;
  std::vector<Layer> layers;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool decay = false;  // weight decay applies to conv weights only
};

std::vector<NamedTensor> named_params(Network& net);
std::vector<NamedTensor> named_buffers(Network& net);
void set_requires_grad(Network& net, bool value);
int64_t param_count(Network& net);

// Applies layers [begin, end); end == -1 runs the whole pipeline.
Tensor forward(Network& net, const Tensor& x, Mode mode, int begin = 0,
               int end = -1);

// Layer factories; weights drawn He-uniform from rng, BN at identity.
Layer make_conv(std::string name, const ConvSpec& spec, bool with_bias, Rng& rng);
Layer make_conv_transpose(std::string name, const ConvSpec& spec, bool with_bias,
                          Rng& rng);
Layer make_batch_norm(std::string name, int channels);
Layer make_relu(std::string name);

}  // namespace kad
