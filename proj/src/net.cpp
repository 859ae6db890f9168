#include "kad/net.hpp"

#include <cmath>

namespace kad {

namespace {

Tensor he_uniform(Shape shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Layer make_conv(std::string name, const ConvSpec& spec, bool with_bias, Rng& rng) {
  Layer l;
  l.kind = LayerKind::Conv;
  l.name = std::move(name);
  l.spec = spec;
  const int cin_g = spec.in_channels / spec.groups;
  l.weight = he_uniform({spec.out_channels, cin_g, spec.kh, spec.kw},
                        cin_g * spec.kh * spec.kw, rng);
  if (with_bias) l.bias = Tensor::zeros({spec.out_channels});
  return l;
}

Layer make_conv_transpose(std::string name, const ConvSpec& spec, bool with_bias,
                          Rng& rng) {
  Layer l;
  l.kind = LayerKind::ConvTranspose;
  l.name = std::move(name);
  l.spec = spec;
  const int cout_g = spec.out_channels / spec.groups;
  l.weight = he_uniform({spec.in_channels, cout_g, spec.kh, spec.kw},
                        cout_g * spec.kh * spec.kw, rng);
  if (with_bias) l.bias = Tensor::zeros({spec.out_channels});
  return l;
}

Layer make_batch_norm(std::string name, int channels) {
  Layer l;
  l.kind = LayerKind::BatchNorm;
  l.name = std::move(name);
  l.gamma = Tensor::full({channels}, 1.0f);
  l.beta = Tensor::zeros({channels});
  l.bn.running_mean = Tensor::zeros({channels});
  l.bn.running_var = Tensor::full({channels}, 1.0f);
  return l;
}

Layer make_relu(std::string name) {
  Layer l;
  l.kind = LayerKind::ReLU;
  l.name = std::move(name);
  return l;
}

std::vector<NamedTensor> named_params(Network& net) {
  std::vector<NamedTensor> out;
  for (auto& l : net.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::ConvTranspose:
        out.push_back({l.name + ".weight", l.weight, true});
        if (l.bias.defined()) out.push_back({l.name + ".bias", l.bias, false});
        break;
      case LayerKind::BatchNorm:
        out.push_back({l.name + ".gamma", l.gamma, false});
        out.push_back({l.name + ".beta", l.beta, false});
        break;
      case LayerKind::ReLU:
        break;
    }
  }
  return out;
}

std::vector<NamedTensor> named_buffers(Network& net) {
  std::vector<NamedTensor> out;
  for (auto& l : net.layers)
    if (l.kind == LayerKind::BatchNorm) {
      out.push_back({l.name + ".running_mean", l.bn.running_mean, false});
      out.push_back({l.name + ".running_var", l.bn.running_var, false});
    }
  return out;
}

void set_requires_grad(Network& net, bool value) {
  for (auto& p : named_params(net)) p.tensor.set_requires_grad(value);
}

int64_t param_count(Network& net) {
  int64_t n = 0;
  for (auto& p : named_params(net)) n += p.tensor.numel();
  return n;
}

Tensor forward(Network& net, const Tensor& x, Mode mode, int begin, int end) {
  if (end < 0) end = static_cast<int>(net.layers.size());
  Tensor cur = x;
  for (int i = begin; i < end; ++i) {
    Layer& l = net.layers[static_cast<size_t>(i)];
    switch (l.kind) {
      case LayerKind::Conv:
        cur = conv2d(cur, l.weight, l.bias, l.spec);
        break;
      case LayerKind::ConvTranspose:
        cur = conv_transpose2d(cur, l.weight, l.bias, l.spec);
        break;
      case LayerKind::BatchNorm:
        cur = batch_norm(cur, l.gamma, l.beta, l.bn, mode);
        break;
      case LayerKind::ReLU:
        cur = relu(cur);
        break;
    }
  }
  return cur;
}

}  // namespace kad
