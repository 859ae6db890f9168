#pragma once

#include "kad/rng.hpp"
#include "kad/tensor.hpp"

namespace testutil {

inline kad::Tensor random_tensor(kad::Shape shape, kad::Rng& rng, float lo = -1.0f,
                                 float hi = 1.0f, bool requires_grad = false) {
  kad::Tensor t = kad::Tensor::zeros(std::move(shape), requires_grad);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

inline double dot(const kad::Tensor& a, const kad::Tensor& b) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    acc += static_cast<double>(a.data()[i]) * b.data()[i];
  return acc;
}

}  // namespace testutil
