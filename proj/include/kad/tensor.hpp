#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kad/errors.hpp"

namespace kad {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense f32 tensor with value semantics: copies share the underlying
// buffer and tensors are treated as immutable once produced by an op.
// The only sanctioned mutation is the in-place parameter update in SGD
// and the running-stat update inside batch_norm.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
  int64_t numel() const { return shape_numel(shape()); }

  float* data();
  const float* data() const;
  float item() const;  // numel() == 1

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  const Tensor& grad() const;       // throws if absent
  Tensor& ensure_grad();            // allocates zeros on first use
  float* grad_data();               // ensure_grad().data()
  const float* maybe_grad() const;  // nullptr if never allocated
  void zero_grad();                 // keeps the buffer, fills with 0
  void drop_grad();

  // Same shape and bit-identical payload.
  bool bit_equal(const Tensor& other) const;

  Tensor clone() const;  // deep copy of the payload, no grad

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

struct Tensor::Impl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  Tensor grad;
};

// Reverse-mode tape. Single-threaded by contract: one training step builds
// and consumes one tape on one thread. Ops record onto the innermost active
// tape; with no tape active, forward passes are grad-free.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(std::function<void()> backward);
  size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse,
  // accumulating into .grad of every requires_grad leaf.
  void backward(Tensor loss);

 private:
  std::vector<std::function<void()>> ops_;
  Tape* prev_ = nullptr;
};

inline bool grad_enabled_for(const Tensor& t) {
  return Tape::current() != nullptr && t.defined() && t.requires_grad();
}

// Opt-in NaN/Inf screening of op outputs (off by default: hot-loop cost).
bool finite_checks_enabled();
void set_finite_checks(bool enabled);
void check_finite(const Tensor& t, const char* op_name);

}  // namespace kad
