#include "kad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace kad {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<size_t>(shape_numel(t.impl_->shape)), value);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->shape;
}

float* Tensor::data() {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->data.data();
}

const float* Tensor::data() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->data.data();
}

float Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw ShapeError("set_requires_grad on undefined tensor");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.defined(); }

const Tensor& Tensor::grad() const {
  if (!has_grad()) throw ShapeError("tensor has no gradient");
  return impl_->grad;
}

Tensor& Tensor::ensure_grad() {
  if (!impl_) throw ShapeError("ensure_grad on undefined tensor");
  if (!impl_->grad.defined()) impl_->grad = Tensor::zeros(impl_->shape);
  return impl_->grad;
}

float* Tensor::grad_data() { return ensure_grad().data(); }

const float* Tensor::maybe_grad() const {
  return has_grad() ? impl_->grad.data() : nullptr;
}

void Tensor::zero_grad() {
  if (has_grad())
    std::fill(impl_->grad.data(), impl_->grad.data() + numel(), 0.0f);
}

void Tensor::drop_grad() {
  if (impl_) impl_->grad = Tensor();
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (!defined() || !other.defined()) return defined() == other.defined();
  if (shape() != other.shape()) return false;
  return std::memcmp(data(), other.data(),
                     sizeof(float) * static_cast<size_t>(numel())) == 0;
}

Tensor Tensor::clone() const {
  if (!impl_) return Tensor();
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

namespace {
thread_local Tape* g_current_tape = nullptr;
bool g_finite_checks = false;
}  // namespace

Tape::Tape() : prev_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::function<void()> backward) {
  ops_.push_back(std::move(backward));
}

void Tape::backward(Tensor loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward expects a scalar loss, got " +
                     shape_str(loss.shape()));
  loss.ensure_grad();
  loss.grad_data()[0] = 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

bool finite_checks_enabled() { return g_finite_checks; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }

void check_finite(const Tensor& t, const char* op_name) {
  if (!g_finite_checks) return;
  const float* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i]))
      throw NumericError(std::string(op_name) + " produced a non-finite value at index " +
                         std::to_string(i));
  }
}

}  // namespace kad
