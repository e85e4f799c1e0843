#include "iseg/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace iseg {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad, Dtype dtype) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<std::size_t>(shape_numel(t.impl_->shape)), 0.0);
    t.impl_->dtype = dtype;
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad, Dtype dtype) {
    Tensor t = zeros(std::move(shape), requires_grad, dtype);
    if (dtype == Dtype::f32) value = static_cast<double>(static_cast<float>(value));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad, Dtype dtype) {
    check(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
          "from_data: shape " + shape_str(shape) + " does not match data length " +
              std::to_string(data.size()));
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->dtype = dtype;
    t.impl_->requires_grad = requires_grad;
    if (dtype == Dtype::f32) {
        for (double& v : t.impl_->data) v = static_cast<double>(static_cast<float>(v));
    }
    for (double v : t.impl_->data) check(std::isfinite(v), "from_data: non-finite value");
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad, Dtype dtype) {
    return from_data({1}, {value}, requires_grad, dtype);
}

const std::vector<double>& Tensor::grad() const {
    static const std::vector<double> kEmpty;
    return impl_->grad.empty() ? kEmpty : impl_->grad;
}

std::vector<double>& Tensor::grad_buffer() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
    check(numel() == 1, "item(): tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
}

std::int64_t Tensor::flat_index(const std::vector<std::int64_t>& idx) const {
    check(idx.size() == impl_->shape.size(), "flat_index: rank mismatch");
    std::int64_t flat = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        check(idx[k] >= 0 && idx[k] < impl_->shape[k], "flat_index: index out of bounds");
        flat = flat * impl_->shape[k] + idx[k];
    }
    return flat;
}

double Tensor::at(const std::vector<std::int64_t>& idx) const {
    return impl_->data[static_cast<std::size_t>(flat_index(idx))];
}

void Tape::backward(const Tensor& loss) {
    check(loss.defined(), "backward: undefined loss tensor");
    check(loss.numel() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
    check(!consumed_, "backward: tape already consumed");
    consumed_ = true;
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

NoTapeScope::NoTapeScope() : prev_(g_active_tape) { g_active_tape = nullptr; }

NoTapeScope::~NoTapeScope() { g_active_tape = prev_; }

}  // namespace iseg
