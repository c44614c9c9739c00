#include "fibro/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "fibro/error.hpp"

namespace fibro {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

std::vector<double>& TensorImpl::ensure_grad() {
    if (grad.size() != data->size()) grad.assign(data->size(), 0.0);
    return grad;
}

} // namespace detail

namespace {

void check_shape(const Shape& shape, std::size_t n_values) {
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != n_values) {
        throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(n_values));
    }
}

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> values,
                                              bool requires_grad) {
    check_shape(shape, values.size());
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::make_shared<std::vector<double>>(std::move(values));
    impl->requires_grad = requires_grad;
    return impl;
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(make_impl(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(make_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ShapeError("undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
    shape();
    return {impl_->data->data(), impl_->data->size()};
}

std::span<double> Tensor::mutable_data() {
    shape();
    return {impl_->data->data(), impl_->data->size()};
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return (*impl_->data)[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!impl_) return {};
    return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    return from(shape(), std::vector<double>(data().begin(), data().end()));
}

Tensor Tape::finish(std::shared_ptr<detail::TensorImpl> out, std::vector<Tensor> inputs,
                    BackwardFn fn) {
    if (consumed_) throw std::logic_error("tape already consumed by backward()");
    const bool any_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor& t) { return t.requires_grad(); });
    if (!any_grad || !recording_) return Tensor(std::move(out));
    out->requires_grad = true;
    out->tape = this;
    Node node;
    node.output = out;
    node.inputs.reserve(inputs.size());
    for (auto& t : inputs) node.inputs.push_back(t.impl_ptr());
    node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Tensor(std::move(out));
}

Tensor Tape::record(Shape out_shape, std::vector<double> out_values, std::vector<Tensor> inputs,
                    BackwardFn fn) {
    return finish(make_impl(std::move(out_shape), std::move(out_values), false), std::move(inputs),
                  std::move(fn));
}

Tensor Tape::record_view(Shape out_shape, std::shared_ptr<std::vector<double>> storage,
                         std::vector<Tensor> inputs, BackwardFn fn) {
    check_shape(out_shape, storage->size());
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(out_shape);
    impl->data = std::move(storage);
    return finish(std::move(impl), std::move(inputs), std::move(fn));
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw std::logic_error("tape already consumed by backward()");
    if (!loss.defined() || loss.impl()->tape != this) {
        throw std::logic_error("backward() called on a tensor that was not recorded on this tape");
    }
    if (loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    }
    const auto it = std::find_if(nodes_.begin(), nodes_.end(),
                                 [&](const Node& n) { return n.output.get() == loss.impl(); });
    if (it == nodes_.end()) {
        throw std::logic_error("backward() called on a tensor that was not recorded on this tape");
    }
    loss.impl()->ensure_grad()[0] += 1.0;
    const auto last = static_cast<std::size_t>(it - nodes_.begin());
    for (std::size_t i = last + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (node.output->grad.empty()) continue;
        node.backward({node.output->grad.data(), node.output->grad.size()});
    }
    nodes_.clear();
    consumed_ = true;
}

} // namespace fibro
