#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fibro {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
    Shape shape;
    // Shared so that reshape can alias storage without copying.
    std::shared_ptr<std::vector<double>> data;
    std::vector<double> grad;
    bool requires_grad = false;
    // Set when the tensor is the output of a node recorded on a tape.
    const Tape* tape = nullptr;

    std::vector<double>& ensure_grad();
};

} // namespace detail

/// Dense row-major f64 array. Copies are shallow handles onto the same
/// storage; leaves created with requires_grad collect gradients across
/// backward passes until zero_grad().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Mutable access for parameter updates and test perturbation. Values
    /// of tensors already consumed by a recorded node must not be changed
    /// before that tape runs backward.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    bool has_grad() const;
    /// Gradient buffer; empty span when no gradient has been accumulated.
    std::span<const double> grad() const;
    void zero_grad();

    /// Detached copy of the values, no gradient tracking.
    Tensor clone() const;

    detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    friend class Tape;

    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Single-use reverse-mode tape. Ops append nodes in execution order, which
/// is a valid topological order. backward() walks the nodes in reverse and
/// then clears the tape.
class Tape {
public:
    using BackwardFn = std::function<void(std::span<const double> out_grad)>;

    Tape() = default;
    /// A non-recording tape computes values only; nothing can be
    /// differentiated through it.
    explicit Tape(bool recording) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Builds an output tensor. When any input requires a gradient the
    /// output is recorded with `fn` and marked as requiring a gradient.
    Tensor record(Shape out_shape, std::vector<double> out_values,
                  std::vector<Tensor> inputs, BackwardFn fn);
    /// Same as record() but the output aliases `storage` (used by reshape).
    Tensor record_view(Shape out_shape, std::shared_ptr<std::vector<double>> storage,
                       std::vector<Tensor> inputs, BackwardFn fn);

    /// Seeds d(loss)/d(loss) = 1 and propagates to every leaf. Throws if
    /// `loss` is not a scalar produced by this tape or the tape was already
    /// consumed.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    struct Node {
        std::shared_ptr<detail::TensorImpl> output;
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
        BackwardFn backward;
    };

    Tensor finish(std::shared_ptr<detail::TensorImpl> out, std::vector<Tensor> inputs,
                  BackwardFn fn);

    std::vector<Node> nodes_;
    bool recording_ = true;
    bool consumed_ = false;
};

} // namespace fibro
