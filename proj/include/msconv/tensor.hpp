#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "msconv/errors.hpp"

namespace msconv {

/// Shape of a dense 4-D tensor, (batch N, channels C, height H, width W).
struct Shape4 {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    /// Element count; throws SchemaError on overflow.
    std::int64_t numel() const;
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

class Tape;

/// Dense row-major float64 tensor. Storage is immutable after creation and
/// shared between copies. A tensor may be bound to a Tape, in which case every
/// operation consuming it records a backward rule onto that tape. Tensors
/// bound to a tape must not outlive it.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape4& shape);
    static Tensor constant(const Shape4& shape, double value);
    /// Reproducible: identical (seed, shape, stddev) yields bit-identical data.
    static Tensor randn(const Shape4& shape, std::uint64_t seed, double stddev = 1.0);
    static Tensor from_data(const Shape4& shape, std::vector<double> data);

    const Shape4& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_ ? data_->size() : 0); }
    // disabled on rvalues: the span would dangle once the temporary dies
    std::span<const double> data() const& {
        return data_ ? std::span<const double>(*data_) : std::span<const double>();
    }
    std::span<const double> data() const&& = delete;
    std::shared_ptr<const std::vector<double>> storage() const { return data_; }

    double at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const;
    /// Value of a (1,1,1,1) tensor.
    double value() const;

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

    /// Off-tape copy with data[flat_index] shifted by delta.
    Tensor perturbed(std::int64_t flat_index, double delta) const;

private:
    Shape4 shape_{};
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
    friend class Tape;
};

/// Backward rule: given the output gradient, add each input's contribution
/// into grad_in[i] (nullptr when input i is off-tape).
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<double* const> grad_in)>;

/// Append-only reverse-mode tape. Nodes are recorded in execution order;
/// backward() replays them exactly once in reverse recording order with a
/// fixed accumulation order, so gradients are bit-identical across runs.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers an off-tape tensor as a learnable leaf of this tape.
    Tensor leaf(const Tensor& value);

    /// Records an op node. Inputs bound to other tapes are an error; off-tape
    /// inputs are recorded as constants (their grad slot is nullptr).
    Tensor emit(std::span<const Tensor* const> inputs, const Shape4& shape,
                std::vector<double> data, BackwardFn fn);

    /// Reverse pass from a scalar (1,1,1,1) loss recorded on this tape.
    /// Afterwards every leaf has an accumulated (possibly zero) gradient.
    void backward(const Tensor& loss);

    /// Gradient of a tape-bound tensor after backward().
    std::span<const double> grad(const Tensor& t) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> inputs; // -1 marks an off-tape (constant) input
        std::int64_t numel = 0;
        BackwardFn fn;           // null for leaves
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool ran_ = false;
};

/// Tape shared by the given tensors, or nullptr if all are off-tape.
/// Inputs bound to two different tapes are a logic error.
Tape* common_tape(std::span<const Tensor* const> ts);

/// Throws NumericalError if any value is NaN/Inf. `op` names the producer.
void check_finite(std::span<const double> values, const char* op);

// Elementwise and shape operations. Each registers its backward rule when any
// input is tape-bound.

/// a + b. b may broadcast with shape (N,C,1,1) over a's spatial dims.
Tensor add(const Tensor& a, const Tensor& b);
/// a * b, same broadcast rule as add.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
/// Concatenates along channels; inputs must share N, H, W.
Tensor concat_channels(std::span<const Tensor> xs);
/// Channels [c0, c1) of x.
Tensor slice_channels(const Tensor& x, std::int64_t c0, std::int64_t c1);
/// Scalar (1,1,1,1) sum of all elements.
Tensor sum_all(const Tensor& x);

} // namespace msconv
