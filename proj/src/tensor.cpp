#include "msconv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "msconv/rng.hpp"

namespace msconv {

std::int64_t Shape4::numel() const {
    if (n < 0 || c < 0 || h < 0 || w < 0)
        throw SchemaError("negative dimension in shape " + str());
    __int128 p = static_cast<__int128>(n) * c;
    p *= h;
    p *= w;
    if (p > static_cast<__int128>(std::numeric_limits<std::int64_t>::max()))
        throw SchemaError("element count overflow for shape " + str());
    return static_cast<std::int64_t>(p);
}

std::string Shape4::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

void check_finite(std::span<const double> values, const char* op) {
    for (double v : values)
        if (!std::isfinite(v))
            throw NumericalError(std::string("non-finite value produced by ") + op);
}

Tensor Tensor::zeros(const Shape4& shape) {
    return from_data(shape, std::vector<double>(static_cast<std::size_t>(shape.numel()), 0.0));
}

Tensor Tensor::constant(const Shape4& shape, double value) {
    return from_data(shape, std::vector<double>(static_cast<std::size_t>(shape.numel()), value));
}

Tensor Tensor::randn(const Shape4& shape, std::uint64_t seed, double stddev) {
    std::vector<double> data(static_cast<std::size_t>(shape.numel()));
    fill_normal(data, seed, stddev);
    return from_data(shape, std::move(data));
}

Tensor Tensor::from_data(const Shape4& shape, std::vector<double> data) {
    if (static_cast<std::int64_t>(data.size()) != shape.numel())
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape.str());
    check_finite(data, "tensor construction");
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::make_shared<const std::vector<double>>(std::move(data));
    return t;
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    if (n < 0 || n >= shape_.n || c < 0 || c >= shape_.c || y < 0 || y >= shape_.h || x < 0 ||
        x >= shape_.w)
        throw ShapeError("index out of bounds for shape " + shape_.str());
    return (*data_)[static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + y) * shape_.w + x)];
}

double Tensor::value() const {
    if (!(shape_ == Shape4{1, 1, 1, 1}))
        throw ShapeError("value() requires shape (1,1,1,1), got " + shape_.str());
    return (*data_)[0];
}

Tensor Tensor::perturbed(std::int64_t flat_index, double delta) const {
    if (flat_index < 0 || flat_index >= numel())
        throw ShapeError("perturbed index out of range");
    std::vector<double> d = *data_;
    d[static_cast<std::size_t>(flat_index)] += delta;
    return from_data(shape_, std::move(d));
}

Tape* common_tape(std::span<const Tensor* const> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t || !t->on_tape()) continue;
        if (!tape)
            tape = t->tape();
        else if (tape != t->tape())
            throw std::logic_error("operation mixes tensors from two tapes");
    }
    return tape;
}

Tensor Tape::leaf(const Tensor& value) {
    if (value.on_tape()) throw std::logic_error("leaf() argument is already tape-bound");
    Tensor t = value;
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, value.numel(), nullptr});
    return t;
}

Tensor Tape::emit(std::span<const Tensor* const> inputs, const Shape4& shape,
                  std::vector<double> data, BackwardFn fn) {
    if (static_cast<std::int64_t>(data.size()) != shape.numel())
        throw ShapeError("emit: data length does not match shape " + shape.str());
    check_finite(data, "operation");
    Node node;
    node.inputs.reserve(inputs.size());
    for (const Tensor* in : inputs) {
        if (in->on_tape()) {
            if (in->tape() != this) throw std::logic_error("emit: input bound to another tape");
            // Append-only topological order; a cycle is impossible.
            if (in->node() >= static_cast<int>(nodes_.size()))
                throw std::logic_error("emit: input recorded after its consumer");
            node.inputs.push_back(in->node());
        } else {
            node.inputs.push_back(-1);
        }
    }
    node.numel = shape.numel();
    node.fn = std::move(fn);
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::make_shared<const std::vector<double>>(std::move(data));
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
    return t;
}

void Tape::backward(const Tensor& loss) {
    if (loss.tape() != this) throw std::logic_error("backward: loss not recorded on this tape");
    if (!(loss.shape() == Shape4{1, 1, 1, 1}))
        throw ShapeError("backward: loss must be scalar (1,1,1,1), got " + loss.shape().str());

    grads_.assign(nodes_.size(), {});
    grads_[static_cast<std::size_t>(loss.node())] = {1.0};

    std::vector<double*> slots;
    for (int i = loss.node(); i >= 0; --i) {
        const Node& node = nodes_[static_cast<std::size_t>(i)];
        auto& gout = grads_[static_cast<std::size_t>(i)];
        if (gout.empty() || !node.fn) continue;
        slots.clear();
        for (int in : node.inputs) {
            if (in < 0) {
                slots.push_back(nullptr);
                continue;
            }
            auto& gin = grads_[static_cast<std::size_t>(in)];
            if (gin.empty())
                gin.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(in)].numel),
                           0.0);
            slots.push_back(gin.data());
        }
        node.fn(std::span<const double>(gout), std::span<double* const>(slots));
    }

    // Every leaf reports a gradient, zero when unreachable from the loss.
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (!nodes_[i].fn && grads_[i].empty())
            grads_[i].assign(static_cast<std::size_t>(nodes_[i].numel), 0.0);
    ran_ = true;
}

std::span<const double> Tape::grad(const Tensor& t) const {
    if (t.tape() != this) throw std::logic_error("grad: tensor not recorded on this tape");
    if (!ran_) throw std::logic_error("grad: backward() has not run");
    const auto& g = grads_[static_cast<std::size_t>(t.node())];
    if (g.empty() && t.numel() != 0)
        throw std::logic_error("grad: no gradient recorded for this node");
    return g;
}

namespace {

// b broadcasts over a's spatial dims when shaped (N,C,1,1).
bool is_spatial_broadcast(const Shape4& a, const Shape4& b) {
    return b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1 && (a.h != 1 || a.w != 1);
}

enum class EwKind { Add, Mul };

Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind) {
    const Shape4 as = a.shape();
    const Shape4 bs = b.shape();
    const char* name = kind == EwKind::Add ? "add" : "mul";
    const bool bcast = !(as == bs) && is_spatial_broadcast(as, bs);
    if (!(as == bs) && !bcast)
        throw ShapeError(std::string(name) + ": incompatible shapes " + as.str() + " and " +
                         bs.str());

    const auto av = a.data();
    const auto bv = b.data();
    const std::int64_t hw = as.h * as.w;
    std::vector<double> out(av.size());
    if (!bcast) {
        if (kind == EwKind::Add)
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
        else
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    } else {
        for (std::int64_t nc = 0; nc < as.n * as.c; ++nc) {
            const double s = bv[static_cast<std::size_t>(nc)];
            const std::int64_t base = nc * hw;
            if (kind == EwKind::Add)
                for (std::int64_t i = 0; i < hw; ++i)
                    out[static_cast<std::size_t>(base + i)] =
                        av[static_cast<std::size_t>(base + i)] + s;
            else
                for (std::int64_t i = 0; i < hw; ++i)
                    out[static_cast<std::size_t>(base + i)] =
                        av[static_cast<std::size_t>(base + i)] * s;
        }
    }

    const Tensor* ins[] = {&a, &b};
    Tape* tp = common_tape(ins);
    if (!tp) return Tensor::from_data(as, std::move(out));

    auto adata = a.storage();
    auto bdata = b.storage();
    return tp->emit(
        ins, as, std::move(out),
        [kind, bcast, as, hw, adata, bdata](std::span<const double> g,
                                            std::span<double* const> gin) {
            double* ga = gin[0];
            double* gb = gin[1];
            if (kind == EwKind::Add) {
                if (ga)
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                if (gb) {
                    if (!bcast)
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    else
                        for (std::int64_t nc = 0; nc < as.n * as.c; ++nc) {
                            double s = 0.0;
                            for (std::int64_t i = 0; i < hw; ++i)
                                s += g[static_cast<std::size_t>(nc * hw + i)];
                            gb[static_cast<std::size_t>(nc)] += s;
                        }
                }
            } else {
                const auto& av = *adata;
                const auto& bv = *bdata;
                if (!bcast) {
                    if (ga)
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                    if (gb)
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                } else {
                    for (std::int64_t nc = 0; nc < as.n * as.c; ++nc) {
                        const double s = bv[static_cast<std::size_t>(nc)];
                        const std::int64_t base = nc * hw;
                        if (ga)
                            for (std::int64_t i = 0; i < hw; ++i)
                                ga[static_cast<std::size_t>(base + i)] +=
                                    g[static_cast<std::size_t>(base + i)] * s;
                        if (gb) {
                            double acc = 0.0;
                            for (std::int64_t i = 0; i < hw; ++i)
                                acc += g[static_cast<std::size_t>(base + i)] *
                                       av[static_cast<std::size_t>(base + i)];
                            gb[static_cast<std::size_t>(nc)] += acc;
                        }
                    }
                }
            }
        });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Add); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Mul); }

Tensor sigmoid(const Tensor& x) {
    // Strictly inside (0,1) even at saturation.
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv[i];
        double s;
        if (v >= 0.0) {
            s = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            s = e / (1.0 + e);
        }
        out[i] = std::clamp(s, lo, hi);
    }
    const Tensor* ins[] = {&x};
    Tape* tp = common_tape(ins);
    if (!tp) return Tensor::from_data(x.shape(), std::move(out));
    auto sdata = std::make_shared<std::vector<double>>(out);
    return tp->emit(ins, x.shape(), std::move(out),
                    [sdata](std::span<const double> g, std::span<double* const> gin) {
                        if (!gin[0]) return;
                        const auto& s = *sdata;
                        for (std::size_t i = 0; i < g.size(); ++i)
                            gin[0][i] += g[i] * s[i] * (1.0 - s[i]);
                    });
}

Tensor relu(const Tensor& x) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    const Tensor* ins[] = {&x};
    Tape* tp = common_tape(ins);
    if (!tp) return Tensor::from_data(x.shape(), std::move(out));
    auto xdata = x.storage();
    return tp->emit(ins, x.shape(), std::move(out),
                    [xdata](std::span<const double> g, std::span<double* const> gin) {
                        if (!gin[0]) return;
                        const auto& xs = *xdata;
                        for (std::size_t i = 0; i < g.size(); ++i)
                            if (xs[i] > 0.0) gin[0][i] += g[i];
                    });
}

Tensor concat_channels(std::span<const Tensor> xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape4 first = xs[0].shape();
    std::int64_t c_total = 0;
    for (const Tensor& t : xs) {
        const Shape4 s = t.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw ShapeError("concat_channels: mismatched dims " + s.str() + " vs " + first.str());
        c_total += s.c;
    }
    const Shape4 out_shape{first.n, c_total, first.h, first.w};
    const std::int64_t hw = first.h * first.w;
    std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
    std::vector<std::int64_t> channels;
    std::int64_t base = 0;
    for (const Tensor& t : xs) {
        const std::int64_t tc = t.shape().c;
        const auto tv = t.data();
        for (std::int64_t n = 0; n < first.n; ++n)
            std::memcpy(out.data() + (n * c_total + base) * hw, tv.data() + n * tc * hw,
                        static_cast<std::size_t>(tc * hw) * sizeof(double));
        channels.push_back(tc);
        base += tc;
    }

    std::vector<const Tensor*> ins;
    for (const Tensor& t : xs) ins.push_back(&t);
    Tape* tp = common_tape(ins);
    if (!tp) return Tensor::from_data(out_shape, std::move(out));
    return tp->emit(ins, out_shape, std::move(out),
                    [channels, n = first.n, c_total, hw](std::span<const double> g,
                                                         std::span<double* const> gin) {
                        std::int64_t base = 0;
                        for (std::size_t k = 0; k < channels.size(); ++k) {
                            const std::int64_t tc = channels[k];
                            if (gin[k]) {
                                for (std::int64_t b = 0; b < n; ++b) {
                                    const double* src = g.data() + (b * c_total + base) * hw;
                                    double* dst = gin[k] + b * tc * hw;
                                    for (std::int64_t i = 0; i < tc * hw; ++i) dst[i] += src[i];
                                }
                            }
                            base += tc;
                        }
                    });
}

Tensor slice_channels(const Tensor& x, std::int64_t c0, std::int64_t c1) {
    const Shape4 s = x.shape();
    if (c0 < 0 || c1 <= c0 || c1 > s.c)
        throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") invalid for " + s.str());
    const Shape4 out_shape{s.n, c1 - c0, s.h, s.w};
    const std::int64_t hw = s.h * s.w;
    const auto xv = x.data();
    std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
    for (std::int64_t n = 0; n < s.n; ++n)
        std::memcpy(out.data() + n * (c1 - c0) * hw, xv.data() + (n * s.c + c0) * hw,
                    static_cast<std::size_t>((c1 - c0) * hw) * sizeof(double));

    const Tensor* ins[] = {&x};
    Tape* tp = common_tape(ins);
    if (!tp) return Tensor::from_data(out_shape, std::move(out));
    return tp->emit(ins, out_shape, std::move(out),
                    [s, c0, c1, hw](std::span<const double> g, std::span<double* const> gin) {
                        if (!gin[0]) return;
                        for (std::int64_t n = 0; n < s.n; ++n) {
                            const double* src = g.data() + n * (c1 - c0) * hw;
                            double* dst = gin[0] + (n * s.c + c0) * hw;
                            for (std::int64_t i = 0; i < (c1 - c0) * hw; ++i) dst[i] += src[i];
                        }
                    });
}

Tensor sum_all(const Tensor& x) {
    // Neumaier-compensated; keeps finite-difference losses accurate.
    const auto xv = x.data();
    double acc = 0.0;
    double comp = 0.0;
    for (double v : xv) {
        const double t = acc + v;
        if (std::abs(acc) >= std::abs(v))
            comp += (acc - t) + v;
        else
            comp += (v - t) + acc;
        acc = t;
    }
    acc += comp;
    const Tensor* ins[] = {&x};
    Tape* tp = common_tape(ins);
    std::vector<double> out{acc};
    const Shape4 scalar{1, 1, 1, 1};
    if (!tp) return Tensor::from_data(scalar, std::move(out));
    return tp->emit(ins, scalar, std::move(out),
                    [n = xv.size()](std::span<const double> g, std::span<double* const> gin) {
                        if (!gin[0]) return;
                        for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
                    });
}

} // namespace msconv
