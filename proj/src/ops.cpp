#include "fibro/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "fibro/error.hpp"

namespace fibro::ops {
namespace {

using Impl = std::shared_ptr<detail::TensorImpl>;
using std::ptrdiff_t;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

std::vector<double> copy_values(const Tensor& t) {
    return {t.data().begin(), t.data().end()};
}

// Geometry shared by the convolution forward and backward loops.
struct ConvGeom {
    std::size_t n, c, h, w, f, kh, kw, stride, pad, oh, ow;
};

// Calls body(out_index, in_index) for every (output, input) pair linked
// through kernel tap (ki, kj) of one (batch, filter, channel) triple. The
// valid output column range is precomputed so the inner loop has no branch.
template <class Body>
void for_each_tap(const ConvGeom& g, std::size_t ki, std::size_t kj, std::size_t out_base,
                  std::size_t in_base, Body&& body) {
    const auto s = static_cast<ptrdiff_t>(g.stride);
    const auto p = static_cast<ptrdiff_t>(g.pad);
    const auto w_in = static_cast<ptrdiff_t>(g.w);
    const auto h_in = static_cast<ptrdiff_t>(g.h);
    const auto ow = static_cast<ptrdiff_t>(g.ow);
    const ptrdiff_t off_j = static_cast<ptrdiff_t>(kj) - p;
    // iw = ox*s + off_j must lie in [0, w_in).
    ptrdiff_t ox_lo = off_j >= 0 ? 0 : (-off_j + s - 1) / s;
    ptrdiff_t ox_hi = (w_in - 1 - off_j) >= 0 ? (w_in - 1 - off_j) / s + 1 : 0;
    ox_hi = std::min(ox_hi, ow);
    if (ox_lo >= ox_hi) return;
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
        const ptrdiff_t iy = static_cast<ptrdiff_t>(oy) * s + static_cast<ptrdiff_t>(ki) - p;
        if (iy < 0 || iy >= h_in) continue;
        const std::size_t out_row = out_base + oy * g.ow;
        const std::size_t in_row = in_base + static_cast<std::size_t>(iy) * g.w;
        for (ptrdiff_t ox = ox_lo; ox < ox_hi; ++ox) {
            body(out_row + static_cast<std::size_t>(ox),
                 in_row + static_cast<std::size_t>(ox * s + off_j));
        }
    }
}

} // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (input.dim(1) != kernel.dim(1)) {
        throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                         " channels but kernel expects " + std::to_string(kernel.dim(1)) +
                         " (input " + shape_str(input.shape()) + ", kernel " +
                         shape_str(kernel.shape()) + ")");
    }
    ConvGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
               kernel.dim(2), kernel.dim(3), stride, padding, 0, 0};
    if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
        throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(input.shape()));
    }
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;

    const auto x = input.data();
    const auto k = kernel.data();
    std::vector<double> out(g.n * g.f * g.oh * g.ow, 0.0);
    for (std::size_t b = 0; b < g.n; ++b) {
        for (std::size_t f = 0; f < g.f; ++f) {
            const std::size_t out_base = (b * g.f + f) * g.oh * g.ow;
            for (std::size_t c = 0; c < g.c; ++c) {
                const std::size_t in_base = (b * g.c + c) * g.h * g.w;
                for (std::size_t ki = 0; ki < g.kh; ++ki) {
                    for (std::size_t kj = 0; kj < g.kw; ++kj) {
                        const double wv = k[((f * g.c + c) * g.kh + ki) * g.kw + kj];
                        if (wv == 0.0) continue;
                        for_each_tap(g, ki, kj, out_base, in_base,
                                     [&](std::size_t o, std::size_t i) { out[o] += wv * x[i]; });
                    }
                }
            }
        }
    }

    Impl in_impl = input.impl_ptr();
    Impl k_impl = kernel.impl_ptr();
    return tape.record({g.n, g.f, g.oh, g.ow}, std::move(out), {input, kernel},
                       [g, in_impl, k_impl](std::span<const double> gout) {
                           const auto& xv = *in_impl->data;
                           const auto& kv = *k_impl->data;
                           double* gx = in_impl->requires_grad ? in_impl->ensure_grad().data() : nullptr;
                           double* gk = k_impl->requires_grad ? k_impl->ensure_grad().data() : nullptr;
                           for (std::size_t b = 0; b < g.n; ++b) {
                               for (std::size_t f = 0; f < g.f; ++f) {
                                   const std::size_t out_base = (b * g.f + f) * g.oh * g.ow;
                                   for (std::size_t c = 0; c < g.c; ++c) {
                                       const std::size_t in_base = (b * g.c + c) * g.h * g.w;
                                       for (std::size_t ki = 0; ki < g.kh; ++ki) {
                                           for (std::size_t kj = 0; kj < g.kw; ++kj) {
                                               const std::size_t kidx =
                                                   ((f * g.c + c) * g.kh + ki) * g.kw + kj;
                                               const double wv = kv[kidx];
                                               double acc = 0.0;
                                               for_each_tap(g, ki, kj, out_base, in_base,
                                                            [&](std::size_t o, std::size_t i) {
                                                                if (gx) gx[i] += wv * gout[o];
                                                                acc += gout[o] * xv[i];
                                                            });
                                               if (gk) gk[kidx] += acc;
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
    require_rank(x, 4, "add_channel_bias", "x");
    require_rank(bias, 1, "add_channel_bias", "bias");
    if (bias.dim(0) != x.dim(1)) {
        throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs channels of " +
                         shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out = copy_values(x);
    const auto bv = bias.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) out[(b * c + ch) * hw + i] += bv[ch];

    Impl x_impl = x.impl_ptr();
    Impl b_impl = bias.impl_ptr();
    return tape.record(x.shape(), std::move(out), {x, bias},
                       [=](std::span<const double> gout) {
                           if (x_impl->requires_grad) {
                               auto& gx = x_impl->ensure_grad();
                               for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i];
                           }
                           if (b_impl->requires_grad) {
                               auto& gb = b_impl->ensure_grad();
                               for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t ch = 0; ch < c; ++ch) {
                                       double acc = 0.0;
                                       for (std::size_t i = 0; i < hw; ++i)
                                           acc += gout[(b * c + ch) * hw + i];
                                       gb[ch] += acc;
                                   }
                           }
                       });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out = copy_values(a);
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    Impl a_impl = a.impl_ptr();
    Impl b_impl = b.impl_ptr();
    return tape.record(a.shape(), std::move(out), {a, b}, [=](std::span<const double> gout) {
        for (const Impl& t : {a_impl, b_impl}) {
            if (!t->requires_grad) continue;
            auto& g = t->ensure_grad();
            for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i];
        }
    });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out = copy_values(a);
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    Impl a_impl = a.impl_ptr();
    Impl b_impl = b.impl_ptr();
    return tape.record(a.shape(), std::move(out), {a, b}, [=](std::span<const double> gout) {
        const auto& av = *a_impl->data;
        const auto& bw = *b_impl->data;
        if (a_impl->requires_grad) {
            auto& g = a_impl->ensure_grad();
            for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * bw[i];
        }
        if (b_impl->requires_grad) {
            auto& g = b_impl->ensure_grad();
            for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * av[i];
        }
    });
}

Tensor scale(Tape& tape, const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("scale: factor must hold one value, got " + shape_str(s.shape()));
    const double sv = s.data()[0];
    std::vector<double> out = copy_values(x);
    for (double& v : out) v *= sv;
    Impl x_impl = x.impl_ptr();
    Impl s_impl = s.impl_ptr();
    return tape.record(x.shape(), std::move(out), {x, s}, [=](std::span<const double> gout) {
        const double factor = (*s_impl->data)[0];
        const auto& xv = *x_impl->data;
        if (x_impl->requires_grad) {
            auto& g = x_impl->ensure_grad();
            for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * factor;
        }
        if (s_impl->requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < gout.size(); ++i) acc += gout[i] * xv[i];
            s_impl->ensure_grad()[0] += acc;
        }
    });
}

Tensor relu(Tape& tape, const Tensor& x) {
    std::vector<double> out = copy_values(x);
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    Impl x_impl = x.impl_ptr();
    return tape.record(x.shape(), std::move(out), {x}, [=](std::span<const double> gout) {
        const auto& xv = *x_impl->data;
        auto& g = x_impl->ensure_grad();
        for (std::size_t i = 0; i < gout.size(); ++i)
            if (xv[i] > 0.0) g[i] += gout[i];
    });
}

Tensor silu(Tape& tape, const Tensor& x) {
    std::vector<double> out = copy_values(x);
    for (double& v : out) v = v / (1.0 + std::exp(-v));
    Impl x_impl = x.impl_ptr();
    return tape.record(x.shape(), std::move(out), {x}, [=](std::span<const double> gout) {
        const auto& xv = *x_impl->data;
        auto& g = x_impl->ensure_grad();
        for (std::size_t i = 0; i < gout.size(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-xv[i]));
            g[i] += gout[i] * sig * (1.0 + xv[i] * (1.0 - sig));
        }
    });
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul", "a");
    require_rank(b, 2, "matmul", "b");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    Impl a_impl = a.impl_ptr();
    Impl b_impl = b.impl_ptr();
    return tape.record({m, n}, std::move(out), {a, b}, [=](std::span<const double> gout) {
        const auto& A = *a_impl->data;
        const auto& B = *b_impl->data;
        if (a_impl->requires_grad) {
            // dA = dC * B^T
            auto& ga = a_impl->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += gout[i * n + j] * B[p * n + j];
                    ga[i * k + p] += acc;
                }
        }
        if (b_impl->requires_grad) {
            // dB = A^T * dC
            auto& gb = b_impl->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * gout[i * n + j];
                }
        }
    });
}

Tensor transpose(Tape& tape, const Tensor& a) {
    require_rank(a, 2, "transpose", "a");
    const std::size_t r = a.dim(0), c = a.dim(1);
    const auto av = a.data();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    Impl a_impl = a.impl_ptr();
    return tape.record({c, r}, std::move(out), {a}, [=](std::span<const double> gout) {
        auto& g = a_impl->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += gout[j * r + i];
    });
}

Tensor softmax_rows(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "softmax_rows", "x");
    const std::size_t r = x.dim(0), c = x.dim(1);
    const auto xv = x.data();
    for (double v : xv) {
        if (!std::isfinite(v)) throw ValidationError("softmax_rows: non-finite input");
    }
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = xv.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(row[j] - mx);
            total += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
    }
    Impl x_impl = x.impl_ptr();
    auto y = std::make_shared<std::vector<double>>(out);
    return tape.record({r, c}, std::move(out), {x}, [=](std::span<const double> gout) {
        auto& g = x_impl->ensure_grad();
        const auto& yv = *y;
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += gout[i * c + j] * yv[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                g[i * c + j] += yv[i * c + j] * (gout[i * c + j] - dot);
        }
    });
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
    require_rank(x, 4, "global_avg_pool", "x");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const auto xv = x.data();
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += xv[i * hw + p];
        out[i] = acc / static_cast<double>(hw);
    }
    Impl x_impl = x.impl_ptr();
    return tape.record({n, c}, std::move(out), {x}, [=](std::span<const double> gout) {
        auto& g = x_impl->ensure_grad();
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t i = 0; i < n * c; ++i)
            for (std::size_t p = 0; p < hw; ++p) g[i * hw + p] += gout[i] * inv;
    });
}

Tensor row_mean(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "row_mean", "x");
    const std::size_t r = x.dim(0), c = x.dim(1);
    const auto xv = x.data();
    std::vector<double> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += xv[i * c + j];
        out[i] = acc / static_cast<double>(c);
    }
    Impl x_impl = x.impl_ptr();
    return tape.record({r}, std::move(out), {x}, [=](std::span<const double> gout) {
        auto& g = x_impl->ensure_grad();
        const double inv = 1.0 / static_cast<double>(c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += gout[i] * inv;
    });
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 2, "linear", "x");
    require_rank(weight, 2, "linear", "weight");
    require_rank(bias, 1, "linear", "bias");
    const std::size_t n = x.dim(0), din = x.dim(1), dout = weight.dim(1);
    if (weight.dim(0) != din || bias.dim(0) != dout) {
        throw ShapeError("linear: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                         ", bias " + shape_str(bias.shape()) + " are inconsistent");
    }
    const auto xv = x.data();
    const auto wv = weight.data();
    const auto bv = bias.data();
    std::vector<double> out(n * dout);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dout; ++j) out[i * dout + j] = bv[j];
        for (std::size_t p = 0; p < din; ++p) {
            const double xp = xv[i * din + p];
            for (std::size_t j = 0; j < dout; ++j) out[i * dout + j] += xp * wv[p * dout + j];
        }
    }
    Impl x_impl = x.impl_ptr();
    Impl w_impl = weight.impl_ptr();
    Impl b_impl = bias.impl_ptr();
    return tape.record({n, dout}, std::move(out), {x, weight, bias},
                       [=](std::span<const double> gout) {
                           const auto& X = *x_impl->data;
                           const auto& W = *w_impl->data;
                           if (x_impl->requires_grad) {
                               auto& gx = x_impl->ensure_grad();
                               for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t p = 0; p < din; ++p) {
                                       double acc = 0.0;
                                       for (std::size_t j = 0; j < dout; ++j)
                                           acc += gout[i * dout + j] * W[p * dout + j];
                                       gx[i * din + p] += acc;
                                   }
                           }
                           if (w_impl->requires_grad) {
                               auto& gw = w_impl->ensure_grad();
                               for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t p = 0; p < din; ++p)
                                       for (std::size_t j = 0; j < dout; ++j)
                                           gw[p * dout + j] += X[i * din + p] * gout[i * dout + j];
                           }
                           if (b_impl->requires_grad) {
                               auto& gb = b_impl->ensure_grad();
                               for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < dout; ++j) gb[j] += gout[i * dout + j];
                           }
                       });
}

Tensor l1_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
    if (pred.numel() != target.numel()) {
        throw ShapeError("l1_loss: pred " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
    }
    const std::size_t n = pred.numel();
    const auto pv = pred.data();
    const auto tv = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(pv[i] - tv[i]);
    Impl p_impl = pred.impl_ptr();
    Impl t_impl = target.impl_ptr();
    return tape.record({1}, {acc / static_cast<double>(n)}, {pred, target},
                       [=](std::span<const double> gout) {
                           const auto& P = *p_impl->data;
                           const auto& T = *t_impl->data;
                           const double g = gout[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i) {
                               const double d = P[i] - T[i];
                               const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                               if (p_impl->requires_grad) p_impl->ensure_grad()[i] += g * sgn;
                               if (t_impl->requires_grad) t_impl->ensure_grad()[i] -= g * sgn;
                           }
                       });
}

Tensor sum(Tape& tape, const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Impl x_impl = x.impl_ptr();
    return tape.record({1}, {acc}, {x}, [=](std::span<const double> gout) {
        auto& g = x_impl->ensure_grad();
        for (double& v : g) v += gout[0];
    });
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Impl x_impl = x.impl_ptr();
    return tape.record_view(std::move(shape), x_impl->data, {x}, [=](std::span<const double> gout) {
        auto& g = x_impl->ensure_grad();
        for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i];
    });
}

Tensor concat(Tape& tape, std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::vector<double> out;
    std::vector<Impl> impls;
    std::vector<std::size_t> offsets;
    for (const Tensor& t : parts) {
        offsets.push_back(out.size());
        out.insert(out.end(), t.data().begin(), t.data().end());
        impls.push_back(t.impl_ptr());
    }
    const std::size_t total = out.size();
    return tape.record({total}, std::move(out), {parts.begin(), parts.end()},
                       [=](std::span<const double> gout) {
                           for (std::size_t k = 0; k < impls.size(); ++k) {
                               if (!impls[k]->requires_grad) continue;
                               auto& g = impls[k]->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[offsets[k] + i];
                           }
                       });
}

} // namespace fibro::ops
