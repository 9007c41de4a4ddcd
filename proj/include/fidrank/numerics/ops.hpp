#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/numerics/autograd.hpp"
#include "fidrank/numerics/kernels.hpp"
#include "fidrank/numerics/tensor.hpp"

namespace fidrank::ops {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op)
{
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

struct MatmulDims {
    std::size_t batch, m, k, n;
};

// Batched (leading axes identical) or plain 2-D product dims. b_transposed means
// b is laid out [.., n, k].
inline MatmulDims matmul_dims(const Shape& a, const Shape& b, bool b_transposed, const char* op)
{
    auto fail = [&] {
        throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    };
    if (a.size() < 2 || a.size() != b.size()) {
        fail();
    }
    for (std::size_t i = 0; i + 2 < a.size(); ++i) {
        if (a[i] != b[i]) {
            fail();
        }
    }
    const std::size_t r = a.size();
    MatmulDims d{1, a[r - 2], a[r - 1], b_transposed ? b[r - 2] : b[r - 1]};
    if ((b_transposed ? b[r - 1] : b[r - 2]) != d.k) {
        fail();
    }
    for (std::size_t i = 0; i + 2 < r; ++i) {
        d.batch *= a[i];
    }
    return d;
}

inline Shape matmul_shape(const Shape& a, std::size_t n)
{
    Shape out = a;
    out.back() = n;
    return out;
}

}  // namespace detail

/// Matrix product over the last two axes; leading axes must match exactly.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b)
{
    const auto d = detail::matmul_dims(a.shape(), b.shape(), false, "matmul");
    Tensor<T> out(detail::matmul_shape(a.shape(), d.n));
    const T* pa = a.value().data().data();
    const T* pb = b.value().data().data();
    T* pc = out.data().data();
    for (std::size_t s = 0; s < d.batch; ++s) {
        kernels::gemm(d.m, d.k, d.n, pa + s * d.m * d.k, pb + s * d.k * d.n, pc + s * d.m * d.n, false);
    }
    return Var<T>::from_op(std::move(out), {a, b}, [d](Node<T>& self) {
        const T* g = self.grad.data().data();
        Node<T>& na = *self.parents[0];
        Node<T>& nb = *self.parents[1];
        if (na.requires_grad) {
            T* ga = na.grad_buffer().data().data();
            std::vector<T> bt(d.k * d.n);
            for (std::size_t s = 0; s < d.batch; ++s) {
                kernels::transpose(d.k, d.n, nb.value.data().data() + s * d.k * d.n, bt.data());
                kernels::gemm(d.m, d.n, d.k, g + s * d.m * d.n, bt.data(), ga + s * d.m * d.k, true);
            }
        }
        if (nb.requires_grad) {
            T* gb = nb.grad_buffer().data().data();
            for (std::size_t s = 0; s < d.batch; ++s) {
                kernels::gemm_tn(d.m, d.k, d.n, na.value.data().data() + s * d.m * d.k, g + s * d.m * d.n,
                                 gb + s * d.k * d.n, true);
            }
        }
    });
}

/// a[.., m, k] times the transpose of b[.., n, k].
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b)
{
    const auto d = detail::matmul_dims(a.shape(), b.shape(), true, "matmul_nt");
    Tensor<T> out(detail::matmul_shape(a.shape(), d.n));
    std::vector<T> bt(d.k * d.n);
    for (std::size_t s = 0; s < d.batch; ++s) {
        kernels::transpose(d.n, d.k, b.value().data().data() + s * d.n * d.k, bt.data());
        kernels::gemm(d.m, d.k, d.n, a.value().data().data() + s * d.m * d.k, bt.data(),
                      out.data().data() + s * d.m * d.n, false);
    }
    return Var<T>::from_op(std::move(out), {a, b}, [d](Node<T>& self) {
        const T* g = self.grad.data().data();
        Node<T>& na = *self.parents[0];
        Node<T>& nb = *self.parents[1];
        if (na.requires_grad) {
            T* ga = na.grad_buffer().data().data();
            for (std::size_t s = 0; s < d.batch; ++s) {
                kernels::gemm(d.m, d.n, d.k, g + s * d.m * d.n, nb.value.data().data() + s * d.n * d.k,
                              ga + s * d.m * d.k, true);
            }
        }
        if (nb.requires_grad) {
            T* gb = nb.grad_buffer().data().data();
            for (std::size_t s = 0; s < d.batch; ++s) {
                kernels::gemm_tn(d.m, d.n, d.k, g + s * d.m * d.n, na.value.data().data() + s * d.m * d.k,
                                 gb + s * d.n * d.k, true);
            }
        }
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
    detail::require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    return Var<T>::from_op(std::move(out), {a, b}, [](Node<T>& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b)
{
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bv[i];
    }
    return Var<T>::from_op(std::move(out), {a, b}, [](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        Node<T>& nb = *self.parents[1];
        if (na.requires_grad) {
            auto& g = na.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * nb.value[i];
            }
        }
        if (nb.requires_grad) {
            auto& g = nb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * na.value[i];
            }
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor)
{
    Tensor<T> out = a.value();
    for (auto& v : out.data()) {
        v *= factor;
    }
    return Var<T>::from_op(std::move(out), {a}, [factor](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& a)
{
    Tensor<T> out = a.value();
    for (auto& v : out.data()) {
        v = v > T{0} ? v : T{0};
    }
    return Var<T>::from_op(std::move(out), {a}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (self.value[i] > T{0}) {
                g[i] += self.grad[i];
            }
        }
    });
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate). Identity when rate == 0.
template <typename T, typename Rng>
Var<T> dropout(const Var<T>& a, double rate, Rng& rng)
{
    if (rate <= 0.0) {
        return a;
    }
    if (rate >= 1.0) {
        throw ContractError("dropout rate must be < 1");
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> mask(a.shape());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& m : mask.data()) {
        m = unit(rng) >= rate ? keep_scale : T{0};
    }
    return mul(a, Var<T>::constant(std::move(mask)));
}

/// Numerically stable softmax over the last axis.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x)
{
    Tensor<T> out = x;
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = out.row(r);
        const T peak = *std::max_element(row.begin(), row.end());
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - peak);
            total += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            row[j] /= total;
        }
    }
    return out;
}

template <typename T>
Var<T> softmax_last(const Var<T>& x)
{
    return Var<T>::from_op(softmax_last(x.value()), {x}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const std::size_t n = self.value.cols();
        for (std::size_t r = 0; r < self.value.rows(); ++r) {
            const T* y = self.value.data().data() + r * n;
            const T* dy = self.grad.data().data() + r * n;
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += y[j] * dy[j];
            }
            T* gx = g.data().data() + r * n;
            for (std::size_t j = 0; j < n; ++j) {
                gx[j] += y[j] * (dy[j] - dot);
            }
        }
    });
}

/// x / sqrt(mean(x^2) + eps) * gain over the last axis; no centering, no bias.
template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& gain, T eps)
{
    const std::size_t d = x.value().cols();
    if (gain.shape() != Shape{d}) {
        throw DimensionError("rms_norm: gain " + shape_str(gain.shape()) + " vs input " + shape_str(x.shape()));
    }
    if (eps < T{0}) {
        throw ContractError("rms_norm: eps must be non-negative");
    }
    const std::size_t rows = x.value().rows();
    Tensor<T> out(x.shape());
    std::vector<T> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        auto xr = x.value().row(r);
        T ss = 0;
        for (T v : xr) {
            ss += v * v;
        }
        inv_rms[r] = T{1} / std::sqrt(ss / static_cast<T>(d) + eps);
        auto yr = out.row(r);
        for (std::size_t j = 0; j < d; ++j) {
            yr[j] = xr[j] * inv_rms[r] * gain.value()[j];
        }
    }
    return Var<T>::from_op(std::move(out), {x, gain}, [inv_rms = std::move(inv_rms), d, rows](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        Node<T>& ng = *self.parents[1];
        const auto& g = ng.value;
        for (std::size_t r = 0; r < rows; ++r) {
            auto xr = nx.value.row(r);
            auto dy = self.grad.row(r);
            const T ir = inv_rms[r];
            if (ng.requires_grad) {
                auto& gg = ng.grad_buffer();
                for (std::size_t j = 0; j < d; ++j) {
                    gg[j] += dy[j] * xr[j] * ir;
                }
            }
            if (nx.requires_grad) {
                T dot = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    dot += g[j] * dy[j] * xr[j];
                }
                const T coef = ir * ir * dot / static_cast<T>(d);
                auto gx = nx.grad_buffer().row(r);
                for (std::size_t j = 0; j < d; ++j) {
                    gx[j] += ir * (g[j] * dy[j] - xr[j] * coef);
                }
            }
        }
    });
}

/// Rows of table[V x d] selected by ids.
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids)
{
    if (table.value().rank() != 2) {
        throw DimensionError("embedding: table must be 2-D, got " + shape_str(table.shape()));
    }
    if (ids.empty()) {
        throw DimensionError("embedding: empty id sequence");
    }
    const std::size_t vocab = table.value().dim(0);
    const std::size_t d = table.value().dim(1);
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    Tensor<T> out({idx.size(), d});
    for (std::size_t t = 0; t < idx.size(); ++t) {
        if (idx[t] < 0 || static_cast<std::size_t>(idx[t]) >= vocab) {
            throw IndexError("token id " + std::to_string(idx[t]) + " outside vocabulary of size " +
                             std::to_string(vocab));
        }
        auto src = table.value().row(static_cast<std::size_t>(idx[t]));
        std::copy(src.begin(), src.end(), out.row(t).begin());
    }
    return Var<T>::from_op(std::move(out), {table}, [idx = std::move(idx), d](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t t = 0; t < idx.size(); ++t) {
            auto dst = g.row(static_cast<std::size_t>(idx[t]));
            auto src = self.grad.row(t);
            for (std::size_t j = 0; j < d; ++j) {
                dst[j] += src[j];
            }
        }
    });
}

/// out[h, q, k] = table[bucket[q * k_len + k], h] for a [buckets x heads] table.
template <typename T>
Var<T> gather_bias(const Var<T>& table, std::span<const std::size_t> buckets, std::size_t q_len, std::size_t k_len)
{
    const std::size_t heads = table.value().dim(1);
    if (buckets.size() != q_len * k_len) {
        throw DimensionError("gather_bias: bucket grid size mismatch");
    }
    std::vector<std::size_t> idx(buckets.begin(), buckets.end());
    Tensor<T> out({heads, q_len, k_len});
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out[h * idx.size() + i] = table.value().at(idx[i], h);
        }
    }
    return Var<T>::from_op(std::move(out), {table}, [idx = std::move(idx), heads](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                g.at(idx[i], h) += self.grad[h * idx.size() + i];
            }
        }
    });
}

/// [t x (heads*dh)] -> [heads x t x dh]
template <typename T>
Var<T> split_heads(const Var<T>& x, std::size_t heads)
{
    if (x.value().rank() != 2 || x.value().dim(1) % heads != 0) {
        throw DimensionError("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                             std::to_string(heads) + " heads");
    }
    const std::size_t t = x.value().dim(0);
    const std::size_t dh = x.value().dim(1) / heads;
    Tensor<T> out({heads, t, dh});
    const auto& in = x.value();
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t j = 0; j < dh; ++j) {
                out[(h * t + i) * dh + j] = in[i * heads * dh + h * dh + j];
            }
        }
    }
    return Var<T>::from_op(std::move(out), {x}, [t, dh, heads](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t j = 0; j < dh; ++j) {
                    g[i * heads * dh + h * dh + j] += self.grad[(h * t + i) * dh + j];
                }
            }
        }
    });
}

/// [heads x t x dh] -> [t x (heads*dh)]
template <typename T>
Var<T> merge_heads(const Var<T>& x)
{
    if (x.value().rank() != 3) {
        throw DimensionError("merge_heads: expected rank 3, got " + shape_str(x.shape()));
    }
    const std::size_t heads = x.value().dim(0);
    const std::size_t t = x.value().dim(1);
    const std::size_t dh = x.value().dim(2);
    Tensor<T> out({t, heads * dh});
    const auto& in = x.value();
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < dh; ++j) {
                out[i * heads * dh + h * dh + j] = in[(h * t + i) * dh + j];
            }
        }
    }
    return Var<T>::from_op(std::move(out), {x}, [t, dh, heads](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < t; ++i) {
                for (std::size_t j = 0; j < dh; ++j) {
                    g[(h * t + i) * dh + j] += self.grad[i * heads * dh + h * dh + j];
                }
            }
        }
    });
}

/// Stacks 2-D blocks with equal column counts along axis 0.
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts)
{
    if (parts.empty()) {
        throw DimensionError("concat_rows: no inputs");
    }
    const std::size_t cols = parts.front().value().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.value().rank() != 2 || p.value().cols() != cols) {
            throw DimensionError("concat_rows: block " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts.front().shape()));
        }
        rows += p.value().rows();
    }
    Tensor<T> out({rows, cols});
    std::vector<std::size_t> starts;
    std::size_t at = 0;
    for (const auto& p : parts) {
        starts.push_back(at);
        std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + at * cols);
        at += p.value().rows();
    }
    return Var<T>::from_op(std::move(out), parts, [starts = std::move(starts), cols](Node<T>& self) {
        for (std::size_t b = 0; b < self.parents.size(); ++b) {
            Node<T>& p = *self.parents[b];
            if (!p.requires_grad) {
                continue;
            }
            auto& g = p.grad_buffer();
            const T* src = self.grad.data().data() + starts[b] * cols;
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += src[i];
            }
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& x)
{
    T total = 0;
    for (T v : x.value().data()) {
        total += v;
    }
    return Var<T>::from_op(Tensor<T>::scalar(total), {x}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const T up = self.grad[0];
        for (auto& v : g.data()) {
            v += up;
        }
    });
}

/// Mean over positions of -log softmax(logits[t])[targets[t]].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets)
{
    const auto& lv = logits.value();
    if (lv.rank() != 2 || lv.dim(0) != targets.size()) {
        throw DimensionError("cross_entropy: logits " + shape_str(lv.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets");
    }
    const std::size_t t_len = lv.dim(0);
    const std::size_t vocab = lv.dim(1);
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    for (auto id : tgt) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw IndexError("target id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(vocab));
        }
    }
    Tensor<T> probs = softmax_last(lv);
    T loss = 0;
    for (std::size_t t = 0; t < t_len; ++t) {
        auto row = lv.row(t);
        const T peak = *std::max_element(row.begin(), row.end());
        T total = 0;
        for (T v : row) {
            total += std::exp(v - peak);
        }
        loss += peak + std::log(total) - row[static_cast<std::size_t>(tgt[t])];
    }
    loss /= static_cast<T>(t_len);
    return Var<T>::from_op(Tensor<T>::scalar(loss), {logits},
                           [probs = std::move(probs), tgt = std::move(tgt), t_len](Node<T>& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               const T up = self.grad[0] / static_cast<T>(t_len);
                               const std::size_t vocab = probs.cols();
                               for (std::size_t t = 0; t < t_len; ++t) {
                                   for (std::size_t j = 0; j < vocab; ++j) {
                                       g[t * vocab + j] += up * probs[t * vocab + j];
                                   }
                                   g[t * vocab + static_cast<std::size_t>(tgt[t])] -= up;
                               }
                           });
}

}  // namespace fidrank::ops

namespace fidrank::ops {

// Untraced conveniences over plain tensors.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    NoGradGuard guard;
    return matmul(Var<T>::constant(a), Var<T>::constant(b)).value();
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps)
{
    NoGradGuard guard;
    return rms_norm(Var<T>::constant(x), Var<T>::constant(gain), eps).value();
}

template <typename T>
T cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets)
{
    NoGradGuard guard;
    return cross_entropy(Var<T>::constant(logits), targets).value().item();
}

}  // namespace fidrank::ops
