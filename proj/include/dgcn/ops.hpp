#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "dgcn/rng.hpp"
#include "dgcn/tensor.hpp"

// Differentiable primitives. Every op computes forward immediately; when
// any input is tracked the op appends one backward node to that tape.
// Ops on free constants are pure computation and record nothing.
namespace dgcn {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatR<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatR<T>>;

namespace detail {

template <typename T>
inline Tape<T>* merge_tapes(Tape<T>* a, Tape<T>* b) {
    if (a && b && a != b) throw std::invalid_argument("op inputs live on different tapes");
    return a ? a : b;
}

template <typename T>
inline Tape<T>* tape_of(const Tensor<T>& a) {
    return a.tape();
}
template <typename T, typename... Rest>
inline Tape<T>* tape_of(const Tensor<T>& a, const Rest&... rest) {
    return merge_tapes(a.tape(), tape_of(rest...));
}

template <typename T>
inline Tensor<T> emit(Tape<T>* tape, const Shape& shape, Buffer<T> data, const char* op) {
    check_finite(*data, op);
    if (tape) return tape->track(shape, std::move(data));
    return Tensor<T>(shape, std::move(data));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// a: [R x K] or [N x k x K] (leading axes collapsed row-wise), w: [K x E].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& w) {
    if (w.shape().rank() != 2) throw DimensionError("matmul: weight must be rank 2");
    const std::size_t rows = a.rows(), inner = a.channels();
    const std::size_t k2 = w.shape()[0], cols = w.shape()[1];
    if (inner != k2)
        throw DimensionError("matmul: inner dims " + a.shape().str() + " vs " + w.shape().str());

    auto out = make_buffer<T>(rows * cols);
    CMapM<T> ma(a.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(inner));
    CMapM<T> mw(w.data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
    MapM<T> mo(out->data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    mo.noalias() = ma * mw;

    Shape out_shape = a.shape().rank() == 3 ? Shape(a.shape()[0], a.shape()[1], cols) : Shape(rows, cols);
    Tape<T>* tape = detail::tape_of(a, w);
    Tensor<T> y = detail::emit(tape, out_shape, std::move(out), "matmul");
    if (tape) {
        auto sa = tape->retain(a.buffer());
        auto sw = tape->retain(w.buffer());
        const int ia = a.id(), iw = w.id(), iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g) return;
            CMapM<T> mg(g, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
            CMapM<T> va(sa->data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(inner));
            CMapM<T> vw(sw->data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
            if (ia >= 0) {
                MapM<T> da(t.grad_of(ia), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(inner));
                da.noalias() += mg * vw.transpose();
            }
            if (iw >= 0) {
                MapM<T> dw(t.grad_of(iw), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
                dw.noalias() += va.transpose() * mg;
            }
        });
    }
    return y;
}

// b broadcast over rows; b: [E], x channels == E.
template <typename T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b) {
    if (b.shape().rank() != 1 || b.size() != x.channels())
        throw DimensionError("bias_add: bias " + b.shape().str() + " vs channels " +
                             std::to_string(x.channels()));
    const std::size_t rows = x.rows(), cols = x.channels();
    auto out = make_buffer<T>(x.size());
    const T* px = x.data();
    const T* pb = b.data();
    T* po = out->data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] + pb[c];

    Tape<T>* tape = detail::tape_of(x, b);
    Tensor<T> y = detail::emit(tape, x.shape(), std::move(out), "bias_add");
    if (tape) {
        const int ix = x.id(), ib = b.id(), iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g) return;
            if (ix >= 0) {
                T* dx = t.grad_of(ix);
                for (std::size_t i = 0; i < rows * cols; ++i) dx[i] += g[i];
            }
            if (ib >= 0) {
                T* db = t.grad_of(ib);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    auto out = make_buffer<T>(x.size());
    auto mask = std::make_shared<std::vector<std::uint8_t>>(x.size());
    const T* px = x.data();
    T* po = out->data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        bool pos = px[i] > T(0);
        (*mask)[i] = pos;
        po[i] = pos ? px[i] : T(0);
    }
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, x.shape(), std::move(out), "relu");
    if (tape) {
        tape->retain_aux(mask);
        const int ix = x.id(), iy = y.id();
        const std::size_t n = x.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            for (std::size_t i = 0; i < n; ++i)
                if ((*mask)[i]) dx[i] += g[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto out = make_buffer<T>(x.size());
    const T* px = x.data();
    T* po = out->data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = static_cast<double>(px[i]);
        double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        po[i] = static_cast<T>(s);
    }
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, x.shape(), std::move(out), "sigmoid");
    if (tape) {
        auto sy = tape->retain(y.buffer());
        const int ix = x.id(), iy = y.id();
        const std::size_t n = x.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            const T* s = sy->data();
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * s[i] * (T(1) - s[i]);
        });
    }
    return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    auto out = make_buffer<T>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) (*out)[i] = a.data()[i] + b.data()[i];
    Tape<T>* tape = detail::tape_of(a, b);
    Tensor<T> y = detail::emit(tape, a.shape(), std::move(out), "add");
    if (tape) {
        const int ia = a.id(), ib = b.id(), iy = y.id();
        const std::size_t n = a.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g) return;
            if (ia >= 0) {
                T* da = t.grad_of(ia);
                for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
            }
            if (ib >= 0) {
                T* db = t.grad_of(ib);
                for (std::size_t i = 0; i < n; ++i) db[i] += g[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    auto out = make_buffer<T>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) (*out)[i] = a.data()[i] - b.data()[i];
    Tape<T>* tape = detail::tape_of(a, b);
    Tensor<T> y = detail::emit(tape, a.shape(), std::move(out), "sub");
    if (tape) {
        const int ia = a.id(), ib = b.id(), iy = y.id();
        const std::size_t n = a.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g) return;
            if (ia >= 0) {
                T* da = t.grad_of(ia);
                for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
            }
            if (ib >= 0) {
                T* db = t.grad_of(ib);
                for (std::size_t i = 0; i < n; ++i) db[i] -= g[i];
            }
        });
    }
    return y;
}

// Elementwise (Hadamard) product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    auto out = make_buffer<T>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) (*out)[i] = a.data()[i] * b.data()[i];
    Tape<T>* tape = detail::tape_of(a, b);
    Tensor<T> y = detail::emit(tape, a.shape(), std::move(out), "mul");
    if (tape) {
        auto sa = tape->retain(a.buffer());
        auto sb = tape->retain(b.buffer());
        const int ia = a.id(), ib = b.id(), iy = y.id();
        const std::size_t n = a.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g) return;
            if (ia >= 0) {
                T* da = t.grad_of(ia);
                for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * (*sb)[i];
            }
            if (ib >= 0) {
                T* db = t.grad_of(ib);
                for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * (*sa)[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
    auto out = make_buffer<T>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) (*out)[i] = static_cast<T>(c) * x.data()[i];
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, x.shape(), std::move(out), "scale");
    if (tape) {
        const int ix = x.id(), iy = y.id();
        const std::size_t n = x.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            for (std::size_t i = 0; i < n; ++i) dx[i] += static_cast<T>(c) * g[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& x, double c) {
    auto out = make_buffer<T>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) (*out)[i] = x.data()[i] + static_cast<T>(c);
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, x.shape(), std::move(out), "add_const");
    if (tape) {
        const int ix = x.id(), iy = y.id();
        const std::size_t n = x.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[i];
        });
    }
    return y;
}

// Multiply by a learnable 1-element tensor (e.g. the GIN epsilon).
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.size() != 1) throw DimensionError("mul_scalar: scalar operand must have size 1");
    const T sv = s.at(0);
    auto out = make_buffer<T>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) (*out)[i] = sv * x.data()[i];
    Tape<T>* tape = detail::tape_of(x, s);
    Tensor<T> y = detail::emit(tape, x.shape(), std::move(out), "mul_scalar");
    if (tape) {
        auto sx = tape->retain(x.buffer());
        auto ss = tape->retain(s.buffer());
        const int ix = x.id(), is = s.id(), iy = y.id();
        const std::size_t n = x.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g) return;
            if (ix >= 0) {
                T* dx = t.grad_of(ix);
                const T v = (*ss)[0];
                for (std::size_t i = 0; i < n; ++i) dx[i] += v * g[i];
            }
            if (is >= 0) {
                T acc = T(0);
                for (std::size_t i = 0; i < n; ++i) acc += g[i] * (*sx)[i];
                t.grad_of(is)[0] += acc;
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Shape ops

// Concatenate along the channel (last) axis; all parts share leading dims.
template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_last: empty part list");
    const Shape& s0 = parts[0].shape();
    std::size_t total = 0;
    Tape<T>* tape = nullptr;
    for (const auto& p : parts) {
        if (p.shape().rank() != s0.rank() || p.rows() != parts[0].rows() ||
            (s0.rank() == 3 && (p.shape()[0] != s0[0] || p.shape()[1] != s0[1])))
            throw DimensionError("concat_last: leading dims differ: " + s0.str() + " vs " +
                                 p.shape().str());
        total += p.channels();
        tape = detail::merge_tapes(tape, p.tape());
    }
    const std::size_t rows = parts[0].rows();
    auto out = make_buffer<T>(rows * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t d = p.channels();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.data() + r * d, d, out->data() + r * total + off);
        off += d;
    }
    Shape out_shape = s0.rank() == 3 ? Shape(s0[0], s0[1], total) : Shape(rows, total);
    Tensor<T> y = detail::emit(tape, out_shape, std::move(out), "concat_last");
    if (tape) {
        std::vector<int> ids(parts.size());
        std::vector<std::size_t> widths(parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i) {
            ids[i] = parts[i].id();
            widths[i] = parts[i].channels();
        }
        const int iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g) return;
            std::size_t o = 0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const std::size_t d = widths[i];
                if (ids[i] >= 0) {
                    T* dp = t.grad_of(ids[i]);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < d; ++c) dp[r * d + c] += g[r * total + o + c];
                }
                o += d;
            }
        });
    }
    return y;
}

// [N x D] -> [N x k x D], each row repeated k times along a new middle axis.
template <typename T>
Tensor<T> expand_mid(const Tensor<T>& x, std::size_t k) {
    if (x.shape().rank() != 2) throw DimensionError("expand_mid: input must be rank 2");
    if (k == 0) throw std::invalid_argument("expand_mid: k must be >= 1");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    auto out = make_buffer<T>(n * k * d);
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t j = 0; j < k; ++j)
            std::copy_n(x.data() + v * d, d, out->data() + (v * k + j) * d);
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, Shape(n, k, d), std::move(out), "expand_mid");
    if (tape) {
        const int ix = x.id(), iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            for (std::size_t v = 0; v < n; ++v)
                for (std::size_t j = 0; j < k; ++j)
                    for (std::size_t c = 0; c < d; ++c) dx[v * d + c] += g[(v * k + j) * d + c];
        });
    }
    return y;
}

using IndexBuffer = std::shared_ptr<std::vector<int>>;

// out(m, j, :) = x(idx[m*k+j], :). Backward is a scatter-add.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const IndexBuffer& idx, std::size_t m, std::size_t k) {
    if (x.shape().rank() != 2) throw DimensionError("gather_rows: features must be rank 2");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    if (idx->size() != m * k) throw DimensionError("gather_rows: index table size mismatch");
    for (int id : *idx)
        if (id < 0 || static_cast<std::size_t>(id) >= n)
            throw std::out_of_range("gather_rows: neighbor index " + std::to_string(id) +
                                    " out of range [0," + std::to_string(n) + ")");
    auto out = make_buffer<T>(m * k * d);
    for (std::size_t r = 0; r < m * k; ++r)
        std::copy_n(x.data() + static_cast<std::size_t>((*idx)[r]) * d, d, out->data() + r * d);
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, Shape(m, k, d), std::move(out), "gather_rows");
    if (tape) {
        tape->retain_aux(idx);
        const int ix = x.id(), iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            for (std::size_t r = 0; r < m * k; ++r) {
                T* dst = dx + static_cast<std::size_t>((*idx)[r]) * d;
                const T* src = g + r * d;
                for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
            }
        });
    }
    return y;
}

// Max over the middle (neighbor) axis of [N x k x D]. Gradient goes to a
// single argmax slot per (vertex, channel); ties break to the lowest index.
template <typename T>
Tensor<T> max_axis(const Tensor<T>& x, std::size_t axis) {
    if (x.shape().rank() != 3 || axis != 1)
        throw DimensionError("max_axis: expected rank-3 input reduced over axis 1");
    const std::size_t n = x.shape()[0], k = x.shape()[1], d = x.shape()[2];
    if (k == 0) throw DimensionError("max_axis: empty reduction axis");
    auto out = make_buffer<T>(n * d);
    auto arg = std::make_shared<std::vector<int>>(n * d, 0);
    const T* px = x.data();
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t c = 0; c < d; ++c) {
            T best = px[(v * k) * d + c];
            int bj = 0;
            for (std::size_t j = 1; j < k; ++j) {
                T cand = px[(v * k + j) * d + c];
                if (cand > best) {
                    best = cand;
                    bj = static_cast<int>(j);
                }
            }
            (*out)[v * d + c] = best;
            (*arg)[v * d + c] = bj;
        }
    }
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, Shape(n, d), std::move(out), "max_axis");
    if (tape) {
        tape->retain_aux(arg);
        const int ix = x.id(), iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            for (std::size_t v = 0; v < n; ++v)
                for (std::size_t c = 0; c < d; ++c)
                    dx[(v * k + static_cast<std::size_t>((*arg)[v * d + c])) * d + c] += g[v * d + c];
        });
    }
    return y;
}

// Sum reduction. Supported: rank-3 over axis 1 -> [N x D]; rank-2 over
// axis 1 -> [N]; rank-2 over axis 0 -> [D].
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
    const Shape& s = x.shape();
    Shape out_shape;
    if (s.rank() == 3 && axis == 1)
        out_shape = Shape(s[0], s[2]);
    else if (s.rank() == 2 && axis == 1)
        out_shape = Shape(s[0]);
    else if (s.rank() == 2 && axis == 0)
        out_shape = Shape(s[1]);
    else
        throw DimensionError("sum_axis: unsupported shape " + s.str() + " axis " + std::to_string(axis));

    auto out = make_buffer<T>(out_shape.size());
    const T* px = x.data();
    if (s.rank() == 3) {
        const std::size_t n = s[0], k = s[1], d = s[2];
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t c = 0; c < d; ++c) (*out)[v * d + c] += px[(v * k + j) * d + c];
    } else if (axis == 1) {
        const std::size_t n = s[0], d = s[1];
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t c = 0; c < d; ++c) (*out)[v] += px[v * d + c];
    } else {
        const std::size_t n = s[0], d = s[1];
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t c = 0; c < d; ++c) (*out)[c] += px[v * d + c];
    }
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, out_shape, std::move(out), "sum_axis");
    if (tape) {
        const int ix = x.id(), iy = y.id();
        const Shape in_shape = s;
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            if (in_shape.rank() == 3) {
                const std::size_t n = in_shape[0], k = in_shape[1], d = in_shape[2];
                for (std::size_t v = 0; v < n; ++v)
                    for (std::size_t j = 0; j < k; ++j)
                        for (std::size_t c = 0; c < d; ++c) dx[(v * k + j) * d + c] += g[v * d + c];
            } else if (axis == 1) {
                const std::size_t n = in_shape[0], d = in_shape[1];
                for (std::size_t v = 0; v < n; ++v)
                    for (std::size_t c = 0; c < d; ++c) dx[v * d + c] += g[v];
            } else {
                const std::size_t n = in_shape[0], d = in_shape[1];
                for (std::size_t v = 0; v < n; ++v)
                    for (std::size_t c = 0; c < d; ++c) dx[v * d + c] += g[c];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
    const std::size_t len = x.shape()[axis];
    return scale(sum_axis(x, axis), 1.0 / static_cast<double>(len));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    auto out = make_buffer<T>(1);
    T acc = T(0);
    for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
    (*out)[0] = acc;
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, Shape(std::size_t(1)), std::move(out), "sum_all");
    if (tape) {
        const int ix = x.id(), iy = y.id();
        const std::size_t n = x.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[0];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Segmented reductions (per-sample pooling inside a stacked batch)

// Max over each contiguous row segment of x: [N x D] -> [S x D].
template <typename T>
Tensor<T> segment_max(const Tensor<T>& x, const std::vector<std::size_t>& sizes) {
    if (x.shape().rank() != 2) throw DimensionError("segment_max: input must be rank 2");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    std::size_t total = 0;
    for (std::size_t s : sizes) {
        if (s == 0) throw std::invalid_argument("segment_max: empty segment");
        total += s;
    }
    if (total != n) throw DimensionError("segment_max: segment sizes do not sum to row count");
    const std::size_t ns = sizes.size();
    auto out = make_buffer<T>(ns * d);
    auto arg = std::make_shared<std::vector<int>>(ns * d, 0);
    const T* px = x.data();
    std::size_t row = 0;
    for (std::size_t s = 0; s < ns; ++s) {
        for (std::size_t c = 0; c < d; ++c) {
            T best = px[row * d + c];
            std::size_t br = row;
            for (std::size_t r = row + 1; r < row + sizes[s]; ++r) {
                if (px[r * d + c] > best) {
                    best = px[r * d + c];
                    br = r;
                }
            }
            (*out)[s * d + c] = best;
            (*arg)[s * d + c] = static_cast<int>(br);
        }
        row += sizes[s];
    }
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, Shape(ns, d), std::move(out), "segment_max");
    if (tape) {
        tape->retain_aux(arg);
        const int ix = x.id(), iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            for (std::size_t i = 0; i < ns * d; ++i)
                dx[static_cast<std::size_t>((*arg)[i]) * d + (i % d)] += g[i];
        });
    }
    return y;
}

// Repeat each segment's row: [S x D] -> [N x D].
template <typename T>
Tensor<T> segment_broadcast(const Tensor<T>& x, const std::vector<std::size_t>& sizes) {
    if (x.shape().rank() != 2 || x.shape()[0] != sizes.size())
        throw DimensionError("segment_broadcast: expected one row per segment");
    const std::size_t d = x.shape()[1];
    std::size_t total = 0;
    for (std::size_t s : sizes) total += s;
    auto out = make_buffer<T>(total * d);
    std::size_t row = 0;
    for (std::size_t s = 0; s < sizes.size(); ++s) {
        for (std::size_t r = 0; r < sizes[s]; ++r)
            std::copy_n(x.data() + s * d, d, out->data() + (row + r) * d);
        row += sizes[s];
    }
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, Shape(total, d), std::move(out), "segment_broadcast");
    if (tape) {
        const int ix = x.id(), iy = y.id();
        const std::vector<std::size_t> sz = sizes;
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            std::size_t r0 = 0;
            for (std::size_t s = 0; s < sz.size(); ++s) {
                for (std::size_t r = 0; r < sz[s]; ++r)
                    for (std::size_t c = 0; c < d; ++c) dx[s * d + c] += g[(r0 + r) * d + c];
                r0 += sz[s];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Normalization

// Per-row L2 normalization with a zero-row guard: zero rows stay zero
// (and receive no gradient there).
template <typename T>
Tensor<T> row_l2_normalize(const Tensor<T>& x) {
    if (x.shape().rank() != 2) throw DimensionError("row_l2_normalize: input must be rank 2");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    auto out = make_buffer<T>(n * d);
    auto inv = std::make_shared<std::vector<T>>(n, T(0));
    const T* px = x.data();
    for (std::size_t v = 0; v < n; ++v) {
        double ss = 0;
        for (std::size_t c = 0; c < d; ++c) ss += static_cast<double>(px[v * d + c]) * px[v * d + c];
        if (ss > 0) {
            T iv = static_cast<T>(1.0 / std::sqrt(ss));
            (*inv)[v] = iv;
            for (std::size_t c = 0; c < d; ++c) (*out)[v * d + c] = px[v * d + c] * iv;
        }
    }
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, x.shape(), std::move(out), "row_l2_normalize");
    if (tape) {
        auto sy = tape->retain(y.buffer());
        tape->retain_aux(inv);
        const int ix = x.id(), iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            const T* yv = sy->data();
            for (std::size_t v = 0; v < n; ++v) {
                const T iv = (*inv)[v];
                if (iv == T(0)) continue;
                T dot = T(0);
                for (std::size_t c = 0; c < d; ++c) dot += g[v * d + c] * yv[v * d + c];
                for (std::size_t c = 0; c < d; ++c)
                    dx[v * d + c] += iv * (g[v * d + c] - yv[v * d + c] * dot);
            }
        });
    }
    return y;
}

// Channel-wise batch normalization over all rows (leading axes collapsed).
// Train mode uses batch statistics (eps inside the sqrt) and folds them
// into the running estimates with the given momentum; eval mode uses the
// running estimates.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Buffer<T>& running_mean, Buffer<T>& running_var, double momentum, double eps,
                     bool train) {
    const std::size_t rows = x.rows(), d = x.channels();
    if (gamma.size() != d || beta.size() != d || running_mean->size() != d || running_var->size() != d)
        throw DimensionError("batch_norm: parameter width does not match channels");
    if (train && rows < 2) throw NumericError("batch_norm: train mode needs at least 2 rows");

    auto out = make_buffer<T>(x.size());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv = std::make_shared<std::vector<T>>(d);
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();

    if (train) {
        for (std::size_t c = 0; c < d; ++c) {
            double mu = 0;
            for (std::size_t r = 0; r < rows; ++r) mu += px[r * d + c];
            mu /= static_cast<double>(rows);
            double var = 0;
            for (std::size_t r = 0; r < rows; ++r) {
                double dv = px[r * d + c] - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(rows);
            double iv = 1.0 / std::sqrt(var + eps);
            (*inv)[c] = static_cast<T>(iv);
            for (std::size_t r = 0; r < rows; ++r) {
                T h = static_cast<T>((px[r * d + c] - mu) * iv);
                (*xhat)[r * d + c] = h;
                (*out)[r * d + c] = pg[c] * h + pb[c];
            }
            double unbiased = var * static_cast<double>(rows) / static_cast<double>(rows - 1);
            (*running_mean)[c] = static_cast<T>(momentum * (*running_mean)[c] + (1 - momentum) * mu);
            (*running_var)[c] = static_cast<T>(momentum * (*running_var)[c] + (1 - momentum) * unbiased);
        }
    } else {
        for (std::size_t c = 0; c < d; ++c) {
            double iv = 1.0 / std::sqrt(static_cast<double>((*running_var)[c]) + eps);
            double mu = (*running_mean)[c];
            (*inv)[c] = static_cast<T>(iv);
            for (std::size_t r = 0; r < rows; ++r) {
                T h = static_cast<T>((px[r * d + c] - mu) * iv);
                (*xhat)[r * d + c] = h;
                (*out)[r * d + c] = pg[c] * h + pb[c];
            }
        }
    }

    Tape<T>* tape = detail::tape_of(x, gamma, beta);
    Tensor<T> y = detail::emit(tape, x.shape(), std::move(out), "batch_norm");
    if (tape) {
        auto sg = tape->retain(gamma.buffer());
        tape->retain_aux(inv);
        auto sxh = xhat;
        tape->retain(sxh);
        const int ix = x.id(), igm = gamma.id(), ibt = beta.id(), iy = y.id();
        const bool train_mode = train;
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g) return;
            for (std::size_t c = 0; c < d; ++c) {
                double gsum = 0, gx = 0;
                for (std::size_t r = 0; r < rows; ++r) {
                    gsum += g[r * d + c];
                    gx += static_cast<double>(g[r * d + c]) * (*sxh)[r * d + c];
                }
                if (igm >= 0) t.grad_of(igm)[c] += static_cast<T>(gx);
                if (ibt >= 0) t.grad_of(ibt)[c] += static_cast<T>(gsum);
                if (ix >= 0) {
                    T* dx = t.grad_of(ix);
                    const double giv = static_cast<double>((*sg)[c]) * (*inv)[c];
                    if (train_mode) {
                        const double nr = static_cast<double>(rows);
                        for (std::size_t r = 0; r < rows; ++r)
                            dx[r * d + c] += static_cast<T>(
                                giv / nr * (nr * g[r * d + c] - gsum - (*sxh)[r * d + c] * gx));
                    } else {
                        for (std::size_t r = 0; r < rows; ++r)
                            dx[r * d + c] += static_cast<T>(giv * g[r * d + c]);
                    }
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Dropout

// Counter-based mask: element i of invocation `stream` is dropped iff
// stream.uniform(i) < rate. Identity in eval mode or at rate 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, const RngStream& stream) {
    if (rate < 0 || rate >= 1) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!train || rate == 0) return x;
    auto out = make_buffer<T>(x.size());
    auto mask = std::make_shared<std::vector<T>>(x.size());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < x.size(); ++i) {
        T m = stream.uniform(i) < rate ? T(0) : keep_scale;
        (*mask)[i] = m;
        (*out)[i] = m * x.data()[i];
    }
    Tape<T>* tape = x.tape();
    Tensor<T> y = detail::emit(tape, x.shape(), std::move(out), "dropout");
    if (tape) {
        tape->retain(mask);
        const int ix = x.id(), iy = y.id();
        const std::size_t n = x.size();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * (*mask)[i];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Losses

// Mean cross-entropy over rows, log-sum-exp stabilized.
template <typename T>
Tensor<T> softmax_xent(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.shape().rank() != 2) throw DimensionError("softmax_xent: logits must be rank 2");
    const std::size_t n = logits.shape()[0], cdim = logits.shape()[1];
    if (labels.size() != n) throw DimensionError("softmax_xent: label count mismatch");
    auto probs = std::make_shared<std::vector<T>>(n * cdim);
    const T* pl = logits.data();
    double loss = 0;
    for (std::size_t r = 0; r < n; ++r) {
        int lab = labels[r];
        if (lab < 0 || static_cast<std::size_t>(lab) >= cdim)
            throw std::out_of_range("softmax_xent: label " + std::to_string(lab) + " out of range");
        double mx = pl[r * cdim];
        for (std::size_t c = 1; c < cdim; ++c) mx = std::max(mx, static_cast<double>(pl[r * cdim + c]));
        double lse = 0;
        for (std::size_t c = 0; c < cdim; ++c) lse += std::exp(static_cast<double>(pl[r * cdim + c]) - mx);
        lse = std::log(lse) + mx;
        for (std::size_t c = 0; c < cdim; ++c)
            (*probs)[r * cdim + c] = static_cast<T>(std::exp(static_cast<double>(pl[r * cdim + c]) - lse));
        loss += lse - pl[r * cdim + static_cast<std::size_t>(lab)];
    }
    auto out = make_buffer<T>(1);
    (*out)[0] = static_cast<T>(loss / static_cast<double>(n));
    Tape<T>* tape = logits.tape();
    Tensor<T> y = detail::emit(tape, Shape(std::size_t(1)), std::move(out), "softmax_xent");
    if (tape) {
        tape->retain(probs);
        auto labs = std::make_shared<std::vector<int>>(labels);
        tape->retain_aux(labs);
        const int ix = logits.id(), iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            const T s = g[0] / static_cast<T>(n);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < cdim; ++c) {
                    T p = (*probs)[r * cdim + c];
                    T onehot = (static_cast<std::size_t>((*labs)[r]) == c) ? T(1) : T(0);
                    dx[r * cdim + c] += s * (p - onehot);
                }
        });
    }
    return y;
}

// Mean binary cross-entropy with logits over all N*C entries,
// softplus-stabilized. Targets are 0/1 constants.
template <typename T>
Tensor<T> bce_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
    require_same_shape(logits.shape(), targets.shape(), "bce_logits");
    const std::size_t n = logits.size();
    auto sig = std::make_shared<std::vector<T>>(n);
    const T* px = logits.data();
    const T* pt = targets.data();
    double loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double v = px[i], t = pt[i];
        loss += std::max(v, 0.0) - v * t + std::log1p(std::exp(-std::abs(v)));
        (*sig)[i] = static_cast<T>(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
    }
    auto out = make_buffer<T>(1);
    (*out)[0] = static_cast<T>(loss / static_cast<double>(n));
    Tape<T>* tape = logits.tape();
    Tensor<T> y = detail::emit(tape, Shape(std::size_t(1)), std::move(out), "bce_logits");
    if (tape) {
        tape->retain(sig);
        auto st = tape->retain(targets.buffer());
        const int ix = logits.id(), iy = y.id();
        tape->record([=](Tape<T>& t) {
            const T* g = t.grad_if_any(iy);
            if (!g || ix < 0) return;
            T* dx = t.grad_of(ix);
            const T s = g[0] / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) dx[i] += s * ((*sig)[i] - (*st)[i]);
        });
    }
    return y;
}

}  // namespace dgcn
