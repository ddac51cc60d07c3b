// Dense row-major tensors with reverse-mode differentiation on an explicit
// tape. Instantiated with float for training/inference and double for
// verification builds (tighter gradient-check tolerances).
#pragma once

#include <cblas.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdar {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Boolean allow-matrix for attention. v[r*cols + c] != 0 means "query r may
// attend key c".
struct BoolMatrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> v;

    BoolMatrix() = default;
    BoolMatrix(int64_t r, int64_t c, uint8_t fill = 0) : rows(r), cols(c), v(size_t(r * c), fill) {}
    uint8_t & at(int64_t r, int64_t c) { return v[size_t(r * cols + c)]; }
    uint8_t at(int64_t r, int64_t c) const { return v[size_t(r * cols + c)]; }
    bool operator==(const BoolMatrix & o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

template <typename T>
class Tape;

template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::shared_ptr<std::vector<T>> store;
    int node = -1;  // id on the tape; -1 = not tracked

    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> s) {
        Tensor t;
        t.shape = std::move(s);
        t.store = std::make_shared<std::vector<T>>(size_t(numel_of(t.shape)), T(0));
        return t;
    }

    static Tensor from(std::vector<int64_t> s, std::vector<T> data) {
        if (numel_of(s) != int64_t(data.size())) {
            throw ShapeError("tensor data size does not match shape");
        }
        Tensor t;
        t.shape = std::move(s);
        t.store = std::make_shared<std::vector<T>>(std::move(data));
        return t;
    }

    static int64_t numel_of(const std::vector<int64_t> & s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return store ? int64_t(store->size()) : 0; }
    int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    T * data() { return store->data(); }
    const T * data() const { return store->data(); }
    bool defined() const { return static_cast<bool>(store); }

    T item() const {
        if (numel() != 1) throw ShapeError("item() requires a scalar tensor");
        return (*store)[0];
    }
};

// Ordered record of operations. Creation order is a topological order of the
// computation graph, so backward() walks nodes once, in reverse.
template <typename T>
class Tape {
  public:
    int push(int64_t out_numel, std::function<void(Tape &)> bw = nullptr) {
        nodes_.push_back(Node{std::move(bw), out_numel});
        grads_.emplace_back();
        return int(nodes_.size()) - 1;
    }

    void set_backward(int id, std::function<void(Tape &)> bw) { nodes_[size_t(id)].bw = std::move(bw); }

    // Gradient buffer for a node, zero-initialized on first touch.
    std::vector<T> & grad(int id) {
        auto & g = grads_[size_t(id)];
        if (g.empty()) g.assign(size_t(nodes_[size_t(id)].numel), T(0));
        return g;
    }

    bool grad_reached(int id) const { return !grads_[size_t(id)].empty(); }

    // Reverse pass from a scalar loss node. Clears any previous gradients so
    // repeated calls on the same tape give identical results.
    void backward(const Tensor<T> & loss) {
        if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss");
        if (loss.node < 0 || loss.node >= int(nodes_.size())) {
            throw std::runtime_error("loss tensor is not on this tape");
        }
        for (auto & g : grads_) g.clear();
        grad(loss.node)[0] = T(1);
        for (int i = loss.node; i >= 0; --i) {
            if (grads_[size_t(i)].empty()) continue;  // never reached from the loss
            if (nodes_[size_t(i)].bw) nodes_[size_t(i)].bw(*this);
        }
    }

    // Registers a parameter (leaf) so gradients accumulate for it.
    void track(Tensor<T> & t) { t.node = push(t.numel()); }

    size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        grads_.clear();
    }

  private:
    struct Node {
        std::function<void(Tape &)> bw;
        int64_t numel;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
};

// ---------------------------------------------------------------------------
// gemm dispatch (row-major). C = alpha * op(A) * op(B) + beta * C
// ---------------------------------------------------------------------------

inline void gemm_raw(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float * a, int64_t lda,
                     const float * b, int64_t ldb, float beta, float * c, int64_t ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, int(m), int(n), int(k),
                alpha, a, int(lda), b, int(ldb), beta, c, int(ldc));
}

inline void gemm_raw(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const double * a, int64_t lda,
                     const double * b, int64_t ldb, double beta, double * c, int64_t ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, int(m), int(n), int(k),
                alpha, a, int(lda), b, int(ldb), beta, c, int(ldc));
}

namespace detail {

template <typename T>
int track_result(Tape<T> * tp, Tensor<T> & out, bool any_tracked) {
    if (tp && any_tracked) {
        out.node = tp->push(out.numel());
        return out.node;
    }
    return -1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations. Every op takes an optional tape; with tp == nullptr (or when no
// input is tracked) it is a pure forward computation.
// ---------------------------------------------------------------------------

// Standard matrix product a[m×k] · b[k×n].
template <typename T>
Tensor<T> matmul(Tape<T> * tp, const Tensor<T> & a, const Tensor<T> & b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
        throw ShapeError("matmul: inner dimensions do not match (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + ")");
    }
    const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<T> out = Tensor<T>::zeros({m, n});
    if (m && n && k) gemm_raw(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0), out.data(), n);
    int id = detail::track_result(tp, out, a.node >= 0 || b.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [a, b, id, m, n, k](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            if (a.node >= 0 && m && k) {
                gemm_raw(false, true, m, k, n, T(1), gc, n, b.data(), n, T(1), t.grad(a.node).data(), k);
            }
            if (b.node >= 0 && k && n) {
                gemm_raw(true, false, k, n, m, T(1), a.data(), k, gc, n, T(1), t.grad(b.node).data(), n);
            }
        });
    }
    return out;
}

// a[m×k] · b[n×k]^T -> [m×n]. Used for attention scores (q · k^T).
template <typename T>
Tensor<T> matmul_nt(Tape<T> * tp, const Tensor<T> & a, const Tensor<T> & b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[1]) {
        throw ShapeError("matmul_nt: inner dimensions do not match");
    }
    const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
    Tensor<T> out = Tensor<T>::zeros({m, n});
    if (m && n && k) gemm_raw(false, true, m, n, k, T(1), a.data(), k, b.data(), k, T(0), out.data(), n);
    int id = detail::track_result(tp, out, a.node >= 0 || b.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [a, b, id, m, n, k](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            if (a.node >= 0 && m && k) {
                gemm_raw(false, false, m, k, n, T(1), gc, n, b.data(), k, T(1), t.grad(a.node).data(), k);
            }
            if (b.node >= 0 && n && k) {
                gemm_raw(true, false, n, k, m, T(1), gc, n, a.data(), k, T(1), t.grad(b.node).data(), k);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T> * tp, const Tensor<T> & a, const Tensor<T> & b) {
    if (a.shape != b.shape) throw ShapeError("add: shapes differ");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    int id = detail::track_result(tp, out, a.node >= 0 || b.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [a, b, id, n](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            if (a.node >= 0) {
                T * ga = t.grad(a.node).data();
                for (int64_t i = 0; i < n; ++i) ga[i] += gc[i];
            }
            if (b.node >= 0) {
                T * gb = t.grad(b.node).data();
                for (int64_t i = 0; i < n; ++i) gb[i] += gc[i];
            }
        });
    }
    return out;
}

// x[N×d] + bias[d], broadcast over rows. The only broadcast in the kernel.
template <typename T>
Tensor<T> add_bias(Tape<T> * tp, const Tensor<T> & x, const Tensor<T> & bias) {
    if (x.shape.size() != 2 || bias.numel() != x.shape[1]) throw ShapeError("add_bias: bias must match columns");
    const int64_t n = x.shape[0], d = x.shape[1];
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    for (int64_t r = 0; r < n; ++r) {
        for (int64_t c = 0; c < d; ++c) out.data()[r * d + c] = x.data()[r * d + c] + bias.data()[c];
    }
    int id = detail::track_result(tp, out, x.node >= 0 || bias.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [x, bias, id, n, d](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            if (x.node >= 0) {
                T * gx = t.grad(x.node).data();
                for (int64_t i = 0; i < n * d; ++i) gx[i] += gc[i];
            }
            if (bias.node >= 0) {
                T * gb = t.grad(bias.node).data();
                for (int64_t r = 0; r < n; ++r) {
                    for (int64_t c = 0; c < d; ++c) gb[c] += gc[r * d + c];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T> * tp, const Tensor<T> & x, T c) {
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * c;
    int id = detail::track_result(tp, out, x.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [x, id, c, n](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            T * gx = t.grad(x.node).data();
            for (int64_t i = 0; i < n; ++i) gx[i] += gc[i] * c;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T> * tp, const Tensor<T> & a, const Tensor<T> & b) {
    if (a.shape != b.shape) throw ShapeError("mul: shapes differ");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    int id = detail::track_result(tp, out, a.node >= 0 || b.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [a, b, id, n](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            if (a.node >= 0) {
                T * ga = t.grad(a.node).data();
                for (int64_t i = 0; i < n; ++i) ga[i] += gc[i] * b.data()[i];
            }
            if (b.node >= 0) {
                T * gb = t.grad(b.node).data();
                for (int64_t i = 0; i < n; ++i) gb[i] += gc[i] * a.data()[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(Tape<T> * tp, const Tensor<T> & x) {
    T s = 0;
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) s += x.data()[i];
    Tensor<T> out = Tensor<T>::from({1}, {s});
    int id = detail::track_result(tp, out, x.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [x, id, n](Tape<T> & t) {
            const T g = t.grad(id)[0];
            T * gx = t.grad(x.node).data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

// RMS normalization with learned gain: y = x / rms(x_row) * g.
template <typename T>
Tensor<T> rmsnorm(Tape<T> * tp, const Tensor<T> & x, const Tensor<T> & gain, T eps = T(1e-5)) {
    if (x.shape.size() != 2 || gain.numel() != x.shape[1]) throw ShapeError("rmsnorm: gain must match columns");
    const int64_t n = x.shape[0], d = x.shape[1];
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    std::vector<T> inv_rms(size_t(n));
    for (int64_t r = 0; r < n; ++r) {
        T ss = 0;
        for (int64_t c = 0; c < d; ++c) {
            T v = x.data()[r * d + c];
            ss += v * v;
        }
        T ir = T(1) / std::sqrt(ss / T(d) + eps);
        inv_rms[size_t(r)] = ir;
        for (int64_t c = 0; c < d; ++c) out.data()[r * d + c] = x.data()[r * d + c] * ir * gain.data()[c];
    }
    int id = detail::track_result(tp, out, x.node >= 0 || gain.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [x, gain, id, n, d, inv_rms](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            if (x.node >= 0) {
                T * gx = t.grad(x.node).data();
                for (int64_t r = 0; r < n; ++r) {
                    const T ir = inv_rms[size_t(r)];
                    T dot = 0;  // sum_c gc*g*x
                    for (int64_t c = 0; c < d; ++c) dot += gc[r * d + c] * gain.data()[c] * x.data()[r * d + c];
                    const T k = dot * ir * ir * ir / T(d);
                    for (int64_t c = 0; c < d; ++c) {
                        gx[r * d + c] += gc[r * d + c] * gain.data()[c] * ir - x.data()[r * d + c] * k;
                    }
                }
            }
            if (gain.node >= 0) {
                T * gg = t.grad(gain.node).data();
                for (int64_t r = 0; r < n; ++r) {
                    const T ir = inv_rms[size_t(r)];
                    for (int64_t c = 0; c < d; ++c) gg[c] += gc[r * d + c] * x.data()[r * d + c] * ir;
                }
            }
        });
    }
    return out;
}

// Exact GELU (erf form).
template <typename T>
Tensor<T> gelu(Tape<T> * tp, const Tensor<T> & x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const int64_t n = x.numel();
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    for (int64_t i = 0; i < n; ++i) {
        T v = x.data()[i];
        out.data()[i] = v * T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
    }
    int id = detail::track_result(tp, out, x.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [x, id, n](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            T * gx = t.grad(x.node).data();
            constexpr T inv_sqrt2pi = T(0.39894228040143267794);
            for (int64_t i = 0; i < n; ++i) {
                T v = x.data()[i];
                T cdf = T(0.5) * (T(1) + std::erf(v * T(0.70710678118654752440)));
                T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
                gx[i] += gc[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

// Row gather from an embedding table; backward scatter-adds.
template <typename T>
Tensor<T> embedding(Tape<T> * tp, std::span<const int32_t> ids, const Tensor<T> & table) {
    if (table.shape.size() != 2) throw ShapeError("embedding: table must be 2-D");
    const int64_t v = table.shape[0], d = table.shape[1];
    const int64_t n = int64_t(ids.size());
    Tensor<T> out = Tensor<T>::zeros({n, d});
    for (int64_t i = 0; i < n; ++i) {
        int32_t tok = ids[size_t(i)];
        if (tok < 0 || tok >= v) throw std::out_of_range("embedding: token id out of range");
        const T * src = table.data() + int64_t(tok) * d;
        T * dst = out.data() + i * d;
        for (int64_t c = 0; c < d; ++c) dst[c] = src[c];
    }
    std::vector<int32_t> ids_copy(ids.begin(), ids.end());
    int id = detail::track_result(tp, out, table.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [table, id, ids_copy, d](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            T * gt = t.grad(table.node).data();
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                T * dst = gt + int64_t(ids_copy[i]) * d;
                const T * src = gc + int64_t(i) * d;
                for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
            }
        });
    }
    return out;
}

// Rotary position embedding applied per head to even/odd channel pairs. The
// backward map is the rotation by the negated angles.
template <typename T>
Tensor<T> rope(Tape<T> * tp, const Tensor<T> & x, std::span<const int32_t> positions, int64_t head_dim,
               double theta = 10000.0) {
    if (x.shape.size() != 2 || x.shape[1] % head_dim != 0 || head_dim % 2 != 0) {
        throw ShapeError("rope: columns must be a multiple of an even head_dim");
    }
    if (int64_t(positions.size()) != x.shape[0]) throw ShapeError("rope: positions must match rows");
    const int64_t n = x.shape[0], d = x.shape[1], nheads = d / head_dim;
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    std::vector<double> inv_freq(size_t(head_dim / 2));
    for (int64_t i = 0; i < head_dim / 2; ++i) {
        inv_freq[size_t(i)] = std::pow(theta, -2.0 * double(i) / double(head_dim));
    }
    auto apply = [&](const T * src, T * dst, int64_t row, bool inverse) {
        const double pos = double(positions[size_t(row)]);
        for (int64_t h = 0; h < nheads; ++h) {
            const int64_t base = row * d + h * head_dim;
            for (int64_t i = 0; i < head_dim / 2; ++i) {
                const double ang = pos * inv_freq[size_t(i)];
                const T c = T(std::cos(ang)), s = T(inverse ? -std::sin(ang) : std::sin(ang));
                const T a = src[base + 2 * i], b = src[base + 2 * i + 1];
                dst[base + 2 * i] = a * c - b * s;
                dst[base + 2 * i + 1] = a * s + b * c;
            }
        }
    };
    for (int64_t r = 0; r < n; ++r) apply(x.data(), out.data(), r, false);
    std::vector<int32_t> pos_copy(positions.begin(), positions.end());
    int id = detail::track_result(tp, out, x.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [x, id, n, d, nheads, head_dim, inv_freq, pos_copy](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            T * gx = t.grad(x.node).data();
            for (int64_t r = 0; r < n; ++r) {
                const double pos = double(pos_copy[size_t(r)]);
                for (int64_t h = 0; h < nheads; ++h) {
                    const int64_t base = r * d + h * head_dim;
                    for (int64_t i = 0; i < head_dim / 2; ++i) {
                        const double ang = pos * inv_freq[size_t(i)];
                        const T c = T(std::cos(ang)), s = T(-std::sin(ang));
                        const T a = gc[base + 2 * i], b = gc[base + 2 * i + 1];
                        gx[base + 2 * i] += a * c - b * s;
                        gx[base + 2 * i + 1] += a * s + b * c;
                    }
                }
            }
        });
    }
    return out;
}

// Softmax over the allowed positions of each row. Disallowed positions are
// treated as additive -inf and re-zeroed after exponentiation so they come
// out exactly 0. A fully-masked row is an error, never a uniform fallback.
template <typename T>
Tensor<T> masked_softmax(Tape<T> * tp, const Tensor<T> & scores, const BoolMatrix & mask) {
    if (scores.shape.size() != 2 || scores.shape[0] != mask.rows || scores.shape[1] != mask.cols) {
        throw ShapeError("masked_softmax: mask shape must match scores");
    }
    const int64_t r = scores.shape[0], c = scores.shape[1];
    Tensor<T> out = Tensor<T>::zeros(scores.shape);
    constexpr T ninf = -std::numeric_limits<T>::infinity();
    for (int64_t i = 0; i < r; ++i) {
        T mx = ninf;
        for (int64_t j = 0; j < c; ++j) {
            if (mask.at(i, j) && scores.data()[i * c + j] > mx) mx = scores.data()[i * c + j];
        }
        if (mx == ninf) {
            throw std::invalid_argument("masked_softmax: fully masked row " + std::to_string(i));
        }
        T denom = 0;
        for (int64_t j = 0; j < c; ++j) {
            const T shifted = (mask.at(i, j) ? scores.data()[i * c + j] : ninf) - mx;
            const T e = std::exp(shifted);
            out.data()[i * c + j] = e;
            denom += e;
        }
        const T inv = T(1) / denom;
        for (int64_t j = 0; j < c; ++j) {
            out.data()[i * c + j] = mask.at(i, j) ? out.data()[i * c + j] * inv : T(0);
        }
    }
    int id = detail::track_result(tp, out, scores.node >= 0);
    if (id >= 0) {
        Tensor<T> probs = out;  // shares storage; values needed for backward
        tp->set_backward(id, [scores, probs, id, r, c](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            T * gs = t.grad(scores.node).data();
            for (int64_t i = 0; i < r; ++i) {
                T dot = 0;
                for (int64_t j = 0; j < c; ++j) dot += gc[i * c + j] * probs.data()[i * c + j];
                for (int64_t j = 0; j < c; ++j) {
                    gs[i * c + j] += probs.data()[i * c + j] * (gc[i * c + j] - dot);
                }
            }
        });
    }
    return out;
}

// Contiguous row window [r0, r0+nrows).
template <typename T>
Tensor<T> row_slice(Tape<T> * tp, const Tensor<T> & x, int64_t r0, int64_t nrows) {
    if (x.shape.size() != 2 || r0 < 0 || r0 + nrows > x.shape[0]) throw ShapeError("row_slice: out of range");
    const int64_t d = x.shape[1];
    Tensor<T> out = Tensor<T>::zeros({nrows, d});
    std::copy(x.data() + r0 * d, x.data() + (r0 + nrows) * d, out.data());
    int id = detail::track_result(tp, out, x.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [x, id, r0, nrows, d](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            T * gx = t.grad(x.node).data();
            for (int64_t i = 0; i < nrows * d; ++i) gx[r0 * d + i] += gc[i];
        });
    }
    return out;
}

// Column window [c0, c0+ncols).
template <typename T>
Tensor<T> col_slice(Tape<T> * tp, const Tensor<T> & x, int64_t c0, int64_t ncols) {
    if (x.shape.size() != 2 || c0 < 0 || c0 + ncols > x.shape[1]) throw ShapeError("col_slice: out of range");
    const int64_t n = x.shape[0], d = x.shape[1];
    Tensor<T> out = Tensor<T>::zeros({n, ncols});
    for (int64_t r = 0; r < n; ++r) {
        std::copy(x.data() + r * d + c0, x.data() + r * d + c0 + ncols, out.data() + r * ncols);
    }
    int id = detail::track_result(tp, out, x.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [x, id, c0, ncols, n, d](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            T * gx = t.grad(x.node).data();
            for (int64_t r = 0; r < n; ++r) {
                for (int64_t j = 0; j < ncols; ++j) gx[r * d + c0 + j] += gc[r * ncols + j];
            }
        });
    }
    return out;
}

// Concatenate equally-tall pieces along columns.
template <typename T>
Tensor<T> concat_cols(Tape<T> * tp, const std::vector<Tensor<T>> & pieces) {
    if (pieces.empty()) throw ShapeError("concat_cols: no pieces");
    const int64_t n = pieces[0].shape[0];
    int64_t total = 0;
    bool tracked = false;
    for (const auto & p : pieces) {
        if (p.shape.size() != 2 || p.shape[0] != n) throw ShapeError("concat_cols: row counts differ");
        total += p.shape[1];
        tracked = tracked || p.node >= 0;
    }
    Tensor<T> out = Tensor<T>::zeros({n, total});
    int64_t off = 0;
    for (const auto & p : pieces) {
        const int64_t w = p.shape[1];
        for (int64_t r = 0; r < n; ++r) {
            std::copy(p.data() + r * w, p.data() + (r + 1) * w, out.data() + r * total + off);
        }
        off += w;
    }
    int id = detail::track_result(tp, out, tracked);
    if (id >= 0) {
        tp->set_backward(id, [pieces, id, n, total](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            int64_t off2 = 0;
            for (const auto & p : pieces) {
                const int64_t w = p.shape[1];
                if (p.node >= 0) {
                    T * gp = t.grad(p.node).data();
                    for (int64_t r = 0; r < n; ++r) {
                        for (int64_t j = 0; j < w; ++j) gp[r * w + j] += gc[r * total + off2 + j];
                    }
                }
                off2 += w;
            }
        });
    }
    return out;
}

// Stack equally-wide pieces along rows.
template <typename T>
Tensor<T> concat_rows(Tape<T> * tp, const std::vector<Tensor<T>> & pieces) {
    if (pieces.empty()) throw ShapeError("concat_rows: no pieces");
    const int64_t d = pieces[0].shape.size() == 2 ? pieces[0].shape[1] : 0;
    int64_t total = 0;
    bool tracked = false;
    for (const auto & p : pieces) {
        if (p.shape.size() != 2 || p.shape[1] != d) throw ShapeError("concat_rows: column counts differ");
        total += p.shape[0];
        tracked = tracked || p.node >= 0;
    }
    Tensor<T> out = Tensor<T>::zeros({total, d});
    int64_t off = 0;
    for (const auto & p : pieces) {
        std::copy(p.data(), p.data() + p.numel(), out.data() + off * d);
        off += p.shape[0];
    }
    int id = detail::track_result(tp, out, tracked);
    if (id >= 0) {
        tp->set_backward(id, [pieces, id, d](Tape<T> & t) {
            const T * gc = t.grad(id).data();
            int64_t off2 = 0;
            for (const auto & p : pieces) {
                if (p.node >= 0) {
                    T * gp = t.grad(p.node).data();
                    for (int64_t i = 0; i < p.numel(); ++i) gp[i] += gc[off2 * d + i];
                }
                off2 += p.shape[0];
            }
        });
    }
    return out;
}

// Weighted negative log-likelihood: sum_i w_i * (-log softmax(logits_i)[tgt_i]).
// Rows with weight 0 contribute nothing and are skipped. The per-row sums are
// also returned through row_nll when requested (forward-only accounting).
template <typename T>
Tensor<T> weighted_nll(Tape<T> * tp, const Tensor<T> & logits, std::span<const int32_t> targets,
                       std::span<const double> weights, std::vector<double> * row_nll = nullptr) {
    if (logits.shape.size() != 2) throw ShapeError("weighted_nll: logits must be 2-D");
    const int64_t n = logits.shape[0], v = logits.shape[1];
    if (int64_t(targets.size()) != n || int64_t(weights.size()) != n) {
        throw ShapeError("weighted_nll: targets/weights must match rows");
    }
    double total = 0;
    if (row_nll) row_nll->assign(size_t(n), 0.0);
    std::vector<double> logz(size_t(n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        if (weights[size_t(i)] == 0.0) continue;
        const int32_t tgt = targets[size_t(i)];
        if (tgt < 0 || tgt >= v) throw std::out_of_range("weighted_nll: target out of range");
        const T * row = logits.data() + i * v;
        T mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double den = 0;
        for (int64_t j = 0; j < v; ++j) den += std::exp(double(row[j] - mx));
        const double lz = double(mx) + std::log(den);
        logz[size_t(i)] = lz;
        const double nll = lz - double(row[tgt]);
        if (row_nll) (*row_nll)[size_t(i)] = nll;
        total += weights[size_t(i)] * nll;
    }
    Tensor<T> out = Tensor<T>::from({1}, {T(total)});
    std::vector<int32_t> tgt_copy(targets.begin(), targets.end());
    std::vector<double> w_copy(weights.begin(), weights.end());
    int id = detail::track_result(tp, out, logits.node >= 0);
    if (id >= 0) {
        tp->set_backward(id, [logits, id, n, v, tgt_copy, w_copy, logz](Tape<T> & t) {
            const T g = t.grad(id)[0];
            T * gl = t.grad(logits.node).data();
            for (int64_t i = 0; i < n; ++i) {
                const double w = w_copy[size_t(i)];
                if (w == 0.0) continue;
                const T * row = logits.data() + i * v;
                const double lz = logz[size_t(i)];
                for (int64_t j = 0; j < v; ++j) {
                    double p = std::exp(double(row[j]) - lz);
                    double delta = (j == tgt_copy[size_t(i)]) ? 1.0 : 0.0;
                    gl[i * v + j] += g * T(w * (p - delta));
                }
            }
        });
    }
    return out;
}

template <typename T>
bool all_finite(const Tensor<T> & x) {
    for (int64_t i = 0; i < x.numel(); ++i) {
        if (!std::isfinite(double(x.data()[i]))) return false;
    }
    return true;
}

}  // namespace sdar
