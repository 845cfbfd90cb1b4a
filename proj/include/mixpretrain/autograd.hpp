#pragma once

// Reverse-mode differentiation over whole matrices. Every op evaluates
// eagerly and, when a tape is supplied and an input needs gradients, records a
// closure that pushes the output gradient back into its inputs. Passing a null
// tape runs the same code in inference mode.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "mixpretrain/tensor.hpp"

namespace mixpretrain {

template <class T>
struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;

    Matrix<T>& ensure_grad() {
        if (grad.empty() && !value.empty()) grad = Matrix<T>(value.rows(), value.cols());
        return grad;
    }
    bool has_grad() const noexcept { return !grad.empty(); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> make_var(Matrix<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <class T>
class Tape {
  public:
    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    /// Seeds d(loss)/d(loss) = seed and replays the recorded ops in reverse.
    void backward(const Var<T>& loss, T seed = T{1}) {
        if (loss->value.size() != 1) throw ShapeError("backward expects a scalar loss");
        loss->ensure_grad()[0] += seed;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

    std::size_t size() const noexcept { return ops_.size(); }
    void clear() { ops_.clear(); }

  private:
    std::vector<std::function<void()>> ops_;
};

/// Boolean row mask; true marks a padded (ignored) row.
using PadMask = std::vector<bool>;

namespace ops {

namespace detail {

template <class T>
bool tracks(const Tape<T>* tape, std::initializer_list<const Var<T>*> inputs) {
    if (tape == nullptr) return false;
    for (const Var<T>* v : inputs)
        if (*v && (*v)->requires_grad) return true;
    return false;
}

template <class T>
Var<T> result(Matrix<T> value, bool tracked) {
    return make_var(std::move(value), tracked);
}

inline std::size_t unmasked_count(const PadMask& mask, std::size_t n) {
    if (mask.empty()) return n;
    std::size_t c = 0;
    for (bool m : mask) c += m ? 0 : 1;
    return c;
}

}  // namespace detail

template <class T>
Var<T> matmul(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    const bool tracked = detail::tracks(tape, {&a, &b});
    auto out = detail::result(mixpretrain::matmul(a->value, b->value), tracked);
    if (tracked) {
        tape->record([a, b, o = out] {
            if (!o->has_grad()) return;
            if (a->requires_grad) kernels::gemm_nt_acc(o->grad, b->value, a->ensure_grad());
            if (b->requires_grad) kernels::gemm_tn_acc(a->value, o->grad, b->ensure_grad());
        });
    }
    return out;
}

/// A · Bᵀ
template <class T>
Var<T> matmul_nt(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (a->value.cols() != b->value.cols()) throw ShapeError("matmul_nt inner dimension mismatch");
    const bool tracked = detail::tracks(tape, {&a, &b});
    Matrix<T> bt = kernels::transpose(b->value);
    auto out = detail::result(mixpretrain::matmul(a->value, bt), tracked);
    if (tracked) {
        tape->record([a, b, o = out] {
            if (!o->has_grad()) return;
            // C = A Bᵀ: dA = dC B, dB = dCᵀ A
            if (a->requires_grad) kernels::gemm_acc(o->grad, b->value, a->ensure_grad());
            if (b->requires_grad) kernels::gemm_tn_acc(o->grad, a->value, b->ensure_grad());
        });
    }
    return out;
}

template <class T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("add shape mismatch");
    const bool tracked = detail::tracks(tape, {&a, &b});
    Matrix<T> v = a->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += b->value[i];
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, b, o = out] {
            if (!o->has_grad()) return;
            for (const auto* in : {&a, &b}) {
                if (!(*in)->requires_grad) continue;
                auto& g = (*in)->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
            }
        });
    }
    return out;
}

/// A (n×m) + b (1×m) broadcast over rows.
template <class T>
Var<T> add_bias(Tape<T>* tape, const Var<T>& a, const Var<T>& bias) {
    const std::size_t n = a->value.rows(), m = a->value.cols();
    if (bias->value.rows() != 1 || bias->value.cols() != m) throw ShapeError("bias width mismatch");
    const bool tracked = detail::tracks(tape, {&a, &bias});
    Matrix<T> v = a->value;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) v(r, c) += bias->value[c];
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, bias, o = out] {
            if (!o->has_grad()) return;
            if (a->requires_grad) {
                auto& g = a->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
            }
            if (bias->requires_grad) {
                auto& g = bias->ensure_grad();
                for (std::size_t r = 0; r < o->grad.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) g[c] += o->grad(r, c);
            }
        });
    }
    return out;
}

template <class T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    return add_bias(tape, matmul(tape, x, w), b);
}

template <class T>
Var<T> scale(Tape<T>* tape, const Var<T>& a, T s) {
    const bool tracked = detail::tracks(tape, {&a});
    Matrix<T> v = a->value;
    for (auto& x : v.storage()) x *= s;
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, s, o = out] {
            if (!o->has_grad()) return;
            auto& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o->grad[i];
        });
    }
    return out;
}

/// Row-wise layer normalization with learned gain and bias (1×m each).
template <class T>
Var<T> layer_norm(Tape<T>* tape, const Var<T>& a, const Var<T>& gain, const Var<T>& bias,
                  double eps = 1e-5) {
    const std::size_t n = a->value.rows(), m = a->value.cols();
    if (gain->value.size() != m || bias->value.size() != m) throw ShapeError("layer_norm width mismatch");
    const bool tracked = detail::tracks(tape, {&a, &gain, &bias});
    Matrix<T> xhat(n, m), v(n, m);
    std::vector<T> rstd(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = a->value.row(r);
        double mean = 0.0;
        for (T x : row) mean += x;
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (T x : row) var += (x - mean) * (x - mean);
        var /= static_cast<double>(m);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = static_cast<T>(rs);
        for (std::size_t c = 0; c < m; ++c) {
            xhat(r, c) = static_cast<T>((row[c] - mean) * rs);
            v(r, c) = gain->value[c] * xhat(r, c) + bias->value[c];
        }
    }
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), o = out] {
            if (!o->has_grad()) return;
            const std::size_t n = xhat.rows(), m = xhat.cols();
            const auto& dy = o->grad;
            if (gain->requires_grad) {
                auto& g = gain->ensure_grad();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < m; ++c) g[c] += dy(r, c) * xhat(r, c);
            }
            if (bias->requires_grad) {
                auto& g = bias->ensure_grad();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < m; ++c) g[c] += dy(r, c);
            }
            if (a->requires_grad) {
                auto& g = a->ensure_grad();
                for (std::size_t r = 0; r < n; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t c = 0; c < m; ++c) {
                        const double d = dy(r, c) * gain->value[c];
                        mean_d += d;
                        mean_dx += d * xhat(r, c);
                    }
                    mean_d /= static_cast<double>(m);
                    mean_dx /= static_cast<double>(m);
                    for (std::size_t c = 0; c < m; ++c) {
                        const double d = dy(r, c) * gain->value[c];
                        g(r, c) += static_cast<T>(rstd[r] * (d - mean_d - xhat(r, c) * mean_dx));
                    }
                }
            }
        });
    }
    return out;
}

/// tanh-approximated GELU.
template <class T>
Var<T> gelu(Tape<T>* tape, const Var<T>& a) {
    constexpr T k0 = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k1 = static_cast<T>(0.044715);
    const bool tracked = detail::tracks(tape, {&a});
    Matrix<T> v(a->value.rows(), a->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const T x = a->value[i];
        v[i] = T{0.5} * x * (T{1} + std::tanh(k0 * (x + k1 * x * x * x)));
    }
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, o = out] {
            if (!o->has_grad()) return;
            auto& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T x = a->value[i];
                const T t = std::tanh(k0 * (x + k1 * x * x * x));
                const T d = T{0.5} * (T{1} + t) +
                            T{0.5} * x * (T{1} - t * t) * k0 * (T{1} + T{3} * k1 * x * x);
                g[i] += d * o->grad[i];
            }
        });
    }
    return out;
}

template <class T>
T sigmoid_scalar(T z) {
    return z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
}

template <class T>
Var<T> sigmoid(Tape<T>* tape, const Var<T>& a) {
    const bool tracked = detail::tracks(tape, {&a});
    Matrix<T> v(a->value.rows(), a->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = sigmoid_scalar(a->value[i]);
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, o = out] {
            if (!o->has_grad()) return;
            auto& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T s = o->value[i];
                g[i] += s * (T{1} - s) * o->grad[i];
            }
        });
    }
    return out;
}

template <class T>
Var<T> tanh(Tape<T>* tape, const Var<T>& a) {
    const bool tracked = detail::tracks(tape, {&a});
    Matrix<T> v(a->value.rows(), a->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a->value[i]);
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, o = out] {
            if (!o->has_grad()) return;
            auto& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T t = o->value[i];
                g[i] += (T{1} - t * t) * o->grad[i];
            }
        });
    }
    return out;
}

/// Selects rows by index (duplicates allowed); the backward pass scatter-adds.
template <class T>
Var<T> gather_rows(Tape<T>* tape, const Var<T>& a, std::vector<std::size_t> idx) {
    const std::size_t m = a->value.cols();
    Matrix<T> v(idx.size(), m);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= a->value.rows()) throw ShapeError("gather_rows index out of range");
        std::copy_n(a->value.row(idx[i]).data(), m, v.row(i).data());
    }
    const bool tracked = detail::tracks(tape, {&a});
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, idx = std::move(idx), o = out] {
            if (!o->has_grad()) return;
            auto& g = a->ensure_grad();
            const std::size_t m = g.cols();
            for (std::size_t i = 0; i < idx.size(); ++i)
                kernels::axpy(g.row(idx[i]).data(), T{1}, o->grad.row(i).data(), m);
        });
    }
    return out;
}

template <class T>
Var<T> slice_rows(Tape<T>* tape, const Var<T>& a, std::size_t begin, std::size_t count) {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
    return gather_rows(tape, a, std::move(idx));
}

template <class T>
Var<T> concat_rows(Tape<T>* tape, const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    const std::size_t m = parts.front()->value.cols();
    std::size_t n = 0;
    bool tracked = false;
    for (const auto& p : parts) {
        if (p->value.cols() != m) throw ShapeError("concat_rows width mismatch");
        n += p->value.rows();
        tracked = tracked || (tape != nullptr && p->requires_grad);
    }
    Matrix<T> v(n, m);
    std::size_t at = 0;
    for (const auto& p : parts) {
        std::copy(p->value.storage().begin(), p->value.storage().end(), v.data() + at * m);
        at += p->value.rows();
    }
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([parts, o = out] {
            if (!o->has_grad()) return;
            std::size_t at = 0;
            for (const auto& p : parts) {
                const std::size_t cnt = p->value.size();
                if (p->requires_grad) {
                    auto& g = p->ensure_grad();
                    kernels::axpy(g.data(), T{1}, o->grad.data() + at, cnt);
                }
                at += cnt;
            }
        });
    }
    return out;
}

/// Concatenates two row vectors (1×a, 1×b) into 1×(a+b).
template <class T>
Var<T> concat_cols(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (a->value.rows() != 1 || b->value.rows() != 1) throw ShapeError("concat_cols expects row vectors");
    const std::size_t na = a->value.cols(), nb = b->value.cols();
    Matrix<T> v(1, na + nb);
    std::copy_n(a->value.data(), na, v.data());
    std::copy_n(b->value.data(), nb, v.data() + na);
    const bool tracked = detail::tracks(tape, {&a, &b});
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, b, na, nb, o = out] {
            if (!o->has_grad()) return;
            if (a->requires_grad) kernels::axpy(a->ensure_grad().data(), T{1}, o->grad.data(), na);
            if (b->requires_grad) kernels::axpy(b->ensure_grad().data(), T{1}, o->grad.data() + na, nb);
        });
    }
    return out;
}

/// Mean over rows not marked as padding → 1×m.
template <class T>
Var<T> mean_rows(Tape<T>* tape, const Var<T>& a, const PadMask& pad = {}) {
    const std::size_t n = a->value.rows(), m = a->value.cols();
    if (!pad.empty() && pad.size() != n) throw ShapeError("mean_rows mask length mismatch");
    const std::size_t cnt = detail::unmasked_count(pad, n);
    if (cnt == 0) throw ValidationError("mean_rows over an all-padding sequence");
    std::vector<double> acc(m, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        if (!pad.empty() && pad[r]) continue;
        for (std::size_t c = 0; c < m; ++c) acc[c] += a->value(r, c);
    }
    Matrix<T> v(1, m);
    for (std::size_t c = 0; c < m; ++c) v[c] = static_cast<T>(acc[c] / static_cast<double>(cnt));
    const bool tracked = detail::tracks(tape, {&a});
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, pad, cnt, o = out] {
            if (!o->has_grad()) return;
            auto& g = a->ensure_grad();
            const T inv = T{1} / static_cast<T>(cnt);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                if (!pad.empty() && pad[r]) continue;
                kernels::axpy(g.row(r).data(), inv, o->grad.data(), g.cols());
            }
        });
    }
    return out;
}

/// Per-row mean across columns, returned as a 1×n row vector; padded rows are 0.
template <class T>
Var<T> mean_cols(Tape<T>* tape, const Var<T>& a, const PadMask& pad = {}) {
    const std::size_t n = a->value.rows(), m = a->value.cols();
    if (!pad.empty() && pad.size() != n) throw ShapeError("mean_cols mask length mismatch");
    Matrix<T> v(1, n);
    for (std::size_t r = 0; r < n; ++r) {
        if (!pad.empty() && pad[r]) continue;
        double acc = 0.0;
        for (T x : a->value.row(r)) acc += x;
        v[r] = static_cast<T>(acc / static_cast<double>(m));
    }
    const bool tracked = detail::tracks(tape, {&a});
    auto out = detail::result(std::move(v), tracked);
    if (tracked) {
        tape->record([a, pad, o = out] {
            if (!o->has_grad()) return;
            auto& g = a->ensure_grad();
            const T inv = T{1} / static_cast<T>(g.cols());
            for (std::size_t r = 0; r < g.rows(); ++r) {
                if (!pad.empty() && pad[r]) continue;
                for (auto& x : g.row(r)) x += inv * o->grad[r];
            }
        });
    }
    return out;
}

/// Scaled dot-product attention over pre-projected Q (nq×C), K and V (nk×C),
/// split into `heads` column blocks. Keys marked in `key_pad` get exactly zero
/// weight. When `weights_out` is given it receives one nq×nk matrix per head.
template <class T>
Var<T> multi_head_attention(Tape<T>* tape, const Var<T>& q, const Var<T>& k, const Var<T>& v,
                            std::size_t heads, const PadMask& key_pad = {},
                            std::vector<Matrix<T>>* weights_out = nullptr) {
    const std::size_t nq = q->value.rows(), nk = k->value.rows(), c = q->value.cols();
    if (k->value.cols() != c || v->value.cols() != c || v->value.rows() != nk)
        throw ShapeError("attention projections disagree in shape");
    if (heads == 0 || c % heads != 0) throw ShapeError("hidden size not divisible by head count");
    if (!key_pad.empty() && key_pad.size() != nk)
        throw ShapeError("key padding mask has length " + std::to_string(key_pad.size()) + ", expected " +
                         std::to_string(nk));
    if (detail::unmasked_count(key_pad, nk) == 0) throw ValidationError("attention with every key padded");

    const std::size_t d = c / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Matrix<T>> probs(heads, Matrix<T>(nq, nk));
    Matrix<T> outv(nq, c);
    std::vector<double> logits(nk);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * d;
        auto& p = probs[h];
        for (std::size_t i = 0; i < nq; ++i) {
            const T* qi = q->value.data() + i * c + off;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < nk; ++j) {
                if (!key_pad.empty() && key_pad[j]) continue;
                const T* kj = k->value.data() + j * c + off;
                T dot{0};
                for (std::size_t t = 0; t < d; ++t) dot += qi[t] * kj[t];
                logits[j] = static_cast<double>(dot) * inv_sqrt_d;
                mx = std::max(mx, logits[j]);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < nk; ++j) {
                if (!key_pad.empty() && key_pad[j]) {
                    logits[j] = 0.0;
                    continue;
                }
                logits[j] = std::exp(logits[j] - mx);
                denom += logits[j];
            }
            T* orow = outv.data() + i * c + off;
            for (std::size_t j = 0; j < nk; ++j) {
                const T w = static_cast<T>(logits[j] / denom);
                p(i, j) = w;
                if (w != T{0}) kernels::axpy(orow, w, v->value.data() + j * c + off, d);
            }
        }
    }
    if (weights_out != nullptr) *weights_out = probs;
    const bool tracked = detail::tracks(tape, {&q, &k, &v});
    auto out = detail::result(std::move(outv), tracked);
    if (tracked) {
        tape->record([q, k, v, heads, d, inv_sqrt_d, probs = std::move(probs), o = out] {
            if (!o->has_grad()) return;
            const std::size_t nq = q->value.rows(), nk = k->value.rows(), c = q->value.cols();
            const T scale = static_cast<T>(inv_sqrt_d);
            Matrix<T>* gq = q->requires_grad ? &q->ensure_grad() : nullptr;
            Matrix<T>* gk = k->requires_grad ? &k->ensure_grad() : nullptr;
            Matrix<T>* gv = v->requires_grad ? &v->ensure_grad() : nullptr;
            std::vector<T> dp(nk);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * d;
                const auto& p = probs[h];
                for (std::size_t i = 0; i < nq; ++i) {
                    const T* go = o->grad.data() + i * c + off;
                    double dot_pdp = 0.0;
                    for (std::size_t j = 0; j < nk; ++j) {
                        const T* vj = v->value.data() + j * c + off;
                        T acc{0};
                        for (std::size_t t = 0; t < d; ++t) acc += go[t] * vj[t];
                        dp[j] = acc;
                        dot_pdp += static_cast<double>(acc) * p(i, j);
                        if (gv != nullptr && p(i, j) != T{0})
                            kernels::axpy(gv->data() + j * c + off, p(i, j), go, d);
                    }
                    for (std::size_t j = 0; j < nk; ++j) {
                        const T pij = p(i, j);
                        if (pij == T{0}) continue;
                        const T ds = pij * (dp[j] - static_cast<T>(dot_pdp)) * scale;
                        if (gq != nullptr)
                            kernels::axpy(gq->data() + i * c + off, ds, k->value.data() + j * c + off, d);
                        if (gk != nullptr)
                            kernels::axpy(gk->data() + j * c + off, ds, q->value.data() + i * c + off, d);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses. Each returns a 1×1 Var.

/// Mean multi-class cross-entropy of logit rows against integer targets.
template <class T>
Var<T> cross_entropy(Tape<T>* tape, const Var<T>& logits, const std::vector<int>& targets) {
    const std::size_t n = logits->value.rows(), m = logits->value.cols();
    if (targets.size() != n) throw ShapeError("cross_entropy target count mismatch");
    Matrix<T> probs(n, m);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = logits->value.row(r);
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= m)
            throw ShapeError("cross_entropy target out of range");
        double mx = -std::numeric_limits<double>::infinity();
        for (T x : row) mx = std::max(mx, static_cast<double>(x));
        double denom = 0.0;
        for (T x : row) denom += std::exp(x - mx);
        const double lse = mx + std::log(denom);
        total += lse - row[targets[r]];
        for (std::size_t c = 0; c < m; ++c) probs(r, c) = static_cast<T>(std::exp(row[c] - lse));
    }
    const double value = n == 0 ? 0.0 : total / static_cast<double>(n);
    const bool tracked = detail::tracks(tape, {&logits}) && n > 0;
    auto out = detail::result(Matrix<T>(1, 1, static_cast<T>(value)), tracked);
    if (tracked) {
        tape->record([logits, targets, probs = std::move(probs), o = out] {
            if (!o->has_grad()) return;
            auto& g = logits->ensure_grad();
            const T s = o->grad[0] / static_cast<T>(probs.rows());
            for (std::size_t r = 0; r < probs.rows(); ++r) {
                for (std::size_t c = 0; c < probs.cols(); ++c) g(r, c) += s * probs(r, c);
                g(r, static_cast<std::size_t>(targets[r])) -= s;
            }
        });
    }
    return out;
}

/// Mean absolute difference; subgradient 0 where prediction equals target.
template <class T>
Var<T> l1_loss(Tape<T>* tape, const Var<T>& pred, const Matrix<T>& target) {
    if (!pred->value.same_shape(target)) throw ShapeError("l1_loss shape mismatch");
    const std::size_t n = target.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::abs(static_cast<double>(pred->value[i]) - target[i]);
    const double value = n == 0 ? 0.0 : total / static_cast<double>(n);
    const bool tracked = detail::tracks(tape, {&pred}) && n > 0;
    auto out = detail::result(Matrix<T>(1, 1, static_cast<T>(value)), tracked);
    if (tracked) {
        tape->record([pred, target, o = out] {
            if (!o->has_grad()) return;
            auto& g = pred->ensure_grad();
            const T s = o->grad[0] / static_cast<T>(target.size());
            for (std::size_t i = 0; i < target.size(); ++i) {
                const T diff = pred->value[i] - target[i];
                g[i] += diff > T{0} ? s : (diff < T{0} ? -s : T{0});
            }
        });
    }
    return out;
}

/// Mean binary cross-entropy over every entry of `logits`, stable logit form.
template <class T>
Var<T> bce_with_logits(Tape<T>* tape, const Var<T>& logits, const Matrix<T>& targets) {
    if (!logits->value.same_shape(targets)) throw ShapeError("bce target shape mismatch");
    const std::size_t n = targets.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits->value[i], y = targets[i];
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    const bool tracked = detail::tracks(tape, {&logits});
    auto out = detail::result(Matrix<T>(1, 1, static_cast<T>(total / static_cast<double>(n))), tracked);
    if (tracked) {
        tape->record([logits, targets, o = out] {
            if (!o->has_grad()) return;
            auto& g = logits->ensure_grad();
            const T s = o->grad[0] / static_cast<T>(targets.size());
            for (std::size_t i = 0; i < targets.size(); ++i)
                g[i] += s * (sigmoid_scalar(logits->value[i]) - targets[i]);
        });
    }
    return out;
}

}  // namespace ops
}  // namespace mixpretrain
