#pragma once

#include <string>
#include <vector>

#include "mixpretrain/autograd.hpp"
#include "mixpretrain/params.hpp"
#include "mixpretrain/tokenize.hpp"

namespace mixpretrain {

/// One self-attention module: multi-head attention with residual and
/// post-norm, then a 4C GELU feed-forward block with residual and post-norm.
template <class T>
struct SamParams {
    Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
    NormPair<T> norm1;
    Var<T> ff1_w, ff1_b, ff2_w, ff2_b;
    NormPair<T> norm2;
    std::size_t heads = 1;

    std::size_t hidden() const { return wq->value.rows(); }
};

template <class T>
SamParams<T> make_sam(ParamStore<T>& store, const std::string& prefix, std::size_t hidden, std::size_t heads,
                      std::mt19937_64& rng) {
    if (heads == 0 || hidden % heads != 0)
        throw ConfigError("hidden size " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    SamParams<T> p;
    p.heads = heads;
    p.wq = store.add_weight(prefix + ".attn.wq", hidden, hidden, rng);
    p.bq = store.add_constant(prefix + ".attn.bq", hidden, T{0});
    p.wk = store.add_weight(prefix + ".attn.wk", hidden, hidden, rng);
    p.bk = store.add_constant(prefix + ".attn.bk", hidden, T{0});
    p.wv = store.add_weight(prefix + ".attn.wv", hidden, hidden, rng);
    p.bv = store.add_constant(prefix + ".attn.bv", hidden, T{0});
    p.wo = store.add_weight(prefix + ".attn.wo", hidden, hidden, rng);
    p.bo = store.add_constant(prefix + ".attn.bo", hidden, T{0});
    p.norm1 = make_norm(store, prefix + ".norm1", hidden);
    p.ff1_w = store.add_weight(prefix + ".ff1.w", hidden, 4 * hidden, rng);
    p.ff1_b = store.add_constant(prefix + ".ff1.b", 4 * hidden, T{0});
    p.ff2_w = store.add_weight(prefix + ".ff2.w", 4 * hidden, hidden, rng);
    p.ff2_b = store.add_constant(prefix + ".ff2.b", hidden, T{0});
    p.norm2 = make_norm(store, prefix + ".norm2", hidden);
    return p;
}

/// SAM(Q, K, V). Output has Q's row count; keys flagged in `key_pad` receive
/// zero attention weight.
template <class T>
Var<T> sam_forward(Tape<T>* tape, const Var<T>& q, const Var<T>& k, const Var<T>& v, const SamParams<T>& p,
                   const PadMask& key_pad = {}, std::vector<Matrix<T>>* weights_out = nullptr) {
    if (k->value.rows() != v->value.rows()) throw ShapeError("SAM keys and values differ in length");
    if (!key_pad.empty() && key_pad.size() != k->value.rows())
        throw ShapeError("SAM key mask length " + std::to_string(key_pad.size()) + " != " +
                         std::to_string(k->value.rows()));
    auto qp = ops::linear(tape, q, p.wq, p.bq);
    auto kp = ops::linear(tape, k, p.wk, p.bk);
    auto vp = ops::linear(tape, v, p.wv, p.bv);
    auto att = ops::multi_head_attention(tape, qp, kp, vp, p.heads, key_pad, weights_out);
    auto x = normed(tape, ops::add(tape, q, ops::linear(tape, att, p.wo, p.bo)), p.norm1);
    auto f = ops::linear(tape, ops::gelu(tape, ops::linear(tape, x, p.ff1_w, p.ff1_b)), p.ff2_w, p.ff2_b);
    return normed(tape, ops::add(tape, x, f), p.norm2);
}

/// N_e self-attention modules applied in order. A single instance serves
/// both modalities.
template <class T>
struct EncoderStack {
    std::vector<SamParams<T>> layers;
};

template <class T>
EncoderStack<T> make_encoder(ParamStore<T>& store, const std::string& prefix, std::size_t n_layers, std::size_t hidden,
                             std::size_t heads, std::mt19937_64& rng) {
    EncoderStack<T> s;
    for (std::size_t i = 0; i < n_layers; ++i)
        s.layers.push_back(make_sam(store, prefix + ".layer" + std::to_string(i), hidden, heads, rng));
    return s;
}

template <class T>
Var<T> encode(Tape<T>* tape, Var<T> x, const EncoderStack<T>& stack, const PadMask& pad = {}) {
    for (const auto& layer : stack.layers) x = sam_forward(tape, x, x, x, layer, pad);
    return x;
}

/// Per-level encodings, each level encoded independently.
template <class T>
struct LevelEncodings {
    Var<T> up, mid, down;

    std::vector<Var<T>> ordered() const { return {up, mid, down}; }
};

template <class T>
Var<T> concat_levels(Tape<T>* tape, const LevelEncodings<T>& e) {
    return ops::concat_rows(tape, e.ordered());
}

}  // namespace mixpretrain
