#pragma once

// Top-down decoder cascade over the image pyramid and the MLP patch predictor.

#include <string>
#include <vector>

#include "mixpretrain/attention.hpp"

namespace mixpretrain {

/// Two-layer perceptron C → C → out with a GELU in between.
template <class T>
struct MlpParams {
    Var<T> w1, b1, w2, b2;
};

template <class T>
MlpParams<T> make_mlp(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                      std::size_t out, std::mt19937_64& rng) {
    return {store.add_weight(prefix + ".fc1.w", in, hidden, rng), store.add_constant(prefix + ".fc1.b", hidden, T{0}),
            store.add_weight(prefix + ".fc2.w", hidden, out, rng), store.add_constant(prefix + ".fc2.b", out, T{0})};
}

template <class T>
Var<T> mlp_forward(Tape<T>* tape, const Var<T>& x, const MlpParams<T>& p) {
    return ops::linear(tape, ops::gelu(tape, ops::linear(tape, x, p.w1, p.b1)), p.w2, p.b2);
}

template <class T>
struct DecoderParams {
    SamParams<T> sam;   // SAM_d, shared by every cascade step
    MlpParams<T> mlp;   // C → C → B·B
    std::size_t block = 0;
};

template <class T>
DecoderParams<T> make_decoder(ParamStore<T>& store, const std::string& prefix, std::size_t hidden, std::size_t heads,
                              std::size_t block, std::mt19937_64& rng) {
    DecoderParams<T> p;
    p.sam = make_sam(store, prefix + ".sam", hidden, heads, rng);
    p.mlp = make_mlp(store, prefix + ".mlp", hidden, hidden, block * block, rng);
    p.block = block;
    return p;
}

/// D_up = SAM_d(F_up, F_up, F_up); D_mid = SAM_d(D_up, F_mid, F_mid);
/// D_down = SAM_d(D_mid, F_down, F_down). Row counts follow the query
/// argument, so every D level has F_up's row count.
template <class T>
Var<T> decode_cascade(Tape<T>* tape, const Var<T>& f_up, const Var<T>& f_mid, const Var<T>& f_down,
                      const DecoderParams<T>& p) {
    if (!f_up || !f_mid || !f_down) throw ShapeError("decoder cascade needs the up, mid and down levels");
    auto d_up = sam_forward(tape, f_up, f_up, f_up, p.sam);
    auto d_mid = sam_forward(tape, d_up, f_mid, f_mid, p.sam);
    return sam_forward(tape, d_mid, f_down, f_down, p.sam);
}

/// Brings the cascade back to one row per requested down-level patch:
/// SAM_d(F_down[rows], D_down, D_down).
template <class T>
Var<T> refine_down(Tape<T>* tape, const Var<T>& f_down_rows, const Var<T>& d_down, const DecoderParams<T>& p) {
    return sam_forward(tape, f_down_rows, d_down, d_down, p.sam);
}

/// Per-row MLP followed by a logistic squashing into [0,1].
template <class T>
Var<T> predict_patches(Tape<T>* tape, const Var<T>& rows, const DecoderParams<T>& p) {
    return ops::sigmoid(tape, mlp_forward(tape, rows, p.mlp));
}

/// Writes one predicted patch per row of `predictions` back at its box.
/// Throws if the patches leave a gap or overlap.
inline ImageF reassemble(const PatchSequence& geometry, const Matrix<double>& predictions) {
    const std::size_t b = geometry.block;
    if (predictions.rows() != geometry.size() || predictions.cols() != b * b)
        throw ShapeError("prediction matrix does not match the patch grid");
    ImageF img{geometry.grid_w * b, geometry.grid_h * b, {}};
    img.values.assign(img.width * img.height, 0.0);
    std::vector<int> hits(img.values.size(), 0);
    for (std::size_t u = 0; u < geometry.size(); ++u) {
        const auto& box = geometry.boxes[u];
        const auto x0 = static_cast<std::size_t>(std::llround(box[0] * static_cast<double>(img.width)));
        const auto y0 = static_cast<std::size_t>(std::llround(box[1] * static_cast<double>(img.height)));
        for (std::size_t y = 0; y < b; ++y)
            for (std::size_t x = 0; x < b; ++x) {
                const std::size_t i = (y0 + y) * img.width + (x0 + x);
                img.values[i] = predictions(u, y * b + x);
                ++hits[i];
            }
    }
    for (int h : hits)
        if (h != 1) throw GeometryError("patch reassembly left a gap or overlap");
    return img;
}

}  // namespace mixpretrain
