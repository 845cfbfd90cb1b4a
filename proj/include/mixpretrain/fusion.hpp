#pragma once

// Image-text correlation: UNIT cross-attention fusion, UWOX per-modality
// shared encoding, and the pair-matching head on the correlation matrix.

#include <string>

#include "mixpretrain/attention.hpp"

namespace mixpretrain {

template <class T>
struct FusionParams {
    SamParams<T> sam;     // SAM_unit or SAM_uwox
    Var<T> w_co, b_co;    // (max_tokens + total_patches) × 1, 1×1
    std::size_t max_tokens = 0;
    std::size_t total_patches = 0;
};

template <class T>
FusionParams<T> make_fusion(ParamStore<T>& store, const std::string& prefix, std::size_t hidden, std::size_t heads,
                            std::size_t max_tokens, std::size_t total_patches, std::mt19937_64& rng) {
    FusionParams<T> p;
    p.sam = make_sam(store, prefix + ".sam", hidden, heads, rng);
    p.w_co = store.add_weight(prefix + ".co.w", max_tokens + total_patches, 1, rng);
    p.b_co = store.add_constant(prefix + ".co.b", 1, T{0});
    p.max_tokens = max_tokens;
    p.total_patches = total_patches;
    return p;
}

template <class T>
struct FusedFeatures {
    Var<T> f_txt, f_img;
};

/// F_txt = SAM(E_img, E_txt, E_txt) and F_img = SAM(E_txt, E_img, E_img) with
/// one shared module. Queries come from the opposite modality, so F_txt has
/// the image row count and F_img the text row count.
template <class T>
FusedFeatures<T> unit_fuse(Tape<T>* tape, const Var<T>& e_txt, const Var<T>& e_img, const FusionParams<T>& p,
                           const PadMask& txt_pad = {}) {
    if (!e_txt || !e_img)
        throw ModeError("UNIT fusion needs both image and text inputs; use UWOX for single-modality data");
    FusedFeatures<T> out;
    out.f_txt = sam_forward(tape, e_img, e_txt, e_txt, p.sam, txt_pad);
    out.f_img = sam_forward(tape, e_txt, e_img, e_img, p.sam);
    return out;
}

/// UWOX: the shared module applied as self-attention to one modality.
template <class T>
Var<T> uwox_forward(Tape<T>* tape, const Var<T>& e, const FusionParams<T>& p, const PadMask& pad = {}) {
    return sam_forward(tape, e, e, e, p.sam, pad);
}

template <class T>
struct PairMatch {
    Var<T> logit;     // 1×1
    double probability = 0.0;
    Var<T> co_txt;    // 1×U, pooled over text rows
    Var<T> co_img;    // 1×max_tokens, pooled over image columns, zero at padding
};

/// CoMat = E_txt·E_imgᵀ, average-pooled along each axis (padding excluded),
/// concatenated as [CoF_txt ⊕ CoF_img] and mapped to a single logit.
template <class T>
PairMatch<T> pair_match(Tape<T>* tape, const Var<T>& e_txt, const Var<T>& e_img, const FusionParams<T>& p,
                        const PadMask& txt_pad = {}) {
    const std::size_t v = e_txt->value.rows();
    if (!txt_pad.empty() && txt_pad.size() != v) throw ShapeError("text mask length mismatch in pair matching");
    if (ops::detail::unmasked_count(txt_pad, v) == 0) throw ValidationError("pair matching needs unpadded text");
    if (e_img->value.rows() == 0) throw ValidationError("pair matching needs image patches");
    if (e_img->value.rows() != p.total_patches)
        throw ShapeError("pair matching built for " + std::to_string(p.total_patches) + " patches, got " +
                         std::to_string(e_img->value.rows()));
    auto comat = ops::matmul_nt(tape, e_txt, e_img);
    PairMatch<T> out;
    out.co_txt = ops::mean_rows(tape, comat, txt_pad);
    if (v > p.max_tokens) {
        // Only padding may spill past the fixed width.
        for (std::size_t r = p.max_tokens; r < v; ++r)
            if (txt_pad.empty() || !txt_pad[r]) throw ShapeError("text longer than the pair-matching width");
        PadMask head(txt_pad.begin(), txt_pad.begin() + static_cast<std::ptrdiff_t>(p.max_tokens));
        out.co_img = ops::mean_cols(tape, ops::slice_rows(tape, comat, 0, p.max_tokens), head);
    } else {
        out.co_img = ops::mean_cols(tape, comat, txt_pad);
        if (v < p.max_tokens) out.co_img = ops::concat_cols(tape, out.co_img, make_var(Matrix<T>(1, p.max_tokens - v)));
    }
    auto z = ops::concat_cols(tape, out.co_txt, out.co_img);
    out.logit = ops::add(tape, ops::matmul(tape, z, p.w_co), p.b_co);
    out.probability = static_cast<double>(ops::sigmoid_scalar(out.logit->value[0]));
    return out;
}

/// Binary cross-entropy on the pair logit.
template <class T>
Var<T> pair_match_loss(Tape<T>* tape, const Var<T>& logit, int i_pair) {
    if (i_pair != 0 && i_pair != 1) throw ValidationError("i_pair must be 0 or 1");
    return ops::bce_with_logits(tape, logit, Matrix<T>(1, 1, static_cast<T>(i_pair)));
}

}  // namespace mixpretrain
