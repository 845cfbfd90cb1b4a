#pragma once

// Masking by random substitution, the masked-word / masked-patch losses, and
// assembly of the total loss per training mode.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mixpretrain/autograd.hpp"
#include "mixpretrain/tokenize.hpp"

namespace mixpretrain {

enum class TrainMode { unit, uwox, img_only, txt_only };

inline std::string_view to_string(TrainMode m) {
    switch (m) {
        case TrainMode::unit: return "unit";
        case TrainMode::uwox: return "uwox";
        case TrainMode::img_only: return "img_only";
        case TrainMode::txt_only: return "txt_only";
    }
    return "?";
}
inline TrainMode parse_mode(std::string_view s) {
    if (s == "unit") return TrainMode::unit;
    if (s == "uwox") return TrainMode::uwox;
    if (s == "img_only") return TrainMode::img_only;
    if (s == "txt_only") return TrainMode::txt_only;
    throw ConfigError("unknown mode '" + std::string(s) + "'");
}
inline bool uses_text(TrainMode m) { return m != TrainMode::img_only; }
inline bool uses_image(TrainMode m) { return m != TrainMode::txt_only; }
inline bool uses_pair_matching(TrainMode m) { return m == TrainMode::uwox; }

template <class Item>
struct MaskPlan {
    std::vector<std::size_t> positions;  // ascending, unique
    std::vector<Item> replacements;
    std::vector<Item> originals;

    std::size_t size() const noexcept { return positions.size(); }
};

/// round(rate * n) with ties to even, at least one, at most n.
inline std::size_t masked_count(double rate, std::size_t n) {
    if (n == 0) return 0;
    auto k = static_cast<std::size_t>(std::nearbyint(rate * static_cast<double>(n)));
    return std::clamp<std::size_t>(k, 1, n);
}

namespace detail {

inline std::vector<std::size_t> sample_positions(const std::vector<std::size_t>& candidates, std::size_t k,
                                                 std::mt19937_64& rng) {
    std::vector<std::size_t> pool = candidates;
    // partial Fisher-Yates
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace detail

/// Replaces round(rate·V) unpadded tokens with ids drawn uniformly from the
/// non-reserved vocabulary.
inline std::pair<TokenSequence, MaskPlan<int>> mask_tokens(const TokenSequence& seq, double rate, std::mt19937_64& rng,
                                                           std::size_t vocab_size) {
    if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("mask rate must lie in (0, 1)");
    if (vocab_size <= 2) throw ConfigError("vocabulary has no non-reserved words");
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < seq.size(); ++i)
        if (seq.pad_mask.empty() || !seq.pad_mask[i]) live.push_back(i);
    if (live.empty()) throw ValidationError("cannot mask an all-padding sequence");
    MaskPlan<int> plan;
    plan.positions = detail::sample_positions(live, masked_count(rate, live.size()), rng);
    TokenSequence out = seq;
    std::uniform_int_distribution<int> word(2, static_cast<int>(vocab_size) - 1);
    for (std::size_t pos : plan.positions) {
        plan.originals.push_back(seq.tokens[pos]);
        const int rep = word(rng);
        plan.replacements.push_back(rep);
        out.tokens[pos] = rep;
    }
    return {std::move(out), std::move(plan)};
}

/// Replaces round(rate·U) patches with rows drawn uniformly from `donors`.
inline std::pair<PatchSequence, MaskPlan<std::vector<double>>> mask_patches(const PatchSequence& seq, double rate,
                                                                            std::mt19937_64& rng,
                                                                            const Matrix<double>& donors) {
    if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("mask rate must lie in (0, 1)");
    if (donors.rows() == 0) throw ConfigError("empty donor pool");
    if (donors.cols() != seq.patches.cols()) throw ShapeError("donor patch length mismatch");
    std::vector<std::size_t> all(seq.size());
    std::iota(all.begin(), all.end(), 0);
    MaskPlan<std::vector<double>> plan;
    plan.positions = detail::sample_positions(all, masked_count(rate, all.size()), rng);
    PatchSequence out = seq;
    std::uniform_int_distribution<std::size_t> pick(0, donors.rows() - 1);
    for (std::size_t pos : plan.positions) {
        const auto orig = seq.patches.row(pos);
        plan.originals.emplace_back(orig.begin(), orig.end());
        const auto don = donors.row(pick(rng));
        plan.replacements.emplace_back(don.begin(), don.end());
        std::copy(don.begin(), don.end(), out.patches.row(pos).begin());
    }
    return {std::move(out), std::move(plan)};
}

/// Positions to corrupt in one pass, without corrupting: used when the caller
/// chooses positions itself (regeneration passes).
inline MaskPlan<std::vector<double>> plan_patch_substitution(const PatchSequence& seq,
                                                             std::vector<std::size_t> positions,
                                                             std::mt19937_64& rng, const Matrix<double>& donors) {
    MaskPlan<std::vector<double>> plan;
    std::sort(positions.begin(), positions.end());
    plan.positions = std::move(positions);
    std::uniform_int_distribution<std::size_t> pick(0, donors.rows() - 1);
    for (std::size_t pos : plan.positions) {
        const auto orig = seq.patches.row(pos);
        plan.originals.emplace_back(orig.begin(), orig.end());
        const auto don = donors.row(pick(rng));
        plan.replacements.emplace_back(don.begin(), don.end());
    }
    return plan;
}

inline PatchSequence apply_plan(const PatchSequence& seq, const MaskPlan<std::vector<double>>& plan) {
    PatchSequence out = seq;
    for (std::size_t i = 0; i < plan.size(); ++i)
        std::copy(plan.replacements[i].begin(), plan.replacements[i].end(), out.patches.row(plan.positions[i]).begin());
    return out;
}

/// Mean cross-entropy over masked positions; zero when nothing is masked.
template <class T>
Var<T> loss_txt(Tape<T>* tape, const Var<T>& logits_at_masked, const std::vector<int>& originals) {
    if (originals.empty()) return make_var(Matrix<T>(1, 1));
    return ops::cross_entropy(tape, logits_at_masked, originals);
}

/// Mean absolute intensity error over masked patches; zero when nothing is masked.
template <class T>
Var<T> loss_img(Tape<T>* tape, const Var<T>& predicted_at_masked, const std::vector<std::vector<double>>& originals) {
    if (originals.empty()) return make_var(Matrix<T>(1, 1));
    const std::size_t w = originals.front().size();
    Matrix<T> target(originals.size(), w);
    for (std::size_t i = 0; i < originals.size(); ++i)
        for (std::size_t j = 0; j < w; ++j) target(i, j) = static_cast<T>(originals[i][j]);
    return ops::l1_loss(tape, predicted_at_masked, target);
}

/// Unweighted sum of the components that belong to `mode`: UNIT drops the
/// pair-matching term, single-modality modes keep only their own term.
inline double total_loss(std::optional<double> l_txt, std::optional<double> l_img, std::optional<double> l_co,
                         TrainMode mode) {
    double total = 0.0;
    if (uses_text(mode) && l_txt) total += *l_txt;
    if (uses_image(mode) && l_img) total += *l_img;
    if (uses_pair_matching(mode) && l_co) total += *l_co;
    return total;
}

template <class T>
Var<T> total_loss(Tape<T>* tape, const Var<T>& l_txt, const Var<T>& l_img, const Var<T>& l_co, TrainMode mode) {
    Var<T> total = make_var(Matrix<T>(1, 1));
    if (uses_text(mode) && l_txt) total = ops::add(tape, total, l_txt);
    if (uses_image(mode) && l_img) total = ops::add(tape, total, l_img);
    if (uses_pair_matching(mode) && l_co) total = ops::add(tape, total, l_co);
    return total;
}

}  // namespace mixpretrain
