#pragma once

// Fine-tuning heads: multi-label classification and 64-bit hashing with the
// Cauchy pairwise loss, plus Hamming-distance retrieval.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mixpretrain/autograd.hpp"
#include "mixpretrain/params.hpp"

namespace mixpretrain {

inline constexpr std::size_t kHashBits = 64;

template <class T>
struct LinearHead {
    Var<T> w, b;

    std::size_t outputs() const { return w->value.cols(); }
};

template <class T>
LinearHead<T> make_head(ParamStore<T>& store, const std::string& prefix, std::size_t hidden, std::size_t outputs,
                        std::mt19937_64& rng) {
    return {store.add_weight(prefix + ".w", hidden, outputs, rng), store.add_constant(prefix + ".b", outputs, T{0})};
}

/// Masked global average pooling followed by the linear map. Returns logits (1×K).
template <class T>
Var<T> head_logits(Tape<T>* tape, const Var<T>& features, const LinearHead<T>& head, const PadMask& pad = {}) {
    return ops::linear(tape, ops::mean_rows(tape, features, pad), head.w, head.b);
}

template <class T>
std::vector<double> classify(const Var<T>& features, const LinearHead<T>& head, const PadMask& pad = {}) {
    auto logits = head_logits<T>(nullptr, features, head, pad);
    std::vector<double> p(logits->value.size());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = ops::sigmoid_scalar(static_cast<double>(logits->value[k]));
    return p;
}

struct HashCode {
    std::uint64_t bits = 0;

    friend bool operator==(const HashCode&, const HashCode&) = default;

    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(bits));
        return buf;
    }
    static HashCode from_hex(const std::string& s) {
        if (s.size() != 16 || s.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
            throw ValidationError("hash code must be 16 hex characters, got '" + s + "'");
        return {std::stoull(s, nullptr, 16)};
    }
};

inline int hamming(HashCode a, HashCode b) { return std::popcount(a.bits ^ b.bits); }

/// Bit i is set when component i is ≥ 0 (zero maps to 1).
template <class T>
HashCode binarize(std::span<const T> code) {
    if (code.size() != kHashBits) throw ShapeError("hash code must have 64 components");
    HashCode h;
    for (std::size_t i = 0; i < kHashBits; ++i)
        if (code[i] >= T{0}) h.bits |= (std::uint64_t{1} << i);
    return h;
}

/// Continuous code in (−1,1) from the pooled features.
template <class T>
Var<T> hash_continuous(Tape<T>* tape, const Var<T>& features, const LinearHead<T>& head, const PadMask& pad = {}) {
    return ops::tanh(tape, head_logits(tape, features, head, pad));
}

template <class T>
std::pair<Var<T>, HashCode> hash_encode(Tape<T>* tape, const Var<T>& features, const LinearHead<T>& head,
                                        const PadMask& pad = {}) {
    auto code = hash_continuous(tape, features, head, pad);
    return {code, binarize<T>(code->value.row(0))};
}

struct CauchyConfig {
    double gamma = 32.0;
    double lambda_q = 0.1;
};

/// s_ij = 1 iff the two label vectors are identical.
inline Matrix<double> label_similarity(const std::vector<std::vector<int>>& labels) {
    Matrix<double> s(labels.size(), labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t j = 0; j < labels.size(); ++j) s(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
    return s;
}

namespace detail {

/// d = (bits/2)·(1 − cos(a, b)) and its gradient w.r.t. a.
inline double cosine_distance(const double* a, const double* b, std::size_t n, double* grad_a) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    const double na = std::sqrt(aa) + 1e-12, nb = std::sqrt(bb) + 1e-12;
    const double cos = ab / (na * nb);
    const double half = static_cast<double>(n) / 2.0;
    if (grad_a != nullptr)
        for (std::size_t i = 0; i < n; ++i) grad_a[i] = -half * (b[i] / (na * nb) - cos * a[i] / (na * na));
    return half * (1.0 - cos);
}

}  // namespace detail

/// Pairwise Cauchy cross-entropy over all i<j with p_ij = γ/(γ + d_ij), plus
/// λ_q · mean_i −ln(γ/(γ + d(h_i, sign(h_i)))). Distances are cosine distances
/// scaled to [0, bits].
template <class T>
Var<T> cauchy_hash_loss(Tape<T>* tape, const Var<T>& codes, const Matrix<double>& similarity, CauchyConfig cfg = {}) {
    if (!(cfg.gamma > 0.0)) throw ConfigError("Cauchy gamma must be positive");
    const std::size_t n = codes->value.rows(), bits = codes->value.cols();
    if (n < 2) throw ValidationError("Cauchy hashing loss needs a batch of at least 2");
    if (similarity.rows() != n || similarity.cols() != n) throw ShapeError("similarity matrix size mismatch");

    Matrix<double> h = codes->value.template cast<double>();
    Matrix<double> grad(n, bits);
    std::vector<double> ga(bits), gb(bits), sg(bits);
    const double g = cfg.gamma;
    const double pairs = static_cast<double>(n * (n - 1) / 2);
    double pair_loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = detail::cosine_distance(h.row(i).data(), h.row(j).data(), bits, ga.data());
            detail::cosine_distance(h.row(j).data(), h.row(i).data(), bits, gb.data());
            const double s = similarity(i, j);
            const double dc = std::max(d, 1e-12);
            pair_loss += s * (std::log(g + d) - std::log(g)) + (1.0 - s) * (std::log(g + d) - std::log(dc));
            const double dl_dd = (1.0 / (g + d) - (1.0 - s) / dc) / pairs;
            for (std::size_t k = 0; k < bits; ++k) {
                grad(i, k) += dl_dd * ga[k];
                grad(j, k) += dl_dd * gb[k];
            }
        }
    }
    pair_loss /= pairs;
    double quant = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < bits; ++k) sg[k] = h(i, k) >= 0.0 ? 1.0 : -1.0;
        const double d = detail::cosine_distance(h.row(i).data(), sg.data(), bits, ga.data());
        quant += std::log(g + d) - std::log(g);
        const double dl_dd = cfg.lambda_q / ((g + d) * static_cast<double>(n));
        for (std::size_t k = 0; k < bits; ++k) grad(i, k) += dl_dd * ga[k];
    }
    quant /= static_cast<double>(n);

    const bool tracked = ops::detail::tracks(tape, {&codes});
    auto out = make_var(Matrix<T>(1, 1, static_cast<T>(pair_loss + cfg.lambda_q * quant)), tracked);
    if (tracked) {
        tape->record([codes, grad = std::move(grad), o = out] {
            if (!o->has_grad()) return;
            auto& gc = codes->ensure_grad();
            for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += static_cast<T>(grad[i] * o->grad[0]);
        });
    }
    return out;
}

/// Gallery indices ordered by ascending Hamming distance to `query`, ties
/// broken by id.
inline std::vector<std::size_t> retrieve(HashCode query, const std::vector<HashCode>& gallery,
                                         const std::vector<std::string>& ids) {
    if (gallery.empty()) throw ValidationError("retrieval gallery is empty");
    if (ids.size() != gallery.size()) throw ShapeError("gallery ids and codes differ in count");
    std::vector<std::size_t> order(gallery.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> dist(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) dist[i] = hamming(query, gallery[i]);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dist[a] != dist[b] ? dist[a] < dist[b] : ids[a] < ids[b];
    });
    return order;
}

// ---------------------------------------------------------------------------
// Gallery index: "<id>\t<16 hex>\t<0,1,...>" per line

struct GalleryEntry {
    std::string id;
    HashCode code;
    std::vector<int> labels;

    friend bool operator==(const GalleryEntry&, const GalleryEntry&) = default;
};

inline void write_gallery(const std::filesystem::path& path, const std::vector<GalleryEntry>& entries) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    for (const auto& e : entries) {
        f << e.id << '\t' << e.code.hex() << '\t';
        for (std::size_t k = 0; k < e.labels.size(); ++k) f << (k ? "," : "") << e.labels[k];
        f << '\n';
    }
}

inline std::vector<GalleryEntry> read_gallery(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<GalleryEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream in(line);
        std::string id, hex, labels;
        if (!std::getline(in, id, '\t') || !std::getline(in, hex, '\t') || !std::getline(in, labels))
            throw ParseError("gallery line needs id, code and labels", line_no);
        GalleryEntry e;
        e.id = id;
        try {
            e.code = HashCode::from_hex(hex);
        } catch (const ValidationError& err) {
            throw ParseError(err.what(), line_no);
        }
        std::istringstream ls(labels);
        std::string tok;
        while (std::getline(ls, tok, ',')) {
            if (tok != "0" && tok != "1") throw ParseError("labels must be 0/1", line_no);
            e.labels.push_back(tok == "1");
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace mixpretrain
