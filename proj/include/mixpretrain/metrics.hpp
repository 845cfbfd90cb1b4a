#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixpretrain/data.hpp"
#include "mixpretrain/errors.hpp"

namespace mixpretrain {

/// Mann–Whitney AUC with half credit for ties. Empty when the labels hold a
/// single class.
inline std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // midranks, 1-based
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) rank[order[k]] = mid;
        i = j;
    }
    double pos = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] != 0) {
            pos += 1.0;
            rank_sum += rank[i];
        }
    const double neg = static_cast<double>(n) - pos;
    if (pos == 0.0 || neg == 0.0) return std::nullopt;
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

struct AucSummary {
    std::vector<std::optional<double>> per_class;
    std::optional<double> macro;
};

/// Per-class AUC over a score matrix (records × classes); the macro average
/// skips undefined classes.
inline AucSummary class_aucs(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("class_aucs: row count mismatch");
    AucSummary s;
    if (scores.empty()) return s;
    const std::size_t k = labels.front().size();
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> sc(scores.size());
        std::vector<int> lb(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            sc[i] = scores[i].at(c);
            lb[i] = labels[i].at(c);
        }
        auto a = auc(sc, lb);
        s.per_class.push_back(a);
        if (a) {
            sum += *a;
            ++defined;
        }
    }
    if (defined > 0) s.macro = sum / static_cast<double>(defined);
    return s;
}

/// Fraction of the top-K results whose label vector equals the query's
/// exactly. The denominator shrinks to the gallery size when it is below K.
inline double precision_at_k(const std::vector<std::size_t>& ranked, const std::vector<int>& query_labels,
                             const std::vector<std::vector<int>>& gallery_labels, std::size_t k) {
    if (k == 0) throw ConfigError("precision@K needs K >= 1");
    if (ranked.empty() || gallery_labels.empty()) throw ValidationError("precision@K over an empty gallery");
    const std::size_t top = std::min(k, ranked.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < top; ++i)
        if (gallery_labels.at(ranked[i]) == query_labels) ++hits;
    return static_cast<double>(hits) / static_cast<double>(top);
}

// ---------------------------------------------------------------------------
// Image quality on the [0,255] scale

struct ImageQuality {
    double mse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

inline constexpr double kPsnrCap = 100.0;

struct ImageView {
    std::size_t width = 0, height = 0;
    std::span<const double> values;  // [0,255]
};

inline std::vector<double> as_doubles(const GrayImage& img) { return {img.pixels.begin(), img.pixels.end()}; }

namespace detail {

inline std::vector<double> gaussian_window(int size = 11, double sigma = 1.5) {
    std::vector<double> w(static_cast<std::size_t>(size * size));
    const int r = size / 2;
    double total = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            w[static_cast<std::size_t>((y + r) * size + (x + r))] = v;
            total += v;
        }
    for (auto& v : w) v /= total;
    return w;
}

}  // namespace detail

/// Mean SSIM over every valid placement of an 11×11 Gaussian window (σ=1.5),
/// k1 = 0.01, k2 = 0.03, dynamic range 255.
inline double ssim(const ImageView& a, const ImageView& b) {
    constexpr int win = 11;
    if (a.width < win || a.height < win) throw ShapeError("SSIM needs images of at least 11x11");
    const auto w = detail::gaussian_window(win, 1.5);
    const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
    const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t y0 = 0; y0 + win <= a.height; ++y0) {
        for (std::size_t x0 = 0; x0 + win <= a.width; ++x0) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) {
                    const double wt = w[static_cast<std::size_t>(y * win + x)];
                    const std::size_t i = (y0 + y) * a.width + x0 + x;
                    mx += wt * a.values[i];
                    my += wt * b.values[i];
                }
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) {
                    const double wt = w[static_cast<std::size_t>(y * win + x)];
                    const std::size_t i = (y0 + y) * a.width + x0 + x;
                    const double dx = a.values[i] - mx, dy = b.values[i] - my;
                    sxx += wt * dx * dx;
                    syy += wt * dy * dy;
                    sxy += wt * dx * dy;
                }
            total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

inline ImageQuality image_quality(const ImageView& ref, const ImageView& cand) {
    if (ref.width != cand.width || ref.height != cand.height || ref.values.size() != cand.values.size())
        throw ShapeError("image_quality: dimension mismatch");
    ImageQuality q;
    double acc = 0.0;
    for (std::size_t i = 0; i < ref.values.size(); ++i) {
        const double d = ref.values[i] - cand.values[i];
        acc += d * d;
    }
    q.mse = acc / static_cast<double>(ref.values.size());
    q.psnr = q.mse < 1e-12 ? kPsnrCap : 10.0 * std::log10(255.0 * 255.0 / q.mse);
    q.ssim = ssim(ref, cand);
    return q;
}

inline ImageQuality image_quality(const GrayImage& ref, const GrayImage& cand) {
    const auto a = as_doubles(ref), b = as_doubles(cand);
    return image_quality(ImageView{ref.width, ref.height, a}, ImageView{cand.width, cand.height, b});
}

// ---------------------------------------------------------------------------
// Report

inline constexpr std::size_t kPrecisionKs[] = {1, 5, 10, 50};

struct ImageScore {
    std::string id;
    ImageQuality quality;
};

struct MetricReport {
    std::string task;
    std::vector<std::optional<double>> class_auc;
    std::optional<double> macro_auc;
    std::map<std::size_t, double> precision_at;  // K → P@K
    std::optional<double> chance_p1;
    std::optional<double> intra_hamming, inter_hamming;
    std::vector<ImageScore> images;
    std::optional<ImageQuality> average_quality;
    std::optional<double> pair_accuracy;
    std::optional<double> mean_prob_paired, mean_prob_unpaired;
};

inline nlohmann::ordered_json to_json(const MetricReport& r) {
    using oj = nlohmann::ordered_json;
    oj j;
    j["task"] = r.task;
    auto opt = [](const std::optional<double>& v) { return v ? oj(*v) : oj(nullptr); };
    if (!r.class_auc.empty() || r.macro_auc) {
        oj per = oj::array();
        for (const auto& a : r.class_auc) per.push_back(opt(a));
        j["auc"] = {{"per_class", per}, {"macro", opt(r.macro_auc)}};
    }
    if (!r.precision_at.empty()) {
        oj p;
        for (const auto& [k, v] : r.precision_at) p["P@" + std::to_string(k)] = v;
        j["precision"] = p;
        j["chance_p1"] = opt(r.chance_p1);
        j["hamming"] = {{"intra_class", opt(r.intra_hamming)}, {"inter_class", opt(r.inter_hamming)}};
    }
    if (!r.images.empty()) {
        oj imgs = oj::array();
        for (const auto& s : r.images)
            imgs.push_back({{"id", s.id}, {"mse", s.quality.mse}, {"psnr", s.quality.psnr}, {"ssim", s.quality.ssim}});
        j["images"] = imgs;
    }
    if (r.average_quality)
        j["average"] = {{"mse", r.average_quality->mse},
                        {"psnr", r.average_quality->psnr},
                        {"ssim", r.average_quality->ssim}};
    if (r.pair_accuracy)
        j["pair_matching"] = {{"accuracy", *r.pair_accuracy},
                              {"mean_prob_paired", opt(r.mean_prob_paired)},
                              {"mean_prob_unpaired", opt(r.mean_prob_unpaired)}};
    return j;
}

}  // namespace mixpretrain
