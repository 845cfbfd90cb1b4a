#pragma once

// Reports → token sequences, images → (multi-scale) patch sequences, and the
// two-term normalized embeddings of both.

#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mixpretrain/autograd.hpp"
#include "mixpretrain/data.hpp"
#include "mixpretrain/params.hpp"

namespace mixpretrain {

inline constexpr int kPadId = 0;
inline constexpr int kUnknownId = 1;
inline constexpr std::size_t kDefaultMaxTokens = 150;

class Vocab {
  public:
    Vocab() : words_{"[pad]", "[unk]"} { rebuild(); }
    explicit Vocab(const std::vector<std::string>& words) : Vocab() {
        for (const auto& w : words) add(w);
    }

    int add(const std::string& word) {
        auto it = ids_.find(word);
        if (it != ids_.end()) return it->second;
        words_.push_back(word);
        ids_.emplace(word, static_cast<int>(words_.size() - 1));
        return static_cast<int>(words_.size() - 1);
    }
    int id(const std::string& word) const {
        auto it = ids_.find(word);
        return it == ids_.end() ? kUnknownId : it->second;
    }
    const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const noexcept { return words_.size(); }
    const std::vector<std::string>& words() const noexcept { return words_; }

    /// One word per line; line number is the id; lines 0 and 1 are reserved.
    static Vocab load(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open vocabulary " + path.string());
        Vocab v;
        v.words_.clear();
        std::string line;
        while (std::getline(f, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            v.words_.push_back(line);
        }
        if (v.words_.size() < 2) throw ValidationError("vocabulary must reserve ids 0 (pad) and 1 (unknown)");
        v.rebuild();
        return v;
    }
    void save(const std::filesystem::path& path) const {
        std::ofstream f(path);
        if (!f) throw IoError("cannot write " + path.string());
        for (const auto& w : words_) f << w << '\n';
    }

  private:
    void rebuild() {
        ids_.clear();
        for (std::size_t i = 2; i < words_.size(); ++i) ids_.emplace(words_[i], static_cast<int>(i));
    }
    std::vector<std::string> words_;
    std::map<std::string, int> ids_;
};

inline Vocab default_vocab() { return Vocab(template_words()); }

struct TokenSequence {
    std::vector<int> tokens;
    std::vector<int> positions;
    PadMask pad_mask;

    std::size_t size() const noexcept { return tokens.size(); }
    std::size_t unpadded() const {
        std::size_t n = 0;
        for (bool p : pad_mask) n += p ? 0 : 1;
        return n;
    }
};

/// Lowercased whitespace split, truncated to `max_len`, unknown-word fallback.
/// With `pad_to_max` the sequence is filled with pad ids up to `max_len`.
inline TokenSequence tokenize(const std::string& report, const Vocab& vocab, std::size_t max_len = kDefaultMaxTokens,
                              bool pad_to_max = false) {
    TokenSequence seq;
    std::istringstream in(report);
    std::string w;
    while (seq.tokens.size() < max_len && in >> w) {
        for (auto& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        seq.tokens.push_back(vocab.id(w));
    }
    seq.pad_mask.assign(seq.tokens.size(), false);
    if (pad_to_max) {
        seq.tokens.resize(max_len, kPadId);
        seq.pad_mask.resize(max_len, true);
    }
    seq.positions.resize(seq.tokens.size());
    for (std::size_t i = 0; i < seq.positions.size(); ++i) seq.positions[i] = static_cast<int>(i);
    return seq;
}

// ---------------------------------------------------------------------------
// Patches and the three-level pyramid

enum class Level { up, mid, down };

inline double level_scale(Level l) {
    switch (l) {
        case Level::up: return 0.25;
        case Level::mid: return 0.5;
        case Level::down: return 1.0;
    }
    return 1.0;
}

/// Intensity image in [0,1].
struct ImageF {
    std::size_t width = 0, height = 0;
    std::vector<double> values;

    double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

inline ImageF to_unit(const GrayImage& img) {
    ImageF f{img.width, img.height, std::vector<double>(img.pixels.size())};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) f.values[i] = img.pixels[i] / 255.0;
    return f;
}

/// 2×2 mean pooling.
inline ImageF downsample2(const ImageF& in) {
    ImageF out{in.width / 2, in.height / 2, {}};
    out.values.resize(out.width * out.height);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x)
            out.values[y * out.width + x] = 0.25 * (in.at(2 * x, 2 * y) + in.at(2 * x + 1, 2 * y) +
                                                    in.at(2 * x, 2 * y + 1) + in.at(2 * x + 1, 2 * y + 1));
    return out;
}

struct PatchSequence {
    std::size_t block = 0;
    Matrix<double> patches;                  // U × B², values in [0,1]
    std::vector<std::array<double, 4>> boxes;  // x_start, y_start, x_end, y_end in [0,1]
    double scale = 1.0;                      // x_scale = y_scale
    Level level = Level::down;
    std::size_t grid_w = 0, grid_h = 0;

    std::size_t size() const noexcept { return patches.rows(); }
};

/// Cuts an image into non-overlapping B×B patches in row-major order.
inline PatchSequence patchify(const ImageF& img, std::size_t block, Level level) {
    if (block == 0 || img.width % block != 0 || img.height % block != 0)
        throw GeometryError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                            " is not divisible by block size " + std::to_string(block));
    PatchSequence s;
    s.block = block;
    s.level = level;
    s.scale = level_scale(level);
    s.grid_w = img.width / block;
    s.grid_h = img.height / block;
    s.patches = Matrix<double>(s.grid_w * s.grid_h, block * block);
    for (std::size_t gy = 0; gy < s.grid_h; ++gy) {
        for (std::size_t gx = 0; gx < s.grid_w; ++gx) {
            const std::size_t u = gy * s.grid_w + gx;
            for (std::size_t y = 0; y < block; ++y)
                for (std::size_t x = 0; x < block; ++x)
                    s.patches(u, y * block + x) = img.at(gx * block + x, gy * block + y);
            s.boxes.push_back({static_cast<double>(gx) / s.grid_w, static_cast<double>(gy) / s.grid_h,
                               static_cast<double>(gx + 1) / s.grid_w, static_cast<double>(gy + 1) / s.grid_h});
        }
    }
    return s;
}

struct Pyramid {
    PatchSequence up, mid, down;

    std::size_t total() const noexcept { return up.size() + mid.size() + down.size(); }
};

inline void check_pyramid_geometry(std::size_t width, std::size_t height, std::size_t block) {
    if (block == 0 || width % (4 * block) != 0 || height % (4 * block) != 0)
        throw GeometryError("image " + std::to_string(width) + "x" + std::to_string(height) +
                            " must be divisible by 4*B = " + std::to_string(4 * block));
}

/// Three levels: down is the original image, mid and up are one and two rounds
/// of 2×2 mean pooling.
inline Pyramid build_pyramid(const ImageF& img, std::size_t block) {
    check_pyramid_geometry(img.width, img.height, block);
    const ImageF mid = downsample2(img);
    const ImageF up = downsample2(mid);
    return Pyramid{patchify(up, block, Level::up), patchify(mid, block, Level::mid), patchify(img, block, Level::down)};
}

inline Pyramid build_pyramid(const GrayImage& img, std::size_t block) { return build_pyramid(to_unit(img), block); }

/// Patch count for a given geometry, used to size fixed-width layers.
inline std::size_t patch_count(std::size_t width, std::size_t height, std::size_t block, bool multiscale) {
    std::size_t n = (width / block) * (height / block);
    if (multiscale) n += (width / (2 * block)) * (height / (2 * block)) + (width / (4 * block)) * (height / (4 * block));
    return n;
}

// ---------------------------------------------------------------------------
// Embeddings: x̂ = Norm(W_x x + b_x) + Norm(W_p p + b_p)

template <class T>
struct NormPair {
    Var<T> gain, bias;
};

template <class T>
struct TextEmbeddingParams {
    Var<T> tok_w, tok_b, pos_w, pos_b;
    NormPair<T> tok_norm, pos_norm;
    std::size_t max_len = kDefaultMaxTokens;
};

template <class T>
struct PatchEmbeddingParams {
    Var<T> patch_w, patch_b, pos_w, pos_b;
    NormPair<T> patch_norm, pos_norm;
    bool multiscale = true;
};

template <class T>
NormPair<T> make_norm(ParamStore<T>& store, const std::string& name, std::size_t c) {
    return {store.add_constant(name + ".gain", c, T{1}), store.add_constant(name + ".bias", c, T{0})};
}

template <class T>
TextEmbeddingParams<T> make_text_embedding(ParamStore<T>& store, const std::string& prefix, std::size_t vocab_size,
                                           std::size_t max_len, std::size_t hidden, std::mt19937_64& rng) {
    TextEmbeddingParams<T> p;
    p.tok_w = store.add_weight(prefix + ".tok.w", vocab_size, hidden, rng);
    p.tok_b = store.add_constant(prefix + ".tok.b", hidden, T{0});
    p.tok_norm = make_norm(store, prefix + ".tok.norm", hidden);
    p.pos_w = store.add_weight(prefix + ".pos.w", 1, hidden, rng);
    p.pos_b = store.add_weight(prefix + ".pos.b", 1, hidden, rng);
    p.pos_norm = make_norm(store, prefix + ".pos.norm", hidden);
    p.max_len = max_len;
    return p;
}

template <class T>
PatchEmbeddingParams<T> make_patch_embedding(ParamStore<T>& store, const std::string& prefix, std::size_t block,
                                             bool multiscale, std::size_t hidden, std::mt19937_64& rng) {
    PatchEmbeddingParams<T> p;
    p.patch_w = store.add_weight(prefix + ".patch.w", block * block, hidden, rng);
    p.patch_b = store.add_constant(prefix + ".patch.b", hidden, T{0});
    p.patch_norm = make_norm(store, prefix + ".patch.norm", hidden);
    p.pos_w = store.add_weight(prefix + ".pos.w", multiscale ? 6 : 4, hidden, rng);
    p.pos_b = store.add_weight(prefix + ".pos.b", 1, hidden, rng);
    p.pos_norm = make_norm(store, prefix + ".pos.norm", hidden);
    p.multiscale = multiscale;
    return p;
}

template <class T>
Var<T> normed(Tape<T>* tape, const Var<T>& x, const NormPair<T>& n) {
    return ops::layer_norm(tape, x, n.gain, n.bias);
}

/// Token lookup is the one-hot product W_x·onehot(x); the position index is
/// passed as the scalar v / max_len through a learned 1×C map.
template <class T>
Var<T> embed_text(Tape<T>* tape, const TokenSequence& seq, const TextEmbeddingParams<T>& p) {
    const std::size_t vocab = p.tok_w->value.rows();
    std::vector<std::size_t> ids(seq.tokens.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (seq.tokens[i] < 0 || static_cast<std::size_t>(seq.tokens[i]) >= vocab)
            throw ValidationError("token id " + std::to_string(seq.tokens[i]) + " outside the vocabulary");
        ids[i] = static_cast<std::size_t>(seq.tokens[i]);
    }
    auto tok = ops::add_bias(tape, ops::gather_rows(tape, p.tok_w, std::move(ids)), p.tok_b);
    Matrix<T> pos(seq.positions.size(), 1);
    for (std::size_t i = 0; i < pos.rows(); ++i)
        pos[i] = static_cast<T>(static_cast<double>(seq.positions[i]) / static_cast<double>(p.max_len));
    auto pe = ops::linear(tape, make_var(std::move(pos)), p.pos_w, p.pos_b);
    return ops::add(tape, normed(tape, tok, p.tok_norm), normed(tape, pe, p.pos_norm));
}

/// Positional rows: [x_start, y_start, x_end, y_end(, x_scale, y_scale)].
template <class T>
Matrix<T> patch_positions(const PatchSequence& seq, bool multiscale) {
    const std::size_t w = multiscale ? 6 : 4;
    Matrix<T> pos(seq.boxes.size(), w);
    for (std::size_t u = 0; u < seq.boxes.size(); ++u) {
        const auto& b = seq.boxes[u];
        for (double v : b)
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("patch box coordinate outside [0,1]");
        if (!(b[0] < b[2] && b[1] < b[3])) throw ValidationError("degenerate patch box");
        for (std::size_t k = 0; k < 4; ++k) pos(u, k) = static_cast<T>(b[k]);
        if (multiscale) {
            pos(u, 4) = static_cast<T>(seq.scale);
            pos(u, 5) = static_cast<T>(seq.scale);
        }
    }
    return pos;
}

/// Embeds the given patch content (U × B²) at the positions of `seq`.
template <class T>
Var<T> embed_patches(Tape<T>* tape, const Var<T>& content, const PatchSequence& seq, const PatchEmbeddingParams<T>& p) {
    if (content->value.cols() != p.patch_w->value.rows())
        throw ShapeError("patch length " + std::to_string(content->value.cols()) + " does not match B*B = " +
                         std::to_string(p.patch_w->value.rows()));
    if (content->value.rows() != seq.boxes.size()) throw ShapeError("patch content and boxes disagree in count");
    auto x = ops::linear(tape, content, p.patch_w, p.patch_b);
    auto pe = ops::linear(tape, make_var(patch_positions<T>(seq, p.multiscale)), p.pos_w, p.pos_b);
    return ops::add(tape, normed(tape, x, p.patch_norm), normed(tape, pe, p.pos_norm));
}

template <class T>
Var<T> embed_patches(Tape<T>* tape, const PatchSequence& seq, const PatchEmbeddingParams<T>& p) {
    return embed_patches(tape, make_var(seq.patches.template cast<T>()), seq, p);
}

}  // namespace mixpretrain
