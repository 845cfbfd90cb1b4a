#pragma once

// The full network: embeddings, shared encoder, fusion, decoders and heads,
// with forward passes for pre-training, fine-tuning features, pair matching
// and image regeneration.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mixpretrain/decoder.hpp"
#include "mixpretrain/fusion.hpp"
#include "mixpretrain/heads.hpp"
#include "mixpretrain/metrics.hpp"
#include "mixpretrain/objectives.hpp"

namespace mixpretrain {

struct ModelConfig {
    TrainMode mode = TrainMode::uwox;
    std::size_t vocab_size = 0;
    std::size_t max_tokens = 16;  // V_max
    std::size_t image_size = 32;
    std::size_t block = 8;
    bool multiscale = true;
    std::size_t hidden = 32;
    std::size_t heads = 4;
    std::size_t layers = 2;

    std::size_t total_patches() const { return patch_count(image_size, image_size, block, multiscale); }
    std::size_t down_patches() const { return patch_count(image_size, image_size, block, false); }

    void validate() const {
        if (vocab_size <= 2) throw ConfigError("vocabulary must hold at least one non-reserved word");
        if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
        if (hidden == 0 || heads == 0 || hidden % heads != 0) throw ConfigError("hidden size must be a multiple of heads");
        if (multiscale)
            check_pyramid_geometry(image_size, image_size, block);
        else if (block == 0 || image_size % block != 0)
            throw GeometryError("image size must be divisible by the block size");
    }
};

/// Which pooled feature feeds a fine-tuning head.
enum class FeatureSource { image, text, both };

inline std::string_view to_string(FeatureSource s) {
    switch (s) {
        case FeatureSource::image: return "image";
        case FeatureSource::text: return "text";
        case FeatureSource::both: return "both";
    }
    return "?";
}
inline FeatureSource parse_feature_source(std::string_view s) {
    if (s == "image") return FeatureSource::image;
    if (s == "text") return FeatureSource::text;
    if (s == "both") return FeatureSource::both;
    throw ConfigError("unknown feature source '" + std::string(s) + "'");
}

/// Image pyramid prepared for the model. Single-scale models only read `down`.
struct ImageInput {
    Pyramid pyramid;

    static ImageInput from(const GrayImage& img, const ModelConfig& cfg) {
        if (img.width != cfg.image_size || img.height != cfg.image_size)
            throw ConfigError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                              ", model expects " + std::to_string(cfg.image_size));
        ImageInput in;
        if (cfg.multiscale) {
            in.pyramid = build_pyramid(img, cfg.block);
        } else {
            in.pyramid.down = patchify(to_unit(img), cfg.block, Level::down);
        }
        return in;
    }
};

template <class T>
struct PretrainTerms {
    Var<T> l_txt, l_img, l_co, total;
};

/// Masked inputs for one pre-training tuple.
struct MaskedTuple {
    std::optional<TokenSequence> tokens;
    MaskPlan<int> token_plan;
    const ImageInput* image = nullptr;
    std::optional<PatchSequence> down;
    MaskPlan<std::vector<double>> patch_plan;
    int i_pair = 1;
};

struct Regeneration {
    ImageF image;
    ImageQuality quality;
};

template <class T>
class Model {
  public:
    Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const std::size_t c = cfg_.hidden;
        text_ = make_text_embedding(store_, "embed.text", cfg_.vocab_size, cfg_.max_tokens, c, rng);
        patch_ = make_patch_embedding(store_, "embed.image", cfg_.block, cfg_.multiscale, c, rng);
        encoder_ = make_encoder(store_, "encoder", cfg_.layers, c, cfg_.heads, rng);
        fusion_ = make_fusion(store_, "fusion", c, cfg_.heads, cfg_.max_tokens, cfg_.total_patches(), rng);
        decoder_ = make_decoder(store_, "decoder", c, cfg_.heads, cfg_.block, rng);
        text_head_ = make_mlp(store_, "text_head", c, c, cfg_.vocab_size, rng);
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const noexcept { return cfg_; }
    ParamStore<T>& params() noexcept { return store_; }
    const ParamStore<T>& params() const noexcept { return store_; }

    const EncoderStack<T>& encoder() const noexcept { return encoder_; }
    const FusionParams<T>& fusion() const noexcept { return fusion_; }
    const DecoderParams<T>& decoder() const noexcept { return decoder_; }

    void add_cls_head(std::size_t classes, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        cls_ = make_head(store_, "head.cls", cfg_.hidden, classes, rng);
    }
    void add_hash_head(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        hash_ = make_head(store_, "head.hash", cfg_.hidden, kHashBits, rng);
    }
    const std::optional<LinearHead<T>>& cls_head() const noexcept { return cls_; }
    const std::optional<LinearHead<T>>& hash_head() const noexcept { return hash_; }

    TokenSequence tokens(const std::string& report, const Vocab& vocab) const {
        return tokenize(report, vocab, cfg_.max_tokens);
    }

    // -----------------------------------------------------------------------
    // Encoders

    Var<T> encode_text(Tape<T>* tape, const TokenSequence& seq) const {
        return encode(tape, embed_text(tape, seq, text_), encoder_, seq.pad_mask);
    }

    /// Per-level encodings concatenated in (up, mid, down) order; the down
    /// level reads `down` when given (masked content).
    Var<T> encode_image(Tape<T>* tape, const ImageInput& in, const PatchSequence* down = nullptr) const {
        const PatchSequence& d = down != nullptr ? *down : in.pyramid.down;
        auto e_down = encode(tape, embed_patches(tape, d, patch_), encoder_);
        if (!cfg_.multiscale) return e_down;
        LevelEncodings<T> lv;
        lv.up = encode(tape, embed_patches(tape, in.pyramid.up, patch_), encoder_);
        lv.mid = encode(tape, embed_patches(tape, in.pyramid.mid, patch_), encoder_);
        lv.down = e_down;
        return concat_levels(tape, lv);
    }

    /// One decoded row per requested down-level patch, squashed to [0,1].
    Var<T> decode_patches(Tape<T>* tape, const Var<T>& f_img, const ImageInput& in,
                          const std::vector<std::size_t>& positions) const {
        const std::size_t n_down = in.pyramid.down.size();
        if (!cfg_.multiscale) return predict_patches(tape, ops::gather_rows(tape, f_img, positions), decoder_);
        const std::size_t n_up = in.pyramid.up.size(), n_mid = in.pyramid.mid.size();
        auto f_up = ops::slice_rows(tape, f_img, 0, n_up);
        auto f_mid = ops::slice_rows(tape, f_img, n_up, n_mid);
        auto f_down = ops::slice_rows(tape, f_img, n_up + n_mid, n_down);
        auto d_down = decode_cascade(tape, f_up, f_mid, f_down, decoder_);
        auto q = ops::gather_rows(tape, f_down, positions);
        return predict_patches(tape, refine_down(tape, q, d_down, decoder_), decoder_);
    }

    Var<T> word_logits(Tape<T>* tape, const Var<T>& f_txt, const std::vector<std::size_t>& positions) const {
        return mlp_forward(tape, ops::gather_rows(tape, f_txt, positions), text_head_);
    }

    // -----------------------------------------------------------------------
    // Pre-training

    PretrainTerms<T> pretrain_terms(Tape<T>* tape, const MaskedTuple& mt) const {
        const TrainMode mode = cfg_.mode;
        PretrainTerms<T> out;
        const bool want_text = uses_text(mode), want_image = uses_image(mode);
        if (want_text && !mt.tokens) throw ModeError(std::string(to_string(mode)) + " pre-training needs text input");
        if (want_image && (mt.image == nullptr || !mt.down))
            throw ModeError(std::string(to_string(mode)) + " pre-training needs image input");

        Var<T> e_txt, e_img, f_for_words, f_for_patches;
        if (want_text) e_txt = encode_text(tape, *mt.tokens);
        if (want_image) e_img = encode_image(tape, *mt.image, &*mt.down);

        if (mode == TrainMode::unit) {
            auto fused = unit_fuse(tape, e_txt, e_img, fusion_, mt.tokens->pad_mask);
            // F_txt carries the image row count, F_img the text row count.
            f_for_patches = fused.f_txt;
            f_for_words = fused.f_img;
        } else {
            if (want_text) f_for_words = uwox_forward(tape, e_txt, fusion_, mt.tokens->pad_mask);
            if (want_image) f_for_patches = uwox_forward(tape, e_img, fusion_);
        }

        if (want_text) {
            auto logits = word_logits(tape, f_for_words, mt.token_plan.positions);
            out.l_txt = loss_txt(tape, logits, mt.token_plan.originals);
        }
        if (want_image) {
            auto pred = decode_patches(tape, f_for_patches, *mt.image, mt.patch_plan.positions);
            out.l_img = loss_img(tape, pred, mt.patch_plan.originals);
        }
        if (uses_pair_matching(mode)) {
            auto pm = pair_match(tape, e_txt, e_img, fusion_, mt.tokens->pad_mask);
            out.l_co = pair_match_loss(tape, pm.logit, mt.i_pair);
        }
        out.total = total_loss(tape, out.l_txt, out.l_img, out.l_co, mode);
        return out;
    }

    // -----------------------------------------------------------------------
    // Fine-tuning features

    /// Pooled 1×C feature. UWOX-family models pool each modality after the
    /// shared module and average for `both`; UNIT needs both inputs and
    /// averages its two fused outputs.
    Var<T> pooled(Tape<T>* tape, const TokenSequence* text, const ImageInput* image, FeatureSource src) const {
        if (cfg_.mode == TrainMode::unit) {
            if (text == nullptr || image == nullptr || src != FeatureSource::both)
                throw ModeError("UNIT features need both image and text; use UWOX for single-modality queries");
            auto fused = unit_fuse(tape, encode_text(tape, *text), encode_image(tape, *image), fusion_, text->pad_mask);
            auto a = ops::mean_rows(tape, fused.f_txt);
            auto b = ops::mean_rows(tape, fused.f_img, text->pad_mask);
            return ops::scale(tape, ops::add(tape, a, b), T{0.5});
        }
        Var<T> fi, ft;
        if (src != FeatureSource::text) {
            if (image == nullptr) throw ModeError("image features requested without an image");
            fi = ops::mean_rows(tape, uwox_forward(tape, encode_image(tape, *image), fusion_));
        }
        if (src != FeatureSource::image) {
            if (text == nullptr) throw ModeError("text features requested without a report");
            ft = ops::mean_rows(tape, uwox_forward(tape, encode_text(tape, *text), fusion_, text->pad_mask),
                                text->pad_mask);
        }
        if (!ft) return fi;
        if (!fi) return ft;
        return ops::scale(tape, ops::add(tape, fi, ft), T{0.5});
    }

    Var<T> cls_logits(Tape<T>* tape, const Var<T>& pooled_feature) const {
        if (!cls_) throw ModeError("model has no classification head");
        return ops::linear(tape, pooled_feature, cls_->w, cls_->b);
    }
    Var<T> hash_code(Tape<T>* tape, const Var<T>& pooled_feature) const {
        if (!hash_) throw ModeError("model has no hashing head");
        return ops::tanh(tape, ops::linear(tape, pooled_feature, hash_->w, hash_->b));
    }

    std::vector<double> class_probabilities(const TokenSequence* text, const ImageInput* image,
                                            FeatureSource src) const {
        auto logits = cls_logits(nullptr, pooled(nullptr, text, image, src));
        std::vector<double> p(logits->value.size());
        for (std::size_t k = 0; k < p.size(); ++k) p[k] = ops::sigmoid_scalar(static_cast<double>(logits->value[k]));
        return p;
    }
    HashCode hash(const TokenSequence* text, const ImageInput* image, FeatureSource src) const {
        auto code = hash_code(nullptr, pooled(nullptr, text, image, src));
        return binarize<T>(code->value.row(0));
    }

    // -----------------------------------------------------------------------
    // Inference paths

    /// Image-only UWOX output (all levels); never touches text structures.
    Var<T> image_only_features(const ImageInput& in) const {
        if (cfg_.mode == TrainMode::unit) throw ModeError("UNIT cannot run on an image alone; use UWOX");
        return uwox_forward<T>(nullptr, encode_image(nullptr, in), fusion_);
    }

    double pair_probability(const TokenSequence& text, const ImageInput& image) const {
        if (cfg_.mode != TrainMode::uwox) throw ModeError("pair matching is trained only in UWOX mode");
        return pair_match<T>(nullptr, encode_text(nullptr, text), encode_image(nullptr, image), fusion_,
                             text.pad_mask)
            .probability;
    }

    /// Masks the down level in ⌈1/rate⌉ groups (patch j in group j mod passes),
    /// predicts each group from a pass where it is corrupted, and reassembles.
    Regeneration regenerate(const ImageInput& in, double rate, std::uint64_t seed,
                            const TokenSequence* text = nullptr) const {
        if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("regeneration mask rate must lie in (0, 1]");
        if (uses_text(cfg_.mode) && !uses_image(cfg_.mode)) throw ModeError("a text-only model cannot regenerate images");
        if (cfg_.mode == TrainMode::unit && text == nullptr) throw ModeError("UNIT regeneration needs the report");
        const PatchSequence& down = in.pyramid.down;
        if (down.block != cfg_.block || down.size() != cfg_.down_patches())
            throw ConfigError("image geometry does not match the checkpoint");
        const auto passes = static_cast<std::size_t>(std::ceil(1.0 / rate - 1e-12));
        std::mt19937_64 rng(seed);
        Matrix<double> pred(down.size(), down.patches.cols());
        for (std::size_t pass = 0; pass < passes; ++pass) {
            std::vector<std::size_t> group;
            for (std::size_t j = pass; j < down.size(); j += passes) group.push_back(j);
            if (group.empty()) continue;
            auto plan = plan_patch_substitution(down, group, rng, down.patches);
            const PatchSequence corrupted = apply_plan(down, plan);
            auto e_img = encode_image(nullptr, in, &corrupted);
            Var<T> f;
            if (cfg_.mode == TrainMode::unit)
                f = unit_fuse<T>(nullptr, encode_text(nullptr, *text), e_img, fusion_, text->pad_mask).f_txt;
            else
                f = uwox_forward<T>(nullptr, e_img, fusion_);
            auto rows = decode_patches(nullptr, f, in, plan.positions);
            for (std::size_t i = 0; i < plan.size(); ++i)
                for (std::size_t k = 0; k < pred.cols(); ++k)
                    pred(plan.positions[i], k) = static_cast<double>(rows->value(i, k));
        }
        Regeneration r;
        r.image = reassemble(down, pred);
        std::vector<double> ref(down.grid_w * down.block * down.grid_h * down.block), cand(ref.size());
        const ImageF orig = reassemble(down, down.patches);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            ref[i] = orig.values[i] * 255.0;
            cand[i] = r.image.values[i] * 255.0;
        }
        r.quality = image_quality(ImageView{orig.width, orig.height, ref}, ImageView{orig.width, orig.height, cand});
        return r;
    }

  private:
    ModelConfig cfg_;
    ParamStore<T> store_;
    TextEmbeddingParams<T> text_;
    PatchEmbeddingParams<T> patch_;
    EncoderStack<T> encoder_;
    FusionParams<T> fusion_;
    DecoderParams<T> decoder_;
    MlpParams<T> text_head_;
    std::optional<LinearHead<T>> cls_, hash_;
};

inline GrayImage to_gray(const ImageF& img) {
    GrayImage g(img.width, img.height);
    for (std::size_t i = 0; i < img.values.size(); ++i)
        g.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(img.values[i] * 255.0), 0L, 255L));
    return g;
}

}  // namespace mixpretrain
