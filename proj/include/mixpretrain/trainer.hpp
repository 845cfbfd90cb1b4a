#pragma once

// Optimization loops (pre-training and fine-tuning), checkpoint round-trips,
// evaluation pipelines and the scenario experiment matrix.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixpretrain/checkpoint.hpp"
#include "mixpretrain/config.hpp"
#include "mixpretrain/model.hpp"

namespace mixpretrain {

enum class Task { cls, hash, retrieval, regen, pairmatch };

inline std::string_view to_string(Task t) {
    switch (t) {
        case Task::cls: return "cls";
        case Task::hash: return "hash";
        case Task::retrieval: return "retrieval";
        case Task::regen: return "regen";
        case Task::pairmatch: return "pairmatch";
    }
    return "?";
}
inline Task parse_task(std::string_view s) {
    if (s == "cls") return Task::cls;
    if (s == "hash") return Task::hash;
    if (s == "retrieval") return Task::retrieval;
    if (s == "regen") return Task::regen;
    if (s == "pairmatch") return Task::pairmatch;
    throw ConfigError("unknown task '" + std::string(s) + "'");
}

/// Pre-training input: no label field exists at this stage.
struct PreparedTuple {
    TokenSequence tokens;
    ImageInput image;
    int i_pair = 1;
};

struct PreparedRecord {
    std::string id;
    std::optional<TokenSequence> tokens;
    ImageInput image;
    std::vector<int> labels;
    GrayImage raw;
};

struct LossRow {
    std::uint64_t step = 0;
    std::optional<double> l_txt, l_img, l_co;
    double total = 0.0;
};

inline void write_loss_curve(const std::filesystem::path& path, const std::vector<LossRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << "step,l_txt,l_img,l_co,total\n";
    f.precision(9);
    auto cell = [&](const std::optional<double>& v) {
        if (v) f << *v;
    };
    for (const auto& r : rows) {
        f << r.step << ',';
        cell(r.l_txt);
        f << ',';
        cell(r.l_img);
        f << ',';
        cell(r.l_co);
        f << ',' << r.total << '\n';
    }
}

/// Sample indices for one step. Step s reads positions s·B … s·B+B−1 of an
/// endless stream in which epoch e is a seed-determined permutation of 0..N−1.
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step, std::size_t batch, std::size_t n) {
    if (n == 0) throw ConfigError("cannot draw a batch from an empty set");
    std::vector<std::size_t> out;
    out.reserve(batch);
    std::uint64_t cached_epoch = ~std::uint64_t{0};
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < batch; ++i) {
        const std::uint64_t pos = step * batch + i;
        const std::uint64_t epoch = pos / n;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), 0);
            std::mt19937_64 r(detail::splitmix64(seed ^ detail::splitmix64(epoch + 0x51ed270b2d1c6a2bULL)));
            std::shuffle(perm.begin(), perm.end(), r);
            cached_epoch = epoch;
        }
        out.push_back(perm[pos % n]);
    }
    return out;
}

class Trainer {
  public:
    using Net = Model<float>;

    Trainer(const TrainConfig& cfg, Vocab vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
        cfg_.validate();
        model_ = std::make_unique<Net>(cfg_.model(vocab_.size()), cfg_.seed);
        adam_ = Adam<float>(AdamConfig{cfg_.learning_rate});
        rng_.seed(detail::splitmix64(cfg_.seed ^ 0x6d61736bULL));
    }

    /// Restores parameters, optimizer moments, step counter and rng state.
    static Trainer from_checkpoint(const Checkpoint& ck) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(ck.config_json);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("checkpoint config is not JSON: ") + e.what());
        }
        Vocab vocab(std::vector<std::string>{});
        {
            const auto words = j.at("vocab").get<std::vector<std::string>>();
            if (words.size() < 2) throw IoError("checkpoint vocabulary is missing reserved ids");
            vocab = Vocab(std::vector<std::string>(words.begin() + 2, words.end()));
        }
        Trainer t(apply_json(TrainConfig{}, j.at("train")), std::move(vocab));
        if (const auto* b = ck.find("head.cls.w")) t.model_->add_cls_head(b->value.cols(), 0);
        if (ck.find("head.hash.w") != nullptr) t.model_->add_hash_head(0);
        for (const auto& e : t.model_->params().entries()) {
            const auto* b = ck.find(e.name);
            if (b == nullptr) throw ConfigError("checkpoint lacks parameter block '" + e.name + "'");
            t.copy_block(e.name, e.var->value, b->value);
            const auto* m = ck.find("adam.m:" + e.name);
            const auto* v = ck.find("adam.v:" + e.name);
            if ((m == nullptr) != (v == nullptr)) throw IoError("incomplete optimizer state for '" + e.name + "'");
            if (m != nullptr) {
                auto& st = t.adam_.state()[e.name];
                st.m = m->value;
                st.v = v->value;
            }
        }
        t.step_ = ck.step;
        t.adam_.set_steps(ck.optimizer_step);
        t.rng_ = rng_from_string(ck.rng_state);
        return t;
    }

    static Trainer load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

    /// Fresh fine-tuning run: optional pre-trained weights, a new head, a new
    /// optimizer. Head blocks of `init` are ignored.
    static Trainer for_finetune(const TrainConfig& cfg, Vocab vocab, const Checkpoint* init, Task task) {
        if (task != Task::cls && task != Task::hash) throw ConfigError("fine-tuning supports the cls and hash tasks");
        Trainer t(cfg, std::move(vocab));
        if (init != nullptr) {
            for (const auto& e : t.model_->params().entries()) {
                const auto* b = init->find(e.name);
                if (b == nullptr) throw ConfigError("checkpoint lacks parameter block '" + e.name + "'");
                t.copy_block(e.name, e.var->value, b->value);
            }
        }
        if (task == Task::cls) t.model_->add_cls_head(cfg.num_classes, detail::splitmix64(cfg.seed ^ 0x636c73ULL));
        else t.model_->add_hash_head(detail::splitmix64(cfg.seed ^ 0x68617368ULL));
        return t;
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        nlohmann::ordered_json j;
        j["train"] = to_json(cfg_);
        j["vocab"] = vocab_.words();
        ck.config_json = j.dump();
        ck.step = step_;
        ck.optimizer_step = adam_.steps();
        ck.rng_state = rng_to_string(rng_);
        for (const auto& e : model_->params().entries()) ck.blocks.push_back({e.name, e.var->value});
        for (const auto& e : model_->params().entries()) {
            auto it = adam_.state().find(e.name);
            if (it == adam_.state().end()) continue;
            ck.blocks.push_back({"adam.m:" + e.name, it->second.m});
            ck.blocks.push_back({"adam.v:" + e.name, it->second.v});
        }
        return ck;
    }
    void save(const std::filesystem::path& path) const { write_checkpoint(path, checkpoint()); }

    const TrainConfig& config() const noexcept { return cfg_; }
    const Vocab& vocab() const noexcept { return vocab_; }
    Net& model() noexcept { return *model_; }
    const Net& model() const noexcept { return *model_; }
    std::uint64_t step() const noexcept { return step_; }

    // -----------------------------------------------------------------------
    // Input preparation

    std::vector<PreparedTuple> prepare(const std::vector<TrainingTuple>& tuples) const {
        std::vector<PreparedTuple> out;
        out.reserve(tuples.size());
        for (const auto& t : tuples)
            out.push_back({model_->tokens(t.report, vocab_), ImageInput::from(t.image, model_->config()), t.i_pair});
        return out;
    }

    std::vector<PreparedRecord> prepare(const std::vector<StudyRecord>& records) const {
        std::vector<PreparedRecord> out;
        out.reserve(records.size());
        for (const auto& r : records) {
            PreparedRecord p;
            p.id = r.id;
            if (r.has_report) p.tokens = model_->tokens(r.report, vocab_);
            p.image = ImageInput::from(r.image, model_->config());
            p.labels = r.labels;
            p.raw = r.image;
            out.push_back(std::move(p));
        }
        return out;
    }

    // -----------------------------------------------------------------------
    // Pre-training

    LossRow pretrain_step(const std::vector<PreparedTuple>& data) {
        const TrainMode mode = cfg_.mode;
        const auto idx = batch_indices(cfg_.seed, step_, cfg_.batch_size, data.size());
        Matrix<double> donors;
        if (uses_image(mode)) {
            const std::size_t per = data[idx.front()].image.pyramid.down.size();
            const std::size_t w = data[idx.front()].image.pyramid.down.patches.cols();
            donors = Matrix<double>(per * idx.size(), w);
            std::size_t r = 0;
            for (std::size_t i : idx) {
                const auto& p = data[i].image.pyramid.down.patches;
                std::copy(p.data(), p.data() + p.size(), donors.row(r).data());
                r += p.rows();
            }
        }
        Tape<float> tape;
        Var<float> acc;
        double s_txt = 0, s_img = 0, s_co = 0, s_tot = 0;
        for (std::size_t i : idx) {
            const auto& t = data[i];
            MaskedTuple mt;
            mt.i_pair = t.i_pair;
            mt.tokens = t.tokens;
            if (uses_text(mode)) {
                auto [seq, plan] = mask_tokens(t.tokens, cfg_.mask_rate, rng_, vocab_.size());
                mt.tokens = std::move(seq);
                mt.token_plan = std::move(plan);
            }
            if (uses_image(mode)) {
                auto [seq, plan] = mask_patches(t.image.pyramid.down, cfg_.mask_rate, rng_, donors);
                mt.image = &t.image;
                mt.down = std::move(seq);
                mt.patch_plan = std::move(plan);
            }
            auto terms = model_->pretrain_terms(&tape, mt);
            if (terms.l_txt) s_txt += terms.l_txt->value[0];
            if (terms.l_img) s_img += terms.l_img->value[0];
            if (terms.l_co) s_co += terms.l_co->value[0];
            s_tot += terms.total->value[0];
            acc = acc ? ops::add(&tape, acc, terms.total) : terms.total;
        }
        const float inv = 1.0f / static_cast<float>(idx.size());
        auto loss = ops::scale(&tape, acc, inv);
        apply_update(tape, loss);

        LossRow row;
        row.step = step_;
        const double n = static_cast<double>(idx.size());
        if (uses_text(mode)) row.l_txt = s_txt / n;
        if (uses_image(mode)) row.l_img = s_img / n;
        if (uses_pair_matching(mode)) row.l_co = s_co / n;
        row.total = s_tot / n;
        return row;
    }

    std::vector<LossRow> pretrain(const std::vector<PreparedTuple>& data, std::size_t steps) {
        if (data.empty()) throw ConfigError("pre-training needs a non-empty pretrain set");
        std::vector<LossRow> rows;
        rows.reserve(steps);
        for (std::size_t s = 0; s < steps; ++s) rows.push_back(pretrain_step(data));
        return rows;
    }

    std::size_t pretrain_steps(std::size_t n) const {
        return cfg_.steps > 0 ? cfg_.steps : cfg_.epochs * ((n + cfg_.batch_size - 1) / cfg_.batch_size);
    }
    std::size_t finetune_steps(std::size_t n) const {
        return cfg_.finetune_steps > 0 ? cfg_.finetune_steps
                                       : cfg_.finetune_epochs * ((n + cfg_.batch_size - 1) / cfg_.batch_size);
    }

    // -----------------------------------------------------------------------
    // Fine-tuning

    Var<float> pooled(Tape<float>* tape, const PreparedRecord& r) const {
        const TokenSequence* text = r.tokens ? &*r.tokens : nullptr;
        FeatureSource src = cfg_.features;
        if (cfg_.mode == TrainMode::unit) src = FeatureSource::both;
        if (src != FeatureSource::image && text == nullptr)
            throw ValidationError("record '" + r.id + "' has no report but the head reads text features");
        return model_->pooled(tape, text, &r.image, src);
    }

    double finetune_step(const std::vector<PreparedRecord>& data) {
        if (data.empty()) throw ConfigError("fine-tuning needs a non-empty set");
        const auto idx = batch_indices(cfg_.seed ^ 0x66696e65ULL, step_, cfg_.batch_size, data.size());
        Tape<float> tape;
        Var<float> loss;
        if (model_->cls_head()) {
            Var<float> acc;
            for (std::size_t i : idx) {
                const auto& r = data[i];
                if (r.labels.size() != model_->cls_head()->outputs())
                    throw ValidationError("record '" + r.id + "' label count does not match the head");
                Matrix<float> target(1, r.labels.size());
                for (std::size_t k = 0; k < r.labels.size(); ++k) target[k] = static_cast<float>(r.labels[k]);
                auto l = ops::bce_with_logits(&tape, model_->cls_logits(&tape, pooled(&tape, r)), target);
                acc = acc ? ops::add(&tape, acc, l) : l;
            }
            loss = ops::scale(&tape, acc, 1.0f / static_cast<float>(idx.size()));
        } else if (model_->hash_head()) {
            std::vector<Var<float>> codes;
            std::vector<std::vector<int>> labels;
            for (std::size_t i : idx) {
                codes.push_back(model_->hash_code(&tape, pooled(&tape, data[i])));
                labels.push_back(data[i].labels);
            }
            loss = cauchy_hash_loss(&tape, ops::concat_rows(&tape, codes), label_similarity(labels), cfg_.cauchy);
        } else {
            throw ModeError("no fine-tuning head attached");
        }
        const double value = loss->value[0];
        apply_update(tape, loss);
        return value;
    }

    std::vector<double> finetune(const std::vector<PreparedRecord>& data, std::size_t steps) {
        std::vector<double> losses;
        losses.reserve(steps);
        for (std::size_t s = 0; s < steps; ++s) losses.push_back(finetune_step(data));
        return losses;
    }

  private:
    void copy_block(const std::string& name, Matrix<float>& dst, const Matrix<float>& src) const {
        if (dst.rows() != src.rows() || dst.cols() != src.cols())
            throw ConfigError("parameter block '" + name + "' is " + shape_str(src.rows(), src.cols()) +
                              " in the checkpoint but " + shape_str(dst.rows(), dst.cols()) + " in the model");
        dst = src;
    }

    void apply_update(Tape<float>& tape, const Var<float>& loss) {
        tape.backward(loss);
        adam_.step(model_->params());
        model_->params().zero_grad();
        ++step_;
    }

    TrainConfig cfg_;
    Vocab vocab_;
    std::unique_ptr<Net> model_;
    Adam<float> adam_;
    std::mt19937_64 rng_;
    std::uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Workflows

/// Pre-trains on the scenario's tuples. Refuses baseline1, which has none.
inline Trainer pretrain(const TrainConfig& cfg, const Vocab& vocab, const std::vector<TrainingTuple>& tuples,
                        std::vector<LossRow>* curve = nullptr) {
    if (cfg.scenario.scenario == Scenario::baseline1)
        throw ConfigError("baseline1 trains from scratch; there is no pre-training stage");
    if (tuples.empty()) throw ConfigError("pre-training needs a non-empty pretrain set");
    Trainer t(cfg, vocab);
    const auto data = t.prepare(tuples);
    auto rows = t.pretrain(data, t.pretrain_steps(data.size()));
    if (curve != nullptr) *curve = std::move(rows);
    return t;
}

inline Trainer finetune(const TrainConfig& cfg, const Vocab& vocab, const Checkpoint* init, Task task,
                        const std::vector<StudyRecord>& records) {
    Trainer t = Trainer::for_finetune(cfg, vocab, init, task);
    const auto data = t.prepare(records);
    t.finetune(data, t.finetune_steps(data.size()));
    return t;
}

struct EvalOptions {
    std::optional<std::filesystem::path> out_dir;  // gallery index / regenerated images
    double regen_rate = 0.15;
};

inline MetricReport evaluate_cls(const Trainer& t, const std::vector<PreparedRecord>& data) {
    if (!t.model().cls_head()) throw ModeError("checkpoint has no classification head; fine-tune with --task cls");
    MetricReport rep;
    rep.task = "cls";
    std::vector<std::vector<double>> scores;
    std::vector<std::vector<int>> labels;
    for (const auto& r : data) {
        auto logits = t.model().cls_logits(nullptr, t.pooled(nullptr, r));
        std::vector<double> p(logits->value.size());
        for (std::size_t k = 0; k < p.size(); ++k) p[k] = ops::sigmoid_scalar(static_cast<double>(logits->value[k]));
        scores.push_back(std::move(p));
        labels.push_back(r.labels);
    }
    auto s = class_aucs(scores, labels);
    rep.class_auc = s.per_class;
    rep.macro_auc = s.macro;
    return rep;
}

inline MetricReport evaluate_retrieval(const Trainer& t, const std::vector<PreparedRecord>& data,
                                       const EvalOptions& opt = {}) {
    if (!t.model().hash_head()) throw ModeError("checkpoint has no hashing head; fine-tune with --task hash");
    if (data.size() < 2) throw ValidationError("retrieval evaluation needs at least 2 records");
    std::vector<GalleryEntry> gallery;
    for (const auto& r : data) {
        auto code = t.model().hash_code(nullptr, t.pooled(nullptr, r));
        gallery.push_back({r.id, binarize<float>(code->value.row(0)), r.labels});
    }
    if (opt.out_dir) {
        std::filesystem::create_directories(*opt.out_dir);
        write_gallery(*opt.out_dir / "gallery.tsv", gallery);
    }
    MetricReport rep;
    rep.task = "retrieval";
    const std::size_t n = gallery.size();
    std::map<std::size_t, double> sums;
    double chance = 0.0;
    for (std::size_t q = 0; q < n; ++q) {
        std::vector<HashCode> codes;
        std::vector<std::string> ids;
        std::vector<std::vector<int>> labels;
        std::size_t relevant = 0;
        for (std::size_t g = 0; g < n; ++g) {
            if (g == q) continue;
            codes.push_back(gallery[g].code);
            ids.push_back(gallery[g].id);
            labels.push_back(gallery[g].labels);
            relevant += gallery[g].labels == gallery[q].labels ? 1 : 0;
        }
        const auto ranked = retrieve(gallery[q].code, codes, ids);
        for (std::size_t k : kPrecisionKs) sums[k] += precision_at_k(ranked, gallery[q].labels, labels, k);
        chance += static_cast<double>(relevant) / static_cast<double>(n - 1);
    }
    for (auto& [k, v] : sums) rep.precision_at[k] = v / static_cast<double>(n);
    rep.chance_p1 = chance / static_cast<double>(n);
    double intra = 0, inter = 0;
    std::size_t n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = hamming(gallery[i].code, gallery[j].code);
            if (gallery[i].labels == gallery[j].labels) {
                intra += d;
                ++n_intra;
            } else {
                inter += d;
                ++n_inter;
            }
        }
    if (n_intra > 0) rep.intra_hamming = intra / static_cast<double>(n_intra);
    if (n_inter > 0) rep.inter_hamming = inter / static_cast<double>(n_inter);
    return rep;
}

inline MetricReport evaluate_regen(const Trainer& t, const std::vector<PreparedRecord>& data,
                                   const EvalOptions& opt = {}) {
    MetricReport rep;
    rep.task = "regen";
    if (data.empty()) throw ValidationError("regeneration needs at least one image");
    ImageQuality avg;
    if (opt.out_dir) std::filesystem::create_directories(*opt.out_dir / "regenerated");
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& r = data[i];
        const TokenSequence* text = r.tokens ? &*r.tokens : nullptr;
        auto g = t.model().regenerate(r.image, opt.regen_rate, detail::splitmix64(t.config().seed ^ i), text);
        if (opt.out_dir) write_pgm(*opt.out_dir / "regenerated" / (r.id + ".pgm"), to_gray(g.image));
        rep.images.push_back({r.id, g.quality});
        avg.mse += g.quality.mse;
        avg.psnr += g.quality.psnr;
        avg.ssim += g.quality.ssim;
    }
    const double n = static_cast<double>(data.size());
    rep.average_quality = ImageQuality{avg.mse / n, avg.psnr / n, avg.ssim / n};
    return rep;
}

/// Balanced set: every record with a report against its own report
/// (paired) and against another record's report (unpaired).
inline MetricReport evaluate_pairmatch(const Trainer& t, const std::vector<PreparedRecord>& data) {
    std::vector<std::size_t> with_text;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data[i].tokens) with_text.push_back(i);
    if (with_text.size() < 2) throw ValidationError("pair-matching evaluation needs at least 2 reports");
    std::mt19937_64 rng(detail::splitmix64(t.config().seed ^ 0x7061697273ULL));
    double correct = 0, paired = 0, unpaired = 0;
    for (std::size_t a = 0; a < with_text.size(); ++a) {
        const auto& r = data[with_text[a]];
        // the negative is a report whose text differs from the image's own
        std::vector<std::size_t> others;
        for (std::size_t b : with_text)
            if (data[b].tokens->tokens != r.tokens->tokens) others.push_back(b);
        if (others.empty()) throw ValidationError("pair-matching evaluation needs at least 2 distinct reports");
        const std::size_t b = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
        const double p1 = t.model().pair_probability(*r.tokens, r.image);
        const double p0 = t.model().pair_probability(*data[b].tokens, r.image);
        paired += p1;
        unpaired += p0;
        correct += (p1 >= 0.5 ? 1 : 0) + (p0 < 0.5 ? 1 : 0);
    }
    const double n = static_cast<double>(with_text.size());
    MetricReport rep;
    rep.task = "pairmatch";
    rep.pair_accuracy = correct / (2.0 * n);
    rep.mean_prob_paired = paired / n;
    rep.mean_prob_unpaired = unpaired / n;
    return rep;
}

inline MetricReport evaluate(const Trainer& t, Task task, const std::vector<StudyRecord>& records,
                             const EvalOptions& opt = {}) {
    const auto data = t.prepare(records);
    switch (task) {
        case Task::cls: return evaluate_cls(t, data);
        case Task::hash:
        case Task::retrieval: return evaluate_retrieval(t, data, opt);
        case Task::regen: return evaluate_regen(t, data, opt);
        case Task::pairmatch: return evaluate_pairmatch(t, data);
    }
    throw ConfigError("unknown task");
}

inline void write_report(const std::filesystem::path& path, const MetricReport& r) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << to_json(r).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Scenario matrix

struct SuiteCell {
    Scenario scenario = Scenario::mixup1;
    double paired_fraction = 1.0;
    std::size_t pretrain_tuples = 0;
    std::size_t finetune_records = 0;
    std::optional<double> macro_auc;

    friend bool operator==(const SuiteCell&, const SuiteCell&) = default;
};

struct SuiteTable {
    std::vector<SuiteCell> cells;

    friend bool operator==(const SuiteTable&, const SuiteTable&) = default;
};

inline nlohmann::ordered_json to_json(const SuiteTable& t) {
    nlohmann::ordered_json j;
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : t.cells) {
        nlohmann::ordered_json row;
        row["scenario"] = std::string(to_string(c.scenario));
        row["paired_fraction"] = c.paired_fraction;
        row["pretrain_tuples"] = c.pretrain_tuples;
        row["finetune_records"] = c.finetune_records;
        row["macro_auc"] = c.macro_auc ? nlohmann::ordered_json(*c.macro_auc) : nlohmann::ordered_json(nullptr);
        j["cells"].push_back(row);
    }
    return j;
}

inline SuiteTable suite_from_json(const nlohmann::json& j) {
    SuiteTable t;
    try {
        for (const auto& row : j.at("cells")) {
            SuiteCell c;
            c.scenario = parse_scenario(row.at("scenario").get<std::string>());
            c.paired_fraction = row.at("paired_fraction").get<double>();
            c.pretrain_tuples = row.at("pretrain_tuples").get<std::size_t>();
            c.finetune_records = row.at("finetune_records").get<std::size_t>();
            if (!row.at("macro_auc").is_null()) c.macro_auc = row["macro_auc"].get<double>();
            t.cells.push_back(c);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("scenario table: ") + e.what(), 1);
    }
    return t;
}

inline void write_suite(const std::filesystem::path& path, const SuiteTable& t) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << to_json(t).dump(2) << '\n';
}

inline SuiteTable read_suite(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    try {
        return suite_from_json(nlohmann::json::parse(f));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(e.what(), 1);
    }
}

/// pretrain → finetune(cls) → evaluate for every (scenario, fraction) cell.
/// All cells share one evaluation split, and cells with the same fraction
/// share the paired subset because assembly is seeded identically.
inline SuiteTable run_scenario_suite(const TrainConfig& base, const Vocab& vocab, const std::vector<StudyRecord>& corpus_a,
                                     const std::vector<StudyRecord>& corpus_b, const std::vector<StudyRecord>& eval_set,
                                     const std::vector<Scenario>& scenarios, const std::vector<double>& fractions) {
    SuiteTable table;
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("paired fractions must lie in (0, 1]");
        for (Scenario s : scenarios) {
            TrainConfig cfg = base;
            cfg.scenario.scenario = s;
            cfg.scenario.paired_fraction = f;
            const auto split = assemble_scenario(corpus_a, corpus_b, cfg.scenario);
            std::optional<Checkpoint> ck;
            if (s != Scenario::baseline1) ck = pretrain(cfg, vocab, split.pretrain_set).checkpoint();
            Trainer ft = finetune(cfg, vocab, ck ? &*ck : nullptr, Task::cls, split.finetune_set);
            const auto rep = evaluate(ft, Task::cls, eval_set);
            table.cells.push_back({s, f, split.pretrain_set.size(), split.finetune_set.size(), rep.macro_auc});
        }
    }
    return table;
}

}  // namespace mixpretrain
