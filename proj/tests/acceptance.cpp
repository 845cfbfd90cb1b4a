// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,5] [--expect-fail 6]
//
// Exit status is non-zero when a criterion fails that is not listed in
// --expect-fail.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"

using namespace mixpretrain;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

GeneratorOptions gen_opts(std::size_t block) {
    GeneratorOptions g;
    g.max_block = block;
    return g;
}

// ---------------------------------------------------------------------------
// 1. gradient integrity

void randomize_norms(ParamStore<double>& s, std::mt19937_64& rng) {
    for (const auto& e : s.entries())
        if (e.name.find("norm") != std::string::npos)
            e.var->value = testutil::random_matrix(1, e.var->value.cols(), rng, 0.5);
}

Outcome gradients() {
    using testutil::grad_check;
    using testutil::project;
    using testutil::random_var;
    std::vector<std::pair<std::string, testutil::GradResult>> results;
    std::mt19937_64 rng(2024);
    const std::size_t c = 8;

    {
        ParamStore<double> s;
        auto text = make_text_embedding(s, "text", 10, 6, c, rng);
        auto patch = make_patch_embedding(s, "patch", 2, true, c, rng);
        randomize_norms(s, rng);
        const TokenSequence seq{{2, 7, 2, 9, 0}, {0, 1, 2, 3, 4}, {false, false, false, false, true}};
        const auto geo = build_pyramid(GrayImage(8, 8), 2).mid;
        auto content = random_var(geo.size(), 4, rng);
        auto in = testutil::all_params(s);
        in.emplace_back("content", content);
        results.emplace_back("embeddings", grad_check(
                                               [&](Tape<double>* t) {
                                                   return ops::add(t, project(t, embed_text(t, seq, text), 1),
                                                                   project(t, embed_patches(t, content, geo, patch), 2));
                                               },
                                               in));
    }
    {
        ParamStore<double> s;
        auto sam = make_sam(s, "sam", c, 2, rng);
        randomize_norms(s, rng);
        auto q = random_var(3, c, rng), kv = random_var(5, c, rng);
        const PadMask pad{false, false, true, false, false};
        auto in = testutil::all_params(s);
        in.emplace_back("q", q);
        in.emplace_back("kv", kv);
        results.emplace_back("sam", grad_check([&](Tape<double>* t) { return project(t, sam_forward(t, q, kv, kv, sam, pad)); }, in));
    }
    {
        ParamStore<double> s;
        auto fusion = make_fusion(s, "fusion", c, 2, 6, 4, rng);
        randomize_norms(s, rng);
        auto et = random_var(4, c, rng, 0.5), ei = random_var(4, c, rng, 0.5);
        const PadMask pad{false, false, false, true};
        auto in = testutil::all_params(s);
        in.emplace_back("e_txt", et);
        in.emplace_back("e_img", ei);
        results.emplace_back("unit", grad_check(
                                         [&](Tape<double>* t) {
                                             auto o = unit_fuse(t, et, ei, fusion, pad);
                                             return ops::add(t, project(t, o.f_txt, 1), project(t, o.f_img, 2));
                                         },
                                         in));
        results.emplace_back("uwox", grad_check(
                                         [&](Tape<double>* t) {
                                             return ops::add(t, project(t, uwox_forward(t, et, fusion, pad), 3),
                                                             project(t, uwox_forward(t, ei, fusion), 4));
                                         },
                                         in));
        results.emplace_back("pair-matching", grad_check(
                                                  [&](Tape<double>* t) {
                                                      return pair_match_loss(t, pair_match(t, et, ei, fusion, pad).logit, 1);
                                                  },
                                                  in));
    }
    {
        ParamStore<double> s;
        auto dec = make_decoder(s, "dec", c, 2, 2, rng);
        randomize_norms(s, rng);
        auto up = random_var(1, c, rng), mid = random_var(2, c, rng), down = random_var(4, c, rng);
        auto in = testutil::all_params(s);
        in.emplace_back("f_up", up);
        in.emplace_back("f_mid", mid);
        in.emplace_back("f_down", down);
        results.emplace_back("decoder + mlp head", grad_check(
                                                       [&](Tape<double>* t) {
                                                           auto d = decode_cascade(t, up, mid, down, dec);
                                                           auto rows = ops::gather_rows(t, down, {0, 3});
                                                           return project(t, predict_patches(t, refine_down(t, rows, d, dec), dec));
                                                       },
                                                       in));
    }
    {
        ParamStore<double> s;
        auto cls = make_head(s, "cls", c, 4, rng);
        auto hash = make_head(s, "hash", c, kHashBits, rng);
        std::vector<Var<double>> feats;
        auto in = testutil::all_params(s);
        for (int i = 0; i < 3; ++i) {
            feats.push_back(random_var(4, c, rng));
            in.emplace_back("features" + std::to_string(i), feats.back());
        }
        const PadMask pad{false, false, true, false};
        const auto sim = label_similarity({{1, 0}, {1, 0}, {0, 1}});
        results.emplace_back("cls head + bce",
                             grad_check(
                                 [&](Tape<double>* t) {
                                     return ops::bce_with_logits(t, head_logits(t, feats[0], cls, pad),
                                                                 Matrix<double>::row_vector({1, 0, 0, 1}));
                                 },
                                 in));
        results.emplace_back("hash head + cauchy", grad_check(
                                                       [&](Tape<double>* t) {
                                                           std::vector<Var<double>> codes;
                                                           for (auto& f : feats) codes.push_back(hash_continuous(t, f, hash, pad));
                                                           return cauchy_hash_loss(t, ops::concat_rows(t, codes), sim);
                                                       },
                                                       in));
    }
    {
        auto logits = random_var(3, 6, rng), pred = random_var(2, 4, rng);
        const std::vector<std::vector<double>> orig{{0.1, 0.5, -0.2, 2.0}, {1.0, -1.0, 0.3, 0.0}};
        results.emplace_back("L_txt + L_img", grad_check(
                                                  [&](Tape<double>* t) {
                                                      return ops::add(t, loss_txt(t, logits, {0, 5, 2}), loss_img(t, pred, orig));
                                                  },
                                                  {{"logits", logits}, {"pred", pred}}));
    }
    // full pre-training loss of a small model, every parameter
    for (TrainMode mode : {TrainMode::uwox, TrainMode::unit}) {
        auto cfg = testutil::tiny_model(mode);
        cfg.max_tokens = 6;
        Model<double> m(cfg, 5);
        randomize_norms(m.params(), rng);
        const auto recs = testutil::tiny_corpus(2, 31);
        const auto img = ImageInput::from(recs[0].image, cfg);
        MaskedTuple mt;
        auto [ts, tp] = mask_tokens(m.tokens(recs[0].report, default_vocab()), 0.3, rng, default_vocab().size());
        mt.tokens = ts;
        mt.token_plan = tp;
        auto [ps, pp] = mask_patches(img.pyramid.down, 0.3, rng, patchify(to_unit(recs[1].image), 4, Level::down).patches);
        mt.image = &img;
        mt.down = ps;
        mt.patch_plan = pp;
        mt.i_pair = 1;
        results.emplace_back(std::string("full model (") + std::string(to_string(mode)) + ")",
                             grad_check([&](Tape<double>* t) { return m.pretrain_terms(t, mt).total; },
                                        testutil::all_params(m.params())));
    }

    double worst = 0;
    std::string where;
    for (const auto& [name, r] : results)
        if (r.worst > worst) {
            worst = r.worst;
            where = name + ":" + r.where;
        }
    return {worst < 1e-4, fmt("%zu groups, worst relative error %.2e at %s", results.size(), worst, where.c_str())};
}

// ---------------------------------------------------------------------------
// 2. geometry

bool tiles_unit_square(const PatchSequence& s) {
    // boxes lie on the level's own grid; count coverage per cell
    std::vector<int> hits(s.grid_w * s.grid_h, 0);
    for (const auto& b : s.boxes) {
        const double gx0 = b[0] * s.grid_w, gy0 = b[1] * s.grid_h, gx1 = b[2] * s.grid_w, gy1 = b[3] * s.grid_h;
        if (gx0 != std::round(gx0) || gy0 != std::round(gy0) || gx1 != std::round(gx1) || gy1 != std::round(gy1))
            return false;
        if (b[0] < 0 || b[1] < 0 || b[2] > 1 || b[3] > 1) return false;
        for (auto y = static_cast<std::size_t>(gy0); y < static_cast<std::size_t>(gy1); ++y)
            for (auto x = static_cast<std::size_t>(gx0); x < static_cast<std::size_t>(gx1); ++x) ++hits[y * s.grid_w + x];
    }
    return std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
}

Outcome geometry() {
    const std::size_t n16 = patch_count(256, 256, 16, true), n32 = patch_count(256, 256, 32, true);
    GrayImage img(256, 256);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i * 7919) % 251);
    bool tiled = true;
    for (std::size_t b : {16u, 32u}) {
        const auto p = build_pyramid(img, b);
        tiled = tiled && tiles_unit_square(p.up) && tiles_unit_square(p.mid) && tiles_unit_square(p.down);
        tiled = tiled && p.total() == patch_count(256, 256, b, true);
    }
    ModelConfig mc;
    mc.vocab_size = default_vocab().size();
    mc.max_tokens = 16;
    mc.image_size = 256;
    mc.block = 16;
    mc.hidden = 8;
    mc.heads = 2;
    mc.layers = 1;
    Model<float> m(mc, 1);
    bool regen_ok = true;
    try {
        const auto r = m.regenerate(ImageInput::from(img, mc), 0.15, 3);
        regen_ok = r.image.width == 256 && r.image.height == 256;
    } catch (const GeometryError&) {
        regen_ok = false;
    }
    return {n16 == 336 && n32 == 84 && tiled && regen_ok,
            fmt("patches %zu (B=16) and %zu (B=32); boxes tile every level: %s; 256x256 regeneration reassembled: %s", n16,
                n32, tiled ? "yes" : "no", regen_ok ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 3. masking

Outcome masking() {
    std::string report;
    for (int i = 0; i < 200; ++i) report += (i ? " " : "") + std::string(i % 2 ? "left" : "circle");
    const auto seq = tokenize(report, default_vocab(), 150, true);
    std::mt19937_64 rng(15);
    const std::size_t count = mask_tokens(seq, 0.15, rng, default_vocab().size()).second.size();

    double masked = 0;
    for (int t = 0; t < 1000; ++t) masked += static_cast<double>(mask_tokens(seq, 0.15, rng, default_vocab().size()).second.size());
    // per-draw fraction is fixed by rounding; the empirical per-position rate is what varies
    std::vector<int> hits(150, 0);
    for (int t = 0; t < 1000; ++t)
        for (std::size_t p : mask_tokens(seq, 0.15, rng, default_vocab().size()).second.positions) ++hits[p];
    double total = 0;
    for (int h : hits) total += h;
    const double rate = total / (1000.0 * 150.0);

    auto all_logits = testutil::random_var(150, default_vocab().size(), rng);
    auto all_patches = testutil::random_var(16, 4, rng);
    const auto [s2, plan] = mask_tokens(seq, 0.15, rng, default_vocab().size());
    const std::vector<std::size_t> patch_rows{2, 9, 13};
    const std::vector<std::vector<double>> orig{{0, 0, 0, 0}, {1, 1, 1, 1}, {0.5, 0.5, 0.5, 0.5}};
    auto losses = [&] {
        return std::pair{loss_txt<double>(nullptr, ops::gather_rows<double>(nullptr, all_logits, plan.positions), plan.originals)->value[0],
                         loss_img<double>(nullptr, ops::gather_rows<double>(nullptr, all_patches, patch_rows), orig)->value[0]};
    };
    const auto before = losses();
    std::set<std::size_t> m(plan.positions.begin(), plan.positions.end());
    for (std::size_t r = 0; r < 150; ++r)
        if (!m.count(r))
            for (std::size_t k = 0; k < all_logits->value.cols(); ++k) all_logits->value(r, k) += 5.0;
    for (std::size_t r = 0; r < 16; ++r)
        if (std::find(patch_rows.begin(), patch_rows.end(), r) == patch_rows.end())
            for (std::size_t k = 0; k < 4; ++k) all_patches->value(r, k) -= 3.0;
    const auto after = losses();
    const double d_txt = after.first - before.first, d_img = after.second - before.second;
    const bool ok = count == 22 && std::abs(rate - 0.15) <= 0.02 && d_txt == 0.0 && d_img == 0.0 &&
                    masked / 1000.0 == 22.0;
    return {ok, fmt("masked %zu of 150; empirical rate %.4f; unmasked perturbation changes L_txt by %g and L_img by %g",
                    count, rate, d_txt, d_img)};
}

// ---------------------------------------------------------------------------
// 4. UWOX decoupling

ModelConfig decoupling_model(TrainMode mode) {
    ModelConfig mc;
    mc.mode = mode;
    mc.vocab_size = default_vocab().size();
    mc.max_tokens = 16;
    mc.image_size = 32;
    mc.block = 8;
    mc.hidden = 32;
    mc.heads = 4;
    mc.layers = 2;
    return mc;
}

GrayImage pattern_image() {
    GrayImage g(32, 32);
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) g.at(x, y) = static_cast<std::uint8_t>((x * 37 + y * 11 + x * y) % 256);
    return g;
}

std::string feature_bytes(const Var<float>& v) {
    return {reinterpret_cast<const char*>(v->value.data()), v->value.size() * sizeof(float)};
}

Outcome decoupling() {
    const auto mc = decoupling_model(TrainMode::uwox);
    // child: image path only, no text anywhere in the process
    int fds[2];
    if (pipe(fds) != 0) return {false, "pipe failed"};
    const pid_t pid = fork();
    if (pid == 0) {
        close(fds[0]);
        Model<float> m(mc, 77);
        const auto bytes = feature_bytes(m.image_only_features(ImageInput::from(pattern_image(), mc)));
        std::size_t off = 0;
        while (off < bytes.size()) {
            const auto n = write(fds[1], bytes.data() + off, bytes.size() - off);
            if (n <= 0) _exit(1);
            off += static_cast<std::size_t>(n);
        }
        _exit(0);
    }
    close(fds[1]);
    std::string child;
    char buf[4096];
    for (ssize_t n; (n = read(fds[0], buf, sizeof buf)) > 0;) child.append(buf, static_cast<std::size_t>(n));
    close(fds[0]);
    int status = 0;
    waitpid(pid, &status, 0);

    // parent: exercise every text structure first
    Model<float> m(mc, 77);
    const auto recs = generate_corpus(4, 32, 4, 3, gen_opts(8));
    const auto img = ImageInput::from(pattern_image(), mc);
    for (const auto& r : recs) {
        const auto seq = m.tokens(r.report, default_vocab());
        m.pair_probability(seq, img);
        m.pooled(nullptr, &seq, &img, FeatureSource::both);
    }
    const bool identical = WIFEXITED(status) && WEXITSTATUS(status) == 0 && child == feature_bytes(m.image_only_features(img));

    const auto uc = decoupling_model(TrainMode::unit);
    Model<float> u(uc, 77);
    const auto seq = u.tokens(recs[0].report, default_vocab());
    int refusals = 0;
    auto refuses = [&](auto&& fn) {
        try {
            fn();
        } catch (const ModeError&) {
            ++refusals;
        }
    };
    refuses([&] { u.image_only_features(img); });
    refuses([&] { u.pooled(nullptr, nullptr, &img, FeatureSource::image); });
    refuses([&] { u.pooled(nullptr, &seq, nullptr, FeatureSource::text); });
    refuses([&] { u.regenerate(img, 0.15, 1); });
    return {identical && refusals == 4,
            fmt("image-only output bit-identical across processes: %s (%zu bytes); UNIT refused %d of 4 single-modality calls",
                identical ? "yes" : "no", child.size(), refusals)};
}

// ---------------------------------------------------------------------------
// 5. pair matching (also provides the pre-trained model for 9)

std::optional<Checkpoint> g_pair_checkpoint;
std::vector<StudyRecord> g_pair_finetune;

Outcome pair_matching() {
    auto cfg = TrainConfig::desk();
    cfg.seed = 5;
    cfg.scenario.seed = 5;
    cfg.scenario.scenario = Scenario::mixup1;
    cfg.scenario.paired_fraction = 0.5;
    cfg.steps = 12000;
    const auto corpus = generate_corpus(4000, cfg.image_size, cfg.num_classes, 105, gen_opts(cfg.block_size));
    const auto held_out = generate_corpus(400, cfg.image_size, cfg.num_classes, 905, gen_opts(cfg.block_size));
    const auto split = assemble_scenario(corpus, {}, cfg.scenario);
    Trainer t = pretrain(cfg, default_vocab(), split.pretrain_set);
    const auto rep = evaluate(t, Task::pairmatch, held_out);
    g_pair_checkpoint = t.checkpoint();
    g_pair_finetune = split.finetune_set;
    return {*rep.pair_accuracy > 0.9,
            fmt("%zu tuples, %zu steps; held-out accuracy %.4f (mean p paired %.3f, unpaired %.3f)", split.pretrain_set.size(),
                cfg.steps, *rep.pair_accuracy, *rep.mean_prob_paired, *rep.mean_prob_unpaired)};
}

// ---------------------------------------------------------------------------
// 6. mix-up trend

Outcome mixup_trend() {
    int ordered = 0, mix_ge_b2 = 0, b2_ge_scratch = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto cfg = TrainConfig::desk();
        cfg.seed = seed;
        cfg.scenario.seed = seed;
        cfg.steps = 3000;
        cfg.finetune_steps = 300;
        const auto a = generate_corpus(2000, cfg.image_size, cfg.num_classes, 100 + seed, gen_opts(cfg.block_size));
        const auto ev = generate_corpus(400, cfg.image_size, cfg.num_classes, 900 + seed, gen_opts(cfg.block_size));
        const auto tab = run_scenario_suite(cfg, default_vocab(), a, {}, ev,
                                            {Scenario::baseline1, Scenario::baseline2, Scenario::mixup1}, {0.05});
        const double scratch = *tab.cells[0].macro_auc, b2 = *tab.cells[1].macro_auc, mix = *tab.cells[2].macro_auc;
        mix_ge_b2 += mix >= b2;
        b2_ge_scratch += b2 >= scratch;
        ordered += mix >= b2 && b2 >= scratch;
        detail += fmt("%sseed %llu: mixup1 %.4f, baseline2 %.4f, scratch %.4f", seed ? "; " : "", static_cast<unsigned long long>(seed),
                      mix, b2, scratch);
    }
    return {ordered >= 2, detail + fmt(" | full ordering in %d/3 seeds (mixup1>=baseline2 in %d, baseline2>=scratch in %d)",
                                       ordered, mix_ge_b2, b2_ge_scratch)};
}

// ---------------------------------------------------------------------------
// 7. multi-scale trend

Outcome multiscale_trend() {
    int ms_wins = 0;
    bool beats_untrained = true;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto cfg = TrainConfig::desk();
        cfg.seed = seed;
        cfg.scenario.seed = seed;
        cfg.scenario.paired_fraction = 0.5;
        cfg.steps = 1500;
        const auto a = generate_corpus(1000, cfg.image_size, cfg.num_classes, 100 + seed, gen_opts(cfg.block_size));
        const auto ev = generate_corpus(50, cfg.image_size, cfg.num_classes, 900 + seed, gen_opts(cfg.block_size));
        const auto tuples = assemble_scenario(a, {}, cfg.scenario).pretrain_set;
        double ssim[2] = {0, 0};
        std::size_t wins = 0;
        for (int ms = 0; ms < 2; ++ms) {
            auto c = cfg;
            c.multiscale = ms == 1;
            const auto rep = evaluate(pretrain(c, default_vocab(), tuples), Task::regen, ev);
            ssim[ms] = rep.average_quality->ssim;
            if (ms == 1) {
                const auto base = evaluate(Trainer(c, default_vocab()), Task::regen, ev);
                for (std::size_t i = 0; i < ev.size(); ++i) wins += rep.images[i].quality.ssim > base.images[i].quality.ssim;
            }
        }
        ms_wins += ssim[1] >= ssim[0];
        beats_untrained = beats_untrained && wins * 10 >= ev.size() * 9;
        detail += fmt("%sseed %llu: ms %.4f, ss %.4f, beats untrained on %zu/50", seed ? "; " : "",
                      static_cast<unsigned long long>(seed), ssim[1], ssim[0], wins);
    }
    return {ms_wins >= 2 && beats_untrained, detail};
}

// ---------------------------------------------------------------------------
// 8. metric oracles

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return wins / pairs;
}

Outcome metric_oracles() {
    std::mt19937_64 rng(8);
    int auc_ok = 0;
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 8 + rng() % 9;
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % 6) / 5.0;
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 1;
        y[1] = 0;
        auc_ok += *auc(s, y) == brute_auc(s, y);
    }
    int rank_ok = 0;
    for (int t = 0; t < 20; ++t) {
        std::vector<HashCode> g;
        std::vector<std::string> ids;
        for (int i = 0; i < 20; ++i) {
            g.push_back(i % 4 == 3 ? g[i - 1] : HashCode{rng()});
            ids.push_back("r" + std::to_string(rng() % 1000));
        }
        const HashCode q{rng()};
        std::vector<std::tuple<int, std::string, std::size_t>> oracle;
        for (std::size_t i = 0; i < g.size(); ++i) {
            int d = 0;
            for (int b = 0; b < 64; ++b) d += ((q.bits >> b) & 1u) != ((g[i].bits >> b) & 1u);
            oracle.emplace_back(d, ids[i], i);
        }
        std::stable_sort(oracle.begin(), oracle.end(),
                         [](const auto& a, const auto& b) { return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b)); });
        const auto got = retrieve(q, g, ids);
        bool same = true;
        for (std::size_t i = 0; i < got.size(); ++i) {
            // equal (distance, id) keys are interchangeable
            const auto& o = oracle[i];
            same = same && hamming(q, g[got[i]]) == std::get<0>(o) && ids[got[i]] == std::get<1>(o);
        }
        rank_ok += same;
    }
    // 10-item gallery: hits at ranks 1, 3, 5, 6, 9
    const std::vector<int> ql{1, 0, 1, 0};
    std::vector<std::vector<int>> gl(10, std::vector<int>{0, 1, 0, 0});
    for (std::size_t i : {4, 7, 0, 2, 9}) gl[i] = ql;
    gl[5] = {1, 0, 1, 1};
    const std::vector<std::size_t> ranked{4, 5, 7, 1, 0, 2, 3, 6, 9, 8};
    const bool pk = precision_at_k(ranked, ql, gl, 1) == 1.0 && precision_at_k(ranked, ql, gl, 5) == 3.0 / 5.0 &&
                    precision_at_k(ranked, ql, gl, 10) == 5.0 / 10.0 && precision_at_k(ranked, ql, gl, 50) == 5.0 / 10.0;
    const auto img = pattern_image();
    const auto q = image_quality(img, img);
    const bool identity = q.mse == 0.0 && std::abs(q.ssim - 1.0) < 1e-12 && q.psnr == kPsnrCap;
    return {auc_ok == 20 && rank_ok == 20 && pk && identity,
            fmt("AUC exact on %d/20; ranking matches sort oracle on %d/20; P@K hand case %s; identical images MSE %g SSIM %.12f",
                auc_ok, rank_ok, pk ? "matches" : "differs", q.mse, q.ssim)};
}

// ---------------------------------------------------------------------------
// 9. retrieval

Outcome retrieval() {
    auto cfg = TrainConfig::desk();
    cfg.seed = 9;
    cfg.finetune_steps = 300;
    if (!g_pair_checkpoint) {
        cfg.scenario.paired_fraction = 0.5;
        cfg.steps = 1500;
        const auto corpus = generate_corpus(1000, cfg.image_size, cfg.num_classes, 109, gen_opts(cfg.block_size));
        const auto split = assemble_scenario(corpus, {}, cfg.scenario);
        g_pair_checkpoint = pretrain(cfg, default_vocab(), split.pretrain_set).checkpoint();
        g_pair_finetune = split.finetune_set;
    }
    const std::vector<StudyRecord> ft(g_pair_finetune.begin(), g_pair_finetune.begin() + 200);
    const auto held_out = generate_corpus(200, cfg.image_size, cfg.num_classes, 909, gen_opts(cfg.block_size));
    const Trainer t = finetune(cfg, default_vocab(), &*g_pair_checkpoint, Task::hash, ft);
    const auto rep = evaluate(t, Task::retrieval, held_out);
    const double p1 = rep.precision_at.at(1);
    return {*rep.intra_hamming < *rep.inter_hamming && p1 > *rep.chance_p1,
            fmt("intra-class Hamming %.2f vs inter-class %.2f; P@1 %.3f vs chance %.3f (P@10 %.3f)", *rep.intra_hamming,
                *rep.inter_hamming, p1, *rep.chance_p1, rep.precision_at.at(10))};
}

// ---------------------------------------------------------------------------
// 10. reproducibility and persistence

Outcome reproducibility() {
    const auto dir = testutil::temp_dir("acceptance");
    auto cfg = TrainConfig::desk();
    cfg.seed = 10;
    cfg.steps = 20;
    cfg.finetune_steps = 10;
    cfg.scenario.paired_fraction = 0.5;
    const auto corpus = generate_corpus(60, cfg.image_size, cfg.num_classes, 110, gen_opts(cfg.block_size));
    const auto ev = generate_corpus(20, cfg.image_size, cfg.num_classes, 910, gen_opts(cfg.block_size));
    const auto split = assemble_scenario(corpus, {}, cfg.scenario);

    auto run = [&](const std::string& tag) {
        Trainer pre = pretrain(cfg, default_vocab(), split.pretrain_set);
        pre.save(dir / (tag + "_pre.ck"));
        const auto ck = pre.checkpoint();
        Trainer ft = finetune(cfg, default_vocab(), &ck, Task::cls, split.finetune_set);
        ft.save(dir / (tag + "_ft.ck"));
        return to_json(evaluate(ft, Task::cls, ev)).dump() + to_json(evaluate(pre, Task::pairmatch, ev)).dump() +
               to_json(evaluate(pre, Task::regen, ev)).dump();
    };
    const bool reports = run("a") == run("b");
    const bool checkpoints = slurp(dir / "a_pre.ck") == slurp(dir / "b_pre.ck") && slurp(dir / "a_ft.ck") == slurp(dir / "b_ft.ck");

    Trainer full(cfg, default_vocab());
    const auto data = full.prepare(split.pretrain_set);
    full.pretrain(data, 5);
    full.save(dir / "mid.ck");
    const auto tail = full.pretrain(data, 10);
    Trainer resumed = Trainer::load(dir / "mid.ck");
    const auto again = resumed.pretrain(resumed.prepare(split.pretrain_set), 10);
    bool resume = tail.size() == again.size();
    for (std::size_t i = 0; resume && i < tail.size(); ++i) resume = tail[i].total == again[i].total && tail[i].step == again[i].step;
    full.save(dir / "full.ck");
    resumed.save(dir / "resumed.ck");
    resume = resume && slurp(dir / "full.ck") == slurp(dir / "resumed.ck");

    auto recs = ev;
    recs[3].has_report = false;
    recs[3].report.clear();
    const auto manifest = write_manifest(recs, dir / "m");
    const bool manifest_ok = load_manifest(manifest, cfg.block_size) == recs;
    std::vector<GalleryEntry> gallery;
    for (std::size_t i = 0; i < recs.size(); ++i) gallery.push_back({recs[i].id, HashCode{0x9e3779b97f4a7c15ULL * (i + 1)}, recs[i].labels});
    write_gallery(dir / "gallery.tsv", gallery);
    const bool gallery_ok = read_gallery(dir / "gallery.tsv") == gallery;
    fs::remove_all(dir);
    return {reports && checkpoints && resume && manifest_ok && gallery_ok,
            fmt("identical reports %s, identical checkpoints %s, resume matches 10 steps %s, manifest round-trip %s, gallery "
                "round-trip %s",
                reports ? "yes" : "no", checkpoints ? "yes" : "no", resume ? "yes" : "no", manifest_ok ? "yes" : "no",
                gallery_ok ? "yes" : "no")};
}

std::set<int> parse_list(const char* s) {
    std::set<int> out;
    std::stringstream in(s);
    for (std::string tok; std::getline(in, tok, ',');) out.insert(std::stoi(tok));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only, expect_fail;
    for (int i = 1; i + 1 < argc; i += 2) {
        if (std::strcmp(argv[i], "--only") == 0) only = parse_list(argv[i + 1]);
        else if (std::strcmp(argv[i], "--expect-fail") == 0) expect_fail = parse_list(argv[i + 1]);
    }
    struct Criterion {
        int id;
        const char* name;
        Outcome (*run)();
        double budget_s;  // 0 = none
    };
    const std::vector<Criterion> criteria{
        {1, "gradient integrity", gradients, 120},   {2, "geometry", geometry, 0},
        {3, "masking", masking, 0},                   {4, "UWOX decoupling", decoupling, 0},
        {5, "pair matching learns", pair_matching, 900}, {6, "mix-up benefit trend", mixup_trend, 0},
        {7, "multi-scale benefit trend", multiscale_trend, 0}, {8, "metric oracles", metric_oracles, 0},
        {9, "retrieval learns", retrieval, 0},       {10, "reproducibility and persistence", reproducibility, 0},
    };
    int unexpected = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && secs > c.budget_s) {
            o.pass = false;
            o.detail += fmt(" | over the %.0fs budget", c.budget_s);
        }
        std::printf("%s %2d %s: %s (%.1fs)%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                    !o.pass && expect_fail.count(c.id) ? " [known failure]" : "");
        std::fflush(stdout);
        if (!o.pass && !expect_fail.count(c.id)) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
