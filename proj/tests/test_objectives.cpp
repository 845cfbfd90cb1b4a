#include <set>

#include "support.hpp"

using namespace mixpretrain;

namespace {

TokenSequence seq_of(std::size_t n) {
    TokenSequence s;
    for (std::size_t i = 0; i < n; ++i) {
        s.tokens.push_back(2 + static_cast<int>(i % 10));
        s.positions.push_back(static_cast<int>(i));
        s.pad_mask.push_back(false);
    }
    return s;
}

}  // namespace

TEST(MaskTokens, CountsFollowRounding) {
    std::mt19937_64 rng(1);
    EXPECT_EQ(mask_tokens(seq_of(150), 0.15, rng, 20).second.size(), 22u);
    EXPECT_EQ(mask_tokens(seq_of(2), 0.15, rng, 20).second.size(), 1u);
    EXPECT_EQ(masked_count(0.15, 256), 38u);
    EXPECT_EQ(masked_count(0.99, 3), 3u);
}

TEST(MaskTokens, NeverTouchesPaddingAndNoDuplicates) {
    std::mt19937_64 rng(2);
    auto s = tokenize("circle upper left and square lower right", default_vocab(), 12, true);
    for (int trial = 0; trial < 200; ++trial) {
        auto [out, plan] = mask_tokens(s, 0.3, rng, default_vocab().size());
        std::set<std::size_t> uniq(plan.positions.begin(), plan.positions.end());
        EXPECT_EQ(uniq.size(), plan.size());
        for (std::size_t p : plan.positions) EXPECT_FALSE(s.pad_mask[p]);
        for (std::size_t i = 0; i < plan.size(); ++i) {
            EXPECT_EQ(plan.originals[i], s.tokens[plan.positions[i]]);
            EXPECT_GE(plan.replacements[i], 2);
        }
        for (std::size_t i = 7; i < 12; ++i) EXPECT_EQ(out.tokens[i], kPadId);
    }
}

TEST(MaskTokens, DeterministicGivenRngState) {
    std::mt19937_64 a(9), b(9);
    EXPECT_EQ(mask_tokens(seq_of(40), 0.15, a, 20).second.positions,
              mask_tokens(seq_of(40), 0.15, b, 20).second.positions);
}

TEST(MaskTokens, RejectsAllPadding) {
    std::mt19937_64 rng(2);
    auto s = tokenize("", default_vocab(), 4, true);
    EXPECT_THROW(mask_tokens(s, 0.15, rng, 20), ValidationError);
    EXPECT_THROW(mask_tokens(seq_of(3), 0.0, rng, 20), ConfigError);
}

TEST(MaskTokens, EmpiricalRate) {
    std::mt19937_64 rng(3);
    const auto s = seq_of(100);
    std::vector<int> hits(100, 0);
    for (int t = 0; t < 1000; ++t)
        for (std::size_t p : mask_tokens(s, 0.15, rng, 20).second.positions) ++hits[p];
    double total = 0;
    for (int h : hits) total += h;
    EXPECT_NEAR(total / (1000.0 * 100.0), 0.15, 0.02);
    // every position gets masked at roughly the same rate
    for (int h : hits) EXPECT_NEAR(h / 1000.0, 0.15, 0.06);
}

TEST(MaskPatches, CountAndDonorRows) {
    std::mt19937_64 rng(4);
    GrayImage img(256, 256);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i % 251);
    const auto down = patchify(to_unit(img), 16, Level::down);
    Matrix<double> donors(3, 256, 0.5);
    auto [out, plan] = mask_patches(down, 0.15, rng, donors);
    EXPECT_EQ(plan.size(), 38u);
    for (std::size_t i = 0; i < plan.size(); ++i)
        for (double v : out.patches.row(plan.positions[i])) EXPECT_EQ(v, 0.5);
}

TEST(MaskPatches, ConstantImageIsNoOpButPositionsRecorded) {
    std::mt19937_64 rng(5);
    const auto down = patchify(to_unit(GrayImage(32, 32, 77)), 8, Level::down);
    auto [out, plan] = mask_patches(down, 0.25, rng, down.patches);
    EXPECT_EQ(out.patches, down.patches);
    EXPECT_EQ(plan.size(), 4u);
}

TEST(MaskPatches, DonorWidthMismatch) {
    std::mt19937_64 rng(5);
    const auto down = patchify(to_unit(GrayImage(32, 32, 77)), 8, Level::down);
    EXPECT_THROW(mask_patches(down, 0.25, rng, Matrix<double>(2, 10)), ShapeError);
}

TEST(LossTxt, UniformLogitsGiveLogVocab) {
    auto logits = make_var(Matrix<double>(5, 64, 0.3));
    EXPECT_NEAR(loss_txt<double>(nullptr, logits, {1, 2, 3, 4, 5})->value[0], std::log(64.0), 1e-12);
}

TEST(LossTxt, SaturatedLogitsNearZero) {
    Matrix<double> m(2, 8, -20.0);
    m(0, 3) = 20.0;
    m(1, 6) = 20.0;
    EXPECT_LT(loss_txt<double>(nullptr, make_var(m), {3, 6})->value[0], 1e-6);
    EXPECT_EQ(loss_txt<double>(nullptr, make_var(m), {})->value[0], 0.0);
}

TEST(LossImg, IdentityAndOffset) {
    std::vector<std::vector<double>> orig{{0.1, 0.2, 0.3, 0.4}, {0.9, 0.8, 0.7, 0.6}};
    Matrix<double> same(2, 4), off(2, 4);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            same(i, j) = orig[i][j];
            off(i, j) = orig[i][j] + 0.1;
        }
    EXPECT_EQ(loss_img<double>(nullptr, make_var(same), orig)->value[0], 0.0);
    EXPECT_NEAR(loss_img<double>(nullptr, make_var(off), orig)->value[0], 0.1, 1e-12);
    // zero subgradient where prediction equals target
    auto v = make_var(same, true);
    Tape<double> t;
    t.backward(loss_img(&t, v, orig));
    for (double g : v->grad.storage()) EXPECT_EQ(g, 0.0);
}

TEST(LossImg, UnmaskedPredictionsDoNotMatter) {
    std::mt19937_64 rng(6);
    auto all = testutil::random_var(6, 4, rng);
    const std::vector<std::size_t> masked{1, 4};
    std::vector<std::vector<double>> orig{{0, 0, 0, 0}, {1, 1, 1, 1}};
    const double before = loss_img<double>(nullptr, ops::gather_rows<double>(nullptr, all, masked), orig)->value[0];
    for (std::size_t r : {0, 2, 3, 5})
        for (std::size_t c = 0; c < 4; ++c) all->value(r, c) += 7.0;
    const double after = loss_img<double>(nullptr, ops::gather_rows<double>(nullptr, all, masked), orig)->value[0];
    EXPECT_EQ(before, after);
}

TEST(TotalLoss, ModeSelectsTerms) {
    EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 0.5, TrainMode::uwox), 3.5);
    EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 0.5, TrainMode::unit), 3.0);
    EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 0.5, TrainMode::img_only), 2.0);
    EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 0.5, TrainMode::txt_only), 1.0);
    EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, std::nullopt, TrainMode::uwox), 3.0);
}

TEST(Objectives, LossGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(7);
    auto logits = testutil::random_var(3, 6, rng);
    auto pred = testutil::random_var(2, 4, rng);
    std::vector<std::vector<double>> orig{{0.1, 0.5, -0.2, 2.0}, {1.0, -1.0, 0.3, 0.0}};
    auto r = testutil::grad_check(
        [&](Tape<double>* t) { return ops::add(t, loss_txt(t, logits, {0, 5, 2}), loss_img(t, pred, orig)); },
        {{"logits", logits}, {"pred", pred}});
    EXPECT_LT(r.worst, 1e-6) << r.where;
}

TEST(Objectives, FixedBatchOverfits) {
    // 300 Adam steps on one fixed batch with fixed masks
    auto cfg = testutil::tiny_model(TrainMode::uwox);
    cfg.max_tokens = 8;
    cfg.hidden = 16;
    Model<double> m(cfg, 4);
    Adam<double> adam(AdamConfig{3e-3});
    const auto recs = testutil::tiny_corpus(4, 12);
    std::vector<ImageInput> imgs;
    for (const auto& r : recs) imgs.push_back(ImageInput::from(r.image, cfg));
    std::mt19937_64 rng(3);
    std::vector<MaskedTuple> batch;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        MaskedTuple mt;
        auto [ts, tp] = mask_tokens(m.tokens(recs[i].report, default_vocab()), 0.3, rng, default_vocab().size());
        mt.tokens = ts;
        mt.token_plan = tp;
        auto [ps, pp] = mask_patches(imgs[i].pyramid.down, 0.3, rng, imgs[(i + 1) % 4].pyramid.down.patches);
        mt.image = &imgs[i];
        mt.down = ps;
        mt.patch_plan = pp;
        mt.i_pair = static_cast<int>(i % 2);
        batch.push_back(std::move(mt));
    }
    auto step = [&] {
        Tape<double> tape;
        Var<double> acc;
        for (const auto& mt : batch) {
            auto l = m.pretrain_terms(&tape, mt).total;
            acc = acc ? ops::add(&tape, acc, l) : l;
        }
        auto loss = ops::scale(&tape, acc, 0.25);
        const double v = loss->value[0];
        tape.backward(loss);
        adam.step(m.params());
        m.params().zero_grad();
        return v;
    };
    const double first = step();
    double last = first;
    for (int s = 1; s < 300; ++s) last = step();
    EXPECT_LT(last, 0.2 * first) << "first " << first << " last " << last;
}
