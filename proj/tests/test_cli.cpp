#include <cstdlib>
#include <fstream>

#include "support.hpp"

#ifndef MIXPRETRAIN_CLI
#error "MIXPRETRAIN_CLI must name the CLI binary"
#endif

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        dir_ = testutil::temp_dir("cli");
        std::ofstream f(dir_ / "tiny.json");
        f << R"({"profile": "desk", "image_size": 16, "block_size": 4, "hidden": 8, "heads": 2, "layers": 1,
                 "max_tokens": 8, "batch_size": 4, "steps": 3, "finetune_steps": 3,
                 "corpus_a": 24, "corpus_b": 8, "eval_size": 12})";
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }

    static int run(const std::string& args) {
        const std::string cmd = std::string(MIXPRETRAIN_CLI) + " " + args + " --config " + (dir_ / "tiny.json").string() +
                                " > " + (dir_ / "last.log").string() + " 2>&1";
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    }
    static std::string p(const std::string& rel) { return (dir_ / rel).string(); }

    static inline fs::path dir_;
};

}  // namespace

TEST_F(Cli, FullWorkflow) {
    ASSERT_EQ(run("gen-data --seed 3 --out-dir " + p("data")), 0);
    for (const char* f : {"data/a/manifest.jsonl", "data/b/manifest.jsonl", "data/eval/manifest.jsonl", "data/vocab.txt"})
        EXPECT_TRUE(fs::exists(p(f))) << f;
    EXPECT_EQ(mixpretrain::load_manifest(p("data/a/manifest.jsonl"), 4).size(), 24u);

    ASSERT_EQ(run("pretrain --scenario mixup1 --paired-frac 0.5 --manifest " + p("data/a/manifest.jsonl") +
                  " --out-dir " + p("pre")),
              0);
    EXPECT_TRUE(fs::exists(p("pre/pretrain.ckpt")));
    std::ifstream curve(p("pre/loss.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(curve, line)) ++rows;
    EXPECT_EQ(rows, 4u);

    ASSERT_EQ(run("finetune --task cls --checkpoint " + p("pre/pretrain.ckpt") + " --manifest " +
                  p("data/a/manifest.jsonl") + " --out-dir " + p("ft")),
              0);
    ASSERT_EQ(run("finetune --task hash --checkpoint " + p("pre/pretrain.ckpt") + " --manifest " +
                  p("data/a/manifest.jsonl") + " --out-dir " + p("ft")),
              0);
    ASSERT_EQ(run("evaluate --task cls --checkpoint " + p("ft/finetune_cls.ckpt") + " --manifest " +
                  p("data/eval/manifest.jsonl") + " --out-dir " + p("ev")),
              0);
    ASSERT_EQ(run("evaluate --task retrieval --checkpoint " + p("ft/finetune_hash.ckpt") + " --manifest " +
                  p("data/eval/manifest.jsonl") + " --out-dir " + p("ev")),
              0);
    ASSERT_EQ(run("evaluate --task pairmatch --checkpoint " + p("pre/pretrain.ckpt") + " --manifest " +
                  p("data/eval/manifest.jsonl") + " --out-dir " + p("ev")),
              0);
    ASSERT_EQ(run("regenerate --checkpoint " + p("pre/pretrain.ckpt") + " --manifest " + p("data/eval/manifest.jsonl") +
                  " --out-dir " + p("rg")),
              0);
    for (const char* f : {"ev/report_cls.json", "ev/report_retrieval.json", "ev/report_pairmatch.json",
                          "ev/gallery.tsv", "rg/report_regen.json"})
        EXPECT_TRUE(fs::exists(p(f))) << f;
    EXPECT_EQ(mixpretrain::read_gallery(p("ev/gallery.tsv")).size(), 12u);
    std::size_t pgms = 0;
    for (const auto& e : fs::directory_iterator(p("rg/regenerated"))) pgms += e.path().extension() == ".pgm";
    EXPECT_EQ(pgms, 12u);

    // wrong head for the task is a mode error
    EXPECT_EQ(run("evaluate --task cls --checkpoint " + p("ft/finetune_hash.ckpt") + " --manifest " +
                  p("data/eval/manifest.jsonl") + " --out-dir " + p("ev")),
              2);
}

TEST_F(Cli, ScenarioSuite) {
    ASSERT_EQ(run("gen-data --seed 4 --out-dir " + p("sdata")), 0);
    ASSERT_EQ(run("scenario-suite --scenarios baseline2,mixup1 --fractions 0.25,1.0 --manifest " +
                  p("sdata/a/manifest.jsonl") + " --eval-manifest " + p("sdata/eval/manifest.jsonl") + " --out-dir " +
                  p("suite")),
              0);
    EXPECT_EQ(mixpretrain::read_suite(p("suite/scenario_table.json")).cells.size(), 4u);
}

TEST_F(Cli, BadInvocations) {
    EXPECT_NE(run("pretrain --no-such-flag 1"), 0);
    EXPECT_NE(run("pretrain --mode sideways"), 0);
    EXPECT_NE(run(""), 0);
    EXPECT_EQ(run("pretrain --out-dir " + p("x")), 2);  // missing manifest
    EXPECT_EQ(run("evaluate --checkpoint " + p("nope.ckpt") + " --manifest " + p("nope.jsonl")), 2);
}
