#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mixpretrain.hpp"

namespace fs = std::filesystem;
using namespace mixpretrain;

namespace {

struct Options {
    std::string config;
    std::string profile;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::string manifest;
    std::string manifest_b;
    std::string eval_manifest;
    std::string checkpoint;
    std::string vocab;
    std::optional<std::string> mode;
    std::optional<std::size_t> block_size;
    std::optional<std::string> multiscale;
    std::optional<std::string> scenario;
    std::optional<double> paired_frac;
    std::optional<std::size_t> steps;
    std::string task;
    std::vector<std::string> scenarios = {"baseline1", "baseline2", "mixup1"};
    std::vector<double> fractions = {0.05, 0.1, 0.5, 1.0};
};

void add_shared(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--profile", o.profile, "paper or desk defaults")->check(CLI::IsMember({"paper", "desk"}));
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--out-dir", o.out_dir);
    cmd->add_option("--manifest", o.manifest);
    cmd->add_option("--checkpoint", o.checkpoint);
    cmd->add_option("--mode", o.mode)->check(CLI::IsMember({"unit", "uwox", "img_only", "txt_only"}));
    cmd->add_option("--block-size", o.block_size);
    cmd->add_option("--multiscale", o.multiscale)->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--scenario", o.scenario)->check(CLI::IsMember({"baseline1", "baseline2", "mixup1", "mixup2"}));
    cmd->add_option("--paired-frac", o.paired_frac);
    cmd->add_option("--task", o.task);
}

TrainConfig resolve_config(const Options& o) {
    TrainConfig c = o.profile == "desk" ? TrainConfig::desk() : TrainConfig{};
    if (!o.config.empty()) {
        const auto j = read_config_json(o.config);
        c = o.profile.empty() ? config_from_json(j) : apply_json(c, j);
    }
    if (o.seed) {
        c.seed = *o.seed;
        c.scenario.seed = *o.seed;
    }
    if (o.mode) c.mode = parse_mode(*o.mode);
    if (o.block_size) c.block_size = *o.block_size;
    if (o.multiscale) c.multiscale = *o.multiscale == "on";
    if (o.scenario) c.scenario.scenario = parse_scenario(*o.scenario);
    if (o.paired_frac) c.scenario.paired_fraction = *o.paired_frac;
    if (o.steps) c.steps = c.finetune_steps = *o.steps;
    c.validate();
    return c;
}

std::vector<StudyRecord> need_manifest(const std::string& path, const TrainConfig& c, const char* flag) {
    if (path.empty()) throw ConfigError(std::string(flag) + " is required");
    return load_manifest(path, c.block_size);
}

Vocab resolve_vocab(const Options& o) { return o.vocab.empty() ? default_vocab() : Vocab::load(o.vocab); }

void print_report(const MetricReport& r) { std::cout << to_json(r).dump(2) << '\n'; }

int gen_data(const Options& o) {
    const TrainConfig c = resolve_config(o);
    const fs::path out(o.out_dir);
    GeneratorOptions ga;
    ga.max_block = c.block_size;
    GeneratorOptions gb = ga;
    gb.institute = Institute::B;
    write_manifest(generate_corpus(c.corpus_a, c.image_size, c.num_classes, c.seed, ga), out / "a");
    if (c.corpus_b > 0) write_manifest(generate_corpus(c.corpus_b, c.image_size, c.num_classes, c.seed, gb), out / "b");
    if (c.eval_size > 0)
        write_manifest(generate_corpus(c.eval_size, c.image_size, c.num_classes, detail::splitmix64(c.seed + 1), ga),
                       out / "eval");
    default_vocab().save(out / "vocab.txt");
    save_config(out / "config.json", c);
    std::cout << "wrote " << c.corpus_a << " + " << c.corpus_b << " + " << c.eval_size << " records under " << out
              << '\n';
    return 0;
}

int run_pretrain(const Options& o) {
    const TrainConfig c = resolve_config(o);
    const auto a = need_manifest(o.manifest, c, "--manifest");
    std::vector<StudyRecord> b;
    if (!o.manifest_b.empty()) b = load_manifest(o.manifest_b, c.block_size);
    const auto split = assemble_scenario(a, b, c.scenario);
    std::vector<LossRow> curve;
    Trainer t = pretrain(c, resolve_vocab(o), split.pretrain_set, &curve);
    const fs::path out(o.out_dir);
    fs::create_directories(out);
    t.save(out / "pretrain.ckpt");
    write_loss_curve(out / "loss.csv", curve);
    save_config(out / "config.json", c);
    std::printf("pretrained %zu steps on %zu tuples; final loss %.6f\n", curve.size(), split.pretrain_set.size(),
                curve.empty() ? 0.0 : curve.back().total);
    return 0;
}

int run_finetune(const Options& o) {
    const TrainConfig c = resolve_config(o);
    const Task task = parse_task(o.task.empty() ? "cls" : o.task);
    const auto a = need_manifest(o.manifest, c, "--manifest");
    std::optional<Checkpoint> ck;
    Vocab vocab = resolve_vocab(o);
    if (!o.checkpoint.empty()) {
        ck = read_checkpoint(o.checkpoint);
        vocab = Trainer::from_checkpoint(*ck).vocab();
    }
    const auto split = assemble_scenario(a, {}, ScenarioConfig{Scenario::baseline1, c.scenario.paired_fraction,
                                                               c.scenario.seed});
    Trainer t = finetune(c, vocab, ck ? &*ck : nullptr, task, split.finetune_set);
    const fs::path out(o.out_dir);
    fs::create_directories(out);
    t.save(out / ("finetune_" + std::string(to_string(task)) + ".ckpt"));
    std::printf("fine-tuned %s head on %zu records\n", std::string(to_string(task)).c_str(), split.finetune_set.size());
    return 0;
}

int run_evaluate(const Options& o, std::optional<Task> forced = std::nullopt) {
    if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    if (o.manifest.empty()) throw ConfigError("--manifest is required");
    const Task task = forced ? *forced : parse_task(o.task.empty() ? "cls" : o.task);
    Trainer t = Trainer::load(o.checkpoint);
    const auto records = load_manifest(o.manifest, t.config().block_size);
    EvalOptions opt;
    opt.out_dir = fs::path(o.out_dir);
    opt.regen_rate = t.config().mask_rate;
    const auto rep = evaluate(t, task, records, opt);
    fs::create_directories(o.out_dir);
    write_report(fs::path(o.out_dir) / ("report_" + rep.task + ".json"), rep);
    print_report(rep);
    return 0;
}

int run_suite(const Options& o) {
    const TrainConfig c = resolve_config(o);
    const auto a = need_manifest(o.manifest, c, "--manifest");
    const auto ev = need_manifest(o.eval_manifest, c, "--eval-manifest");
    std::vector<StudyRecord> b;
    if (!o.manifest_b.empty()) b = load_manifest(o.manifest_b, c.block_size);
    std::vector<Scenario> sc;
    for (const auto& s : o.scenarios) sc.push_back(parse_scenario(s));
    const auto table = run_scenario_suite(c, resolve_vocab(o), a, b, ev, sc, o.fractions);
    fs::create_directories(o.out_dir);
    write_suite(fs::path(o.out_dir) / "scenario_table.json", table);
    std::cout << to_json(table).dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed paired/unpaired image-text pre-training"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "write synthetic corpora (a, b, eval) as manifests");
    auto* pre = app.add_subcommand("pretrain", "masked pre-training on a scenario's tuples");
    auto* fin = app.add_subcommand("finetune", "attach a cls or hash head and fine-tune");
    auto* eva = app.add_subcommand("evaluate", "cls | retrieval | regen | pairmatch metrics");
    auto* reg = app.add_subcommand("regenerate", "regenerate every image of a manifest");
    auto* sui = app.add_subcommand("scenario-suite", "pretrain/finetune/evaluate over scenarios x fractions");
    for (auto* cmd : {gen, pre, fin, eva, reg, sui}) {
        add_shared(cmd, o);
        cmd->add_option("--vocab", o.vocab, "vocabulary file, one word per line");
        cmd->add_option("--steps", o.steps, "override the step count");
    }
    for (auto* cmd : {pre, sui}) cmd->add_option("--manifest-b", o.manifest_b, "institute-B manifest (mixup2)");
    sui->add_option("--eval-manifest", o.eval_manifest);
    sui->add_option("--scenarios", o.scenarios)->delimiter(',');
    sui->add_option("--fractions", o.fractions)->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        if (*gen) return gen_data(o);
        if (*pre) return run_pretrain(o);
        if (*fin) return run_finetune(o);
        if (*eva) return run_evaluate(o);
        if (*reg) return run_evaluate(o, Task::regen);
        if (*sui) return run_suite(o);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
