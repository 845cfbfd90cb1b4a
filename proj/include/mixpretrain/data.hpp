#pragma once

// Synthetic image-report corpora, on-disk manifests, and assembly of the four
// pre-training scenarios (baseline1, baseline2, mixup1, mixup2).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixpretrain/errors.hpp"

namespace mixpretrain {

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    GrayImage() = default;
    GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

    std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

enum class Institute { A, B };

inline std::string_view to_string(Institute i) { return i == Institute::A ? "A" : "B"; }
inline Institute parse_institute(std::string_view s) {
    if (s == "A") return Institute::A;
    if (s == "B") return Institute::B;
    throw ConfigError("unknown institute '" + std::string(s) + "'");
}

struct StudyRecord {
    std::string id;
    GrayImage image;
    std::string report;
    std::vector<int> labels;  // multi-hot over K classes
    Institute institute = Institute::A;
    bool has_report = true;

    friend bool operator==(const StudyRecord&, const StudyRecord&) = default;
};

enum class Scenario { baseline1, baseline2, mixup1, mixup2 };

inline std::string_view to_string(Scenario s) {
    switch (s) {
        case Scenario::baseline1: return "baseline1";
        case Scenario::baseline2: return "baseline2";
        case Scenario::mixup1: return "mixup1";
        case Scenario::mixup2: return "mixup2";
    }
    return "?";
}
inline Scenario parse_scenario(std::string_view s) {
    if (s == "baseline1") return Scenario::baseline1;
    if (s == "baseline2") return Scenario::baseline2;
    if (s == "mixup1") return Scenario::mixup1;
    if (s == "mixup2") return Scenario::mixup2;
    throw ConfigError("unknown scenario '" + std::string(s) + "'");
}

struct ScenarioConfig {
    Scenario scenario = Scenario::mixup1;
    double paired_fraction = 1.0;
    std::uint64_t seed = 0;
};

/// An (image, report) pair fed to pre-training. Carries no labels.
struct TrainingTuple {
    GrayImage image;
    std::string report;
    int i_pair = 1;
    std::string image_id;
    std::string report_id;
    Institute institute = Institute::A;
};

struct ScenarioSplit {
    std::vector<TrainingTuple> pretrain_set;
    std::vector<StudyRecord> finetune_set;
};

// ---------------------------------------------------------------------------
// Synthetic generator

/// Shape classes in label order. A corpus with K classes uses the first K.
inline constexpr std::array<std::string_view, 8> kShapeNames = {"circle", "square", "cross",   "bar",
                                                                 "triangle", "ring", "diamond", "vbar"};

/// Every word the report template can emit.
inline std::vector<std::string> template_words() {
    std::vector<std::string> w(kShapeNames.begin(), kShapeNames.end());
    for (const char* s : {"upper", "lower", "left", "right", "and", "no", "finding"}) w.emplace_back(s);
    return w;
}

struct GeneratorOptions {
    Institute institute = Institute::A;
    std::size_t max_block = 8;      // largest block size the corpus must support
    double class_rate = 0.5;        // per-class presence probability
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline bool inside_shape(std::size_t cls, double dx, double dy, double r) {
    const double dist2 = dx * dx + dy * dy;
    switch (cls) {
        case 0: return dist2 <= r * r;
        case 1: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
        case 2: return (std::abs(dx) <= r / 3 && std::abs(dy) <= r) || (std::abs(dy) <= r / 3 && std::abs(dx) <= r);
        case 3: return std::abs(dx) <= r && std::abs(dy) <= r / 3;
        case 4: return dy <= 0.8 * r && dy >= -r && std::abs(dx) <= (dy + r) / 2;
        case 5: return dist2 <= r * r && dist2 >= 0.3 * r * r;
        case 6: return std::abs(dx) + std::abs(dy) <= r;
        default: return std::abs(dy) <= r && std::abs(dx) <= r / 3;
    }
}

inline StudyRecord render_record(std::size_t index, std::size_t size, std::size_t num_classes,
                                 std::uint64_t seed, const GeneratorOptions& opt) {
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(index + (opt.institute == Institute::B ? 0x5bd1e995ULL : 0))));
    StudyRecord rec;
    {
        std::ostringstream id;
        id << to_string(opt.institute);
        id.width(6);
        id.fill('0');
        id << index;
        rec.id = id.str();
    }
    rec.institute = opt.institute;
    rec.labels.assign(num_classes, 0);
    std::bernoulli_distribution present(opt.class_rate);
    for (auto& l : rec.labels) l = present(rng) ? 1 : 0;

    // Institute B images sit on a brighter background (inter-site domain gap).
    const double bg_mean = opt.institute == Institute::A ? 50.0 : 90.0;
    std::normal_distribution<double> noise(bg_mean, 12.0);
    std::vector<double> canvas(size * size);
    for (auto& p : canvas) p = noise(rng);

    std::array<int, 4> quads = {0, 1, 2, 3};
    std::shuffle(quads.begin(), quads.end(), rng);
    std::uniform_int_distribution<int> intensity(170, 240);
    const double half = static_cast<double>(size) / 2.0;
    const double radius = static_cast<double>(size) * 3.0 / 16.0;
    const int jitter = std::max<int>(1, static_cast<int>(size / 32));
    std::uniform_int_distribution<int> jit(-jitter, jitter);

    std::vector<std::string> phrases;
    std::size_t placed = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (rec.labels[c] == 0) continue;
        const int q = quads[placed % 4];
        ++placed;
        const bool lower = q >= 2, right = (q % 2) == 1;
        const double cx = (right ? 1.5 : 0.5) * half + jit(rng);
        const double cy = (lower ? 1.5 : 0.5) * half + jit(rng);
        const double level = intensity(rng);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                if (inside_shape(c, x + 0.5 - cx, y + 0.5 - cy, radius)) canvas[y * size + x] = level;
        phrases.push_back(std::string(kShapeNames[c]) + (lower ? " lower" : " upper") + (right ? " right" : " left"));
    }
    if (phrases.empty()) {
        rec.report = "no finding";
    } else {
        for (std::size_t i = 0; i < phrases.size(); ++i) rec.report += (i ? " and " : "") + phrases[i];
    }
    rec.image = GrayImage(size, size);
    for (std::size_t i = 0; i < canvas.size(); ++i)
        rec.image.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(canvas[i]), 0L, 255L));
    return rec;
}

}  // namespace detail

inline void check_image_geometry(std::size_t width, std::size_t height, std::size_t block, const std::string& who) {
    const std::size_t unit = 4 * block;
    if (block == 0 || width == 0 || height == 0 || width % unit != 0 || height % unit != 0) {
        throw ValidationError(who + ": image " + std::to_string(width) + "x" + std::to_string(height) +
                              " is not divisible by 4*B = " + std::to_string(unit));
    }
}

/// Renders `n` studies of size×size pixels. Each class appears independently
/// with probability 0.5 in its own quadrant, and the report names every
/// present shape with its quadrant. Deterministic in (n, size, K, seed).
inline std::vector<StudyRecord> generate_corpus(std::size_t n, std::size_t image_size, std::size_t num_classes,
                                                std::uint64_t seed, const GeneratorOptions& opt = {}) {
    if (n == 0) throw ConfigError("corpus size must be at least 1");
    if (num_classes == 0 || num_classes > kShapeNames.size())
        throw ConfigError("num_classes must be in [1, " + std::to_string(kShapeNames.size()) + "]");
    if (image_size < 16 || opt.max_block == 0 || image_size % (4 * opt.max_block) != 0)
        throw ConfigError("image_size " + std::to_string(image_size) + " must be >= 16 and divisible by " +
                          std::to_string(4 * opt.max_block));
    std::vector<StudyRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(detail::render_record(i, image_size, num_classes, seed, opt));
    return out;
}

// ---------------------------------------------------------------------------
// Scenario assembly

inline std::size_t paired_count(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

/// Splits corpus_a into a paired subset (round(fraction*|A|) records, chosen by
/// a seed-determined shuffle) and builds the scenario's pre-training tuples.
/// Unpaired images are coupled once with a report drawn uniformly with
/// replacement from the other records of corpus_a.
inline ScenarioSplit assemble_scenario(const std::vector<StudyRecord>& corpus_a, const std::vector<StudyRecord>& corpus_b,
                                       const ScenarioConfig& cfg) {
    if (corpus_a.size() < 2) throw ConfigError("corpus_a needs at least 2 records");
    if (!(cfg.paired_fraction > 0.0 && cfg.paired_fraction <= 1.0))
        throw ConfigError("paired_fraction must lie in (0, 1]");
    const std::size_t n_paired = paired_count(cfg.paired_fraction, corpus_a.size());
    if (n_paired < 1) throw ConfigError("paired_fraction * |corpus_a| must be at least 1");
    if (cfg.scenario == Scenario::mixup2 && corpus_b.empty())
        throw ConfigError("mixup2 requires a non-empty corpus_b");

    std::mt19937_64 rng(detail::splitmix64(cfg.seed));
    std::vector<std::size_t> order(corpus_a.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> paired(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_paired));
    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(n_paired), order.end());
    std::sort(paired.begin(), paired.end());
    std::sort(rest.begin(), rest.end());

    ScenarioSplit out;
    for (std::size_t i : paired) out.finetune_set.push_back(corpus_a[i]);
    if (cfg.scenario == Scenario::baseline1) return out;

    auto paired_tuple = [](const StudyRecord& r) {
        return TrainingTuple{r.image, r.report, 1, r.id, r.id, r.institute};
    };
    for (std::size_t i : paired) {
        if (corpus_a[i].has_report) out.pretrain_set.push_back(paired_tuple(corpus_a[i]));
    }
    if (cfg.scenario == Scenario::baseline2) return out;

    std::vector<std::size_t> donors;
    for (std::size_t i = 0; i < corpus_a.size(); ++i)
        if (corpus_a[i].has_report) donors.push_back(i);

    auto couple = [&](const StudyRecord& img) {
        std::vector<std::size_t> pool;
        pool.reserve(donors.size());
        for (std::size_t d : donors)
            if (corpus_a[d].id != img.id) pool.push_back(d);
        if (pool.empty()) throw ConfigError("no report available to couple with image '" + img.id + "'");
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const StudyRecord& rep = corpus_a[pool[pick(rng)]];
        out.pretrain_set.push_back(TrainingTuple{img.image, rep.report, 0, img.id, rep.id, img.institute});
    };
    if (cfg.scenario == Scenario::mixup1) {
        for (std::size_t i : rest) couple(corpus_a[i]);
    } else {
        for (const auto& r : corpus_b) couple(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Portable graymap (binary P5, maxval 255)

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!f) throw IoError("short write on " + path.string());
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    auto next_token = [&]() {
        std::string tok;
        char c;
        while (f.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(f, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(c);
        }
        return tok;
    };
    if (next_token() != "P5") throw IoError(path.string() + ": not a binary graymap");
    GrayImage img;
    try {
        img.width = std::stoul(next_token());
        img.height = std::stoul(next_token());
        if (std::stoul(next_token()) != 255) throw IoError(path.string() + ": maxval must be 255");
    } catch (const std::logic_error&) {
        throw IoError(path.string() + ": malformed graymap header");
    }
    img.pixels.resize(img.width * img.height);
    f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw IoError(path.string() + ": truncated pixels");
    return img;
}

// ---------------------------------------------------------------------------
// Manifest: JSON object per line
//   {"id", "image_path", "report": string|null, "labels": [0/1...], "institute": "A"|"B"}

/// Writes images under <dir>/images and the manifest at <dir>/<name>.
inline std::filesystem::path write_manifest(const std::vector<StudyRecord>& records, const std::filesystem::path& dir,
                                            const std::string& name = "manifest.jsonl") {
    std::filesystem::create_directories(dir / "images");
    const auto manifest_path = dir / name;
    std::ofstream f(manifest_path);
    if (!f) throw IoError("cannot write " + manifest_path.string());
    for (const auto& r : records) {
        const std::string rel = "images/" + r.id + ".pgm";
        write_pgm(dir / rel, r.image);
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["image_path"] = rel;
        j["report"] = r.has_report ? nlohmann::ordered_json(r.report) : nlohmann::ordered_json(nullptr);
        j["labels"] = r.labels;
        j["institute"] = std::string(to_string(r.institute));
        f << j.dump() << '\n';
    }
    return manifest_path;
}

/// Parses a manifest and loads its images. Relative image paths resolve
/// against the manifest's directory. Every image must satisfy the pyramid
/// constraint for `block_size`.
inline std::vector<StudyRecord> load_manifest(const std::filesystem::path& path, std::size_t block_size) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::vector<StudyRecord> out;
    std::string line;
    std::size_t line_no = 0;
    std::size_t num_classes = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        StudyRecord r;
        std::filesystem::path image_path;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!j.is_object()) throw ParseError("expected a JSON object", line_no);
            r.id = j.at("id").get<std::string>();
            image_path = j.at("image_path").get<std::string>();
            if (j.contains("report") && !j["report"].is_null()) {
                r.report = j["report"].get<std::string>();
                r.has_report = true;
            } else {
                r.has_report = false;
            }
            r.labels = j.at("labels").get<std::vector<int>>();
            r.institute = parse_institute(j.value("institute", "A"));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed manifest record: ") + e.what(), line_no);
        } catch (const ConfigError& e) {
            throw ParseError(e.what(), line_no);
        }
        if (r.id.empty()) throw ParseError("empty record id", line_no);
        for (int l : r.labels)
            if (l != 0 && l != 1) throw ValidationError("record '" + r.id + "': labels must be 0/1");
        if (out.empty()) num_classes = r.labels.size();
        if (r.labels.size() != num_classes)
            throw ValidationError("record '" + r.id + "': expected " + std::to_string(num_classes) + " labels");
        r.image = read_pgm(image_path.is_absolute() ? image_path : base / image_path);
        check_image_geometry(r.image.width, r.image.height, block_size, "record '" + r.id + "'");
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace mixpretrain
