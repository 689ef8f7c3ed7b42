#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "m3t/corpus.hpp"
#include "m3t/image.hpp"

// Synthetic desk-scale corpus: procedurally rendered gray images with 1-3
// blob "lesions" on modality-styled backgrounds. The primary blob's type,
// quadrant, severity and modality appear verbatim in the keywords, and the
// description is a fixed template of those same attributes, so keyword
// signal is genuinely predictive of the target text. Everything is a pure
// function of (seed, index).

namespace m3t {

namespace synth {

inline const std::array<std::string, 4> kTypes{"dot", "ring", "patch", "streak"};
inline const std::array<std::string, 4> kQuadrants{"upper left", "upper right", "lower left",
                                                   "lower right"};
inline const std::array<std::string, 3> kSeverities{"mild", "moderate", "severe"};
inline const std::array<std::string, 3> kModalities{"fundus", "oct", "angiogram"};

struct BlobSpec {
    int type = 0;
    int quadrant = 0;
    double cx = 0, cy = 0;   // center in pixels
    double strength = 0;     // additive intensity
    double size_factor = 1.0;
    double angle = 0;        // streak orientation
};

struct RecordSpec {
    int type = 0, quadrant = 0, severity = 0, modality = 0;
    int template_id = 0;
    std::vector<BlobSpec> blobs;  // blobs[0] is the primary lesion
};

inline std::string describe(const RecordSpec& s) {
    const std::string& type = kTypes[static_cast<size_t>(s.type)];
    const std::string& quad = kQuadrants[static_cast<size_t>(s.quadrant)];
    const std::string& sev = kSeverities[static_cast<size_t>(s.severity)];
    const std::string& mod = kModalities[static_cast<size_t>(s.modality)];
    switch (s.template_id) {
        case 0:
            return mod + " scan with a " + sev + " " + type + " lesion in the " + quad +
                   " quadrant";
        case 1:
            return "a " + sev + " " + type + " lesion appears in the " + quad +
                   " quadrant of this " + mod + " scan";
        default:
            return "this " + mod + " image shows a " + sev + " " + type +
                   " lesion centered in the " + quad + " region";
    }
}

inline std::string keyword_string(const RecordSpec& s, std::mt19937_64& rng) {
    std::vector<std::string> groups{
        kTypes[static_cast<size_t>(s.type)] + " lesion",
        kQuadrants[static_cast<size_t>(s.quadrant)] + " quadrant",
        kSeverities[static_cast<size_t>(s.severity)] + " grade",
        kModalities[static_cast<size_t>(s.modality)] + " imaging",
    };
    std::shuffle(groups.begin(), groups.end(), rng);
    std::string out;
    for (size_t i = 0; i < groups.size(); ++i) {
        if (i) out += ", ";
        out += groups[i];
    }
    return out;
}

inline void place_in_quadrant(BlobSpec& blob, idx size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.30, 0.70);
    const double half = static_cast<double>(size) / 2.0;
    const double px = u(rng) * half;
    const double py = u(rng) * half;
    const bool right = blob.quadrant == 1 || blob.quadrant == 3;
    const bool lower = blob.quadrant == 2 || blob.quadrant == 3;
    blob.cx = right ? half + px : px + half * 0.25;
    blob.cy = lower ? half + py : py + half * 0.25;
}

inline void render_blob(std::vector<double>& canvas, idx size, const BlobSpec& b) {
    const double s = static_cast<double>(size);
    const double feather = 1.5;
    auto smooth = [&](double d) {  // 1 inside, 0 outside, linear over the feather band
        return std::clamp((feather - d) / (2.0 * feather) + 0.5, 0.0, 1.0);
    };
    for (idx y = 0; y < size; ++y)
        for (idx x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) - b.cx;
            const double dy = static_cast<double>(y) - b.cy;
            const double r = std::sqrt(dx * dx + dy * dy);
            double cover = 0.0;
            switch (b.type) {
                case 0:  // dot: filled disc
                    cover = smooth(r - 0.085 * s * b.size_factor);
                    break;
                case 1: {  // ring: annulus
                    const double mid = 0.115 * s * b.size_factor;
                    cover = smooth(std::abs(r - mid) - 0.033 * s);
                    break;
                }
                case 2: {  // patch: soft square
                    const double half = 0.085 * s * b.size_factor;
                    cover = smooth(std::max(std::abs(dx), std::abs(dy)) - half);
                    break;
                }
                default: {  // streak: thick oriented segment
                    const double ca = std::cos(b.angle), sa = std::sin(b.angle);
                    const double along = dx * ca + dy * sa;
                    const double across = -dx * sa + dy * ca;
                    const double half_len = 0.16 * s * b.size_factor;
                    const double clamped = std::clamp(along, -half_len, half_len);
                    const double d = std::sqrt((along - clamped) * (along - clamped) +
                                               across * across);
                    cover = smooth(d - 0.028 * s);
                    break;
                }
            }
            canvas[static_cast<size_t>(y * size + x)] += b.strength * cover;
        }
}

inline GrayImage render(const RecordSpec& spec, idx size, std::mt19937_64& rng) {
    static const std::array<double, 3> kBase{112.0, 58.0, 148.0};
    static const std::array<double, 3> kWaveAmp{9.0, 16.0, 6.0};
    std::vector<double> canvas(static_cast<size_t>(size * size));
    std::uniform_real_distribution<double> noise(-8.0, 8.0);
    const double base = kBase[static_cast<size_t>(spec.modality)];
    const double amp = kWaveAmp[static_cast<size_t>(spec.modality)];
    const double fy = spec.modality == 1 ? 0.55 : 0.18;  // oct gets layered stripes
    const double fx = spec.modality == 2 ? 0.40 : 0.10;
    for (idx y = 0; y < size; ++y)
        for (idx x = 0; x < size; ++x)
            canvas[static_cast<size_t>(y * size + x)] =
                base + amp * std::sin(fy * static_cast<double>(y)) *
                           std::cos(fx * static_cast<double>(x)) +
                noise(rng);
    for (const auto& b : spec.blobs) render_blob(canvas, size, b);
    GrayImage img;
    img.height = size;
    img.width = size;
    img.pixels.resize(canvas.size());
    for (size_t i = 0; i < canvas.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(canvas[i], 0.0, 255.0) + 0.5);
    return img;
}

}  // namespace synth

struct SyntheticRecord {
    CorpusRecord meta;  // image path is relative ("images/img_00012.pgm")
    GrayImage image;
};

inline SyntheticRecord generate_synthetic_record(std::uint64_t seed, idx index, idx image_size) {
    std::mt19937_64 rng(mix64(seed, static_cast<std::uint64_t>(index)));
    synth::RecordSpec spec;
    spec.type = static_cast<int>(rng() % synth::kTypes.size());
    spec.quadrant = static_cast<int>(rng() % synth::kQuadrants.size());
    spec.severity = static_cast<int>(rng() % synth::kSeverities.size());
    spec.modality = static_cast<int>(rng() % synth::kModalities.size());
    // template follows the attributes, so the description is a pure
    // function of what the keywords say
    spec.template_id = (spec.modality * 2 + spec.severity) % 3;

    static const std::array<double, 3> kStrength{36.0, 72.0, 108.0};
    static const std::array<double, 3> kSizeFactor{0.8, 1.0, 1.25};
    std::uniform_real_distribution<double> angle(0.0, 3.14159265358979);
    synth::BlobSpec primary;
    primary.type = spec.type;
    primary.quadrant = spec.quadrant;
    primary.strength = kStrength[static_cast<size_t>(spec.severity)];
    primary.size_factor = kSizeFactor[static_cast<size_t>(spec.severity)];
    primary.angle = angle(rng);
    synth::place_in_quadrant(primary, image_size, rng);
    spec.blobs.push_back(primary);

    const int distractors = static_cast<int>(rng() % 3);
    for (int d = 0; d < distractors; ++d) {
        synth::BlobSpec blob;
        blob.type = static_cast<int>(rng() % synth::kTypes.size());
        blob.quadrant = static_cast<int>(rng() % synth::kQuadrants.size());
        blob.strength = 20.0;
        blob.size_factor = 0.7;
        blob.angle = angle(rng);
        synth::place_in_quadrant(blob, image_size, rng);
        spec.blobs.push_back(blob);
    }

    SyntheticRecord rec;
    rec.meta.image = strf("images/img_%05lld.pgm", static_cast<long long>(index));
    rec.meta.keywords = synth::keyword_string(spec, rng);
    rec.meta.description = synth::describe(spec);
    rec.image = synth::render(spec, image_size, rng);
    return rec;
}

inline std::vector<SyntheticRecord> generate_synthetic_corpus(idx n, std::uint64_t seed,
                                                              idx image_size = 64) {
    if (n < 1) throw ContractError("synthetic corpus needs n >= 1");
    std::vector<SyntheticRecord> out;
    out.reserve(static_cast<size_t>(n));
    for (idx i = 0; i < n; ++i) out.push_back(generate_synthetic_record(seed, i, image_size));
    return out;
}

// Writes images/ and corpus.tsv under out_dir; returns the corpus path.
inline std::string write_synthetic_corpus(const std::string& out_dir,
                                          const std::vector<SyntheticRecord>& records) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "images");
    std::vector<CorpusRecord> meta;
    meta.reserve(records.size());
    for (const auto& r : records) {
        write_pgm((fs::path(out_dir) / r.meta.image).string(), r.image);
        meta.push_back(r.meta);
    }
    const std::string tsv = (fs::path(out_dir) / "corpus.tsv").string();
    write_corpus_tsv(tsv, meta);
    return tsv;
}

}  // namespace m3t
