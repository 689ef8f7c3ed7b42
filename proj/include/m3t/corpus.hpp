#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "m3t/text.hpp"
#include "m3t/vocab.hpp"

namespace m3t {

// One training example as stored on disk: image (raw .pgm or precomputed
// .m3tf features), raw keyword string, raw description string.
struct CorpusRecord {
    std::string image;
    std::string keywords;
    std::string description;
};

// TSV: image path <TAB> keywords <TAB> description. Relative image paths
// resolve against the TSV's directory on read.
inline std::vector<CorpusRecord> read_corpus_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::vector<CorpusRecord> records;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw DataError(strf("%s:%zu: expected 3 tab-separated fields", path.c_str(), lineno));
        CorpusRecord r;
        r.image = line.substr(0, t1);
        r.keywords = line.substr(t1 + 1, t2 - t1 - 1);
        r.description = line.substr(t2 + 1);
        if (!r.image.empty() && !std::filesystem::path(r.image).is_absolute())
            r.image = (base / r.image).string();
        records.push_back(std::move(r));
    }
    return records;
}

inline void write_corpus_tsv(const std::string& path, const std::vector<CorpusRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write corpus file: " + path);
    for (const auto& r : records)
        out << r.image << '\t' << r.keywords << '\t' << r.description << '\n';
}

// Record after text preprocessing; token lists, not yet vocabulary ids.
struct PreprocessedRecord {
    std::string image;
    std::vector<std::string> keyword_tokens;   // with [SEP] separators
    std::vector<std::string> description_tokens;
};

struct PreprocessReport {
    idx kept = 0;
    idx clipped = 0;
    idx dropped = 0;
    std::vector<std::string> skipped_lines;  // one line per dropped record

    std::string to_text() const {
        std::string out = strf("kept=%lld clipped=%lld dropped=%lld\n",
                               static_cast<long long>(kept), static_cast<long long>(clipped),
                               static_cast<long long>(dropped));
        for (const auto& l : skipped_lines) out += l + "\n";
        return out;
    }
};

// Descriptions longer than max_len are clipped, shorter than min_len dropped.
inline std::vector<PreprocessedRecord> preprocess_records(const std::vector<CorpusRecord>& records,
                                                          idx min_len, idx max_len,
                                                          PreprocessReport* report = nullptr) {
    std::vector<PreprocessedRecord> out;
    out.reserve(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        PreprocessedRecord p;
        p.image = records[i].image;
        p.keyword_tokens = keywords_to_sequence(records[i].keywords);
        p.description_tokens = normalize_text(records[i].description);
        if (static_cast<idx>(p.description_tokens.size()) < min_len) {
            if (report) {
                report->dropped += 1;
                report->skipped_lines.push_back(
                    strf("record %zu: description length %zu below minimum %lld", i,
                         p.description_tokens.size(), static_cast<long long>(min_len)));
            }
            continue;
        }
        if (static_cast<idx>(p.description_tokens.size()) > max_len) {
            p.description_tokens.resize(static_cast<size_t>(max_len));
            if (report) report->clipped += 1;
        }
        if (report) report->kept += 1;
        out.push_back(std::move(p));
    }
    return out;
}

struct SplitSpec {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
    std::uint64_t seed = 0;
};

template <class Record>
struct DatasetSplits {
    std::vector<Record> train, val, test;
};

// Deterministic shuffle, then contiguous slices at the floors of the
// cumulative fractions (15709 at 60/20/20 gives 9425/3142/3142).
template <class Record>
DatasetSplits<Record> split_dataset(const std::vector<Record>& records, const SplitSpec& spec) {
    if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
        throw ContractError(strf("split fractions must sum to 1, got %g/%g/%g", spec.train,
                                 spec.val, spec.test));
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n = static_cast<double>(records.size());
    const size_t b1 = static_cast<size_t>(n * spec.train);
    const size_t b2 = static_cast<size_t>(n * (spec.train + spec.val));
    DatasetSplits<Record> out;
    for (size_t i = 0; i < order.size(); ++i) {
        const Record& r = records[order[i]];
        if (i < b1)
            out.train.push_back(r);
        else if (i < b2)
            out.val.push_back(r);
        else
            out.test.push_back(r);
    }
    return out;
}

// Record with vocabulary ids applied, ready for batching. The raw
// description tokens ride along so metric references never see UNK.
struct EncodedRecord {
    std::string image;
    std::vector<idx> keyword_ids;
    std::vector<idx> description_ids;
    std::vector<std::string> description_tokens;
};

inline std::vector<EncodedRecord> encode_records(const std::vector<PreprocessedRecord>& records,
                                                 const Vocabulary& vocab) {
    std::vector<EncodedRecord> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back({r.image, vocab.encode(r.keyword_tokens), vocab.encode(r.description_tokens),
                       r.description_tokens});
    return out;
}

// One padded batch. Decoder input is BOS + description, target is
// description + EOS; both padded to the batch max with PAD (excluded from
// the loss). Pad masks use 1 = padding.
struct Batch {
    std::vector<size_t> record_indices;
    idx keyword_len = 0;
    idx target_len = 0;
    std::vector<std::vector<idx>> keyword_ids;
    std::vector<std::vector<std::uint8_t>> keyword_pad;
    std::vector<std::vector<idx>> decoder_input;
    std::vector<std::vector<idx>> decoder_target;
};

// Epoch-shuffled fixed-size batching over encoded records; the shuffle for
// epoch e is seeded by (seed, e) so iteration order is reproducible.
class BatchIterator {
public:
    BatchIterator(const std::vector<EncodedRecord>* records, idx batch_size, std::uint64_t seed)
        : records_(records), batch_size_(batch_size), seed_(seed) {
        if (records_ == nullptr || records_->empty())
            throw ContractError("batch iterator needs a nonempty split");
        if (batch_size_ <= 0) throw ContractError("batch size must be positive");
    }

    std::vector<Batch> epoch(idx epoch_index) const {
        std::vector<size_t> order(records_->size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 rng(mix64(seed_, static_cast<std::uint64_t>(epoch_index)));
        std::shuffle(order.begin(), order.end(), rng);

        std::vector<Batch> batches;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size_)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size_));
            Batch b;
            for (size_t i = start; i < end; ++i) b.record_indices.push_back(order[i]);
            for (size_t ri : b.record_indices) {
                const auto& r = (*records_)[ri];
                b.keyword_len = std::max(b.keyword_len, static_cast<idx>(r.keyword_ids.size()));
                b.target_len = std::max(b.target_len, static_cast<idx>(r.description_ids.size()) + 1);
            }
            b.keyword_len = std::max<idx>(b.keyword_len, 1);
            for (size_t ri : b.record_indices) {
                const auto& r = (*records_)[ri];
                std::vector<idx> kw(static_cast<size_t>(b.keyword_len), Vocabulary::kPad);
                std::vector<std::uint8_t> pad(static_cast<size_t>(b.keyword_len), 1);
                for (size_t j = 0; j < r.keyword_ids.size(); ++j) {
                    kw[j] = r.keyword_ids[j];
                    pad[j] = 0;
                }
                std::vector<idx> din(static_cast<size_t>(b.target_len), Vocabulary::kPad);
                std::vector<idx> dtg(static_cast<size_t>(b.target_len), Vocabulary::kPad);
                din[0] = Vocabulary::kBos;
                for (size_t j = 0; j < r.description_ids.size(); ++j) {
                    din[j + 1] = r.description_ids[j];
                    dtg[j] = r.description_ids[j];
                }
                dtg[r.description_ids.size()] = Vocabulary::kEos;
                b.keyword_ids.push_back(std::move(kw));
                b.keyword_pad.push_back(std::move(pad));
                b.decoder_input.push_back(std::move(din));
                b.decoder_target.push_back(std::move(dtg));
            }
            batches.push_back(std::move(b));
        }
        return batches;
    }

private:
    const std::vector<EncodedRecord>* records_;
    idx batch_size_;
    std::uint64_t seed_;
};

}  // namespace m3t
