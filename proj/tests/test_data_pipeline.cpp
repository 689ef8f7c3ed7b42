#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "m3t/config.hpp"
#include "m3t/corpus.hpp"
#include "m3t/synthetic.hpp"
#include "m3t/text.hpp"
#include "m3t/vocab.hpp"

namespace fs = std::filesystem;
using m3t::idx;

namespace {

std::vector<std::string> words(std::initializer_list<const char*> list) {
    return {list.begin(), list.end()};
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("m3t_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(NormalizeText, StripsPunctuationAndCase) {
    EXPECT_EQ(m3t::normalize_text("Age-related Macular Degeneration (AMD)"),
              words({"age", "related", "macular", "degeneration", "amd"}));
    EXPECT_EQ(m3t::normalize_text(""), std::vector<std::string>{});
    EXPECT_EQ(m3t::normalize_text("OCT,  78-year-old!"), words({"oct", "year", "old"}));
}

TEST(NormalizeText, IsIdempotent) {
    std::mt19937_64 rng(1);
    const std::string charset = "abcXYZ 0123,.-()[]!";
    for (int trial = 0; trial < 50; ++trial) {
        std::string s;
        for (int i = 0; i < 40; ++i) s.push_back(charset[rng() % charset.size()]);
        auto once = m3t::normalize_text(s);
        auto twice = m3t::normalize_text(m3t::join_tokens(once));
        EXPECT_EQ(once, twice);
    }
}

TEST(KeywordsToSequence, InsertsSepBetweenGroups) {
    EXPECT_EQ(m3t::keywords_to_sequence("autofluorescence imaging, AMD"),
              words({"autofluorescence", "imaging", "[SEP]", "amd"}));
    EXPECT_EQ(m3t::keywords_to_sequence("diabetic retinopathy"),
              words({"diabetic", "retinopathy"}));
    EXPECT_EQ(m3t::keywords_to_sequence(",,"), std::vector<std::string>{});
    EXPECT_EQ(m3t::keywords_to_sequence(", amd, , oct,"),
              words({"amd", "[SEP]", "oct"}));
}

TEST(Vocabulary, ReservedIdsAreFixed) {
    m3t::Vocabulary v;
    EXPECT_EQ(v.id_of("[PAD]"), m3t::Vocabulary::kPad);
    EXPECT_EQ(v.id_of("[UNK]"), m3t::Vocabulary::kUnk);
    EXPECT_EQ(v.id_of("[BOS]"), m3t::Vocabulary::kBos);
    EXPECT_EQ(v.id_of("[EOS]"), m3t::Vocabulary::kEos);
    EXPECT_EQ(v.id_of("[SEP]"), m3t::Vocabulary::kSep);
    EXPECT_EQ(v.size(), m3t::Vocabulary::kReserved);
    EXPECT_EQ(v.id_of("unseen"), m3t::Vocabulary::kUnk);
}

TEST(BuildVocab, SingleRepeatedToken) {
    auto v = m3t::build_vocab({words({"x", "x", "x"})}, 100, 2);
    EXPECT_EQ(v.size(), m3t::Vocabulary::kReserved + 1);
    EXPECT_EQ(v.id_of("x"), m3t::Vocabulary::kReserved);
}

TEST(BuildVocab, LexicographicTieBreakIsDeterministic) {
    auto v1 = m3t::build_vocab({words({"banana", "apple", "cherry", "banana", "apple", "cherry"})},
                               100, 1);
    auto v2 = m3t::build_vocab({words({"cherry", "banana", "apple", "apple", "cherry", "banana"})},
                               100, 1);
    // equal frequencies resolve alphabetically regardless of stream order
    EXPECT_EQ(v1.id_of("apple"), 5);
    EXPECT_EQ(v1.id_of("banana"), 6);
    EXPECT_EQ(v1.id_of("cherry"), 7);
    EXPECT_EQ(v2.id_of("apple"), 5);
    EXPECT_EQ(v2.id_of("banana"), 6);
    EXPECT_EQ(v2.id_of("cherry"), 7);
}

// Independent oracle: stable sort of (count desc, token asc) pairs computed
// with a plain map, then sequential id assignment.
TEST(BuildVocab, MatchesSortBasedOracleOnRandomCorpus) {
    std::mt19937_64 rng(7);
    std::vector<std::vector<std::string>> streams;
    std::map<std::string, idx> counts;
    for (int r = 0; r < 100; ++r) {
        std::vector<std::string> rec;
        const int len = 3 + static_cast<int>(rng() % 8);
        for (int i = 0; i < len; ++i) {
            std::string tok(1, static_cast<char>('a' + rng() % 26));
            tok += static_cast<char>('a' + rng() % 3);
            rec.push_back(tok);
            ++counts[tok];
        }
        streams.push_back(rec);
    }
    const idx cap = 40, min_freq = 2;
    auto v = m3t::build_vocab(streams, cap, min_freq);

    std::vector<std::pair<std::string, idx>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    idx next = m3t::Vocabulary::kReserved;
    for (const auto& [tok, count] : ranked) {
        if (count >= min_freq && next < cap) {
            ASSERT_EQ(v.id_of(tok), next) << tok;
            ++next;
        } else {
            ASSERT_EQ(v.id_of(tok), m3t::Vocabulary::kUnk) << tok;
        }
    }
    EXPECT_EQ(v.size(), next);
}

TEST(BuildVocab, UnkRateMatchesDirectCount) {
    std::mt19937_64 rng(11);
    std::vector<std::vector<std::string>> streams;
    for (int r = 0; r < 50; ++r) {
        std::vector<std::string> rec;
        for (int i = 0; i < 10; ++i) rec.push_back(std::string(1, static_cast<char>('a' + rng() % 20)));
        streams.push_back(rec);
    }
    auto v = m3t::build_vocab(streams, 12, 2);
    idx total = 0, unk = 0;
    for (const auto& s : streams)
        for (const auto& t : s) {
            ++total;
            if (v.id_of(t) == m3t::Vocabulary::kUnk) ++unk;
        }
    EXPECT_NEAR(v.unk_rate(), static_cast<double>(unk) / static_cast<double>(total), 1e-12);
}

TEST(SplitDataset, PaperScaleCountsComeOutExact) {
    std::vector<int> records(15709);
    auto splits = m3t::split_dataset(records, {0.6, 0.2, 0.2, 1});
    EXPECT_EQ(splits.train.size(), 9425u);
    EXPECT_EQ(splits.val.size(), 3142u);
    EXPECT_EQ(splits.test.size(), 3142u);
}

TEST(SplitDataset, SmallCorpusAndDeterminism) {
    std::vector<int> records(10);
    for (int i = 0; i < 10; ++i) records[static_cast<size_t>(i)] = i;
    auto s1 = m3t::split_dataset(records, {0.6, 0.2, 0.2, 5});
    auto s2 = m3t::split_dataset(records, {0.6, 0.2, 0.2, 5});
    auto s3 = m3t::split_dataset(records, {0.6, 0.2, 0.2, 6});
    EXPECT_EQ(s1.train.size(), 6u);
    EXPECT_EQ(s1.val.size(), 2u);
    EXPECT_EQ(s1.test.size(), 2u);
    EXPECT_EQ(s1.train, s2.train);
    EXPECT_EQ(s1.val, s2.val);
    EXPECT_NE(s1.train, s3.train);

    std::set<int> all;
    for (int v : s1.train) all.insert(v);
    for (int v : s1.val) all.insert(v);
    for (int v : s1.test) all.insert(v);
    EXPECT_EQ(all.size(), 10u);  // disjoint and complete
}

TEST(SplitDataset, RejectsBadFractions) {
    std::vector<int> records(4);
    EXPECT_THROW(m3t::split_dataset(records, {0.5, 0.2, 0.2, 1}), m3t::ContractError);
}

TEST(Preprocess, ClipsLongAndDropsShortDescriptions) {
    std::vector<m3t::CorpusRecord> recs{
        {"a.pgm", "kw", "one two three four five six"},
        {"b.pgm", "kw", "too short"},
        {"c.pgm", "kw", "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10"},
    };
    m3t::PreprocessReport report;
    auto out = m3t::preprocess_records(recs, 5, 8, &report);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(report.kept, 2);
    EXPECT_EQ(report.dropped, 1);
    EXPECT_EQ(report.clipped, 1);
    EXPECT_EQ(out[1].description_tokens.size(), 8u);
    EXPECT_NE(report.to_text().find("record 1"), std::string::npos);
}

TEST(CorpusTsv, RoundTripsAndResolvesRelativePaths) {
    TempDir tmp;
    std::vector<m3t::CorpusRecord> recs{
        {"images/x.pgm", "amd, oct", "a description here"},
        {"/abs/y.pgm", "keyword", "another line"},
    };
    const std::string path = (tmp.path / "corpus.tsv").string();
    m3t::write_corpus_tsv(path, recs);
    auto loaded = m3t::read_corpus_tsv(path);
    ASSERT_EQ(loaded.size(), 2u);
    EXPECT_EQ(loaded[0].image, (tmp.path / "images/x.pgm").string());
    EXPECT_EQ(loaded[1].image, "/abs/y.pgm");
    EXPECT_EQ(loaded[0].keywords, "amd, oct");
    EXPECT_EQ(loaded[1].description, "another line");
}

TEST(CorpusTsv, RejectsMalformedLines) {
    TempDir tmp;
    const std::string path = (tmp.path / "bad.tsv").string();
    std::ofstream(path) << "only two\tfields\n";
    EXPECT_THROW(m3t::read_corpus_tsv(path), m3t::DataError);
}

TEST(BatchIterator, PadsAndAlignsTeacherForcing) {
    std::vector<m3t::EncodedRecord> recs{
        {"a", {7, 8}, {10, 11, 12}},
        {"b", {9}, {13}},
        {"c", {7, 8, 9}, {14, 15}},
    };
    m3t::BatchIterator it(&recs, 2, /*seed=*/3);
    auto batches = it.epoch(0);
    ASSERT_EQ(batches.size(), 2u);
    size_t seen = 0;
    for (const auto& b : batches) {
        for (size_t i = 0; i < b.record_indices.size(); ++i) {
            ++seen;
            const auto& r = recs[b.record_indices[i]];
            EXPECT_EQ(b.decoder_input[i][0], m3t::Vocabulary::kBos);
            for (size_t j = 0; j < r.description_ids.size(); ++j) {
                EXPECT_EQ(b.decoder_input[i][j + 1], r.description_ids[j]);
                EXPECT_EQ(b.decoder_target[i][j], r.description_ids[j]);
            }
            EXPECT_EQ(b.decoder_target[i][r.description_ids.size()], m3t::Vocabulary::kEos);
            for (size_t j = 0; j < b.keyword_ids[i].size(); ++j) {
                if (j < r.keyword_ids.size()) {
                    EXPECT_EQ(b.keyword_ids[i][j], r.keyword_ids[j]);
                    EXPECT_EQ(b.keyword_pad[i][j], 0);
                } else {
                    EXPECT_EQ(b.keyword_ids[i][j], m3t::Vocabulary::kPad);
                    EXPECT_EQ(b.keyword_pad[i][j], 1);
                }
            }
        }
    }
    EXPECT_EQ(seen, 3u);

    auto again = it.epoch(0);
    ASSERT_EQ(again.size(), batches.size());
    for (size_t i = 0; i < batches.size(); ++i)
        EXPECT_EQ(again[i].record_indices, batches[i].record_indices);
    auto other = it.epoch(1);
    bool same_order = true;
    for (size_t i = 0; i < batches.size() && same_order; ++i)
        same_order = other[i].record_indices == batches[i].record_indices;
    EXPECT_FALSE(same_order);
}

TEST(Synthetic, RegenerationIsByteIdentical) {
    TempDir tmp;
    auto recs1 = m3t::generate_synthetic_corpus(6, 99, 32);
    auto recs2 = m3t::generate_synthetic_corpus(6, 99, 32);
    const std::string t1 = m3t::write_synthetic_corpus((tmp.path / "one").string(), recs1);
    const std::string t2 = m3t::write_synthetic_corpus((tmp.path / "two").string(), recs2);
    EXPECT_EQ(slurp(t1), slurp(t2));
    for (int i = 0; i < 6; ++i) {
        const std::string img = m3t::strf("images/img_%05d.pgm", i);
        EXPECT_EQ(slurp(tmp.path / "one" / img), slurp(tmp.path / "two" / img));
    }
    auto other = m3t::generate_synthetic_corpus(6, 100, 32);
    bool differs = false;
    for (size_t i = 0; i < other.size(); ++i)
        if (other[i].meta.description != recs1[i].meta.description) {
            differs = true;
            break;
        }
    EXPECT_TRUE(differs);
}

TEST(Synthetic, DescriptionsAreTemplatedFromKeywords) {
    auto recs = m3t::generate_synthetic_corpus(40, 5, 32);
    for (const auto& r : recs) {
        auto desc = m3t::normalize_text(r.meta.description);
        EXPECT_GE(desc.size(), 5u);
        EXPECT_LE(desc.size(), 50u);
        auto kw = m3t::keywords_to_sequence(r.meta.keywords);
        // every content attribute named in the description appears in the keywords
        std::set<std::string> kwset(kw.begin(), kw.end());
        int hits = 0;
        for (const auto& t : desc)
            if (kwset.count(t)) ++hits;
        EXPECT_GE(hits, 4) << r.meta.description << " / " << r.meta.keywords;
    }
}

TEST(Config, RoundTripAndProfiles) {
    m3t::ModelConfig desk = m3t::ModelConfig::desk();
    desk.validate();
    m3t::ModelConfig full = m3t::ModelConfig::full();
    full.validate();
    EXPECT_EQ(full.image_size, 356);
    EXPECT_EQ(full.backbone_channels.back(), 1280);
    EXPECT_EQ(full.vocab_cap, 5000);
    EXPECT_DOUBLE_EQ(full.lr, 0.004);
    EXPECT_EQ(full.batch_size, 64);
    EXPECT_DOUBLE_EQ(full.dropout, 0.2);
    EXPECT_EQ(full.d_emb, 300);
    EXPECT_EQ(full.max_desc_len, 50);

    full.seed = 1234;
    full.keyword_attention = false;
    auto back = m3t::ModelConfig::deserialize(full.serialize());
    EXPECT_EQ(back.serialize(), full.serialize());
    EXPECT_EQ(back.seed, 1234u);
    EXPECT_FALSE(back.keyword_attention);
}

TEST(Config, RejectsAblationRowsOutsideTheStudy) {
    m3t::ModelConfig c;
    c.visual_attention = false;
    c.keywords = true;
    c.keyword_attention = false;
    EXPECT_THROW(c.validate(), m3t::DataError);
    c.visual_attention = true;
    c.keywords = false;
    c.keyword_attention = true;
    EXPECT_THROW(c.validate(), m3t::DataError);
}

TEST(Config, RejectsIncompatibleDimensions) {
    m3t::ModelConfig c;
    c.d_model = 65;  // not divisible by heads=2
    EXPECT_THROW(c.validate(), m3t::DataError);
}
