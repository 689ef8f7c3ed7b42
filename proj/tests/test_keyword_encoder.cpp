#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "m3t/gradcheck.hpp"
#include "m3t/keyword_encoder.hpp"

using m3t::idx;
using m3t::Shape;
using Td = m3t::Tensor<double>;

namespace {

m3t::KeywordAttentionParams<double> make_params(idx vocab, idx d_emb, std::uint64_t seed,
                                                m3t::ParamSet<double>& set) {
    std::mt19937_64 rng(seed);
    return m3t::KeywordAttentionParams<double>::init(vocab, d_emb, rng, set, true);
}

}  // namespace

TEST(EmbedKeywords, RepeatedIdsShareRowsExactly) {
    m3t::ParamSet<double> set;
    auto p = make_params(10, 4, 1, set);
    Td e = m3t::embed_keywords<double>({3, 7, 3}, p.table);
    for (idx d = 0; d < 4; ++d) {
        EXPECT_DOUBLE_EQ(e.data()[0 * 4 + d], e.data()[2 * 4 + d]);
        EXPECT_DOUBLE_EQ(e.data()[0 * 4 + d], p.table.data()[3 * 4 + d]);
    }
}

TEST(EmbedKeywords, ZeroTableGivesZeroEmbeddings) {
    Td table = Td::zeros({6, 3});
    Td e = m3t::embed_keywords<double>({0, 5, 2}, table);
    for (idx i = 0; i < e.numel(); ++i) EXPECT_DOUBLE_EQ(e.data()[i], 0.0);
}

TEST(AlignScores, OrthonormalRowsGiveIdentity) {
    Td e({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Td s = m3t::align_scores(e);
    for (idx i = 0; i < 3; ++i)
        for (idx j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(s.data()[i * 3 + j], i == j ? 1.0 : 0.0);
}

TEST(AlignScores, EqualRowsGiveConstantMatrix) {
    Td e({3, 2}, {2, 3, 2, 3, 2, 3});
    Td s = m3t::align_scores(e);
    for (idx i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(s.data()[i], 13.0);
}

TEST(AlignScores, MatchesDoubleLoopBruteForce) {
    std::mt19937_64 rng(5);
    Td e = Td::uniform({4, 3}, -1.0, 1.0, rng);
    Td s = m3t::align_scores(e);
    for (idx a = 0; a < 4; ++a)
        for (idx b = 0; b < 4; ++b) {
            double want = 0;
            for (idx d = 0; d < 3; ++d) want += e.data()[a * 3 + d] * e.data()[b * 3 + d];
            EXPECT_NEAR(s.data()[a * 4 + b], want, 1e-6);
        }
}

TEST(KeywordAttention, SingleKeywordPassesThrough) {
    m3t::ParamSet<double> set;
    auto p = make_params(10, 4, 7, set);
    Td e = m3t::embed_keywords<double>({6}, p.table);
    Td out = m3t::keyword_attention(e, p);
    for (idx d = 0; d < 4; ++d) EXPECT_NEAR(out.data()[d], e.data()[d], 1e-12);
}

TEST(KeywordAttention, IdenticalRowsGetUniformWeights) {
    m3t::ParamSet<double> set;
    auto p = make_params(10, 4, 9, set);
    Td e = m3t::embed_keywords<double>({2, 2, 2}, p.table);
    Td out = m3t::keyword_attention(e, p);
    for (idx s = 0; s < 3; ++s)
        for (idx d = 0; d < 4; ++d) EXPECT_NEAR(out.data()[s * 4 + d], e.data()[d], 1e-9);
}

TEST(KeywordAttention, MatchesBruteForceSoftmaxWeightedSum) {
    m3t::ParamSet<double> set;
    auto p = make_params(12, 4, 11, set);
    // non-identity projection so the bilinear form actually matters
    std::mt19937_64 wrng(13);
    for (idx i = 0; i < p.w_ke.numel(); ++i)
        p.w_ke.data()[i] += 0.2 * (static_cast<double>(wrng() % 1000) / 1000.0 - 0.5);
    Td e = m3t::embed_keywords<double>({1, 5, 9}, p.table);
    Td out = m3t::keyword_attention(e, p);

    for (idx s = 0; s < 3; ++s) {
        // proj = e[s] . w_ke, scores over targets, softmax, weighted sum
        std::vector<double> proj(4, 0.0);
        for (idx d = 0; d < 4; ++d)
            for (idx k = 0; k < 4; ++k) proj[static_cast<size_t>(d)] += e.data()[s * 4 + k] * p.w_ke.data()[k * 4 + d];
        std::vector<double> scores(3, 0.0);
        for (idx t = 0; t < 3; ++t)
            for (idx d = 0; d < 4; ++d) scores[static_cast<size_t>(t)] += proj[static_cast<size_t>(d)] * e.data()[t * 4 + d];
        double mx = *std::max_element(scores.begin(), scores.end()), z = 0;
        for (double& v : scores) {
            v = std::exp(v - mx);
            z += v;
        }
        for (idx d = 0; d < 4; ++d) {
            double want = 0;
            for (idx t = 0; t < 3; ++t) want += scores[static_cast<size_t>(t)] / z * e.data()[t * 4 + d];
            EXPECT_NEAR(out.data()[s * 4 + d], want, 1e-6);
        }
    }
}

TEST(KeywordAttention, IdentityInitReproducesPlainDotProductScores) {
    m3t::ParamSet<double> set;
    auto p = make_params(10, 4, 15, set);
    Td e = m3t::embed_keywords<double>({1, 4, 8}, p.table);
    Td bilinear = m3t::matmul(m3t::matmul(e, p.w_ke), m3t::transpose(e));
    Td plain = m3t::align_scores(e);
    for (idx i = 0; i < 9; ++i) EXPECT_NEAR(bilinear.data()[i], plain.data()[i], 1e-12);
}

TEST(KeywordAttention, RowsAreConvexCombinations) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        m3t::ParamSet<double> set;
        auto p = make_params(16, 4, seed + 20, set);
        Td e = m3t::embed_keywords<double>({2, 7, 11, 13}, p.table);
        Td out = m3t::keyword_attention(e, p);
        // each output coordinate lies inside the min/max of input rows
        for (idx d = 0; d < 4; ++d) {
            double lo = 1e300, hi = -1e300;
            for (idx t = 0; t < 4; ++t) {
                lo = std::min(lo, e.data()[t * 4 + d]);
                hi = std::max(hi, e.data()[t * 4 + d]);
            }
            for (idx s = 0; s < 4; ++s) {
                EXPECT_GE(out.data()[s * 4 + d], lo - 1e-6);
                EXPECT_LE(out.data()[s * 4 + d], hi + 1e-6);
            }
        }
        // and the attention rows sum to one
        Td w = m3t::softmax(m3t::matmul(m3t::matmul(e, p.w_ke), m3t::transpose(e)), 1);
        for (idx s = 0; s < 4; ++s) {
            double sum = 0;
            for (idx t = 0; t < 4; ++t) sum += w.data()[s * 4 + t];
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
    }
}

TEST(KeywordAttention, PermutingKeywordsPermutesRowsIdentically) {
    m3t::ParamSet<double> set;
    auto p = make_params(16, 4, 33, set);
    const std::vector<idx> ids{3, 9, 12, 6};
    const std::vector<size_t> perm{2, 0, 3, 1};
    std::vector<idx> permuted;
    for (size_t i : perm) permuted.push_back(ids[i]);
    Td out = m3t::keyword_attention(m3t::embed_keywords<double>(ids, p.table), p);
    Td pout = m3t::keyword_attention(m3t::embed_keywords<double>(permuted, p.table), p);
    for (size_t s = 0; s < perm.size(); ++s)
        for (idx d = 0; d < 4; ++d)
            EXPECT_NEAR(pout.data()[static_cast<idx>(s) * 4 + d],
                        out.data()[static_cast<idx>(perm[s]) * 4 + d], 1e-9);
}

TEST(KeywordAttention, PadPositionsReceiveNoAttentionMass) {
    m3t::ParamSet<double> set;
    auto p = make_params(16, 4, 35, set);
    const std::vector<idx> ids{3, 9, 0, 0};  // two PAD slots
    const std::vector<std::uint8_t> pad{0, 0, 1, 1};
    Td e = m3t::embed_keywords<double>(ids, p.table);
    Td scores = m3t::matmul(m3t::matmul(e, p.w_ke), m3t::transpose(e));
    scores = m3t::masked_fill(scores, m3t::expand_key_pad_mask(pad, 4), -1e9);
    Td w = m3t::softmax(scores, 1);
    for (idx s = 0; s < 4; ++s) {
        EXPECT_NEAR(w.data()[s * 4 + 2], 0.0, 1e-12);
        EXPECT_NEAR(w.data()[s * 4 + 3], 0.0, 1e-12);
    }
    // masked attention equals attention over just the valid prefix
    Td valid = m3t::keyword_attention(m3t::embed_keywords<double>({3, 9}, p.table), p);
    Td masked = m3t::keyword_attention(e, p, pad);
    for (idx s = 0; s < 2; ++s)
        for (idx d = 0; d < 4; ++d)
            EXPECT_NEAR(masked.data()[s * 4 + d], valid.data()[s * 4 + d], 1e-9);
}

TEST(KeywordAttention, FullBlockPassesGradientCheck) {
    m3t::ParamSet<double> set;
    auto p = make_params(8, 4, 41, set);
    std::mt19937_64 rng(42);
    Td probe = Td::uniform({3, 4}, -1.0, 1.0, rng);
    const std::vector<idx> ids{1, 5, 2};
    auto f = [&] {
        Td e = m3t::embed_keywords<double>(ids, p.table);
        return m3t::sum(m3t::mul(m3t::keyword_attention(e, p), probe));
    };
    EXPECT_LT(m3t::finite_diff_check_params<double>(f, {p.table, p.w_ke}, 1e-3), 1e-4);
}

TEST(KeywordAttention, GradientDepositsOnLookedUpRowsOnly) {
    m3t::ParamSet<double> set;
    auto p = make_params(8, 3, 43, set);
    {
        m3t::Tape<double> tape;
        Td e = m3t::embed_keywords<double>({2, 5}, p.table);
        tape.backward(m3t::sum(e));
    }
    for (idx v = 0; v < 8; ++v)
        for (idx d = 0; d < 3; ++d) {
            const double want = (v == 2 || v == 5) ? 1.0 : 0.0;
            EXPECT_DOUBLE_EQ(p.table.grad()[static_cast<size_t>(v * 3 + d)], want);
        }
}
