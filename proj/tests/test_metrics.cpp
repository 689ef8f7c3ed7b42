#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "m3t/metrics.hpp"

using m3t::idx;
using m3t::TokenSeq;

// ---------------------------------------------------------------------------
// Independent brute-force re-implementations, structured differently from
// the library (vector-of-tokens n-gram keys, full DP tables, no shared
// helpers). Expected values below were frozen from this oracle.

namespace oracle {

using Gram = std::vector<std::string>;

std::map<Gram, idx> grams(const TokenSeq& s, idx n) {
    std::map<Gram, idx> out;
    for (idx i = 0; i + n <= static_cast<idx>(s.size()); ++i)
        ++out[Gram(s.begin() + i, s.begin() + i + n)];
    return out;
}

double bleu(const std::vector<TokenSeq>& cands, const std::vector<TokenSeq>& refs, idx order) {
    double clen = 0, rlen = 0, logp = 0;
    for (idx k = 1; k <= order; ++k) {
        double num = 0, den = 0;
        for (size_t i = 0; i < cands.size(); ++i) {
            auto cg = grams(cands[i], k);
            auto rg = grams(refs[i], k);
            for (auto& [g, c] : cg) {
                auto it = rg.find(g);
                num += std::min<double>(static_cast<double>(c),
                                        it == rg.end() ? 0.0 : static_cast<double>(it->second));
            }
            den += std::max<double>(0.0, static_cast<double>(cands[i].size()) - static_cast<double>(k) + 1.0);
        }
        if (den == 0 || num == 0) return 0.0;
        logp += std::log(num / den) / static_cast<double>(order);
    }
    for (size_t i = 0; i < cands.size(); ++i) {
        clen += static_cast<double>(cands[i].size());
        rlen += static_cast<double>(refs[i].size());
    }
    if (clen == 0) return 0.0;
    return (clen >= rlen ? 1.0 : std::exp(1.0 - rlen / clen)) * std::exp(logp);
}

double lcs(const TokenSeq& a, const TokenSeq& b) {
    std::vector<std::vector<idx>> dp(a.size() + 1, std::vector<idx>(b.size() + 1, 0));
    for (size_t i = 1; i <= a.size(); ++i)
        for (size_t j = 1; j <= b.size(); ++j)
            dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1
                                            : std::max(dp[i - 1][j], dp[i][j - 1]);
    return static_cast<double>(dp[a.size()][b.size()]);
}

double rouge(const std::vector<TokenSeq>& cands, const std::vector<TokenSeq>& refs) {
    const double b2 = 1.2 * 1.2;
    double total = 0;
    for (size_t i = 0; i < cands.size(); ++i) {
        if (cands[i].empty() || refs[i].empty()) continue;
        const double l = lcs(cands[i], refs[i]);
        if (l == 0) continue;
        const double p = l / static_cast<double>(cands[i].size());
        const double r = l / static_cast<double>(refs[i].size());
        total += (1 + b2) * p * r / (r + b2 * p);
    }
    return total / static_cast<double>(cands.size());
}

double cider(const std::vector<TokenSeq>& cands, const std::vector<TokenSeq>& refs) {
    const double N = static_cast<double>(refs.size());
    double score = 0;
    for (size_t i = 0; i < cands.size(); ++i) {
        double pair = 0;
        for (idx n = 1; n <= 4; ++n) {
            auto cg = grams(cands[i], n);
            auto rg = grams(refs[i], n);
            const double ct = std::max<double>(0.0, static_cast<double>(cands[i].size()) - static_cast<double>(n) + 1.0);
            const double rt = std::max<double>(0.0, static_cast<double>(refs[i].size()) - static_cast<double>(n) + 1.0);
            if (ct == 0 || rt == 0) continue;
            auto idf_of = [&](const Gram& g) {
                double df = 0;
                for (const auto& ref : refs)
                    if (grams(ref, n).count(g)) df += 1;
                return std::log(N / std::max(1.0, df));
            };
            double dot = 0, cn = 0, rn = 0;
            for (auto& [g, c] : cg) {
                const double w = static_cast<double>(c) / ct * idf_of(g);
                cn += w * w;
                auto it = rg.find(g);
                if (it != rg.end())
                    dot += w * (static_cast<double>(it->second) / rt * idf_of(g));
            }
            for (auto& [g, c] : rg) {
                const double w = static_cast<double>(c) / rt * idf_of(g);
                rn += w * w;
            }
            if (cn > 0 && rn > 0) pair += dot / (std::sqrt(cn) * std::sqrt(rn));
        }
        score += pair / 4.0;
    }
    return 10.0 * score / N;
}

}  // namespace oracle

namespace {

TokenSeq toks(std::initializer_list<const char*> list) { return TokenSeq(list.begin(), list.end()); }

// random corpora over a small shared lexicon so n-gram overlap is common
void random_corpus(std::uint64_t seed, std::vector<TokenSeq>& cands, std::vector<TokenSeq>& refs) {
    static const std::vector<std::string> lex{"the",  "a",     "lesion", "macula", "dot",
                                              "ring", "small", "large",  "bright", "near"};
    std::mt19937_64 rng(seed);
    const size_t pairs = 2 + rng() % 5;
    cands.clear();
    refs.clear();
    for (size_t i = 0; i < pairs; ++i) {
        TokenSeq c, r;
        const size_t cl = 1 + rng() % 9, rl = 1 + rng() % 9;
        for (size_t j = 0; j < cl; ++j) c.push_back(lex[rng() % lex.size()]);
        for (size_t j = 0; j < rl; ++j) r.push_back(lex[rng() % lex.size()]);
        cands.push_back(c);
        refs.push_back(r);
    }
}

}  // namespace

TEST(Bleu, PerfectMatchIsExactlyOne) {
    std::vector<TokenSeq> c{toks({"a", "b", "c", "d"}), toks({"x", "y", "z", "w"})};
    for (idx n = 1; n <= 4; ++n) EXPECT_DOUBLE_EQ(m3t::bleu(c, c, n), 1.0);
}

TEST(Bleu, ZeroOverlapIsZeroWithoutSmoothing) {
    std::vector<TokenSeq> c{toks({"a", "b"})};
    std::vector<TokenSeq> r{toks({"x", "y"})};
    EXPECT_DOUBLE_EQ(m3t::bleu(c, r, 1), 0.0);
}

// "the cat sat" vs "the cat sat on the mat": all precisions are 1 up to
// order 3, brevity penalty exp(1 - 6/3) = e^-1; no 4-grams exist.
TEST(Bleu, GoldenSinglePair) {
    std::vector<TokenSeq> c{toks({"the", "cat", "sat"})};
    std::vector<TokenSeq> r{toks({"the", "cat", "sat", "on", "the", "mat"})};
    EXPECT_NEAR(m3t::bleu(c, r, 1), 0.36787944117144233, 1e-15);
    EXPECT_NEAR(m3t::bleu(c, r, 2), 0.36787944117144233, 1e-15);
    EXPECT_NEAR(m3t::bleu(c, r, 3), 0.36787944117144233, 1e-15);
    EXPECT_DOUBLE_EQ(m3t::bleu(c, r, 4), 0.0);
}

TEST(Bleu, GoldenToyCorpus) {
    std::vector<TokenSeq> cands{
        toks({"the", "small", "dot", "lesion"}),
        toks({"a", "ring", "near", "the", "fovea"}),
        toks({"bright", "patch", "in", "the", "macula"}),
    };
    std::vector<TokenSeq> refs{
        toks({"the", "small", "dot", "lesion", "near", "the", "disc"}),
        toks({"a", "large", "ring", "near", "the", "fovea"}),
        toks({"dark", "streak", "across", "the", "macula"}),
    };
    EXPECT_NEAR(m3t::bleu(cands, refs, 1), 0.5904464445591532, 1e-12);
    EXPECT_NEAR(m3t::bleu(cands, refs, 2), 0.5313746898412451, 1e-12);
    EXPECT_NEAR(m3t::bleu(cands, refs, 3), 0.47340103003178574, 1e-12);
    EXPECT_NEAR(m3t::bleu(cands, refs, 4), 0.4225867368384126, 1e-12);
    EXPECT_NEAR(m3t::rouge_l(cands, refs), 0.6625366568914955, 1e-12);
    EXPECT_NEAR(m3t::cider(cands, refs), 4.748199463820929, 1e-12);
}

TEST(Bleu, EmptyCorpusIsAnError) {
    std::vector<TokenSeq> none;
    EXPECT_THROW(m3t::bleu(none, none, 1), m3t::ContractError);
    EXPECT_THROW(m3t::rouge_l(none, none), m3t::ContractError);
}

TEST(Bleu, SmoothingOnlyTouchesZeroNumerators) {
    std::vector<TokenSeq> c{toks({"a", "b", "c"})};
    std::vector<TokenSeq> r{toks({"a", "x", "c"})};
    // bigram overlap is zero, so the default is 0 and smoothing is not
    EXPECT_DOUBLE_EQ(m3t::bleu(c, r, 2), 0.0);
    EXPECT_GT(m3t::bleu(c, r, 2, /*smooth=*/true), 0.0);
    // smoothing leaves nonzero precisions alone
    EXPECT_DOUBLE_EQ(m3t::bleu(c, r, 1, true), m3t::bleu(c, r, 1, false));
}

TEST(RougeL, GoldenCases) {
    EXPECT_DOUBLE_EQ(m3t::rouge_l({toks({"a", "b"})}, {toks({"a", "b"})}), 1.0);
    EXPECT_DOUBLE_EQ(m3t::rouge_l({toks({"a", "b"})}, {toks({"x", "y"})}), 0.0);
    // LCS of (a b c d) and (a c d b) is "a c d" of length 3; P = R = 3/4
    EXPECT_NEAR(m3t::rouge_l({toks({"a", "b", "c", "d"})}, {toks({"a", "c", "d", "b"})}), 0.75,
                1e-15);
    EXPECT_NEAR(m3t::rouge_l({toks({"a", "b", "c", "d", "e"})}, {toks({"a", "c", "d", "b"})}),
                0.6802973977695167, 1e-15);
}

TEST(Cider, IdenticalCandidatesScoreMaximalAndPositive) {
    std::vector<TokenSeq> refs{
        toks({"the", "dot", "lesion"}),
        toks({"a", "bright", "ring"}),
        toks({"dark", "macula", "patch"}),
    };
    const double self_score = m3t::cider(refs, refs);
    EXPECT_GT(self_score, 0.0);
    std::vector<TokenSeq> off{refs[1], refs[2], refs[0]};  // mismatched candidates
    EXPECT_LT(m3t::cider(off, refs), self_score);
}

TEST(Cider, DisjointCandidateContributesZero) {
    std::vector<TokenSeq> refs{toks({"a", "b", "c"}), toks({"d", "e", "f"})};
    std::vector<TokenSeq> cands{toks({"x", "y", "z"}), toks({"d", "e", "f"})};
    std::vector<TokenSeq> perfect{toks({"a", "b", "c"}), toks({"d", "e", "f"})};
    const double partial = m3t::cider(cands, refs);
    const double full = m3t::cider(perfect, refs);
    EXPECT_NEAR(partial, full / 2.0, 1e-12);  // first pair contributes exactly 0
}

TEST(Cider, NeedsAtLeastTwoPairs) {
    std::vector<TokenSeq> one{toks({"a"})};
    EXPECT_THROW(m3t::cider(one, one), m3t::ContractError);
}

TEST(Metrics, MatchOraclesOnRandomCorpora) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::vector<TokenSeq> cands, refs;
        random_corpus(seed, cands, refs);
        for (idx n = 1; n <= 4; ++n)
            EXPECT_NEAR(m3t::bleu(cands, refs, n), oracle::bleu(cands, refs, n), 1e-9)
                << "bleu@" << n << " seed " << seed;
        EXPECT_NEAR(m3t::rouge_l(cands, refs), oracle::rouge(cands, refs), 1e-9) << seed;
        EXPECT_NEAR(m3t::cider(cands, refs), oracle::cider(cands, refs), 1e-9) << seed;
    }
}

TEST(Metrics, BleuMonotoneInOrderAndOrderInvariantOverPairs) {
    for (std::uint64_t seed = 100; seed < 150; ++seed) {
        std::vector<TokenSeq> cands, refs;
        random_corpus(seed, cands, refs);
        double prev = 2.0;
        for (idx n = 1; n <= 4; ++n) {
            const double b = m3t::bleu(cands, refs, n);
            EXPECT_LE(b, prev + 1e-12) << "seed " << seed << " order " << n;
            EXPECT_GE(b, 0.0);
            EXPECT_LE(b, 1.0);
            prev = b;
        }
        // permuting the (candidate, reference) pairs changes nothing
        std::vector<size_t> perm(cands.size());
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::mt19937_64 rng(seed * 7 + 1);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<TokenSeq> pc, pr;
        for (size_t i : perm) {
            pc.push_back(cands[i]);
            pr.push_back(refs[i]);
        }
        EXPECT_NEAR(m3t::bleu(pc, pr, 4), m3t::bleu(cands, refs, 4), 1e-12);
        EXPECT_NEAR(m3t::rouge_l(pc, pr), m3t::rouge_l(cands, refs), 1e-12);
        if (cands.size() >= 2) {
            EXPECT_NEAR(m3t::cider(pc, pr), m3t::cider(cands, refs), 1e-9);
        }
        EXPECT_GE(m3t::rouge_l(cands, refs), 0.0);
        EXPECT_LE(m3t::rouge_l(cands, refs), 1.0);
        EXPECT_GE(m3t::cider(cands, refs), 0.0);
    }
}

TEST(Metrics, ReportSerializesBothWays) {
    std::vector<TokenSeq> c{toks({"a", "b", "c", "d", "e"}), toks({"a", "b", "x", "y", "z"})};
    m3t::MetricReport rep = m3t::evaluate_corpus(c, c);
    EXPECT_DOUBLE_EQ(rep.bleu4, 1.0);
    const std::string kv = rep.to_kv_text();
    EXPECT_NE(kv.find("bleu4=1.0"), std::string::npos);
    EXPECT_NE(kv.find("cider="), std::string::npos);
    const std::string js = rep.to_json();
    EXPECT_EQ(js.front(), '{');
    EXPECT_NE(js.find("\"rouge_l\""), std::string::npos);
}

TEST(Metrics, SentenceAveragedVariantAgreesOnSinglePair) {
    std::vector<TokenSeq> c{toks({"a", "b", "c"})};
    std::vector<TokenSeq> r{toks({"a", "b", "c", "d"})};
    EXPECT_NEAR(m3t::bleu_sentence_averaged(c, r, 2), m3t::bleu(c, r, 2), 1e-15);
}
