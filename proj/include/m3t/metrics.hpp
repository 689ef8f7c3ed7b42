#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "m3t/common.hpp"

// Corpus-level captioning metrics over pre-tokenized sentences, one
// reference per candidate.

namespace m3t {

using TokenSeq = std::vector<std::string>;

namespace ngram {

// n-grams as joined strings; '\x1f' cannot appear in normalized tokens
inline std::map<std::string, idx> counts(const TokenSeq& s, idx n) {
    std::map<std::string, idx> out;
    if (static_cast<idx>(s.size()) < n) return out;
    for (size_t i = 0; i + static_cast<size_t>(n) <= s.size(); ++i) {
        std::string key = s[i];
        for (size_t j = 1; j < static_cast<size_t>(n); ++j) key += '\x1f' + s[i + j];
        ++out[key];
    }
    return out;
}

inline idx total(const TokenSeq& s, idx n) {
    return std::max<idx>(0, static_cast<idx>(s.size()) - n + 1);
}

}  // namespace ngram

// Corpus BLEU@n: clipped modified n-gram precision with uniform 1/n
// weights over orders 1..n and brevity penalty exp(1 - r/c) for c < r.
// With smoothing off a zero precision zeroes the score; the optional
// add-1 smoothing only touches zero numerators (tiny desk corpora).
inline double bleu(const std::vector<TokenSeq>& cands, const std::vector<TokenSeq>& refs, idx n,
                   bool smooth = false) {
    if (cands.empty()) throw ContractError("bleu: empty corpus is undefined");
    if (cands.size() != refs.size())
        throw ContractError(strf("bleu: %zu candidates vs %zu references", cands.size(), refs.size()));
    if (n < 1 || n > 4) throw ContractError("bleu: order must be 1..4");

    double cand_len = 0.0, ref_len = 0.0;
    std::vector<double> matched(static_cast<size_t>(n), 0.0);
    std::vector<double> total(static_cast<size_t>(n), 0.0);
    for (size_t i = 0; i < cands.size(); ++i) {
        cand_len += static_cast<double>(cands[i].size());
        ref_len += static_cast<double>(refs[i].size());
        for (idx k = 1; k <= n; ++k) {
            const auto cc = ngram::counts(cands[i], k);
            const auto rc = ngram::counts(refs[i], k);
            for (const auto& [gram, count] : cc) {
                auto it = rc.find(gram);
                if (it != rc.end())
                    matched[static_cast<size_t>(k - 1)] +=
                        static_cast<double>(std::min(count, it->second));
            }
            total[static_cast<size_t>(k - 1)] += static_cast<double>(ngram::total(cands[i], k));
        }
    }
    double log_prec = 0.0;
    for (idx k = 0; k < n; ++k) {
        double num = matched[static_cast<size_t>(k)];
        double den = total[static_cast<size_t>(k)];
        if (den == 0.0) return 0.0;  // no n-grams of this order at all
        if (num == 0.0) {
            if (!smooth) return 0.0;
            num = 1.0;
            den += 1.0;
        }
        log_prec += std::log(num / den) / static_cast<double>(n);
    }
    if (cand_len == 0.0) return 0.0;
    const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
    return bp * std::exp(log_prec);
}

namespace detail {

inline idx lcs_length(const TokenSeq& a, const TokenSeq& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<idx> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace detail

// Mean per-pair ROUGE-L F-measure from LCS length, beta = 1.2.
inline double rouge_l(const std::vector<TokenSeq>& cands, const std::vector<TokenSeq>& refs,
                      double beta = 1.2) {
    if (cands.empty()) throw ContractError("rouge_l: empty corpus is undefined");
    if (cands.size() != refs.size())
        throw ContractError(strf("rouge_l: %zu candidates vs %zu references", cands.size(),
                                 refs.size()));
    double sum = 0.0;
    for (size_t i = 0; i < cands.size(); ++i) {
        if (cands[i].empty() || refs[i].empty()) continue;
        const double lcs = static_cast<double>(detail::lcs_length(cands[i], refs[i]));
        if (lcs == 0.0) continue;
        const double p = lcs / static_cast<double>(cands[i].size());
        const double r = lcs / static_cast<double>(refs[i].size());
        const double b2 = beta * beta;
        sum += (1.0 + b2) * p * r / (r + b2 * p);
    }
    return sum / static_cast<double>(cands.size());
}

// Standard CIDEr: per order n = 1..4, TF-IDF sentence vectors with
// document frequency over the reference corpus and idf = log(N/max(1,df)),
// cosine similarity per order, averaged over orders and scaled by 10.
// The cider_d variant clips candidate counts at the reference count and
// applies the Gaussian length penalty (sigma = 6).
inline double cider(const std::vector<TokenSeq>& cands, const std::vector<TokenSeq>& refs,
                    bool cider_d = false) {
    if (cands.size() != refs.size())
        throw ContractError(strf("cider: %zu candidates vs %zu references", cands.size(),
                                 refs.size()));
    const size_t N = refs.size();
    if (N < 2) throw ContractError("cider: document frequency needs a corpus of at least 2 pairs");

    std::array<std::map<std::string, idx>, 4> df;
    for (const auto& ref : refs)
        for (idx n = 1; n <= 4; ++n)
            for (const auto& [gram, count] : ngram::counts(ref, n)) ++df[static_cast<size_t>(n - 1)][gram];

    auto idf = [&](idx n, const std::string& gram) {
        const auto& table = df[static_cast<size_t>(n - 1)];
        auto it = table.find(gram);
        const double d = it == table.end() ? 0.0 : static_cast<double>(it->second);
        return std::log(static_cast<double>(N) / std::max(1.0, d));
    };

    double score = 0.0;
    for (size_t i = 0; i < N; ++i) {
        double pair_score = 0.0;
        for (idx n = 1; n <= 4; ++n) {
            const auto cc = ngram::counts(cands[i], n);
            const auto rc = ngram::counts(refs[i], n);
            const double ct = static_cast<double>(ngram::total(cands[i], n));
            const double rt = static_cast<double>(ngram::total(refs[i], n));
            if (ct == 0.0 || rt == 0.0) continue;
            double dot = 0.0, cnorm = 0.0, rnorm = 0.0;
            for (const auto& [gram, count] : cc) {
                double tf = static_cast<double>(count) / ct;
                if (cider_d) {
                    auto it = rc.find(gram);
                    const double rcount = it == rc.end() ? 0.0 : static_cast<double>(it->second);
                    tf = std::min(static_cast<double>(count), rcount) / ct;
                }
                const double w = tf * idf(n, gram);
                cnorm += (static_cast<double>(count) / ct * idf(n, gram)) *
                         (static_cast<double>(count) / ct * idf(n, gram));
                auto it = rc.find(gram);
                if (it != rc.end()) dot += w * (static_cast<double>(it->second) / rt) * idf(n, gram);
            }
            for (const auto& [gram, count] : rc) {
                const double w = static_cast<double>(count) / rt * idf(n, gram);
                rnorm += w * w;
            }
            if (cnorm == 0.0 || rnorm == 0.0) continue;
            pair_score += dot / (std::sqrt(cnorm) * std::sqrt(rnorm));
        }
        pair_score /= 4.0;
        if (cider_d) {
            const double delta =
                static_cast<double>(cands[i].size()) - static_cast<double>(refs[i].size());
            pair_score *= std::exp(-delta * delta / (2.0 * 6.0 * 6.0));
        }
        score += pair_score;
    }
    return 10.0 * score / static_cast<double>(N);
}

// Sentence-averaged BLEU (per-pair BLEU averaged over the corpus); the
// corpus-level number above is the default everywhere.
inline double bleu_sentence_averaged(const std::vector<TokenSeq>& cands,
                                     const std::vector<TokenSeq>& refs, idx n,
                                     bool smooth = false) {
    if (cands.empty()) throw ContractError("bleu: empty corpus is undefined");
    double sum = 0.0;
    for (size_t i = 0; i < cands.size(); ++i)
        sum += bleu({cands[i]}, {refs[i]}, n, smooth);
    return sum / static_cast<double>(cands.size());
}

struct MetricReport {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
    double rouge = 0;
    double cider_score = 0;

    std::string to_kv_text() const {
        return strf("bleu1=%.9f\nbleu2=%.9f\nbleu3=%.9f\nbleu4=%.9f\nrouge_l=%.9f\ncider=%.9f\n",
                    bleu1, bleu2, bleu3, bleu4, rouge, cider_score);
    }

    std::string to_json() const {
        return strf(
            "{\"bleu1\": %.9f, \"bleu2\": %.9f, \"bleu3\": %.9f, \"bleu4\": %.9f, "
            "\"rouge_l\": %.9f, \"cider\": %.9f}\n",
            bleu1, bleu2, bleu3, bleu4, rouge, cider_score);
    }
};

inline MetricReport evaluate_corpus(const std::vector<TokenSeq>& cands,
                                    const std::vector<TokenSeq>& refs, bool smooth = false,
                                    bool cider_d = false) {
    MetricReport r;
    r.bleu1 = bleu(cands, refs, 1, smooth);
    r.bleu2 = bleu(cands, refs, 2, smooth);
    r.bleu3 = bleu(cands, refs, 3, smooth);
    r.bleu4 = bleu(cands, refs, 4, smooth);
    r.rouge = rouge_l(cands, refs);
    r.cider_score = cider(cands, refs, cider_d);
    return r;
}

}  // namespace m3t
