#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "m3t/common.hpp"
#include "m3t/text.hpp"

namespace m3t {

// Bidirectional token<->id mapping with reserved control ids. Keeps the
// full observed frequency table (including tokens that fell below the cap
// or min_freq), so UNK coverage is recomputable exactly.
class Vocabulary {
public:
    static constexpr idx kPad = 0;
    static constexpr idx kUnk = 1;
    static constexpr idx kBos = 2;
    static constexpr idx kEos = 3;
    static constexpr idx kSep = 4;
    static constexpr idx kReserved = 5;

    Vocabulary() {
        id_to_token_ = {"[PAD]", "[UNK]", "[BOS]", "[EOS]", "[SEP]"};
        for (size_t i = 0; i < id_to_token_.size(); ++i)
            token_to_id_[id_to_token_[i]] = static_cast<idx>(i);
    }

    idx size() const { return static_cast<idx>(id_to_token_.size()); }

    idx add_token(const std::string& token) {
        auto it = token_to_id_.find(token);
        if (it != token_to_id_.end()) return it->second;
        const idx id = size();
        token_to_id_[token] = id;
        id_to_token_.push_back(token);
        return id;
    }

    idx id_of(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

    const std::string& token_of(idx id) const {
        if (id < 0 || id >= size())
            throw IndexError(strf("token id %lld out of range [0, %lld)",
                                  static_cast<long long>(id), static_cast<long long>(size())));
        return id_to_token_[static_cast<size_t>(id)];
    }

    std::vector<idx> encode(const std::vector<std::string>& tokens) const {
        std::vector<idx> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id_of(t));
        return ids;
    }

    std::vector<std::string> decode(const std::vector<idx>& ids) const {
        std::vector<std::string> tokens;
        tokens.reserve(ids.size());
        for (idx id : ids) tokens.push_back(token_of(id));
        return tokens;
    }

    // observed counts over the corpus the vocabulary was built from
    const std::map<std::string, idx>& frequency_table() const { return freq_; }
    void set_frequency(const std::string& token, idx count) { freq_[token] = count; }

    // fraction of corpus tokens that map to UNK, from the frequency table
    double unk_rate() const {
        double total = 0.0, kept = 0.0;
        for (const auto& [token, count] : freq_) {
            total += static_cast<double>(count);
            if (contains(token)) kept += static_cast<double>(count);
        }
        return total == 0.0 ? 0.0 : 1.0 - kept / total;
    }

    // line format: token<TAB>count, one per assigned id from kReserved up
    std::string serialize() const {
        std::string out;
        for (idx id = kReserved; id < size(); ++id) {
            const std::string& tok = id_to_token_[static_cast<size_t>(id)];
            auto it = freq_.find(tok);
            const idx count = it == freq_.end() ? 0 : it->second;
            out += tok + "\t" + std::to_string(count) + "\n";
        }
        return out;
    }

    static Vocabulary deserialize(const std::string& text) {
        Vocabulary v;
        size_t pos = 0;
        while (pos < text.size()) {
            size_t nl = text.find('\n', pos);
            if (nl == std::string::npos) nl = text.size();
            const std::string line = text.substr(pos, nl - pos);
            pos = nl + 1;
            if (line.empty()) continue;
            const size_t tab = line.find('\t');
            if (tab == std::string::npos) throw DataError("vocabulary line missing count: " + line);
            const std::string tok = line.substr(0, tab);
            v.add_token(tok);
            v.freq_[tok] = static_cast<idx>(std::stoll(line.substr(tab + 1)));
        }
        return v;
    }

private:
    std::unordered_map<std::string, idx> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::map<std::string, idx> freq_;
};

// Rank observed tokens by frequency (lexicographic tie-break), keep the
// top (cap - reserved) that clear min_freq; everything else maps to UNK.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& token_streams, idx cap,
                              idx min_freq) {
    if (cap <= Vocabulary::kReserved)
        throw ContractError(strf("vocabulary cap %lld leaves no room past the %lld reserved ids",
                                 static_cast<long long>(cap),
                                 static_cast<long long>(Vocabulary::kReserved)));
    std::map<std::string, idx> freq;
    for (const auto& stream : token_streams)
        for (const auto& tok : stream) {
            if (tok == kSepToken) continue;  // already reserved
            ++freq[tok];
        }
    std::vector<std::pair<std::string, idx>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [tok, count] : ranked) {
        v.set_frequency(tok, count);
        if (count >= min_freq && v.size() < cap) v.add_token(tok);
    }
    return v;
}

}  // namespace m3t
