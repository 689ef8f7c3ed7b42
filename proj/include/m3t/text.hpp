#pragma once

#include <string>
#include <vector>

namespace m3t {

inline const std::string kSepToken = "[SEP]";

// Lowercase, replace every non-alphabetic character with a space (so
// "age-related" keeps its word boundary), then whitespace-split.
inline std::vector<std::string> normalize_text(const std::string& raw) {
    std::string buf;
    buf.reserve(raw.size());
    for (unsigned char c : raw) {
        if (c >= 'A' && c <= 'Z')
            buf.push_back(static_cast<char>(c - 'A' + 'a'));
        else if (c >= 'a' && c <= 'z')
            buf.push_back(static_cast<char>(c));
        else
            buf.push_back(' ');
    }
    std::vector<std::string> tokens;
    size_t i = 0;
    while (i < buf.size()) {
        while (i < buf.size() && buf[i] == ' ') ++i;
        size_t start = i;
        while (i < buf.size() && buf[i] != ' ') ++i;
        if (i > start) tokens.push_back(buf.substr(start, i - start));
    }
    return tokens;
}

// Comma-separated keyword groups -> token sequence with [SEP] between
// groups. Empty groups (stray commas) are dropped, so the output never
// starts or ends with [SEP] and never holds two in a row.
inline std::vector<std::string> keywords_to_sequence(const std::string& raw) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= raw.size()) {
        size_t comma = raw.find(',', pos);
        const std::string segment =
            raw.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        std::vector<std::string> tokens = normalize_text(segment);
        if (!tokens.empty()) {
            if (!out.empty()) out.push_back(kSepToken);
            out.insert(out.end(), tokens.begin(), tokens.end());
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

}  // namespace m3t
