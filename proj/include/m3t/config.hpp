#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "m3t/common.hpp"

namespace m3t {

// Single source of truth for dimensions and training hyperparameters.
// "full" mirrors the paper-scale regime; "desk" is the small verification
// profile everything in tests runs at.
struct ModelConfig {
    std::string profile = "desk";

    // visual encoder
    std::string feature_mode = "backbone";  // backbone | precomputed
    idx image_size = 64;
    std::vector<idx> backbone_channels = {16, 32, 48, 64};
    idx se_ratio = 4;
    idx feature_h = 4, feature_w = 4, feature_c = 64;  // used by precomputed mode
    idx lcg_ratio = 4;
    idx lcg_gate_dim = 0;  // 0 means C/2

    // keyword encoder
    idx d_emb = 32;
    idx max_keywords = 32;

    // transfusion + decoder
    idx d_model = 64;
    idx heads = 2;
    idx enc_ffn = 32;
    idx dec_ffn = 16;
    idx max_desc_len = 50;
    idx min_desc_len = 5;

    // vocabulary
    idx vocab_cap = 200;
    idx min_freq = 2;

    // training
    double lr = 0.004;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    idx batch_size = 8;
    double dropout = 0.0;
    idx epochs = 30;
    idx patience = 5;
    std::string loss_reduction = "mean";  // mean | sum
    double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
    std::uint64_t seed = 42;

    // ablation switches (the four supported rows)
    bool visual_attention = true;
    bool keywords = true;
    bool keyword_attention = true;

    static ModelConfig desk() { return ModelConfig{}; }

    static ModelConfig full() {
        ModelConfig c;
        c.profile = "full";
        c.image_size = 356;
        c.backbone_channels = {64, 160, 320, 640, 1280};
        c.feature_h = 12;
        c.feature_w = 12;
        c.feature_c = 1280;
        c.d_emb = 300;
        c.d_model = 256;
        c.heads = 8;
        c.enc_ffn = 512;
        c.dec_ffn = 256;
        c.vocab_cap = 5000;
        c.batch_size = 64;
        c.dropout = 0.2;
        c.epochs = 100;
        return c;
    }

    idx channels() const {
        return feature_mode == "backbone" ? backbone_channels.back() : feature_c;
    }
    idx gate_dim() const { return lcg_gate_dim > 0 ? lcg_gate_dim : channels() / 2; }
    idx bottleneck_dim() const { return channels() / lcg_ratio; }
    idx head_dim() const { return d_model / heads; }

    void validate() const {
        if (profile != "desk" && profile != "full")
            throw DataError("config: profile must be desk or full, got " + profile);
        if (feature_mode != "backbone" && feature_mode != "precomputed")
            throw DataError("config: feature_mode must be backbone or precomputed, got " +
                            feature_mode);
        if (feature_mode == "backbone" && backbone_channels.empty())
            throw DataError("config: backbone needs at least one stage");
        if (d_model % heads != 0)
            throw DataError(strf("config: d_model %lld not divisible by heads %lld",
                                 static_cast<long long>(d_model), static_cast<long long>(heads)));
        if (channels() % lcg_ratio != 0)
            throw DataError(strf("config: channels %lld not divisible by lcg_ratio %lld",
                                 static_cast<long long>(channels()),
                                 static_cast<long long>(lcg_ratio)));
        if (gate_dim() <= 0) throw DataError("config: gate dim must be positive");
        if (batch_size <= 0 || epochs <= 0) throw DataError("config: batch_size/epochs must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw DataError("config: dropout must be in [0, 1)");
        if (loss_reduction != "mean" && loss_reduction != "sum")
            throw DataError("config: loss_reduction must be mean or sum");
        if (min_desc_len < 1 || max_desc_len < min_desc_len)
            throw DataError("config: bad description length range");
        if (vocab_cap <= 5) throw DataError("config: vocab_cap too small for reserved ids");
        if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
            throw DataError("config: split fractions must sum to 1");
        validate_ablation();
    }

    // Only the four studied rows are accepted:
    //   image only | +visual attention | +keywords | +keyword attention
    void validate_ablation() const {
        const bool ok = (!visual_attention && !keywords && !keyword_attention) ||
                        (visual_attention && !keywords && !keyword_attention) ||
                        (visual_attention && keywords && !keyword_attention) ||
                        (visual_attention && keywords && keyword_attention);
        if (!ok)
            throw DataError(strf(
                "config: ablation flags visual_attention=%d keywords=%d keyword_attention=%d do "
                "not match a supported row; valid rows are (0,0,0), (1,0,0), (1,1,0), (1,1,1)",
                visual_attention ? 1 : 0, keywords ? 1 : 0, keyword_attention ? 1 : 0));
    }

    std::string serialize() const {
        std::ostringstream os;
        os << "[model]\n";
        os << "profile = " << profile << "\n";
        os << "feature_mode = " << feature_mode << "\n";
        os << "image_size = " << image_size << "\n";
        os << "backbone_channels = ";
        for (size_t i = 0; i < backbone_channels.size(); ++i)
            os << (i ? "," : "") << backbone_channels[i];
        os << "\n";
        os << "se_ratio = " << se_ratio << "\n";
        os << "feature_h = " << feature_h << "\n";
        os << "feature_w = " << feature_w << "\n";
        os << "feature_c = " << feature_c << "\n";
        os << "lcg_ratio = " << lcg_ratio << "\n";
        os << "lcg_gate_dim = " << lcg_gate_dim << "\n";
        os << "d_emb = " << d_emb << "\n";
        os << "max_keywords = " << max_keywords << "\n";
        os << "d_model = " << d_model << "\n";
        os << "heads = " << heads << "\n";
        os << "enc_ffn = " << enc_ffn << "\n";
        os << "dec_ffn = " << dec_ffn << "\n";
        os << "max_desc_len = " << max_desc_len << "\n";
        os << "min_desc_len = " << min_desc_len << "\n";
        os << "vocab_cap = " << vocab_cap << "\n";
        os << "min_freq = " << min_freq << "\n";
        os << "[train]\n";
        os << "lr = " << strf("%.17g", lr) << "\n";
        os << "adam_beta1 = " << strf("%.17g", adam_beta1) << "\n";
        os << "adam_beta2 = " << strf("%.17g", adam_beta2) << "\n";
        os << "adam_eps = " << strf("%.17g", adam_eps) << "\n";
        os << "batch_size = " << batch_size << "\n";
        os << "dropout = " << strf("%.17g", dropout) << "\n";
        os << "epochs = " << epochs << "\n";
        os << "patience = " << patience << "\n";
        os << "loss_reduction = " << loss_reduction << "\n";
        os << "train_frac = " << strf("%.17g", train_frac) << "\n";
        os << "val_frac = " << strf("%.17g", val_frac) << "\n";
        os << "test_frac = " << strf("%.17g", test_frac) << "\n";
        os << "seed = " << seed << "\n";
        os << "[ablation]\n";
        os << "visual_attention = " << (visual_attention ? "true" : "false") << "\n";
        os << "keywords = " << (keywords ? "true" : "false") << "\n";
        os << "keyword_attention = " << (keyword_attention ? "true" : "false") << "\n";
        return os.str();
    }

    static ModelConfig deserialize(const std::string& text) {
        ModelConfig c;
        c.apply(parse_kv(text));
        return c;
    }

    static std::map<std::string, std::string> parse_kv(const std::string& text) {
        std::map<std::string, std::string> kv;
        std::istringstream is(text);
        std::string line, section;
        size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto last = line.find_last_not_of(" \t\r");
            line = line.substr(first, last - first + 1);
            if (line.empty() || line[0] == '#') continue;
            if (line.front() == '[' && line.back() == ']') {
                section = line.substr(1, line.size() - 2);
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw DataError(strf("config line %zu: expected key = value", lineno));
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t");
                const auto b = s.find_last_not_of(" \t");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            kv[section.empty() ? key : section + "." + key] = value;
        }
        return kv;
    }

    void apply(const std::map<std::string, std::string>& kv) {
        auto geti = [&](const char* k, idx& out) {
            auto it = kv.find(k);
            if (it != kv.end()) out = static_cast<idx>(std::stoll(it->second));
        };
        auto getd = [&](const char* k, double& out) {
            auto it = kv.find(k);
            if (it != kv.end()) out = std::stod(it->second);
        };
        auto gets = [&](const char* k, std::string& out) {
            auto it = kv.find(k);
            if (it != kv.end()) out = it->second;
        };
        auto getb = [&](const char* k, bool& out) {
            auto it = kv.find(k);
            if (it == kv.end()) return;
            if (it->second == "true" || it->second == "1")
                out = true;
            else if (it->second == "false" || it->second == "0")
                out = false;
            else
                throw DataError(strf("config: %s must be true/false, got %s", k, it->second.c_str()));
        };
        gets("model.profile", profile);
        gets("model.feature_mode", feature_mode);
        geti("model.image_size", image_size);
        if (auto it = kv.find("model.backbone_channels"); it != kv.end()) {
            backbone_channels.clear();
            std::istringstream ss(it->second);
            std::string part;
            while (std::getline(ss, part, ','))
                if (!part.empty()) backbone_channels.push_back(static_cast<idx>(std::stoll(part)));
        }
        geti("model.se_ratio", se_ratio);
        geti("model.feature_h", feature_h);
        geti("model.feature_w", feature_w);
        geti("model.feature_c", feature_c);
        geti("model.lcg_ratio", lcg_ratio);
        geti("model.lcg_gate_dim", lcg_gate_dim);
        geti("model.d_emb", d_emb);
        geti("model.max_keywords", max_keywords);
        geti("model.d_model", d_model);
        geti("model.heads", heads);
        geti("model.enc_ffn", enc_ffn);
        geti("model.dec_ffn", dec_ffn);
        geti("model.max_desc_len", max_desc_len);
        geti("model.min_desc_len", min_desc_len);
        geti("model.vocab_cap", vocab_cap);
        geti("model.min_freq", min_freq);
        getd("train.lr", lr);
        getd("train.adam_beta1", adam_beta1);
        getd("train.adam_beta2", adam_beta2);
        getd("train.adam_eps", adam_eps);
        geti("train.batch_size", batch_size);
        getd("train.dropout", dropout);
        geti("train.epochs", epochs);
        geti("train.patience", patience);
        gets("train.loss_reduction", loss_reduction);
        getd("train.train_frac", train_frac);
        getd("train.val_frac", val_frac);
        getd("train.test_frac", test_frac);
        if (auto it = kv.find("train.seed"); it != kv.end())
            seed = static_cast<std::uint64_t>(std::stoull(it->second));
        getb("ablation.visual_attention", visual_attention);
        getb("ablation.keywords", keywords);
        getb("ablation.keyword_attention", keyword_attention);
    }

    static ModelConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open config file: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        ModelConfig c = deserialize(ss.str());
        c.validate();
        return c;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write config file: " + path);
        out << serialize();
    }
};

}  // namespace m3t
