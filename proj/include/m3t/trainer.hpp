#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "m3t/checkpoint.hpp"
#include "m3t/corpus.hpp"
#include "m3t/feature_io.hpp"
#include "m3t/image.hpp"
#include "m3t/metrics.hpp"
#include "m3t/model.hpp"
#include "m3t/synthetic.hpp"

namespace m3t {

// Loads model inputs (raw .pgm images resized to the configured input,
// or .m3tf precomputed features) and memoizes them by path.
template <class S>
class InputCache {
public:
    explicit InputCache(const ModelConfig& cfg) : cfg_(cfg) {}

    const Tensor<S>& get(const std::string& path) {
        auto it = cache_.find(path);
        if (it != cache_.end()) return it->second;
        Tensor<S> t;
        if (path.size() >= 5 && path.substr(path.size() - 5) == ".m3tf") {
            t = load_features<S>(path);
            if (cfg_.feature_mode != "precomputed")
                throw DataError("feature file supplied but config feature_mode is backbone: " + path);
        } else {
            if (cfg_.feature_mode != "backbone")
                throw DataError("raw image supplied but config feature_mode is precomputed: " + path);
            t = load_image_as_input<S>(path, cfg_.image_size);
        }
        return cache_.emplace(path, std::move(t)).first->second;
    }

private:
    ModelConfig cfg_;
    std::unordered_map<std::string, Tensor<S>> cache_;
};

// One optimizer update over a padded batch. Per-example losses (mean over
// non-pad tokens each) are averaged across the batch under a single tape.
template <class S>
S train_step(M3TModel<S>& model, AdamState<S>& adam, const Batch& batch,
             const std::vector<EncodedRecord>& records, InputCache<S>& inputs, idx global_step) {
    const ModelConfig& cfg = model.config();
    const auto reduction =
        cfg.loss_reduction == "sum" ? LossReduction::Sum : LossReduction::Mean;
    Tape<S> tape(cfg.seed, global_step);
    Tensor<S> total;
    for (size_t i = 0; i < batch.record_indices.size(); ++i) {
        const auto& record = records[batch.record_indices[i]];
        Tensor<S> logits = model.forward(inputs.get(record.image), batch.keyword_ids[i],
                                         batch.keyword_pad[i], batch.decoder_input[i]);
        Tensor<S> loss = cross_entropy(logits, batch.decoder_target[i], Vocabulary::kPad, reduction);
        total = total.defined() ? add(total, loss) : loss;
    }
    total = scale(total, static_cast<S>(1.0 / static_cast<double>(batch.record_indices.size())));
    tape.backward(total);
    adam_step(model.params(), adam);
    return total.item();
}

// Teacher-forced loss without a tape (validation).
template <class S>
double evaluate_loss(M3TModel<S>& model, const std::vector<EncodedRecord>& records,
                     InputCache<S>& inputs) {
    const ModelConfig& cfg = model.config();
    const auto reduction =
        cfg.loss_reduction == "sum" ? LossReduction::Sum : LossReduction::Mean;
    double total = 0.0;
    for (const auto& record : records) {
        std::vector<idx> din{Vocabulary::kBos};
        din.insert(din.end(), record.description_ids.begin(), record.description_ids.end());
        std::vector<idx> dtg = record.description_ids;
        dtg.push_back(Vocabulary::kEos);
        Tensor<S> logits = model.forward(inputs.get(record.image), record.keyword_ids, {}, din);
        total += static_cast<double>(
            cross_entropy(logits, dtg, Vocabulary::kPad, reduction).item());
    }
    return total / static_cast<double>(records.size());
}

struct TrainResult {
    std::string log_path;
    std::string best_checkpoint;
    std::string last_checkpoint;
    std::string skip_report_path;
    double best_val_loss = std::numeric_limits<double>::infinity();
    double final_train_loss = 0.0;
    idx steps = 0;
    idx epochs_run = 0;
    std::string log_text;  // full TSV log, also written to log_path
};

// Full training loop: preprocess, split, build the vocabulary on the
// training split, then epochs of batched updates with per-epoch validation,
// early stopping, and best/last checkpoints. Deterministic for a fixed
// (seed, config, corpus).
template <class S>
TrainResult train_model(const ModelConfig& cfg, const std::vector<CorpusRecord>& corpus,
                        const std::string& out_dir,
                        const std::function<void(const std::string&)>& log_line = {}) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(out_dir);

    PreprocessReport report;
    auto prepped = preprocess_records(corpus, cfg.min_desc_len, cfg.max_desc_len, &report);
    if (prepped.empty()) throw DataError("no usable records after preprocessing");
    TrainResult result;
    result.skip_report_path = (fs::path(out_dir) / "skip_report.txt").string();
    {
        std::ofstream skip(result.skip_report_path, std::ios::binary);
        skip << report.to_text();
    }

    auto splits = split_dataset(prepped, {cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.seed});
    if (splits.train.empty()) throw DataError("training split is empty");

    std::vector<std::vector<std::string>> streams;
    for (const auto& r : splits.train) {
        streams.push_back(r.description_tokens);
        streams.push_back(r.keyword_tokens);
    }
    Vocabulary vocab = build_vocab(streams, cfg.vocab_cap, cfg.min_freq);

    auto train_recs = encode_records(splits.train, vocab);
    auto val_recs = encode_records(splits.val, vocab);

    M3TModel<S> model(cfg, vocab.size());
    AdamState<S> adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    adam.init(model.params());
    InputCache<S> inputs(cfg);
    BatchIterator batches(&train_recs, cfg.batch_size, cfg.seed);
    std::mt19937_64 trainer_rng(cfg.seed);

    std::ostringstream log;
    auto emit = [&](const std::string& line) {
        log << line << "\n";
        if (log_line) log_line(line);
    };
    emit("step\tsplit\tloss");

    result.log_path = (fs::path(out_dir) / "train_log.tsv").string();
    result.best_checkpoint = (fs::path(out_dir) / "best.m3tc").string();
    result.last_checkpoint = (fs::path(out_dir) / "last.m3tc").string();

    idx global_step = 0;
    idx epochs_since_best = 0;
    for (idx epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& batch : batches.epoch(epoch)) {
            const S loss = train_step(model, adam, batch, train_recs, inputs, global_step);
            ++global_step;
            result.final_train_loss = static_cast<double>(loss);
            emit(strf("%lld\ttrain\t%.17g", static_cast<long long>(global_step),
                      static_cast<double>(loss)));
        }
        result.epochs_run = epoch + 1;
        if (!val_recs.empty()) {
            const double val_loss = evaluate_loss(model, val_recs, inputs);
            emit(strf("%lld\tval\t%.17g", static_cast<long long>(global_step), val_loss));
            if (val_loss < result.best_val_loss) {
                result.best_val_loss = val_loss;
                epochs_since_best = 0;
                std::ostringstream rng_state;
                rng_state << trainer_rng;
                save_checkpoint(result.best_checkpoint, model, adam, global_step, rng_state.str(),
                                vocab);
            } else if (++epochs_since_best >= cfg.patience) {
                emit(strf("%lld\tearly_stop\t%.17g", static_cast<long long>(global_step),
                          result.best_val_loss));
                break;
            }
        }
    }
    result.steps = global_step;
    {
        std::ostringstream rng_state;
        rng_state << trainer_rng;
        save_checkpoint(result.last_checkpoint, model, adam, global_step, rng_state.str(), vocab);
    }
    if (val_recs.empty()) {
        // no validation data: best == last
        std::error_code ec;
        std::filesystem::copy_file(result.last_checkpoint, result.best_checkpoint,
                                   std::filesystem::copy_options::overwrite_existing, ec);
    }
    std::ofstream log_file(result.log_path, std::ios::binary);
    log_file << log.str();
    result.log_text = log.str();
    return result;
}

// Greedy-decode a split and score candidates against the references.
template <class S>
MetricReport evaluate_split(M3TModel<S>& model, const std::vector<EncodedRecord>& records,
                            const Vocabulary& vocab, InputCache<S>& inputs, idx beam = 1,
                            bool oracle_decode = false, bool smooth = false) {
    std::vector<TokenSeq> cands, refs;
    for (const auto& record : records) {
        refs.push_back(record.description_tokens);
        if (oracle_decode) {
            cands.push_back(refs.back());
            continue;
        }
        const auto ids = model.generate(inputs.get(record.image), record.keyword_ids,
                                        model.config().max_desc_len, beam);
        cands.push_back(vocab.decode(ids));
    }
    return evaluate_corpus(cands, refs, smooth);
}

}  // namespace m3t
