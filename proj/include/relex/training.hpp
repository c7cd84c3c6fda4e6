#pragma once

// Training loop: non-overlapping windows per document, length-bucketed
// batches, gradient accumulation counted in examples, Adam with bias
// correction, a geometric learning-rate range test, plateau-triggered decay,
// and per-epoch validation with early stopping on the best checkpoint.
//
// Losses are summed per batch and divided by the accumulated token count at
// step time, so k accumulated micro-batches take exactly the same step as
// their concatenation.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "relex/autodiff.hpp"
#include "relex/common.hpp"
#include "relex/model.hpp"

namespace relex {

struct TrainConfig {
    double learning_rate = 1e-3;
    int accumulation_examples = 2000;
    int window_len = 128;
    int batch_examples = 16;
    int plateau_patience = 2;
    double plateau_decay = 0.9;
    int early_stop_patience = 2;  // 0 disables early stopping
    int max_epochs = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0) throw Error("train config: learning_rate must be positive");
        if (accumulation_examples < 1) throw Error("train config: accumulation_examples must be positive");
        if (window_len < 2) throw Error("train config: window_len must be at least 2");
        if (batch_examples < 1) throw Error("train config: batch_examples must be positive");
        if (plateau_patience < 1) throw Error("train config: plateau_patience must be at least 1");
        if (!(plateau_decay > 0 && plateau_decay < 1)) throw Error("train config: plateau_decay must be in (0,1)");
        if (early_stop_patience < 0) throw Error("train config: early_stop_patience must be >= 0");
        if (max_epochs < 1) throw Error("train config: max_epochs must be positive");
    }
};

struct TrainRecord {
    long step;
    std::string split;  // "train" or "dev"
    double loss;
    double lr;
};

struct TrainHistory {
    std::vector<TrainRecord> records;
    std::string stop_reason;

    void append(long step, const std::string& split, double loss, double lr) {
        records.push_back({step, split, loss, lr});
    }
    std::string to_log() const {
        std::ostringstream os;
        os.precision(17);
        for (const auto& r : records) os << r.step << "\t" << r.split << "\t" << r.loss << "\t" << r.lr << "\n";
        if (!stop_reason.empty()) os << "# stop " << stop_reason << "\n";
        return os.str();
    }
    void save(const std::string& path) const { write_text_file(path, to_log()); }
};

// ---------------------------------------------------------------------------
// Windowing and batching.

// Split each document into consecutive non-overlapping windows of at most
// window_len tokens. A trailing window shorter than 2 tokens cannot form a
// prediction pair and is dropped. Windows never cross documents.
inline std::vector<std::vector<int>> make_windows(const std::vector<std::vector<int>>& docs, int window_len) {
    if (window_len < 2) throw Error("make_windows: window_len must be at least 2");
    std::vector<std::vector<int>> out;
    for (const auto& doc : docs) {
        for (std::size_t start = 0; start < doc.size(); start += window_len) {
            std::size_t end = std::min(doc.size(), start + window_len);
            if (end - start < 2) break;
            out.emplace_back(doc.begin() + start, doc.begin() + end);
        }
    }
    return out;
}

// One padded batch of next-token prediction pairs. A window of n tokens
// contributes inputs w[0..n-2] and targets w[1..n-1]; shorter examples are
// padded at the end (pad positions masked out, and causality keeps trailing
// pads from influencing earlier positions).
struct Batch {
    int examples = 0;
    int len = 0;  // padded example length
    std::vector<int> ids;
    std::vector<int> targets;
    std::vector<unsigned char> mask;

    long token_count() const {
        long n = 0;
        for (unsigned char m : mask) n += m;
        return n;
    }
};

inline std::vector<Batch> bucketed_batches(const std::vector<std::vector<int>>& sequences, int batch_examples,
                                           std::uint64_t seed) {
    if (sequences.empty()) throw Error("bucketed_batches: no sequences");
    if (batch_examples < 1) throw Error("bucketed_batches: batch_examples must be positive");
    std::vector<int> order(sequences.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return sequences[a].size() < sequences[b].size();
    });

    std::vector<Batch> batches;
    for (std::size_t at = 0; at < order.size(); at += batch_examples) {
        const std::size_t n = std::min(order.size() - at, static_cast<std::size_t>(batch_examples));
        Batch b;
        b.examples = static_cast<int>(n);
        std::size_t max_len = 0;
        for (std::size_t e = 0; e < n; ++e) max_len = std::max(max_len, sequences[order[at + e]].size());
        b.len = static_cast<int>(max_len) - 1;
        b.ids.assign(static_cast<std::size_t>(b.examples) * b.len, 0);
        b.targets.assign(b.ids.size(), 0);
        b.mask.assign(b.ids.size(), 0);
        for (std::size_t e = 0; e < n; ++e) {
            const auto& seq = sequences[order[at + e]];
            if (seq.size() < 2) throw Error("bucketed_batches: sequence shorter than 2 tokens");
            for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
                const std::size_t pos = e * b.len + t;
                b.ids[pos] = seq[t];
                b.targets[pos] = seq[t + 1];
                b.mask[pos] = 1;
            }
        }
        batches.push_back(std::move(b));
    }
    Rng rng(seed);
    rng.shuffle(batches);
    return batches;
}

// ---------------------------------------------------------------------------
// Adam.

template <class Real>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::map<std::string, std::vector<Real>> m, v;
};

// Single-tensor update, exposed for direct oracle tests.
template <class Real>
void adam_update(std::vector<Real>& value, const std::vector<Real>& grad, std::vector<Real>& m,
                 std::vector<Real>& v, long t, double lr, double beta1, double beta2, double eps) {
    if (grad.size() != value.size() || m.size() != value.size() || v.size() != value.size())
        throw ShapeError("adam_update: buffer sizes disagree");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
        const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
        m[i] = static_cast<Real>(mi);
        v[i] = static_cast<Real>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        value[i] = static_cast<Real>(static_cast<double>(value[i]) - lr * mhat / (std::sqrt(vhat) + eps));
    }
}

// Updates every trainable tensor from its accumulated gradient. Frozen
// tensors (requires_grad == false) are never touched, nor do they hold
// moment buffers.
template <class Real>
void adam_step(GPTParams<Real>& params, AdamState<Real>& state, double lr) {
    ++state.t;
    for (auto& p : params.named_params()) {
        if (!p.tensor->requires_grad) continue;
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        if (m.empty()) m.assign(p.tensor->size(), Real(0));
        if (v.empty()) v.assign(p.tensor->size(), Real(0));
        adam_update(p.tensor->v, p.tensor->g, m, v, state.t, lr, state.beta1, state.beta2, state.eps);
    }
}

// ---------------------------------------------------------------------------
// Schedule helpers, kept as plain structs so the policies test in isolation.

struct Ema {
    double factor = 0.9;
    double value = std::numeric_limits<double>::quiet_NaN();
    void add(double x) { value = std::isnan(value) ? x : factor * value + (1.0 - factor) * x; }
    bool ready() const { return !std::isnan(value); }
};

// Relative-improvement plateau detector; observe() returns true when the
// learning rate should decay (the streak then restarts).
struct PlateauTracker {
    int patience = 2;
    double threshold = 1e-3;
    double best = std::numeric_limits<double>::infinity();
    int bad = 0;

    bool observe(double smoothed_loss) {
        if (smoothed_loss < best * (1.0 - threshold)) {
            best = smoothed_loss;
            bad = 0;
            return false;
        }
        if (++bad >= patience) {
            bad = 0;
            return true;
        }
        return false;
    }
};

// Strict-improvement early stopping; observe() returns true when training
// should stop. improved() reports whether the last observation set a new best.
struct EarlyStop {
    int patience = 2;  // 0 disables
    double best = std::numeric_limits<double>::infinity();
    int bad = 0;
    bool last_improved = false;

    bool observe(double dev_loss) {
        if (dev_loss < best) {
            best = dev_loss;
            bad = 0;
            last_improved = true;
            return false;
        }
        last_improved = false;
        ++bad;
        return patience > 0 && bad >= patience;
    }
    bool improved() const { return last_improved; }
};

// ---------------------------------------------------------------------------
// Learning-rate range test.

struct LrRangeResult {
    std::vector<double> lrs;
    std::vector<double> losses;
    std::vector<double> smoothed;
    double suggestion = 0;
};

// step_with_lr must perform one optimizer step at the given rate and return
// the loss observed for that step. The sweep is geometric from lr_min to
// lr_max; the suggestion is the lr (geometric midpoint) where the smoothed
// loss falls fastest per log-lr, considered only before the smoothed loss
// explodes past 4x its running minimum.
inline LrRangeResult lr_range_test(const std::function<double(double)>& step_with_lr, double lr_min,
                                   double lr_max, int steps) {
    if (!(lr_min > 0) || !(lr_min < lr_max)) throw Error("lr_range_test: need 0 < lr_min < lr_max");
    if (steps < 10) throw Error("lr_range_test: need at least 10 steps");
    LrRangeResult r;
    const double ratio = std::log(lr_max / lr_min) / (steps - 1);
    Ema ema{0.9};
    double run_min = std::numeric_limits<double>::infinity();
    for (int i = 0; i < steps; ++i) {
        const double lr = lr_min * std::exp(ratio * i);
        const double loss = step_with_lr(lr);
        if (!std::isfinite(loss)) {
            if (i == 0) throw NumericError("lr_range_test: loss diverged at lr_min; lower lr_min");
            break;  // diverged mid-sweep, keep what we have
        }
        r.lrs.push_back(lr);
        r.losses.push_back(loss);
        ema.add(loss);
        r.smoothed.push_back(ema.value);
        run_min = std::min(run_min, ema.value);
        if (ema.value > 4.0 * run_min) break;  // past the blow-up point
    }
    if (r.smoothed.size() < 2) throw Error("lr_range_test: too few usable steps before divergence");
    double best_slope = 0;
    int best_i = -1;
    for (std::size_t i = 0; i + 1 < r.smoothed.size(); ++i) {
        const double slope = r.smoothed[i + 1] - r.smoothed[i];  // log-lr spacing is constant
        if (slope < best_slope) {
            best_slope = slope;
            best_i = static_cast<int>(i);
        }
    }
    if (best_i < 0) throw Error("lr_range_test: loss never decreased; no learning-rate suggestion");
    r.suggestion = std::sqrt(r.lrs[best_i] * r.lrs[best_i + 1]);
    return r;
}

// ---------------------------------------------------------------------------
// Loss evaluation and the training loop.

// Mean cross-entropy per scored token over the given windows.
template <class Real>
double evaluate_mean_loss(GPTParams<Real>& params, const std::vector<std::vector<int>>& windows,
                          int batch_examples) {
    if (windows.empty()) throw Error("evaluate_mean_loss: no windows");
    auto batches = bucketed_batches(windows, batch_examples, 0);
    double total = 0;
    long tokens = 0;
    for (const Batch& b : batches) {
        Tape<Real> tape(false);
        Tensor<Real>* logits = gpt_forward(tape, params, b.ids, b.examples, b.len);
        Tensor<Real>* loss = tape.cross_entropy_sum(logits, b.targets, b.mask);
        total += static_cast<double>(loss->v[0]);
        tokens += b.token_count();
    }
    if (tokens == 0) throw Error("evaluate_mean_loss: no scored tokens");
    return total / static_cast<double>(tokens);
}

template <class Real>
struct TrainResult {
    GPTParams<Real> params;
    TrainHistory history;
    double best_dev_loss = std::numeric_limits<double>::infinity();
};

// Trains and returns the parameters from the best validation evaluation.
// Frozen groups are bitwise unchanged; identical inputs give identical
// histories and parameters.
template <class Real>
TrainResult<Real> train(GPTParams<Real> model, const std::vector<std::vector<int>>& train_docs,
                        const std::vector<std::vector<int>>& dev_docs, const TrainConfig& config,
                        const FreezeSpec& freeze,
                        const std::function<void(long, double)>& on_step = nullptr) {
    config.validate();
    freeze.validate();
    if (config.window_len > model.config.context_len + 1)
        throw Error("train: window_len exceeds what the context length can score");
    auto windows = make_windows(train_docs, config.window_len);
    auto dev_windows = make_windows(dev_docs, config.window_len);
    if (windows.empty()) throw Error("train: no usable training windows");
    if (dev_windows.empty()) throw Error("train: no usable dev windows");

    model.set_trainable(freeze);
    for (auto& p : model.named_params())
        if (p.tensor->requires_grad) p.tensor->zero_grad();

    AdamState<Real> adam;
    Ema train_ema{0.9};
    PlateauTracker plateau{config.plateau_patience, 1e-3};
    EarlyStop stopper{config.early_stop_patience};

    TrainResult<Real> result;
    TrainHistory& history = result.history;
    double lr = config.learning_rate;
    long step = 0;
    bool have_best = false;

    double accum_loss = 0;
    long accum_tokens = 0;
    int accum_examples = 0;

    auto flush_step = [&]() {
        if (accum_examples == 0) return;
        if (accum_tokens == 0) throw Error("train: accumulated examples scored no tokens");
        const Real inv = static_cast<Real>(1.0 / static_cast<double>(accum_tokens));
        for (auto& p : model.named_params()) {
            if (!p.tensor->requires_grad) continue;
            for (auto& g : p.tensor->g) g *= inv;
        }
        adam_step(model, adam, lr);
        for (auto& p : model.named_params())
            if (p.tensor->requires_grad) p.tensor->zero_grad();
        const double mean_loss = accum_loss / static_cast<double>(accum_tokens);
        ++step;
        train_ema.add(mean_loss);
        history.append(step, "train", mean_loss, lr);
        if (on_step) on_step(step, mean_loss);
        accum_loss = 0;
        accum_tokens = 0;
        accum_examples = 0;
    };

    int epoch = 0;
    try {
        for (epoch = 1; epoch <= config.max_epochs; ++epoch) {
            auto batches = bucketed_batches(windows, config.batch_examples,
                                            derive_seed(config.seed, "epoch-" + std::to_string(epoch)));
            for (const Batch& b : batches) {
                Tape<Real> tape;
                Tensor<Real>* logits = gpt_forward(tape, model, b.ids, b.examples, b.len);
                Tensor<Real>* loss = tape.cross_entropy_sum(logits, b.targets, b.mask);
                tape.backward(loss);
                accum_loss += static_cast<double>(loss->v[0]);
                accum_tokens += b.token_count();
                accum_examples += b.examples;
                if (accum_examples >= config.accumulation_examples) flush_step();
            }
            flush_step();  // leftover gradients never leak across the reshuffle

            const double dev_loss = evaluate_mean_loss(model, dev_windows, config.batch_examples);
            history.append(step, "dev", dev_loss, lr);
            if (dev_loss < result.best_dev_loss) {
                result.best_dev_loss = dev_loss;
                result.params = model;
                have_best = true;
            }
            const bool stop = stopper.observe(dev_loss);
            if (train_ema.ready() && plateau.observe(train_ema.value)) lr *= config.plateau_decay;
            if (stop) {
                history.stop_reason = "early_stop";
                break;
            }
        }
    } catch (const NumericError& e) {
        throw NumericError("training aborted at step " + std::to_string(step + 1) + " (epoch " +
                           std::to_string(epoch) + "): " + e.what());
    }
    if (history.stop_reason.empty()) history.stop_reason = "max_epochs";
    if (!have_best) throw Error("train: no validation evaluation completed");
    return result;
}

}  // namespace relex
