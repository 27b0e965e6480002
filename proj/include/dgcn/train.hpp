#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dgcn/metrics.hpp"
#include "dgcn/model.hpp"

namespace dgcn {

struct TrainConfig {
    double lr0 = 0.001;
    double decay_factor = 0.5;
    std::size_t decay_every = 300000;  // gradient steps per staircase drop
    std::size_t epochs = 100;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;
    double dropout = 0.3;
    std::size_t eval_every = 10;

    void validate() const {
        if (lr0 <= 0) throw ConfigError("train: lr0 must be > 0");
        if (decay_factor <= 0 || decay_factor > 1)
            throw ConfigError("train: decay_factor must be in (0,1]");
        if (decay_every < 1) throw ConfigError("train: decay_every must be >= 1");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (dropout < 0 || dropout >= 1) throw ConfigError("train: dropout must be in [0,1)");
    }
};

// Staircase schedule: lr0 * decay_factor^floor(step / decay_every).
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
    return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(step / cfg.decay_every));
}

// Bias-corrected Adam.
template <typename T>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Buffer<T>> m;
    std::vector<Buffer<T>> v;

    explicit AdamState(const ParamStore<T>& store) {
        for (std::size_t i = 0; i < store.entry_count(); ++i) {
            m.push_back(make_buffer<T>(store.entry(i).size()));
            v.push_back(make_buffer<T>(store.entry(i).size()));
        }
    }
};

template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state, double lr) {
    state.step += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < store.entry_count(); ++i) {
        auto& p = store.entry(i);
        if (!p.trainable) continue;
        T* pv = p.value->data();
        const T* g = p.grad->data();
        T* mi = state.m[i]->data();
        T* vi = state.v[i]->data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            const double mj = b1 * mi[j] + (1 - b1) * gj;
            const double vj = b2 * vi[j] + (1 - b2) * gj * gj;
            mi[j] = static_cast<T>(mj);
            vi[j] = static_cast<T>(vj);
            pv[j] = static_cast<T>(pv[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + state.eps));
        }
    }
}

// One sample prepared for training: model input features, edge-metric
// coordinates, targets, and (for fixed or static topology) a cached
// per-sample neighbor table.
template <typename T>
struct PreparedSample {
    Tensor<T> features;                    // N x D0
    Tensor<T> coords;                      // N x 3 (empty in fixed-edge mode)
    std::vector<int> labels;               // single-label targets
    std::vector<std::uint8_t> multilabels; // N x C row-major (multilabel targets)
    NeighborTable edges;
    bool has_edges = false;
};

template <typename T>
Batch<T> stack_batch(const std::vector<PreparedSample<T>>& samples,
                     const std::vector<std::size_t>& which) {
    if (which.empty()) throw std::invalid_argument("stack_batch: empty batch");
    const std::size_t d = samples[which[0]].features.shape()[1];
    const bool with_coords = samples[which[0]].coords.size() > 0;
    const bool with_edges = samples[which[0]].has_edges;
    std::size_t total = 0, fan = 0;
    for (std::size_t s : which) {
        total += samples[s].features.shape()[0];
        if (with_edges) fan = samples[s].edges.fan_in();
    }
    Batch<T> b;
    auto feat = make_buffer<T>(total * d);
    auto crd = with_coords ? make_buffer<T>(total * 3) : nullptr;
    auto idx = with_edges ? std::make_shared<std::vector<int>>(total * fan) : nullptr;
    std::size_t base = 0;
    for (std::size_t s : which) {
        const auto& ps = samples[s];
        const std::size_t n = ps.features.shape()[0];
        std::copy_n(ps.features.data(), n * d, feat->data() + base * d);
        if (with_coords) std::copy_n(ps.coords.data(), n * 3, crd->data() + base * 3);
        if (with_edges) {
            const auto& src = *ps.edges.indices();
            for (std::size_t i = 0; i < n * fan; ++i)
                (*idx)[base * fan + i] = src[i] + static_cast<int>(base);
        }
        b.segments.push_back(n);
        base += n;
    }
    b.features = Tensor<T>(Shape(total, d), std::move(feat));
    if (with_coords) b.coords = Tensor<T>(Shape(total, std::size_t(3)), std::move(crd));
    if (with_edges) {
        b.edges = NeighborTable(total, fan, std::move(idx), /*allow_duplicates=*/true);
        b.has_edges = true;
    }
    return b;
}

template <typename T>
void collect_targets(const std::vector<PreparedSample<T>>& samples,
                     const std::vector<std::size_t>& which, bool multilabel,
                     std::size_t num_classes, std::vector<int>& labels,
                     std::vector<std::uint8_t>& multilabels) {
    labels.clear();
    multilabels.clear();
    for (std::size_t s : which) {
        if (multilabel)
            multilabels.insert(multilabels.end(), samples[s].multilabels.begin(),
                               samples[s].multilabels.end());
        else
            labels.insert(labels.end(), samples[s].labels.begin(), samples[s].labels.end());
    }
    if (multilabel && !labels.empty())
        throw DimensionError("targets: unexpected single-label data in multilabel run");
    (void)num_classes;
}

// Argmax per row, ties to the lowest class id.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    std::vector<int> out(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
        T best = logits.data()[r * c];
        for (std::size_t j = 1; j < c; ++j) {
            if (logits.data()[r * c + j] > best) {
                best = logits.data()[r * c + j];
                out[r] = static_cast<int>(j);
            }
        }
    }
    return out;
}

// Multilabel decision: sigmoid(logit) > 0.5, i.e. logit > 0.
template <typename T>
std::vector<std::uint8_t> threshold_rows(const Tensor<T>& logits) {
    std::vector<std::uint8_t> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits.data()[i] > T(0) ? 1 : 0;
    return out;
}

template <typename T>
struct EvalResult {
    double loss = 0;
    double oa = 0;
    double miou_v = 0;
    double mf1 = 0;
    std::vector<double> per_class_iou;
};

template <typename T>
EvalResult<T> evaluate(const DeepGCNModel<T>& model, const std::vector<PreparedSample<T>>& set,
                       const TrainConfig& cfg) {
    const ModelConfig& mc = model.config();
    std::vector<int> all_preds, all_labels;
    std::vector<std::uint8_t> all_mpreds, all_mtargets;
    double loss_sum = 0;
    std::size_t loss_n = 0;
    for (std::size_t s = 0; s < set.size(); ++s) {
        Batch<T> batch = stack_batch(set, {s});
        ForwardContext<T> ctx;
        ctx.training = false;
        ctx.rng = RngStream(cfg.seed).fork(0xe7a1, s);
        Tensor<T> logits = model.forward(batch, ctx);
        if (mc.multilabel) {
            Tensor<T> targets(logits.shape(), make_buffer<T>(logits.size()));
            for (std::size_t i = 0; i < logits.size(); ++i)
                targets.data()[i] = static_cast<T>(set[s].multilabels[i]);
            loss_sum += static_cast<double>(bce_logits(logits, targets).at(0));
            auto pr = threshold_rows(logits);
            all_mpreds.insert(all_mpreds.end(), pr.begin(), pr.end());
            all_mtargets.insert(all_mtargets.end(), set[s].multilabels.begin(),
                                set[s].multilabels.end());
        } else {
            loss_sum += static_cast<double>(softmax_xent(logits, set[s].labels).at(0));
            auto pr = argmax_rows(logits);
            all_preds.insert(all_preds.end(), pr.begin(), pr.end());
            all_labels.insert(all_labels.end(), set[s].labels.begin(), set[s].labels.end());
        }
        ++loss_n;
    }
    EvalResult<T> r;
    r.loss = loss_n ? loss_sum / static_cast<double>(loss_n) : 0;
    if (mc.multilabel) {
        r.mf1 = micro_f1(all_mpreds, all_mtargets);
    } else {
        r.oa = overall_accuracy(all_preds, all_labels);
        r.per_class_iou = iou_per_class(all_preds, all_labels, mc.num_classes);
        r.miou_v = miou(all_preds, all_labels, mc.num_classes);
    }
    return r;
}

// End-to-end training loop: per-epoch shuffled batches, staircase LR,
// periodic evaluation, best-checkpoint tracking. Non-finite loss aborts
// with the diverged flag set (an expected outcome for deep plain
// configs). Deterministic given (seed, config, dataset).
template <typename T>
MetricsReport train(DeepGCNModel<T>& model, const std::vector<PreparedSample<T>>& train_set,
                    const std::vector<PreparedSample<T>>& eval_set, const TrainConfig& cfg,
                    std::vector<std::vector<T>>* best_params = nullptr) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
    const ModelConfig& mc = model.config();
    AdamState<T> adam(model.params());
    MetricsReport report;
    report.multilabel = mc.multilabel;
    report.best_metric = -1;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;
    std::vector<int> labels;
    std::vector<std::uint8_t> multilabels;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(cfg.seed * 0x9e3779b1ULL + epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0;
        std::size_t epoch_batches = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            std::vector<std::size_t> which(
                order.begin() + static_cast<std::ptrdiff_t>(b0),
                order.begin() + static_cast<std::ptrdiff_t>(std::min(b0 + cfg.batch_size, order.size())));
            Batch<T> batch = stack_batch(train_set, which);
            collect_targets(train_set, which, mc.multilabel, mc.num_classes, labels, multilabels);

            Tape<T> tape;
            ForwardContext<T> ctx;
            ctx.tape = &tape;
            ctx.training = true;
            ctx.dropout = cfg.dropout;
            ctx.rng = RngStream(cfg.seed).fork(0x57e9, step);
            double loss_value;
            try {
                Tensor<T> logits = model.forward(batch, ctx);
                Tensor<T> loss;
                if (mc.multilabel) {
                    Tensor<T> targets(logits.shape(), make_buffer<T>(logits.size()));
                    for (std::size_t i = 0; i < logits.size(); ++i)
                        targets.data()[i] = static_cast<T>(multilabels[i]);
                    loss = bce_logits(logits, targets);
                } else {
                    loss = softmax_xent(logits, labels);
                }
                loss_value = static_cast<double>(loss.at(0));
                model.params().zero_grads();
                tape.backward(loss);
            } catch (const NumericError&) {
                report.diverged = true;
                return report;
            }
            if (!std::isfinite(loss_value)) {
                report.diverged = true;
                return report;
            }
            adam_step(model.params(), adam, lr_at(step, cfg));
            epoch_loss += loss_value;
            ++epoch_batches;
            ++step;
        }

        EpochTrace tr;
        tr.step = step;
        tr.epoch = epoch;
        tr.lr = lr_at(step == 0 ? 0 : step - 1, cfg);
        tr.loss = epoch_loss / static_cast<double>(epoch_batches);
        const bool do_eval =
            !eval_set.empty() && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        if (do_eval) {
            EvalResult<T> ev = evaluate(model, eval_set, cfg);
            tr.has_eval = true;
            tr.oa = ev.oa;
            tr.miou = ev.miou_v;
            tr.mf1 = ev.mf1;
            const double metric = mc.multilabel ? ev.mf1 : ev.miou_v;
            if (metric > report.best_metric) {
                report.best_metric = metric;
                report.best_epoch = epoch;
                report.per_class_iou = ev.per_class_iou;
                report.miou = ev.miou_v;
                report.oa = ev.oa;
                report.micro_f1 = ev.mf1;
                if (best_params) {
                    best_params->clear();
                    for (std::size_t e = 0; e < model.params().entry_count(); ++e)
                        best_params->push_back(*model.params().entry(e).value);
                }
            }
        }
        report.trace.push_back(tr);
    }
    return report;
}

}  // namespace dgcn
