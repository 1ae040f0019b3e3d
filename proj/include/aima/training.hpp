#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include "aima/graph.hpp"
#include "aima/grounding.hpp"
#include "aima/labeling.hpp"
#include "aima/model.hpp"

namespace aima {

enum class LrSchedule { constant, cosine };

inline const char* schedule_name(LrSchedule s) {
    return s == LrSchedule::constant ? "constant" : "cosine";
}

inline LrSchedule parse_schedule(const std::string& name) {
    if (name == "constant") return LrSchedule::constant;
    if (name == "cosine") return LrSchedule::cosine;
    fail_config("unknown schedule '" + name + "'");
}

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 8;
    int epochs = 3;
    double alpha = 0.8;  // label width
    Strategy strategy = Strategy::sink;
    SinkMode sink_mode = SinkMode::global;
    int sink_k = 1;
    bool weight_grad = true;  // backprop through the head-weight scores
    bool flat_labels = false;
    std::uint64_t seed = 0;
    int eval_every = 0;  // telemetry cadence in steps; 0 disables
    int threads = 0;     // 0 = hardware concurrency
    int max_steps = 0;   // optional cap; 0 = run all epochs
    LrSchedule schedule = LrSchedule::constant;  // or warmup + cosine decay to 0.1x

    void validate() const {
        require(learning_rate > 0.0, ErrorClass::config, "learning rate must be positive");
        require(batch_size >= 1 && epochs >= 0, ErrorClass::config, "invalid batch/epoch counts");
        require(alpha > 0.0, ErrorClass::config, "alpha must be positive");
        require(sink_k >= 1, ErrorClass::config, "sink K must be >= 1");
    }

    GraphConfig graph_config() const {
        GraphConfig g;
        g.strategy = strategy;
        g.sink_mode = sink_mode;
        g.sink_k = sink_k;
        g.weight_grad = weight_grad;
        return g;
    }
};

struct TrainSample {
    VisualInput visual;
    std::vector<int> query;
    GroundingLabel label;
};

struct LossReport {
    double kl_value = 0.0;
    std::vector<double> per_sample;
    long step = 0;
    bool finite = true;
};

/// KL(label || pred) over the label support with the prediction floored at
/// 1e-8 inside the log; tiny negative floating-point residue is clamped.
inline double kl_loss(const GroundingLabel& label, const PatchDistribution& pred) {
    require(label.values.size() == pred.values.size(), ErrorClass::domain,
            "kl_loss: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < label.values.size(); ++i) {
        double p = label.values[i];
        if (p <= 0.0) continue;
        kl += p * (std::log(p) - std::log(std::max(pred.values[i], kKlEps)));
    }
    return std::max(kl, 0.0);
}

/// Adam with fixed hyperparameters beta1=0.9, beta2=0.999, eps=1e-8.
class Adam {
public:
    explicit Adam(double lr) : lr_(lr) {}

    void set_learning_rate(double lr) { lr_ = lr; }

    void step(Model& model, const std::vector<Tensor>& grads) {
        if (m_.empty()) {
            for (const auto& [name, t] : model.params) {
                m_.emplace_back(t.rows, t.cols);
                v_.emplace_back(t.rows, t.cols);
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(0.9, double(t_));
        double bc2 = 1.0 - std::pow(0.999, double(t_));
        for (std::size_t p = 0; p < model.params.size(); ++p) {
            Tensor& w = model.params[p].second;
            const Tensor& g = grads[p];
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            for (std::size_t i = 0; i < w.size(); ++i) {
                double gi = g.data.empty() ? 0.0 : g.data[i];
                m.data[i] = 0.9 * m.data[i] + 0.1 * gi;
                v.data[i] = 0.999 * v.data[i] + 0.001 * gi * gi;
                double mhat = m.data[i] / bc1;
                double vhat = v.data[i] / bc2;
                w.data[i] -= lr_ * mhat / (std::sqrt(vhat) + 1e-8);
            }
        }
    }

    long steps_taken() const { return t_; }

private:
    double lr_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

namespace detail {

/// Deterministic parallel map over [0,n): results land in index order no
/// matter how many workers run.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 0) threads = int(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& th : pool) th.join();
}

struct SampleGrad {
    double loss = 0.0;
    bool finite = true;
    std::vector<Tensor> grads;  // aligned with model.params
};

inline SampleGrad sample_gradient(const Model& model, const TrainSample& sample,
                                  const GraphConfig& cfg) {
    SampleGrad out;
    Tape tape;
    std::vector<Var> params = register_params(tape, model);
    GraphOutputs g = build_grounding_graph(tape, model, params, sample.visual, sample.query,
                                           &sample.label, cfg);
    out.loss = tape.val(g.loss).data[0];
    if (!std::isfinite(out.loss)) {
        out.finite = false;
        return out;
    }
    tape.backward(g.loss);
    out.grads.reserve(params.size());
    for (Var p : params) out.grads.push_back(tape.grad(p));
    return out;
}

}  // namespace detail

/// One optimizer update on the mean KL over the batch. Per-sample gradients
/// are computed in parallel but reduced in sample order, so the result does
/// not depend on the worker count. A non-finite loss aborts the update.
inline LossReport train_step(Model& model, const std::vector<TrainSample>& batch,
                             const TrainConfig& config, Adam& optimizer) {
    require(!batch.empty(), ErrorClass::domain, "empty batch");
    GraphConfig gc = config.graph_config();
    std::vector<detail::SampleGrad> per_sample(batch.size());
    detail::parallel_for(int(batch.size()), config.threads, [&](int i) {
        per_sample[std::size_t(i)] = detail::sample_gradient(model, batch[std::size_t(i)], gc);
    });

    LossReport report;
    report.step = optimizer.steps_taken() + 1;
    double total = 0.0;
    for (const auto& s : per_sample) {
        report.per_sample.push_back(s.loss);
        report.finite = report.finite && s.finite;
        total += s.loss;
    }
    report.kl_value = total / double(batch.size());
    if (!report.finite) return report;  // abort the update, report it

    std::vector<Tensor> mean_grads;
    mean_grads.reserve(model.params.size());
    for (const auto& [name, t] : model.params) mean_grads.emplace_back(t.rows, t.cols);
    const double inv_n = 1.0 / double(batch.size());
    for (const auto& s : per_sample)  // fixed sample order
        for (std::size_t p = 0; p < mean_grads.size(); ++p) {
            if (s.grads[p].data.empty()) continue;
            for (std::size_t i = 0; i < mean_grads[p].size(); ++i)
                mean_grads[p].data[i] += inv_n * s.grads[p].data[i];
        }
    optimizer.step(model, mean_grads);
    return report;
}

struct TrainTelemetry {
    long step;
    double loss;
    std::optional<double> eval_accuracy;
};

/// Full training loop: seeded shuffling per epoch, fixed batch boundaries.
/// `evaluator` (when given) runs every eval_every steps and at the end.
inline std::vector<LossReport> train(
    Model& model, const std::vector<TrainSample>& data, const TrainConfig& config,
    const std::function<void(const TrainTelemetry&)>& telemetry = {},
    const std::function<double(const Model&)>& evaluator = {}) {
    config.validate();
    require(!data.empty(), ErrorClass::domain, "empty training set");
    Adam optimizer(config.learning_rate);
    Rng shuffle_rng(config.seed ^ 0x7261696e5f6f6bULL);
    std::vector<LossReport> history;
    std::vector<int> order(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) order[i] = int(i);

    const long steps_per_epoch = long((data.size() + std::size_t(config.batch_size) - 1) /
                                      std::size_t(config.batch_size));
    long total_steps = steps_per_epoch * config.epochs;
    if (config.max_steps > 0) total_steps = std::min(total_steps, long(config.max_steps));
    const long warmup = std::max<long>(1, total_steps / 50);

    long step = 0;
    bool done = false;
    for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t b = 0; b < data.size() && !done; b += std::size_t(config.batch_size)) {
            std::vector<TrainSample> batch;
            for (std::size_t i = b; i < std::min(b + std::size_t(config.batch_size), data.size()); ++i)
                batch.push_back(data[std::size_t(order[i])]);
            if (config.schedule == LrSchedule::cosine) {
                double lr = config.learning_rate;
                if (step < warmup) {
                    lr *= double(step + 1) / double(warmup);
                } else {
                    double frac = double(step - warmup) / double(std::max<long>(1, total_steps - warmup));
                    lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * std::min(frac, 1.0)));
                }
                optimizer.set_learning_rate(lr);
            }
            LossReport report = train_step(model, batch, config, optimizer);
            ++step;
            history.push_back(report);
            if (telemetry) {
                TrainTelemetry t{step, report.kl_value, std::nullopt};
                if (evaluator && config.eval_every > 0 && step % config.eval_every == 0)
                    t.eval_accuracy = evaluator(model);
                telemetry(t);
            }
            if (config.max_steps > 0 && step >= config.max_steps) done = true;
        }
    }
    return history;
}

struct GradCheckReport {
    bool pass = true;
    double worst_rel = 0.0;
    std::string worst_tensor;
    int checked_coords = 0;
    std::vector<std::pair<std::string, double>> per_tensor_worst;
};

/// Central-difference check of the analytic gradients of the full pipeline
/// loss, per parameter tensor on a deterministic sample of coordinates. In the
/// stop-gradient regime the oracle freezes the head weights at their base
/// values, which is exactly the objective that regime optimizes.
/// `corrupt_tensor` is a test hook that perturbs one tensor's analytic
/// gradient so the negative control fails.
inline GradCheckReport grad_check(const Model& model, const TrainSample& sample,
                                  const TrainConfig& config, double tolerance = 1e-4,
                                  int coords_per_tensor = 4,
                                  const std::string& corrupt_tensor = {}) {
    GraphConfig gc = config.graph_config();
    std::vector<double> frozen;
    if (!config.weight_grad && config.strategy != Strategy::vanilla &&
        config.strategy != Strategy::uniform) {
        Tape t0(false);
        std::vector<Var> p0 = register_params(t0, model);
        GraphConfig probe = gc;
        probe.weight_grad = true;
        GraphOutputs g0 = build_grounding_graph(t0, model, p0, sample.visual, sample.query,
                                                &sample.label, probe);
        frozen = t0.val(g0.head_w).data;
        gc.frozen_head_weights = &frozen;
    }

    Tape tape;
    std::vector<Var> params = register_params(tape, model);
    GraphOutputs g = build_grounding_graph(tape, model, params, sample.visual, sample.query,
                                           &sample.label, gc);
    tape.backward(g.loss);

    auto loss_at = [&](std::size_t pi, std::size_t ci, double delta) {
        Tape t2(false);
        std::vector<Var> vars;
        vars.reserve(model.params.size());
        for (std::size_t k = 0; k < model.params.size(); ++k) {
            Tensor t = model.params[k].second;
            if (k == pi) t.data[ci] += delta;
            vars.push_back(t2.leaf(t));
        }
        GraphOutputs g2 =
            build_grounding_graph(t2, model, vars, sample.visual, sample.query, &sample.label, gc);
        return t2.val(g2.loss).data[0];
    };

    // central differences at step 1e-3; the 5-point stencil cancels the h^2
    // truncation term, which otherwise dominates the comparison
    const double h = 1e-3;
    auto central = [&](std::size_t pi, std::size_t ci) {
        double f2p = loss_at(pi, ci, 2 * h), fp = loss_at(pi, ci, h);
        double fm = loss_at(pi, ci, -h), f2m = loss_at(pi, ci, -2 * h);
        return (-f2p + 8.0 * fp - 8.0 * fm + f2m) / (12.0 * h);
    };
    GradCheckReport report;
    for (std::size_t pi = 0; pi < model.params.size(); ++pi) {
        const std::string& name = model.params[pi].first;
        Tensor analytic = tape.grad(params[pi]);
        if (analytic.data.empty())
            analytic = Tensor(model.params[pi].second.rows, model.params[pi].second.cols);
        if (name == corrupt_tensor)
            for (double& v : analytic.data) v = v * 1.5 + 0.05;

        // deterministic coordinate sample: the largest-gradient entries plus
        // evenly spaced ones
        std::vector<std::size_t> coords;
        std::vector<std::size_t> by_mag(analytic.size());
        for (std::size_t i = 0; i < by_mag.size(); ++i) by_mag[i] = i;
        std::stable_sort(by_mag.begin(), by_mag.end(), [&](std::size_t a, std::size_t b) {
            return std::fabs(analytic.data[a]) > std::fabs(analytic.data[b]);
        });
        for (int i = 0; i < coords_per_tensor / 2 && i < int(by_mag.size()); ++i)
            coords.push_back(by_mag[std::size_t(i)]);
        std::size_t stride = std::max<std::size_t>(1, analytic.size() / std::size_t(coords_per_tensor));
        for (std::size_t i = 0; i < analytic.size() && int(coords.size()) < coords_per_tensor;
             i += stride)
            if (std::find(coords.begin(), coords.end(), i) == coords.end()) coords.push_back(i);

        double tensor_worst = 0.0;
        for (std::size_t ci : coords) {
            double numeric = central(pi, ci);
            double a = analytic.data[ci];
            if (std::fabs(a) < 1e-12 && std::fabs(numeric) < 1e-12) {
                ++report.checked_coords;
                continue;
            }
            double rel = std::fabs(a - numeric) / std::max(std::fabs(a), std::fabs(numeric));
            tensor_worst = std::max(tensor_worst, rel);
            ++report.checked_coords;
            if (rel > report.worst_rel) {
                report.worst_rel = rel;
                report.worst_tensor = name;
            }
        }
        report.per_tensor_worst.emplace_back(name, tensor_worst);
        if (tensor_worst > tolerance) report.pass = false;
    }
    return report;
}

/// Convenience: the non-differentiable inference pipeline for one input, used
/// by evaluation (fast forward + partial rows + plain aggregation).
inline PatchDistribution ground_distribution(const Model& model, const VisualInput& visual,
                                             const std::vector<int>& query, const PatchGrid& grid,
                                             Strategy strategy, SinkMode sink_mode, int sink_k) {
    ForwardOptions opts;
    opts.mode = ForwardMode::fast;
    ForwardTrace trace = forward(model, visual, query, opts);
    const bool needs_query = strategy == Strategy::all_query || strategy == Strategy::sink ||
                             strategy == Strategy::soft || strategy == Strategy::vanilla;
    anchor_rows_partial(model, trace, needs_query);
    if (strategy == Strategy::vanilla)
        return vanilla_aggregate(trace, trace.layout, grid);
    SinkSelection sel;
    const SinkSelection* selp = nullptr;
    if (strategy == Strategy::sink) {
        sel = select_sinks(visual_sink_scores(trace, trace.layout), sink_mode, sink_k);
        selp = &sel;
    }
    HeadWeights hw = head_weights(trace, trace.layout, strategy, selp);
    return aggregate(trace.anchor_attn, hw, grid);
}

}  // namespace aima
