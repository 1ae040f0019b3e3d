#pragma once

#include <array>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "aima/checkpoint.hpp"
#include "aima/grounding.hpp"
#include "aima/synthdata.hpp"
#include "aima/training.hpp"

namespace aima {

// Relax@k search cap; predictions not contained even at k=8 report infinity.
constexpr int kRelaxCap = 8;
constexpr int kRelaxInf = -1;

struct StrategyConfig {
    Strategy strategy = Strategy::sink;
    SinkMode sink_mode = SinkMode::global;
    int sink_k = 1;
    ClickMode click = ClickMode::argmax_center;
};

struct EvalRecord {
    std::uint64_t scene_id = 0;
    int step = 1;
    Point predicted;  // global pixels
    bool hit = false;
    int min_relax = kRelaxInf;  // smallest k with expand_bbox(k) containing the point
};

/// Histogram over min_relax values: slots 0..kRelaxCap, last slot = infinity.
struct RelaxBins {
    std::array<int, kRelaxCap + 2> hist{};

    void add(int min_relax) { hist[min_relax == kRelaxInf ? kRelaxCap + 1 : std::size_t(min_relax)]++; }
    int at_exactly(int k) const { return hist[std::size_t(k)]; }
    // Table-4-style bins: Relax@1, Relax@2, Relax@5 = {3,4,5}
    int relax1() const { return hist[1]; }
    int relax2() const { return hist[2]; }
    int relax5() const { return hist[3] + hist[4] + hist[5]; }
    int beyond() const {
        int n = hist[kRelaxCap + 1];
        for (int k = 6; k <= kRelaxCap; ++k) n += hist[std::size_t(k)];
        return n;
    }
    int misses() const { return relax1() + relax2() + relax5() + beyond(); }
};

struct TwoStepReport {
    int recovered = 0;  // wrong at step one, correct at step two
    int lost = 0;       // correct at step one, wrong at step two
    double accuracy_step1 = 0.0;
    double accuracy_step2 = 0.0;
    RelaxBins relax_step1;
    RelaxBins relax_step2;
};

struct EvalReport {
    int count = 0;
    double accuracy = 0.0;  // final-step accuracy
    RelaxBins relax;        // final-step relax bins
    bool has_two_step = false;
    TwoStepReport two_step;
};

inline int min_relax_of(const PatchGrid& grid, const BBox& gt, Point predicted) {
    for (int k = 0; k <= kRelaxCap; ++k)
        if (expand_bbox(grid, gt, k).contains(predicted)) return k;
    return kRelaxInf;
}

/// render -> forward -> head weighting -> aggregate -> click -> hit test.
inline EvalRecord ground_one_step(const Model& model, const Scene& scene,
                                  const DifficultyConfig& d, const StrategyConfig& cfg) {
    RenderSpec spec;
    spec.cells_per_patch = d.cells_per_patch;
    RenderedView view = render(scene, spec);
    PatchDistribution dist = ground_distribution(model, view.tokens, scene.query_tokens, view.grid,
                                                 cfg.strategy, cfg.sink_mode, cfg.sink_k);
    Point global = map_to_global(predict_click(dist, cfg.click), view.region);

    EvalRecord rec;
    rec.scene_id = scene.seed;
    rec.step = 1;
    rec.predicted = global;
    rec.hit = scene.gt_bbox.contains(global);
    rec.min_relax = min_relax_of(view.grid, scene.gt_bbox, global);
    return rec;
}

/// Step one, then a crop planned at the step-one point, re-rendered at the
/// zoomed granularity, re-grounded, and mapped back to the global frame.
inline std::pair<EvalRecord, EvalRecord> ground_two_step(const Model& model, const Scene& scene,
                                                         const DifficultyConfig& d,
                                                         const StrategyConfig& cfg, int crop_px,
                                                         double zoom) {
    EvalRecord one = ground_one_step(model, scene, d, cfg);

    PatchGrid global_grid =
        PatchGrid::make(scene.image_w(), scene.image_h(), d.cells_per_patch * scene.cell_px);
    RenderSpec spec;
    spec.cells_per_patch = d.cells_per_patch;
    spec.crop = plan_crop(global_grid, one.predicted, crop_px, zoom);
    RenderedView view = render(scene, spec);
    PatchDistribution dist = ground_distribution(model, view.tokens, scene.query_tokens, view.grid,
                                                 cfg.strategy, cfg.sink_mode, cfg.sink_k);
    Point global = map_to_global(predict_click(dist, cfg.click), view.region);

    EvalRecord two;
    two.scene_id = scene.seed;
    two.step = 2;
    two.predicted = global;
    two.hit = scene.gt_bbox.contains(global);
    two.min_relax = min_relax_of(global_grid, scene.gt_bbox, global);
    return {one, two};
}

struct TwoStepParams {
    int crop_px = 0;  // 0 = 4 first-pass patches
    double zoom = 2.0;
};

/// Aggregate metrics over a corpus slice; scenes evaluate in parallel but the
/// reduction runs in corpus order, so worker count never changes the report.
inline EvalReport evaluate(const Model& model, const std::vector<Scene>& scenes,
                           const DifficultyConfig& d, const StrategyConfig& cfg,
                           const std::optional<TwoStepParams>& two_step = std::nullopt,
                           int threads = 0) {
    require(!scenes.empty(), ErrorClass::domain, "empty evaluation corpus");
    int crop_px = 0;
    if (two_step) {
        crop_px = two_step->crop_px > 0 ? two_step->crop_px
                                        : 4 * d.cells_per_patch * scenes.front().cell_px;
    }

    std::vector<std::pair<EvalRecord, EvalRecord>> results(scenes.size());
    detail::parallel_for(int(scenes.size()), threads, [&](int i) {
        const Scene& s = scenes[std::size_t(i)];
        if (two_step)
            results[std::size_t(i)] = ground_two_step(model, s, d, cfg, crop_px, two_step->zoom);
        else
            results[std::size_t(i)].first = ground_one_step(model, s, d, cfg);
    });

    EvalReport report;
    report.count = int(scenes.size());
    report.has_two_step = bool(two_step);
    int hits1 = 0, hits2 = 0;
    for (const auto& [one, two] : results) {
        hits1 += one.hit;
        if (two_step) {
            hits2 += two.hit;
            report.two_step.recovered += !one.hit && two.hit;
            report.two_step.lost += one.hit && !two.hit;
            report.two_step.relax_step1.add(one.min_relax);
            report.two_step.relax_step2.add(two.min_relax);
        }
    }
    if (two_step) {
        report.accuracy = double(hits2) / report.count;
        report.relax = report.two_step.relax_step2;
        report.two_step.accuracy_step1 = double(hits1) / report.count;
        report.two_step.accuracy_step2 = report.accuracy;
    } else {
        report.accuracy = double(hits1) / report.count;
        for (const auto& [one, two] : results) report.relax.add(one.min_relax);
    }
    return report;
}

inline nlohmann::json relax_to_json(const RelaxBins& r) {
    return nlohmann::json{{"relax1", r.relax1()},
                          {"relax2", r.relax2()},
                          {"relax5", r.relax5()},
                          {"beyond", r.beyond()},
                          {"total_misses", r.misses()},
                          {"hist", std::vector<int>(r.hist.begin(), r.hist.end())}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j{{"format", "aima-eval-v1"},
                     {"count", r.count},
                     {"accuracy", r.accuracy},
                     {"relax", relax_to_json(r.relax)}};
    if (r.has_two_step) {
        j["two_step"] = {{"recovered", r.two_step.recovered},
                         {"lost", r.two_step.lost},
                         {"accuracy_step1", r.two_step.accuracy_step1},
                         {"accuracy_step2", r.two_step.accuracy_step2},
                         {"relax_step1", relax_to_json(r.two_step.relax_step1)},
                         {"relax_step2", relax_to_json(r.two_step.relax_step2)}};
    }
    return j;
}

inline std::string report_to_table(const EvalReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    auto relax_row = [&](const char* name, const RelaxBins& b, double acc) {
        os << std::left << std::setw(16) << name << std::right << std::setw(8) << b.relax1()
           << std::setw(8) << b.relax2() << std::setw(8) << b.relax5() << std::setw(8)
           << b.misses() << std::setw(9) << acc * 100.0 << "\n";
    };
    os << std::left << std::setw(16) << "" << std::right << std::setw(8) << "Relax@1"
       << std::setw(8) << "Relax@2" << std::setw(8) << "Relax@5" << std::setw(8) << "Total"
       << std::setw(9) << "Acc.%" << "\n";
    if (r.has_two_step) {
        relax_row("1-step", r.two_step.relax_step1, r.two_step.accuracy_step1);
        relax_row("2-step", r.two_step.relax_step2, r.two_step.accuracy_step2);
        os << "Recovered " << r.two_step.recovered << ", Lost " << r.two_step.lost << " (N="
           << r.count << ")\n";
    } else {
        relax_row("1-step", r.relax, r.accuracy);
    }
    return os.str();
}

// ---- dataset-to-training plumbing ------------------------------------------

inline TrainSample to_train_sample(const Scene& scene, const DifficultyConfig& d, double alpha,
                                   bool flat_labels) {
    RenderSpec spec;
    spec.cells_per_patch = d.cells_per_patch;
    RenderedView view = render(scene, spec);
    TrainSample sample;
    sample.visual = view.tokens;
    sample.query = scene.query_tokens;
    sample.label = flat_labels ? flat_patch_labels(view.grid, scene.gt_bbox)
                               : patch_labels(view.grid, scene.gt_bbox, alpha);
    return sample;
}

inline std::vector<TrainSample> to_train_samples(const std::vector<Scene>& scenes,
                                                 const DifficultyConfig& d, double alpha,
                                                 bool flat_labels) {
    std::vector<TrainSample> samples;
    samples.reserve(scenes.size());
    for (const Scene& s : scenes) samples.push_back(to_train_sample(s, d, alpha, flat_labels));
    return samples;
}

inline StrategyConfig eval_config_of(const TrainConfig& t) {
    StrategyConfig s;
    s.strategy = t.strategy;
    s.sink_mode = t.sink_mode;
    s.sink_k = t.sink_k;
    return s;
}

// ---- ablation ---------------------------------------------------------------

struct AblationArm {
    std::string name;
    Strategy strategy = Strategy::sink;
    SinkMode sink_mode = SinkMode::global;
    int sink_k = 1;
    bool flat_labels = false;
};

/// The standard eight arms: the vanilla baseline, the anchored strategies
/// without sinks, both sink modes, soft matching, and flat-vs-weighted labels.
inline std::vector<AblationArm> default_ablation_arms() {
    return {
        {"vanilla", Strategy::vanilla, SinkMode::global, 1, false},
        {"anchored-uniform", Strategy::uniform, SinkMode::global, 1, false},
        {"all_query", Strategy::all_query, SinkMode::global, 1, false},
        {"anchor", Strategy::anchor, SinkMode::global, 1, false},
        {"sink-global-top1", Strategy::sink, SinkMode::global, 1, false},
        {"sink-layerwise-top1", Strategy::sink, SinkMode::layerwise, 1, false},
        {"soft", Strategy::soft, SinkMode::global, 1, false},
        {"sink-global-top1-flat-labels", Strategy::sink, SinkMode::global, 1, true},
    };
}

struct AblationResult {
    std::string arm;
    std::vector<double> per_seed_accuracy;
    double mean = 0.0;
    double spread = 0.0;  // max - min over seeds
};

/// Trains one model per (arm, seed) on the train scenes and evaluates each on
/// the eval scenes; rows come back in arm order with mean and max-min spread.
inline std::vector<AblationResult> ablation_run(const std::vector<Scene>& train_scenes,
                                                const std::vector<Scene>& eval_scenes,
                                                const DifficultyConfig& d,
                                                const std::vector<AblationArm>& arms, int seeds,
                                                const TrainConfig& base,
                                                const std::function<void(const std::string&)>& log = {}) {
    require(!arms.empty(), ErrorClass::domain, "ablation needs at least one arm");
    require(seeds >= 1, ErrorClass::domain, "ablation needs at least one seed");
    std::vector<AblationResult> results;
    for (const AblationArm& arm : arms) {
        AblationResult res;
        res.arm = arm.name;
        for (int s = 0; s < seeds; ++s) {
            TrainConfig cfg = base;
            cfg.strategy = arm.strategy;
            cfg.sink_mode = arm.sink_mode;
            cfg.sink_k = arm.sink_k;
            cfg.flat_labels = arm.flat_labels;
            cfg.seed = base.seed + std::uint64_t(s);

            ModelConfig mc = model_config_for(d, cfg.seed);
            Model model = init_model(mc);
            std::vector<TrainSample> samples =
                to_train_samples(train_scenes, d, cfg.alpha, cfg.flat_labels);
            train(model, samples, cfg);

            StrategyConfig ec;
            ec.strategy = arm.strategy;
            ec.sink_mode = arm.sink_mode;
            ec.sink_k = arm.sink_k;
            EvalReport report = evaluate(model, eval_scenes, d, ec, std::nullopt, cfg.threads);
            res.per_seed_accuracy.push_back(report.accuracy);
            if (log) {
                std::ostringstream os;
                os << arm.name << " seed " << cfg.seed << ": acc " << std::fixed
                   << std::setprecision(4) << report.accuracy;
                log(os.str());
            }
        }
        double lo = res.per_seed_accuracy[0], hi = lo, sum = 0.0;
        for (double a : res.per_seed_accuracy) {
            lo = std::min(lo, a);
            hi = std::max(hi, a);
            sum += a;
        }
        res.mean = sum / double(res.per_seed_accuracy.size());
        res.spread = hi - lo;
        results.push_back(res);
    }
    return results;
}

inline nlohmann::json ablation_to_json(const std::vector<AblationResult>& results) {
    nlohmann::json arms = nlohmann::json::array();
    for (const AblationResult& r : results)
        arms.push_back({{"arm", r.arm},
                        {"mean_accuracy", r.mean},
                        {"spread", r.spread},
                        {"per_seed", r.per_seed_accuracy}});
    return nlohmann::json{{"format", "aima-ablation-v1"}, {"arms", arms}};
}

inline std::string ablation_to_table(const std::vector<AblationResult>& results) {
    std::ostringstream os;
    os << std::left << std::setw(32) << "arm" << std::right << std::setw(10) << "mean"
       << std::setw(10) << "spread" << "  per-seed\n";
    os << std::fixed << std::setprecision(4);
    for (const AblationResult& r : results) {
        os << std::left << std::setw(32) << r.arm << std::right << std::setw(10) << r.mean
           << std::setw(10) << r.spread << "  ";
        for (double a : r.per_seed_accuracy) os << a << " ";
        os << "\n";
    }
    return os.str();
}

// ---- exports ---------------------------------------------------------------

/// Binary P5 graymap, one pixel per patch, max value mapped to 255; raw values
/// go to a JSON sidecar at path + ".json".
inline void export_heatmap(const std::vector<double>& values, const PatchGrid& grid,
                           const std::string& path) {
    require(int(values.size()) == grid.size(), ErrorClass::domain,
            "heatmap length does not match the grid");
    double mx = 0.0;
    for (double v : values) mx = std::max(mx, v);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(bool(f), ErrorClass::io, "cannot open heatmap for writing: " + path);
    f << "P5\n" << grid.cols << " " << grid.rows << "\n255\n";
    for (double v : values) {
        unsigned char px = mx > 0.0 ? (unsigned char)(std::lround(v / mx * 255.0)) : 0;
        f.write(reinterpret_cast<const char*>(&px), 1);
    }
    require(bool(f), ErrorClass::io, "short write to heatmap");

    nlohmann::json side{{"format", "aima-heatmap-v1"},
                        {"rows", grid.rows},
                        {"cols", grid.cols},
                        {"values", values}};
    std::ofstream sf(path + ".json", std::ios::binary | std::ios::trunc);
    require(bool(sf), ErrorClass::io, "cannot open heatmap sidecar for writing");
    sf << side.dump(2) << "\n";
}

inline void export_heatmap(const PatchDistribution& dist, const std::string& path) {
    export_heatmap(dist.values, dist.grid, path);
}
inline void export_heatmap(const GroundingLabel& label, const std::string& path) {
    export_heatmap(label.values, label.grid, path);
}

/// Per query token, the two visual-correlation profiles: one from hidden-state
/// cosine mass, one from attention mass, both normalized to sum 1.
struct TokenCorrelationReport {
    std::vector<double> embedding_profile;
    std::vector<double> attention_profile;
};

inline TokenCorrelationReport token_correlation_report(const ForwardTrace& trace,
                                                       const SequenceLayout& layout,
                                                       const std::string& path = {}) {
    require(trace.has_query_rows(), ErrorClass::domain,
            "token correlation needs query attention rows");
    require(layout.query_len >= 1, ErrorClass::domain, "token correlation needs a query");
    TokenCorrelationReport rep;
    SinkScores scores = visual_sink_scores(trace, layout);
    rep.embedding_profile = normalize_nonneg(scores.summed);

    std::vector<double> attn_mass(std::size_t(layout.query_len), 0.0);
    for (const auto& layer : trace.query_attn)
        for (const Tensor& rows : layer)
            for (int i = 0; i < layout.query_len; ++i)
                for (int j = 0; j < layout.visual_len; ++j)
                    attn_mass[std::size_t(i)] += rows.at(i, j);
    rep.attention_profile = normalize_nonneg(attn_mass);

    if (!path.empty()) {
        nlohmann::json j{{"format", "aima-token-correlation-v1"},
                         {"query_len", layout.query_len},
                         {"embedding_profile", rep.embedding_profile},
                         {"attention_profile", rep.attention_profile}};
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        require(bool(f), ErrorClass::io, "cannot open token report for writing: " + path);
        f << j.dump(2) << "\n";
    }
    return rep;
}

}  // namespace aima
