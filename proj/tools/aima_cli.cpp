// Command-line front end: dataset generation, training, evaluation, single
// scene grounding, ablations, gradient checking and token analysis.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "aima/config.hpp"
#include "aima/harness.hpp"

using namespace aima;

namespace {

struct CommonTrainArgs {
    std::string data;
    std::string config_path;
    std::string strategy = "sink";
    std::string sink_mode = "global";
    int sink_k = 1;
    bool flat_labels = false;
    std::string split = "train";
};

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig t;
    t.learning_rate = cfg.get_double("learning_rate", t.learning_rate);
    t.batch_size = int(cfg.get_int("batch_size", t.batch_size));
    t.epochs = int(cfg.get_int("epochs", t.epochs));
    t.alpha = cfg.get_double("alpha", t.alpha);
    t.strategy = parse_strategy(cfg.get_string("strategy", strategy_name(t.strategy)));
    t.sink_mode = parse_sink_mode(cfg.get_string("sink_mode", sink_mode_name(t.sink_mode)));
    t.sink_k = int(cfg.get_int("sink_k", t.sink_k));
    t.weight_grad = cfg.get_bool("weight_grad", t.weight_grad);
    t.flat_labels = cfg.get_bool("flat_labels", t.flat_labels);
    t.seed = std::uint64_t(cfg.get_int("seed", 7));
    t.eval_every = int(cfg.get_int("eval_every", t.eval_every));
    t.threads = int(cfg.get_int("threads", t.threads));
    t.max_steps = int(cfg.get_int("max_steps", t.max_steps));
    t.schedule = parse_schedule(cfg.get_string("schedule", schedule_name(t.schedule)));
    return t;
}

ModelConfig model_config_from(const Config& cfg, const DifficultyConfig& d, std::uint64_t seed) {
    ModelConfig mc = model_config_for(d, seed);
    mc.layers = int(cfg.get_int("layers", mc.layers));
    mc.heads = int(cfg.get_int("heads", mc.heads));
    mc.dim = int(cfg.get_int("dim", mc.dim));
    mc.max_query_len = int(cfg.get_int("max_query_len", mc.max_query_len));
    return mc;
}

Config load_config_or_default(const std::string& path) {
    if (path.empty()) return Config{};
    return Config::load(path);
}

Scene find_scene(const std::vector<Scene>& scenes, std::uint64_t scene_id) {
    for (const Scene& s : scenes)
        if (s.seed == scene_id) return s;
    fail_domain("scene id " + std::to_string(scene_id) + " not found in corpus");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(bool(f), ErrorClass::io, "cannot open for writing: " + path);
    f << text;
    require(bool(f), ErrorClass::io, "short write: " + path);
}

int cmd_gen(int count, std::uint64_t seed, const std::string& difficulty, const std::string& out,
            bool holdout) {
    DifficultyConfig d = parse_difficulty(difficulty);
    Manifest m = gen_dataset(count, seed, d, out, holdout);
    std::cout << "wrote " << m.count << " scenes (" << d.name << ") to " << out << "\n"
              << "splits: train " << m.train.end - m.train.begin << ", val "
              << m.val.end - m.val.begin << ", test " << m.test.end - m.test.begin << "\n"
              << "target-attribute chi2(train,val+test) = " << m.target_attr_chi2 << "\n";
    return 0;
}

int cmd_train(const CommonTrainArgs& args, const std::string& out, const std::string& log_path) {
    Config cfg = load_config_or_default(args.config_path);
    TrainConfig t = train_config_from(cfg);
    t.strategy = parse_strategy(args.strategy);
    t.sink_mode = parse_sink_mode(args.sink_mode);
    t.sink_k = args.sink_k;
    if (args.flat_labels) t.flat_labels = true;
    t.validate();

    Manifest manifest = load_manifest(args.data);
    DifficultyConfig d = parse_difficulty(manifest.difficulty);
    std::vector<Scene> scenes = load_corpus(args.data, args.split);
    std::vector<TrainSample> samples = to_train_samples(scenes, d, t.alpha, t.flat_labels);

    Model model = init_model(model_config_from(cfg, d, t.seed));
    std::cout << "training " << strategy_name(t.strategy) << " on " << samples.size()
              << " scenes (" << model.parameter_count() << " parameters)\n";

    std::vector<Scene> val_scenes;
    if (t.eval_every > 0 && manifest.val.end > manifest.val.begin)
        val_scenes = load_corpus(args.data, "val");

    std::ofstream log;
    std::string lp = log_path.empty() ? out + ".log" : log_path;
    log.open(lp, std::ios::app);
    require(bool(log), ErrorClass::io, "cannot open telemetry log: " + lp);

    StrategyConfig ec = eval_config_of(t);
    train(
        model, samples, t,
        [&](const TrainTelemetry& tel) {
            log << "step=" << tel.step << " loss=" << tel.loss;
            if (tel.eval_accuracy) log << " eval_acc=" << *tel.eval_accuracy;
            log << "\n";
            log.flush();
        },
        val_scenes.empty() ? std::function<double(const Model&)>{}
                           : [&](const Model& m2) {
                                 return evaluate(m2, val_scenes, d, ec, std::nullopt, t.threads)
                                     .accuracy;
                             });
    save_checkpoint(model, out);
    std::cout << "saved checkpoint to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split,
             const std::string& strategy, const std::string& sink_mode, int sink_k, bool two_step,
             int crop_px, double zoom, const std::string& report_path, int threads) {
    Model model = load_checkpoint(ckpt);
    Manifest manifest = load_manifest(data);
    DifficultyConfig d = parse_difficulty(manifest.difficulty);
    std::vector<Scene> scenes = load_corpus(data, split);

    StrategyConfig cfg;
    cfg.strategy = parse_strategy(strategy);
    cfg.sink_mode = parse_sink_mode(sink_mode);
    cfg.sink_k = sink_k;

    std::optional<TwoStepParams> params;
    if (two_step) params = TwoStepParams{crop_px, zoom};
    EvalReport report = evaluate(model, scenes, d, cfg, params, threads);
    std::cout << report_to_table(report);
    if (!report_path.empty()) write_text(report_path, report_to_json(report).dump(2) + "\n");
    return 0;
}

int cmd_ground(const std::string& ckpt, const std::string& data, std::uint64_t scene_id,
               const std::string& heatmap_path, const std::string& strategy,
               const std::string& sink_mode, int sink_k) {
    Model model = load_checkpoint(ckpt);
    Manifest manifest = load_manifest(data);
    DifficultyConfig d = parse_difficulty(manifest.difficulty);
    Scene scene = find_scene(load_corpus(data, "all"), scene_id);

    StrategyConfig cfg;
    cfg.strategy = parse_strategy(strategy);
    cfg.sink_mode = parse_sink_mode(sink_mode);
    cfg.sink_k = sink_k;

    RenderSpec spec;
    spec.cells_per_patch = d.cells_per_patch;
    RenderedView view = render(scene, spec);
    PatchDistribution dist = ground_distribution(model, view.tokens, scene.query_tokens, view.grid,
                                                 cfg.strategy, cfg.sink_mode, cfg.sink_k);
    Point click = map_to_global(predict_click(dist, cfg.click), view.region);
    bool hit = scene.gt_bbox.contains(click);
    std::cout << "scene " << scene_id << ": click (" << click.x << ", " << click.y << ") "
              << (hit ? "HIT" : "MISS") << " gt [" << scene.gt_bbox.x1 << "," << scene.gt_bbox.y1
              << "," << scene.gt_bbox.x2 << "," << scene.gt_bbox.y2 << "]\n";
    if (!heatmap_path.empty()) {
        export_heatmap(dist, heatmap_path);
        std::cout << "heatmap written to " << heatmap_path << "\n";
    }
    return 0;
}

int cmd_ablate(const std::string& data, const std::string& arms_path, int seeds,
               const std::string& report_path, const std::string& config_path) {
    Config cfg = load_config_or_default(config_path);
    TrainConfig base = train_config_from(cfg);
    base.validate();

    Manifest manifest = load_manifest(data);
    DifficultyConfig d = parse_difficulty(manifest.difficulty);
    std::vector<Scene> train_scenes = load_corpus(data, "train");
    std::vector<Scene> eval_scenes = load_corpus(data, "heldout");

    std::vector<AblationArm> arms;
    if (arms_path == "default") {
        arms = default_ablation_arms();
    } else {
        std::ifstream f(arms_path);
        require(bool(f), ErrorClass::io, "cannot open arms file: " + arms_path);
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty() || line[0] == '#') continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                fail_format(std::string("bad arm spec: ") + e.what());
            }
            AblationArm arm;
            arm.name = j.at("name").get<std::string>();
            arm.strategy = parse_strategy(j.at("strategy").get<std::string>());
            arm.sink_mode = parse_sink_mode(j.value("sink_mode", "global"));
            arm.sink_k = j.value("sink_k", 1);
            arm.flat_labels = j.value("flat_labels", false);
            arms.push_back(arm);
        }
    }
    require(!arms.empty(), ErrorClass::config, "no arms specified");

    auto results = ablation_run(train_scenes, eval_scenes, d, arms, seeds, base,
                                [](const std::string& line) { std::cout << line << "\n"; });
    std::cout << ablation_to_table(results);
    if (!report_path.empty()) write_text(report_path, ablation_to_json(results).dump(2) + "\n");
    return 0;
}

int cmd_gradcheck(const std::string& config_path, double tolerance) {
    Config cfg = load_config_or_default(config_path);
    // tiny setup: small transformer over a 4x4 grid scene
    DifficultyConfig d = DifficultyConfig::easy();
    d.fine_cells = 16;
    d.cells_per_patch = 4;
    d.min_widgets = 1;
    d.max_widgets = 2;
    d.min_side = 4;
    d.max_side = 8;

    ModelConfig mc = model_config_for(d, std::uint64_t(cfg.get_int("seed", 42)));
    mc.layers = int(cfg.get_int("layers", 2));
    mc.heads = int(cfg.get_int("heads", 2));
    mc.dim = int(cfg.get_int("dim", 16));
    Model model = init_model(mc);

    Scene scene = gen_scene(std::uint64_t(cfg.get_int("scene_seed", 3)), d);
    TrainConfig t = train_config_from(cfg);
    TrainSample sample = to_train_sample(scene, d, t.alpha, t.flat_labels);

    bool all_pass = true;
    for (bool wgrad : {true, false}) {
        TrainConfig regime = t;
        regime.weight_grad = wgrad;
        GradCheckReport r = grad_check(model, sample, regime, tolerance);
        std::cout << "regime weight_grad=" << (wgrad ? "true" : "false") << ": "
                  << (r.pass ? "PASS" : "FAIL") << " worst_rel=" << r.worst_rel << " ("
                  << (r.worst_tensor.empty() ? "-" : r.worst_tensor) << ", " << r.checked_coords
                  << " coords)\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

int cmd_analyze_tokens(const std::string& ckpt, const std::string& data, std::uint64_t scene_id,
                       const std::string& out) {
    Model model = load_checkpoint(ckpt);
    Manifest manifest = load_manifest(data);
    DifficultyConfig d = parse_difficulty(manifest.difficulty);
    Scene scene = find_scene(load_corpus(data, "all"), scene_id);

    RenderSpec spec;
    spec.cells_per_patch = d.cells_per_patch;
    RenderedView view = render(scene, spec);
    ForwardOptions opts;
    opts.mode = ForwardMode::fast;
    ForwardTrace trace = forward(model, view.tokens, scene.query_tokens, opts);
    anchor_rows_partial(model, trace, /*with_query_rows=*/true);
    TokenCorrelationReport rep = token_correlation_report(trace, trace.layout, out);
    std::cout << "token profiles (embedding | attention):\n";
    for (std::size_t i = 0; i < rep.embedding_profile.size(); ++i)
        std::cout << "  token " << i << ": " << rep.embedding_profile[i] << " | "
                  << rep.attention_profile[i] << "\n";
    std::cout << "report written to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"anchored attention grounding toolkit"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic scene corpus");
    int gen_count = 100;
    std::uint64_t gen_seed = 0;
    std::string gen_difficulty = "easy", gen_out;
    bool gen_holdout = false;
    gen->add_option("--count", gen_count, "number of scenes")->required();
    gen->add_option("--seed", gen_seed, "base seed")->required();
    gen->add_option("--difficulty", gen_difficulty, "easy|hard");
    gen->add_option("--out", gen_out, "corpus output path")->required();
    gen->add_flag("--holdout-combos", gen_holdout,
                  "reserve target attribute combos per split");

    // train
    auto* tr = app.add_subcommand("train", "train a model on a corpus");
    CommonTrainArgs ta;
    std::string tr_out, tr_log;
    tr->add_option("--data", ta.data, "corpus path")->required();
    tr->add_option("--config", ta.config_path, "key=value config file");
    tr->add_option("--strategy", ta.strategy, "vanilla|uniform|all_query|anchor|sink|soft");
    tr->add_option("--sink-mode", ta.sink_mode, "global|layerwise");
    tr->add_option("--sink-k", ta.sink_k, "top-K sink tokens");
    tr->add_flag("--flat-labels", ta.flat_labels, "uniform labels over overlapping patches");
    tr->add_option("--split", ta.split, "corpus split to train on");
    tr->add_option("--out", tr_out, "checkpoint output path")->required();
    tr->add_option("--log", tr_log, "telemetry log path (default: <out>.log)");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_split = "test", ev_strategy = "sink",
                ev_sink_mode = "global", ev_report;
    int ev_sink_k = 1, ev_crop = 0, ev_threads = 0;
    bool ev_two_step = false;
    double ev_zoom = 2.0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "corpus path")->required();
    ev->add_option("--split", ev_split, "corpus split (train|val|test|heldout|all)");
    ev->add_option("--strategy", ev_strategy, "aggregation strategy");
    ev->add_option("--sink-mode", ev_sink_mode, "global|layerwise");
    ev->add_option("--sink-k", ev_sink_k, "top-K sink tokens");
    ev->add_flag("--two-step", ev_two_step, "zoom-in second pass");
    ev->add_option("--crop-px", ev_crop, "crop side in global pixels (0 = 4 patches)");
    ev->add_option("--zoom", ev_zoom, "second-pass zoom ratio");
    ev->add_option("--report", ev_report, "machine-readable report path");
    ev->add_option("--threads", ev_threads, "evaluation workers (0 = hardware)");

    // ground
    auto* gr = app.add_subcommand("ground", "ground one scene and export the heatmap");
    std::string gr_ckpt, gr_data, gr_heatmap, gr_strategy = "sink", gr_sink_mode = "global";
    std::uint64_t gr_scene = 0;
    int gr_sink_k = 1;
    gr->add_option("--ckpt", gr_ckpt, "checkpoint path")->required();
    gr->add_option("--data", gr_data, "corpus path")->required();
    gr->add_option("--scene-id", gr_scene, "scene seed to ground")->required();
    gr->add_option("--export-heatmap", gr_heatmap, "P5 heatmap output path");
    gr->add_option("--strategy", gr_strategy, "aggregation strategy");
    gr->add_option("--sink-mode", gr_sink_mode, "global|layerwise");
    gr->add_option("--sink-k", gr_sink_k, "top-K sink tokens");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and compare strategy arms");
    std::string ab_data, ab_arms, ab_report, ab_config;
    int ab_seeds = 1;
    ab->add_option("--data", ab_data, "corpus path")->required();
    ab->add_option("--arms", ab_arms, "arms file (JSON lines) or 'default'")->required();
    ab->add_option("--seeds", ab_seeds, "seeds per arm");
    ab->add_option("--report", ab_report, "machine-readable report path");
    ab->add_option("--config", ab_config, "key=value config file");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_config;
    double gc_tol = 1e-4;
    gc->add_option("--config", gc_config, "key=value config file");
    gc->add_option("--tolerance", gc_tol, "relative error tolerance");

    // analyze-tokens
    auto* an = app.add_subcommand("analyze-tokens", "token visual-correlation profiles");
    std::string an_ckpt, an_data, an_out;
    std::uint64_t an_scene = 0;
    an->add_option("--ckpt", an_ckpt, "checkpoint path")->required();
    an->add_option("--data", an_data, "corpus path")->required();
    an->add_option("--scene-id", an_scene, "scene seed to analyze")->required();
    an->add_option("--out", an_out, "report output path")->required();

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen(gen_count, gen_seed, gen_difficulty, gen_out, gen_holdout);
        if (tr->parsed()) return cmd_train(ta, tr_out, tr_log);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_data, ev_split, ev_strategy, ev_sink_mode, ev_sink_k,
                            ev_two_step, ev_crop, ev_zoom, ev_report, ev_threads);
        if (gr->parsed())
            return cmd_ground(gr_ckpt, gr_data, gr_scene, gr_heatmap, gr_strategy, gr_sink_mode,
                              gr_sink_k);
        if (ab->parsed()) return cmd_ablate(ab_data, ab_arms, ab_seeds, ab_report, ab_config);
        if (gc->parsed()) return cmd_gradcheck(gc_config, gc_tol);
        if (an->parsed()) return cmd_analyze_tokens(an_ckpt, an_data, an_scene, an_out);
        std::cerr << "error: usage: no subcommand given\n";
        return 2;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << error_class_name(e.cls()) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}
