#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aima/geometry.hpp"
#include "aima/labeling.hpp"
#include "aima/model.hpp"
#include "aima/rng.hpp"

namespace aima {

// Visual vocabulary: background, MIXED, then one appearance id per
// (kind, color, glyph) triple. Text vocabulary: kind words, color words,
// glyph words. A query names the target's full triple, so grounding is pure
// appearance matching and survives crop/zoom re-rendering.
constexpr int kBackgroundId = 0;
constexpr int kMixedId = 1;

struct Widget {
    int kind = 0, color = 0, glyph = 0;
    int cx1 = 0, cy1 = 0, cx2 = 0, cy2 = 0;  // cell coords, half-open

    int width() const { return cx2 - cx1; }
    int height() const { return cy2 - cy1; }
};

struct DifficultyConfig {
    std::string name = "easy";
    int fine_cells = 56;  // square fine grid
    int cell_px = 8;
    int cells_per_patch = 4;  // first-pass rendering granularity
    int min_widgets = 3, max_widgets = 5;
    int min_side = 8, max_side = 14;  // widget side in cells
    int kinds = 3, colors = 3, glyphs = 3;
    bool force_attribute_sharing = false;

    int appearance_count() const { return kinds * colors * glyphs; }
    int visual_vocab() const { return 2 + appearance_count(); }
    int text_vocab() const { return kinds + colors + glyphs; }
    int appearance_id(int k, int c, int g) const { return 2 + (k * colors + c) * glyphs + g; }
    int kind_token(int k) const { return k; }
    int color_token(int c) const { return kinds + c; }
    int glyph_token(int g) const { return kinds + colors + g; }

    static DifficultyConfig easy() { return {}; }

    static DifficultyConfig hard() {
        DifficultyConfig d;
        d.name = "hard";
        d.fine_cells = 112;
        d.cells_per_patch = 8;
        d.min_widgets = 5;
        d.max_widgets = 10;
        d.min_side = 9;
        d.max_side = 16;
        d.force_attribute_sharing = true;
        return d;
    }
};

inline DifficultyConfig parse_difficulty(const std::string& name) {
    if (name == "easy") return DifficultyConfig::easy();
    if (name == "hard") return DifficultyConfig::hard();
    fail_config("unknown difficulty '" + name + "'");
}

struct Scene {
    std::uint64_t seed = 0;
    int fine_w = 0, fine_h = 0;
    int cell_px = 8;
    std::vector<int> cells;  // row-major appearance ids
    std::vector<Widget> widgets;
    int target_widget = -1;
    std::vector<int> query_tokens;
    BBox gt_bbox;  // pixels, global frame

    int cell_at(int cx, int cy) const { return cells[std::size_t(cy) * fine_w + cx]; }
    int image_w() const { return fine_w * cell_px; }
    int image_h() const { return fine_h * cell_px; }

    bool operator==(const Scene& o) const {
        return seed == o.seed && fine_w == o.fine_w && fine_h == o.fine_h && cell_px == o.cell_px &&
               cells == o.cells && target_widget == o.target_widget &&
               query_tokens == o.query_tokens && gt_bbox.x1 == o.gt_bbox.x1 &&
               gt_bbox.y1 == o.gt_bbox.y1 && gt_bbox.x2 == o.gt_bbox.x2 &&
               gt_bbox.y2 == o.gt_bbox.y2 && widgets.size() == o.widgets.size();
    }
};

/// True iff the widget matches a (kind, color, glyph) query triple.
inline bool widget_matches_query(const Widget& w, const std::vector<int>& query,
                                 const DifficultyConfig& d) {
    return int(query.size()) == 3 && w.kind == query[0] && w.color == query[1] - d.kinds &&
           w.glyph == query[2] - d.kinds - d.colors;
}

inline int count_query_matches(const Scene& scene, const DifficultyConfig& d) {
    int n = 0;
    for (const Widget& w : scene.widgets)
        if (widget_matches_query(w, scene.query_tokens, d)) ++n;
    return n;
}

namespace detail {

inline bool overlaps_with_margin(const Widget& a, const Widget& b) {
    return a.cx1 - 1 < b.cx2 && b.cx1 - 1 < a.cx2 && a.cy1 - 1 < b.cy2 && b.cy1 - 1 < a.cy2;
}

}  // namespace detail

/// Deterministic per seed: placement, attributes and the uniquely-referring
/// query are all drawn from one seeded stream. Distractors share two of the
/// target's three attributes when the difficulty asks for it.
inline Scene gen_scene(std::uint64_t seed, const DifficultyConfig& d,
                       int forbidden_target_combo = -1) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng rng = Rng(seed * 0x9e3779b97f4a7c15ULL + 0xabcdULL).fork(std::uint64_t(attempt));
        Scene scene;
        scene.seed = seed;
        scene.fine_w = scene.fine_h = d.fine_cells;
        scene.cell_px = d.cell_px;

        const int n = int(rng.next_int(d.min_widgets, d.max_widgets));
        bool placed_all = true;
        for (int i = 0; i < n; ++i) {
            bool placed = false;
            for (int tries = 0; tries < 200 && !placed; ++tries) {
                Widget w;
                w.cx1 = int(rng.next_int(0, d.fine_cells - d.min_side));
                w.cy1 = int(rng.next_int(0, d.fine_cells - d.min_side));
                int mw = std::min(d.max_side, d.fine_cells - w.cx1);
                int mh = std::min(d.max_side, d.fine_cells - w.cy1);
                w.cx2 = w.cx1 + int(rng.next_int(d.min_side, mw));
                w.cy2 = w.cy1 + int(rng.next_int(d.min_side, mh));
                bool clash = false;
                for (const Widget& other : scene.widgets)
                    if (detail::overlaps_with_margin(w, other)) {
                        clash = true;
                        break;
                    }
                if (!clash) {
                    scene.widgets.push_back(w);
                    placed = true;
                }
            }
            if (!placed) {
                placed_all = false;
                break;
            }
        }
        if (!placed_all || scene.widgets.empty()) continue;

        // target attributes, avoiding a held-out (kind, color) combo if asked
        scene.target_widget = int(rng.next_below(scene.widgets.size()));
        Widget& target = scene.widgets[std::size_t(scene.target_widget)];
        for (int tries = 0; tries < 64; ++tries) {
            target.kind = int(rng.next_below(std::uint64_t(d.kinds)));
            target.color = int(rng.next_below(std::uint64_t(d.colors)));
            if (forbidden_target_combo < 0 ||
                target.kind * d.colors + target.color != forbidden_target_combo)
                break;
        }
        target.glyph = int(rng.next_below(std::uint64_t(d.glyphs)));

        // distractor attributes; on harder settings the first two distractors
        // share two of the target's three attributes
        int di = 0;
        for (int i = 0; i < int(scene.widgets.size()); ++i) {
            if (i == scene.target_widget) continue;
            Widget& w = scene.widgets[std::size_t(i)];
            if (d.force_attribute_sharing && di < 2) {
                w.kind = target.kind;
                if (di == 0) {
                    w.color = target.color;
                    w.glyph = (target.glyph + 1 + int(rng.next_below(std::uint64_t(d.glyphs - 1)))) %
                              d.glyphs;
                } else {
                    w.color = (target.color + 1 + int(rng.next_below(std::uint64_t(d.colors - 1)))) %
                              d.colors;
                    w.glyph = target.glyph;
                }
                ++di;
                continue;
            }
            do {
                w.kind = int(rng.next_below(std::uint64_t(d.kinds)));
                w.color = int(rng.next_below(std::uint64_t(d.colors)));
                w.glyph = int(rng.next_below(std::uint64_t(d.glyphs)));
            } while (w.kind == target.kind && w.color == target.color && w.glyph == target.glyph);
            ++di;
        }

        scene.query_tokens = {d.kind_token(target.kind), d.color_token(target.color),
                              d.glyph_token(target.glyph)};
        scene.gt_bbox = BBox{double(target.cx1 * d.cell_px), double(target.cy1 * d.cell_px),
                             double(target.cx2 * d.cell_px), double(target.cy2 * d.cell_px)};

        scene.cells.assign(std::size_t(scene.fine_w) * std::size_t(scene.fine_h), kBackgroundId);
        for (const Widget& w : scene.widgets) {
            int id = d.appearance_id(w.kind, w.color, w.glyph);
            for (int cy = w.cy1; cy < w.cy2; ++cy)
                for (int cx = w.cx1; cx < w.cx2; ++cx)
                    scene.cells[std::size_t(cy) * scene.fine_w + cx] = id;
        }

        if (count_query_matches(scene, d) == 1) return scene;
    }
    fail_domain("could not generate a scene with a unique referent for seed " +
                std::to_string(seed));
}

/// Rendering parameters: optional crop region (its zoom divides the cell
/// granularity) and the base cells-per-patch of the view.
struct RenderSpec {
    std::optional<CropRegion> crop;
    int cells_per_patch = 4;
};

/// One rendered view: token grid plus the geometry needed to map local clicks
/// back to the global frame. `region.zoom` holds the effective zoom after
/// rounding cells_per_patch/zoom to whole cells.
struct RenderedView {
    VisualInput tokens;
    PatchGrid grid;     // local (possibly zoomed) frame
    CropRegion region;  // maps local frame -> global via map_to_global
};

inline RenderedView render(const Scene& scene, const RenderSpec& spec) {
    require(spec.cells_per_patch >= 1, ErrorClass::domain, "cells_per_patch must be >= 1");
    int ox_cells = 0, oy_cells = 0, size_cells_w = scene.fine_w, size_cells_h = scene.fine_h;
    int cpp = spec.cells_per_patch;
    double zoom_eff = 1.0;

    if (spec.crop) {
        const CropRegion& c = *spec.crop;
        require(c.zoom >= 1.0, ErrorClass::domain, "zoom must be >= 1");
        int cpp2 = std::max(1, int(std::lround(double(cpp) / c.zoom)));
        zoom_eff = double(cpp) / double(cpp2);

        ox_cells = int(std::lround(double(c.origin_x) / scene.cell_px));
        oy_cells = int(std::lround(double(c.origin_y) / scene.cell_px));
        int want = int(std::lround(double(c.size_px) / scene.cell_px));
        // pad the crop to a whole number of patches, staying inside the scene
        int size = ((want + cpp2 - 1) / cpp2) * cpp2;
        size = std::min(size, (scene.fine_w / cpp2) * cpp2);
        size = std::min(size, (scene.fine_h / cpp2) * cpp2);
        require(size >= cpp2, ErrorClass::domain, "crop smaller than one patch");
        ox_cells = std::clamp(ox_cells, 0, scene.fine_w - size);
        oy_cells = std::clamp(oy_cells, 0, scene.fine_h - size);
        size_cells_w = size_cells_h = size;
        cpp = cpp2;
    }
    require(ox_cells >= 0 && oy_cells >= 0 && ox_cells + size_cells_w <= scene.fine_w &&
                oy_cells + size_cells_h <= scene.fine_h,
            ErrorClass::domain, "crop outside scene");

    RenderedView view;
    view.region.origin_x = ox_cells * scene.cell_px;
    view.region.origin_y = oy_cells * scene.cell_px;
    view.region.size_px = size_cells_w * scene.cell_px;
    view.region.zoom = zoom_eff;

    int cols = (size_cells_w + cpp - 1) / cpp;
    int rows = (size_cells_h + cpp - 1) / cpp;
    view.tokens.rows = rows;
    view.tokens.cols = cols;
    view.tokens.ids.assign(std::size_t(rows) * std::size_t(cols), kBackgroundId);

    for (int pr = 0; pr < rows; ++pr)
        for (int pc = 0; pc < cols; ++pc) {
            int cx0 = ox_cells + pc * cpp, cy0 = oy_cells + pr * cpp;
            int cx1 = std::min(cx0 + cpp, ox_cells + size_cells_w);
            int cy1 = std::min(cy0 + cpp, oy_cells + size_cells_h);
            int covered = (cx1 - cx0) * (cy1 - cy0);
            int best_id = kBackgroundId, best_count = -1;
            bool tie = false;
            // strict majority over covered cells, MIXED otherwise
            std::vector<std::pair<int, int>> local;  // (id, count)
            for (int cy = cy0; cy < cy1; ++cy)
                for (int cx = cx0; cx < cx1; ++cx) {
                    int id = scene.cell_at(cx, cy);
                    bool found = false;
                    for (auto& [lid, lc] : local)
                        if (lid == id) {
                            ++lc;
                            found = true;
                            break;
                        }
                    if (!found) local.emplace_back(id, 1);
                }
            for (auto& [lid, lc] : local)
                if (lc > best_count) {
                    best_id = lid;
                    best_count = lc;
                    tie = false;
                } else if (lc == best_count) {
                    tie = true;
                }
            int token = (!tie && 2 * best_count > covered) ? best_id : kMixedId;
            view.tokens.ids[std::size_t(pr) * cols + pc] = token;
        }

    // local frame: patch side stays cpp_base*cell_px after zooming
    int local_patch_px = int(std::lround(double(cpp) * scene.cell_px * zoom_eff));
    int local_w = int(std::lround(double(size_cells_w) * scene.cell_px * zoom_eff));
    int local_h = int(std::lround(double(size_cells_h) * scene.cell_px * zoom_eff));
    view.grid = PatchGrid::make(local_w, local_h, local_patch_px);
    require(view.grid.cols == cols && view.grid.rows == rows, ErrorClass::internal,
            "render grid mismatch");
    return view;
}

// ---- corpus serialization -------------------------------------------------

constexpr const char* kSceneFormat = "aima-scene-v1";
constexpr const char* kManifestFormat = "aima-manifest-v1";

inline nlohmann::json scene_to_json(const Scene& s) {
    nlohmann::json rle = nlohmann::json::array();
    std::size_t i = 0;
    while (i < s.cells.size()) {
        std::size_t j = i;
        while (j < s.cells.size() && s.cells[j] == s.cells[i]) ++j;
        rle.push_back({s.cells[i], int(j - i)});
        i = j;
    }
    nlohmann::json widgets = nlohmann::json::array();
    for (const Widget& w : s.widgets)
        widgets.push_back({{"kind", w.kind},
                           {"color", w.color},
                           {"glyph", w.glyph},
                           {"bbox_cells", {w.cx1, w.cy1, w.cx2, w.cy2}}});
    return nlohmann::json{{"format", kSceneFormat},
                          {"seed", s.seed},
                          {"fine_w", s.fine_w},
                          {"fine_h", s.fine_h},
                          {"cell_px", s.cell_px},
                          {"cells_rle", rle},
                          {"widgets", widgets},
                          {"target", s.target_widget},
                          {"query", s.query_tokens},
                          {"gt_bbox", {int(s.gt_bbox.x1), int(s.gt_bbox.y1), int(s.gt_bbox.x2),
                                       int(s.gt_bbox.y2)}}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
    require(j.value("format", "") == kSceneFormat, ErrorClass::format,
            "unknown scene record format");
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.fine_w = j.at("fine_w").get<int>();
    s.fine_h = j.at("fine_h").get<int>();
    s.cell_px = j.at("cell_px").get<int>();
    for (const auto& run : j.at("cells_rle")) {
        int id = run.at(0).get<int>();
        int len = run.at(1).get<int>();
        require(len > 0, ErrorClass::format, "bad RLE run");
        s.cells.insert(s.cells.end(), std::size_t(len), id);
    }
    require(int(s.cells.size()) == s.fine_w * s.fine_h, ErrorClass::format, "RLE size mismatch");
    for (const auto& wj : j.at("widgets")) {
        Widget w;
        w.kind = wj.at("kind").get<int>();
        w.color = wj.at("color").get<int>();
        w.glyph = wj.at("glyph").get<int>();
        const auto& b = wj.at("bbox_cells");
        w.cx1 = b.at(0).get<int>();
        w.cy1 = b.at(1).get<int>();
        w.cx2 = b.at(2).get<int>();
        w.cy2 = b.at(3).get<int>();
        s.widgets.push_back(w);
    }
    s.target_widget = j.at("target").get<int>();
    s.query_tokens = j.at("query").get<std::vector<int>>();
    const auto& bb = j.at("gt_bbox");
    s.gt_bbox = BBox{double(bb.at(0).get<int>()), double(bb.at(1).get<int>()),
                     double(bb.at(2).get<int>()), double(bb.at(3).get<int>())};
    return s;
}

inline std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string manifest_path_for(const std::string& corpus_path) {
    return corpus_path + ".manifest";
}

struct SplitRange {
    int begin = 0;
    int end = 0;  // half-open record indices
};

struct Manifest {
    std::uint64_t seed = 0;
    int count = 0;
    std::string difficulty;
    bool holdout_combos = false;
    double target_attr_chi2 = 0.0;
    SplitRange train, val, test;
    std::string train_hash, val_hash, test_hash;

    SplitRange range(const std::string& split) const {
        if (split == "train") return train;
        if (split == "val") return val;
        if (split == "test") return test;
        if (split == "heldout") return SplitRange{val.begin, test.end};
        if (split == "all") return SplitRange{0, count};
        fail_config("unknown split '" + split + "'");
    }
};

/// Writes `count` scene records (seeds seed..seed+count-1) as JSON lines plus
/// a sibling manifest with 80/10/10 split ranges and per-split content hashes.
/// With holdout_combos, one (kind,color) combo never appears as a train-split
/// target and another never as a val/test target, so the splits' referent
/// attribute distributions differ by construction; the manifest records the
/// chi-square between them either way.
inline Manifest gen_dataset(int count, std::uint64_t seed, const DifficultyConfig& d,
                            const std::string& out_path, bool holdout_combos = false) {
    require(count >= 1, ErrorClass::domain, "dataset count must be >= 1");
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    require(bool(out), ErrorClass::io, "cannot open corpus for writing: " + out_path);

    Manifest m;
    m.seed = seed;
    m.count = count;
    m.difficulty = d.name;
    m.holdout_combos = holdout_combos;
    m.train = {0, count * 8 / 10};
    m.val = {count * 8 / 10, count * 9 / 10};
    m.test = {count * 9 / 10, count};

    const int train_only_combo = 0;           // (kind 0, color 0)
    const int eval_only_combo = d.colors + 1;  // (kind 1, color 1)

    std::vector<int> train_hist(std::size_t(d.kinds * d.colors), 0);
    std::vector<int> val_hist(std::size_t(d.kinds * d.colors), 0);
    std::uint64_t h_train = 0xcbf29ce484222325ULL, h_val = h_train, h_test = h_train;
    for (int i = 0; i < count; ++i) {
        bool in_train = i < m.train.end;
        int forbidden = -1;
        if (holdout_combos) forbidden = in_train ? eval_only_combo : train_only_combo;
        Scene s = gen_scene(seed + std::uint64_t(i), d, forbidden);
        const Widget& t = s.widgets[std::size_t(s.target_widget)];
        (in_train ? train_hist : val_hist)[std::size_t(t.kind * d.colors + t.color)]++;
        std::string line = scene_to_json(s).dump() + "\n";
        if (in_train)
            h_train = fnv1a(line, h_train);
        else if (i < m.val.end)
            h_val = fnv1a(line, h_val);
        else
            h_test = fnv1a(line, h_test);
        out << line;
    }
    require(bool(out), ErrorClass::io, "short write to corpus: " + out_path);
    out.close();

    // two-sample chi-square over the target (kind,color) joint histograms
    double n1 = 0, n2 = 0;
    for (int v : train_hist) n1 += v;
    for (int v : val_hist) n2 += v;
    double chi2 = 0.0;
    for (std::size_t i = 0; i < train_hist.size(); ++i) {
        double pooled = (train_hist[i] + val_hist[i]) / (n1 + n2);
        double e1 = n1 * pooled, e2 = n2 * pooled;
        if (e1 > 0) chi2 += (train_hist[i] - e1) * (train_hist[i] - e1) / e1;
        if (e2 > 0) chi2 += (val_hist[i] - e2) * (val_hist[i] - e2) / e2;
    }
    m.target_attr_chi2 = chi2;

    char buf[17];
    auto hex = [&buf](std::uint64_t v) {
        std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
        return std::string(buf);
    };
    m.train_hash = hex(h_train);
    m.val_hash = hex(h_val);
    m.test_hash = hex(h_test);

    nlohmann::json mj{{"format", kManifestFormat},
                      {"seed", m.seed},
                      {"count", m.count},
                      {"difficulty", m.difficulty},
                      {"holdout_combos", m.holdout_combos},
                      {"target_attr_chi2", m.target_attr_chi2},
                      {"splits",
                       {{"train", {{"begin", m.train.begin}, {"end", m.train.end}, {"hash", m.train_hash}}},
                        {"val", {{"begin", m.val.begin}, {"end", m.val.end}, {"hash", m.val_hash}}},
                        {"test", {{"begin", m.test.begin}, {"end", m.test.end}, {"hash", m.test_hash}}}}}};
    std::ofstream mf(manifest_path_for(out_path), std::ios::binary | std::ios::trunc);
    require(bool(mf), ErrorClass::io, "cannot open manifest for writing");
    mf << mj.dump(2) << "\n";
    require(bool(mf), ErrorClass::io, "short write to manifest");
    return m;
}

inline Manifest load_manifest(const std::string& corpus_path) {
    std::ifstream f(manifest_path_for(corpus_path));
    require(bool(f), ErrorClass::io, "cannot open manifest for " + corpus_path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail_format(std::string("bad manifest: ") + e.what());
    }
    require(j.value("format", "") == kManifestFormat, ErrorClass::format,
            "unknown manifest format");
    Manifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.count = j.at("count").get<int>();
    m.difficulty = j.at("difficulty").get<std::string>();
    m.holdout_combos = j.value("holdout_combos", false);
    m.target_attr_chi2 = j.value("target_attr_chi2", 0.0);
    auto rd = [&](const char* name, SplitRange& r, std::string& hash) {
        const auto& sj = j.at("splits").at(name);
        r.begin = sj.at("begin").get<int>();
        r.end = sj.at("end").get<int>();
        hash = sj.at("hash").get<std::string>();
    };
    rd("train", m.train, m.train_hash);
    rd("val", m.val, m.val_hash);
    rd("test", m.test, m.test_hash);
    return m;
}

/// Loads one split ("all" for everything) of a corpus file.
inline std::vector<Scene> load_corpus(const std::string& path, const std::string& split = "all") {
    std::ifstream f(path, std::ios::binary);
    require(bool(f), ErrorClass::io, "cannot open corpus: " + path);
    SplitRange range{0, -1};
    if (split != "all") {
        Manifest m = load_manifest(path);
        range = m.range(split);
    }
    std::vector<Scene> scenes;
    std::string line;
    int idx = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        bool wanted = range.end < 0 || (idx >= range.begin && idx < range.end);
        if (wanted) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                fail_format("bad corpus line " + std::to_string(idx) + ": " + e.what());
            }
            scenes.push_back(scene_from_json(j));
        }
        ++idx;
    }
    require(!scenes.empty(), ErrorClass::domain, "empty corpus split '" + split + "'");
    return scenes;
}

/// Model configuration sized for a difficulty's vocabulary and first-pass grid
/// (with head-room in the caps for zoomed second passes).
inline ModelConfig model_config_for(const DifficultyConfig& d, std::uint64_t seed) {
    ModelConfig c;
    c.visual_vocab = d.visual_vocab();
    c.text_vocab = d.text_vocab();
    int grid = (d.fine_cells + d.cells_per_patch - 1) / d.cells_per_patch;
    c.max_rows = c.max_cols = std::max(grid, 16);
    c.max_query_len = 8;
    c.seed = seed;
    c.visual_factors = {d.kinds, d.colors, d.glyphs};
    c.visual_factor_base = 2;
    c.tie_text_factors = true;
    return c;
}

}  // namespace aima
