#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "adazoom/adazoom.hpp"

namespace adazoom::cli {

namespace fs = std::filesystem;

/// Configuration problems exit with 1; anything thrown during execution
/// exits with 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::vector<Scene> load_scene_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("scenes dir not found: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json" &&
            entry.path().filename() != "config.json")  // the gen-scenes echo
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no .json scenes in " + dir);
    std::vector<Scene> scenes;
    scenes.reserve(files.size());
    for (const std::string& f : files) scenes.push_back(load_scene_json(f));
    return scenes;
}

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

inline void echo_config(const RunConfig& cfg) {
    write_text(fs::path(cfg.out_dir) / "config.json", run_config_to_json(cfg).dump(2) + "\n");
}

inline std::string detections_to_jsonl(const Scene& scene,
                                       const std::vector<Detection>& dets) {
    std::string out;
    char line[320];
    for (const Detection& d : dets) {
        std::snprintf(line, sizeof line,
                      "{\"scene_id\":\"%s\",\"x\":%.6f,\"y\":%.6f,\"w\":%.6f,\"h\":%.6f,"
                      "\"confidence\":%.6f,\"category\":%d}\n",
                      scene.source_id.c_str(), d.box.x, d.box.y, d.box.w, d.box.h, d.confidence,
                      d.category);
        out += line;
    }
    return out;
}

inline std::string regions_to_jsonl(const Scene& scene, const std::vector<Region>& regions) {
    std::string out;
    char line[320];
    for (std::size_t k = 0; k < regions.size(); ++k) {
        const Region& r = regions[k];
        std::snprintf(line, sizeof line,
                      "{\"scene_id\":\"%s\",\"k\":%zu,\"x\":%.6f,\"y\":%.6f,\"w\":%.6f,"
                      "\"h\":%.6f,\"scale_index\":%d,\"ratio_index\":%d}\n",
                      scene.source_id.c_str(), k, r.box.x, r.box.y, r.box.w, r.box.h,
                      r.scale_index, r.ratio_index);
        out += line;
    }
    return out;
}

/// Runs the detector pipeline over all scenes (region lists are per scene)
/// and writes detections.jsonl / regions.jsonl under `dir`.
inline void run_pipeline_and_write(const std::vector<Scene>& scenes,
                                   const std::vector<std::vector<Region>>& regions_per_scene,
                                   const RunConfig& cfg, const DetectorConfig& det,
                                   const fs::path& dir) {
    int clamped = 0;
    for (const Scene& scene : scenes)
        clamped += magnification_clamped({0, 0, scene.width, scene.height}, cfg.zoom);
    if (clamped > 0)
        std::cerr << "note: whole-image pass runs at native resolution for " << clamped
                  << " scene(s) (magnification clamped at 1)\n";

    std::vector<std::vector<Detection>> dets(scenes.size());
    parallel_for(scenes.size(), cfg.jobs, [&](std::size_t s) {
        dets[s] = full_pipeline(scenes[s], regions_per_scene[s], cfg.zoom, det,
                                mix_seed(cfg.detector_seed(), hash_tag(scenes[s].source_id)));
    });
    std::string det_lines;
    std::string region_lines;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        det_lines += detections_to_jsonl(scenes[s], dets[s]);
        region_lines += regions_to_jsonl(scenes[s], regions_per_scene[s]);
    }
    write_text(dir / "detections.jsonl", det_lines);
    write_text(dir / "regions.jsonl", region_lines);
}

/// Parses a run directory produced by `infer` or `baseline` back into
/// per-scene regions and detections, aligned with `scenes`.
struct StoredRun {
    std::vector<std::vector<Region>> regions;
    std::vector<std::vector<Detection>> detections;
};

inline StoredRun load_run_dir(const std::vector<Scene>& scenes, const fs::path& dir) {
    std::map<std::string, std::size_t> index;
    for (std::size_t s = 0; s < scenes.size(); ++s) index[scenes[s].source_id] = s;

    StoredRun run;
    run.regions.resize(scenes.size());
    run.detections.resize(scenes.size());

    auto for_each_line = [](const fs::path& path, auto&& fn) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read " + path.string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            fn(nlohmann::json::parse(line));
        }
    };

    for_each_line(dir / "regions.jsonl", [&](const nlohmann::json& j) {
        const auto it = index.find(j.at("scene_id").get<std::string>());
        if (it == index.end()) return;
        Region r;
        r.box = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(),
                 j.at("h").get<double>()};
        r.scale_index = j.at("scale_index").get<int>();
        r.ratio_index = j.at("ratio_index").get<int>();
        run.regions[it->second].push_back(r);
    });
    for_each_line(dir / "detections.jsonl", [&](const nlohmann::json& j) {
        const auto it = index.find(j.at("scene_id").get<std::string>());
        if (it == index.end()) return;
        Detection d;
        d.box = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(),
                 j.at("h").get<double>()};
        d.confidence = j.at("confidence").get<double>();
        d.category = j.at("category").get<int>();
        d.id = static_cast<int>(run.detections[it->second].size());
        run.detections[it->second].push_back(d);
    });
    return run;
}

namespace detail {

inline Checkpoint load_policy_for(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("a checkpoint path is required");
    Checkpoint ckpt = [&] {
        try {
            return load_checkpoint(cfg.checkpoint);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }();
    if (!(ckpt.grid == cfg.grid))
        throw ConfigError("checkpoint grid does not match the configured grid");
    if (!(ckpt.zoom == cfg.zoom))
        throw ConfigError("checkpoint zoom spec does not match the configured zoom spec");
    return ckpt;
}

inline std::vector<Region> baseline_regions(const Scene& scene, const std::string& variant,
                                            double overlap) {
    auto tiles = [&](int rows, int cols) {
        return uniform_partition(scene.width, scene.height, rows, cols, overlap);
    };
    auto append = [](std::vector<Region>& dst, std::vector<Region> src) {
        dst.insert(dst.end(), src.begin(), src.end());
    };
    std::vector<Region> regions;
    if (variant == "1x1") return tiles(1, 1);
    if (variant == "2x2") return tiles(2, 2);
    if (variant == "3x3") return tiles(3, 3);
    if (variant == "ms") {  // multi-scale union: 1x1 + 2x2 + 3x3
        append(regions, tiles(1, 1));
        append(regions, tiles(2, 2));
        append(regions, tiles(3, 3));
        return regions;
    }
    if (variant == "mr") {  // multi-ratio union: 2x3 + 2x2 + 3x2
        append(regions, tiles(2, 3));
        append(regions, tiles(2, 2));
        append(regions, tiles(3, 2));
        return regions;
    }
    throw ConfigError("unknown baseline variant: " + variant);
}

inline int run_parsed(const std::string& command, RunConfig cfg,
                      const std::optional<std::string>& grid_arg, double overlap,
                      const std::string& variant, const std::vector<std::string>& run_dirs,
                      const std::string& from_dir, const std::string& detector_file) {
    if (cfg.out_dir.empty()) throw ConfigError("an output dir is required (--out)");

    DetectorConfig det = cfg.detector;
    if (!detector_file.empty()) {
        std::ifstream in(detector_file);
        if (!in) throw ConfigError("cannot open detector file " + detector_file);
        nlohmann::json doc;
        in >> doc;
        det = detector_from_json(doc);
    }
    det.seed = cfg.detector_seed();

    if (command == "gen-scenes") {
        echo_config(cfg);
        Rng cluster_rng(mix_seed(cfg.seed, hash_tag("gen-clusters")));
        for (int i = 0; i < cfg.gen.count; ++i) {
            SynthSceneConfig sc = cfg.gen.synth;
            sc.clusters = cfg.gen.clusters_min +
                          static_cast<int>(cluster_rng.uniform_int(
                              static_cast<std::uint64_t>(cfg.gen.clusters_max -
                                                         cfg.gen.clusters_min + 1)));
            sc.seed = cfg.scene_seed(i);
            const Scene scene = synth_scene(sc);
            char name[32];
            std::snprintf(name, sizeof name, "scene-%04d.json", i);
            emit_scene_json(scene, (fs::path(cfg.out_dir) / name).string());
        }
        return 0;
    }

    if (command == "train") {
        const std::vector<Scene> scenes = load_scene_dir(cfg.scenes_dir);
        echo_config(cfg);
        TrainConfig tc = cfg.train;
        tc.seed = cfg.train_seed();
        tc.jobs = cfg.jobs;
        const TrainResult result = train(scenes, tc, cfg.env());
        if (result.report.clipped_updates > 0)
            std::cerr << "note: gradient clip (norm " << tc.grad_clip << ") fired in "
                      << result.report.clipped_updates << " of " << tc.iterations
                      << " iterations\n";
        const fs::path ckpt_path = cfg.checkpoint.empty()
                                       ? fs::path(cfg.out_dir) / "checkpoint.json"
                                       : fs::path(cfg.checkpoint);
        fs::create_directories(fs::path(cfg.out_dir));
        save_checkpoint({result.params, cfg.zoom, cfg.grid}, ckpt_path.string());
        write_train_report_csv(result.report,
                               (fs::path(cfg.out_dir) / "train_report.csv").string());
        return 0;
    }

    if (command == "infer") {
        const std::vector<Scene> scenes = load_scene_dir(cfg.scenes_dir);
        const Checkpoint ckpt = load_policy_for(cfg);
        echo_config(cfg);
        std::vector<std::vector<Region>> regions(scenes.size());
        const EnvConfig env = cfg.env();
        parallel_for(scenes.size(), cfg.jobs, [&](std::size_t s) {
            regions[s] = greedy_regions(scenes[s], ckpt.params, cfg.k, env);
        });
        run_pipeline_and_write(scenes, regions, cfg, det, cfg.out_dir);
        return 0;
    }

    if (command == "baseline") {
        const std::vector<Scene> scenes = load_scene_dir(cfg.scenes_dir);
        echo_config(cfg);
        if (grid_arg) {
            int rows = 0, cols = 0;
            if (std::sscanf(grid_arg->c_str(), "%dx%d", &rows, &cols) != 2 || rows < 1 ||
                cols < 1)
                throw ConfigError("--grid expects RxC, e.g. 2x2");
            std::vector<std::vector<Region>> regions(scenes.size());
            for (std::size_t s = 0; s < scenes.size(); ++s)
                regions[s] =
                    uniform_partition(scenes[s].width, scenes[s].height, rows, cols, overlap);
            run_pipeline_and_write(scenes, regions, cfg, det, cfg.out_dir);
            return 0;
        }
        const std::vector<std::string> variants =
            variant == "all" ? std::vector<std::string>{"1x1", "2x2", "3x3", "ms", "mr"}
                             : std::vector<std::string>{variant};
        for (const std::string& name : variants) {
            std::vector<std::vector<Region>> regions(scenes.size());
            for (std::size_t s = 0; s < scenes.size(); ++s)
                regions[s] = baseline_regions(scenes[s], name, overlap);
            run_pipeline_and_write(scenes, regions, cfg, det, fs::path(cfg.out_dir) / name);
        }
        return 0;
    }

    if (command == "eval") {
        const std::vector<Scene> scenes = load_scene_dir(cfg.scenes_dir);
        if (run_dirs.empty()) throw ConfigError("eval needs at least one --run dir");
        echo_config(cfg);
        std::string comparison = "run,ap_percent,ap50_percent,ap75_percent,mean_cost\n";
        for (const std::string& run_dir : run_dirs) {
            const StoredRun stored = load_run_dir(scenes, run_dir);
            const EvalReport report = build_eval_report(scenes, stored.regions,
                                                        stored.detections, cfg.zoom,
                                                        cfg.reward.rho);
            const std::string name = fs::path(run_dir).filename().string();
            const fs::path out = fs::path(cfg.out_dir) / name;
            fs::create_directories(out);
            write_text(out / "eval_report.json", eval_report_to_json(report).dump(2) + "\n");
            emit_report(report, out.string());
            double mean_cost = 0;
            for (const PerSceneRow& row : report.per_scene) mean_cost += row.cost;
            if (!report.per_scene.empty()) mean_cost /= report.per_scene.size();
            char line[256];
            std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f,%.6f\n", name.c_str(),
                          report.ap * 100.0, report.ap50 * 100.0, report.ap75 * 100.0,
                          mean_cost);
            comparison += line;
        }
        write_text(fs::path(cfg.out_dir) / "comparison.csv", comparison);
        return 0;
    }

    if (command == "ct") {
        const std::vector<Scene> scenes = load_scene_dir(cfg.scenes_dir);
        const Checkpoint ckpt = load_policy_for(cfg);
        echo_config(cfg);
        PolicyParams policy = ckpt.params;
        CtConfig ct = cfg.ct;
        ct.jobs = cfg.jobs;
        nlohmann::json rounds = nlohmann::json::array();
        for (int round = 0; round < cfg.ct_rounds; ++round) {
            ct.seed = mix_seed(cfg.ct_seed(), static_cast<std::uint64_t>(round));
            CtResult result = collaborative_round(policy, det, scenes, ct, cfg.env());
            policy = std::move(result.policy);
            det = result.detector;
            double mean_c = 0;
            std::size_t n = 0;
            for (const auto& c : result.confidences)
                for (double v : c) {
                    mean_c += v;
                    ++n;
                }
            rounds.push_back({{"round", round},
                              {"mean_confidence", n ? mean_c / n : 0.0},
                              {"exposure", result.exposure}});
        }
        save_checkpoint({policy, cfg.zoom, cfg.grid},
                        (fs::path(cfg.out_dir) / "checkpoint.json").string());
        DetectorConfig det_out = det;
        det_out.seed = 0;  // seeds are derived at use time, never stored
        write_text(fs::path(cfg.out_dir) / "detector.json",
                   detector_to_json(det_out).dump(2) + "\n");
        write_text(fs::path(cfg.out_dir) / "ct_report.json",
                   nlohmann::json{{"rounds", std::move(rounds)}}.dump(2) + "\n");
        return 0;
    }

    if (command == "report") {
        if (from_dir.empty()) throw ConfigError("report needs --from <eval dir>");
        std::ifstream in(fs::path(from_dir) / "eval_report.json");
        if (!in) throw ConfigError("no eval_report.json in " + from_dir);
        nlohmann::json doc;
        in >> doc;
        const EvalReport report = eval_report_from_json(doc);
        fs::create_directories(cfg.out_dir);
        emit_report(report, cfg.out_dir);
        return 0;
    }

    throw ConfigError("unknown command: " + command);
}

}  // namespace detail

/// CLI entry point; returns the process exit code (0 success, 1 config
/// error, 2 runtime error). `args` excludes the program name.
inline int run_command(const std::vector<std::string>& args) {
    CLI::App app{"AdaZoom: adaptive focus-region generation for multi-scale detection"};
    app.require_subcommand(1);

    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs, k, iterations, ct_rounds, count;
    std::optional<std::string> scenes_dir, out_dir, checkpoint;
    std::optional<std::string> grid_arg;
    std::string variant = "all";
    double overlap = 50.0;
    std::vector<std::string> run_dirs;
    std::string from_dir, detector_file;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed, "root seed (overrides config)");
        sub->add_option("--jobs", jobs, "scene-level parallelism");
        sub->add_option("--scenes", scenes_dir, "scenes directory");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--checkpoint", checkpoint, "policy checkpoint path");
    };

    CLI::App* gen = app.add_subcommand("gen-scenes", "write synthetic scenes");
    add_common(gen);
    gen->add_option("--count", count, "number of scenes");

    CLI::App* tr = app.add_subcommand("train", "train the focus-region policy");
    add_common(tr);
    tr->add_option("--iterations", iterations, "training iterations");

    CLI::App* inf = app.add_subcommand("infer", "greedy regions + simulated detections");
    add_common(inf);
    inf->add_option("--k", k, "number of focus regions");
    inf->add_option("--detector", detector_file, "detector config (e.g. from ct)");

    CLI::App* base = app.add_subcommand("baseline", "uniform-partition baselines");
    add_common(base);
    base->add_option("--grid", grid_arg, "single custom RxC partition");
    base->add_option("--overlap", overlap, "tile overlap in pixels");
    base->add_option("--variant", variant, "all|1x1|2x2|3x3|ms|mr");
    base->add_option("--detector", detector_file, "detector config (e.g. from ct)");

    CLI::App* ev = app.add_subcommand("eval", "score stored runs");
    add_common(ev);
    ev->add_option("--run", run_dirs, "run directory (repeatable)");

    CLI::App* ct = app.add_subcommand("ct", "collaborative training rounds");
    add_common(ct);
    ct->add_option("--rounds", ct_rounds, "collaborative rounds");
    ct->add_option("--k", k, "regions per scene");
    ct->add_option("--detector", detector_file, "detector config to start from");

    CLI::App* rep = app.add_subcommand("report", "re-emit metrics files from a stored report");
    add_common(rep);
    rep->add_option("--from", from_dir, "directory containing eval_report.json");

    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.push_back("adazoom");
    for (const std::string& a : args) argv_storage.push_back(a);
    std::vector<const char*> argv;
    for (const std::string& a : argv_storage) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    RunConfig cfg;
    try {
        if (config_path) cfg = load_run_config(*config_path);
        if (seed) cfg.seed = *seed;
        if (jobs) cfg.jobs = *jobs;
        if (k) {
            cfg.k = *k;
            cfg.ct.k = *k;
        }
        if (iterations) cfg.train.iterations = *iterations;
        if (ct_rounds) cfg.ct_rounds = *ct_rounds;
        if (count) cfg.gen.count = *count;
        if (scenes_dir) cfg.scenes_dir = *scenes_dir;
        if (out_dir) cfg.out_dir = *out_dir;
        if (checkpoint) cfg.checkpoint = *checkpoint;
        if (cfg.jobs < 1 || cfg.k < 0 || cfg.ct_rounds < 0)
            throw ConfigError("jobs must be >= 1, k and rounds >= 0");
        cfg.zoom.validate();
        cfg.reward.validate();
        cfg.train.validate();
        cfg.detector.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }

    try {
        const std::string command = app.get_subcommands().front()->get_name();
        return detail::run_parsed(command, std::move(cfg), grid_arg, overlap, variant, run_dirs,
                                  from_dir, detector_file);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace adazoom::cli
