#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cmaseg/gradcheck.hpp"
#include "cmaseg/losses.hpp"
#include "cmaseg/metrics.hpp"
#include "cmaseg/synthetic.hpp"
#include "cmaseg/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace cmaseg;

namespace {

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;

    RunConfig resolve() const {
        RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
        cfg.apply_overrides(overrides);
        cfg.validate();
        return cfg;
    }
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--set", args.overrides, "config override key=value (repeatable)")
        ->type_name("KEY=VALUE");
}

Vocabulary resolve_vocab(const RunConfig& cfg) {
    if (cfg.vocab.empty()) return grammar_vocabulary();
    return Vocabulary::load(cfg.vocab);
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "test") return Split::test;
    fail(ErrorCode::config, "split must be 'train' or 'test', got '" + name + "'");
}

std::vector<std::string> list_sorted(const std::string& dir, const std::string& prefix,
                                     const std::string& ext) {
    if (!fs::is_directory(dir)) fail(ErrorCode::io, "not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind(prefix, 0) == 0 && name.size() > ext.size() &&
            name.compare(name.size() - ext.size(), ext.size(), ext) == 0)
            out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void run_gen_synthetic(const DatasetSpec& spec, const std::string& out_dir) {
    generate_dataset(spec, out_dir);
    // reload to validate what was written
    Manifest loaded = load_manifest((fs::path(out_dir) / "manifest.json").string());
    size_t frames = 0;
    for (const auto& v : loaded.videos) frames += v.frames.size();
    std::cout << "classes: " << loaded.classes.size() << "\n"
              << "videos: " << loaded.videos.size() << "\n"
              << "frames: " << frames << "\n"
              << "manifest: " << (fs::path(out_dir) / "manifest.json").string() << "\n";
}

void run_build_folds(const std::string& manifest_path, size_t n_folds, size_t min_videos,
                     double max_ratio, uint64_t seed, const std::string& out_dir,
                     const std::string& out_manifest) {
    Manifest manifest = load_manifest(manifest_path);
    FoldBuild build = build_folds(manifest, n_folds, min_videos, max_ratio, seed);
    fs::create_directories(out_dir);
    for (const auto& fold : build.folds) {
        const std::string path =
            (fs::path(out_dir) / ("fold_" + std::to_string(fold.fold_index) + ".json")).string();
        write_fold(fold, path);
        std::cout << "fold " << fold.fold_index << ": " << fold.train_classes.size()
                  << " train / " << fold.test_classes.size() << " test -> " << path << "\n";
    }
    if (!out_manifest.empty()) {
        write_manifest(build.balanced, out_manifest);
        std::cout << "balanced manifest: " << out_manifest << " (" << build.balanced.videos.size()
                  << " videos)\n";
    }
}

void run_train(const RunConfig& cfg, const std::string& manifest_path,
               const std::string& fold_path, const std::string& split_name,
               const std::string& out_ckpt, const std::string& log_path,
               const std::string& resume) {
    Manifest manifest = load_manifest(manifest_path);
    FoldSpec fold = load_fold(fold_path);
    Vocabulary vocab = resolve_vocab(cfg);
    Model model(cfg, vocab.size());

    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!log_path.empty()) {
        log_file.open(log_path, std::ios::trunc);
        if (!log_file) fail(ErrorCode::io, "cannot open log for writing: " + log_path);
        log = &log_file;
    }
    TrainOptions opts;
    opts.out_checkpoint = out_ckpt;
    opts.resume = resume;
    opts.log = log;
    TrainResult result = train(model, manifest, fold, parse_split(split_name), vocab, opts);
    std::cerr << "trained " << result.steps_run << " step(s); checkpoint: " << out_ckpt << "\n";
}

void run_evaluate(const RunConfig& cfg, const std::string& ckpt_path,
                  const std::string& manifest_path, const std::string& fold_path,
                  const std::string& split_name, bool heldout, const std::string& report_path,
                  size_t threads) {
    Manifest manifest = load_manifest(manifest_path);
    FoldSpec fold = load_fold(fold_path);
    Vocabulary vocab = resolve_vocab(cfg);
    Model model(cfg, vocab.size());
    load_model_checkpoint(model, ckpt_path);
    MetricReport report = evaluate(model, manifest, fold, parse_split(split_name), vocab,
                                   model_inference(model), cfg.seed, heldout, threads);
    write_report(report, report_path);
    std::cout << "split: " << report.split << "\n"
              << "episodes: " << report.episodes.size() << "\n"
              << "mean_J: " << report.mean_j << "\n"
              << "mean_F: " << report.mean_f << "\n"
              << "mean_JF: " << report.mean_jf << "\n"
              << "report: " << report_path << "\n";
}

void run_predict(const RunConfig& cfg, const std::string& ckpt_path,
                 const std::string& support_dir, const std::string& support_expr,
                 const std::string& query_dir, const std::string& query_expr,
                 const std::string& out_dir) {
    Vocabulary vocab = resolve_vocab(cfg);
    Model model(cfg, vocab.size());
    load_model_checkpoint(model, ckpt_path);

    auto support_frames = list_sorted(support_dir, "frame_", ".ppm");
    auto support_masks = list_sorted(support_dir, "mask_", ".pgm");
    auto query_frames = list_sorted(query_dir, "frame_", ".ppm");
    if (support_frames.size() < cfg.k_shot)
        fail(ErrorCode::input, "support video has " + std::to_string(support_frames.size()) +
                                   " frames, need k_shot = " + std::to_string(cfg.k_shot));
    if (support_masks.size() < cfg.k_shot)
        fail(ErrorCode::input, "support video needs a mask per frame");
    if (query_frames.empty()) fail(ErrorCode::input, "query video has no frames");

    // build a two-video manifest in place and reuse the episode loader
    Manifest manifest;
    manifest.classes = {"target"};
    VideoRecord support;
    support.video_id = "support";
    support.class_label = "target";
    support.frames.assign(support_frames.begin(), support_frames.begin() + cfg.k_shot);
    support.masks.assign(support_masks.begin(), support_masks.begin() + cfg.k_shot);
    support.expressions = {support_expr};
    VideoRecord query;
    query.video_id = "query";
    query.class_label = "target";
    query.frames = query_frames;
    query.masks.assign(query_frames.size(), "");
    query.expressions = {query_expr};
    manifest.videos = {support, query};

    EpisodeRef ref;
    ref.class_label = "target";
    ref.support_video = 0;
    ref.query_video = 1;
    ref.id = "predict:support->query";
    RunConfig run_cfg = cfg;
    run_cfg.n_query = query_frames.size();  // whole clip, one forward pass
    EpisodeTensors episode = load_episode(manifest, ref, run_cfg, vocab, false);

    Tape tape(false);
    PredictionSequence pred = model.forward(tape, episode);
    SelectedTrajectory traj =
        select_instance(pred, SelectOptions::from(run_cfg, episode.orig_h, episode.orig_w));

    fs::create_directories(out_dir);
    nlohmann::json index;
    index["selected_slot"] = traj.slot;
    index["frames"] = nlohmann::json::array();
    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (size_t t = 0; t < traj.masks.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "mask_%04zu.pgm", t);
        ImageGray img;
        img.h = traj.masks[t].h;
        img.w = traj.masks[t].w;
        img.px.resize(img.h * img.w);
        for (size_t i = 0; i < img.px.size(); ++i) img.px[i] = traj.masks[t].px[i] ? 255 : 0;
        write_pgm((fs::path(out_dir) / name).string(), img);
        index["frames"].push_back(
            {{"file", name},
             {"slot", traj.per_frame_slots[t]},
             {"score", sigmoid(pred.scores.at({t, size_t(traj.per_frame_slots[t])}))}});
    }
    std::ofstream os((fs::path(out_dir) / "trajectory.json").string(), std::ios::trunc);
    os << index.dump(2) << "\n";
    std::cout << "wrote " << traj.masks.size() << " mask(s) to " << out_dir << "\n";
}

int run_grad_check(const std::string& scope, uint64_t seed) {
    bool ok = true;
    auto report_line = [&](const std::string& name, const GradCheckReport& r, double tol) {
        const bool pass = r.passed(tol);
        ok = ok && pass;
        std::cout << (pass ? "PASS" : "FAIL") << " " << name << ": max rel err " << r.max_rel_err
                  << " over " << r.coords_checked << " coordinate(s)"
                  << (pass ? "" : " at " + r.worst_location) << "\n";
    };
    if (scope == "ops") {
        for (const auto& chk : op_grad_checks()) report_line(chk.name, chk.run(seed), 1e-4);
    } else if (scope == "cma" || scope == "end2end") {
        RunConfig cfg;
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_text = 4;
        cfg.text_heads = 2;
        cfg.enc_base_width = 2;
        cfg.enc_layers = 1;
        cfg.dec_layers = 1;
        cfg.ffn_mult = 2;
        cfg.n_slots = 2;
        cfg.seg_channels = 3;
        cfg.k_shot = 2;
        cfg.n_query = 2;
        cfg.seed = seed;
        Vocabulary vocab = grammar_vocabulary();
        Model model(cfg, vocab.size());

        Rng rng(seed + 1);
        EpisodeTensors ep;
        ep.orig_h = ep.orig_w = 32;
        for (size_t i = 0; i < cfg.k_shot; ++i) {
            Tensor f = Tensor::uninitialized({3, 32, 32});
            for (size_t j = 0; j < f.size(); ++j) f.data()[j] = rng.uniform(0, 1);
            ep.support_frames.push_back(f);
            Tensor m = Tensor::zeros({32, 32});
            for (size_t y = 8; y < 20; ++y)
                for (size_t x = 8; x < 20; ++x) m.data()[y * 32 + x] = 1.0;
            ep.support_masks.push_back(m);
        }
        for (size_t i = 0; i < cfg.n_query; ++i) {
            Tensor f = Tensor::uninitialized({3, 32, 32});
            for (size_t j = 0; j < f.size(); ++j) f.data()[j] = rng.uniform(0, 1);
            ep.query_frames.push_back(f);
            Tensor m = Tensor::zeros({32, 32});
            for (size_t y = 10; y < 22; ++y)
                for (size_t x = 6; x < 18; ++x) m.data()[y * 32 + x] = 1.0;
            ep.query_masks.push_back(m);
        }
        ep.support_tokens = {2, 4, 10, 3, 16};
        ep.query_tokens = {2, 5, 10, 3, 17};

        const bool full = scope == "end2end";
        auto loss_of = [&](Tape& tape) -> Tensor {
            if (full) {
                PredictionSequence pred = model.forward(tape, ep);
                GroundTruthSequence gt = make_ground_truth(
                    ep.query_masks, pred.masks.extent(2), pred.masks.extent(3));
                return match_and_loss(tape, pred, gt, LossWeights::from(cfg)).total;
            }
            PredictionSequence pred = model.forward(tape, ep);
            return tape.add(tape.reduce_sum(pred.masks), tape.reduce_sum(pred.scores));
        };
        model.params().zero_grads();
        Tape tape;
        Tensor loss = loss_of(tape);
        tape.backward(loss);

        std::vector<CoordCheck> coords;
        Rng pick(seed + 2);
        for (auto& e : model.params().entries()) {
            if (!full && e.name.rfind("cma.", 0) != 0) continue;
            const size_t idx = pick.uniform_index(e.tensor.size());
            coords.push_back({e.name, e.tensor, idx,
                              e.tensor.grad_allocated() ? e.tensor.grad()[idx] : 0.0});
        }
        auto result = fd_check_coords(
            [&] {
                Tape t(false);
                return loss_of(t).item();
            },
            coords, 1e-5);
        report_line(scope, result, 1e-3);
    } else {
        fail(ErrorCode::config, "grad-check scope must be ops, cma, or end2end");
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot referring video object segmentation workbench"};
    app.require_subcommand(1);
    size_t threads = 1;
    app.add_option("--threads", threads, "worker threads for generation/evaluation")
        ->capture_default_str();

    auto* gen = app.add_subcommand("gen-synthetic", "render a synthetic moving-shapes benchmark");
    DatasetSpec dspec;
    std::string gen_out;
    gen->add_option("--classes", dspec.classes, "number of shape classes (1..6)")
        ->capture_default_str();
    gen->add_option("--videos-per-class", dspec.videos_per_class, "videos per class")
        ->capture_default_str();
    gen->add_option("--frames", dspec.frames, "frames per video")->capture_default_str();
    gen->add_option("--size", dspec.canvas, "square canvas size, multiple of 32")
        ->capture_default_str();
    gen->add_option("--seed", dspec.seed, "generator seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* folds = app.add_subcommand("build-folds", "partition classes into cross-validation folds");
    std::string folds_manifest, folds_out, folds_out_manifest;
    size_t n_folds = 4, min_videos = 10;
    double max_ratio = 3.0;
    uint64_t folds_seed = 0;
    folds->add_option("--manifest", folds_manifest, "manifest.json path")->required();
    folds->add_option("--folds", n_folds, "number of folds")->capture_default_str();
    folds->add_option("--min-videos", min_videos, "drop classes below this count")
        ->capture_default_str();
    folds->add_option("--max-ratio", max_ratio, "cap classes at min_count * ratio videos")
        ->capture_default_str();
    folds->add_option("--seed", folds_seed, "shuffle seed")->capture_default_str();
    folds->add_option("--out", folds_out, "output directory for fold_<i>.json")->required();
    folds->add_option("--out-manifest", folds_out_manifest, "write the balanced manifest here");

    auto* tr = app.add_subcommand("train", "episodic training on one fold");
    ConfigArgs tr_cfg;
    std::string tr_manifest, tr_fold, tr_split = "train", tr_ckpt, tr_log, tr_resume;
    add_config_flags(tr, tr_cfg);
    tr->add_option("--manifest", tr_manifest, "manifest.json path")->required();
    tr->add_option("--fold", tr_fold, "fold_<i>.json path")->required();
    tr->add_option("--split", tr_split, "train or test")->capture_default_str();
    tr->add_option("--out-checkpoint", tr_ckpt, "checkpoint output path")->required();
    tr->add_option("--log", tr_log, "training log path (default: stdout)");
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");

    auto* ev = app.add_subcommand("evaluate", "J and F over sampled test episodes");
    ConfigArgs ev_cfg;
    std::string ev_ckpt, ev_manifest, ev_fold, ev_split = "test", ev_report;
    bool ev_heldout = false;
    size_t ev_runs = 0;
    add_config_flags(ev, ev_cfg);
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--manifest", ev_manifest, "manifest.json path")->required();
    ev->add_option("--fold", ev_fold, "fold_<i>.json path")->required();
    ev->add_option("--split", ev_split, "train or test")->capture_default_str();
    ev->add_flag("--heldout", ev_heldout, "query videos come from the per-class holdout");
    ev->add_option("--runs", ev_runs, "repeated runs (default from config eval_runs)");
    ev->add_option("--report", ev_report, "report JSON output path")->required();

    auto* pr = app.add_subcommand("predict", "segment one query video given one support video");
    ConfigArgs pr_cfg;
    std::string pr_ckpt, pr_support, pr_support_expr, pr_query, pr_query_expr, pr_out;
    add_config_flags(pr, pr_cfg);
    pr->add_option("--checkpoint", pr_ckpt, "checkpoint path")->required();
    pr->add_option("--support-video", pr_support, "directory with frame_*.ppm and mask_*.pgm")
        ->required();
    pr->add_option("--support-expr", pr_support_expr, "support referring expression")->required();
    pr->add_option("--query-video", pr_query, "directory with frame_*.ppm")->required();
    pr->add_option("--query-expr", pr_query_expr, "query referring expression")->required();
    pr->add_option("--out-masks", pr_out, "output directory for mask_*.pgm + trajectory.json")
        ->required();

    auto* gc = app.add_subcommand("grad-check", "finite-difference verification");
    std::string gc_scope = "ops";
    uint64_t gc_seed = 0;
    gc->add_option("--scope", gc_scope, "ops, cma, or end2end")->capture_default_str();
    gc->add_option("--seed", gc_seed, "seed for random cases")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            run_gen_synthetic(dspec, gen_out);
        } else if (folds->parsed()) {
            run_build_folds(folds_manifest, n_folds, min_videos, max_ratio, folds_seed, folds_out,
                            folds_out_manifest);
        } else if (tr->parsed()) {
            run_train(tr_cfg.resolve(), tr_manifest, tr_fold, tr_split, tr_ckpt, tr_log,
                      tr_resume);
        } else if (ev->parsed()) {
            RunConfig cfg = ev_cfg.resolve();
            if (ev_runs > 0) cfg.eval_runs = ev_runs;
            run_evaluate(cfg, ev_ckpt, ev_manifest, ev_fold, ev_split, ev_heldout, ev_report,
                         threads);
        } else if (pr->parsed()) {
            run_predict(pr_cfg.resolve(), pr_ckpt, pr_support, pr_support_expr, pr_query,
                        pr_query_expr, pr_out);
        } else if (gc->parsed()) {
            return run_grad_check(gc_scope, gc_seed);
        }
    } catch (const Error& e) {
        std::cerr << "ERROR " << error_code_name(e.code()) << ": " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "ERROR UNKNOWN: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
