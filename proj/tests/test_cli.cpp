#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr interleaved
};

CmdResult run(const std::string& args) {
    const std::string cmd = std::string(CMASEG_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    CmdResult result;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (fgets(buf.data(), buf.size(), pipe)) result.output += buf.data();
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), {});
}

const std::string kTinyCfg =
    " --set d_model=8 --set n_heads=2 --set d_text=4 --set text_heads=2"
    " --set enc_base_width=2 --set enc_layers=1 --set dec_layers=1 --set ffn_mult=2"
    " --set n_slots=2 --set seg_channels=3 --set k_shot=2 --set n_query=2"
    " --set holdout_per_class=0";

struct Workdir {
    std::string dir;
    Workdir() {
        dir = (fs::temp_directory_path() / "cmaseg_cli_test").string();
        if (!fs::exists(dir + "/data/manifest.json")) {
            fs::create_directories(dir);
            auto gen = run("gen-synthetic --classes 2 --videos-per-class 3 --frames 4 --size 64"
                           " --seed 5 --out " + dir + "/data");
            REQUIRE(gen.exit_code == 0);
            auto folds = run("build-folds --manifest " + dir + "/data/manifest.json --folds 2"
                             " --min-videos 2 --seed 1 --out " + dir + "/folds");
            REQUIRE(folds.exit_code == 0);
        }
    }
};

}  // namespace

TEST_CASE("gen-synthetic reports counts and is byte-stable") {
    Workdir wd;
    const std::string out1 = wd.dir + "/regen1", out2 = wd.dir + "/regen2";
    fs::remove_all(out1);
    fs::remove_all(out2);
    auto r1 = run("gen-synthetic --classes 2 --videos-per-class 2 --frames 3 --size 64 --seed 9"
                  " --out " + out1);
    CHECK(r1.exit_code == 0);
    CHECK(r1.output.find("videos: 4") != std::string::npos);
    auto r2 = run("gen-synthetic --classes 2 --videos-per-class 2 --frames 3 --size 64 --seed 9"
                  " --out " + out2);
    CHECK(r2.exit_code == 0);
    CHECK(slurp(out1 + "/manifest.json") == slurp(out2 + "/manifest.json"));
    CHECK(slurp(out1 + "/videos/circle_000/frame_0000.ppm") ==
          slurp(out2 + "/videos/circle_000/frame_0000.ppm"));
    fs::remove_all(out1);
    fs::remove_all(out2);
}

TEST_CASE("build-folds exits zero and writes disjoint folds") {
    Workdir wd;
    auto fold = nlohmann::json::parse(slurp(wd.dir + "/folds/fold_1.json"));
    CHECK(fold.at("fold") == 1);
    for (const auto& t : fold.at("test_classes"))
        for (const auto& tr : fold.at("train_classes")) CHECK(t != tr);
}

TEST_CASE("train writes one log line per step and an init checkpoint for zero steps") {
    Workdir wd;
    auto zero = run("train" + kTinyCfg + " --set steps=0 --manifest " + wd.dir +
                    "/data/manifest.json --fold " + wd.dir + "/folds/fold_1.json"
                    " --out-checkpoint " + wd.dir + "/zero.ckpt --log " + wd.dir + "/zero.log");
    CHECK(zero.exit_code == 0);
    CHECK(fs::exists(wd.dir + "/zero.ckpt"));
    CHECK(slurp(wd.dir + "/zero.log").empty());

    auto three = run("train" + kTinyCfg + " --set steps=3 --manifest " + wd.dir +
                     "/data/manifest.json --fold " + wd.dir + "/folds/fold_1.json"
                     " --out-checkpoint " + wd.dir + "/three.ckpt --log " + wd.dir + "/three.log");
    CHECK(three.exit_code == 0);
    const std::string log = slurp(wd.dir + "/three.log");
    CHECK(std::count(log.begin(), log.end(), '\n') == 3);
}

TEST_CASE("evaluate validates the report schema and is deterministic") {
    Workdir wd;
    if (!fs::exists(wd.dir + "/three.ckpt")) {
        auto r = run("train" + kTinyCfg + " --set steps=3 --manifest " + wd.dir +
                     "/data/manifest.json --fold " + wd.dir + "/folds/fold_1.json"
                     " --out-checkpoint " + wd.dir + "/three.ckpt");
        REQUIRE(r.exit_code == 0);
    }
    const std::string eval_args =
        "evaluate" + kTinyCfg + " --set eval_episodes=2 --set eval_runs=2 --checkpoint " +
        wd.dir + "/three.ckpt --manifest " + wd.dir + "/data/manifest.json --fold " + wd.dir +
        "/folds/fold_1.json --report ";
    auto r1 = run(eval_args + wd.dir + "/rep1.json");
    CHECK(r1.exit_code == 0);
    auto r2 = run(eval_args + wd.dir + "/rep2.json");
    CHECK(r2.exit_code == 0);
    CHECK(slurp(wd.dir + "/rep1.json") == slurp(wd.dir + "/rep2.json"));

    auto rep = nlohmann::json::parse(slurp(wd.dir + "/rep1.json"));
    for (const char* key : {"fold", "runs", "mean_J", "mean_F", "mean_JF", "episodes"})
        CHECK(rep.contains(key));
    for (const auto& e : rep.at("episodes")) {
        CHECK(e.contains("episode_id"));
        CHECK(e.at("J").get<double>() >= 0.0);
        CHECK(e.at("F").get<double>() <= 1.0);
    }
}

TEST_CASE("predict emits one PGM per query frame at the frame size") {
    Workdir wd;
    if (!fs::exists(wd.dir + "/three.ckpt")) {
        auto r = run("train" + kTinyCfg + " --set steps=1 --manifest " + wd.dir +
                     "/data/manifest.json --fold " + wd.dir + "/folds/fold_1.json"
                     " --out-checkpoint " + wd.dir + "/three.ckpt");
        REQUIRE(r.exit_code == 0);
    }
    fs::remove_all(wd.dir + "/pred");
    auto r = run("predict" + kTinyCfg + " --checkpoint " + wd.dir + "/three.ckpt" +
                 " --support-video " + wd.dir + "/data/videos/circle_000" +
                 " --support-expr \"the red circle moving left\"" + " --query-video " + wd.dir +
                 "/data/videos/circle_001" + " --query-expr \"the red circle moving left\"" +
                 " --out-masks " + wd.dir + "/pred");
    CHECK(r.exit_code == 0);
    size_t masks = 0;
    for (const auto& e : fs::directory_iterator(wd.dir + "/pred"))
        if (e.path().extension() == ".pgm") ++masks;
    CHECK(masks == 4);  // the query video has 4 frames
    const std::string pgm = slurp(wd.dir + "/pred/mask_0000.pgm");
    CHECK(pgm.rfind("P5\n64 64\n255\n", 0) == 0);
    CHECK(fs::exists(wd.dir + "/pred/trajectory.json"));
}

TEST_CASE("errors go to stderr with a machine-parsable prefix and nonzero exit") {
    auto missing = run("evaluate --checkpoint /nonexistent.ckpt --manifest /nonexistent.json"
                       " --fold /nonexistent.json --report /tmp/r.json");
    CHECK(missing.exit_code != 0);
    CHECK(missing.output.find("ERROR IO:") != std::string::npos);

    auto badkey = run("train --set not_a_key=1 --manifest x --fold y --out-checkpoint z");
    CHECK(badkey.exit_code == 2);
    CHECK(badkey.output.find("ERROR CONFIG:") != std::string::npos);
    CHECK(badkey.output.find("not_a_key") != std::string::npos);

    Workdir wd;
    auto nan = run("train" + kTinyCfg + " --set steps=1 --set lr=1e300 --manifest " + wd.dir +
                   "/data/manifest.json --fold " + wd.dir + "/folds/fold_1.json"
                   " --out-checkpoint " + wd.dir + "/nan.ckpt --resume " + wd.dir + "/nan_seed.ckpt");
    // absent resume file: IO error is also acceptable evidence of clean failure
    CHECK(nan.exit_code != 0);
    CHECK(nan.output.find("ERROR") != std::string::npos);
}

TEST_CASE("grad-check scopes run and name every op") {
    auto ops = run("grad-check --scope ops");
    CHECK(ops.exit_code == 0);
    for (const char* op : {"matmul", "softmax", "conv2d", "bilinear_resize", "linear",
                           "layer_norm", "sigmoid", "embed"})
        CHECK(ops.output.find(std::string("PASS ") + op) != std::string::npos);

    auto bad = run("grad-check --scope nonsense");
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("ERROR CONFIG:") != std::string::npos);
}
