#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
};

// Runs the installed binary with stdout+stderr captured to a scratch file.
CliResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path log = fs::temp_directory_path() / ("iseg_cli_out_" + std::to_string(counter++) + ".txt");
    std::string cmd = std::string(ISEG_BIN) + " " + args + " > " + log.string() + " 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    CliResult r;
    r.code = WEXITSTATUS(status);
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    r.out = ss.str();
    fs::remove(log);
    return r;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

bool same_bytes(const fs::path& a, const fs::path& b) { return read_bytes(a) == read_bytes(b); }

std::string temp_dir(const char* leaf) {
    fs::path p = fs::temp_directory_path() / leaf;
    fs::remove_all(p);
    return p.string();
}

std::vector<json> read_jsonl(const fs::path& p) {
    std::ifstream is(p);
    REQUIRE(is.good());
    std::vector<json> lines;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) lines.push_back(json::parse(line));
    return lines;
}

}  // namespace

TEST_CASE("generate writes byte-identical datasets for the same arguments") {
    std::string da = temp_dir("iseg_cli_gen_a");
    std::string db = temp_dir("iseg_cli_gen_b");
    CHECK(run_cli("generate --out " + da + " --scenes 5 --seed 11").code == 0);
    CHECK(run_cli("generate --out " + db + " --scenes 5 --seed 11").code == 0);

    json manifest = json::parse(read_bytes(fs::path(da) / "manifest.json"));
    CHECK(manifest["count"].get<int>() == 5);
    CHECK(manifest["seeds"].size() == 5);

    int compared = 0;
    for (const auto& entry : fs::directory_iterator(da)) {
        fs::path twin = fs::path(db) / entry.path().filename();
        CHECK(fs::exists(twin));
        CHECK(same_bytes(entry.path(), twin));
        ++compared;
    }
    CHECK(compared == 11);  // manifest + 5 tensors + 5 sidecars

    // A different seed must change the payload.
    std::string dc = temp_dir("iseg_cli_gen_c");
    CHECK(run_cli("generate --out " + dc + " --scenes 5 --seed 12").code == 0);
    CHECK(!same_bytes(fs::path(da) / "scene_00000.iatw", fs::path(dc) / "scene_00000.iatw"));
}

TEST_CASE("generate rejects an extent that is not a multiple of 64") {
    std::string d = temp_dir("iseg_cli_gen_bad");
    CliResult r = run_cli("generate --out " + d + " --scenes 2 --size 48");
    CHECK(r.code == 1);
    CHECK(!fs::exists(fs::path(d) / "manifest.json"));
}

TEST_CASE("train without mask supervision logs exactly zero dice and bce") {
    std::string data = temp_dir("iseg_cli_ms0_data");
    REQUIRE(run_cli("generate --out " + data + " --scenes 4 --seed 7").code == 0);

    std::string out = temp_dir("iseg_cli_ms0_run");
    CliResult r = run_cli("train --data " + data + " --out " + out +
                          " --set steps=5 --set mask_stages=0 --set checkpoint_every=100");
    CHECK(r.code == 0);
    CHECK(fs::exists(fs::path(out) / "model.iatc"));

    std::string resolved = read_bytes(fs::path(out) / "config.resolved");
    CHECK(resolved.find("mask_stages = 0\n") != std::string::npos);

    int step_lines = 0;
    for (const json& line : read_jsonl(fs::path(out) / "train_log.jsonl")) {
        if (!line.contains("dice")) continue;
        ++step_lines;
        CHECK(line["dice"].get<double>() == 0.0);
        CHECK(line["bce"].get<double>() == 0.0);
        CHECK(line["total"].get<double>() > 0.0);
    }
    CHECK(step_lines == 5);
}

TEST_CASE("a resumed run reproduces the straight run byte for byte") {
    std::string data = temp_dir("iseg_cli_resume_data");
    REQUIRE(run_cli("generate --out " + data + " --scenes 3 --seed 5").code == 0);

    std::string run_a = temp_dir("iseg_cli_resume_a");
    REQUIRE(run_cli("train --data " + data + " --out " + run_a +
                    " --set steps=6 --set checkpoint_every=3")
                .code == 0);
    REQUIRE(fs::exists(fs::path(run_a) / "ckpt_3.iatc"));

    std::string run_b = temp_dir("iseg_cli_resume_b");
    CHECK(run_cli("train --data " + data + " --out " + run_b + " --resume " + run_a +
                  "/ckpt_3.iatc")
              .code == 0);
    CHECK(same_bytes(fs::path(run_a) / "model.iatc", fs::path(run_b) / "model.iatc"));

    // The stored config drives a resumed run; ad-hoc overrides are a usage error.
    CHECK(run_cli("train --data " + data + " --out " + run_b + " --resume " + run_a +
                  "/ckpt_3.iatc --set steps=9")
              .code == 1);
}

TEST_CASE("eval scores injected ground truth perfectly and is deterministic") {
    std::string data = temp_dir("iseg_cli_eval_data");
    REQUIRE(run_cli("generate --out " + data + " --scenes 5 --seed 7").code == 0);

    std::string run = temp_dir("iseg_cli_eval_run");
    REQUIRE(run_cli("train --data " + data + " --out " + run + " --set steps=3").code == 0);
    std::string ckpt = run + "/model.iatc";

    CliResult gt = run_cli("eval --checkpoint " + ckpt + " --data " + data + " --inject-gt");
    CHECK(gt.code == 0);
    json report = json::parse(gt.out);
    CHECK(report["num_targets"].get<int>() > 0);
    CHECK(report["mask_ap"].get<double>() == 1.0);
    CHECK(report["box_ap"].get<double>() == 1.0);
    CHECK(report["mask_ap50"].get<double>() == 1.0);
    CHECK(report["box_ap75"].get<double>() == 1.0);

    CliResult e1 = run_cli("eval --checkpoint " + ckpt + " --data " + data);
    CliResult e2 = run_cli("eval --checkpoint " + ckpt + " --data " + data);
    CHECK(e1.code == 0);
    CHECK(e1.out == e2.out);

    // A barely trained model scores everything under the 0.5 threshold:
    // nothing is emitted and every AP is exactly zero.
    json raw = json::parse(e1.out);
    CHECK(raw["num_predictions"].get<int>() == 0);
    CHECK(raw["mask_ap"].get<double>() == 0.0);
    CHECK(raw["box_ap"].get<double>() == 0.0);
}

TEST_CASE("infer with a zero threshold emits ranked instances and valid masks") {
    std::string data = temp_dir("iseg_cli_infer_data");
    REQUIRE(run_cli("generate --out " + data + " --scenes 2 --seed 7").code == 0);

    std::string run = temp_dir("iseg_cli_infer_run");
    REQUIRE(run_cli("train --data " + data + " --out " + run + " --set steps=3").code == 0);

    std::string out = temp_dir("iseg_cli_infer_out");
    CliResult r = run_cli("infer --checkpoint " + run + "/model.iatc --image " + data +
                          "/scene_00000.iatw --out " + out +
                          " --set score_threshold=0 --set top_k=4");
    CHECK(r.code == 0);

    json side = json::parse(read_bytes(fs::path(out) / "instances.json"));
    REQUIRE(side.size() == 4);
    double prev = 2.0;
    for (const json& inst : side) {
        double score = inst["score"].get<double>();
        CHECK(score <= prev);  // sorted best first
        prev = score;
        CHECK(inst["class"].get<int>() >= 0);
        CHECK(inst["class"].get<int>() < 3);
        CHECK(inst["class_name"].is_string());
        for (double v : inst["box"].get<std::vector<double>>()) CHECK(std::isfinite(v));

        std::string pgm = read_bytes(fs::path(out) / inst["mask"].get<std::string>());
        std::string header = "P5\n64 64\n255\n";
        REQUIRE(pgm.size() == header.size() + 64 * 64);
        CHECK(pgm.substr(0, header.size()) == header);
    }

    // Re-running produces identical artifacts.
    std::string out2 = temp_dir("iseg_cli_infer_out2");
    REQUIRE(run_cli("infer --checkpoint " + run + "/model.iatc --image " + data +
                    "/scene_00000.iatw --out " + out2 +
                    " --set score_threshold=0 --set top_k=4")
                .code == 0);
    CHECK(same_bytes(fs::path(out) / "instances.json", fs::path(out2) / "instances.json"));
    CHECK(same_bytes(fs::path(out) / "mask_00.pgm", fs::path(out2) / "mask_00.pgm"));
}

TEST_CASE("check suites pass and errors map to the documented exit codes") {
    CliResult ok = run_cli("check --suite params");
    CHECK(ok.code == 0);
    CHECK(ok.out.find("pass") != std::string::npos);

    CHECK(run_cli("check --suite bogus").code == 1);
    CHECK(run_cli("--no-such-flag").code == 1);

    CliResult missing = run_cli("eval --checkpoint /nonexistent.iatc --data /nonexistent");
    CHECK(missing.code == 2);
    CHECK(missing.out.find("error:") != std::string::npos);
}
