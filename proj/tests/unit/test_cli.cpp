#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <json.hpp>

#include "tempdir.hpp"

using testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;  // stdout and stderr interleaved
};

Run msa2net(const std::string& args) {
    const std::string cmd = std::string(MSA2NET_BIN) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) r.output += buf.data();
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

void check_error(const Run& r) {
    CHECK(r.code != 0);
    // one line of diagnostics
    CHECK(r.output.find("msa2net: error: ") != std::string::npos);
    CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("pipeline through the command line") {
    TempDir dir("cli");
    const fs::path data = dir / "ds", run = dir / "run";

    write(dir / "spec.json", R"({"image_size": 32, "num_classes": 3,
        "class_areas": [[0.05, 0.12], [0.1, 0.2]], "seed": 3})");
    auto r = msa2net("generate --out " + q(data) + " --n 10 --spec " + q(dir / "spec.json"));
    REQUIRE(r.code == 0);
    CHECK(fs::exists(data / "manifest.json"));

    r = msa2net("fingerprint --data " + q(data) + " --out " + q(dir / "fp.json"));
    REQUIRE(r.code == 0);
    const auto fp = nlohmann::json::parse(slurp(dir / "fp.json"));
    CHECK(fp.contains("class_names"));

    write(dir / "run.json", R"({"data": ")" + data.string() + R"(", "out_dir": ")" + run.string() +
                                R"(", "encoder": {"input_size": 32, "stage_dims": [8, 16, 24, 32],
        "blocks_per_stage": [1, 1, 0, 0], "heads_per_stage": [2, 2, 2, 2]},
        "epochs": 1, "batch_size": 4, "lr": 0.002, "seed": 1, "val_split": "train"})");
    r = msa2net("train --quiet --config " + q(dir / "run.json"));
    REQUIRE(r.code == 0);
    const fs::path ckpt = run / "best.ckpt";
    REQUIRE(fs::exists(ckpt));
    CHECK(fs::exists(run / "log.csv"));

    r = msa2net("train --quiet --config " + q(dir / "run.json") + " --guidance Q2 --no-bridge --seed 4 --out-dir " +
                q(dir / "run_q2"));
    CHECK(r.code == 0);

    r = msa2net("eval --ckpt " + q(ckpt) + " --data " + q(data) + " --out " + q(dir / "eval.json") + " --split all");
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(slurp(dir / "eval.json")).contains("mean_dice"));

    const fs::path image = data / "images/case_0000.png";
    r = msa2net("predict --ckpt " + q(ckpt) + " --image " + q(image) + " --out " + q(dir / "pred.png") + " --probs " +
                q(dir / "probs.bin"));
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "pred.png"));
    CHECK(fs::file_size(dir / "probs.bin") == 32u * 32u * 3u * sizeof(double));
    CHECK(nlohmann::json::parse(slurp(dir / "probs.bin.json")).at("shape") == nlohmann::json{32, 32, 3});

    r = msa2net("report --ckpt " + q(ckpt) + " --json " + q(dir / "report.json"));
    REQUIRE(r.code == 0);
    CHECK(r.output.find("Stage1") != std::string::npos);
    CHECK(fs::exists(dir / "report.json"));

    CHECK(msa2net("plot-data --in " + q(dir / "fp.json") + " --out " + q(dir / "box.csv")).code == 0);
    CHECK(msa2net("plot-data --in " + q(run / "log.csv") + " --out " + q(dir / "curve.csv")).code == 0);
    CHECK(slurp(dir / "curve.csv").starts_with("epoch,loss,val_dice,val_hd95"));

    SUBCASE("errors are one line and nonzero") {
        check_error(msa2net("fingerprint --data " + q(dir / "missing") + " --out " + q(dir / "x.json")));
        check_error(msa2net("eval --ckpt " + q(dir / "fp.json") + " --data " + q(data) + " --out " + q(dir / "e.json")));
        check_error(msa2net("predict --ckpt " + q(ckpt) + " --image " + q(dir / "none.png") + " --out " +
                            q(dir / "p.png")));
        check_error(msa2net("report --ckpt " + q(dir / "absent.ckpt")));
        write(dir / "bad.json", R"({"data": "x", "learning_rate": 1})");
        check_error(msa2net("train --config " + q(dir / "bad.json")));
        check_error(msa2net("train --config " + q(dir / "run.json") + " --guidance Q7"));
        check_error(msa2net("plot-data --in " + q(dir / "nothing.csv") + " --out " + q(dir / "o.csv")));
    }
}

TEST_CASE("usage errors are rejected") {
    CHECK(msa2net("").code != 0);
    CHECK(msa2net("frobnicate").code != 0);
    CHECK(msa2net("eval --ckpt x").code != 0);
    CHECK(msa2net("fingerprint --data d --out o --split dev").code != 0);
    CHECK(msa2net("--help").code == 0);
}
