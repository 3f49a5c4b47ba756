#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "crossecg/data_io.hpp"

using namespace crossecg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    const std::string cmd = std::string(CROSSECG_CLI_PATH) + " " + args + " 2>&1";
    CmdResult res;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) res.output += buf;
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

} // namespace

TEST_CASE("command line pipeline end to end") {
    const fs::path root = fs::temp_directory_path() / "crossecg_cli_e2e";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path data = root / "data";
    const fs::path segs = root / "segs";
    const fs::path run = root / "run";

    // unknown commands exit 2 with usage text
    {
        const auto r = run_cli("frobnicate");
        CHECK(r.exit_code == 2);
    }

    // synth
    {
        const auto r = run_cli("synth --subjects 4 --rest-sec 40 --ex-sec 24 --record-sec 10 "
                               "--fs 100 --noise 0.03 --seed 5 --out " +
                               data.string());
        CHECK_MESSAGE(r.exit_code == 0, r.output);
        CHECK(fs::exists(data / "manifest.json"));
        const auto m = read_manifest(data / "manifest.json");
        CHECK(m.subjects().size() == 4);
    }

    // preprocess
    {
        const auto r = run_cli("preprocess --in " + data.string() + " --out " + segs.string() +
                               " --report " + (root / "quality.json").string());
        CHECK_MESSAGE(r.exit_code == 0, r.output);
        std::ifstream in(root / "quality.json");
        json rep;
        in >> rep;
        const int total = rep.at("n_passed").get<int>() +
                          rep.at("rejections").at("clipped").get<int>() +
                          rep.at("rejections").at("low_snr").get<int>() +
                          rep.at("rejections").at("bad_rr").get<int>() +
                          rep.at("rejections").at("boundary_truncated").get<int>();
        CHECK(total == rep.at("n_input").get<int>());
        const auto loaded = load_segments(segs);
        CHECK(loaded.size() == static_cast<size_t>(rep.at("n_passed").get<int>()));
    }

    // a malformed config file exits 2 with a machine-readable ConfigError
    {
        const fs::path bad = root / "bad.json";
        std::ofstream out(bad);
        out << "{broken";
        out.close();
        const auto r = run_cli("train --config " + bad.string() + " --data " + data.string() +
                               " --out " + run.string());
        CHECK(r.exit_code == 2);
        CHECK(r.output.find("ConfigError") != std::string::npos);
    }

    // a tiny but real training config
    const fs::path cfg_path = root / "run.json";
    {
        json cfg;
        cfg["seed"] = 11;
        cfg["model"] = {{"branch_kernels", {3, 5, 7, 11}}, {"branch_channels", 2},
                        {"deep_channels", {8, 16}},        {"attention_reduction", 8},
                        {"embedding_dim", 8}};
        cfg["train"] = {{"lr", 0.003},
                        {"batch_size", 8},
                        {"epochs", 6},
                        {"sampler", {{"classes_per_batch", 4}, {"samples_per_class", 2}}}};
        std::ofstream out(cfg_path);
        out << cfg.dump(2);
    }

    // train
    {
        const auto r = run_cli("train --config " + cfg_path.string() + " --data " + data.string() +
                               " --out " + run.string() + " --mode rest2rest");
        CHECK_MESSAGE(r.exit_code == 0, r.output);
        CHECK(fs::exists(run / "history.csv"));
        CHECK(fs::exists(run / "checkpoint.json"));
        CHECK(fs::exists(run / "checkpoint.bin"));
        CHECK(fs::exists(run / "run_config.json"));
    }

    // rerunning with a different config digest into the same directory fails
    {
        json cfg;
        std::ifstream in(cfg_path);
        in >> cfg;
        cfg["seed"] = 999;
        const fs::path other = root / "other.json";
        std::ofstream out(other);
        out << cfg.dump();
        out.close();
        const auto r = run_cli("train --config " + other.string() + " --data " + data.string() +
                               " --out " + run.string());
        CHECK(r.exit_code == 1);
        CHECK(r.output.find("RunDirConflict") != std::string::npos);
    }

    // enroll from the preprocessed segments
    const fs::path gallery = root / "gallery.json";
    {
        const auto r = run_cli("enroll --model " + run.string() + " --data " + segs.string() +
                               " --out " + gallery.string());
        CHECK_MESSAGE(r.exit_code == 0, r.output);
        CHECK(fs::exists(gallery));
    }

    // pick one rest segment per subject as probes
    std::string genuine_user, genuine_probe, impostor_user;
    {
        std::ifstream in(segs / "manifest.json");
        json m;
        in >> m;
        for (const auto& e : m.at("files")) {
            const std::string subj = e.at("subject").get<std::string>();
            if (genuine_user.empty()) {
                genuine_user = subj;
                genuine_probe = (segs / e.at("path").get<std::string>()).string();
            } else if (subj != genuine_user && impostor_user.empty()) {
                impostor_user = subj;
            }
        }
        REQUIRE(!genuine_user.empty());
        REQUIRE(!impostor_user.empty());
    }

    // verify: genuine accepts (exit 0), impostor rejects (exit 1)
    {
        const auto ok = run_cli("verify --gallery " + gallery.string() + " --probe " +
                                genuine_probe + " --user " + genuine_user);
        CHECK_MESSAGE(ok.exit_code == 0, "genuine verify: ", ok.output);
        const auto bad = run_cli("verify --gallery " + gallery.string() + " --probe " +
                                 genuine_probe + " --user " + impostor_user);
        CHECK_MESSAGE(bad.exit_code == 1, "impostor verify: ", bad.output);
    }

    // identify prints the best user
    {
        const auto r = run_cli("identify --gallery " + gallery.string() + " --probe " + genuine_probe);
        CHECK(r.exit_code == 0);
        CHECK(r.output.find(genuine_user) != std::string::npos);
    }

    // eval runs a whole scenario and emits a valid report
    {
        const fs::path eval_dir = root / "eval";
        json cfg;
        std::ifstream in(cfg_path);
        in >> cfg;
        cfg["train"]["epochs"] = 2;
        const fs::path eval_cfg = root / "eval.json";
        std::ofstream out(eval_cfg);
        out << cfg.dump();
        out.close();

        const auto r = run_cli("eval --config " + eval_cfg.string() + " --mode rest2rest --data " +
                               data.string() + " --out " + (eval_dir / "report.json").string());
        CHECK_MESSAGE(r.exit_code == 0, r.output);
        std::ifstream rin(eval_dir / "report.json");
        json rep;
        rin >> rep;
        for (const char* key : {"acc_pct", "far_pct", "frr_pct", "auc_pct", "eer_pct"}) {
            const double v = rep.at(key).get<double>();
            CHECK(v >= 0.0);
            CHECK(v <= 100.0);
        }
        CHECK(rep.at("scenario").get<std::string>() == "rest2rest");
        CHECK(fs::exists(eval_dir / "embeddings.csv"));
    }

    fs::remove_all(root);
}
