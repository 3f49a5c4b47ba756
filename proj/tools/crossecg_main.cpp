#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crossecg/auth.hpp"
#include "crossecg/config.hpp"
#include "crossecg/data_io.hpp"
#include "crossecg/preprocess.hpp"
#include "crossecg/scenario.hpp"
#include "crossecg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crossecg;

namespace {

void print_error(const std::string& code, const std::string& message) {
    json j;
    j["error"] = code;
    j["message"] = message;
    std::cerr << j.dump() << "\n";
}

// A probe file is either one preprocessed segment or a raw record that still
// needs the conditioning pipeline. Returns the mean embedding, renormalized.
std::vector<double> embed_probe(Model& model, const fs::path& probe_path) {
    std::vector<Segment> segs;
    {
        std::ifstream in(probe_path);
        std::string line;
        std::getline(in, line);
        const bool is_segment = line.find("\"r_index\"") != std::string::npos;
        if (is_segment) {
            segs.push_back(read_segment(probe_path));
        } else {
            const EcgRecord rec = read_record(probe_path);
            auto [passed, rep] = preprocess_record(rec);
            segs = std::move(passed);
        }
    }
    if (segs.empty()) fail("InsufficientData", "probe yielded no usable segments");
    EmbeddedSet set = embed_set(model, segs, {});
    const int D = set.embeddings.dim(1);
    std::vector<double> mean(static_cast<size_t>(D), 0.0);
    for (size_t i = 0; i < segs.size(); ++i)
        for (int d = 0; d < D; ++d)
            mean[static_cast<size_t>(d)] +=
                set.embeddings.vec()[i * static_cast<size_t>(D) + static_cast<size_t>(d)];
    double norm = 0.0;
    for (double& v : mean) {
        v /= static_cast<double>(segs.size());
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) fail("ZeroMean", "probe embedding vanished");
    for (double& v : mean) v /= norm;
    return mean;
}

Model load_model_for_gallery(const Gallery& g, const std::string& override_path) {
    const std::string where = override_path.empty() ? g.model_checkpoint : override_path;
    if (where.empty())
        fail("ConfigError", "gallery has no model checkpoint path; pass --model");
    return load_checkpoint(where).restore();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-state ECG biometric pipeline"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic ECG dataset");
    SynthDatasetOptions sopt;
    std::string synth_out;
    synth->add_option("--subjects", sopt.n_subjects, "Number of subjects");
    synth->add_option("--rest-sec", sopt.rest_sec, "Resting signal per subject (s)");
    synth->add_option("--ex-sec", sopt.exercise_sec, "Post-exercise signal per subject (s)");
    synth->add_option("--record-sec", sopt.record_sec, "Length of each record (s)");
    synth->add_option("--fs", sopt.fs_hz, "Sampling rate (Hz)");
    synth->add_option("--noise", sopt.noise_std, "White noise std");
    synth->add_option("--seed", sopt.seed, "Seed");
    synth->add_option("--out", synth_out, "Output dataset directory")->required();

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "Condition and segment a dataset");
    std::string prep_in, prep_out, prep_report;
    prep->add_option("--in", prep_in, "Dataset directory (manifest.json)")->required();
    prep->add_option("--out", prep_out, "Segment output directory")->required();
    prep->add_option("--report", prep_report, "Quality report path");

    // train
    auto* train = app.add_subcommand("train", "Train on a dataset partition");
    std::string train_cfg, train_data, train_out, train_mode = "rest2rest";
    bool train_force = false;
    train->add_option("--config", train_cfg, "Run config JSON")->required();
    train->add_option("--data", train_data, "Dataset directory");
    train->add_option("--out", train_out, "Run output directory")->required();
    train->add_option("--mode", train_mode, "Partition mode");
    train->add_flag("--force", train_force, "Overwrite a run directory with a different digest");

    // eval
    auto* eval = app.add_subcommand("eval", "Run a full scenario and report metrics");
    std::string eval_cfg, eval_mode, eval_out, eval_data;
    bool eval_force = false;
    eval->add_option("--config", eval_cfg, "Run config JSON")->required();
    eval->add_option("--mode", eval_mode, "Scenario mode")->required();
    eval->add_option("--out", eval_out, "Report path (report.json)")->required();
    eval->add_option("--data", eval_data, "Dataset directory (overrides config)");
    eval->add_flag("--force", eval_force, "Overwrite a run directory with a different digest");

    // ablation
    auto* abl = app.add_subcommand("ablation", "Run the A1-A5 ablation grid");
    std::string abl_cfg, abl_out, abl_data;
    bool abl_force = false;
    abl->add_option("--config", abl_cfg, "Run config JSON")->required();
    abl->add_option("--out", abl_out, "Comparison table path (table.csv)")->required();
    abl->add_option("--data", abl_data, "Dataset directory (overrides config)");
    abl->add_flag("--force", abl_force, "Overwrite a run directory with a different digest");

    // enroll
    auto* enr = app.add_subcommand("enroll", "Build a gallery from segments");
    std::string enr_model, enr_data, enr_out;
    double enr_tau_b = -1.0;
    enr->add_option("--model", enr_model, "Checkpoint directory")->required();
    enr->add_option("--data", enr_data, "Segment directory (from preprocess)")->required();
    enr->add_option("--out", enr_out, "Gallery path (gallery.json)")->required();
    enr->add_option("--tau-b", enr_tau_b, "Baseline threshold (default: EER on the data)");

    // verify
    auto* ver = app.add_subcommand("verify", "Verify a probe against an enrolled user");
    std::string ver_gallery, ver_probe, ver_user, ver_model;
    ver->add_option("--gallery", ver_gallery, "Gallery path")->required();
    ver->add_option("--probe", ver_probe, "Probe .ecg file")->required();
    ver->add_option("--user", ver_user, "Claimed user id")->required();
    ver->add_option("--model", ver_model, "Checkpoint directory (overrides gallery)");

    // identify
    auto* ident = app.add_subcommand("identify", "Identify a probe against the gallery");
    std::string id_gallery, id_probe, id_model;
    ident->add_option("--gallery", id_gallery, "Gallery path")->required();
    ident->add_option("--probe", id_probe, "Probe .ecg file")->required();
    ident->add_option("--model", id_model, "Checkpoint directory (overrides gallery)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            const DatasetManifest m = synth_dataset(sopt, synth_out);
            std::printf("wrote %zu records for %d subjects to %s\n", m.records.size(),
                        sopt.n_subjects, synth_out.c_str());
            return 0;
        }

        if (prep->parsed()) {
            const DatasetManifest m = read_manifest(fs::path(prep_in) / "manifest.json");
            QualityReport total;
            std::vector<Segment> segs = preprocess_entries(m.records, m.base_dir, &total);
            save_segments(segs, prep_out);
            json rep;
            rep["n_input"] = total.n_input;
            rep["n_passed"] = total.n_passed;
            rep["rejections"] = {{"clipped", total.clipped},
                                 {"low_snr", total.low_snr},
                                 {"bad_rr", total.bad_rr},
                                 {"boundary_truncated", total.boundary_truncated}};
            if (!prep_report.empty()) {
                std::ofstream out(prep_report);
                out << rep.dump(2) << "\n";
            }
            std::printf("%d peaks -> %zu segments (%d rejected)\n", total.n_input, segs.size(),
                        total.total_rejected());
            return 0;
        }

        if (train->parsed()) {
            RunConfig cfg = validate_config(train_cfg);
            if (!train_data.empty()) cfg.data.dir = train_data;
            if (cfg.data.dir.empty()) fail("ConfigError", "no dataset directory given");
            claim_run_dir(train_out, cfg, train_force);

            const DatasetManifest m = read_manifest(fs::path(cfg.data.dir) / "manifest.json");
            SplitSpec split{cfg.data.train_fraction, cfg.data.val_fraction, cfg.seed,
                            mode_from_string(train_mode)};
            const Partition part = partition(m, split);
            auto train_segs = preprocess_entries(part.train, m.base_dir);
            auto val_segs = preprocess_entries(part.val, m.base_dir);
            if (cfg.train.augment_target > 0)
                train_segs = augment_minority(train_segs, cfg.train.augment_target, cfg.seed + 7);

            const auto subjects = m.subjects();
            ModelConfig mc = cfg.model;
            mc.n_subjects = static_cast<int>(subjects.size());
            Model model(mc, cfg.seed);
            const FitResult res =
                fit(model, train_segs, val_segs, subjects, cfg.train, cfg.loss, train_out);
            std::printf("best epoch %d: val_loss %.6f val_acc %.4f\n", res.best_epoch,
                        res.best_val_loss, res.best_val_acc);
            return 0;
        }

        if (eval->parsed()) {
            RunConfig cfg = validate_config(eval_cfg);
            if (!eval_data.empty()) cfg.data.dir = eval_data;
            if (cfg.data.dir.empty()) fail("ConfigError", "no dataset directory given");
            const fs::path report_path = eval_out;
            const fs::path out_dir = report_path.parent_path().empty()
                                         ? fs::path(".")
                                         : report_path.parent_path();
            claim_run_dir(out_dir, cfg, eval_force);
            const MetricsReport rep =
                run_scenario(cfg, mode_from_string(eval_mode), cfg.data.dir, out_dir);
            if (report_path.filename() != "report.json")
                write_report(rep, report_path);
            std::printf("%s: acc %.2f%% far %.2f%% frr %.2f%% auc %.2f%%\n",
                        to_string(rep.scenario).c_str(), rep.acc_pct, rep.far_pct, rep.frr_pct,
                        rep.auc_pct);
            return 0;
        }

        if (abl->parsed()) {
            RunConfig cfg = validate_config(abl_cfg);
            if (!abl_data.empty()) cfg.data.dir = abl_data;
            if (cfg.data.dir.empty()) fail("ConfigError", "no dataset directory given");
            const fs::path table_path = abl_out;
            const fs::path out_dir =
                table_path.parent_path().empty() ? fs::path(".") : table_path.parent_path();
            claim_run_dir(out_dir, cfg, abl_force);
            const auto reports = run_ablation(cfg, cfg.data.dir, out_dir);
            if (table_path.filename() != "table.csv")
                write_ablation_csv({"A1", "A2", "A3", "A4", "A5"}, reports, table_path);
            for (size_t i = 0; i < reports.size(); ++i)
                std::printf("A%zu: acc %.2f%% auc %.2f%%\n", i + 1, reports[i].acc_pct,
                            reports[i].auc_pct);
            return 0;
        }

        if (enr->parsed()) {
            Model model = load_checkpoint(enr_model).restore();
            const auto segs = load_segments(enr_data);
            if (segs.empty()) fail("InsufficientData", "no segments to enroll");
            EmbeddedSet set = embed_set(model, segs, {});

            const ScoreSet scores = build_scores(set.embeddings, set.subject_ids);
            double tau_b = enr_tau_b;
            if (tau_b < 0.0)
                tau_b = std::clamp(eer(scores.genuine, scores.impostor).threshold, 0.01, 0.99);
            auto profiles = build_profiles(scores, tau_b, ThresholdWeights{});

            Gallery g;
            g.embedding_dim = model.config().embedding_dim;
            g.model_checkpoint = fs::absolute(enr_model).string();
            std::map<std::string, std::vector<size_t>> rows;
            for (size_t i = 0; i < set.subject_ids.size(); ++i)
                rows[set.subject_ids[i]].push_back(i);
            const int D = model.config().embedding_dim;
            for (const auto& [user, idxs] : rows) {
                Tensor sub({static_cast<int>(idxs.size()), D});
                for (size_t r = 0; r < idxs.size(); ++r)
                    std::copy_n(set.embeddings.ptr() + idxs[r] * static_cast<size_t>(D), D,
                                sub.ptr() + r * static_cast<size_t>(D));
                g.templates[user] = enroll(user, sub);
            }
            g.profiles = profiles;
            save_gallery(g, enr_out);
            std::printf("enrolled %zu users (tau_b %.4f) -> %s\n", g.templates.size(), tau_b,
                        enr_out.c_str());
            return 0;
        }

        if (ver->parsed()) {
            const Gallery g = load_gallery(ver_gallery);
            if (!g.templates.count(ver_user))
                fail("NoTemplates", "user not enrolled: " + ver_user);
            Model model = load_model_for_gallery(g, ver_model);
            const auto probe = embed_probe(model, ver_probe);
            const Decision d =
                verify_probe(probe, g.templates.at(ver_user), g.profiles.at(ver_user));
            std::printf("%.6f\n", d.score);
            return d.accept ? 0 : 1;
        }

        if (ident->parsed()) {
            const Gallery g = load_gallery(id_gallery);
            Model model = load_model_for_gallery(g, id_model);
            const auto probe = embed_probe(model, id_probe);
            std::vector<UserTemplate> templates;
            for (const auto& [user, t] : g.templates) templates.push_back(t);
            const auto [who, score] = identify_probe(probe, templates);
            std::printf("%s %.6f\n", who.c_str(), score);
            return 0;
        }
    } catch (const Error& e) {
        print_error(e.code(), e.what());
        return e.code() == "ConfigError" ? 2 : 1;
    } catch (const std::exception& e) {
        print_error("InternalError", e.what());
        return 1;
    }
    return 2;
}
