#include "crossecg/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "crossecg/auth.hpp"
#include "crossecg/training.hpp"

namespace crossecg {

namespace fs = std::filesystem;
using nlohmann::json;

json report_to_json(const MetricsReport& r) {
    json j;
    j["scenario"] = to_string(r.scenario);
    j["n_subjects"] = r.n_subjects;
    j["acc_pct"] = r.acc_pct;
    j["acc_argmax_pct"] = r.acc_argmax_pct;
    j["far_pct"] = r.far_pct;
    j["frr_pct"] = r.frr_pct;
    j["auc_pct"] = r.auc_pct;
    j["eer_pct"] = r.eer_pct;
    j["threshold_used"] = r.threshold_used;
    j["config_digest"] = r.config_digest;
    j["split_digest"] = r.split_digest;
    return j;
}

void write_report(const MetricsReport& r, const fs::path& path) {
    std::ofstream out(path);
    if (!out) fail("IoFailure", "cannot write report: " + path.string());
    out << report_to_json(r).dump(2) << "\n";
}

std::vector<Segment> preprocess_entries(const std::vector<ManifestEntry>& entries,
                                        const fs::path& base_dir, QualityReport* combined) {
    std::vector<std::vector<Segment>> per_record(entries.size());
    std::vector<QualityReport> reports(entries.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(entries.size()); ++i) {
        const EcgRecord rec = read_record(base_dir / entries[static_cast<size_t>(i)].path);
        auto [segs, rep] = preprocess_record(rec);
        per_record[static_cast<size_t>(i)] = std::move(segs);
        reports[static_cast<size_t>(i)] = rep;
    }
    std::vector<Segment> out;
    for (size_t i = 0; i < per_record.size(); ++i) {
        out.insert(out.end(), per_record[i].begin(), per_record[i].end());
        if (combined) {
            combined->n_input += reports[i].n_input;
            combined->n_passed += reports[i].n_passed;
            combined->clipped += reports[i].clipped;
            combined->low_snr += reports[i].low_snr;
            combined->bad_rr += reports[i].bad_rr;
            combined->boundary_truncated += reports[i].boundary_truncated;
        }
    }
    return out;
}

namespace {

void write_embeddings_csv(const EmbeddedSet& set, const fs::path& path) {
    std::ofstream out(path);
    if (!out) fail("IoFailure", "cannot write embeddings: " + path.string());
    const int D = set.embeddings.dim(1);
    out << "subject,state";
    for (int d = 0; d < D; ++d) out << ",e" << d;
    out << "\n";
    char buf[32];
    for (size_t i = 0; i < set.subject_ids.size(); ++i) {
        out << set.subject_ids[i] << "," << to_string(set.states[i]);
        for (int d = 0; d < D; ++d) {
            std::snprintf(buf, sizeof(buf), ",%.9g",
                          set.embeddings.vec()[i * static_cast<size_t>(D) + static_cast<size_t>(d)]);
            out << buf;
        }
        out << "\n";
    }
}

std::vector<double> embedding_row(const Tensor& m, size_t row) {
    const int D = m.dim(1);
    return {m.ptr() + row * static_cast<size_t>(D), m.ptr() + (row + 1) * static_cast<size_t>(D)};
}

} // namespace

MetricsReport run_scenario(const RunConfig& cfg, Mode mode, const fs::path& data_dir,
                           const fs::path& out_dir) {
    const DatasetManifest manifest = read_manifest(data_dir / "manifest.json");
    const auto subjects = manifest.subjects();

    SplitSpec split;
    split.train_fraction = cfg.data.train_fraction;
    split.val_fraction = cfg.data.val_fraction;
    split.seed = cfg.seed;
    split.mode = mode;
    const Partition part = partition(manifest, split);

    std::vector<Segment> train_segs = preprocess_entries(part.train, manifest.base_dir);
    std::vector<Segment> val_segs = preprocess_entries(part.val, manifest.base_dir);
    std::vector<Segment> test_segs = preprocess_entries(part.test, manifest.base_dir);
    if (train_segs.empty() || test_segs.empty())
        fail("InsufficientData", "scenario produced an empty train or test segment pool");

    if (cfg.train.augment_target > 0)
        train_segs = augment_minority(train_segs, cfg.train.augment_target, cfg.seed + 7);

    ModelConfig mc = cfg.model;
    mc.n_subjects = static_cast<int>(subjects.size());
    Model model(mc, cfg.seed);

    fit(model, train_segs, val_segs, subjects, cfg.train, cfg.loss, out_dir);

    // score statistics from the training distribution, baseline from val EER
    EmbeddedSet train_emb = embed_set(model, train_segs, subjects);
    EmbeddedSet val_emb = embed_set(model, val_segs.empty() ? train_segs : val_segs, subjects);
    EmbeddedSet test_emb = embed_set(model, test_segs, subjects);

    double tau_b = cfg.auth.tau_b;
    if (tau_b < 0.0) {
        const ScoreSet val_scores = build_scores(val_emb.embeddings, val_emb.subject_ids);
        tau_b = eer(val_scores.genuine, val_scores.impostor).threshold;
        tau_b = std::clamp(tau_b, 0.01, 0.99);
    }
    const ScoreSet train_scores = build_scores(train_emb.embeddings, train_emb.subject_ids);
    ThresholdWeights weights{cfg.auth.w_g, cfg.auth.w_p, cfg.auth.w_l};
    auto profiles = build_profiles(train_scores, tau_b, weights);

    // enrollment: per-subject mean of training embeddings
    std::vector<UserTemplate> templates;
    std::map<std::string, std::vector<size_t>> rows_by_subject;
    for (size_t i = 0; i < train_emb.subject_ids.size(); ++i)
        rows_by_subject[train_emb.subject_ids[i]].push_back(i);
    const int D = mc.embedding_dim;
    for (const auto& subj : subjects) {
        const auto& rows = rows_by_subject[subj];
        if (rows.empty()) fail("InsufficientData", "no training embeddings for subject " + subj);
        Tensor sub({static_cast<int>(rows.size()), D});
        for (size_t r = 0; r < rows.size(); ++r)
            std::copy_n(train_emb.embeddings.ptr() + rows[r] * static_cast<size_t>(D), D,
                        sub.ptr() + r * static_cast<size_t>(D));
        templates.push_back(enroll(subj, sub));
    }
    std::map<std::string, const UserTemplate*> template_by_user;
    for (const auto& t : templates) template_by_user[t.user] = &t;

    // identification + verification trials on the test set
    const size_t n_test = test_emb.subject_ids.size();
    int id_hits = 0, argmax_hits = 0;
    std::vector<double> genuine_scores, impostor_scores;
    std::int64_t far_accepts = 0, far_trials = 0, frr_rejects = 0, frr_trials = 0;
    const auto preds = argmax_rows(test_emb.logits);
    for (size_t i = 0; i < n_test; ++i) {
        const auto probe = embedding_row(test_emb.embeddings, i);
        const std::string& truth = test_emb.subject_ids[i];
        const auto [who, score] = identify_probe(probe, templates);
        if (who == truth) ++id_hits;
        if (preds[i] >= 0 && subjects[static_cast<size_t>(preds[i])] == truth) ++argmax_hits;

        for (const auto& tmpl : templates) {
            const auto& profile = profiles.at(tmpl.user);
            const Decision d = verify_probe(probe, tmpl, profile);
            if (tmpl.user == truth) {
                genuine_scores.push_back(d.score);
                ++frr_trials;
                if (!d.accept) ++frr_rejects;
            } else {
                impostor_scores.push_back(d.score);
                ++far_trials;
                if (d.accept) ++far_accepts;
            }
        }
    }

    MetricsReport rep;
    rep.scenario = mode;
    rep.n_subjects = static_cast<int>(subjects.size());
    rep.acc_pct = 100.0 * id_hits / static_cast<double>(n_test);
    rep.acc_argmax_pct = 100.0 * argmax_hits / static_cast<double>(n_test);
    rep.far_pct = far_trials ? 100.0 * far_accepts / static_cast<double>(far_trials) : 0.0;
    rep.frr_pct = frr_trials ? 100.0 * frr_rejects / static_cast<double>(frr_trials) : 0.0;
    rep.auc_pct = 100.0 * roc_auc(genuine_scores, impostor_scores).auc;
    rep.eer_pct = 100.0 * eer(genuine_scores, impostor_scores).eer;
    double tau_sum = 0.0;
    for (const auto& [user, p] : profiles) tau_sum += p.tau_p;
    rep.threshold_used = profiles.empty() ? tau_b : tau_sum / profiles.size();
    rep.config_digest = cfg.digest;
    rep.split_digest = split_digest(part);

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_report(rep, out_dir / "report.json");
        write_embeddings_csv(test_emb, out_dir / "embeddings.csv");

        Gallery g;
        g.embedding_dim = D;
        g.model_checkpoint = fs::absolute(out_dir).string();
        for (const auto& t : templates) g.templates[t.user] = t;
        g.profiles = profiles;
        save_gallery(g, out_dir / "gallery.json");
    }
    return rep;
}

ModelConfig ablation_variant(const ModelConfig& base, const std::string& name) {
    ModelConfig mc = base;
    if (name == "A1") {
        mc.use_multi_scale = true;
        mc.use_deep_conv = true;
        mc.use_attention = true;
    } else if (name == "A2") {
        mc.use_multi_scale = false;
        mc.use_deep_conv = true;
        mc.use_attention = true;
    } else if (name == "A3") {
        mc.use_multi_scale = true;
        mc.use_deep_conv = false;
        mc.use_attention = true;
    } else if (name == "A4") {
        mc.use_multi_scale = true;
        mc.use_deep_conv = true;
        mc.use_attention = false;
    } else if (name == "A5") {
        mc.use_multi_scale = false;
        mc.use_deep_conv = true;
        mc.use_attention = false;
    } else {
        fail("ConfigError", "unknown ablation variant: " + name);
    }
    return mc;
}

void write_ablation_csv(const std::vector<std::string>& names,
                        const std::vector<MetricsReport>& reports, const fs::path& path) {
    std::ofstream out(path);
    if (!out) fail("IoFailure", "cannot write ablation table: " + path.string());
    out << "model,multi_scale,deep_conv,attention,acc_pct,auc_pct,far_pct,frr_pct,eer_pct\n";
    char line[256];
    for (size_t i = 0; i < reports.size(); ++i) {
        const ModelConfig mc = ablation_variant(ModelConfig{}, names[i]);
        std::snprintf(line, sizeof(line), "%s,%d,%d,%d,%.4f,%.4f,%.4f,%.4f,%.4f\n",
                      names[i].c_str(), mc.use_multi_scale ? 1 : 0, mc.use_deep_conv ? 1 : 0,
                      mc.use_attention ? 1 : 0, reports[i].acc_pct, reports[i].auc_pct,
                      reports[i].far_pct, reports[i].frr_pct, reports[i].eer_pct);
        out << line;
    }
}

std::vector<MetricsReport> run_ablation(const RunConfig& cfg, const fs::path& data_dir,
                                        const fs::path& out_dir) {
    const std::vector<std::string> names{"A1", "A2", "A3", "A4", "A5"};
    std::vector<MetricsReport> reports;
    for (const auto& name : names) {
        RunConfig variant = cfg;
        variant.model = ablation_variant(cfg.model, name);
        variant.digest = config_digest(variant);
        const fs::path sub = out_dir.empty() ? fs::path() : out_dir / name;
        reports.push_back(run_scenario(variant, Mode::Rest2Exercise, data_dir, sub));
    }
    for (size_t i = 1; i < reports.size(); ++i)
        if (reports[i].split_digest != reports[0].split_digest)
            fail("SplitMismatch", "ablation variants saw different splits");
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_ablation_csv(names, reports, out_dir / "table.csv");
    }
    return reports;
}

} // namespace crossecg
