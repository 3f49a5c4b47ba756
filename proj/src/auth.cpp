#include "crossecg/auth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "crossecg/losses.hpp"

namespace crossecg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}
} // namespace

std::vector<double> ScoreSet::pooled() const {
    std::vector<double> all = genuine;
    all.insert(all.end(), impostor.begin(), impostor.end());
    return all;
}

double ScoreSet::mu_genuine() const { return mean_of(genuine); }
double ScoreSet::mu_impostor() const { return mean_of(impostor); }

double ScoreSet::sigma_genuine() const {
    const double mu = mu_genuine();
    double var = 0.0;
    for (double s : genuine) var += (s - mu) * (s - mu);
    return std::sqrt(var / static_cast<double>(genuine.size()));
}

ScoreSet build_scores(const Tensor& embeddings, const std::vector<std::string>& labels) {
    if (embeddings.ndim() != 2) fail("ShapeMismatch", "build_scores expects embeddings [N,D]");
    const int N = embeddings.dim(0);
    if (static_cast<int>(labels.size()) != N)
        fail("ShapeMismatch", "build_scores label count must match rows");

    std::map<std::string, int> counts;
    for (const auto& l : labels) counts[l] += 1;
    const bool has_pair =
        std::any_of(counts.begin(), counts.end(), [](const auto& kv) { return kv.second >= 2; });
    if (counts.size() < 2 || !has_pair)
        fail("InsufficientData",
             "score statistics need >= 2 users and a user with >= 2 samples");

    const Tensor S = cosine_sim_matrix(embeddings, 1e-8);
    ScoreSet out;
    for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j) {
            const double s = S.vec()[static_cast<size_t>(i) * N + j];
            if (labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)]) {
                out.genuine.push_back(s);
                out.per_user_genuine[labels[static_cast<size_t>(i)]].push_back(s);
            } else {
                out.impostor.push_back(s);
            }
        }
    if (out.genuine.empty() || out.impostor.empty())
        fail("InsufficientData", "score set needs both genuine and impostor pairs");
    return out;
}

double global_factor(double tau_b, double mu_g, double mu_i) {
    if (std::abs(mu_g - mu_i) <= 1e-9)
        fail("DegenerateSeparation", "genuine and impostor means coincide");
    return (tau_b - mu_i) / (mu_g - mu_i);
}

double personal_factor(double mu_p, double mu_g, double sigma_g) {
    if (sigma_g <= 1e-9) fail("DegenerateSpread", "genuine score spread is zero");
    return (mu_p - mu_g) / sigma_g;
}

namespace {

// lower empirical quantile: smallest x with F(x) >= p
double lower_quantile(const std::vector<double>& sorted, double p) {
    const size_t n = sorted.size();
    const size_t k = static_cast<size_t>(std::ceil(p * static_cast<double>(n)));
    return sorted[std::min(n - 1, k > 0 ? k - 1 : 0)];
}

} // namespace

double local_factor(double tau_b, std::vector<double> scores) {
    if (scores.size() < 4)
        fail("TooFewScores", "quantile interpolation needs at least 4 scores");
    std::sort(scores.begin(), scores.end());

    const double qx[3] = {lower_quantile(scores, 0.25), lower_quantile(scores, 0.50),
                          lower_quantile(scores, 0.75)};
    const double qf[3] = {0.2, 0.4, 0.6};

    // equal adjacent quantiles collapse to a step (keep the higher factor)
    std::vector<std::pair<double, double>> knots;
    for (int i = 0; i < 3; ++i) {
        if (!knots.empty() && knots.back().first == qx[i])
            knots.back().second = qf[i];
        else
            knots.emplace_back(qx[i], qf[i]);
    }

    if (tau_b < knots.front().first) return 0.2;
    if (tau_b >= knots.back().first) return knots.back().second;
    for (size_t i = 0; i + 1 < knots.size(); ++i) {
        const auto [x0, f0] = knots[i];
        const auto [x1, f1] = knots[i + 1];
        if (tau_b >= x0 && tau_b < x1)
            return f0 + (f1 - f0) * (tau_b - x0) / (x1 - x0);
    }
    return knots.back().second;
}

double adaptive_threshold(double tau_b, double F_g, double F_p, double F_l,
                          const ThresholdWeights& w, bool* clamped) {
    if (w.w_g < 0.0 || w.w_p < 0.0 || w.w_l < 0.0)
        fail("ConfigError", "threshold weights must be non-negative");
    const double raw = tau_b * (w.w_g * (1.0 + F_g) + w.w_p * (1.0 + F_p) + w.w_l * F_l);
    const double out = std::clamp(raw, 0.01, 0.99);
    if (clamped) *clamped = out != raw;
    return out;
}

std::map<std::string, ThresholdProfile> build_profiles(const ScoreSet& scores, double tau_b,
                                                       const ThresholdWeights& weights) {
    const double mu_g = scores.mu_genuine();
    const double mu_i = scores.mu_impostor();
    const double sigma_g = scores.sigma_genuine();
    const double fg = global_factor(tau_b, mu_g, mu_i);
    const double fl = local_factor(tau_b, scores.pooled());

    std::map<std::string, ThresholdProfile> out;
    for (const auto& [user, gen] : scores.per_user_genuine) {
        ThresholdProfile p;
        p.user = user;
        p.tau_b = tau_b;
        p.F_g = fg;
        p.F_p = gen.empty() ? 0.0 : personal_factor(mean_of(gen), mu_g, sigma_g);
        p.F_l = fl;
        p.weights = weights;
        p.tau_p = adaptive_threshold(tau_b, p.F_g, p.F_p, p.F_l, weights, &p.clamped);
        out[user] = p;
    }
    return out;
}

UserTemplate enroll(const std::string& user, const Tensor& embeddings) {
    if (embeddings.ndim() != 2 || embeddings.dim(0) < 1)
        fail("ShapeMismatch", "enroll expects a non-empty [n,D] embedding matrix");
    const int n = embeddings.dim(0), D = embeddings.dim(1);
    std::vector<double> mean(static_cast<size_t>(D), 0.0);
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < D; ++d)
            mean[static_cast<size_t>(d)] += embeddings.vec()[static_cast<size_t>(i) * D + d];
    double norm = 0.0;
    for (double& v : mean) {
        v /= n;
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-9) fail("ZeroMean", "mean embedding vanishes for user " + user);
    for (double& v : mean) v /= norm;
    return {user, std::move(mean)};
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) fail("ShapeMismatch", "cosine of mismatched vectors");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double den = std::sqrt(na) * std::sqrt(nb);
    return den > 0.0 ? dot / den : 0.0;
}

Decision verify_probe(const std::vector<double>& probe, const UserTemplate& tmpl,
                      const ThresholdProfile& profile) {
    Decision d;
    d.score = cosine(probe, tmpl.vec);
    d.accept = d.score >= profile.tau_p;
    return d;
}

std::pair<std::string, double> identify_probe(const std::vector<double>& probe,
                                              const std::vector<UserTemplate>& templates) {
    if (templates.empty()) fail("NoTemplates", "identify with an empty gallery");
    std::vector<const UserTemplate*> sorted;
    for (const auto& t : templates) sorted.push_back(&t);
    std::sort(sorted.begin(), sorted.end(),
              [](const UserTemplate* a, const UserTemplate* b) { return a->user < b->user; });
    const UserTemplate* best = sorted.front();
    double best_score = cosine(probe, best->vec);
    for (size_t i = 1; i < sorted.size(); ++i) {
        const double s = cosine(probe, sorted[i]->vec);
        if (s > best_score) {
            best = sorted[i];
            best_score = s;
        }
    }
    return {best->user, best_score};
}

void save_gallery(const Gallery& g, const fs::path& path) {
    json j;
    j["schema_version"] = 1;
    j["embedding_dim"] = g.embedding_dim;
    j["model_checkpoint"] = g.model_checkpoint;
    j["users"] = json::object();
    for (const auto& [user, tmpl] : g.templates) {
        json u;
        u["template"] = tmpl.vec;
        const auto it = g.profiles.find(user);
        if (it != g.profiles.end()) {
            const auto& p = it->second;
            u["tau_p"] = p.tau_p;
            u["tau_b"] = p.tau_b;
            u["F_g"] = p.F_g;
            u["F_p"] = p.F_p;
            u["F_l"] = p.F_l;
            u["weights"] = {{"w_g", p.weights.w_g}, {"w_p", p.weights.w_p}, {"w_l", p.weights.w_l}};
            u["clamped"] = p.clamped;
        }
        j["users"][user] = u;
    }
    std::ofstream out(path);
    if (!out) fail("IoFailure", "cannot write gallery: " + path.string());
    out << j.dump(2) << "\n";
}

Gallery load_gallery(const fs::path& path) {
    if (!fs::exists(path)) fail("MissingFile", "no gallery: " + path.string());
    std::ifstream in(path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("MalformedHeader", path.string() + ": " + e.what());
    }
    Gallery g;
    g.embedding_dim = j.value("embedding_dim", 0);
    g.model_checkpoint = j.value("model_checkpoint", "");
    for (const auto& [user, u] : j.at("users").items()) {
        UserTemplate t;
        t.user = user;
        t.vec = u.at("template").get<std::vector<double>>();
        g.templates[user] = t;

        ThresholdProfile p;
        p.user = user;
        p.tau_p = u.value("tau_p", 0.5);
        p.tau_b = u.value("tau_b", 0.5);
        p.F_g = u.value("F_g", 0.0);
        p.F_p = u.value("F_p", 0.0);
        p.F_l = u.value("F_l", 0.0);
        if (u.contains("weights")) {
            p.weights.w_g = u.at("weights").value("w_g", 0.5);
            p.weights.w_p = u.at("weights").value("w_p", 0.3);
            p.weights.w_l = u.at("weights").value("w_l", 0.2);
        }
        p.clamped = u.value("clamped", false);
        g.profiles[user] = p;
    }
    return g;
}

} // namespace crossecg
