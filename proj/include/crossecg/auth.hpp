#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "crossecg/tensor.hpp"

namespace crossecg {

struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> impostor;
    std::map<std::string, std::vector<double>> per_user_genuine;

    // S of the local-distribution quantiles: genuine and impostor pooled.
    std::vector<double> pooled() const;

    double mu_genuine() const;
    double mu_impostor() const;
    double sigma_genuine() const; // population std
};

// All same-label (genuine) and cross-label (impostor) pair cosine
// similarities over a labeled embedding set [N,D].
ScoreSet build_scores(const Tensor& embeddings, const std::vector<std::string>& labels);

// F_g = (tau_b - mu_i) / (mu_g - mu_i)
double global_factor(double tau_b, double mu_g, double mu_i);

// F_p = (mu_p - mu_g) / sigma_g
double personal_factor(double mu_p, double mu_g, double sigma_g);

// Lower empirical quantiles Q(.25)/Q(.50)/Q(.75) of the pooled scores map to
// factor knots 0.2/0.4/0.6; tau_b is interpolated piecewise-linearly between
// them and clamped to [0.2, 0.6] outside. Equal quantiles collapse to a step.
double local_factor(double tau_b, std::vector<double> scores);

struct ThresholdWeights {
    double w_g = 0.5;
    double w_p = 0.3;
    double w_l = 0.2;
};

struct ThresholdProfile {
    std::string user;
    double tau_b = 0.5;
    double F_g = 0.0, F_p = 0.0, F_l = 0.0;
    double tau_p = 0.5;
    ThresholdWeights weights;
    bool clamped = false; // tau_p hit the [0.01, 0.99] operating range
};

// tau_p = tau_b * (w_g (1 + F_g) + w_p (1 + F_p) + w_l F_l), clamped to
// [0.01, 0.99] with the clamp flagged.
double adaptive_threshold(double tau_b, double F_g, double F_p, double F_l,
                          const ThresholdWeights& w, bool* clamped = nullptr);

// One profile per user appearing in the score set.
std::map<std::string, ThresholdProfile> build_profiles(const ScoreSet& scores, double tau_b,
                                                       const ThresholdWeights& weights);

struct UserTemplate {
    std::string user;
    std::vector<double> vec; // unit norm
};

// Unit-normalized mean embedding. Throws ZeroMean if the mean vanishes.
UserTemplate enroll(const std::string& user, const Tensor& embeddings);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct Decision {
    bool accept = false;
    double score = 0.0;
};

// Accept iff cosine(probe, template) >= tau_p.
Decision verify_probe(const std::vector<double>& probe, const UserTemplate& tmpl,
                      const ThresholdProfile& profile);

// Nearest template by cosine; ties break to the lexicographically smaller id.
std::pair<std::string, double> identify_probe(const std::vector<double>& probe,
                                              const std::vector<UserTemplate>& templates);

// ---- Gallery file ------------------------------------------------------------

struct Gallery {
    int embedding_dim = 0;
    std::string model_checkpoint; // where the embedder lives, for the CLI
    std::map<std::string, UserTemplate> templates;
    std::map<std::string, ThresholdProfile> profiles;
};

void save_gallery(const Gallery& g, const std::filesystem::path& path);
Gallery load_gallery(const std::filesystem::path& path);

} // namespace crossecg
