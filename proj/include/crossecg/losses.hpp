#pragma once

#include <vector>

#include "crossecg/tensor.hpp"

namespace crossecg {

struct LossConfig {
    double alpha = 0.05;        // mixing weight: alpha*focal + (1-alpha)*ms
    double lambda_thresh = 0.5; // similarity offset
    double tau_clip = 1.0;      // truncation bound on s - lambda
    double beta_p = 2.0;        // positive-pair scaling
    double beta_n = 50.0;       // negative-pair scaling
    double eps = 1e-8;          // cosine denominator stabilizer
    double focal_gamma = 2.0;
};

// S[i][j] = f_i . f_j / (|f_i| |f_j| + eps); symmetric. Forward-only; the
// losses carry their own backward rules.
Tensor cosine_sim_matrix(const Tensor& F, double eps);

// max(-tau, min(tau, s - lambda))
double truncate_sim(double s, double lambda, double tau);

// Multi-similarity loss over truncated cosine similarities:
// (1/N) sum_i [ (1/bp) log(1 + sum_{j in P_i} e^{-bp d_ij})
//             + (1/bn) log(1 + sum_{k in N_i} e^{ bn d_ik}) ]
// Self-pairs are excluded; empty P_i / N_i contribute nothing; the log-sums
// are evaluated in overflow-safe form. Gradient is defined to be 0 where the
// truncation clamps.
Tensor ms_loss(Tape* tp, const Tensor& F, const std::vector<int>& labels,
               const LossConfig& cfg);

// Mean of -(1 - p_t)^gamma * log(p_t) with p from a softmax over each row,
// computed via log-softmax. gamma = 0 reduces exactly to cross-entropy.
Tensor focal_loss(Tape* tp, const Tensor& logits, const std::vector<int>& labels,
                  double gamma);

// alpha * focal + (1 - alpha) * ms
Tensor total_loss(Tape* tp, const Tensor& logits, const Tensor& F,
                  const std::vector<int>& labels, const LossConfig& cfg);

} // namespace crossecg
