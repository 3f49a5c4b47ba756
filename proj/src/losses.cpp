#include "crossecg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace crossecg {

Tensor cosine_sim_matrix(const Tensor& F, double eps) {
    if (F.ndim() != 2) fail("ShapeMismatch", "cosine_sim_matrix expects [N,D]");
    const int N = F.dim(0), D = F.dim(1);
    std::vector<double> norms(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) {
        const double* fi = F.ptr() + static_cast<size_t>(i) * D;
        double s = 0.0;
        for (int d = 0; d < D; ++d) s += fi[d] * fi[d];
        norms[static_cast<size_t>(i)] = std::sqrt(s);
    }
    Tensor S({N, N});
    for (int i = 0; i < N; ++i) {
        const double* fi = F.ptr() + static_cast<size_t>(i) * D;
        for (int j = i; j < N; ++j) {
            const double* fj = F.ptr() + static_cast<size_t>(j) * D;
            double dot = 0.0;
            for (int d = 0; d < D; ++d) dot += fi[d] * fj[d];
            const double v = dot / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)] + eps);
            S.vec()[static_cast<size_t>(i) * N + j] = v;
            S.vec()[static_cast<size_t>(j) * N + i] = v;
        }
    }
    return S;
}

double truncate_sim(double s, double lambda, double tau) {
    if (tau <= 0.0) fail("ConfigError", "truncation bound tau must be positive");
    return std::max(-tau, std::min(tau, s - lambda));
}

namespace {

// log(1 + sum_k e^{a_k}), shifted so no exponent overflows
double log1p_sum_exp(const std::vector<double>& a) {
    if (a.empty()) return 0.0;
    double m = 0.0; // the implicit "1 +" term has exponent 0
    for (double v : a) m = std::max(m, v);
    double s = std::exp(-m);
    for (double v : a) s += std::exp(v - m);
    return m + std::log(s);
}

} // namespace

Tensor ms_loss(Tape* tp, const Tensor& F, const std::vector<int>& labels,
               const LossConfig& cfg) {
    if (F.ndim() != 2) fail("ShapeMismatch", "ms_loss expects embeddings [N,D]");
    const int N = F.dim(0), D = F.dim(1);
    if (static_cast<int>(labels.size()) != N)
        fail("ShapeMismatch", "ms_loss label count does not match batch");
    if (cfg.tau_clip <= 0.0 || cfg.beta_p <= 0.0 || cfg.beta_n <= 0.0)
        fail("ConfigError", "ms_loss requires tau, beta_p, beta_n > 0");

    // pairwise cosine similarities and truncation state
    std::vector<double> norms(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) {
        const double* fi = F.ptr() + static_cast<size_t>(i) * D;
        double s = 0.0;
        for (int d = 0; d < D; ++d) s += fi[d] * fi[d];
        norms[static_cast<size_t>(i)] = std::sqrt(s);
    }
    std::vector<double> dot(static_cast<size_t>(N) * N), sim(static_cast<size_t>(N) * N),
        dval(static_cast<size_t>(N) * N);
    std::vector<char> open(static_cast<size_t>(N) * N, 0); // inside the clamp region
    for (int i = 0; i < N; ++i) {
        const double* fi = F.ptr() + static_cast<size_t>(i) * D;
        for (int j = 0; j < N; ++j) {
            const double* fj = F.ptr() + static_cast<size_t>(j) * D;
            double dp = 0.0;
            for (int d = 0; d < D; ++d) dp += fi[d] * fj[d];
            const size_t ij = static_cast<size_t>(i) * N + j;
            dot[ij] = dp;
            const double s = dp / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)] + cfg.eps);
            sim[ij] = s;
            const double raw = s - cfg.lambda_thresh;
            dval[ij] = std::max(-cfg.tau_clip, std::min(cfg.tau_clip, raw));
            open[ij] = (raw > -cfg.tau_clip && raw < cfg.tau_clip) ? 1 : 0;
        }
    }

    // per-anchor log-sum terms and the d-space gradient weights
    double loss = 0.0;
    auto wgt = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * N, 0.0);
    const double invN = 1.0 / N;
    for (int i = 0; i < N; ++i) {
        std::vector<double> pos_exp, neg_exp;
        std::vector<int> pos_idx, neg_idx;
        for (int j = 0; j < N; ++j) {
            if (j == i) continue;
            const size_t ij = static_cast<size_t>(i) * N + j;
            if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
                pos_exp.push_back(-cfg.beta_p * dval[ij]);
                pos_idx.push_back(j);
            } else {
                neg_exp.push_back(cfg.beta_n * dval[ij]);
                neg_idx.push_back(j);
            }
        }
        const double lpos = log1p_sum_exp(pos_exp);
        const double lneg = log1p_sum_exp(neg_exp);
        loss += lpos / cfg.beta_p + lneg / cfg.beta_n;

        // dL/dd_ij = -(1/N) e^{-bp d}/(1+S_pos), dL/dd_ik = (1/N) e^{bn d}/(1+S_neg)
        for (size_t t = 0; t < pos_idx.size(); ++t) {
            const size_t ij = static_cast<size_t>(i) * N + pos_idx[t];
            (*wgt)[ij] -= invN * std::exp(pos_exp[t] - lpos);
        }
        for (size_t t = 0; t < neg_idx.size(); ++t) {
            const size_t ij = static_cast<size_t>(i) * N + neg_idx[t];
            (*wgt)[ij] += invN * std::exp(neg_exp[t] - lneg);
        }
    }
    loss *= invN;

    Tensor out = Tensor::scalar(loss);
    const int pf = node_on(tp, F);
    if (tp && pf >= 0) {
        auto fd = F.data;
        auto dots = std::make_shared<std::vector<double>>(std::move(dot));
        auto nrm = std::make_shared<std::vector<double>>(std::move(norms));
        auto opn = std::make_shared<std::vector<char>>(std::move(open));
        const double eps = cfg.eps;
        out.node = tp->add_node(1, [=](Tape& t, const std::vector<double>& g) {
            auto* buf = t.grad_buf(pf, N * D);
            if (!buf) return;
            const double go = g[0];
            for (int i = 0; i < N; ++i) {
                for (int j = i + 1; j < N; ++j) {
                    const size_t ij = static_cast<size_t>(i) * N + j;
                    const size_t ji = static_cast<size_t>(j) * N + i;
                    // s_ij is shared by anchors i and j; clamp zeroes the path
                    double w = 0.0;
                    if ((*opn)[ij]) w += (*wgt)[ij];
                    if ((*opn)[ji]) w += (*wgt)[ji];
                    if (w == 0.0) continue;
                    w *= go;
                    const double ni = (*nrm)[static_cast<size_t>(i)];
                    const double nj = (*nrm)[static_cast<size_t>(j)];
                    const double den = ni * nj + eps;
                    const double dp = (*dots)[ij];
                    const double* fi = fd->data() + static_cast<size_t>(i) * D;
                    const double* fj = fd->data() + static_cast<size_t>(j) * D;
                    double* gi = buf->data() + static_cast<size_t>(i) * D;
                    double* gj = buf->data() + static_cast<size_t>(j) * D;
                    const double ci = ni > 0.0 ? dp * nj / (ni * den * den) : 0.0;
                    const double cj = nj > 0.0 ? dp * ni / (nj * den * den) : 0.0;
                    for (int d = 0; d < D; ++d) {
                        gi[d] += w * (fj[d] / den - ci * fi[d]);
                        gj[d] += w * (fi[d] / den - cj * fj[d]);
                    }
                }
            }
        });
        out.tape_id = tp->id();
    }
    return out;
}

Tensor focal_loss(Tape* tp, const Tensor& logits, const std::vector<int>& labels,
                  double gamma) {
    if (logits.ndim() != 2) fail("ShapeMismatch", "focal_loss expects logits [N,C]");
    const int N = logits.dim(0), C = logits.dim(1);
    if (C < 2) fail("ShapeMismatch", "focal_loss needs at least two classes");
    if (static_cast<int>(labels.size()) != N)
        fail("ShapeMismatch", "focal_loss label count does not match batch");
    for (int lbl : labels)
        if (lbl < 0 || lbl >= C) fail("ShapeMismatch", "focal_loss label out of range");

    // row-wise log-softmax
    auto q = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * C);
    auto logp_t = std::make_shared<std::vector<double>>(static_cast<size_t>(N));
    double loss = 0.0;
    for (int i = 0; i < N; ++i) {
        const double* row = logits.ptr() + static_cast<size_t>(i) * C;
        double m = row[0];
        for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(row[c] - m);
        const double lse = m + std::log(s);
        for (int c = 0; c < C; ++c)
            (*q)[static_cast<size_t>(i) * C + c] = std::exp(row[c] - lse);
        const double u = row[labels[static_cast<size_t>(i)]] - lse; // log p_t <= 0
        (*logp_t)[static_cast<size_t>(i)] = u;
        const double om = -std::expm1(u); // 1 - p_t
        loss += -std::pow(om, gamma) * u;
    }
    loss /= N;

    Tensor out = Tensor::scalar(loss);
    const int pl = node_on(tp, logits);
    if (tp && pl >= 0) {
        auto lbls = std::make_shared<std::vector<int>>(labels);
        out.node = tp->add_node(1, [=](Tape& t, const std::vector<double>& g) {
            auto* buf = t.grad_buf(pl, N * C);
            if (!buf) return;
            const double go = g[0] / N;
            for (int i = 0; i < N; ++i) {
                const double u = (*logp_t)[static_cast<size_t>(i)];
                const double p = std::exp(u);
                const double om = -std::expm1(u);
                // d/du of -(1-e^u)^gamma * u
                double dldu;
                if (om > 0.0)
                    dldu = gamma * std::pow(om, gamma - 1.0) * p * u - std::pow(om, gamma);
                else
                    dldu = gamma == 0.0 ? -1.0 : 0.0;
                const int target = (*lbls)[static_cast<size_t>(i)];
                double* grow = buf->data() + static_cast<size_t>(i) * C;
                const double* qrow = q->data() + static_cast<size_t>(i) * C;
                for (int c = 0; c < C; ++c) {
                    const double du = (c == target ? 1.0 : 0.0) - qrow[c];
                    grow[c] += go * dldu * du;
                }
            }
        });
        out.tape_id = tp->id();
    }
    return out;
}

Tensor total_loss(Tape* tp, const Tensor& logits, const Tensor& F,
                  const std::vector<int>& labels, const LossConfig& cfg) {
    if (logits.dim(0) != F.dim(0))
        fail("ShapeMismatch", "total_loss batch mismatch between heads");
    Tensor lf = focal_loss(tp, logits, labels, cfg.focal_gamma);
    Tensor lm = ms_loss(tp, F, labels, cfg);
    return add(tp, scale_const(tp, lf, cfg.alpha), scale_const(tp, lm, 1.0 - cfg.alpha));
}

} // namespace crossecg
