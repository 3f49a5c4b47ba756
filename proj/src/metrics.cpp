#include "crossecg/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "crossecg/common.hpp"

namespace crossecg {

namespace {

void require_scores(const std::vector<double>& genuine, const std::vector<double>& impostor) {
    if (genuine.empty() || impostor.empty())
        fail("EmptyScores", "need both genuine and impostor scores");
}

std::vector<double> distinct_sorted_desc(const std::vector<double>& genuine,
                                         const std::vector<double>& impostor) {
    std::vector<double> all = genuine;
    all.insert(all.end(), impostor.begin(), impostor.end());
    std::sort(all.begin(), all.end(), std::greater<>());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return all;
}

} // namespace

std::pair<double, double> far_frr(const std::vector<double>& genuine,
                                  const std::vector<double>& impostor, double threshold) {
    require_scores(genuine, impostor);
    std::size_t fa = 0, fr = 0;
    for (double s : impostor)
        if (s >= threshold) ++fa;
    for (double s : genuine)
        if (s < threshold) ++fr;
    return {static_cast<double>(fa) / impostor.size(), static_cast<double>(fr) / genuine.size()};
}

RocResult roc_auc(const std::vector<double>& genuine, const std::vector<double>& impostor) {
    require_scores(genuine, impostor);
    const auto thresholds = distinct_sorted_desc(genuine, impostor);

    RocResult res;
    res.curve.push_back({thresholds.front() + 1.0, 0.0, 0.0});
    for (double t : thresholds) {
        std::size_t ga = 0, ia = 0;
        for (double s : genuine)
            if (s >= t) ++ga;
        for (double s : impostor)
            if (s >= t) ++ia;
        res.curve.push_back({t, static_cast<double>(ia) / impostor.size(),
                             static_cast<double>(ga) / genuine.size()});
    }
    if (res.curve.back().far < 1.0 || res.curve.back().tpr < 1.0)
        res.curve.push_back({thresholds.back() - 1.0, 1.0, 1.0});

    double auc = 0.0;
    for (size_t i = 1; i < res.curve.size(); ++i)
        auc += (res.curve[i].far - res.curve[i - 1].far) *
               (res.curve[i].tpr + res.curve[i - 1].tpr) * 0.5;
    res.auc = auc;
    return res;
}

EerResult eer(const std::vector<double>& genuine, const std::vector<double>& impostor) {
    require_scores(genuine, impostor);
    auto thresholds = distinct_sorted_desc(genuine, impostor);
    thresholds.insert(thresholds.begin(), thresholds.front() + 1.0);

    EerResult best;
    double best_gap = std::numeric_limits<double>::infinity();
    for (double t : thresholds) {
        const auto [farv, frrv] = far_frr(genuine, impostor, t);
        const double gap = std::abs(farv - frrv);
        const double e = 0.5 * (farv + frrv);
        // ties on the gap resolve to the more favorable operating point
        if (gap < best_gap || (gap == best_gap && e < best.eer)) {
            best_gap = gap;
            best.threshold = t;
            best.eer = e;
        }
    }
    return best;
}

} // namespace crossecg
