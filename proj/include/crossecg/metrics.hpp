#pragma once

#include <string>
#include <utility>
#include <vector>

namespace crossecg {

// FAR = fraction of impostor scores >= threshold,
// FRR = fraction of genuine scores < threshold.
std::pair<double, double> far_frr(const std::vector<double>& genuine,
                                  const std::vector<double>& impostor, double threshold);

struct RocPoint {
    double threshold = 0.0;
    double far = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    std::vector<RocPoint> curve; // thresholds strictly decreasing, FAR non-decreasing
    double auc = 0.0;            // trapezoidal; equals P(g > i) + 0.5 P(g == i)
};

RocResult roc_auc(const std::vector<double>& genuine, const std::vector<double>& impostor);

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

// Threshold minimizing |FAR - FRR|; EER = (FAR + FRR) / 2 there.
EerResult eer(const std::vector<double>& genuine, const std::vector<double>& impostor);

} // namespace crossecg
