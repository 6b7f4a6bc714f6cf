// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pstf/rng.h"
#include "pstf/vecmath.h"

namespace pstf::test {

inline std::string scenePath(const std::string &name) {
    return std::string(PSTF_SCENE_DIR) + "/" + name;
}

inline std::string toolPath() {
    return PSTF_TOOL_PATH;
}

/// Running mean/variance accumulator.
struct Welford {
    double mean = 0.0, m2 = 0.0;
    long long n = 0;

    void add(double x) {
        ++n;
        double d = x - mean;
        mean += d / double(n);
        m2 += d * (x - mean);
    }
    double variance() const { return n > 1 ? m2 / double(n - 1) : 0.0; }
    double stderrOfMean() const { return std::sqrt(variance() / double(n)); }
};

/// One-sided chi-square bound: statistic below mean + 3 sigma of the
/// chi-square distribution with dof degrees of freedom.
inline bool chiSquarePasses(double statistic, int dof) {
    return statistic < dof + 3.0 * std::sqrt(2.0 * double(dof));
}

/// chi-square statistic for observed counts against expected counts.
inline double chiSquareStatistic(const std::vector<double> &observed,
                                 const std::vector<double> &expected) {
    double stat = 0.0;
    for (size_t i = 0; i < observed.size(); ++i)
        if (expected[i] > 0.0)
            stat += sqr(observed[i] - expected[i]) / expected[i];
    return stat;
}

/// Midpoint quadrature of f(theta, phi) * sin(theta) over the upper
/// hemisphere (solid-angle measure).
inline double hemisphereQuadrature(const std::function<double(double, double)> &f,
                                   int thetaSteps = 512, int phiSteps = 512) {
    double sum = 0.0;
    double dTheta = 0.5 * kPi / thetaSteps;
    double dPhi = kTwoPi / phiSteps;
    for (int i = 0; i < thetaSteps; ++i) {
        double theta = (i + 0.5) * dTheta;
        for (int j = 0; j < phiSteps; ++j) {
            double phi = (j + 0.5) * dPhi;
            sum += f(theta, phi) * std::sin(theta);
        }
    }
    return sum * dTheta * dPhi;
}

} // namespace pstf::test
