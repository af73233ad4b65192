#pragma once

// Small statistics helpers for template matching on timing vectors.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace nnleak {

inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.empty())
        throw std::invalid_argument("pearson: size mismatch");
    double n = double(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= n; my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy; sxx += dx * dx; syy += dy * dy;
    }
    if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

struct MatchResult {
    int best = -1;
    double score = 0;
    double runner_up = -1;
    bool ambiguous = false;   // runner-up ties the best (within epsilon)
    bool degenerate = false;  // observed vector carries no signal
};

// highest-Pearson template; ties break toward the smaller index and are
// reported as ambiguous
template <class TemplateAt>
MatchResult argmax_correlation(std::span<const double> observed, int candidates,
                               TemplateAt&& template_at) {
    MatchResult r;
    std::vector<double> tmpl(observed.size());
    for (int c = 0; c < candidates; ++c) {
        for (std::size_t i = 0; i < observed.size(); ++i) tmpl[i] = template_at(c, i);
        double rho = pearson(observed, tmpl);
        if (std::isnan(rho)) {
            r.degenerate = true;
            return r;
        }
        if (r.best < 0 || rho > r.score) {
            r.runner_up = r.best < 0 ? -1 : r.score;
            r.best = c;
            r.score = rho;
        } else if (rho > r.runner_up) {
            r.runner_up = rho;
        }
    }
    r.ambiguous = r.runner_up >= r.score - 1e-12;
    return r;
}

// threshold between two duration classes found by 2-means on the samples;
// returns NaN when the samples form a single class
inline double two_means_threshold(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("two_means_threshold: empty");
    double lo = xs[0], hi = xs[0];
    for (double v : xs) { lo = std::min(lo, v); hi = std::max(hi, v); }
    if (hi - lo < 1e-9) return std::numeric_limits<double>::quiet_NaN();
    double c0 = lo, c1 = hi;
    for (int iter = 0; iter < 32; ++iter) {
        double s0 = 0, s1 = 0;
        int n0 = 0, n1 = 0;
        double mid = (c0 + c1) / 2;
        for (double v : xs) {
            if (v <= mid) { s0 += v; ++n0; }
            else { s1 += v; ++n1; }
        }
        if (n0 == 0 || n1 == 0) return std::numeric_limits<double>::quiet_NaN();
        double nc0 = s0 / n0, nc1 = s1 / n1;
        if (nc0 == c0 && nc1 == c1) break;
        c0 = nc0; c1 = nc1;
    }
    return (c0 + c1) / 2;
}

}  // namespace nnleak
