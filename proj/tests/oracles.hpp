#pragma once

// Test-only oracles, independent of the library's analytic/optimized paths:
//   - central finite differences for gradient checks
//   - all-pairs Hausdorff and set-arithmetic Dice references
//   - random simplex sampling for distribution-valued property tests

#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "bbuda/rng.hpp"
#include "bbuda/tensor.hpp"

namespace oracles {

// Central finite differences over a raw float buffer, step 1e-3. The loss
// callable must re-evaluate the full forward pass (double-valued).
inline std::vector<double> finite_difference(float* data, size_t n,
                                             const std::function<double()>& loss,
                                             double step = 1e-3) {
    std::vector<double> grad(n);
    for (size_t i = 0; i < n; ++i) {
        float saved = data[i];
        data[i] = static_cast<float>(saved + step);
        double up = loss();
        data[i] = static_cast<float>(saved - step);
        double down = loss();
        data[i] = saved;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

inline std::vector<double> finite_difference(bbuda::Tensor& t, const std::function<double()>& loss,
                                             double step = 1e-3) {
    return finite_difference(t.data(), t.size(), loss, step);
}

// max(1e-2 relative, 1e-4 absolute) unless overridden.
inline bool grad_close(double analytic, double numeric, double rel = 1e-2, double abs = 1e-4) {
    double tol = std::max(rel * std::abs(numeric), abs);
    return std::abs(analytic - numeric) <= tol;
}

// ---------------------------------------------------------------------------
// metric references
// ---------------------------------------------------------------------------

// O(|P|*|T|) Hausdorff over pixel coordinate sets, Euclidean metric.
inline double hausdorff_bruteforce(const std::vector<std::pair<int, int>>& P,
                                   const std::vector<std::pair<int, int>>& T) {
    if (P.empty() || T.empty()) return std::numeric_limits<double>::infinity();
    auto directed = [](const std::vector<std::pair<int, int>>& A,
                       const std::vector<std::pair<int, int>>& B) {
        double worst = 0.0;
        for (const auto& a : A) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& b : B) {
                double dy = a.first - b.first, dx = a.second - b.second;
                best = std::min(best, dy * dy + dx * dx);
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::sqrt(std::max(directed(P, T), directed(T, P)));
}

// Dice via explicit set arithmetic.
inline double dice_bruteforce(const std::vector<std::pair<int, int>>& P,
                              const std::vector<std::pair<int, int>>& T) {
    if (P.empty() && T.empty()) return 1.0;
    if (P.empty() || T.empty()) return 0.0;
    std::set<std::pair<int, int>> sp(P.begin(), P.end()), st(T.begin(), T.end());
    size_t inter = 0;
    for (const auto& p : sp) inter += st.count(p);
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sp.size() + st.size());
}

// ---------------------------------------------------------------------------
// random generators
// ---------------------------------------------------------------------------

inline std::vector<float> random_simplex(bbuda::Rng& rng, size_t c) {
    std::vector<float> v(c);
    double s = 0.0;
    for (auto& x : v) {
        double e = -std::log(1.0 - rng.uniform());  // Exp(1) -> Dirichlet(1,..,1)
        x = static_cast<float>(e);
        s += e;
    }
    for (auto& x : v) x = static_cast<float>(x / s);
    return v;
}

inline bbuda::ProbMap random_probmap(bbuda::Rng& rng, size_t c, size_t h, size_t w) {
    bbuda::ProbMap pm(c, h, w);
    for (size_t p = 0; p < h * w; ++p) {
        auto simplex = random_simplex(rng, c);
        for (size_t k = 0; k < c; ++k) pm.values[k * h * w + p] = simplex[k];
    }
    return pm;
}

inline std::vector<float> random_vector(bbuda::Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

}  // namespace oracles
