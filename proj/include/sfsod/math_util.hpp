#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "sfsod/errors.hpp"

namespace sfsod {

/// Median with the midpoint convention for even lengths.
inline double median(std::vector<double> v) {
    if (v.empty()) throw DataError("median of empty vector");
    const size_t m = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + m, v.end());
    double hi = v[m];
    if (v.size() % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + m);
    return 0.5 * (lo + hi);
}

inline double median(const Eigen::VectorXd& v) {
    return median(std::vector<double>(v.data(), v.data() + v.size()));
}

/// Raw median absolute deviation (no consistency factor).
inline double mad(const Eigen::VectorXd& v) {
    const double med = median(v);
    std::vector<double> dev(static_cast<size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) dev[static_cast<size_t>(i)] = std::abs(v[i] - med);
    return median(std::move(dev));
}

/// Indices of the k largest |v[i]|, ties broken by smallest index.
/// Returned indices are sorted ascending.
inline std::vector<int> top_k_abs_indices(const Eigen::VectorXd& v, int k) {
    const int n = static_cast<int>(v.size());
    k = std::max(0, std::min(k, n));
    if (k == 0) return {};
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        const double fa = std::abs(v[a]), fb = std::abs(v[b]);
        if (fa != fb) return fa > fb;
        return a < b;
    });
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Largest eigenvalue of X^T X / n by power iteration (relative tolerance rtol).
inline double spectral_bound(const Eigen::MatrixXd& x, double rtol = 1e-6, int max_iter = 500) {
    const Eigen::Index n = x.rows(), p = x.cols();
    if (n == 0 || p == 0) return 0.0;
    Eigen::VectorXd v = Eigen::VectorXd::Ones(p);
    for (Eigen::Index j = 0; j < p; ++j) v[j] += 1e-3 * static_cast<double>(j % 7);
    v.normalize();
    double lam = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd w = x.transpose() * (x * v) / static_cast<double>(n);
        const double nw = w.norm();
        if (nw == 0.0) return 0.0;
        w /= nw;
        const double lam_new = (x * w).squaredNorm() / static_cast<double>(n);
        if (std::abs(lam_new - lam) <= rtol * std::max(1.0, lam_new)) return lam_new;
        lam = lam_new;
        v = w;
    }
    return lam;
}

namespace detail {

// Regularized incomplete beta I_x(a,b), continued-fraction evaluation.
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16, kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
    return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

/// Quantile of the Beta(a, b) distribution by bisection.
inline double beta_quantile(double a, double b, double prob) {
    if (prob <= 0.0) return 0.0;
    if (prob >= 1.0) return 1.0;
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (incomplete_beta(a, b, mid) < prob)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// CDF of Student's t with nu degrees of freedom.
inline double student_t_cdf(double t, double nu) {
    if (nu <= 0.0) throw DataError("student_t_cdf: df must be positive");
    const double x = nu / (nu + t * t);
    const double half_tail = 0.5 * incomplete_beta(0.5 * nu, 0.5, x);
    return t >= 0.0 ? 1.0 - half_tail : half_tail;
}

/// Quantile of Student's t with nu degrees of freedom.
inline double student_t_quantile(double prob, double nu) {
    if (prob <= 0.0) return -std::numeric_limits<double>::infinity();
    if (prob >= 1.0) return std::numeric_limits<double>::infinity();
    if (prob == 0.5) return 0.0;
    double lo = -1.0, hi = 1.0;
    while (student_t_cdf(lo, nu) > prob) lo *= 2.0;
    while (student_t_cdf(hi, nu) < prob) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, nu) < prob)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Quantile of |T| for T ~ Student-t(nu): P(|T| <= q) = prob.
inline double student_t_abs_quantile(double prob, double nu) {
    return student_t_quantile(0.5 * (1.0 + prob), nu);
}

inline double normal_pdf(double x) {
    return 0.3989422804014326779399461 * std::exp(-0.5 * x * x);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

inline double normal_quantile(double prob) {
    if (prob <= 0.0) return -std::numeric_limits<double>::infinity();
    if (prob >= 1.0) return std::numeric_limits<double>::infinity();
    double lo = -1.0, hi = 1.0;
    while (normal_cdf(lo) > prob) lo *= 2.0;
    while (normal_cdf(hi) < prob) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (normal_cdf(mid) < prob)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Variance of the central gamma-fraction of a standard Gaussian relative to
/// the full variance: the factor by which a residual variance estimated from
/// the best-fitting gamma*n cases underestimates sigma^2.
inline double gaussian_trimming_variance_factor(double gamma) {
    if (gamma >= 1.0) return 1.0;
    if (gamma <= 0.0) throw DataError("trimming fraction must be positive");
    const double z = normal_quantile(0.5 * (1.0 + gamma));
    return 1.0 - 2.0 * z * normal_pdf(z) / gamma;
}

}  // namespace sfsod
