#pragma once

#include "mvflow/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace mvflow {

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Sample mean and its standard error, summed in index order.
struct MeanEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

inline MeanEstimate mean_with_error(std::span<const double> v) {
    MeanEstimate e;
    if (v.empty()) return e;
    CompensatedSum sum;
    for (double x : v) sum.add(x);
    e.mean = sum.value() / static_cast<double>(v.size());
    if (v.size() < 2) return e;
    CompensatedSum sq;
    for (double x : v) sq.add((x - e.mean) * (x - e.mean));
    e.std_error = std::sqrt(sq.value() / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    return e;
}

/// Least-squares slope of y on x with its standard error (NaN below three points).
struct SlopeFit {
    double slope = std::numeric_limits<double>::quiet_NaN();
    double std_error = std::numeric_limits<double>::quiet_NaN();
    std::size_t points = 0;
};

inline SlopeFit fit_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("fit_slope: length mismatch");
    SlopeFit f;
    f.points = x.size();
    if (x.size() < 2) return f;
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) return f;
    f.slope = sxy / sxx;
    if (x.size() >= 3) {
        double ssr = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = y[i] - my - f.slope * (x[i] - mx);
            ssr += r * r;
        }
        f.std_error = std::sqrt(ssr / (n - 2.0) / sxx);
    }
    return f;
}

enum class OrderStatus { fitted, exact, degenerate };

inline const char* to_string(OrderStatus s) {
    switch (s) {
        case OrderStatus::fitted: return "fitted";
        case OrderStatus::exact: return "exact";
        default: return "degenerate";
    }
}

struct OrderFit {
    OrderStatus status = OrderStatus::degenerate;
    SlopeFit fit;
};

/// Convergence order as the log2-log2 slope of error against step size. Identically zero errors
/// are reported as exact; a mix of zero and nonzero errors is degenerate.
inline OrderFit fit_order(std::span<const double> steps, std::span<const double> errors) {
    OrderFit out;
    const bool all_zero = std::all_of(errors.begin(), errors.end(), [](double e) { return e == 0.0; });
    if (all_zero && !errors.empty()) {
        out.status = OrderStatus::exact;
        return out;
    }
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!(errors[i] > 0.0) || !std::isfinite(errors[i])) return out;
        lx.push_back(std::log2(steps[i]));
        ly.push_back(std::log2(errors[i]));
    }
    out.fit = fit_slope(lx, ly);
    out.status = std::isnan(out.fit.slope) ? OrderStatus::degenerate : OrderStatus::fitted;
    return out;
}

}  // namespace mvflow
