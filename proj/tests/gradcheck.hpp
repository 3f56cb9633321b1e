#pragma once

#include <algorithm>
#include <cmath>

namespace testing {

// |a - b| / max(|a|, |b|, floor); the floor keeps entries that are zero in
// both the analytic and the numeric gradient from dividing by zero.
inline double rel_err(double analytic, double numeric, double floor = 1e-8) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of f at x[j] with step h.
template <class F, class Vec>
double central_diff(F&& f, Vec& x, std::size_t j, double h) {
    const double keep = x[j];
    x[j] = keep + h;
    const double up = f();
    x[j] = keep - h;
    const double down = f();
    x[j] = keep;
    return (up - down) / (2 * h);
}

}  // namespace testing
