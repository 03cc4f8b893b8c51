#pragma once

#include <cstddef>
#include <vector>

#include "conjassess/errors.hpp"

namespace conjassess {

/// Interpolating cubic spline with natural boundary conditions.
/// Evaluation outside the knot range extrapolates linearly with the end slopes.
class NaturalCubicSpline {
  public:
    NaturalCubicSpline(std::vector<double> x, std::vector<double> y)
        : x_(std::move(x)), y_(std::move(y)) {
        const std::size_t n = x_.size();
        if (n < 2 || y_.size() != n)
            throw Error("NaturalCubicSpline: need at least two matching knots");
        for (std::size_t i = 0; i + 1 < n; ++i)
            if (!(x_[i] < x_[i + 1]))
                throw Error("NaturalCubicSpline: abscissae must be strictly increasing");
        m_.assign(n, 0.0);
        if (n > 2) {
            // Tridiagonal solve for interior second derivatives, m[0]=m[n-1]=0.
            std::vector<double> diag(n, 2.0), rhs(n, 0.0), sub(n, 0.0);
            for (std::size_t i = 1; i + 1 < n; ++i) {
                const double hl = x_[i] - x_[i - 1];
                const double hr = x_[i + 1] - x_[i];
                sub[i] = hl / (hl + hr);
                rhs[i] = 6.0 *
                         ((y_[i + 1] - y_[i]) / hr - (y_[i] - y_[i - 1]) / hl) /
                         (hl + hr);
            }
            std::vector<double> c(n, 0.0);
            for (std::size_t i = 1; i + 1 < n; ++i) {
                const double up = 1.0 - sub[i];
                const double w = diag[i] - sub[i] * c[i - 1];
                c[i] = up / w;
                rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / w;
            }
            for (std::size_t i = n - 2; i >= 1; --i)
                m_[i] = rhs[i] - c[i] * m_[i + 1];
        }
    }

    double operator()(double t) const {
        const std::size_t n = x_.size();
        if (t <= x_.front())
            return y_.front() + slope_at(0) * (t - x_.front());
        if (t >= x_.back())
            return y_.back() + slope_at(n - 2, true) * (t - x_.back());
        const std::size_t i = interval(t);
        const double h = x_[i + 1] - x_[i];
        const double a = (x_[i + 1] - t) / h;
        const double b = (t - x_[i]) / h;
        return a * y_[i] + b * y_[i + 1] +
               ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
    }

    double derivative(double t) const {
        const std::size_t n = x_.size();
        if (t <= x_.front())
            return slope_at(0);
        if (t >= x_.back())
            return slope_at(n - 2, true);
        const std::size_t i = interval(t);
        const double h = x_[i + 1] - x_[i];
        const double a = (x_[i + 1] - t) / h;
        const double b = (t - x_[i]) / h;
        return (y_[i + 1] - y_[i]) / h +
               ((3.0 * b * b - 1.0) * m_[i + 1] - (3.0 * a * a - 1.0) * m_[i]) * h / 6.0;
    }

    double x_min() const { return x_.front(); }
    double x_max() const { return x_.back(); }

  private:
    std::size_t interval(double t) const {
        std::size_t lo = 0, hi = x_.size() - 1;
        while (hi - lo > 1) {
            const std::size_t mid = (lo + hi) / 2;
            (x_[mid] <= t ? lo : hi) = mid;
        }
        return lo;
    }

    double slope_at(std::size_t i, bool upper = false) const {
        const double h = x_[i + 1] - x_[i];
        const double base = (y_[i + 1] - y_[i]) / h;
        return upper ? base + h * m_[i] / 6.0 : base - h * m_[i + 1] / 6.0;
    }

    std::vector<double> x_, y_, m_;
};

} // namespace conjassess
