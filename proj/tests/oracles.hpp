#pragma once

// Independent reference computations used only by the test suite. None of
// these share code paths with the library beyond the model types.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

// Floquet discriminant (u1(T) + u2'(T))/2 of -u'' + V u = lambda u over one
// period T = 2*pi, integrated with classical RK4.
inline double discriminant(const std::function<double(double)>& V, double lambda, int steps = 20000)
{
    const double T = 2.0 * std::numbers::pi, h = T / steps;
    auto run = [&](double u, double v) {
        for (int i = 0; i < steps; ++i) {
            const double y = i * h;
            auto f = [&](double yy, double uu, double vv, double& du, double& dv) {
                du = vv;
                dv = (V(yy) - lambda) * uu;
            };
            double k1u, k1v, k2u, k2v, k3u, k3v, k4u, k4v;
            f(y, u, v, k1u, k1v);
            f(y + h / 2, u + h / 2 * k1u, v + h / 2 * k1v, k2u, k2v);
            f(y + h / 2, u + h / 2 * k2u, v + h / 2 * k2v, k3u, k3v);
            f(y + h, u + h * k3u, v + h * k3v, k4u, k4v);
            u += h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u);
            v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
        }
        return std::pair{u, v};
    };
    const auto a = run(1.0, 0.0);
    const auto b = run(0.0, 1.0);
    return 0.5 * (a.first + b.second);
}

// The n-th (1-based) energy above `start` where the discriminant equals
// cos(2*pi*k), located by scanning and bisection.
inline double floquet_level(const std::function<double(double)>& V, double k, int n, double start = -5.0,
                            double step = 0.01)
{
    const double target = std::cos(2.0 * std::numbers::pi * k);
    auto g = [&](double l) { return discriminant(V, l, 4000) - target; };
    double a = start, ga = g(a);
    int found = 0;
    for (;;) {
        const double b = a + step;
        const double gb = g(b);
        if ((ga <= 0.0) != (gb <= 0.0) || ga == 0.0) {
            if (++found == n) {
                double lo = a, hi = b, glo = ga;
                auto gf = [&](double l) { return discriminant(V, l) - target; };
                glo = gf(lo);
                for (int it = 0; it < 80; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    const double gm = gf(mid);
                    if ((gm <= 0.0) == (glo <= 0.0))
                        lo = mid, glo = gm;
                    else
                        hi = mid;
                }
                return 0.5 * (lo + hi);
            }
        }
        a = b;
        ga = gb;
    }
}

}  // namespace oracle
