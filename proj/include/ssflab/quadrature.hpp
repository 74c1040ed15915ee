#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>
#include <vector>

namespace ssflab::quad {

struct Result {
    double value = 0.0;
    double error = 0.0;
    int evaluations = 0;
    bool converged = true;
};

struct Options {
    double abs_tol = 1e-10;
    double rel_tol = 1e-12;
    int max_panels = 4000;
};

namespace detail {

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
inline constexpr std::array<double, 8> xgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> wgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> wg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Panel {
    double a, b, value, error;
};

struct PanelOrder {
    bool operator()(const Panel& l, const Panel& r) const
    {
        if (l.error != r.error) return l.error < r.error;
        return l.a > r.a;
    }
};

template <class F>
Panel gk15(F& f, double a, double b)
{
    const double c = 0.5 * (a + b);
    const double hl = 0.5 * (b - a);
    const double fc = f(c);
    double resk = fc * wgk[7];
    double resg = fc * wg[3];
    for (int j = 0; j < 7; ++j) {
        const double dx = hl * xgk[j];
        const double s = f(c - dx) + f(c + dx);
        resk += wgk[j] * s;
        if (j % 2 == 1) resg += wg[j / 2] * s;
    }
    resk *= hl;
    resg *= hl;
    return {a, b, resk, std::abs(resk - resg)};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (7/15) integration of f over the panels
/// delimited by `breaks` (sorted, at least two entries). The panel with the
/// largest error estimate is bisected until the summed estimate meets
/// max(abs_tol, rel_tol*|I|) or the panel budget is exhausted.
template <class F>
Result integrate(F&& f, const std::vector<double>& breaks, const Options& opt = {})
{
    Result out;
    if (breaks.size() < 2) return out;
    std::priority_queue<detail::Panel, std::vector<detail::Panel>, detail::PanelOrder> heap;
    double total = 0.0, err = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        if (!(breaks[i + 1] > breaks[i])) continue;
        auto p = detail::gk15(f, breaks[i], breaks[i + 1]);
        out.evaluations += 15;
        total += p.value;
        err += p.error;
        heap.push(p);
    }
    int panels = static_cast<int>(heap.size());
    while (!heap.empty() && err > std::max(opt.abs_tol, opt.rel_tol * std::abs(total))) {
        if (panels >= opt.max_panels) {
            out.converged = false;
            break;
        }
        auto worst = heap.top();
        const double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b)) {
            out.converged = false;
            break;
        }
        heap.pop();
        auto left = detail::gk15(f, worst.a, mid);
        auto right = detail::gk15(f, mid, worst.b);
        out.evaluations += 30;
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        ++panels;
    }
    // Re-sum in a fixed order so the result is independent of heap history.
    std::vector<detail::Panel> all;
    all.reserve(heap.size());
    while (!heap.empty()) {
        all.push_back(heap.top());
        heap.pop();
    }
    std::sort(all.begin(), all.end(), [](const auto& l, const auto& r) { return l.a < r.a; });
    out.value = 0.0;
    out.error = 0.0;
    for (const auto& p : all) {
        out.value += p.value;
        out.error += p.error;
    }
    return out;
}

template <class F>
Result integrate(F&& f, double a, double b, const Options& opt = {})
{
    return integrate(std::forward<F>(f), std::vector<double>{a, b}, opt);
}

/// Breakpoints 0, 1, 2, 4, ... , X: resolves integrands concentrated near the
/// origin on very long intervals.
inline std::vector<double> geometric_breaks(double X)
{
    std::vector<double> br{0.0};
    for (double t = 1.0; t < X; t *= 2.0) br.push_back(t);
    br.push_back(X);
    return br;
}

/// Integrates over [a, b] after the substitution x = a + (b-a)(3s^2 - 2s^3),
/// which removes inverse-square-root endpoint singularities.
template <class F>
Result integrate_endpoint_singular(F&& f, double a, double b, const Options& opt = {})
{
    const double len = b - a;
    auto g = [&](double s) {
        const double w = 6.0 * len * s * (1.0 - s);
        if (w == 0.0) return 0.0;
        return f(a + len * s * s * (3.0 - 2.0 * s)) * w;
    };
    return integrate(g, 0.0, 1.0, opt);
}

}  // namespace ssflab::quad
