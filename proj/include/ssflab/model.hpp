#pragma once

// Domain types: the periodic potential, the slowly varying perturbation with
// its decay certificate, compactly supported test functions and sampled
// symbols on the dual torus.

#include <algorithm>
#include <cmath>
#include <complex>
#include <concepts>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "ssflab/errors.hpp"
#include "ssflab/quadrature.hpp"

namespace ssflab {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Real 2*pi-periodic potential V(y) = sum_m vhat_m e^{imy} with finitely many modes.
class PeriodicPotential {
public:
    using Coeffs = std::map<int, std::complex<double>>;

    PeriodicPotential() = default;

    explicit PeriodicPotential(Coeffs coeffs) : coeffs_(std::move(coeffs))
    {
        for (auto it = coeffs_.begin(); it != coeffs_.end();) {
            if (it->second == 0.0)
                it = coeffs_.erase(it);
            else
                ++it;
        }
        for (const auto& [m, c] : coeffs_) {
            const auto partner = coeff(-m);
            const double scale = std::max(1.0, std::abs(c));
            if (std::abs(partner - std::conj(c)) > 1e-14 * scale)
                throw ValidationError("potential coefficients must satisfy vhat(-m) = conj(vhat(m)); mode " +
                                      std::to_string(m) + " violates it");
        }
    }

    /// V(y) = 2a cos(y), i.e. vhat(+-1) = a.
    static PeriodicPotential cosine(double a) { return PeriodicPotential(Coeffs{{-1, a}, {1, a}}); }

    const Coeffs& coeffs() const noexcept { return coeffs_; }

    std::complex<double> coeff(int m) const
    {
        auto it = coeffs_.find(m);
        return it == coeffs_.end() ? std::complex<double>{} : it->second;
    }

    /// Largest |m| with a nonzero coefficient (M_V).
    int bandwidth() const noexcept
    {
        int mv = 0;
        for (const auto& [m, c] : coeffs_) mv = std::max(mv, std::abs(m));
        return mv;
    }

    std::complex<double> evaluate_complex(double y) const
    {
        std::complex<double> s{};
        for (const auto& [m, c] : coeffs_) s += c * std::polar(1.0, m * y);
        return s;
    }

    double operator()(double y) const { return evaluate_complex(y).real(); }

    bool is_zero() const noexcept { return coeffs_.empty(); }

    bool is_even() const
    {
        for (const auto& [m, c] : coeffs_)
            if (std::abs(c - coeff(-m)) > 0.0) return false;
        return true;
    }

    bool operator==(const PeriodicPotential&) const = default;

private:
    Coeffs coeffs_;
};

/// Decay data for phi: |d^alpha phi(x)| <= C_alpha (1+|x|)^{-delta-alpha}, alpha <= 2.
struct DecayCertificate {
    double delta = 2.0;
    double c0 = 1.0;
    double c1 = 1.0;
    double c2 = 1.0;

    double constant(int alpha) const { return alpha == 0 ? c0 : alpha == 1 ? c1 : c2; }

    void validate() const
    {
        if (!(delta > 1.0)) throw ValidationError("delta must exceed dimension n=1");
        if (!(c0 > 0.0 && c1 > 0.0 && c2 > 0.0))
            throw ValidationError("decay certificate constants must be positive");
    }

    /// Closed-form bound for int_{|x|>X} (1+|x|)^{-delta} dx.
    double tail_integral(double X) const { return 2.0 * std::pow(1.0 + X, 1.0 - delta) / (delta - 1.0); }

    /// Smallest X with C0 * tail_integral(X) * scale <= target (capped at 1e15).
    double radius_for_tail(double scale, double target) const
    {
        if (scale <= 0.0) return 1.0;
        const double base = target * (delta - 1.0) / (2.0 * c0 * scale);
        const double X = std::pow(base, 1.0 / (1.0 - delta)) - 1.0;
        if (!std::isfinite(X) || X > 1e15) return 1e15;
        return std::max(X, 1.0);
    }
};

enum class PerturbationFamily { zero, power_law, gaussian, bump, custom };

inline std::string to_string(PerturbationFamily f)
{
    switch (f) {
    case PerturbationFamily::zero: return "zero";
    case PerturbationFamily::power_law: return "power_law";
    case PerturbationFamily::gaussian: return "gaussian";
    case PerturbationFamily::bump: return "bump";
    case PerturbationFamily::custom: return "custom";
    }
    return "unknown";
}

namespace detail {

// max over x >= 0 of (1+x)^m exp(-x^2/sigma^2)
inline double gaussian_peak(double m, double sigma)
{
    const double x = 0.5 * (-1.0 + std::sqrt(1.0 + 2.0 * m * sigma * sigma));
    return std::pow(1.0 + x, m) * std::exp(-x * x / (sigma * sigma));
}

// e^{-1/(1-u^2)} and its first two derivatives, zero for |u| >= 1.
inline double bump_shape(double u, int order)
{
    if (!(std::abs(u) < 1.0)) return 0.0;
    const double s = 1.0 - u * u;
    const double g = std::exp(-1.0 / s);
    if (order == 0) return g;
    const double q = -2.0 * u / (s * s);
    if (order == 1) return g * q;
    const double dq = -2.0 / (s * s) - 8.0 * u * u / (s * s * s);
    return g * (q * q + dq);
}

}  // namespace detail

/// The slowly varying perturbation phi together with closed-form derivative
/// evaluators and a decay certificate.
class Perturbation {
public:
    using Fn = std::function<double(double)>;

    static Perturbation zero()
    {
        Perturbation p;
        p.family_ = PerturbationFamily::zero;
        p.value_ = [](double) { return 0.0; };
        p.d1_ = p.value_;
        p.d2_ = p.value_;
        p.cert_ = {2.0, 1.0, 1.0, 1.0};
        p.range_ = {0.0, 0.0};
        p.even_ = true;
        return p;
    }

    /// c (1+x^2)^{-s/2}. Certificate constants follow from
    /// (1+|x|)^2 <= 2 (1+x^2); delta defaults to s.
    static Perturbation power_law(double c, double s, double delta = -1.0)
    {
        if (!(s > 0.0)) throw ValidationError("power_law exponent must be positive");
        if (delta < 0.0) delta = s;
        Perturbation p;
        p.family_ = PerturbationFamily::power_law;
        p.params_ = {c, s};
        p.value_ = [c, s](double x) { return c * std::pow(1.0 + x * x, -0.5 * s); };
        p.d1_ = [c, s](double x) { return -c * s * x * std::pow(1.0 + x * x, -0.5 * s - 1.0); };
        p.d2_ = [c, s](double x) {
            return c * s * std::pow(1.0 + x * x, -0.5 * s - 2.0) * ((s + 1.0) * x * x - 1.0);
        };
        const double a = std::abs(c);
        p.cert_ = {delta, a * std::pow(2.0, 0.5 * s), a * s * std::pow(2.0, 0.5 * s + 1.0),
                   a * s * (s + 1.0) * std::pow(2.0, 0.5 * s + 1.0)};
        p.range_ = {std::min(0.0, c), std::max(0.0, c)};
        p.even_ = true;
        return p;
    }

    /// c exp(-x^2/sigma^2).
    static Perturbation gaussian(double c, double sigma, double delta)
    {
        if (!(sigma > 0.0)) throw ValidationError("gaussian width must be positive");
        Perturbation p;
        p.family_ = PerturbationFamily::gaussian;
        p.params_ = {c, sigma};
        const double s2 = sigma * sigma;
        p.value_ = [c, s2](double x) { return c * std::exp(-x * x / s2); };
        p.d1_ = [c, s2](double x) { return -2.0 * c * x / s2 * std::exp(-x * x / s2); };
        p.d2_ = [c, s2](double x) { return c * (4.0 * x * x / (s2 * s2) - 2.0 / s2) * std::exp(-x * x / s2); };
        const double a = std::abs(c);
        p.cert_ = {delta, a * detail::gaussian_peak(delta, sigma),
                   a * 2.0 / s2 * detail::gaussian_peak(delta + 2.0, sigma),
                   a * std::max(4.0 / (s2 * s2), 2.0 / s2) * detail::gaussian_peak(delta + 4.0, sigma)};
        p.range_ = {std::min(0.0, c), std::max(0.0, c)};
        p.even_ = true;
        return p;
    }

    /// c exp(-1/(1-(x/R)^2)) on |x| < R. Certificate constants are sampled
    /// suprema with a 1% margin (no closed form).
    static Perturbation bump(double c, double radius, double delta)
    {
        if (!(radius > 0.0)) throw ValidationError("bump radius must be positive");
        Perturbation p;
        p.family_ = PerturbationFamily::bump;
        p.params_ = {c, radius};
        p.value_ = [c, radius](double x) { return c * detail::bump_shape(x / radius, 0); };
        p.d1_ = [c, radius](double x) { return c * detail::bump_shape(x / radius, 1) / radius; };
        p.d2_ = [c, radius](double x) { return c * detail::bump_shape(x / radius, 2) / (radius * radius); };
        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
        const int n = 20000;
        for (int i = 0; i <= n; ++i) {
            const double x = radius * i / n;
            s0 = std::max(s0, std::abs(p.value_(x)) * std::pow(1.0 + x, delta));
            s1 = std::max(s1, std::abs(p.d1_(x)) * std::pow(1.0 + x, delta + 1.0));
            s2 = std::max(s2, std::abs(p.d2_(x)) * std::pow(1.0 + x, delta + 2.0));
        }
        p.cert_ = {delta, 1.01 * s0, 1.01 * s1, 1.01 * s2};
        p.range_ = {std::min(0.0, c), std::max(0.0, c)};
        p.even_ = true;
        return p;
    }

    /// User-supplied phi. Derivative evaluators may be left empty, in which
    /// case decay certification reports the certificate as incomplete.
    static Perturbation custom(Fn value, Fn d1, Fn d2, DecayCertificate cert, std::pair<double, double> range,
                               bool even = false)
    {
        Perturbation p;
        p.family_ = PerturbationFamily::custom;
        p.value_ = std::move(value);
        p.d1_ = std::move(d1);
        p.d2_ = std::move(d2);
        p.cert_ = cert;
        p.range_ = {std::min(0.0, range.first), std::max(0.0, range.second)};
        p.even_ = even;
        return p;
    }

    Perturbation with_certificate(DecayCertificate cert) const
    {
        Perturbation p = *this;
        p.cert_ = cert;
        return p;
    }

    /// phi scaled by eps (certificate constants scale with it).
    Perturbation scaled(double eps) const
    {
        Perturbation p = *this;
        auto v = value_, a = d1_, b = d2_;
        p.value_ = [v, eps](double x) { return eps * v(x); };
        if (a) p.d1_ = [a, eps](double x) { return eps * a(x); };
        if (b) p.d2_ = [b, eps](double x) { return eps * b(x); };
        const double ae = std::abs(eps);
        if (ae > 0.0) p.cert_ = {cert_.delta, ae * cert_.c0, ae * cert_.c1, ae * cert_.c2};
        const double lo = eps * range_.first, hi = eps * range_.second;
        p.range_ = {std::min(lo, hi), std::max(lo, hi)};
        if (!p.params_.empty()) p.params_[0] *= eps;
        if (eps == 0.0) p.family_ = PerturbationFamily::zero;
        return p;
    }

    PerturbationFamily family() const noexcept { return family_; }
    const std::vector<double>& params() const noexcept { return params_; }
    const DecayCertificate& certificate() const noexcept { return cert_; }

    double operator()(double x) const { return value_(x); }
    double derivative(double x, int order) const
    {
        if (order == 0) return value_(x);
        const Fn& d = order == 1 ? d1_ : d2_;
        if (!d) throw ValidationError("certificate incomplete: missing derivative evaluator");
        return d(x);
    }
    bool has_derivatives() const noexcept { return static_cast<bool>(d1_) && static_cast<bool>(d2_); }

    /// [min phi, max phi], always containing 0 (phi vanishes at infinity).
    std::pair<double, double> range() const noexcept { return range_; }
    bool is_zero() const noexcept { return family_ == PerturbationFamily::zero; }
    bool is_even() const noexcept { return even_; }

private:
    PerturbationFamily family_ = PerturbationFamily::zero;
    std::vector<double> params_;
    Fn value_, d1_, d2_;
    DecayCertificate cert_;
    std::pair<double, double> range_{0.0, 0.0};
    bool even_ = false;
};

struct DecayReport {
    bool pass = false;
    double sup[3] = {0.0, 0.0, 0.0};  ///< achieved sup |d^a phi| (1+|x|)^{delta+a}
    double worst_ratio = 0.0;         ///< max_a sup[a] / C_a
};

/// Samples |d^a phi(x)| (1+|x|)^{delta+a} on the grid for a = 0, 1, 2.
inline DecayReport check_decay(const Perturbation& phi, const std::vector<double>& grid)
{
    if (grid.empty()) throw ValidationError("decay grid is empty");
    double xmax = 0.0;
    for (double x : grid) xmax = std::max(xmax, std::abs(x));
    if (xmax < 100.0) throw ValidationError("decay grid must reach |x| >= 100");
    if (!phi.has_derivatives()) throw ValidationError("certificate incomplete");
    const auto& cert = phi.certificate();
    DecayReport rep;
    for (double x : grid) {
        for (int a = 0; a < 3; ++a) {
            const double w = std::pow(1.0 + std::abs(x), cert.delta + a);
            rep.sup[a] = std::max(rep.sup[a], std::abs(phi.derivative(x, a)) * w);
        }
    }
    rep.pass = true;
    for (int a = 0; a < 3; ++a) {
        rep.worst_ratio = std::max(rep.worst_ratio, rep.sup[a] / cert.constant(a));
        // a constant equal to the exact supremum certifies; allow rounding in the samples
        if (rep.sup[a] > cert.constant(a) * (1.0 + 1e-12)) rep.pass = false;
    }
    return rep;
}

/// Uniform grid on [0, xmax] with n+1 points, the default decay grid.
inline std::vector<double> decay_grid(double xmax = 1000.0, int n = 100000)
{
    std::vector<double> g(n + 1);
    for (int i = 0; i <= n; ++i) g[i] = xmax * i / n;
    return g;
}

/// Anything usable as an energy-space test function.
template <class T>
concept EnergyFunction = requires(const T& f, double mu) {
    { f(mu) } -> std::convertible_to<double>;
    { f.derivative(mu, 1) } -> std::convertible_to<double>;
    { f.support() } -> std::convertible_to<std::pair<double, double>>;
    { f.max_abs_derivative() } -> std::convertible_to<double>;
};

/// amplitude * exp(-1/(1-t^2)), t = (mu - center)/halfwidth, extended by zero.
class TestFunction {
public:
    TestFunction() = default;
    TestFunction(double center, double halfwidth, double amplitude)
        : center_(center), halfwidth_(halfwidth), amplitude_(amplitude)
    {
        if (!(halfwidth > 0.0)) throw ValidationError("degenerate support");
    }

    /// Normalized mollifier eps^{-1} theta((mu - center)/eps) with int theta = 1.
    static TestFunction mollifier(double center, double eps)
    {
        return TestFunction(center, eps, 1.0 / (eps * shape_integral()));
    }

    double operator()(double mu) const { return derivative(mu, 0); }

    double derivative(double mu, int order) const
    {
        const double t = (mu - center_) / halfwidth_;
        if (!(std::abs(t) < 1.0)) return 0.0;
        return amplitude_ * detail::bump_shape(t, order) / std::pow(halfwidth_, order);
    }

    std::pair<double, double> support() const { return {center_ - halfwidth_, center_ + halfwidth_}; }
    double center() const noexcept { return center_; }
    double halfwidth() const noexcept { return halfwidth_; }
    double amplitude() const noexcept { return amplitude_; }

    double max_abs_derivative() const { return std::abs(amplitude_) * shape_max_slope() / halfwidth_; }

    /// int f dmu
    double integral() const { return amplitude_ * halfwidth_ * shape_integral(); }

    /// int_{-1}^{1} e^{-1/(1-t^2)} dt
    static double shape_integral()
    {
        static const double z = [] {
            auto r = quad::integrate([](double t) { return detail::bump_shape(t, 0); }, -1.0, 1.0,
                                     {1e-15, 1e-15, 4000});
            return r.value;
        }();
        return z;
    }

    /// max |d/dt e^{-1/(1-t^2)}|, refined by golden-section search.
    static double shape_max_slope()
    {
        static const double s = [] {
            auto g = [](double t) { return std::abs(detail::bump_shape(t, 1)); };
            double best = 0.0, arg = 0.0;
            for (int i = 1; i < 1000; ++i) {
                const double t = i / 1000.0;
                if (g(t) > best) best = g(t), arg = t;
            }
            double a = arg - 1e-3, b = arg + 1e-3;
            const double r = 0.5 * (std::sqrt(5.0) - 1.0);
            for (int it = 0; it < 100; ++it) {
                const double c = b - r * (b - a), d = a + r * (b - a);
                if (g(c) > g(d))
                    b = d;
                else
                    a = c;
            }
            return g(0.5 * (a + b)) * (1.0 + 1e-12);
        }();
        return s;
    }

private:
    double center_ = 0.0;
    double halfwidth_ = 1.0;
    double amplitude_ = 1.0;
};

/// A user test function given as uniform samples over a declared support
/// [lo, hi]; cubic Hermite interpolation between samples, zero outside.
class TabulatedTestFunction {
public:
    TabulatedTestFunction(double lo, double hi, std::vector<double> samples)
        : lo_(lo), hi_(hi), y_(std::move(samples))
    {
        if (!(hi > lo) || y_.size() < 4) throw ValidationError("degenerate support");
        if (y_.front() != 0.0 || y_.back() != 0.0)
            throw ValidationError("tabulated test function must vanish at its declared support ends");
        step_ = (hi_ - lo_) / static_cast<double>(y_.size() - 1);
        const std::size_t n = y_.size();
        dy_.assign(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) dy_[i] = (y_[i + 1] - y_[i - 1]) / (2.0 * step_);
        for (std::size_t i = 0; i + 1 < n; ++i)
            max_slope_ = std::max(max_slope_, std::abs(y_[i + 1] - y_[i]) / step_);
        for (double d : dy_) max_slope_ = std::max(max_slope_, std::abs(d));
        max_slope_ *= 1.5;  // Hermite overshoot allowance
    }

    double operator()(double mu) const { return derivative(mu, 0); }

    double derivative(double mu, int order) const
    {
        if (!(mu > lo_ && mu < hi_)) return 0.0;
        const double s = (mu - lo_) / step_;
        const auto i = std::min(static_cast<std::size_t>(s), y_.size() - 2);
        const double t = s - static_cast<double>(i);
        double h00, h10, h01, h11, scale = 1.0;
        if (order == 0) {
            h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
            h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
        } else if (order == 1) {
            h00 = 6 * t * t - 6 * t, h10 = 3 * t * t - 4 * t + 1;
            h01 = -h00, h11 = 3 * t * t - 2 * t;
            scale = step_;
        } else {
            h00 = 12 * t - 6, h10 = 6 * t - 4;
            h01 = -h00, h11 = 6 * t - 2;
            scale = step_ * step_;
        }
        return (h00 * y_[i] + h10 * step_ * dy_[i] + h01 * y_[i + 1] + h11 * step_ * dy_[i + 1]) / scale;
    }

    std::pair<double, double> support() const { return {lo_, hi_}; }
    double max_abs_derivative() const { return max_slope_; }

private:
    double lo_, hi_, step_ = 1.0, max_slope_ = 0.0;
    std::vector<double> y_, dy_;
};

/// Samples of a symbol on T* x [-R, R]: k-grid over [0, 1] including both
/// seam points, with first derivatives in k and r.
struct SymbolGrid {
    double order = 0.0;
    std::vector<double> k;
    std::vector<double> r;
    std::vector<double> value;  ///< row-major [ik * r.size() + ir]
    std::vector<double> dk;
    std::vector<double> dr;

    double at(const std::vector<double>& a, std::size_t ik, std::size_t ir) const { return a[ik * r.size() + ir]; }

    /// Samples sym on nk+1 k-points and nr r-points; derivatives by central differences.
    template <class Sym>
    static SymbolGrid sample(Sym&& sym, double order, int nk, double R, int nr)
    {
        SymbolGrid g;
        g.order = order;
        for (int i = 0; i <= nk; ++i) g.k.push_back(static_cast<double>(i) / nk);
        for (int j = 0; j < nr; ++j) g.r.push_back(-R + 2.0 * R * j / (nr - 1));
        const double ek = 1e-5;
        for (double kk : g.k)
            for (double rr : g.r) {
                g.value.push_back(sym(kk, rr));
                g.dk.push_back((sym(kk + ek, rr) - sym(kk - ek, rr)) / (2.0 * ek));
                const double e = 1e-5 * std::max(1.0, std::abs(rr));
                g.dr.push_back((sym(kk, rr + e) - sym(kk, rr - e)) / (2.0 * e));
            }
        return g;
    }

    /// k-Fourier coefficient ghat_m(r) by the trapezoid rule on the k-grid,
    /// linearly interpolated in r.
    std::complex<double> fourier(int m, double rr) const
    {
        const std::size_t nk = k.size() - 1, nr = r.size();
        auto column = [&](std::size_t ir) {
            std::complex<double> s{};
            for (std::size_t i = 0; i < nk; ++i) s += at(value, i, ir) * std::polar(1.0, -kTwoPi * m * k[i]);
            return s / static_cast<double>(nk);
        };
        if (rr <= r.front()) return column(0);
        if (rr >= r.back()) return column(nr - 1);
        const double pos = (rr - r.front()) / (r.back() - r.front()) * static_cast<double>(nr - 1);
        const auto j = std::min(static_cast<std::size_t>(pos), nr - 2);
        const double t = pos - static_cast<double>(j);
        return (1.0 - t) * column(j) + t * column(j + 1);
    }
};

struct SymbolClassReport {
    bool pass = false;
    double constant = 0.0;  ///< sup of the weighted quantities over the grid
    double growth = 0.0;    ///< outermost-shell sup / sup over inner shells
};

/// Checks |sym| <r>^m, |d_k sym| <r>^m, |d_r sym| <r>^{m+1} stay bounded:
/// the sup over the outermost dyadic r-shell may not exceed 1.1 times the
/// sup over the inner region.
inline SymbolClassReport check_symbol_class(const SymbolGrid& g)
{
    const std::size_t nk = g.k.size(), nr = g.r.size();
    if (nk < 2 || nr < 2) throw ValidationError("symbol grid too small");
    for (std::size_t j = 0; j < nr; ++j) {
        const double a = g.at(g.value, 0, j), b = g.at(g.value, nk - 1, j);
        if (std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(a))) throw ValidationError("not a torus symbol");
    }
    double R = 0.0;
    for (double rr : g.r) R = std::max(R, std::abs(rr));
    double inner = 0.0, outer = 0.0;
    for (std::size_t i = 0; i < nk; ++i)
        for (std::size_t j = 0; j < nr; ++j) {
            const double rr = g.r[j];
            const double br = std::sqrt(1.0 + rr * rr);
            const double w = std::max({std::abs(g.at(g.value, i, j)) * std::pow(br, g.order),
                                       std::abs(g.at(g.dk, i, j)) * std::pow(br, g.order),
                                       std::abs(g.at(g.dr, i, j)) * std::pow(br, g.order + 1.0)});
            if (std::abs(rr) > 0.5 * R && R > 2.0)
                outer = std::max(outer, w);
            else
                inner = std::max(inner, w);
        }
    SymbolClassReport rep;
    rep.constant = std::max(inner, outer);
    rep.growth = inner > 0.0 ? outer / inner : (outer > 0.0 ? INFINITY : 0.0);
    rep.pass = std::isfinite(rep.constant) && outer <= 1.1 * inner + 1e-300;
    return rep;
}

}  // namespace ssflab
