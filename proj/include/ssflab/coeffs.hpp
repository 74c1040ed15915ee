#pragma once

// Leading coefficients of the trace asymptotics:
//   a0(f)      = (2 pi)^{-1} sum_p int_{E*} int_R [f(lambda_p(k) + phi(x)) - f(lambda_p(k))] dx dk
//   gamma0(mu) = int_R [rho'(mu) - rho'(mu - phi(x))] dx
// with adaptive quadrature on |x| <= X and a closed-form tail bound beyond X
// taken from the decay certificate of phi.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ssflab/bloch.hpp"
#include "ssflab/dos.hpp"
#include "ssflab/errors.hpp"
#include "ssflab/io.hpp"
#include "ssflab/model.hpp"
#include "ssflab/parallel.hpp"
#include "ssflab/quadrature.hpp"

namespace ssflab {

struct CoefficientResult {
    double value = 0.0;
    double quad_error = 0.0;
    double tail_bound = 0.0;
    int bands_used = 0;
    double X = 0.0;

    double total_error() const { return quad_error + tail_bound; }

    std::string to_json() const
    {
        return "{\"value\": " + io::num(value) + ", \"quad_err\": " + io::num(quad_error) +
               ", \"tail_err\": " + io::num(tail_bound) + ", \"bands_used\": " + std::to_string(bands_used) +
               ", \"X\": " + io::num(X) + "}";
    }
};

struct CoeffOptions {
    double tail_target = 1e-9;  ///< X is chosen so that the tail bound stays below this
    double abs_tol = 1e-13;     ///< per inner integral
    double rel_tol = 1e-12;
    double outer_tol = 1e-10;   ///< absolute and relative target of outer integrals
    double gamma_tol = 1e-10;   ///< per-panel target of the gamma0 x-integrals
    int only_band = -1;         ///< restrict the band sum to one (0-based) band
    double x_max = 0.0;         ///< if positive, integrate a0 over |x| <= x_max only (no tail)
    unsigned threads = 1;
};

namespace detail {

// Cached samples of phi on [0, X] (one side) used to bracket level crossings.
class LevelCrossings {
public:
    LevelCrossings(const Perturbation& phi, double sign, double X) : phi_(phi), sign_(sign)
    {
        for (double x = 0.0; x < std::min(32.0, X); x += 1.0 / 32.0) x_.push_back(x);
        for (double x = 32.0; x < X; x *= 1.02) x_.push_back(x);
        x_.push_back(X);
        v_.reserve(x_.size());
        for (double x : x_) v_.push_back(phi_(sign_ * x));
    }

    /// All x in (0, X) where phi(sign*x) = level, to 1e-14 relative.
    std::vector<double> find(double level) const
    {
        std::vector<double> out;
        for (std::size_t i = 0; i + 1 < x_.size(); ++i) {
            const double ga = v_[i] - level, gb = v_[i + 1] - level;
            if (ga == 0.0 && i > 0) out.push_back(x_[i]);
            if (ga == 0.0 || gb == 0.0 || (ga < 0.0) == (gb < 0.0)) continue;
            double lo = x_[i], hi = x_[i + 1], glo = ga;
            for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++it) {
                const double mid = 0.5 * (lo + hi);
                const double gm = phi_(sign_ * mid) - level;
                if ((gm < 0.0) == (glo < 0.0))
                    lo = mid, glo = gm;
                else
                    hi = mid;
            }
            out.push_back(0.5 * (lo + hi));
        }
        return out;
    }

private:
    const Perturbation& phi_;
    double sign_;
    std::vector<double> x_, v_;
};

inline std::vector<double> merged_breaks(std::vector<double> br, const std::vector<double>& extra)
{
    br.insert(br.end(), extra.begin(), extra.end());
    std::sort(br.begin(), br.end());
    br.erase(std::unique(br.begin(), br.end()), br.end());
    return br;
}

}  // namespace detail

/// a0(f); non-criticality is not required.
template <EnergyFunction F>
CoefficientResult a0_weak_coefficient(const BandStructure& bs, const Perturbation& phi, const F& f,
                                      const CoeffOptions& opt = {})
{
    CoefficientResult res;
    if (phi.is_zero()) return res;
    const auto [fa, fb] = f.support();
    const auto [pmin, pmax] = phi.range();
    const double lo_e = fa - pmax, hi_e = fb - pmin;
    if (!(hi_e < bs.reliable_ceiling()))
        throw ValidationError("insufficient bands tabulated: f support plus shift reaches " + io::num(hi_e));

    std::vector<int> bands;
    for (int p = 0; p < bs.bands; ++p) {
        if (opt.only_band >= 0 && p != opt.only_band) continue;
        if (bs.band_max(p) + 1e-9 < lo_e || bs.band_min(p) - 1e-9 > hi_e) continue;
        bands.push_back(p);
    }
    res.bands_used = static_cast<int>(bands.size());
    if (bands.empty()) return res;

    const auto& cert = phi.certificate();
    const double scale = res.bands_used * f.max_abs_derivative() / kTwoPi;
    res.X = opt.x_max > 0.0 ? opt.x_max : cert.radius_for_tail(scale, opt.tail_target);
    res.tail_bound = opt.x_max > 0.0 ? 0.0 : scale * cert.c0 * cert.tail_integral(res.X);

    const double tau = 1e-5 * (fb - fa);
    std::vector<detail::LevelCrossings> sides;
    sides.emplace_back(phi, 1.0, res.X);
    if (!phi.is_even()) sides.emplace_back(phi, -1.0, res.X);
    const auto base_breaks = quad::geometric_breaks(res.X);

    // inner x-integral at fixed band energy lambda
    auto inner = [&](double lambda, double& err) {
        const double f0 = f(lambda), f1 = f.derivative(lambda, 1), f2 = f.derivative(lambda, 2);
        double total = 0.0;
        for (std::size_t s = 0; s < sides.size(); ++s) {
            const double sgn = s == 0 ? 1.0 : -1.0;
            auto c1 = sides[s].find(fa - lambda);
            auto c2 = sides[s].find(fb - lambda);
            c1.insert(c1.end(), c2.begin(), c2.end());
            const auto br = detail::merged_breaks(base_breaks, c1);
            auto g = [&](double x) {
                const double d = phi(sgn * x);
                if (std::abs(d) < tau) return f1 * d + 0.5 * f2 * d * d;
                return f(lambda + d) - f0;
            };
            const auto r = quad::integrate(g, br, {opt.abs_tol, opt.rel_tol, 20000});
            total += r.value;
            err += r.error;
        }
        if (phi.is_even()) total *= 2.0, err *= 2.0;
        return total;
    };

    std::vector<double> band_value(bands.size()), band_err(bands.size());
    parallel_for(bands.size(), opt.threads, [&](std::size_t b) {
        const int p = bands[b];
        // k-breakpoints where lambda_p crosses the energies at which the integrand changes character
        std::vector<double> kb{0.0, 0.5};
        const std::size_t nk = bs.nk(), half = nk / 2;
        for (double e : {lo_e, fa, fb, hi_e})
            for (std::size_t i = half; i < nk; ++i) {
                const double a = bs.lambda[p][i], c = bs.lambda[p][(i + 1) % nk];
                if ((a - e) * (c - e) < 0.0) kb.push_back(bs.k[i] + bs.dk() * (e - a) / (c - a));
            }
        kb = detail::merged_breaks(kb, {});
        double max_inner = 0.0;
        auto G = [&](double k) {
            const double lambda = solve_bloch(bs.potential, k, bs.truncation, false).values(p);
            if (lambda < lo_e || lambda > hi_e) return 0.0;
            double e = 0.0;
            const double v = inner(lambda, e);
            max_inner = std::max(max_inner, e);
            return v;
        };
        const auto r = quad::integrate(G, kb, {opt.outer_tol, opt.outer_tol, 2000});
        // lambda_p is even in k: int over E* = 2 int over [0, 1/2]
        band_value[b] = 2.0 * r.value;
        band_err[b] = 2.0 * r.error + max_inner;
    });
    for (std::size_t b = 0; b < bands.size(); ++b) {
        res.value += band_value[b] / kTwoPi;
        res.quad_error += band_err[b] / kTwoPi;
    }
    return res;
}

namespace detail {

// rho' without the criticality guard (used at quadrature nodes that approach
// a band-edge crossing, where the singularity is integrable).
inline double density_lenient(const BandStructure& bs, double nu)
{
    double s = 0.0;
    for (const auto& fp : fermi_set(bs, nu)) s += 1.0 / std::max(std::abs(fp.slope), 1e-300);
    return s / kTwoPi;
}

inline std::vector<double> all_band_edges(const BandStructure& bs)
{
    std::vector<double> e;
    for (int p = 0; p < bs.bands; ++p) {
        const auto [lo, hi] = band_extrema(bs, p);
        e.push_back(lo);
        e.push_back(hi);
    }
    return e;
}

}  // namespace detail

namespace detail {

// int_a^b rho'(mu - phi(sgn x)) dx on a panel where phi is strictly monotone,
// rewritten over quasimomentum: per band, x(k) solves phi(sgn x) = mu - lambda_p(k)
// and dx / |lambda_p'| = dk / |phi'(x(k))|. This removes the square-root
// singularity that rho' has where mu - phi(x) meets a band edge. Returns
// false when phi is not monotone on the panel.
inline bool shifted_density_by_k(const BandStructure& bs, const Perturbation& phi, double sgn, double mu, double a,
                                 double b, const quad::Options& o, quad::Result& out)
{
    const double pa = phi(sgn * a), pb = phi(sgn * b);
    const double dir = pb > pa ? 1.0 : -1.0;
    if (pb == pa) return false;
    for (int i = 1; i < 64; ++i) {
        const double x = a + (b - a) * i / 64.0;
        if (!(sgn * phi.derivative(sgn * x, 1) * dir > 0.0)) return false;
    }
    const double lo = mu - std::max(pa, pb), hi = mu - std::min(pa, pb);
    const double slack = 1e-12 * (1.0 + std::abs(mu));

    // x on [a, b] with phi(sgn x) = t, by bisection (phi monotone there)
    auto invert = [&](double t) {
        double l = a, r = b;
        for (int it = 0; it < 200 && r - l > 1e-15 * std::max(1.0, r); ++it) {
            const double m = 0.5 * (l + r);
            if ((phi(sgn * m) - t) * dir < 0.0)
                l = m;
            else
                r = m;
        }
        return 0.5 * (l + r);
    };

    out = {};
    const std::size_t nk = bs.nk(), half = nk / 2;
    for (int p = 0; p < bs.bands; ++p) {
        if (bs.band_max(p) < lo - bs.dk() || bs.band_min(p) > hi + bs.dk()) continue;
        // a band touching [lo, hi] only within the slack (the panel ends at its
        // edge crossing) has a zero-measure arc; opening one would add an O(sqrt(slack))
        // rounding artefact
        const auto [emin, emax] = band_extrema(bs, p);
        if (emax <= lo + slack || emin >= hi - slack) continue;
        auto lam = [&](double k) { return solve_bloch(bs.potential, k, bs.truncation, true).values(p); };
        auto inside = [&](double v) { return v >= lo - slack && v <= hi + slack; };
        // boundary of {k in [0, 1/2] : lambda_p(k) in [lo, hi]} by table scan and bisection
        std::vector<std::pair<double, double>> arcs;
        double start = 0.0;
        bool open = false;
        for (std::size_t i = half; i <= nk; ++i) {
            const double k0 = i < nk ? bs.k[i] : 0.5;
            const double v0 = i < nk ? bs.lambda[p][i] : bs.lambda[p][0];
            const bool in = inside(v0);
            if (i == half) {
                open = in;
                start = 0.0;
                continue;
            }
            if (in == open) continue;
            const double kprev = k0 - bs.dk();
            const double vprev = i - 1 < nk ? bs.lambda[p][i - 1] : bs.lambda[p][0];
            // the endpoint outside [lo, hi] tells which level is crossed
            const double outside = in ? vprev : v0;
            const double target = outside > hi ? hi : lo;
            double l = kprev, r = k0;
            const double sl = lam(l) - target;
            for (int it = 0; it < 100 && r - l > 1e-16; ++it) {
                const double m = 0.5 * (l + r);
                if (((lam(m) - target) < 0.0) == (sl < 0.0))
                    l = m;
                else
                    r = m;
            }
            const double kc = 0.5 * (l + r);
            if (open)
                arcs.emplace_back(start, kc);
            else
                start = kc;
            open = in;
        }
        if (open) arcs.emplace_back(start, 0.5);
        for (const auto& [k0, k1] : arcs) {
            if (!(k1 > k0)) continue;
            auto g = [&](double k) {
                const double t = std::clamp(mu - lam(k), std::min(pa, pb), std::max(pa, pb));
                return 1.0 / std::abs(phi.derivative(sgn * invert(t), 1));
            };
            const auto r = quad::integrate_endpoint_singular(g, k0, k1, o);
            // both halves of E* (bands are even in k)
            out.value += 2.0 * r.value / kTwoPi;
            out.error += 2.0 * r.error / kTwoPi;
            out.evaluations += r.evaluations;
            out.converged = out.converged && r.converged;
        }
    }
    return true;
}

}  // namespace detail

/// gamma0(mu). mu itself must be simple and non-critical; band-edge crossings
/// of mu - phi(x) are integrable square-root singularities, handled on the
/// adjacent panels by integrating over quasimomentum instead of x, unless phi
/// is stationary there.
inline CoefficientResult gamma0_pointwise(const BandStructure& bs, const Perturbation& phi, double mu,
                                          const CoeffOptions& opt = {})
{
    CoefficientResult res;
    if (phi.is_zero()) return res;
    const auto [pmin, pmax] = phi.range();
    if (!(mu - pmin < bs.reliable_ceiling())) throw ValidationError("insufficient bands tabulated");
    for (const auto& fp : fermi_set(bs, mu))
        if (!fp.simple || !(std::abs(fp.slope) > bs.slope_tol))
            throw CertificationError("window violates assumption h2 (mu=" + io::num(mu) + ")");
    const double d0 = dos_density(bs, mu);
    const double d1 = dos_density_derivative(bs, mu);

    const auto edges = detail::all_band_edges(bs);
    double dist = std::numeric_limits<double>::infinity();
    for (double e : edges) dist = std::min(dist, std::abs(mu - e));
    for (int p = 0; p < bs.bands; ++p)
        if (mu >= bs.band_min(p) && mu <= bs.band_max(p)) res.bands_used++;
    // third derivative of rho for the second-order Taylor branch
    const double e = 1e-3 * dist;
    const double d2 = (dos_density_derivative(bs, mu + e) - dos_density_derivative(bs, mu - e)) / (2.0 * e);

    const auto& cert = phi.certificate();
    const double curv = 2.0 * std::abs(d1) + 1e-300;
    res.X = cert.radius_for_tail(curv, opt.tail_target);
    res.tail_bound = curv * cert.c0 * cert.tail_integral(res.X);
    const double tau = 1e-3 * dist;

    const int nsides = phi.is_even() ? 1 : 2;
    for (int s = 0; s < nsides; ++s) {
        const double sgn = s == 0 ? 1.0 : -1.0;
        detail::LevelCrossings lc(phi, sgn, res.X);
        std::vector<double> cross;
        for (double edge : edges) {
            if (std::abs(mu - phi(0.0) - edge) < 1e-12)
                throw CertificationError("window violates assumption h2: band edge reached at x=0");
            for (double xc : lc.find(mu - edge)) {
                if (!(std::abs(phi.derivative(sgn * xc, 1)) > 1e-8))
                    throw CertificationError("window violates assumption h2: stationary band-edge crossing at x=" +
                                             io::num(sgn * xc));
                cross.push_back(xc);
            }
        }
        std::sort(cross.begin(), cross.end());
        const auto br = detail::merged_breaks(quad::geometric_breaks(res.X), cross);
        auto h = [&](double x) {
            const double d = phi(sgn * x);
            if (std::abs(d) < tau) return d1 * d - 0.5 * d2 * d * d;
            return d0 - detail::density_lenient(bs, mu - d);
        };
        const quad::Options o{opt.gamma_tol, opt.gamma_tol, 400};
        for (std::size_t i = 0; i + 1 < br.size(); ++i) {
            const double a = br[i], b = br[i + 1];
            const bool singular = std::binary_search(cross.begin(), cross.end(), a) ||
                                  std::binary_search(cross.begin(), cross.end(), b);
            quad::Result r;
            if (singular && detail::shifted_density_by_k(bs, phi, sgn, mu, a, b, o, r)) {
                r.value = d0 * (b - a) - r.value;
            } else {
                r = singular ? quad::integrate_endpoint_singular(h, a, b, o) : quad::integrate(h, a, b, o);
            }
            res.value += r.value;
            res.quad_error += r.error;
        }
    }
    if (phi.is_even()) res.value *= 2.0, res.quad_error *= 2.0;
    return res;
}

/// int gamma0(mu) g(mu) dmu over supp g; errors propagate as sup-norm bounds.
template <EnergyFunction F>
CoefficientResult gamma0_pairing(const BandStructure& bs, const Perturbation& phi, const F& g,
                                 const CoeffOptions& opt = {})
{
    CoefficientResult res;
    if (phi.is_zero()) return res;
    const auto [ga, gb] = g.support();
    // fixed slicing keeps the result independent of the worker count
    constexpr std::size_t slices = 16;
    struct Slice {
        quad::Result r;
        double max_err = 0.0, max_tail = 0.0, X = 0.0;
        int bands_used = 0;
    };
    std::vector<Slice> part(slices);
    parallel_for(slices, opt.threads, [&](std::size_t s) {
        auto& sl = part[s];
        auto integrand = [&](double mu) {
            const double w = g(mu);
            if (w == 0.0) return 0.0;
            const auto c = gamma0_pointwise(bs, phi, mu, opt);
            sl.max_err = std::max(sl.max_err, c.quad_error);
            sl.max_tail = std::max(sl.max_tail, c.tail_bound);
            sl.bands_used = std::max(sl.bands_used, c.bands_used);
            sl.X = std::max(sl.X, c.X);
            return c.value * w;
        };
        const double lo = ga + (gb - ga) * static_cast<double>(s) / slices;
        const double hi = s + 1 == slices ? gb : ga + (gb - ga) * static_cast<double>(s + 1) / slices;
        sl.r = quad::integrate(integrand, lo, hi, {1e-9 / slices, 1e-9, 200});
    });
    double max_err = 0.0, max_tail = 0.0, abs_mass = 0.0;
    quad::Result r{};
    for (const auto& sl : part) {
        r.value += sl.r.value;
        r.error += sl.r.error;
        max_err = std::max(max_err, sl.max_err);
        max_tail = std::max(max_tail, sl.max_tail);
        res.bands_used = std::max(res.bands_used, sl.bands_used);
        res.X = std::max(res.X, sl.X);
    }
    const auto m = quad::integrate([&](double mu) { return std::abs(g(mu)); }, ga, gb);
    abs_mass = m.value;
    res.value = r.value;
    res.quad_error = r.error + abs_mass * max_err;
    res.tail_bound = abs_mass * max_tail;
    return res;
}

/// (gamma0 * theta_eps)(mu) with the normalized mollifier of half-width eps.
inline CoefficientResult gamma0_mollified(const BandStructure& bs, const Perturbation& phi, double mu, double eps,
                                          const CoeffOptions& opt = {})
{
    return gamma0_pairing(bs, phi, TestFunction::mollifier(mu, eps), opt);
}

}  // namespace ssflab
