#pragma once

// Integrated density of states rho(mu) and its density, evaluated from the
// Fermi points of each tabulated band.

#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "ssflab/bloch.hpp"
#include "ssflab/errors.hpp"
#include "ssflab/io.hpp"

namespace ssflab {

namespace detail {

inline void require_below_ceiling(const BandStructure& bs, double mu)
{
    if (!(mu < bs.reliable_ceiling())) throw ValidationError("insufficient bands tabulated for mu=" + io::num(mu));
}

// Measure of {k in E* : lambda_p(k) <= mu} given the band's Fermi points.
inline double sublevel_measure(const BandStructure& bs, int p, double mu, const std::vector<FermiPoint>& roots)
{
    std::vector<double> ks;
    for (const auto& r : roots)
        if (r.band == p) ks.push_back(r.k);
    if (ks.empty()) return bs.lambda[p][0] <= mu ? 1.0 : 0.0;
    double m = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const double a = ks[i];
        const double b = i + 1 < ks.size() ? ks[i + 1] : ks[0] + 1.0;
        if (!(b > a)) continue;
        // the sign of lambda_p - mu is constant on the open arc (a, b)
        const double mid = solve_bloch(bs.potential, 0.5 * (a + b), bs.truncation, false).values(p);
        if (mid <= mu) m += b - a;
    }
    return m;
}

}  // namespace detail

/// rho(mu) = (2 pi)^{-1} sum_p |{k in E* : lambda_p(k) <= mu}|.
inline double integrated_dos(const BandStructure& bs, double mu)
{
    detail::require_below_ceiling(bs, mu);
    const auto roots = fermi_set(bs, mu);
    double total = 0.0;
    for (int p = 0; p < bs.bands; ++p) {
        if (mu < bs.band_min(p) - 1e-6 && mu < bs.band_min(p) - bs.dk()) break;
        total += detail::sublevel_measure(bs, p, mu, roots);
    }
    return total / kTwoPi;
}

/// rho'(mu) = (2 pi)^{-1} sum over Fermi points of 1/|lambda'|.
inline double dos_density(const BandStructure& bs, double mu)
{
    detail::require_below_ceiling(bs, mu);
    double s = 0.0;
    for (const auto& fp : fermi_set(bs, mu)) {
        if (!(std::abs(fp.slope) > bs.slope_tol))
            throw NumericalGuardError("DOS singular at band edge (mu=" + io::num(mu) + ")");
        s += 1.0 / std::abs(fp.slope);
    }
    return s / kTwoPi;
}

/// rho''(mu) = -(2 pi)^{-1} sum over Fermi points of lambda''/|lambda'|^3.
inline double dos_density_derivative(const BandStructure& bs, double mu)
{
    detail::require_below_ceiling(bs, mu);
    double s = 0.0;
    for (const auto& fp : fermi_set(bs, mu)) {
        if (!(std::abs(fp.slope) > bs.slope_tol) || !std::isfinite(fp.curvature))
            throw NumericalGuardError("DOS singular at band edge (mu=" + io::num(mu) + ")");
        const double a = std::abs(fp.slope);
        s -= fp.curvature / (a * a * a);
    }
    return s / kTwoPi;
}

struct DosTable {
    std::vector<double> mu, rho, drho;  ///< drho is NaN at critical energies
    std::vector<std::vector<int>> bands;  ///< contributing (1-based) band indices
    std::vector<int> fermi_points;
};

inline DosTable dos_table(const BandStructure& bs, const std::vector<double>& mus, unsigned threads = 1)
{
    DosTable t;
    const std::size_t n = mus.size();
    t.mu = mus;
    t.rho.assign(n, 0.0);
    t.drho.assign(n, 0.0);
    t.bands.assign(n, {});
    t.fermi_points.assign(n, 0);
    parallel_for(n, threads, [&](std::size_t i) {
        const double mu = mus[i];
        t.rho[i] = integrated_dos(bs, mu);
        const auto roots = fermi_set(bs, mu);
        t.fermi_points[i] = static_cast<int>(roots.size());
        double s = 0.0;
        bool critical = false;
        for (const auto& fp : roots) {
            if (!(std::abs(fp.slope) > bs.slope_tol)) critical = true;
            s += 1.0 / std::abs(fp.slope);
            if (t.bands[i].empty() || t.bands[i].back() != fp.band + 1) t.bands[i].push_back(fp.band + 1);
        }
        t.drho[i] = critical ? std::numeric_limits<double>::quiet_NaN() : s / kTwoPi;
    });
    return t;
}

/// CSV with columns mu, rho, drho, n_fermi_points.
inline void write_dos_csv(std::ostream& os, const DosTable& t)
{
    os << "mu,rho,drho,n_fermi_points\n";
    for (std::size_t i = 0; i < t.mu.size(); ++i)
        os << io::num(t.mu[i]) << ',' << io::num(t.rho[i]) << ',' << io::num(t.drho[i]) << ',' << t.fermi_points[i]
           << '\n';
}

}  // namespace ssflab
