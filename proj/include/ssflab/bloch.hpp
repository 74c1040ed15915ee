#pragma once

// Bloch eigenvalue problem P(k) = (D_y + k)^2 + V(y) on the 2*pi torus in the
// plane-wave basis e^{ijy}, |j| <= M. Quasimomentum k lives in E* = [-1/2, 1/2).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "ssflab/errors.hpp"
#include "ssflab/io.hpp"
#include "ssflab/model.hpp"
#include "ssflab/parallel.hpp"

namespace ssflab {

struct BlochMatrix {
    double k = 0.0;
    int truncation = 0;      ///< M
    Eigen::MatrixXcd matrix; ///< rows/cols ordered j = -M..M
};

namespace detail {

inline Eigen::MatrixXcd bloch_entries(const PeriodicPotential& V, double k, int M)
{
    const int n = 2 * M + 1;
    Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(n, n);
    for (int r = 0; r < n; ++r) {
        const double j = r - M;
        a(r, r) = (j + k) * (j + k);
        for (const auto& [m, c] : V.coeffs()) {
            const int col = r - m;  // A_{j j'} = vhat_{j - j'}
            if (col >= 0 && col < n) a(r, col) += c;
        }
    }
    return a;
}

}  // namespace detail

inline BlochMatrix assemble_bloch_matrix(const PeriodicPotential& V, double k, int M)
{
    if (M < V.bandwidth()) throw ValidationError("truncation below potential bandwidth");
    if (!(k >= -0.5 && k < 0.5)) throw ValidationError("quasimomentum must lie in [-1/2, 1/2)");
    return {k, M, detail::bloch_entries(V, k, M)};
}

/// Full solution of P(k) at one quasimomentum: all 2M+1 eigenvalues with
/// Hellmann-Feynman slopes and second-order perturbation curvatures.
struct BlochPoint {
    double k = 0.0;
    Eigen::VectorXd values;
    Eigen::VectorXd slope;      ///< <Phi_p, 2(D+k) Phi_p>
    Eigen::VectorXd curvature;  ///< NaN where the level is degenerate

    double gap(int p) const
    {
        double g = std::numeric_limits<double>::infinity();
        if (p > 0) g = std::min(g, values(p) - values(p - 1));
        if (p + 1 < values.size()) g = std::min(g, values(p + 1) - values(p));
        return g;
    }
};

namespace detail {

inline constexpr double kDegenerateGap = 1e-8;

inline BlochPoint solve_bloch_point(const PeriodicPotential& V, double k, int M, bool derivatives)
{
    const int n = 2 * M + 1;
    BlochPoint pt;
    pt.k = k;
    Eigen::VectorXd d(n);
    for (int r = 0; r < n; ++r) d(r) = 2.0 * (r - M + k);

    bool real = true;
    for (const auto& [m, c] : V.coeffs())
        if (c.imag() != 0.0) real = false;

    Eigen::MatrixXd xr;
    Eigen::MatrixXcd xc;
    if (real) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
        for (int r = 0; r < n; ++r) {
            const double j = r - M;
            a(r, r) = (j + k) * (j + k);
            for (const auto& [m, c] : V.coeffs())
                if (r - m >= 0 && r - m < n) a(r, r - m) += c.real();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
            a, derivatives ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
        if (es.info() != Eigen::Success)
            throw NumericalGuardError("band solve failed at k=" + io::num(k));
        pt.values = es.eigenvalues();
        if (derivatives) {
            const auto& c = es.eigenvectors();
            xr = c.transpose() * d.asDiagonal() * c;
            // Rayleigh quotients: absolute accuracy set by the eigenvector's
            // weight on high modes rather than by eps * ||A||
            const Eigen::MatrixXd ac = a * c;
            for (int p = 0; p < n; ++p) pt.values(p) = c.col(p).dot(ac.col(p));
        }
    } else {
        Eigen::MatrixXcd a = bloch_entries(V, k, M);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(
            a, derivatives ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
        if (es.info() != Eigen::Success)
            throw NumericalGuardError("band solve failed at k=" + io::num(k));
        pt.values = es.eigenvalues();
        if (derivatives) {
            const auto& c = es.eigenvectors();
            xc = c.adjoint() * d.asDiagonal() * c;
            const Eigen::MatrixXcd ac = a * c;
            for (int p = 0; p < n; ++p) pt.values(p) = c.col(p).dot(ac.col(p)).real();
        }
    }
    if (!derivatives) return pt;

    pt.slope.resize(n);
    pt.curvature.resize(n);
    auto elem2 = [&](int q, int p) { return real ? xr(q, p) * xr(q, p) : std::norm(xc(q, p)); };
    for (int p = 0; p < n; ++p) {
        pt.slope(p) = real ? xr(p, p) : xc(p, p).real();
        double c = 2.0;
        bool degenerate = false;
        for (int q = 0; q < n; ++q) {
            if (q == p) continue;
            const double dl = pt.values(p) - pt.values(q);
            if (std::abs(dl) <= kDegenerateGap) {
                degenerate = true;
                break;
            }
            c += 2.0 * elem2(q, p) / dl;
        }
        pt.curvature(p) = degenerate ? std::numeric_limits<double>::quiet_NaN() : c;
    }
    return pt;
}

inline double fold_k(double k)
{
    double f = k - std::floor(k + 0.5);
    if (f >= 0.5) f -= 1.0;
    return f;
}

}  // namespace detail

/// Solves P(k) at any real k (folded into E*), with derivatives.
inline BlochPoint solve_bloch(const PeriodicPotential& V, double k, int M, bool derivatives = true)
{
    if (M < V.bandwidth()) throw ValidationError("truncation below potential bandwidth");
    return detail::solve_bloch_point(V, detail::fold_k(k), M, derivatives);
}

struct BandStructure {
    PeriodicPotential potential;
    int truncation = 32;
    int bands = 0;              ///< P_max
    std::vector<double> k;      ///< k_i = -1/2 + i/N_k
    // tables indexed [p][i], p = 0 is the lowest band
    std::vector<std::vector<double>> lambda, dlambda, d2lambda, gap;
    std::vector<std::vector<char>> degenerate;
    std::vector<double> ceiling;  ///< min over k of the first untabulated eigenvalue

    double gap_tol = 1e-6;
    double slope_tol = 1e-6;

    // diagnostics
    double cauchy_change = 0.0;            ///< max |lambda(M+8) - lambda(M)|
    double cauchy_monotone_excess = 0.0;   ///< max(lambda(M+8) - lambda(M)), expected <= 0
    std::vector<double> hf_fd_consistency;  ///< per band: max |lambda'_HF - FD4(lambda)| over simple entries
    std::vector<double> periodicity_defect; ///< per band: |lambda(-1/2) - cubic extrapolation to 1/2|
    double symmetry_defect = 0.0;          ///< max |lambda(k) - lambda(-k)| over the grid

    std::size_t nk() const noexcept { return k.size(); }
    double dk() const noexcept { return 1.0 / static_cast<double>(k.size()); }

    double band_min(int p) const { return *std::min_element(lambda[p].begin(), lambda[p].end()); }
    double band_max(int p) const { return *std::max_element(lambda[p].begin(), lambda[p].end()); }

    /// Energies below this are represented by the tabulated bands exactly.
    double reliable_ceiling() const { return ceiling.empty() ? 0.0 : *std::min_element(ceiling.begin(), ceiling.end()); }

    BlochPoint solve(double kk) const { return solve_bloch(potential, kk, truncation); }
};

/// Fills dlambda-derived diagnostics, the fourth-order finite-difference
/// curvature table and degeneracy flags. Expects lambda, raw Hellmann-Feynman
/// slopes in dlambda and gaps to be present.
inline BandStructure band_derivatives(BandStructure bs)
{
    const std::size_t nk = bs.nk();
    const double h = bs.dk();
    const auto at = [nk](std::size_t i, long off) { return static_cast<std::size_t>(static_cast<long>(i + nk) + off) % nk; };
    bs.d2lambda.assign(bs.bands, std::vector<double>(nk));
    bs.degenerate.assign(bs.bands, std::vector<char>(nk, 0));
    bs.hf_fd_consistency.assign(bs.bands, 0.0);
    bs.periodicity_defect.assign(bs.bands, 0.0);
    bs.symmetry_defect = 0.0;
    for (int p = 0; p < bs.bands; ++p) {
        const auto& l = bs.lambda[p];
        for (std::size_t i = 0; i < nk; ++i)
            if (!(bs.gap[p][i] > detail::kDegenerateGap)) bs.degenerate[p][i] = 1;
        for (std::size_t i = 0; i < nk; ++i) {
            bool clean = true;
            for (long o = -2; o <= 2; ++o) clean = clean && !bs.degenerate[p][at(i, o)];
            if (bs.degenerate[p][i]) bs.dlambda[p][i] = std::numeric_limits<double>::quiet_NaN();
            if (!clean) {
                bs.d2lambda[p][i] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            const double lm2 = l[at(i, -2)], lm1 = l[at(i, -1)], l0 = l[i], lp1 = l[at(i, 1)], lp2 = l[at(i, 2)];
            bs.d2lambda[p][i] = (-lp2 + 16.0 * lp1 - 30.0 * l0 + 16.0 * lm1 - lm2) / (12.0 * h * h);
            const double fd1 = (-lp2 + 8.0 * lp1 - 8.0 * lm1 + lm2) / (12.0 * h);
            bs.hf_fd_consistency[p] = std::max(bs.hf_fd_consistency[p], std::abs(fd1 - bs.dlambda[p][i]));
        }
        // cubic extrapolation of the last four samples to k = 1/2
        if (nk >= 4) {
            const double e = 4.0 * l[nk - 1] - 6.0 * l[nk - 2] + 4.0 * l[nk - 3] - l[nk - 4];
            bs.periodicity_defect[p] = std::abs(e - l[0]);
        }
        for (std::size_t i = 1; i < nk; ++i)
            bs.symmetry_defect = std::max(bs.symmetry_defect, std::abs(l[i] - l[nk - i]));
    }
    return bs;
}

/// Tabulates the lowest `bands` band functions on the uniform N_k grid over E*.
inline BandStructure compute_bands(const PeriodicPotential& V, int nk, int M, int bands, unsigned threads = 1)
{
    if (M < V.bandwidth()) throw ValidationError("truncation below potential bandwidth");
    if (bands < 1 || bands > 2 * M + 1) throw ValidationError("band count must lie in [1, 2M+1]");
    if (nk < 8) throw ValidationError("k-grid too coarse");
    BandStructure bs;
    bs.potential = V;
    bs.truncation = M;
    bs.bands = bands;
    bs.k.resize(static_cast<std::size_t>(nk));
    for (int i = 0; i < nk; ++i) bs.k[static_cast<std::size_t>(i)] = -0.5 + static_cast<double>(i) / nk;
    bs.lambda.assign(bands, std::vector<double>(nk));
    bs.dlambda.assign(bands, std::vector<double>(nk));
    bs.gap.assign(bands, std::vector<double>(nk));
    bs.ceiling.assign(static_cast<std::size_t>(nk), std::numeric_limits<double>::infinity());
    std::vector<double> change(static_cast<std::size_t>(nk)), excess(static_cast<std::size_t>(nk));

    parallel_for(static_cast<std::size_t>(nk), threads, [&](std::size_t i) {
        const auto pt = detail::solve_bloch_point(V, bs.k[i], M, true);
        const auto big = detail::solve_bloch_point(V, bs.k[i], M + 8, false);
        double ch = 0.0, ex = -std::numeric_limits<double>::infinity();
        for (int p = 0; p < bands; ++p) {
            bs.lambda[p][i] = pt.values(p);
            bs.dlambda[p][i] = pt.slope(p);
            bs.gap[p][i] = pt.gap(p);
            ch = std::max(ch, std::abs(big.values(p) - pt.values(p)));
            ex = std::max(ex, big.values(p) - pt.values(p));
        }
        if (bands < pt.values.size()) bs.ceiling[i] = pt.values(bands);
        change[i] = ch;
        excess[i] = ex;
    });
    bs.cauchy_change = *std::max_element(change.begin(), change.end());
    bs.cauchy_monotone_excess = *std::max_element(excess.begin(), excess.end());
    return band_derivatives(std::move(bs));
}

struct FermiPoint {
    int band = 0;        ///< 0-based band index p-1
    double k = 0.0;      ///< root in E*
    double slope = 0.0;  ///< lambda'_p(k)
    double curvature = 0.0;
    double gap = 0.0;    ///< min adjacent gap at k
    bool simple = true;
    bool critical = false;
};

namespace detail {

// Root of lambda_p(k) = mu inside a sign-change bracket. The initial guess
// comes from cubic Hermite interpolation of the table (slopes may be NaN, in
// which case the secant is used); safeguarded Newton steps on direct solves
// follow. Once the Newton step is below 1e-9 the root and slope are advanced
// by one step using the local curvature, which is exact to O(step^2).
inline FermiPoint polish_root(const BandStructure& bs, int p, double mu, double lo, double hi, double glo, double ghi,
                              double slo, double shi)
{
    const double w = hi - lo;
    double k = lo - glo * w / (ghi - glo);
    if (std::isfinite(slo) && std::isfinite(shi)) {
        auto cubic = [&](double t, double& d) {
            const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
            const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
            d = ((6 * t * t - 6 * t) * glo + (3 * t * t - 4 * t + 1) * w * slo + (6 * t - 6 * t * t) * ghi +
                 (3 * t * t - 2 * t) * w * shi) / w;
            return h00 * glo + h10 * w * slo + h01 * ghi + h11 * w * shi;
        };
        double t = (k - lo) / w;
        for (int it = 0; it < 30; ++it) {
            double d = 0.0;
            const double v = cubic(t, d);
            const double next = t - v / (d * w);
            if (!(next > 0.0 && next < 1.0) || !std::isfinite(next)) break;
            if (std::abs(next - t) < 1e-15) {
                t = next;
                break;
            }
            t = next;
        }
        k = lo + t * w;
    }
    if (!(k > lo && k < hi)) k = 0.5 * (lo + hi);

    FermiPoint fp;
    fp.band = p;
    for (int it = 0; it < 80; ++it) {
        const auto pt = solve_bloch(bs.potential, k, bs.truncation, true);
        const double gk = pt.values(p) - mu, sk = pt.slope(p), ck = pt.curvature(p);
        fp.gap = pt.gap(p);
        fp.curvature = ck;
        const double step = (gk == 0.0) ? 0.0 : -gk / sk;
        if (std::abs(step) < 1e-9 && std::isfinite(ck) && std::isfinite(step)) {
            fp.k = k + step;
            fp.slope = sk + ck * step;
            break;
        }
        if (gk == 0.0 || hi - lo < 1e-15 || std::abs(step) < 1e-15) {
            fp.k = k;
            fp.slope = sk;
            break;
        }
        if ((gk < 0.0) == (glo < 0.0))
            lo = k;
        else
            hi = k;
        double next = k + step;
        if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
        k = next;
        fp.k = k;
        fp.slope = sk;
    }
    fp.k = fold_k(fp.k);
    fp.simple = fp.gap > bs.gap_tol;
    fp.critical = !(std::abs(fp.slope) >= 1e-8);
    return fp;
}

// Locates a zero of lambda'_p in (lo, hi) by bisection on the slope sign.
inline double critical_point(const BandStructure& bs, int p, double lo, double hi, double slo)
{
    for (int it = 0; it < 60 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double s = solve_bloch(bs.potential, mid, bs.truncation, true).slope(p);
        if ((s < 0.0) == (slo < 0.0))
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// All k in E* with lambda_p(k) = mu over the tabulated bands, ascending by (band, k).
inline std::vector<FermiPoint> fermi_set(const BandStructure& bs, double mu)
{
    std::vector<FermiPoint> out;
    const std::size_t nk = bs.nk();
    const double dk = bs.dk();
    for (int p = 0; p < bs.bands; ++p) {
        // extrema between grid points stay within dk^2 max|lambda''| / 8 of the table range
        double curv = 2.0;
        for (double c : bs.d2lambda[p])
            if (std::isfinite(c)) curv = std::max(curv, std::abs(c));
        const double slack = dk * dk * curv / 8.0 + 1e-12;
        if (mu < bs.band_min(p) - slack || mu > bs.band_max(p) + slack) continue;
        const auto& l = bs.lambda[p];
        const auto& s = bs.dlambda[p];
        std::vector<FermiPoint> roots;
        constexpr double nan = std::numeric_limits<double>::quiet_NaN();
        auto bracket = [&](double a, double ga, double b, double gb, double sa, double sb) {
            if (ga == 0.0 || gb == 0.0 || (ga < 0.0) == (gb < 0.0)) return;
            roots.push_back(detail::polish_root(bs, p, mu, a, b, ga, gb, sa, sb));
        };
        for (std::size_t i = 0; i < nk; ++i) {
            const double a = bs.k[i], b = a + dk;
            const std::size_t j = (i + 1) % nk;
            const double ga = l[i] - mu, gb = l[j] - mu;
            if (ga == 0.0) {
                auto pt = solve_bloch(bs.potential, a, bs.truncation, true);
                FermiPoint fp{p, a, pt.slope(p), pt.curvature(p), pt.gap(p), true, false};
                fp.simple = fp.gap > bs.gap_tol;
                fp.critical = !(std::abs(fp.slope) >= 1e-8);
                roots.push_back(fp);
            }
            // an interior extremum; slopes that vanish to rounding mark an extremum on the grid point itself
            const double flat = 1e-10 * (1.0 + std::abs(l[i]));
            const bool turn = std::isfinite(s[i]) && std::isfinite(s[j]) && std::abs(s[i]) > flat &&
                              std::abs(s[j]) > flat && (s[i] < 0.0) != (s[j] < 0.0);
            if (turn) {
                const double kc = detail::critical_point(bs, p, a, b, s[i]);
                const double gc = solve_bloch(bs.potential, kc, bs.truncation, false).values(p) - mu;
                if (gc == 0.0) {
                    auto pt = solve_bloch(bs.potential, kc, bs.truncation, true);
                    roots.push_back({p, detail::fold_k(kc), pt.slope(p), pt.curvature(p), pt.gap(p),
                                     pt.gap(p) > bs.gap_tol, true});
                }
                bracket(a, ga, kc, gc, nan, nan);
                bracket(kc, gc, b, gb, nan, nan);
            } else {
                bracket(a, ga, b, gb, s[i], s[j]);
            }
        }
        std::sort(roots.begin(), roots.end(), [](const auto& x, const auto& y) { return x.k < y.k; });
        for (const auto& r : roots)
            if (out.empty() || out.back().band != p || std::abs(out.back().k - r.k) > 1e-11) out.push_back(r);
    }
    return out;
}

/// Polished extreme values {min, max} of band p: the tabulated extremum,
/// refined to the critical point when the extremum lies between grid points.
inline std::pair<double, double> band_extrema(const BandStructure& bs, int p)
{
    const auto& l = bs.lambda[p];
    const auto& s = bs.dlambda[p];
    const std::size_t nk = bs.nk();
    auto refine = [&](std::size_t i, bool is_min) {
        double best = l[i];
        for (int side : {-1, 1}) {
            const std::size_t j = (i + nk + static_cast<std::size_t>(side + static_cast<int>(nk))) % nk;
            const std::size_t a = side < 0 ? j : i, b = side < 0 ? i : j;
            const double flat = 1e-10 * (1.0 + std::abs(l[i]));
            if (!(std::isfinite(s[a]) && std::isfinite(s[b]) && std::abs(s[a]) > flat && std::abs(s[b]) > flat &&
                  (s[a] < 0.0) != (s[b] < 0.0)))
                continue;
            const double kc = detail::critical_point(bs, p, bs.k[a], bs.k[a] + bs.dk(), s[a]);
            const double v = solve_bloch(bs.potential, kc, bs.truncation, false).values(p);
            best = is_min ? std::min(best, v) : std::max(best, v);
        }
        return best;
    };
    const auto lo = static_cast<std::size_t>(std::min_element(l.begin(), l.end()) - l.begin());
    const auto hi = static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin());
    return {refine(lo, true), refine(hi, false)};
}

struct NoncriticalCertificate {
    bool simple = true;
    bool noncritical = true;
    double min_gap = std::numeric_limits<double>::infinity();
    double min_slope = std::numeric_limits<double>::infinity();
    int gap_band = -1, slope_band = -1;
    double gap_k = 0.0, gap_mu = 0.0, slope_k = 0.0, slope_mu = 0.0;
    std::size_t fermi_points = 0;

    bool pass() const { return simple && noncritical; }
};

/// Checks simplicity and non-criticality of every Fermi point for mu in
/// [a, b]: on a uniform mu-grid plus every tabulated sample with energy in
/// [a, b] (which catches crossings and extrema sitting on grid points).
inline NoncriticalCertificate check_noncritical_simple(const BandStructure& bs, double a, double b, int n_mu = 101)
{
    if (!(b >= a)) throw ValidationError("empty energy window");
    NoncriticalCertificate c;
    auto record = [&](const FermiPoint& fp, double mu) {
        ++c.fermi_points;
        const double g = fp.gap;
        const double s = std::isfinite(fp.slope) ? std::abs(fp.slope) : 0.0;
        if (g < c.min_gap) c.min_gap = g, c.gap_band = fp.band, c.gap_k = fp.k, c.gap_mu = mu;
        if (s < c.min_slope) c.min_slope = s, c.slope_band = fp.band, c.slope_k = fp.k, c.slope_mu = mu;
    };
    for (int i = 0; i < n_mu; ++i) {
        const double mu = n_mu == 1 ? a : a + (b - a) * i / (n_mu - 1);
        for (const auto& fp : fermi_set(bs, mu)) record(fp, mu);
    }
    for (int p = 0; p < bs.bands; ++p)
        for (std::size_t i = 0; i < bs.nk(); ++i) {
            const double mu = bs.lambda[p][i];
            if (mu < a || mu > b) continue;
            FermiPoint fp{p, bs.k[i], bs.dlambda[p][i], bs.d2lambda[p][i], bs.gap[p][i], true, false};
            record(fp, mu);
        }
    c.simple = c.min_gap > bs.gap_tol;
    c.noncritical = c.min_slope > bs.slope_tol;
    return c;
}

/// CSV with columns k, p, lambda, dlambda, d2lambda, gap (p is 1-based).
inline void write_bands_csv(std::ostream& os, const BandStructure& bs)
{
    os << "k,p,lambda,dlambda,d2lambda,gap\n";
    for (std::size_t i = 0; i < bs.nk(); ++i)
        for (int p = 0; p < bs.bands; ++p)
            os << io::num(bs.k[i]) << ',' << p + 1 << ',' << io::num(bs.lambda[p][i]) << ','
               << io::num(bs.dlambda[p][i]) << ',' << io::num(bs.d2lambda[p][i]) << ',' << io::num(bs.gap[p][i])
               << '\n';
}

}  // namespace ssflab
