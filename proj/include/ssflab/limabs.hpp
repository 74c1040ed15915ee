#pragma once

// Non-trapping margin on the energy shell and a finite-box probe of the
// weighted resolvent <hx>^{-alpha} (P(h) - mu - i eta)^{-l} <hx>^{-alpha}.
// The probe evidences the O(h^{-l}) bound; it cannot prove it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "ssflab/bloch.hpp"
#include "ssflab/boxdisc.hpp"
#include "ssflab/effham.hpp"
#include "ssflab/errors.hpp"
#include "ssflab/io.hpp"
#include "ssflab/linalg.hpp"
#include "ssflab/model.hpp"
#include "ssflab/parallel.hpp"

namespace ssflab {

struct NontrappingGrid {
    int nk = 512;             ///< uniform k-points over E*
    double r_step = 1.0 / 16; ///< uniform r-spacing on [-r_inner, r_inner]
    double r_inner = 16.0;
    double r_growth = 1.02;   ///< geometric growth of |r| beyond r_inner
    double r_tol = 1e-10;     ///< stop once the certificate bound on |r phi'(r)| drops below this

    NontrappingGrid refined() const
    {
        NontrappingGrid g = *this;
        g.nk *= 2;
        g.r_step /= 2.0;
        g.r_growth = std::sqrt(r_growth);
        return g;
    }
};

struct NontrappingReport {
    double a = 0.0, b = 0.0;
    double margin = 0.0;          ///< min of lambda'^2 - r phi'(r) lambda'' (assumption as stated)
    double argmin_k = 0.0, argmin_r = 0.0;
    int argmin_band = 0;          ///< 1-based
    double margin_variant = 0.0;  ///< min of lambda'^2 + r phi'(-r) lambda'' (sign arising in the proof)
    double argmin_variant_k = 0.0, argmin_variant_r = 0.0;
    double tolerance = 0.0;       ///< margins at or below this do not certify
    std::size_t constrained_points = 0;
    std::string convention = "h3";
    bool certified() const { return margin > tolerance; }
    bool certified_variant() const { return margin_variant > tolerance; }
};

namespace detail {

inline std::vector<double> margin_r_grid(const Perturbation& phi, const NontrappingGrid& g)
{
    std::vector<double> pos;
    for (double r = 0.0; r <= g.r_inner + 1e-12; r += g.r_step) pos.push_back(r);
    if (!phi.is_zero()) {
        const auto& c = phi.certificate();
        double r = g.r_inner;
        while (c.c1 * r * std::pow(1.0 + r, -c.delta - 1.0) > g.r_tol && r < 1e12) {
            r *= g.r_growth;
            pos.push_back(r);
        }
    }
    std::vector<double> all;
    for (auto it = pos.rbegin(); it != pos.rend(); ++it)
        if (*it > 0.0) all.push_back(-*it);
    all.insert(all.end(), pos.begin(), pos.end());
    return all;
}

}  // namespace detail

/// Minimum of the non-trapping margin over {(k, r) : lambda_p(k) + phi(r) in [a, b]}
/// for every band meeting the window.
inline NontrappingReport nontrapping_margin(const BandStructure& bs, const Perturbation& phi, double a, double b,
                                            const NontrappingGrid& grid = {}, unsigned threads = 1)
{
    if (!(b > a)) throw ValidationError("empty window");
    NontrappingReport rep;
    rep.a = a;
    rep.b = b;
    rep.tolerance = bs.slope_tol * bs.slope_tol;
    rep.margin = rep.margin_variant = std::numeric_limits<double>::infinity();
    const auto [plo, phi_hi] = phi.is_zero() ? std::pair{0.0, 0.0} : phi.range();
    if (!(b - std::min(plo, 0.0) < bs.reliable_ceiling())) throw ValidationError("insufficient bands tabulated");
    const auto rs = detail::margin_r_grid(phi, grid);
    std::vector<double> pv(rs.size()), dv(rs.size()), dvm(rs.size());
    for (std::size_t j = 0; j < rs.size(); ++j) {
        pv[j] = phi.is_zero() ? 0.0 : phi(rs[j]);
        dv[j] = phi.is_zero() ? 0.0 : phi.derivative(rs[j], 1);
        dvm[j] = phi.is_zero() ? 0.0 : phi.derivative(-rs[j], 1);
    }
    const auto nk = static_cast<std::size_t>(grid.nk);
    std::vector<BlochPoint> pts(nk);
    parallel_for(nk, threads, [&](std::size_t i) {
        pts[i] = solve_bloch(bs.potential, -0.5 + static_cast<double>(i) / grid.nk, bs.truncation, true);
    });
    for (int p = 0; p < bs.bands; ++p) {
        if (bs.band_max(p) + std::max(phi_hi, 0.0) < a - bs.dk() || bs.band_min(p) + std::min(plo, 0.0) > b + bs.dk())
            continue;
        for (std::size_t i = 0; i < nk; ++i) {
            const double lam = pts[i].values(p), s = pts[i].slope(p), c = pts[i].curvature(p);
            for (std::size_t j = 0; j < rs.size(); ++j) {
                const double e = lam + pv[j];
                if (e < a || e > b) continue;
                ++rep.constrained_points;
                // an unresolved curvature (degenerate point) cannot certify anything
                const double m = std::isfinite(c) ? s * s - rs[j] * dv[j] * c : -std::numeric_limits<double>::infinity();
                const double mv = std::isfinite(c) ? s * s + rs[j] * dvm[j] * c : -std::numeric_limits<double>::infinity();
                if (m < rep.margin) {
                    rep.margin = m;
                    rep.argmin_k = pts[i].k;
                    rep.argmin_r = rs[j];
                    rep.argmin_band = p + 1;
                }
                if (mv < rep.margin_variant) {
                    rep.margin_variant = mv;
                    rep.argmin_variant_k = pts[i].k;
                    rep.argmin_variant_r = rs[j];
                }
            }
        }
    }
    if (rep.constrained_points == 0) throw ValidationError("window misses effective spectrum");
    return rep;
}

/// <x>^{-alpha} weights (1 + (s x_i)^2)^{-alpha/2}.
inline std::vector<double> bracket_weights(const std::vector<double>& x, double scale, double alpha)
{
    std::vector<double> w(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) w[i] = std::pow(1.0 + scale * scale * x[i] * x[i], -0.5 * alpha);
    return w;
}

namespace detail {

inline void require_probe_args(double eta, double alpha, int l)
{
    if (!(eta > 0.0)) throw ValidationError("eta must be positive; the boundary value is probed via the eta-schedule");
    if (l != 1 && l != 2) throw ValidationError("resolvent power l must be 1 or 2");
    if (!(alpha > l - 0.5)) throw ValidationError("alpha must exceed l - 1/2");
}

}  // namespace detail

struct ResolventNorm {
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Largest singular value of W U D U^T W with D = (lambda - z)^{-l},
/// z = mu + i eta (mu - i eta when `lower`), via Lanczos on the Hermitian map
/// M^* M (U, W real).
inline ResolventNorm weighted_resolvent_norm(const linalg::Spectrum& s, const std::vector<double>& w, double mu,
                                             double eta, double alpha, int l, bool lower = false,
                                             double tol = 1e-13)
{
    detail::require_probe_args(eta, alpha, l);
    if (!s.has_vectors()) throw ValidationError("weighted resolvent needs eigenvectors");
    const auto n = static_cast<Eigen::Index>(s.values.size());
    if (static_cast<Eigen::Index>(w.size()) != n) throw ValidationError("weight length mismatch");
    Eigen::VectorXcd d(n);
    const double im = lower ? eta : -eta;
    for (Eigen::Index i = 0; i < n; ++i) d(i) = std::pow(std::complex<double>(s.values[static_cast<std::size_t>(i)] - mu, im), -l);
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), n);
    const auto& U = s.vectors;
    linalg::Matrix X(n, 2), Y(n, 2);
    // y = W U diag(g) U^T W x for complex x, using two real columns
    auto apply = [&](const Eigen::VectorXcd& x, const Eigen::VectorXcd& g, Eigen::VectorXcd& y) {
        X.col(0) = wv.cwiseProduct(x.real());
        X.col(1) = wv.cwiseProduct(x.imag());
        Y.noalias() = U.transpose() * X;
        Eigen::VectorXcd z(n);
        for (Eigen::Index i = 0; i < n; ++i) z(i) = g(i) * std::complex<double>(Y(i, 0), Y(i, 1));
        X.col(0) = z.real();
        X.col(1) = z.imag();
        Y.noalias() = U * X;
        y.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) y(i) = wv(i) * std::complex<double>(Y(i, 0), Y(i, 1));
    };
    const Eigen::VectorXcd dc = d.conjugate();
    Eigen::VectorXcd tmp;
    const auto r = linalg::lanczos_max(
        static_cast<std::size_t>(n),
        [&](const linalg::CVector& x, linalg::CVector& y) {
            apply(x, d, tmp);
            apply(tmp, dc, y);
        },
        tol, 200);
    return {std::sqrt(std::max(r.value, 0.0)), r.iterations, r.converged};
}

/// Dense construction of W (A - z)^{-l} W and its largest singular value; at most 128 modes.
inline double weighted_resolvent_norm_dense(const linalg::Spectrum& s, const std::vector<double>& w, double mu,
                                            double eta, double alpha, int l, bool lower = false)
{
    detail::require_probe_args(eta, alpha, l);
    const auto n = static_cast<Eigen::Index>(s.values.size());
    if (n > 128) throw ValidationError("dense weighted resolvent limited to 128 modes");
    if (!s.has_vectors()) throw ValidationError("weighted resolvent needs eigenvectors");
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto g = std::pow(std::complex<double>(s.values[static_cast<std::size_t>(k)] - mu, lower ? eta : -eta), -l);
        M += g * (s.vectors.col(k) * s.vectors.col(k).transpose()).cast<std::complex<double>>();
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) M(i, j) *= w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(j)];
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
    return svd.singularValues()(0);
}

/// Box-side probe: weights <h x>^{-alpha} on the grid.
inline ResolventNorm weighted_resolvent_norm(const BoxOperator& op, const linalg::Spectrum& s, double mu, double eta,
                                             double alpha, int l)
{
    return weighted_resolvent_norm(s, bracket_weights(op.x, op.h, alpha), mu, eta, alpha, l);
}

/// Dual-side probe on the effective operator: weights <2 pi nu h>^{-alpha}.
inline ResolventNorm weighted_resolvent_norm(const EffectiveOperator& eff, const linalg::Spectrum& s, double mu,
                                             double eta, double alpha, int l)
{
    std::vector<double> nu(eff.size());
    for (std::size_t i = 0; i < nu.size(); ++i) nu[i] = static_cast<double>(static_cast<long>(i) - eff.J);
    return weighted_resolvent_norm(s, bracket_weights(nu, kTwoPi * eff.h, alpha), mu, eta, alpha, l);
}

struct ResolventStudyOptions {
    double a = 1.85, b = 2.05;
    std::vector<double> h_grid{0.5, 1.0 / 3, 0.25};
    double box_growth = 40.0;     ///< M_cell = ceil(c / h)
    int points_per_cell = 16;
    double eta0 = 0.05;
    double alpha = 1.0;
    int l = 1;
    int mu_points = 5;
    std::size_t ceiling = 8192;
    double boundary_tol = 1e-3;
    double plateau_limit = 0.5;
    unsigned threads = 1;
    NontrappingGrid grid{};
};

struct ResolventRow {
    double h = 0.0, eta = 0.0, mu_sup = 0.0, norm = 0.0;
    std::size_t n = 0;
    bool converged = true;
};

struct ResolventProbeResult {
    double alpha = 1.0;
    int l = 1;
    std::vector<double> h_grid, etas;
    std::vector<ResolventRow> rows;          ///< one per (h, eta)
    std::vector<double> plateau_per_h;
    double plateau = 0.0;                    ///< max relative change across the eta-schedule
    bool plateau_resolved = false;
    double slope = std::numeric_limits<double>::quiet_NaN();  ///< d log norm / d log h at the smallest eta
    double symmetry_defect = 0.0;            ///< max |norm(mu + i eta) - norm(mu - i eta)|
    bool bound_respected = true;             ///< every norm <= eta^{-l}
    NontrappingReport nontrapping;
    std::string flag;                        ///< "eta-limit not resolved" when the plateau fails
    std::string label = "consistency probe, not proof";

    double norm_at(double h, double eta) const
    {
        for (const auto& r : rows)
            if (r.h == h && r.eta == eta) return r.norm;
        return std::numeric_limits<double>::quiet_NaN();
    }
};

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    const auto n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline ResolventProbeResult resolvent_scaling_study(const BandStructure& bs, const Perturbation& phi,
                                                   const ResolventStudyOptions& opt)
{
    detail::require_probe_args(opt.eta0, opt.alpha, opt.l);
    if (opt.h_grid.size() < 2) throw ValidationError("insufficient h-grid");
    if (opt.mu_points < 1) throw ValidationError("mu grid is empty");
    ResolventProbeResult res;
    res.alpha = opt.alpha;
    res.l = opt.l;
    res.h_grid = opt.h_grid;
    res.etas = {opt.eta0, opt.eta0 / 2, opt.eta0 / 4};
    res.nontrapping = nontrapping_margin(bs, phi, opt.a, opt.b, opt.grid, opt.threads);
    if (!res.nontrapping.certified())
        throw CertificationError("non-trapping margin " + io::num(res.nontrapping.margin) +
                                 " not positive on the window; assumption h3 fails");
    std::vector<double> mus(static_cast<std::size_t>(opt.mu_points));
    for (int i = 0; i < opt.mu_points; ++i)
        mus[static_cast<std::size_t>(i)] =
            opt.mu_points == 1 ? 0.5 * (opt.a + opt.b) : opt.a + (opt.b - opt.a) * i / (opt.mu_points - 1);

    BoxOptions bo;
    bo.ceiling = opt.ceiling;
    bo.boundary_tol = opt.boundary_tol;
    const std::size_t ne = res.etas.size(), nm = mus.size();
    for (double h : opt.h_grid) {
        const int cells = static_cast<int>(std::ceil(opt.box_growth / h - 1e-9));
        const auto op = assemble_box_operator(bs.potential, phi, h, cells, opt.points_per_cell, bo);
        const auto spec = box_spectrum(op, true);
        const auto w = bracket_weights(op.x, h, opt.alpha);
        // every (eta, mu) pair plus the conjugate side, each written to its own slot
        std::vector<ResolventNorm> plus(ne * nm);
        parallel_for(ne * nm, opt.threads, [&](std::size_t t) {
            plus[t] = weighted_resolvent_norm(spec, w, mus[t % nm], res.etas[t / nm], opt.alpha, opt.l);
        });
        std::vector<double> sup(ne, 0.0);
        for (std::size_t e = 0; e < ne; ++e) {
            ResolventRow row;
            row.h = h;
            row.eta = res.etas[e];
            row.n = op.n;
            for (std::size_t m = 0; m < nm; ++m) {
                const auto& v = plus[e * nm + m];
                row.converged = row.converged && v.converged;
                if (v.value > row.norm) {
                    row.norm = v.value;
                    row.mu_sup = mus[m];
                }
            }
            if (row.norm > std::pow(row.eta, -opt.l) * (1.0 + 1e-12)) res.bound_respected = false;
            sup[e] = row.norm;
            res.rows.push_back(row);
        }
        if (opt.l == 1) {
            // the mu - i eta side at each supremum point
            std::vector<ResolventNorm> lower(ne);
            parallel_for(ne, opt.threads, [&](std::size_t e) {
                const auto& row = res.rows[res.rows.size() - ne + e];
                lower[e] = weighted_resolvent_norm(spec, w, row.mu_sup, row.eta, opt.alpha, 1, true);
            });
            for (std::size_t e = 0; e < ne; ++e)
                res.symmetry_defect =
                    std::max(res.symmetry_defect, std::abs(lower[e].value - res.rows[res.rows.size() - ne + e].norm));
        }
        double plateau = 0.0;
        for (std::size_t e = 0; e + 1 < ne; ++e) plateau = std::max(plateau, std::abs(sup[e + 1] - sup[e]) / sup[e]);
        res.plateau_per_h.push_back(plateau);
        res.plateau = std::max(res.plateau, plateau);
    }
    res.plateau_resolved = res.plateau <= opt.plateau_limit;
    if (!res.plateau_resolved) {
        res.flag = "eta-limit not resolved";
    } else {
        std::vector<double> ys;
        for (double h : opt.h_grid) ys.push_back(res.norm_at(h, res.etas.back()));
        res.slope = loglog_slope(opt.h_grid, ys);
    }
    return res;
}

/// CSV with columns h, eta, mu_sup, norm, alpha, l.
inline void write_resolvent_csv(std::ostream& os, const ResolventProbeResult& r)
{
    os << "h,eta,mu_sup,norm,alpha,l\n";
    for (const auto& row : r.rows)
        os << io::num(row.h) << ',' << io::num(row.eta) << ',' << io::num(row.mu_sup) << ',' << io::num(row.norm)
           << ',' << io::num(r.alpha) << ',' << r.l << '\n';
}

}  // namespace ssflab
