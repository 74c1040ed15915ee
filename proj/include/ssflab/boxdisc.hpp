#pragma once

// Periodic-box discretization of P0 = -d^2/dx^2 + V(x) and P(h) = P0 + phi(hx):
// M_cell lattice cells on [-L, L), L = pi * M_cell, a spectral (Fourier)
// Laplacian and diagonal potentials on a uniform grid.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ssflab/bloch.hpp"
#include "ssflab/errors.hpp"
#include "ssflab/io.hpp"
#include "ssflab/linalg.hpp"
#include "ssflab/model.hpp"
#include "ssflab/parallel.hpp"

namespace ssflab {

struct BoxOptions {
    double boundary_tol = 1e-3;      ///< admissible certificate tail C0 (1 + hL)^{-delta}
    std::size_t ceiling = 8192;      ///< dense solver ceiling on N
    bool use_parity = true;          ///< split even/odd blocks when V and phi are even
};

class BoxOperator {
public:
    double h = 0.0;
    int cells = 0;                   ///< M_cell
    int points_per_cell = 0;
    std::size_t n = 0;               ///< grid size N
    double half_length = 0.0;        ///< L
    double dx = 0.0;
    PeriodicPotential potential;
    Perturbation perturbation;
    std::vector<double> x;           ///< grid points -L + a dx
    std::vector<double> diagonal;    ///< V(x) + phi(hx)
    std::vector<double> kinetic;     ///< first column of the circulant Laplacian
    double boundary_tail = 0.0;      ///< C0 (1 + hL)^{-delta}
    double boundary_tol = 0.0;
    std::size_t ceiling = 8192;
    bool parity = false;             ///< even/odd block split applies

    bool unperturbed() const { return perturbation.is_zero(); }

    /// Highest resolved energy: the squared wavenumber at half the Nyquist mode.
    double resolved_energy() const
    {
        const double q = 0.25 * points_per_cell;
        return q * q;
    }

    double entry(std::size_t a, std::size_t b) const
    {
        const std::size_t d = a >= b ? a - b : b - a;
        return kinetic[d] + (a == b ? diagonal[a] : 0.0);
    }

    linalg::Matrix dense() const
    {
        linalg::Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t a = 0; a < n; ++a) m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = entry(a, b);
        return m;
    }

    /// Same operator with the potential reflected through x -> -x on the grid.
    BoxOperator reflected() const
    {
        BoxOperator r = *this;
        for (std::size_t a = 0; a < n; ++a) r.diagonal[a] = diagonal[(n - a) % n];
        r.parity = false;
        return r;
    }

    bool comparable(const BoxOperator& o) const
    {
        return cells == o.cells && points_per_cell == o.points_per_cell && n == o.n && potential == o.potential &&
               kinetic == o.kinetic;
    }
};

namespace detail {

// Symmetric circulant Laplacian: T(d) = N^{-1} sum_m q_m^2 cos(2 pi m d / N),
// q_m = m / M_cell, m in (-N/2, N/2].
inline std::vector<double> circulant_laplacian(std::size_t n, int cells)
{
    std::vector<double> t(n, 0.0);
    const long half = static_cast<long>(n / 2);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t d = 0; d < n; ++d) {
        double s = 0.0;
        for (long m = -half + 1; m <= half; ++m) {
            const double q = static_cast<double>(m) / cells;
            // reduce m d mod N before the cosine to keep the argument small
            const auto md = static_cast<long>((static_cast<std::int64_t>(m < 0 ? m + static_cast<long>(n) : m) *
                                               static_cast<std::int64_t>(d)) %
                                              static_cast<std::int64_t>(n));
            s += q * q * std::cos(kTwoPi * static_cast<double>(md) * inv);
        }
        t[d] = s * inv;
    }
    return t;
}

}  // namespace detail

inline BoxOperator assemble_box_operator(const PeriodicPotential& V, const Perturbation& phi, double h, int cells,
                                         int points_per_cell, const BoxOptions& opt = {})
{
    if (!(h > 0.0)) throw ValidationError("h must be positive");
    if (cells < 1) throw ValidationError("box needs at least one cell");
    if (points_per_cell < 16) throw ValidationError("points per cell must be at least 16");
    BoxOperator op;
    op.h = h;
    op.cells = cells;
    op.points_per_cell = points_per_cell;
    op.n = static_cast<std::size_t>(cells) * static_cast<std::size_t>(points_per_cell);
    op.half_length = kPi * cells;
    op.dx = kTwoPi / points_per_cell;
    op.potential = V;
    op.perturbation = phi;
    op.ceiling = opt.ceiling;
    op.boundary_tol = opt.boundary_tol;
    if (!phi.is_zero()) {
        const auto& c = phi.certificate();
        op.boundary_tail = c.c0 * std::pow(1.0 + h * op.half_length, -c.delta);
        if (op.boundary_tail > opt.boundary_tol)
            throw ValidationError("box too small for this h (tail " + io::num(op.boundary_tail) + " > " +
                                  io::num(opt.boundary_tol) + ")");
    }
    op.x.resize(op.n);
    op.diagonal.resize(op.n);
    for (std::size_t a = 0; a < op.n; ++a) {
        const double xa = -op.half_length + static_cast<double>(a) * op.dx;
        op.x[a] = xa;
        op.diagonal[a] = V(xa) + (phi.is_zero() ? 0.0 : phi(h * xa));
    }
    op.kinetic = detail::circulant_laplacian(op.n, cells);
    op.parity = opt.use_parity && V.is_even() && (phi.is_zero() || phi.is_even()) && op.n % 2 == 0;
    return op;
}

using BoxSpectrum = linalg::Spectrum;

namespace detail {

inline void require_ceiling(const BoxOperator& op)
{
    if (op.n > op.ceiling)
        throw ValidationError("N=" + std::to_string(op.n) + " exceeds dense solver ceiling " +
                              std::to_string(op.ceiling) + ": increase ceiling or reduce grid");
}

// Unperturbed box: block diagonal over the M_cell Bloch sectors of the grid.
// Sector r holds the grid Fourier modes m = r + j M_cell; multiplication by
// e^{i s x} shifts m by s M_cell cyclically mod N.
inline std::vector<double> sector_spectrum(const BoxOperator& op)
{
    const int M = op.cells, P = op.points_per_cell;
    const long n = static_cast<long>(op.n), half = n / 2;
    std::vector<std::vector<double>> parts(static_cast<std::size_t>(M));
    for (int r = 0; r < M; ++r) {
        // representatives m in (-N/2, N/2] with m = r mod M
        std::vector<long> modes;
        for (long m = -half + 1; m <= half; ++m)
            if (((m % M) + M) % M == r) modes.push_back(m);
        Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(P, P);
        for (int i = 0; i < P; ++i) {
            const double q = static_cast<double>(modes[static_cast<std::size_t>(i)]) / M;
            A(i, i) = q * q;
        }
        for (const auto& [s, v] : op.potential.coeffs()) {
            // the grid starts at -L = -pi M, which multiplies vhat_s by (-1)^{sM}
            const double sign = ((static_cast<long>(s) * M) % 2 == 0) ? 1.0 : -1.0;
            for (int i = 0; i < P; ++i) {
                long target = modes[static_cast<std::size_t>(i)] + static_cast<long>(s) * M;
                target = ((target + half - 1) % n + n) % n - half + 1;
                const auto it = std::find(modes.begin(), modes.end(), target);
                A(it - modes.begin(), i) += sign * v;
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A, Eigen::EigenvaluesOnly);
        if (es.info() != Eigen::Success) throw NumericalGuardError("sector eigensolver did not converge");
        parts[static_cast<std::size_t>(r)].assign(es.eigenvalues().data(), es.eigenvalues().data() + P);
    }
    std::vector<double> all;
    all.reserve(op.n);
    for (const auto& p : parts) all.insert(all.end(), p.begin(), p.end());
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace detail

/// All N eigenvalues in ascending order; eigenvectors on request.
inline BoxSpectrum box_spectrum(const BoxOperator& op, bool vectors = false)
{
    detail::require_ceiling(op);
    BoxSpectrum s;
    if (!vectors && op.unperturbed()) {
        s.values = detail::sector_spectrum(op);
        return s;
    }
    const auto n = op.n;
    auto entry = [&](std::size_t i, std::size_t j) { return op.entry(i, j); };
    // grid reflection x -> -x is a -> N - a (mod N)
    if (op.parity) return linalg::mirror_split_spectrum(n, entry, [n](std::size_t a) { return (n - a) % n; }, vectors);
    return linalg::dense_spectrum(op.dense(), vectors);
}

/// Relative residuals ||A v - lambda v|| / ||v|| on `samples` evenly spaced pairs.
inline double max_residual(const BoxOperator& op, const BoxSpectrum& s, int samples = 10)
{
    if (!s.has_vectors()) throw ValidationError("residual check needs eigenvectors");
    const auto A = op.dense();
    double worst = 0.0;
    const std::size_t n = s.values.size();
    for (int t = 0; t < samples; ++t) {
        const auto c = static_cast<Eigen::Index>((n - 1) * static_cast<std::size_t>(t) / std::max(1, samples - 1));
        const linalg::Vector v = s.vectors.col(c);
        const double scale = std::max(1.0, std::abs(s.values[static_cast<std::size_t>(c)]));
        worst = std::max(worst, (A * v - s.values[static_cast<std::size_t>(c)] * v).norm() / (v.norm() * scale));
    }
    return worst;
}

/// sum_j f(mu_j) over an ascending spectrum, restricted to supp f.
template <EnergyFunction F>
double spectral_sum(const std::vector<double>& values, const F& f)
{
    const auto [lo, hi] = f.support();
    const auto first = std::lower_bound(values.begin(), values.end(), lo);
    const auto last = std::upper_bound(values.begin(), values.end(), hi);
    double s = 0.0;
    for (auto it = first; it != last; ++it) s += f(*it);
    return s;
}

/// sum f(spec opH) - sum f(spec op0) from precomputed spectra.
template <EnergyFunction F>
double trace_diff(const BoxOperator& opH, const BoxSpectrum& sH, const BoxOperator& op0, const BoxSpectrum& s0,
                  const F& f)
{
    if (!opH.comparable(op0) || sH.values.size() != opH.n || s0.values.size() != op0.n)
        throw ValidationError("incomparable discretizations");
    return spectral_sum(sH.values, f) - spectral_sum(s0.values, f);
}

template <EnergyFunction F>
double trace_diff(const BoxOperator& opH, const BoxOperator& op0, const F& f)
{
    if (!opH.comparable(op0)) throw ValidationError("incomparable discretizations");
    return trace_diff(opH, box_spectrum(opH), op0, box_spectrum(op0), f);
}

/// True when supp f reaches above the resolved part of the discrete spectrum.
template <EnergyFunction F>
bool cutoff_flag(const BoxOperator& op, const F& f)
{
    return f.support().second > op.resolved_energy();
}

struct SmoothedSsf {
    double value = 0.0;              ///< -trace_diff with f = theta_{eps,mu}
    double mean_spacing = 0.0;       ///< mean op0 eigenvalue spacing on [mu - eps, mu + eps]
    bool resolved = true;            ///< eps >= 4 * mean spacing
    std::string warning;
};

inline SmoothedSsf smoothed_ssf_derivative(const BoxOperator& opH, const BoxSpectrum& sH, const BoxOperator& op0,
                                           const BoxSpectrum& s0, double mu, double eps)
{
    if (!(eps > 0.0)) throw ValidationError("mollifier width must be positive");
    SmoothedSsf r;
    const auto theta = TestFunction::mollifier(mu, eps);
    r.value = -trace_diff(opH, sH, op0, s0, theta);
    const auto lo = std::lower_bound(s0.values.begin(), s0.values.end(), mu - eps);
    const auto hi = std::upper_bound(s0.values.begin(), s0.values.end(), mu + eps);
    const auto count = static_cast<double>(hi - lo);
    r.mean_spacing = count > 0 ? 2.0 * eps / count : std::numeric_limits<double>::infinity();
    r.resolved = eps >= 4.0 * r.mean_spacing;
    if (!r.resolved)
        r.warning = "under-resolved: eps=" + io::num(eps) + " below 4 x mean spacing " + io::num(r.mean_spacing);
    return r;
}

inline SmoothedSsf smoothed_ssf_derivative(const BoxOperator& opH, const BoxOperator& op0, double mu, double eps)
{
    if (!opH.comparable(op0)) throw ValidationError("incomparable discretizations");
    return smoothed_ssf_derivative(opH, box_spectrum(opH), op0, box_spectrum(op0), mu, eps);
}

/// Number of eigenvalues of opH in [alpha, beta], which must sit inside a gap of
/// sigma(P0) with margin above opH.boundary_tol.
inline int gap_eigenvalue_count(const BoxSpectrum& sH, const BoxOperator& opH, const BandStructure& bs, double alpha,
                                double beta)
{
    if (!(beta >= alpha)) throw ValidationError("empty interval");
    if (!(beta + opH.boundary_tol < bs.reliable_ceiling())) throw ValidationError("insufficient bands tabulated");
    const double margin = std::max(opH.boundary_tol, 0.0);
    for (int p = 0; p < bs.bands; ++p) {
        const auto [lo, hi] = band_extrema(bs, p);
        if (alpha - margin <= hi && beta + margin >= lo)
            throw ValidationError("interval touches essential spectrum (band " + std::to_string(p + 1) + ")");
    }
    const auto first = std::lower_bound(sH.values.begin(), sH.values.end(), alpha);
    const auto last = std::upper_bound(sH.values.begin(), sH.values.end(), beta);
    return static_cast<int>(last - first);
}

inline int gap_eigenvalue_count(const BoxOperator& opH, const BandStructure& bs, double alpha, double beta)
{
    return gap_eigenvalue_count(box_spectrum(opH), opH, bs, alpha, beta);
}

struct BoxTraceRow {
    double h = 0.0, L = 0.0;
    std::size_t n = 0;
    double trace_diff = 0.0, boundary_tol = 0.0;
    bool cutoff_flag = false;
};

/// CSV with columns h, L, N, trace_diff, boundary_tol, cutoff_flag.
inline void write_box_csv(std::ostream& os, const std::vector<BoxTraceRow>& rows)
{
    os << "h,L,N,trace_diff,boundary_tol,cutoff_flag\n";
    for (const auto& r : rows)
        os << io::num(r.h) << ',' << io::num(r.L) << ',' << r.n << ',' << io::num(r.trace_diff) << ','
           << io::num(r.boundary_tol) << ',' << (r.cutoff_flag ? 1 : 0) << '\n';
}

/// Raw little-endian doubles, prefixed by the count.
inline void save_spectrum(const std::string& path, const std::vector<double>& values)
{
    std::ofstream os(path, std::ios::binary);
    const std::uint64_t n = values.size();
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!os) throw ValidationError("cannot write spectrum cache " + path);
}

inline std::optional<std::vector<double>> load_spectrum(const std::string& path, std::size_t expected)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) return std::nullopt;
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!is || n != expected) return std::nullopt;
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) return std::nullopt;
    return v;
}

}  // namespace ssflab
