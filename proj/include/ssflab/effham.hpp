#pragma once

// Discrete h-Weyl quantization on the dual torus T* = R/Z with modes
// e^{2 pi i nu k}, so that -h D_k acts as multiplication by r = -2 pi nu h,
// and the leading-order effective Hamiltonian B = lambda_1(k) + phi(-h D_k).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ssflab/bloch.hpp"
#include "ssflab/errors.hpp"
#include "ssflab/io.hpp"
#include "ssflab/linalg.hpp"
#include "ssflab/model.hpp"

namespace ssflab {

/// k-Fourier coefficients of a torus symbol, keyed by mode.
using TorusCoeffs = std::map<int, std::complex<double>>;

namespace detail {

inline std::complex<double> coeff_at(const TorusCoeffs& u, int m)
{
    const auto it = u.find(m);
    return it == u.end() ? std::complex<double>{} : it->second;
}

inline void require_hermitian(const Eigen::MatrixXcd& m, double tol = 1e-12)
{
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.adjoint()).cwiseAbs().maxCoeff() > tol * scale)
        throw NumericalGuardError("quantized real symbol is not Hermitian");
}

}  // namespace detail

/// Op(u(k) + w(r)) on modes nu in [-J, J]: uhat_{nu - nu'} + w(-2 pi nu h) [nu = nu'].
inline Eigen::MatrixXcd weyl_quantize_separable(const TorusCoeffs& u, const std::function<double(double)>& w, double h,
                                                int J)
{
    for (const auto& [m, c] : u)
        if (std::abs(c - std::conj(detail::coeff_at(u, -m))) > 1e-12 * std::max(1.0, std::abs(c)))
            throw ValidationError("symbol coefficients are not those of a real function");
    const int n = 2 * J + 1;
    Eigen::MatrixXcd A(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) A(i, j) = detail::coeff_at(u, i - j);
    if (w)
        for (int i = 0; i < n; ++i) A(i, i) += w(-kTwoPi * (i - J) * h);
    detail::require_hermitian(A);
    return A;
}

/// Weyl rule for a product symbol u(k) w(r): uhat_{nu - nu'} w(-pi h (nu + nu')).
inline Eigen::MatrixXcd weyl_quantize_product(const TorusCoeffs& u, const std::function<double(double)>& w, double h,
                                              int J)
{
    const int n = 2 * J + 1;
    Eigen::MatrixXcd A(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) A(i, j) = detail::coeff_at(u, i - j) * w(-kPi * h * ((i - J) + (j - J)));
    detail::require_hermitian(A);
    return A;
}

/// Weyl rule for a sampled symbol g(k, r): ghat_{nu - nu'}(-pi h (nu + nu')).
inline Eigen::MatrixXcd weyl_quantize(const SymbolGrid& g, double h, int J)
{
    const int n = 2 * J + 1;
    Eigen::MatrixXcd A(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) A(i, j) = g.fourier(i - j, -kPi * h * ((i - J) + (j - J)));
    detail::require_hermitian(A, 1e-10);
    return A;
}

/// Fourier coefficients lambdahat_nu, nu in [0, N_k/2), of band p from its table.
/// Bands of a real potential are even in k, so the coefficients are real and
/// symmetric; the imaginary defect is returned through `imag_defect`.
inline std::vector<double> band_fourier(const BandStructure& bs, int p, double* imag_defect = nullptr)
{
    const std::size_t nk = bs.nk();
    std::vector<double> c(nk / 2, 0.0);
    double defect = 0.0;
    for (std::size_t nu = 0; nu < nk / 2; ++nu) {
        std::complex<double> s{};
        for (std::size_t i = 0; i < nk; ++i)
            s += bs.lambda[static_cast<std::size_t>(p)][i] *
                 std::polar(1.0, -kTwoPi * static_cast<double>(nu) * bs.k[i]);
        s /= static_cast<double>(nk);
        c[nu] = s.real();
        defect = std::max(defect, std::abs(s.imag()));
    }
    if (imag_defect) *imag_defect = defect;
    return c;
}

struct EffectiveOperator {
    double h = 0.0;
    int J = 0;
    std::vector<double> lambda_hat;        ///< lambdahat_nu for nu >= 0, zero beyond the table
    std::vector<double> shift;             ///< phi(-2 pi nu h), nu = -J..J
    std::optional<linalg::Matrix> correction;  ///< h K_1 quantized, if supplied
    double band_min = 0.0, band_max = 0.0;
    double phi_tail = 0.0;                 ///< certificate bound on |phi(2 pi J h)|
    bool tail_resolved = false;            ///< phi_tail < 1e-8
    bool even = false;                     ///< B commutes with nu -> -nu

    std::size_t size() const { return static_cast<std::size_t>(2 * J + 1); }

    double lambda_entry(std::size_t i, std::size_t j) const
    {
        const std::size_t d = i >= j ? i - j : j - i;
        return d < lambda_hat.size() ? lambda_hat[d] : 0.0;
    }

    double entry(std::size_t i, std::size_t j) const
    {
        double v = lambda_entry(i, j) + (i == j ? shift[i] : 0.0);
        if (correction) v += (*correction)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        return v;
    }

    linalg::Matrix dense_b() const
    {
        const auto n = static_cast<Eigen::Index>(size());
        linalg::Matrix m(n, n);
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < n; ++i)
                m(i, j) = entry(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        return m;
    }

    linalg::Matrix dense_lambda() const
    {
        const auto n = static_cast<Eigen::Index>(size());
        linalg::Matrix m(n, n);
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < n; ++i)
                m(i, j) = lambda_entry(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        return m;
    }
};

/// Smallest J with C0 (1 + 2 pi J h)^{-delta} < tol.
inline int modes_for_tail(const DecayCertificate& c, double h, double tol = 1e-8)
{
    const double r = std::pow(c.c0 / tol, 1.0 / c.delta) - 1.0;
    return static_cast<int>(std::ceil(std::max(r, 0.0) / (kTwoPi * h))) + 1;
}

struct EffectiveOptions {
    int J = 0;                  ///< 0: smallest J meeting the tail target, capped by max_modes
    int max_modes = 4096;       ///< cap on 2J + 1
    double tail_tol = 1e-8;
    double decay_tol = 1e-12;   ///< required decay of lambdahat at the table's Nyquist end
    const SymbolGrid* correction = nullptr;  ///< K_1 symbol; enters as h K_1
};

/// Leading-order effective operator of band 1 (K_1 = 0 unless a correction is given).
inline EffectiveOperator effective_operator(const BandStructure& bs, const Perturbation& phi, double h,
                                            const EffectiveOptions& opt = {})
{
    if (!(h > 0.0)) throw ValidationError("h must be positive");
    if (bs.bands < 1) throw ValidationError("band table is empty");
    for (std::size_t i = 0; i < bs.nk(); ++i)
        if (bs.degenerate[0][i] || !(bs.gap[0][i] > bs.gap_tol))
            throw CertificationError("band 1 is not simple over E* (gap " + io::num(bs.gap[0][i]) +
                                     " at k=" + io::num(bs.k[i]) + ")");
    EffectiveOperator eff;
    eff.h = h;
    const int cap = std::max(0, (opt.max_modes - 1) / 2);
    const int need = phi.is_zero() ? 1 : modes_for_tail(phi.certificate(), h, opt.tail_tol);
    eff.J = opt.J > 0 ? opt.J : std::min(need, cap);
    if (2 * eff.J + 1 > opt.max_modes) throw ValidationError("J exceeds the mode cap");
    eff.phi_tail = phi.is_zero() ? 0.0 : phi.certificate().c0 * std::pow(1.0 + kTwoPi * eff.J * h, -phi.certificate().delta);
    eff.tail_resolved = eff.phi_tail < opt.tail_tol;

    double defect = 0.0;
    eff.lambda_hat = band_fourier(bs, 0, &defect);
    const double scale = std::max(1.0, std::abs(eff.lambda_hat[0]));
    if (defect > 1e-12 * scale) throw NumericalGuardError("band 1 is not even in k; Fourier coefficients complex");
    const std::size_t half = eff.lambda_hat.size();
    double tail = 0.0;
    for (std::size_t nu = half / 2; nu < half; ++nu) tail = std::max(tail, std::abs(eff.lambda_hat[nu]));
    if (tail > opt.decay_tol * scale)
        throw NumericalGuardError("band 1 Fourier coefficients do not decay on the k-grid; refine band.k_points");

    eff.shift.resize(eff.size());
    for (int i = 0; i < 2 * eff.J + 1; ++i)
        eff.shift[static_cast<std::size_t>(i)] = phi.is_zero() ? 0.0 : phi(-kTwoPi * (i - eff.J) * h);
    if (opt.correction) {
        const auto c = weyl_quantize(*opt.correction, h, eff.J);
        if (c.imag().cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, c.cwiseAbs().maxCoeff()))
            throw ValidationError("complex correction symbols are not supported");
        eff.correction = h * c.real();
    }
    eff.band_min = bs.band_min(0);
    eff.band_max = bs.band_max(0);
    eff.even = !eff.correction && (phi.is_zero() || phi.is_even());
    return eff;
}

/// Spectrum of B (reference = false) or of Lambda (reference = true).
inline linalg::Spectrum effective_spectrum(const EffectiveOperator& eff, bool reference = false, bool vectors = false)
{
    const std::size_t n = eff.size();
    auto mirror = [n](std::size_t i) { return n - 1 - i; };
    if (reference)
        return linalg::mirror_split_spectrum(
            n, [&](std::size_t i, std::size_t j) { return eff.lambda_entry(i, j); }, mirror, vectors);
    if (eff.even)
        return linalg::mirror_split_spectrum(n, [&](std::size_t i, std::size_t j) { return eff.entry(i, j); }, mirror,
                                             vectors);
    return linalg::dense_spectrum(eff.dense_b(), vectors);
}

/// sum f(spec B) - sum f(spec Lambda). supp f must lie in the band-1 range
/// widened by the range of phi.
template <EnergyFunction F>
double effective_trace_diff(const EffectiveOperator& eff, const F& f, const Perturbation& phi)
{
    const auto [plo, phi_hi] = phi.is_zero() ? std::pair{0.0, 0.0} : phi.range();
    const auto [a, b] = f.support();
    const double lo = eff.band_min + std::min(plo, 0.0), hi = eff.band_max + std::max(phi_hi, 0.0);
    if (a < lo || b > hi) throw ValidationError("multi-band window not representable at leading order");
    if (phi.is_zero() && !eff.correction) return 0.0;
    const auto sb = effective_spectrum(eff, false);
    const auto sl = effective_spectrum(eff, true);
    auto sum = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (auto it = std::lower_bound(v.begin(), v.end(), a); it != v.end() && *it <= b; ++it) s += f(*it);
        return s;
    };
    return sum(sb.values) - sum(sl.values);
}

struct EffhamRecord {
    double h = 0.0;
    int J = 0;
    double trace_diff = 0.0;
    double prediction = 0.0;    ///< h^{-1} a0^{(1)}(f)
    double rel_err = 0.0;
    double phi_tail = 0.0;
    bool tail_resolved = false;
    double j_change = std::numeric_limits<double>::quiet_NaN();  ///< |trace diff(2J) - trace diff(J)| if measured

    std::string to_json() const
    {
        return "{\"h\": " + io::num(h) + ", \"J\": " + std::to_string(J) + ", \"trace_diff\": " + io::num(trace_diff) +
               ", \"prediction\": " + io::num(prediction) + ", \"rel_err\": " + io::num(rel_err) +
               ", \"phi_tail\": " + io::num(phi_tail) + ", \"tail_resolved\": " + (tail_resolved ? "true" : "false") +
               ", \"j_change\": " + (std::isfinite(j_change) ? io::num(j_change) : std::string("null")) + "}";
    }
};

inline EffhamRecord effham_record(const EffectiveOperator& eff, double trace_diff, double a0_band1)
{
    EffhamRecord r;
    r.h = eff.h;
    r.J = eff.J;
    r.trace_diff = trace_diff;
    r.prediction = a0_band1 / eff.h;
    r.rel_err = r.prediction != 0.0 ? std::abs(trace_diff - r.prediction) / std::abs(r.prediction) : 0.0;
    r.phi_tail = eff.phi_tail;
    r.tail_resolved = eff.tail_resolved;
    return r;
}

}  // namespace ssflab
