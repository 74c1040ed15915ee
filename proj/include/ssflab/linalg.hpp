#pragma once

// Dense symmetric eigensolvers and a Lanczos estimate of the largest
// eigenvalue of a Hermitian operator given only through its action.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ssflab/errors.hpp"

namespace ssflab::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CVector = Eigen::VectorXcd;

/// Ascending eigenvalues of a real symmetric matrix (lower triangle referenced).
inline Vector eigenvalues(const Matrix& a)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalGuardError("symmetric eigensolver did not converge");
    return es.eigenvalues();
}

struct Eigensystem {
    Vector values;
    Matrix vectors;  // columns, orthonormal
};

/// Full eigendecomposition of a real symmetric matrix.
inline Eigensystem eigensystem(const Matrix& a)
{
    Eigensystem out;
    if (a.rows() == 0) return out;
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success) throw NumericalGuardError("symmetric eigensolver did not converge");
    out.values = es.eigenvalues();
    out.vectors = es.eigenvectors();
    return out;
}

/// Ascending spectrum with optional eigenvector columns.
struct Spectrum {
    std::vector<double> values;
    Matrix vectors;
    bool has_vectors() const { return vectors.cols() > 0; }
};

/// Orthonormal even and odd bases under an index involution i -> mirror(i),
/// each vector stored as (index, coefficient) pairs.
struct MirrorBasis {
    std::vector<std::vector<std::pair<std::size_t, double>>> even, odd;
};

template <class Mirror>
MirrorBasis mirror_basis(std::size_t n, Mirror&& mirror)
{
    MirrorBasis b;
    const double s = 1.0 / std::sqrt(2.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = mirror(i);
        if (j == i)
            b.even.push_back({{i, 1.0}});
        else if (i < j) {
            b.even.push_back({{i, s}, {j, s}});
            b.odd.push_back({{i, s}, {j, -s}});
        }
    }
    return b;
}

/// Spectrum of a real symmetric n x n matrix given by `entry(i, j)` that
/// commutes with the index involution `mirror`, from its two parity blocks.
template <class Entry, class Mirror>
Spectrum mirror_split_spectrum(std::size_t n, Entry&& entry, Mirror&& mirror, bool vectors)
{
    const auto basis = mirror_basis(n, mirror);
    auto block = [&](const std::vector<std::vector<std::pair<std::size_t, double>>>& v) {
        const auto m = static_cast<Eigen::Index>(v.size());
        Matrix B(m, m);
        for (Eigen::Index j = 0; j < m; ++j)
            for (Eigen::Index i = j; i < m; ++i) {
                double acc = 0.0;
                for (const auto& [a, ca] : v[static_cast<std::size_t>(i)])
                    for (const auto& [b, cb] : v[static_cast<std::size_t>(j)]) acc += ca * cb * entry(a, b);
                B(i, j) = B(j, i) = acc;
            }
        return B;
    };
    auto embed = [&](const std::vector<std::vector<std::pair<std::size_t, double>>>& v, const Matrix& c) {
        Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), c.cols());
        for (std::size_t i = 0; i < v.size(); ++i)
            for (const auto& [a, w] : v[i]) out.row(static_cast<Eigen::Index>(a)) += w * c.row(static_cast<Eigen::Index>(i));
        return out;
    };
    Vector ee, eo;
    Matrix ve, vo;
    if (vectors) {
        auto se = eigensystem(block(basis.even));
        auto so = eigensystem(block(basis.odd));
        ee = se.values;
        eo = so.values;
        ve = embed(basis.even, se.vectors);
        vo = embed(basis.odd, so.vectors);
    } else {
        ee = basis.even.empty() ? Vector() : eigenvalues(block(basis.even));
        eo = basis.odd.empty() ? Vector() : eigenvalues(block(basis.odd));
    }
    // merge; ties keep even before odd
    std::vector<std::pair<double, long>> tagged;
    tagged.reserve(n);
    for (Eigen::Index i = 0; i < ee.size(); ++i) tagged.emplace_back(ee(i), static_cast<long>(i));
    for (Eigen::Index i = 0; i < eo.size(); ++i) tagged.emplace_back(eo(i), -1 - static_cast<long>(i));
    std::stable_sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Spectrum s;
    s.values.reserve(n);
    if (vectors) s.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t c = 0; c < tagged.size(); ++c) {
        s.values.push_back(tagged[c].first);
        if (vectors) {
            const long t = tagged[c].second;
            s.vectors.col(static_cast<Eigen::Index>(c)) = t >= 0 ? ve.col(t) : vo.col(-1 - t);
        }
    }
    return s;
}

/// Spectrum of a dense real symmetric matrix.
inline Spectrum dense_spectrum(const Matrix& a, bool vectors)
{
    Spectrum s;
    if (vectors) {
        auto es = eigensystem(a);
        s.values.assign(es.values.data(), es.values.data() + es.values.size());
        s.vectors = std::move(es.vectors);
    } else {
        const auto v = eigenvalues(a);
        s.values.assign(v.data(), v.data() + v.size());
    }
    return s;
}

/// Largest eigenvalue of a Hermitian positive semidefinite operator by
/// Lanczos with full reorthogonalization. `apply(x, y)` sets y = K x.
struct LanczosResult {
    double value = 0.0;
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
};

inline LanczosResult lanczos_max(std::size_t n, const std::function<void(const CVector&, CVector&)>& apply,
                                 double tol = 1e-10, int max_iter = 120)
{
    LanczosResult res;
    if (n == 0) return res;
    const int m_max = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(max_iter)));
    std::mt19937_64 rng(0x5eed);
    std::normal_distribution<double> gauss;
    CVector q(static_cast<Eigen::Index>(n));
    for (auto& v : q) v = {gauss(rng), gauss(rng)};
    q.normalize();

    std::vector<CVector> basis;
    std::vector<double> alpha, beta;
    CVector w(static_cast<Eigen::Index>(n));
    double previous = 0.0;
    for (int j = 0; j < m_max; ++j) {
        basis.push_back(q);
        apply(q, w);
        const double a = q.dot(w).real();
        alpha.push_back(a);
        // full reorthogonalization, twice
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) w -= b * b.dot(w);
        const double bnorm = w.norm();

        Eigen::SelfAdjointEigenSolver<Matrix> tri;
        Matrix t = Matrix::Zero(j + 1, j + 1);
        for (int i = 0; i <= j; ++i) {
            t(i, i) = alpha[static_cast<std::size_t>(i)];
            if (i < j) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
        }
        tri.compute(t);
        const double theta = tri.eigenvalues()(j);
        const double resid = std::abs(bnorm * tri.eigenvectors()(j, j));
        res.value = theta;
        res.residual = resid;
        res.iterations = j + 1;
        const double scale = std::max(std::abs(theta), 1e-300);
        if ((j > 0 && std::abs(theta - previous) <= tol * scale && resid <= std::sqrt(tol) * scale) ||
            bnorm <= 1e-14 * scale || j + 1 == static_cast<int>(n)) {
            res.converged = true;
            return res;
        }
        previous = theta;
        beta.push_back(bnorm);
        q = w / bnorm;
    }
    return res;
}

}  // namespace ssflab::linalg
