#include <gtest/gtest.h>

#include <cmath>

#include "ssflab/effham.hpp"

using namespace ssflab;

namespace {

const BandStructure& mathieu()
{
    static const auto bs = compute_bands(PeriodicPotential::cosine(1.0), 512, 32, 8);
    return bs;
}

}  // namespace

TEST(Quantize, SeparableIsHermitianWithShiftOnDiagonal)
{
    const TorusCoeffs u{{0, 0.5}, {1, {0.25, 0.1}}, {-1, {0.25, -0.1}}};
    const auto A = weyl_quantize_separable(u, [](double r) { return r * r; }, 0.1, 3);
    EXPECT_LT((A - A.adjoint()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(A(0, 0).real(), 0.5 + std::pow(kTwoPi * 3 * 0.1, 2), 1e-12);
    EXPECT_NEAR(std::abs(A(1, 0) - std::complex<double>(0.25, 0.1)), 0.0, 1e-15);
}

TEST(Quantize, RejectsNonRealSymbol)
{
    const TorusCoeffs u{{1, 0.3}};
    EXPECT_THROW(weyl_quantize_separable(u, nullptr, 0.1, 3), ValidationError);
}

TEST(Quantize, ProductRuleReducesToSeparable)
{
    const TorusCoeffs u{{0, 1.0}, {1, 0.5}, {-1, 0.5}};
    const auto P = weyl_quantize_product(u, [](double) { return 1.0; }, 0.2, 4);
    const auto S = weyl_quantize_separable(u, nullptr, 0.2, 4);
    EXPECT_LT((P - S).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Quantize, SampledSymbolMatchesProductRule)
{
    const auto w = [](double r) { return 1.0 / (1.0 + r * r); };
    const auto g = SymbolGrid::sample([&](double k, double r) { return std::cos(kTwoPi * k) * w(r); }, 0.0, 64, 20.0,
                                      40001);
    const TorusCoeffs u{{1, 0.5}, {-1, 0.5}};
    const auto A = weyl_quantize(g, 0.3, 5);
    const auto B = weyl_quantize_product(u, w, 0.3, 5);
    EXPECT_LT((A - B).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(BandFourier, FreeBandClosedForm)
{
    // lambda_1(k) = k^2 on [-1/2, 1/2): coefficients (-1)^nu / (2 pi^2 nu^2), mean 1/12
    const auto bs = compute_bands(PeriodicPotential(PeriodicPotential::Coeffs{}), 512, 32, 2);
    const auto c = band_fourier(bs, 0);
    EXPECT_NEAR(c[0], 1.0 / 12.0, 1e-5);
    for (int nu : {1, 2, 5}) EXPECT_NEAR(c[nu], (nu % 2 ? -1.0 : 1.0) / (2.0 * kPi * kPi * nu * nu), 1e-5);
}

TEST(Effective, FreeModelIsNotSimple)
{
    const auto bs = compute_bands(PeriodicPotential(PeriodicPotential::Coeffs{}), 512, 32, 4);
    EXPECT_THROW(effective_operator(bs, Perturbation::power_law(-0.2, 2.0, 2.0), 0.1), CertificationError);
}

TEST(Effective, ReferenceSpectrumInsideBand)
{
    EffectiveOptions o;
    o.J = 200;
    const auto eff = effective_operator(mathieu(), Perturbation::zero(), 0.05, o);
    const auto s = effective_spectrum(eff, true);
    const auto [lo, hi] = band_extrema(mathieu(), 0);
    EXPECT_GE(s.values.front(), lo - 1e-10);
    EXPECT_LE(s.values.back(), hi + 1e-10);
}

TEST(Effective, NullPerturbationGivesZero)
{
    const auto eff = effective_operator(mathieu(), Perturbation::zero(), 0.05);
    EXPECT_EQ(effective_trace_diff(eff, TestFunction(-1.0674627, 0.0013, 1.0), Perturbation::zero()), 0.0);
}

TEST(Effective, RejectsMultiBandWindow)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    EffectiveOptions o;
    o.max_modes = 201;
    const auto eff = effective_operator(mathieu(), phi, 0.05, o);
    EXPECT_THROW(effective_trace_diff(eff, TestFunction(1.95, 0.05, 1.0), phi), ValidationError);
}

TEST(Effective, ParitySplitMatchesDense)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    EffectiveOptions o;
    o.J = 100;
    const auto eff = effective_operator(mathieu(), phi, 0.05, o);
    ASSERT_TRUE(eff.even);
    const auto a = effective_spectrum(eff);
    const auto b = linalg::dense_spectrum(eff.dense_b(), false);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(Effective, ModeTruncationConvergesForGaussian)
{
    const auto phi = Perturbation::gaussian(-0.2, 2.0, 8.0);
    const TestFunction f(-1.0674627, 0.0013, 1.0);
    EffectiveOptions o;
    // the tail rule alone gives J = 124; resolving f at trace level needs more modes
    o.J = 512;
    const auto eff = effective_operator(mathieu(), phi, 1.0 / 32, o);
    EXPECT_TRUE(eff.tail_resolved);
    const double t1 = effective_trace_diff(eff, f, phi);
    o.J = 2 * eff.J;
    const double t2 = effective_trace_diff(effective_operator(mathieu(), phi, 1.0 / 32, o), f, phi);
    EXPECT_LT(std::abs(t2 - t1), 1e-8);
}

TEST(Effective, TailBoundAndCap)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    EffectiveOptions o;
    o.max_modes = 101;
    const auto eff = effective_operator(mathieu(), phi, 1.0 / 64, o);
    EXPECT_EQ(eff.J, 50);
    EXPECT_FALSE(eff.tail_resolved);
    EXPECT_NEAR(eff.phi_tail, phi.certificate().c0 * std::pow(1.0 + kTwoPi * 50 / 64.0, -2.0), 1e-15);
    o.J = 60;
    EXPECT_THROW(effective_operator(mathieu(), phi, 1.0 / 64, o), ValidationError);
}

TEST(Effective, RecordReportsRelativeError)
{
    EffectiveOperator eff;
    eff.h = 0.5;
    const auto r = effham_record(eff, -0.2, -0.11);
    EXPECT_NEAR(r.prediction, -0.22, 1e-15);
    EXPECT_NEAR(r.rel_err, 0.02 / 0.22, 1e-15);
}
