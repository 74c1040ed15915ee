#include <gtest/gtest.h>

#include <cmath>

#include "ssflab/coeffs.hpp"
#include "ssflab/config.hpp"

using namespace ssflab;

namespace {

const BandStructure& free_bands()
{
    static const auto bs = compute_bands(PeriodicPotential(PeriodicPotential::Coeffs{}), 512, 32, 8);
    return bs;
}

const BandStructure& mathieu()
{
    static const auto bs = compute_bands(PeriodicPotential::cosine(1.0), 512, 32, 8);
    return bs;
}

// Composite Simpson on [a, b] with n (even) intervals.
template <class F>
double simpson(F&& g, double a, double b, int n)
{
    const double h = (b - a) / n;
    double s = g(a) + g(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * g(a + i * h);
    return s * h / 3.0;
}

// Free-particle references for phi = c/(1+x^2), written in the unfolded
// momentum variable xi in R: the substitution x = tan(t) turns the x-integral
// into a smooth integral over [0, pi/2] whose endpoint value is the
// first-order limit, since phi(x)(1+x^2) = c exactly.
double free_a0_oracle(double c, const TestFunction& f)
{
    const double xi_max = std::sqrt(f.support().second - std::min(c, 0.0)) + 0.01;
    auto inner = [&](double phi) {
        return 2.0 * simpson([&](double xi) { return f(xi * xi + phi) - f(xi * xi); }, 0.0, xi_max, 4000);
    };
    const double K = 2.0 * simpson([&](double xi) { return f.derivative(xi * xi, 1); }, 0.0, xi_max, 4000);
    auto g = [&](double t) {
        if (t >= 0.5 * kPi - 1e-15) return c * K;
        const double x = std::tan(t);
        return inner(c / (1.0 + x * x)) * (1.0 + x * x);
    };
    return 2.0 * simpson(g, 0.0, 0.5 * kPi, 2000) / kTwoPi;
}

double free_gamma0_oracle(double c, double mu)
{
    auto g = [&](double t) {
        if (t >= 0.5 * kPi - 1e-15) return c / (2.0 * std::pow(mu, 1.5));
        const double x = std::tan(t), phi = c / (1.0 + x * x);
        return (1.0 / std::sqrt(mu - phi) - 1.0 / std::sqrt(mu)) * (1.0 + x * x);
    };
    return -2.0 * simpson(g, 0.0, 0.5 * kPi, 4000) / kTwoPi;
}

}  // namespace

TEST(WeakCoefficient, VanishesWithoutPerturbation)
{
    const TestFunction f(-1.0674627, 0.0013, 1.0);
    const auto r = a0_weak_coefficient(mathieu(), Perturbation::zero(), f);
    EXPECT_EQ(r.value, 0.0);
}

TEST(WeakCoefficient, FreeModelMatchesUnfoldedOracle)
{
    const TestFunction f(1.0, 0.2, 1.0);
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    const double ref = free_a0_oracle(-0.2, f);
    const auto r = a0_weak_coefficient(free_bands(), phi, f);
    EXPECT_NEAR(r.value, ref, 1e-8 + r.total_error());
    EXPECT_LT(r.total_error(), 1e-7);
}

TEST(WeakCoefficient, LinearInTestFunction)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    const auto a = a0_weak_coefficient(free_bands(), phi, TestFunction(1.0, 0.2, 1.0));
    const auto b = a0_weak_coefficient(free_bands(), phi, TestFunction(1.0, 0.2, -3.0));
    EXPECT_NEAR(b.value, -3.0 * a.value, 1e-9);
}

TEST(WeakCoefficient, BandDecompositionSums)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    const TestFunction f(1.0, 0.2, 1.0);
    const auto all = a0_weak_coefficient(free_bands(), phi, f);
    double sum = 0.0;
    for (int p = 0; p < 4; ++p) {
        CoeffOptions o;
        o.only_band = p;
        sum += a0_weak_coefficient(free_bands(), phi, f, o).value;
    }
    EXPECT_NEAR(sum, all.value, 1e-9);
}

TEST(WeakCoefficient, WindowTruncationConverges)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    const TestFunction f(-1.0674627, 0.0013, 1.0);
    const auto full = a0_weak_coefficient(mathieu(), phi, f);
    double prev = std::numeric_limits<double>::infinity();
    for (double X : {10.0, 40.0, 160.0}) {
        CoeffOptions o;
        o.x_max = X;
        const auto r = a0_weak_coefficient(mathieu(), phi, f, o);
        EXPECT_EQ(r.tail_bound, 0.0);
        const double d = std::abs(r.value - full.value);
        EXPECT_LT(d, prev);
        prev = d;
    }
    EXPECT_LT(prev, 1e-3 * std::abs(full.value));
}

TEST(WeakCoefficient, RefusesUntabulatedEnergies)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    EXPECT_THROW(a0_weak_coefficient(mathieu(), phi, TestFunction(200.0, 0.1, 1.0)), ValidationError);
}

TEST(PointwiseCoefficient, FreeModelMatchesOracle)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    for (double mu : {0.7, 1.6}) {
        const auto r = gamma0_pointwise(free_bands(), phi, mu);
        EXPECT_NEAR(r.value, free_gamma0_oracle(-0.2, mu), 1e-8 + r.total_error()) << "mu=" << mu;
    }
}

TEST(PointwiseCoefficient, RefusesCriticalEnergies)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    const auto [lo, hi] = band_extrema(mathieu(), 0);
    EXPECT_THROW(gamma0_pointwise(mathieu(), phi, hi), CertificationError);
    EXPECT_THROW(gamma0_pointwise(free_bands(), phi, 1.0), CertificationError);
}

TEST(PointwiseCoefficient, PairingIsDualToWeakCoefficient)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    const TestFunction f(1.3, 0.05, 1.0);
    CoeffOptions o;
    o.threads = 2;
    const auto a = a0_weak_coefficient(free_bands(), phi, f, o);
    const auto g = gamma0_pairing(free_bands(), phi, f, o);
    EXPECT_NEAR(a.value + g.value, 0.0, 1e-7);
}

TEST(PointwiseCoefficient, PairingIndependentOfThreads)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    const TestFunction f(1.3, 0.02, 1.0);
    CoeffOptions one, four;
    four.threads = 4;
    EXPECT_EQ(gamma0_pairing(free_bands(), phi, f, one).value, gamma0_pairing(free_bands(), phi, f, four).value);
}

// When mu - phi(x) leaves a band through its top edge, the panel that ends at
// the crossing sees that band only at a single point and must contribute nothing.
TEST(PointwiseCoefficient, EdgeCrossingPanelsIgnoreTruncation)
{
    const ExperimentConfig cfg;
    const auto phi = cfg.perturbation();
    const auto [fa, fb] = cfg.test_function().support();
    const double mu = 0.5 * (fa + fb);
    const auto coarse = compute_bands(cfg.potential(), 512, 32, 8);
    const auto fine = compute_bands(cfg.potential(), 512, 40, 8);
    const double g = gamma0_pointwise(coarse, phi, mu).value;
    EXPECT_NEAR(gamma0_pointwise(fine, phi, mu).value, g, 1e-9 * std::abs(g));
}
