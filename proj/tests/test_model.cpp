#include <gtest/gtest.h>

#include <cmath>

#include "ssflab/config.hpp"
#include "ssflab/model.hpp"
#include "ssflab/quadrature.hpp"

using namespace ssflab;

TEST(Potential, CosineEvaluatesAndIsEven)
{
    const auto V = PeriodicPotential::cosine(1.0);
    for (double y : {0.0, 0.3, 1.7, 4.0}) EXPECT_NEAR(V(y), 2.0 * std::cos(y), 1e-14);
    EXPECT_TRUE(V.is_even());
    EXPECT_EQ(V.bandwidth(), 1);
    EXPECT_TRUE(PeriodicPotential(PeriodicPotential::Coeffs{}).is_zero());
}

TEST(Perturbation, PowerLawDerivativesMatchFiniteDifferences)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    for (double x : {-3.0, -0.4, 0.0, 0.7, 5.0}) {
        const double e = 1e-5;
        EXPECT_NEAR(phi.derivative(x, 1), (phi(x + e) - phi(x - e)) / (2 * e), 1e-9);
        EXPECT_NEAR(phi.derivative(x, 2), (phi(x + e) - 2 * phi(x) + phi(x - e)) / (e * e), 1e-5);
    }
    EXPECT_NEAR(phi(0.0), -0.2, 1e-15);
    EXPECT_EQ(phi.range().first, -0.2);
    EXPECT_EQ(phi.range().second, 0.0);
}

TEST(Perturbation, CertificatesHoldOnDecayGrid)
{
    for (const auto& phi : {Perturbation::power_law(-0.2, 2.0, 2.0), Perturbation::gaussian(0.3, 2.0, 3.0),
                            Perturbation::bump(-0.5, 4.0, 2.0)}) {
        const auto r = check_decay(phi, decay_grid());
        EXPECT_TRUE(r.pass);
        EXPECT_LE(r.worst_ratio, 1.0 + 1e-12);
    }
}

TEST(Perturbation, UnderstatedCertificateFails)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0).with_certificate({2.0, 1e-3, 1.0, 1.0});
    EXPECT_FALSE(check_decay(phi, decay_grid()).pass);
}

TEST(Perturbation, SlowDecayRejected)
{
    EXPECT_THROW(Perturbation::power_law(-0.2, 1.0, 1.0).certificate().validate(), ValidationError);
}

TEST(Perturbation, MissingDerivativeIsIncomplete)
{
    const auto phi = Perturbation::custom([](double x) { return std::exp(-x * x); }, {}, {}, {2.0, 1.0, 1.0, 1.0},
                                          {0.0, 1.0}, true);
    EXPECT_THROW(check_decay(phi, decay_grid()), ValidationError);
}

TEST(TestFunctions, BumpSupportDerivativesAndIntegral)
{
    const TestFunction f(1.0, 0.25, 2.0);
    EXPECT_EQ(f.support().first, 0.75);
    EXPECT_EQ(f.support().second, 1.25);
    EXPECT_EQ(f(0.75), 0.0);
    EXPECT_EQ(f(1.3), 0.0);
    const double e = 1e-6;
    EXPECT_NEAR(f.derivative(1.1, 1), (f(1.1 + e) - f(1.1 - e)) / (2 * e), 1e-6);
    EXPECT_NEAR(f.integral(), quad::integrate([&](double m) { return f(m); }, 0.75, 1.25, {1e-14, 1e-13, 400}).value,
                1e-12);
    const auto th = TestFunction::mollifier(0.3, 0.05);
    EXPECT_NEAR(th.integral(), 1.0, 1e-12);
    EXPECT_THROW(TestFunction(0.0, 0.0, 1.0), ValidationError);
}

TEST(TestFunctions, TabulatedMustVanishAtEnds)
{
    EXPECT_THROW(TabulatedTestFunction(0.0, 1.0, {1.0, 1.0, 1.0, 1.0}), ValidationError);
    std::vector<double> y(101);
    for (int i = 1; i < 100; ++i) y[i] = std::sin(kPi * i / 100.0) * std::sin(kPi * i / 100.0);
    const TabulatedTestFunction g(0.0, 1.0, y);
    EXPECT_NEAR(g(0.5), 1.0, 1e-12);
    EXPECT_NEAR(g(0.25), 0.5, 1e-5);
}

TEST(SymbolClass, BoundedSymbolPasses)
{
    const auto phi = Perturbation::power_law(-0.2, 2.0, 2.0);
    const auto g = SymbolGrid::sample(
        [&](double k, double r) { return std::cos(kTwoPi * k) + phi(r); }, 0.0, 64, 200.0, 401);
    EXPECT_TRUE(check_symbol_class(g).pass);
}

TEST(SymbolClass, GrowingSymbolFails)
{
    const auto g = SymbolGrid::sample([](double k, double r) { return std::cos(kTwoPi * k) * (1.0 + r * r); }, 0.0,
                                      64, 200.0, 401);
    EXPECT_FALSE(check_symbol_class(g).pass);
}

TEST(SymbolClass, SeamMismatchRejected)
{
    const auto g = SymbolGrid::sample([](double k, double) { return k; }, 0.0, 16, 10.0, 11);
    EXPECT_THROW(check_symbol_class(g), ValidationError);
}

TEST(Config, RoundTripAndHash)
{
    ExperimentConfig c;
    c.h_grid = {0.5, 0.25, 0.125, 0.0625};
    c.window_a = 1.9;
    const auto back = load_config(serialize_config(c));
    EXPECT_EQ(back, c);
    EXPECT_EQ(config_hash(back), config_hash(c));
    auto d = c;
    d.ssf_epsilon = 0.04;
    EXPECT_NE(config_hash(d), config_hash(c));
}

TEST(Config, RejectsBadInput)
{
    EXPECT_THROW(load_config("nonsense.key = 1\n"), ValidationError);
    EXPECT_THROW(load_config("window.a = 1\nwindow.a = 2\n"), ValidationError);
    EXPECT_THROW(load_config("window.a = 3\nwindow.b = 2\n"), ValidationError);
    EXPECT_THROW(load_config("perturbation.delta = 1\n"), ValidationError);
    EXPECT_THROW(load_config("box.points_per_cell = 8\n"), ValidationError);
    EXPECT_THROW(load_config("limabs.alpha = 0.4\n"), ValidationError);
    EXPECT_THROW(load_config("window.a = abc\n"), ValidationError);
    EXPECT_NO_THROW(load_config("# comment only\n\n"));
}

TEST(Config, DefaultsDescribeStandardExperiment)
{
    const ExperimentConfig c;
    EXPECT_NEAR(c.potential()(0.0), 2.0, 1e-15);
    EXPECT_NEAR(c.perturbation()(0.0), -0.2, 1e-15);
    EXPECT_NEAR(c.perturbation()(1.0), -0.1, 1e-15);
    EXPECT_EQ(c.cells_for(1.0 / 8), 80);
}
