#include <gtest/gtest.h>

#include <cmath>

#include "ssflab/dos.hpp"

using namespace ssflab;

namespace {

const BandStructure& free_bands()
{
    static const auto bs = compute_bands(PeriodicPotential(PeriodicPotential::Coeffs{}), 512, 32, 8);
    return bs;
}

}  // namespace

TEST(Dos, FreeIntegratedLaw)
{
    double worst = 0.0;
    for (int i = 0; i <= 390; ++i) {
        const double mu = 0.1 + 0.01 * i;
        worst = std::max(worst, std::abs(integrated_dos(free_bands(), mu) - std::sqrt(mu) / kPi));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(Dos, FreeDensityAndDerivative)
{
    EXPECT_NEAR(dos_density(free_bands(), 1.3), 1.0 / (kTwoPi * std::sqrt(1.3)), 1e-9);
    // rho(mu) = sqrt(mu)/pi, so rho'(1) = 1/(2 pi)
    const double e = 1e-4;
    EXPECT_NEAR((integrated_dos(free_bands(), 1.0 + e) - integrated_dos(free_bands(), 1.0 - e)) / (2 * e),
                1.0 / kTwoPi, 1e-6);
    EXPECT_NEAR(dos_density_derivative(free_bands(), 0.7), -0.25 / (kPi * std::pow(0.7, 1.5)), 1e-6);
}

TEST(Dos, ConstantInGapAndMonotone)
{
    const auto bs = compute_bands(PeriodicPotential::cosine(1.0), 512, 32, 8);
    const double a = integrated_dos(bs, -0.9), b = integrated_dos(bs, -0.3);
    EXPECT_NEAR(a, b, 1e-14);
    EXPECT_NEAR(a, 1.0 / kTwoPi, 1e-12);
    double prev = -1.0;
    for (int i = 0; i <= 200; ++i) {
        const double r = integrated_dos(bs, -1.2 + 0.02 * i);
        EXPECT_GE(r, prev - 1e-14);
        prev = r;
    }
    EXPECT_EQ(integrated_dos(bs, -2.0), 0.0);
}

TEST(Dos, TableFlagsCriticalEnergies)
{
    const auto bs = compute_bands(PeriodicPotential::cosine(1.0), 512, 32, 8);
    const auto t = dos_table(bs, {bs.lambda[0][256], 1.95, 2.0});
    EXPECT_TRUE(std::isnan(t.drho[0]));
    EXPECT_FALSE(std::isnan(t.drho[1]));
    EXPECT_EQ(t.fermi_points[1], 2);
    std::ostringstream os;
    write_dos_csv(os, t);
    EXPECT_EQ(os.str().substr(0, 27), "mu,rho,drho,n_fermi_points\n");
}

TEST(Dos, RefusesEnergiesAboveTabulatedBands)
{
    EXPECT_THROW(integrated_dos(free_bands(), 100.0), ValidationError);
}
