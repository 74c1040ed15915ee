#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "ssflab/bloch.hpp"

using namespace ssflab;

namespace {

const BandStructure& mathieu()
{
    static const auto bs = compute_bands(PeriodicPotential::cosine(1.0), 512, 32, 8);
    return bs;
}

}  // namespace

TEST(Bands, FreeModelIsFoldedParabola)
{
    const auto bs = compute_bands(PeriodicPotential(PeriodicPotential::Coeffs{}), 512, 32, 8);
    double worst = 0.0;
    for (std::size_t i = 0; i < bs.nk(); ++i) {
        std::vector<double> ref;
        for (int j = -10; j <= 10; ++j) ref.push_back((j + bs.k[i]) * (j + bs.k[i]));
        std::sort(ref.begin(), ref.end());
        for (int p = 0; p < bs.bands; ++p) worst = std::max(worst, std::abs(bs.lambda[p][i] - ref[p]));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(Bands, MathieuLowestBandMatchesShootingOracle)
{
    const auto V = [](double y) { return 2.0 * std::cos(y); };
    const double l0 = oracle::floquet_level(V, 0.0, 1);
    const double lh = oracle::floquet_level(V, 0.5, 1);
    EXPECT_NEAR(mathieu().solve(0.0).values(0), l0, 1e-8);
    EXPECT_NEAR(mathieu().solve(0.5).values(0), lh, 1e-8);
    EXPECT_NEAR(mathieu().lambda[0][0], lh, 1e-8);
    EXPECT_NEAR(mathieu().lambda[0][256], l0, 1e-8);
}

TEST(Bands, ThirdBandEdgesMatchShootingOracle)
{
    const auto V = [](double y) { return 2.0 * std::cos(y); };
    // third crossing of the periodic and antiperiodic levels
    EXPECT_NEAR(mathieu().solve(0.5).values(2), oracle::floquet_level(V, 0.5, 3), 1e-8);
    EXPECT_NEAR(mathieu().solve(0.0).values(2), oracle::floquet_level(V, 0.0, 3), 1e-8);
}

TEST(Bands, EvenInKAndTruncationConverged)
{
    const auto& bs = mathieu();
    EXPECT_LT(bs.symmetry_defect, 1e-12);
    EXPECT_LT(bs.cauchy_change, 1e-10);
    EXPECT_LE(bs.cauchy_monotone_excess, 1e-12);
}

TEST(Bands, SlopesMatchFiniteDifferences)
{
    const auto& bs = mathieu();
    for (double k : {0.1, 0.23, 0.41}) {
        const double e = 1e-5;
        const auto a = bs.solve(k + e), b = bs.solve(k - e), c = bs.solve(k);
        for (int p = 0; p < 4; ++p) {
            EXPECT_NEAR(c.slope(p), (a.values(p) - b.values(p)) / (2 * e), 1e-7);
            EXPECT_NEAR(c.curvature(p), (a.values(p) - 2 * c.values(p) + b.values(p)) / (e * e), 1e-3);
        }
    }
}

TEST(Bands, RejectsBadInput)
{
    const auto V = PeriodicPotential::cosine(1.0);
    EXPECT_THROW(compute_bands(V, 4, 32, 4), ValidationError);
    EXPECT_THROW(compute_bands(V, 64, 0, 4), ValidationError);
    EXPECT_THROW(compute_bands(V, 64, 4, 20), ValidationError);
}

TEST(Fermi, FreeModelRootsAndSlopes)
{
    const auto bs = compute_bands(PeriodicPotential(PeriodicPotential::Coeffs{}), 512, 32, 8);
    const auto roots = fermi_set(bs, 0.09);
    ASSERT_EQ(roots.size(), 2u);
    for (const auto& fp : roots) {
        EXPECT_EQ(fp.band, 0);
        EXPECT_NEAR(std::abs(fp.k), 0.3, 1e-10);
        EXPECT_NEAR(std::abs(fp.slope), 0.6, 1e-9);
    }
}

TEST(Fermi, WindowCertificates)
{
    const auto& bs = mathieu();
    EXPECT_TRUE(check_noncritical_simple(bs, 1.85, 2.05).pass());
    const auto [lo, hi] = band_extrema(bs, 2);
    EXPECT_FALSE(check_noncritical_simple(bs, lo - 0.01, lo + 0.01).pass());
    EXPECT_FALSE(check_noncritical_simple(bs, hi - 0.01, hi + 0.01).pass());
    EXPECT_NEAR(lo, 1.7072687, 1e-7);
    EXPECT_NEAR(hi, 2.3153615, 1e-7);
}

TEST(Fermi, GapEnergyHasNoRoots)
{
    const auto& bs = mathieu();
    EXPECT_TRUE(fermi_set(bs, -0.5).empty());
}
