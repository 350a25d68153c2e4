#include "stochvortex/fields.hpp"
#include "stochvortex/grid.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace stochvortex;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("stochvortex_test_" + name)).string();
}

FieldGrid random_field(const GridSpec& spec, std::uint64_t seed) {
    CounterStream s(seed, 0, StreamPurpose::auxiliary);
    FieldGrid g(spec, 3);
    for (auto& v : g.values()) v = s.normal();
    return g;
}

// phi_eps * curl(A exp(-|x-c|^2/2s^2) d) for the Gaussian profile: the same bump with
// s'^2 = s^2 + eps^2 and amplitude A (s/s')^3.
CurlBump mollified_bump(const CurlBump& b, double eps) {
    const double s2 = b.sigma * b.sigma + eps * eps;
    return {b.amplitude * std::pow(b.sigma * b.sigma / s2, 1.5), b.centre, std::sqrt(s2), b.direction};
}

SystemState births_at_zero(const BirthLaw& law, std::size_t n, std::uint64_t seed) {
    return initial_state(law, n, seed);
}

} // namespace

TEST(GridSpec, IndexingAndWeights) {
    const GridSpec g{Vec3(-1, 0, 2), Vec3(1, 3, 4), {5, 4, 3}};
    EXPECT_EQ(g.size(), 60u);
    for (std::size_t n = 0; n < g.size(); ++n) {
        const auto [i, j, k] = g.unravel(n);
        EXPECT_EQ(g.index(i, j, k), n);
    }
    EXPECT_TRUE(g.node(g.index(4, 3, 2)).isApprox(Vec3(1, 3, 4)));
    double w = 0;
    for (std::size_t n = 0; n < g.size(); ++n) w += g.weight(n);
    EXPECT_NEAR(w, g.volume(), 1e-12);
    EXPECT_THROW((FieldGrid(GridSpec{Vec3::Zero(), Vec3::Ones(), {1, 2, 2}})), ShapeError);
}

TEST(FieldGrid, InterpolationIsExactForAffineFields) {
    const GridSpec spec{Vec3(-1, -1, -1), Vec3(1, 2, 1), {5, 7, 4}};
    FieldGrid g(spec, 3);
    const Mat3 A = (Mat3() << 1, 2, 0, -1, 0.5, 3, 0, 0, -2).finished();
    const Vec3 b(0.3, -0.1, 2);
    for (std::size_t n = 0; n < g.nodes(); ++n) g.set_vec(n, A * spec.node(n) + b);
    CounterStream s(1, 0, StreamPurpose::auxiliary);
    for (int i = 0; i < 100; ++i) {
        const Vec3 x(-1 + 2 * s.uniform(), -1 + 3 * s.uniform(), -1 + 2 * s.uniform());
        EXPECT_TRUE(g.interpolate(x).isApprox(A * x + b, 1e-12));
    }
    EXPECT_EQ(g.interpolate(Vec3(5, 0, 0)), Vec3::Zero());
}

TEST(FieldGrid, TextAndBinaryRoundTrip) {
    const GridSpec spec{Vec3(-1, -2, -3), Vec3(1, 0.5, 3), {4, 3, 5}};
    const FieldGrid g = random_field(spec, 7);
    const std::string bin = temp_path("grid.bin"), txt = temp_path("grid.txt");
    write_field_grid_binary(g, bin);
    write_field_grid_text(g, txt);
    for (const auto& path : {bin, txt}) {
        const FieldGrid r = read_field_grid(path);
        EXPECT_TRUE(r.spec() == spec);
        EXPECT_EQ(r.components(), 3);
        EXPECT_EQ(r.values(), g.values());
    }
    std::ifstream in(txt);
    std::string first;
    std::getline(in, first);
    EXPECT_EQ(first.rfind("stochvortex-fieldgrid", 0), 0u);
    {
        std::ofstream bad(bin, std::ios::binary);
        bad << "garbage";
    }
    EXPECT_THROW(read_field_grid(bin), IoError);
    std::filesystem::remove(bin);
    std::filesystem::remove(txt);
    EXPECT_THROW(read_field_grid(bin), IoError);
}

TEST(FieldError, NormAxioms) {
    const GridSpec unit{Vec3::Zero(), Vec3::Ones(), {6, 6, 6}};
    const FieldGrid a = random_field(unit, 1), b = random_field(unit, 2), c = random_field(unit, 3);
    EXPECT_EQ(field_error(a, a, 2.0), 0.0);
    EXPECT_EQ(field_error(a, a, INFINITY), 0.0);
    for (double p : {1.0, 2.0, 3.5, static_cast<double>(INFINITY)}) {
        EXPECT_NEAR(field_error(a, b, p), field_error(b, a, p), 1e-14);
        EXPECT_LE(field_error(a, c, p), field_error(a, b, p) + field_error(b, c, p) + 1e-14);
    }
    FieldGrid constant(unit, 3);
    const Vec3 cv(1, -2, 2);
    for (std::size_t n = 0; n < constant.nodes(); ++n) constant.set_vec(n, cv);
    const FieldGrid zero(unit, 3);
    EXPECT_NEAR(field_error(constant, zero, 2.0), 3.0, 1e-14);
    EXPECT_NEAR(field_error(constant, zero, 1.0), 3.0, 1e-14);
    EXPECT_NEAR(field_error(constant, zero, INFINITY), 3.0, 1e-14);
    const GridSpec box{Vec3::Zero(), Vec3(2, 2, 2), {5, 5, 5}};
    FieldGrid c8(box, 3);
    for (std::size_t n = 0; n < c8.nodes(); ++n) c8.set_vec(n, cv);
    EXPECT_NEAR(field_error(c8, FieldGrid(box, 3), 2.0), 3.0 * std::sqrt(8.0), 1e-13);
    EXPECT_THROW(field_error(a, FieldGrid(box, 3), 2.0), ShapeError);
}

TEST(PairWithTest, TrivialCases) {
    SystemState sys;
    sys.t = 0.1;
    sys.particles.resize(5);
    for (auto& p : sys.particles) {
        p.tau = 0.5;
        p.h = Vec3(1, 2, 3);
    }
    EXPECT_EQ(pair_with_test(sys, 10.0, [](const Vec3&) { return Vec3(1, 1, 1); }), 0.0);
    sys.t = 1.0;
    EXPECT_EQ(pair_with_test(sys, 10.0, [](const Vec3&) { return Vec3::Zero(); }), 0.0);
}

TEST(PairWithTest, ConstantTestFieldRecoversInitialIntegral) {
    // int (w0)_2 dx vanishes for a curl bump; the estimate must sit within 4 standard errors.
    const CurlBump b{1.0, Vec3(0.2, 0, 0), 0.8, Vec3(0, 1, 1)};
    ForcingData d = ring_preset(b, {}, TimeProfile::constant(), 1.0, 0.1);
    d.g_space = SpatialField::zero();
    const BirthLaw law = build_birth_law(d);
    const std::size_t n = 100000;
    const SystemState sys = births_at_zero(law, n, 3);
    const double est = pair_with_test(sys, 10.0, [](const Vec3&) { return Vec3::UnitY(); });
    double sq = 0;
    for (const auto& p : sys.particles) sq += p.h(1) * p.h(1);
    const double se = std::sqrt((sq / n - est * est) / n);
    EXPECT_NEAR(est, 0.0, 4 * se);
    // mass bound |<mu, f>| <= ||f||_inf R hbar
    const double R = 0.5;
    const double bounded = pair_with_test(sys, R, [](const Vec3& x) { return Vec3(std::sin(x(0)), 1, 0); });
    EXPECT_LE(std::abs(bounded), std::sqrt(2.0) * R * law.hbar);
}

TEST(EmpiricalVorticity, SingleParticle) {
    const MollifiedKernel k(CutoffProfile::gaussian(), 0.4);
    SystemState sys;
    ParticleState p;
    p.x = Vec3(0.1, -0.2, 0.3);
    p.h = Vec3(0, 3, 0);
    sys.particles = {p};
    const GridSpec spec{Vec3::Constant(-1), Vec3::Constant(1), {9, 9, 9}};
    const FieldGrid w = empirical_vorticity(sys, k, 10.0, spec);
    for (std::size_t n = 0; n < w.nodes(); ++n) {
        const Vec3 expected = mollifier_eval(k.profile(), 0.4, spec.node(n) - p.x) * Vec3(0, 3, 0);
        EXPECT_NEAR((w.vec(n) - expected).norm(), 0.0, 1e-14 * (1 + expected.norm()));
    }
}

TEST(EmpiricalVorticity, ApproximatesMollifiedInitialDataAndFluctuationScales) {
    const CurlBump b{1.0, Vec3::Zero(), 1.0, Vec3::UnitZ()};
    ForcingData d = ring_preset(b, {}, TimeProfile::constant(), 1.0, 0.1);
    d.g_space = SpatialField::zero();
    const BirthLaw law = build_birth_law(d);
    const double eps = 0.5;
    const MollifiedKernel k(CutoffProfile::gaussian(), eps);
    const GridSpec spec{Vec3::Constant(-3), Vec3::Constant(3), {19, 19, 19}};
    FieldGrid exact(spec, 3);
    const CurlBump mb = mollified_bump(b, eps);
    for (std::size_t n = 0; n < exact.nodes(); ++n) exact.set_vec(n, mb.value(spec.node(n)));
    auto mse = [&](std::size_t n) {
        double acc = 0;
        for (std::uint64_t seed = 1; seed <= 6; ++seed) {
            const double e = field_error(empirical_vorticity(births_at_zero(law, n, 100 * n + seed), k, 10.0, spec),
                                         exact, 2.0);
            acc += e * e;
        }
        return acc / 6;
    };
    const double small = mse(2000), large = mse(4000);
    EXPECT_LT(std::sqrt(large), 0.1 * field_norm(exact, 2.0));
    EXPECT_NEAR(small / large, 2.0, 0.8);
}

TEST(EmpiricalVorticity, GridIntegralMatchesMollifiedPairing) {
    const CurlBump b{1.0, Vec3::Zero(), 1.0, Vec3(0, 1, 1)};
    ForcingData d = ring_preset(b, {}, TimeProfile::constant(), 1.0, 0.1);
    d.g_space = SpatialField::zero();
    const BirthLaw law = build_birth_law(d);
    const double eps = 0.4;
    const MollifiedKernel k(CutoffProfile::gaussian(), eps);
    const SystemState sys = births_at_zero(law, 3000, 5);
    const GridSpec spec{Vec3::Constant(-8), Vec3::Constant(8), {65, 65, 65}};
    const FieldGrid w = empirical_vorticity(sys, k, 10.0, spec);
    const GaussianTestField f{Vec3(0.5, 0, 0), 1.0, Vec3(1, 0, 0)};
    // phi_eps * f for a Gaussian f: scale s' = sqrt(s^2 + eps^2), amplitude (s/s')^3.
    const double s2 = 1.0 + eps * eps;
    auto mollified_f = [&](const Vec3& x) -> Vec3 {
        return std::pow(1.0 / s2, 1.5) * f.amplitude() * std::exp(-0.5 * (x - f.centre).squaredNorm() / s2) *
               f.direction;
    };
    const double grid = grid_pairing(w, [&](const Vec3& x) { return f(x); });
    const double direct = pair_with_test(sys, 10.0, mollified_f);
    EXPECT_NEAR(grid, direct, 1e-3 * std::abs(direct));
    // linearity in the weights
    SystemState doubled = sys;
    for (auto& p : doubled.particles) p.h *= 2.0;
    const FieldGrid w2 = empirical_vorticity(doubled, k, 10.0, spec);
    for (std::size_t n = 0; n < w.nodes(); n += 97) EXPECT_NEAR(w2.vec(n)(1), 2 * w.vec(n)(1), 1e-14);
}

TEST(EmpiricalVelocity, TrivialAndSingleParticle) {
    const MollifiedKernel k(CutoffProfile::gaussian(), 0.3);
    SystemState sys;
    sys.t = 0.0;
    sys.particles.resize(2);
    sys.particles[0].tau = 1.0;
    sys.particles[1].tau = 1.0;
    sys.particles[0].h = Vec3(1, 0, 0);
    EXPECT_EQ(empirical_velocity(sys, k, 5.0, Vec3(1, 2, 3)), Vec3::Zero());

    SystemState one;
    ParticleState p;
    p.x = Vec3(0.2, 0, 0);
    p.phi = 2 * Mat3::Identity();
    p.h = Vec3(0, 0, 1.5);
    one.particles = {p};
    const Vec3 x(0.5, 0.4, -0.1);
    const Vec3 expected = k.vector_kernel(x - p.x).cross(intensity(p, 5.0, 0.0));
    EXPECT_TRUE(empirical_velocity(one, k, 5.0, x).isApprox(expected, 1e-15));
    const auto many = empirical_velocity(one, k, 5.0, std::vector<Vec3>{x, x}, 2);
    EXPECT_EQ(many[0], many[1]);
    EXPECT_TRUE(many[0].isApprox(expected, 1e-15));
    const double M = kernel_bounds(k).M_eps;
    EXPECT_LE(expected.norm(), M * 5.0 * 1.5 * (1 + 1e-3));
}

TEST(TestDictionary, TwentyFieldsWithUnitLipschitzBound) {
    const auto dict = test_dictionary(Vec3(1, 0, 0), 1.5);
    ASSERT_EQ(dict.size(), 20u);
    CounterStream s(4, 0, StreamPurpose::auxiliary);
    for (const auto& f : dict) {
        EXPECT_NEAR(f.direction.norm(), 1.0, 1e-15);
        double sup = 0, lip = 0;
        for (int i = 0; i < 4000; ++i) {
            const Vec3 x = f.centre + 3 * f.scale * Vec3(2 * s.uniform() - 1, 2 * s.uniform() - 1, 2 * s.uniform() - 1);
            const Vec3 dx = 1e-6 * s.normal3();
            sup = std::max(sup, f(x).norm());
            lip = std::max(lip, (f(x + dx) - f(x)).norm() / dx.norm());
        }
        EXPECT_LE(sup + lip, 1.0 + 1e-4);
        EXPECT_GT(sup + lip, 0.9);
    }
}
