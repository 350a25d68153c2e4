#include "stochvortex/oracle.hpp"
#include "stochvortex/rng.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace stochvortex;

namespace {

SpectralField from_function(const SpectralGrid& g, const FftwTransform& tr, const std::function<Vec3(const Vec3&)>& f) {
    NodeField n;
    for (auto& c : n) c.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec3 v = f(g.node(i));
        for (int a = 0; a < 3; ++a) n[a][i] = v(a);
    }
    return from_nodes(n, g, tr);
}

/// Index of the integer wavenumber m on the FFT lattice.
std::size_t mode_index(const SpectralGrid& g, int m0, int m1, int m2) {
    auto w = [](int m, int N) { return (m % N + N) % N; };
    return (static_cast<std::size_t>(w(m0, g.N[0])) * g.N[1] + w(m1, g.N[1])) * g.N[2] + w(m2, g.N[2]);
}

/// Real single-mode field a cos(k.(x + L)), a perpendicular to k.
SpectralField single_mode(const SpectralGrid& g, int m0, int m1, int m2, const Vec3& a) {
    SpectralField f(g);
    f.set_mode(mode_index(g, m0, m1, m2), 0.5 * a.cast<cplx>());
    f.set_mode(mode_index(g, -m0, -m1, -m2), 0.5 * a.cast<cplx>());
    return f;
}

SpectralField random_field(const SpectralGrid& g, const FftwTransform& tr, std::uint64_t seed) {
    CounterStream s(seed, 0, StreamPurpose::auxiliary);
    return from_function(g, tr, [&](const Vec3&) { return s.normal3(); });
}

ForcingData ring_data(double amp, double g_amp, double T) {
    return ring_preset(CurlBump{amp, Vec3::Zero(), 1.0, Vec3::UnitZ()},
                       CurlBump{g_amp, Vec3(0.3, 0, 0), 1.0, Vec3::UnitZ()}, TimeProfile::constant(), T, 0.1);
}

OracleConfig small_config(double T, int N = 24) {
    OracleConfig cfg;
    cfg.modes = {N, N, N};
    cfg.T = T;
    cfg.dt = 0.05;
    cfg.nu = 0.1;
    return cfg;
}

/// Velocity of curl(psi e) with psi = A exp(-r^2/2s^2), in closed form: u = psi e + H(chi) e
/// where -laplace chi = psi.
Vec3 bump_velocity(const CurlBump& b, const Vec3& x) {
    const Vec3 y = x - b.centre;
    const double r = y.norm(), s = b.sigma, A = b.amplitude;
    const double psi = A * std::exp(-0.5 * r * r / (s * s));
    if (r < 1e-8) return psi * b.direction - A / 3.0 * b.direction;
    const double m = A * s * s * s * (std::sqrt(pi / 2) * std::erf(r / (s * std::sqrt(2.0))) - (r / s) * std::exp(-0.5 * r * r / (s * s)));
    const double d1 = -m / (r * r);
    const double d2 = -psi + 2.0 * m / (r * r * r);
    const Vec3 e = y / r;
    return psi * b.direction + (d2 - d1 / r) * e * e.dot(b.direction) + (d1 / r) * b.direction;
}

} // namespace

TEST(Spectral, FftwMatchesNaiveDft) {
    const SpectralGrid g{2.0, {4, 6, 4}};
    const FftwTransform tr(g);
    CounterStream s(2, 0, StreamPurpose::auxiliary);
    std::vector<cplx> data(g.size());
    for (auto& z : data) z = cplx(s.normal(), s.normal());
    std::vector<cplx> naive(g.size(), 0.0);
    for (std::size_t p = 0; p < g.size(); ++p) {
        const auto kp = g.unravel(p);
        for (std::size_t q = 0; q < g.size(); ++q) {
            const auto xq = g.unravel(q);
            double ph = 0;
            for (int a = 0; a < 3; ++a) ph += 2 * pi * kp[a] * xq[a] / g.N[a];
            naive[p] += data[q] * std::polar(1.0, -ph);
        }
    }
    tr.forward(data.data());
    for (std::size_t p = 0; p < g.size(); ++p) EXPECT_LT(std::abs(data[p] - naive[p]), 1e-12);
}

TEST(Spectral, SampledDataIsRealAndSolenoidal) {
    const SpectralGrid g{8.0, {24, 24, 24}};
    const FftwTransform tr(g);
    const SpectralField w = sample_field(SpatialField::bumps({CurlBump{1.0, Vec3(0.5, 0, 0), 1.0, Vec3(1, 2, 0)}}), g, tr);
    EXPECT_LT(reality_defect(w), 1e-12);
    EXPECT_LT(divergence_defect(w), 1e-12);
    SpectralField r = random_field(g, tr, 3);
    EXPECT_GT(divergence_defect(r), 0.1);
    project_solenoidal(r);
    EXPECT_LT(divergence_defect(r), 1e-13);
    EXPECT_LT(reality_defect(r), 1e-12);
    const NodeField back = to_nodes(from_nodes(to_nodes(r, tr), g, tr), tr);
    const NodeField direct = to_nodes(r, tr);
    for (std::size_t i = 0; i < g.size(); i += 7) EXPECT_NEAR(back[1][i], direct[1][i], 1e-12);
}

TEST(Heat, SingleModeDecay) {
    const SpectralGrid g{4.0, {16, 16, 16}};
    const SpectralField w = single_mode(g, 2, 0, 0, Vec3(0, 1, 0));
    const double k2 = std::pow(2 * pi / 4.0, 2);
    const double nu = 0.1, t = 2.0 / (nu * k2);
    const SpectralField d = heat_semigroup(w, t, nu);
    const std::size_t i = mode_index(g, 2, 0, 0);
    EXPECT_NEAR(d.c[1][i].real(), 0.5 * std::exp(-2.0), 1e-15);
    EXPECT_EQ(heat_semigroup(w, 0.0, nu).c[1][i], w.c[1][i]);
    EXPECT_THROW(heat_semigroup(w, -1.0, nu), InvalidParameter);
}

TEST(Heat, GaussianSpreadsByTwoNuT) {
    const SpectralGrid g{8.0, {32, 32, 32}};
    const FftwTransform tr(g);
    const double nu = 0.1, t = 1.0;
    const SpectralField w = from_function(g, tr, [](const Vec3& x) { return Vec3(std::exp(-0.5 * x.squaredNorm()), 0, 0); });
    const NodeField after = to_nodes(heat_semigroup(w, t, nu), tr);
    double mass = 0, second = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        mass += after[0][i];
        second += after[0][i] * g.node(i)(0) * g.node(i)(0);
    }
    EXPECT_NEAR(second / mass, 1.0 + 2 * nu * t, 1e-3);
}

TEST(Heat, GradientEstimateConstantIsGridIndependent) {
    // ||grad G_t w|| sqrt(nu t) / ||w|| <= (2e)^{-1/2} on every resolution.
    for (int N : {8, 16, 32}) {
        const SpectralGrid g{4.0, {N, N, N}};
        const FftwTransform tr(g);
        const SpectralField w = random_field(g, tr, 11 + N);
        for (double t : {0.01, 0.1, 1.0}) {
            const SpectralField d = heat_semigroup(w, t, 0.1);
            double num = 0;
            for (std::size_t i = 0; i < g.size(); ++i) num += g.wavevector(i).squaredNorm() * d.mode(i).squaredNorm();
            const double ratio = std::sqrt(num * std::pow(8.0, 3)) * std::sqrt(0.1 * t) / w.l2_norm();
            EXPECT_LE(ratio, 1.0 / std::sqrt(2 * std::exp(1.0)) + 1e-12);
            EXPECT_LE(d.l2_norm(), w.l2_norm() * (1 + 1e-14));
        }
    }
}

TEST(Duhamel, WeightsExactOnLowDegreePolynomials) {
    for (std::size_t j = 1; j <= 9; ++j) {
        const auto w = duhamel_weights(j, 12);
        const int max_degree = j == 1 ? 2 : 3;
        for (int deg = 0; deg <= max_degree; ++deg) {
            double q = 0;
            for (std::size_t i = 0; i < w.size(); ++i) q += w[i] * std::pow(static_cast<double>(i), deg);
            EXPECT_NEAR(q, std::pow(static_cast<double>(j), deg + 1) / (deg + 1), 1e-12) << "j=" << j << " deg=" << deg;
        }
    }
    EXPECT_EQ(duhamel_weights(1, 2), (std::vector<double>{0.5, 0.5}));
    EXPECT_TRUE(duhamel_weights(0, 5).empty());
}

TEST(Duhamel, ConstantForcingOfOneMode) {
    const SpectralGrid g{4.0, {8, 8, 8}};
    const double nu = 0.1, dt = 0.05;
    const std::size_t i = mode_index(g, 1, 2, 0);
    const double k2 = g.wavevector(i).squaredNorm();
    SpectralField F(g);
    F.c[2][i] = 1.0;
    const auto out = time_convolution(std::vector<SpectralField>(21, F), dt, nu);
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double t = j * dt;
        EXPECT_NEAR(out[j].c[2][i].real(), (1 - std::exp(-nu * k2 * t)) / (nu * k2), 1e-6);
    }
}

TEST(BiotSavart, SpectralIdentities) {
    const SpectralGrid g{8.0, {24, 24, 24}};
    const FftwTransform tr(g);
    SpectralField w = random_field(g, tr, 5);
    dealias(w);
    project_solenoidal(w);
    for (auto& c : w.c) c[0] = 0.0;
    const SpectralField u = biot_savart_spectral(w);
    EXPECT_LT(divergence_defect(u), 1e-13);
    EXPECT_LT((curl_spectral(u) - w).l2_norm(), 1e-12 * w.l2_norm());
}

TEST(BiotSavart, MatchesClosedFormVelocityInInnerHalfBox) {
    const SpectralGrid g{8.0, {48, 48, 48}};
    const FftwTransform tr(g);
    const CurlBump b{1.0, Vec3::Zero(), 1.0, Vec3(0, 0.6, 0.8)};
    const NodeField u = to_nodes(biot_savart_spectral(sample_field(SpatialField::bumps({b}), g, tr)), tr);
    double err = 0, scale = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec3 x = g.node(i);
        if (x.cwiseAbs().maxCoeff() > 0.5 * g.L) continue;
        const Vec3 exact = bump_velocity(b, x);
        err = std::max(err, (Vec3(u[0][i], u[1][i], u[2][i]) - exact).norm());
        scale = std::max(scale, exact.norm());
    }
    EXPECT_LT(err, 0.01 * scale);
}

TEST(BiotSavart, ClosedFormVelocityHasTheBumpAsCurl) {
    // Decaying, divergence-free and curl-matching pins the closed form down uniquely.
    const CurlBump b{1.0, Vec3(0.1, 0, 0), 1.0, Vec3(0, 0.6, 0.8)};
    auto u = [&](const Vec3& x) { return bump_velocity(b, x); };
    for (const Vec3& x : {Vec3(0.4, -0.3, 0.2), Vec3(1.5, 0.5, -1.0), Vec3(-2.0, 1.0, 0.3)}) {
        const Mat3 J = oracle_ref::fd_jacobian(u, x, 1e-4);
        const Vec3 curl(J(2, 1) - J(1, 2), J(0, 2) - J(2, 0), J(1, 0) - J(0, 1));
        EXPECT_LT((curl - b.value(x)).norm(), 1e-7);
        EXPECT_NEAR(J.trace(), 0.0, 1e-7);
    }
    EXPECT_LT(u(Vec3(40, 0, 0)).norm(), 1e-4);
}

TEST(Bilinear, VanishesAtTimeZeroAndIsBilinear) {
    const SpectralGrid g{4.0, {12, 12, 12}};
    const FftwTransform tr(g);
    auto traj = [&](std::uint64_t seed) {
        std::vector<SpectralField> v;
        for (int j = 0; j < 3; ++j) {
            SpectralField f = random_field(g, tr, seed + j);
            dealias(f);
            project_solenoidal(f);
            v.push_back(f);
        }
        return v;
    };
    const auto w1 = traj(10), w2 = traj(20), v = traj(30);
    const auto symbol = mollifier_symbol(g, CutoffProfile::gaussian(), 0.3);
    std::vector<SpectralField> comb;
    for (int j = 0; j < 3; ++j) {
        SpectralField f = w1[j];
        f *= 2.5;
        comb.push_back(f + w2[j]);
    }
    const auto B1 = bilinear_B(w1, v, symbol, 0.05, 0.1, tr), B2 = bilinear_B(w2, v, symbol, 0.05, 0.1, tr);
    const auto Bc = bilinear_B(comb, v, symbol, 0.05, 0.1, tr);
    EXPECT_EQ(B1[0].l2_norm(), 0.0);
    for (int j = 1; j < 3; ++j) {
        SpectralField expect = B1[j];
        expect *= 2.5;
        expect += B2[j];
        EXPECT_LT((Bc[j] - expect).l2_norm(), 1e-12 * expect.l2_norm());
    }
    const auto Bv = bilinear_B(v, comb, symbol, 0.05, 0.1, tr);
    const auto Bv1 = bilinear_B(v, w1, symbol, 0.05, 0.1, tr), Bv2 = bilinear_B(v, w2, symbol, 0.05, 0.1, tr);
    SpectralField expect = Bv1[2];
    expect *= 2.5;
    expect += Bv2[2];
    EXPECT_LT((Bv[2] - expect).l2_norm(), 1e-12 * expect.l2_norm());
}

TEST(Bilinear, TwoModesAgainstPointwiseQuadrature) {
    // Perpendicular wavevectors give output modes k1 +- k2 of equal modulus, so the time
    // integral is one scalar factor times curl(u x v), evaluated here by central differences.
    const SpectralGrid g{4.0, {16, 16, 16}};
    const FftwTransform tr(g);
    const double nu = 0.1, dt = 0.05;
    const Vec3 a1(0, 0, 1), a2(1, 0, 0);
    const SpectralField w = single_mode(g, 1, 0, 0, a1), v = single_mode(g, 0, 2, 0, a2);
    const Vec3 k1(pi / 4.0, 0, 0), k2(0, 2 * pi / 4.0, 0);
    const std::size_t steps = 6;
    const auto B = bilinear_B(std::vector<SpectralField>(steps + 1, w), std::vector<SpectralField>(steps + 1, v),
                              std::vector<cplx>(g.size(), 1.0), dt, nu, tr);
    auto uv = [&](const Vec3& x) -> Vec3 {
        const Vec3 y = x + Vec3::Constant(g.L);
        const Vec3 u = -k1.cross(a1) / k1.squaredNorm() * std::sin(k1.dot(y));
        return u.cross(a2 * std::cos(k2.dot(y)));
    };
    const double q2 = (k1 + k2).squaredNorm();
    const double t = steps * dt;
    const double factor = (1 - std::exp(-nu * q2 * t)) / (nu * q2);
    for (const Vec3& x : {Vec3(0.3, -1.1, 0.7), Vec3(-2.0, 0.4, 1.9), Vec3(1.2, 2.2, -0.5)}) {
        const Mat3 J = oracle_ref::fd_jacobian(uv, x, 1e-4);
        const Vec3 curl(J(2, 1) - J(1, 2), J(0, 2) - J(2, 0), J(1, 0) - J(0, 1));
        const Vec3 expected = factor * curl;
        EXPECT_LT((B[steps].evaluate(x) - expected).norm(), 1e-4 * std::max(1e-3, expected.norm())) << x.transpose();
    }
}

TEST(Picard, ContractsAndScalesQuadratically) {
    const FftwTransform tr(small_config(0.2).grid());
    auto run = [&](double amp) {
        OracleConfig cfg = small_config(0.2);
        return solve_mild_picard(cfg, discretize(ring_data(amp, 0.1 * amp, 0.2), cfg, tr), tr);
    };
    const PicardResult full = run(0.5), half = run(0.25);
    ASSERT_GE(full.residuals.size(), 2u);
    for (std::size_t i = 1; i < full.residuals.size(); ++i)
        if (full.residuals[i - 1] > 1e-13) EXPECT_LT(full.residuals[i] / full.residuals[i - 1], 0.5);
    EXPECT_NEAR(full.corrections[0] / half.corrections[0], 8.0 * 0.5, 4.0 * 0.3);
    EXPECT_LT(full.residuals.back(), 1e-10);
}

TEST(Picard, ZeroDataConvergesImmediately) {
    OracleConfig cfg = small_config(0.2, 8);
    const FftwTransform tr(cfg.grid());
    const PicardResult r = solve_mild_picard(cfg, discretize(zero_data(0.2, 0.1), cfg, tr), tr);
    EXPECT_EQ(r.iterations, 1);
    for (const auto& w : r.trajectory.w) EXPECT_EQ(w.l2_norm(), 0.0);
}

TEST(Picard, NonContractionIsReported) {
    OracleConfig cfg = small_config(2.0, 12);
    cfg.picard_max_iters = 3;
    const FftwTransform tr(cfg.grid());
    EXPECT_THROW(solve_mild_picard(cfg, discretize(ring_data(40.0, 0.0, 2.0), cfg, tr), tr), NumericalFailure);
}

TEST(Oracles, PseudoSpectralAgreesWithPicard) {
    OracleConfig cfg = small_config(0.2);
    cfg.epsilon = 0.3;
    const FftwTransform tr(cfg.grid());
    const SpectralProblem p = discretize(ring_data(0.5, 0.05, 0.2), cfg, tr);
    const PicardResult pic = solve_mild_picard(cfg, p, tr);
    OracleConfig fine = cfg;
    fine.dt = 0.01;
    const PseudoSpectralResult ps = solve_pseudospectral(fine, p, tr);
    const SpectralField& a = pic.trajectory.w.back();
    const SpectralField& b = ps.trajectory.w.back();
    EXPECT_LT((a - b).l2_norm(), 1e-3 * a.l2_norm());
    EXPECT_LT(ps.max_divergence_defect, 1e-8);
    EXPECT_TRUE(ps.warnings.empty());
}

TEST(Oracles, MeanModeEvolvesByIntegratedForcing) {
    OracleConfig cfg = small_config(0.2, 8);
    const FftwTransform tr(cfg.grid());
    SpectralProblem p = discretize(ring_data(0.5, 0.0, 0.2), cfg, tr);
    p.g_space.c[0][0] = 0.3;
    p.g_time = TimeProfile::cosine(2.0, 0.1);
    const double integral = (std::sin(2.0 * 0.2 + 0.1) - std::sin(0.1)) / 2.0;
    const PicardResult pic = solve_mild_picard(cfg, p, tr);
    EXPECT_NEAR(pic.trajectory.w.back().c[0][0].real(), 0.3 * integral, 1e-6);
    OracleConfig fine = cfg;
    fine.dt = 0.005;
    const PseudoSpectralResult ps = solve_pseudospectral(fine, p, tr);
    EXPECT_NEAR(ps.trajectory.w.back().c[0][0].real(), 0.3 * integral, 1e-5);
}

TEST(Oracles, SingleModeDecaysLikeHeat) {
    OracleConfig cfg = small_config(0.5, 12);
    const FftwTransform tr(cfg.grid());
    SpectralProblem p;
    p.w0 = single_mode(cfg.grid(), 1, 1, 0, Vec3(0, 0, 2.0));
    p.g_space = SpectralField(cfg.grid());
    const SpectralField expected = heat_semigroup(p.w0, 0.5, cfg.nu);
    const PicardResult pic = solve_mild_picard(cfg, p, tr);
    EXPECT_LT((pic.trajectory.w.back() - expected).l2_norm(), 1e-10 * expected.l2_norm());
    const PseudoSpectralResult ps = solve_pseudospectral(cfg, p, tr);
    EXPECT_LT((ps.trajectory.w.back() - expected).l2_norm(), 1e-10 * expected.l2_norm());
}

TEST(Oracles, RingSolutionStaysInsideAndMovesUp) {
    OracleConfig cfg = small_config(1.0, 48);
    cfg.epsilon = 0.3;
    const FftwTransform tr(cfg.grid());
    const SpectralProblem p = discretize(ring_data(2.0, 0.0, 1.0), cfg, tr);
    const NodeField u0 = to_nodes(biot_savart_spectral(p.w0), tr);
    const std::size_t origin = mode_index(cfg.grid(), cfg.modes[0] / 2, cfg.modes[1] / 2, cfg.modes[2] / 2);
    EXPECT_GT(u0[2][origin], 0.0);
    const PseudoSpectralResult ps = solve_pseudospectral(cfg, p, tr);
    EXPECT_LT(outer_shell_fraction(ps.trajectory.w.back(), tr), 1e-6);
    auto z_centroid = [&](const SpectralField& w) {
        const NodeField n = to_nodes(w, tr);
        double num = 0, den = 0;
        for (std::size_t i = 0; i < cfg.grid().size(); ++i) {
            const double e = n[0][i] * n[0][i] + n[1][i] * n[1][i] + n[2][i] * n[2][i];
            num += e * cfg.grid().node(i)(2);
            den += e;
        }
        return num / den;
    };
    EXPECT_NEAR(z_centroid(p.w0), 0.0, 1e-12);
    EXPECT_GT(z_centroid(ps.trajectory.w.back()), 1e-3);
}
