#pragma once

// Deterministic reference solutions of the (mollified) vorticity equation on the
// periodic box: the mild form v = w_lin + B(v, v) solved by Picard iteration,
// and an independent integrating-factor RK2 pseudo-spectral stepper.
//
// B(w, v)(t) = int_0^t G_{t-s} * curl(K^eps(w) x v)(s) ds, which in Fourier space is
// int_0^t exp(-nu |k|^2 (t - s)) i k x FFT(u x v)(s) ds with u = K^eps(w).

#include "stochvortex/core.hpp"
#include "stochvortex/forcing.hpp"
#include "stochvortex/kernels.hpp"
#include "stochvortex/parallel.hpp"
#include "stochvortex/spectral.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace stochvortex {

struct OracleConfig {
    double L = 8.0;
    std::array<int, 3> modes{48, 48, 48};
    double dt = 0.05;
    double nu = 0.1;
    double T = 1.0;
    double epsilon = 0.0; // 0: spectral truncation only
    CutoffProfile profile = CutoffProfile::gaussian();
    double picard_tolerance = 1e-10;
    int picard_max_iters = 40;
    int workers = 1;

    SpectralGrid grid() const { return SpectralGrid{L, modes}; }

    std::size_t steps() const {
        if (T == 0.0) return 0;
        const double m = T / dt;
        const double r = std::round(m);
        if (std::abs(m - r) > 1e-9 * std::max(1.0, m)) throw InvalidParameter("oracle dt must divide T");
        return static_cast<std::size_t>(r);
    }

    void validate() const {
        grid().validate();
        if (!(dt > 0.0)) throw InvalidParameter("oracle dt must be > 0");
        if (!(nu > 0.0)) throw InvalidParameter("oracle nu must be > 0");
        if (!(T >= 0.0)) throw InvalidParameter("oracle T must be >= 0");
        if (!(epsilon >= 0.0)) throw InvalidParameter("oracle epsilon must be >= 0");
        if (!(picard_tolerance > 0.0)) throw InvalidParameter("picard_tolerance must be > 0");
        if (picard_max_iters < 1) throw InvalidParameter("picard_max_iters must be >= 1");
        (void)steps();
    }
};

/// Data on the spectral grid: w0 and the separable forcing b(t) G^.
struct SpectralProblem {
    SpectralField w0;
    SpectralField g_space;
    TimeProfile g_time;

    SpectralField g(double t) const {
        SpectralField f = g_space;
        f *= g_time(t);
        return f;
    }
};

template <Transform3D Tr>
SpectralProblem discretize(const ForcingData& data, const OracleConfig& cfg, const Tr& tr) {
    SpectralProblem p;
    p.w0 = sample_field(data.w0, cfg.grid(), tr, cfg.workers);
    p.g_space = sample_field(data.g_space, cfg.grid(), tr, cfg.workers);
    p.g_time = data.g_time;
    return p;
}

struct Trajectory {
    double dt = 0.0;
    std::vector<double> t;
    std::vector<SpectralField> w;

    /// Index of the node at time `time`, which must be a node.
    std::size_t node_at(double time) const {
        for (std::size_t j = 0; j < t.size(); ++j)
            if (std::abs(t[j] - time) <= 1e-9) return j;
        throw InvalidParameter("time " + std::to_string(time) + " is not an oracle node");
    }
};

/// Weights (units of dt) over nodes 0..q for int_0^{j dt} F(s) ds: composite Simpson
/// for even j, Simpson plus a closing 3/8 panel for odd j >= 3, and for j = 1 the
/// quadratic rule through nodes 0, 1, 2 (trapezoid when node 2 does not exist).
inline std::vector<double> duhamel_weights(std::size_t j, std::size_t nodes_available) {
    if (j == 0) return {};
    if (j == 1) {
        if (nodes_available < 3) return {0.5, 0.5};
        return {5.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0};
    }
    std::vector<double> w(j + 1, 0.0);
    const std::size_t simpson_end = (j % 2 == 0) ? j : j - 3;
    for (std::size_t i = 0; i + 2 <= simpson_end; i += 2) {
        w[i] += 1.0 / 3.0;
        w[i + 1] += 4.0 / 3.0;
        w[i + 2] += 1.0 / 3.0;
    }
    if (j % 2 == 1) {
        w[j - 3] += 3.0 / 8.0;
        w[j - 2] += 9.0 / 8.0;
        w[j - 1] += 9.0 / 8.0;
        w[j] += 3.0 / 8.0;
    }
    return w;
}

/// out_j = int_0^{t_j} exp(-nu |k|^2 (t_j - s)) F(s) ds for every node j.
inline std::vector<SpectralField> time_convolution(const std::vector<SpectralField>& F, double dt, double nu,
                                                   int workers = 1) {
    const std::size_t M = F.size();
    std::vector<SpectralField> out;
    if (M == 0) return out;
    const SpectralGrid& g = F[0].grid;
    out.assign(M, SpectralField(g));
    std::vector<std::vector<double>> weights(M);
    for (std::size_t j = 0; j < M; ++j) weights[j] = duhamel_weights(j, M);
    const std::size_t block = 256;
    const std::size_t blocks = (g.size() + block - 1) / block;
    parallel_for(blocks, workers, [&](std::size_t b) {
        std::vector<double> pw(M + 1); // pw[l + 1] = d^l, l = -1..M-1
        for (std::size_t idx = b * block; idx < std::min(g.size(), (b + 1) * block); ++idx) {
            const double d = std::exp(-nu * g.wavevector(idx).squaredNorm() * dt);
            pw[0] = 1.0 / d;
            pw[1] = 1.0;
            for (std::size_t l = 2; l <= M; ++l) pw[l] = pw[l - 1] * d;
            for (std::size_t j = 1; j < M; ++j) {
                cplx acc[3] = {0.0, 0.0, 0.0};
                const auto& w = weights[j];
                for (std::size_t i = 0; i < w.size(); ++i) {
                    const double f = w[i] * pw[j - i + 1];
                    for (int a = 0; a < 3; ++a) acc[a] += f * F[i].c[a][idx];
                }
                for (int a = 0; a < 3; ++a) out[j].c[a][idx] = dt * acc[a];
            }
        }
    });
    return out;
}

/// Linear part at every node: G_t w0 + int_0^t G_{t-s} g(s) ds.
inline std::vector<SpectralField> duhamel_linear(const SpectralField& w0, const std::vector<SpectralField>& g_nodes,
                                                 double dt, double nu, int workers = 1) {
    std::vector<SpectralField> out = time_convolution(g_nodes, dt, nu, workers);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += heat_semigroup(w0, j * dt, nu);
    return out;
}

/// i k x FFT(K^eps(w) x v), dealiased.
template <Transform3D Tr>
SpectralField curl_of_product(const SpectralField& w, const SpectralField& v, const std::vector<cplx>& symbol,
                              const Tr& tr) {
    const NodeField u = to_nodes(biot_savart_spectral(w, symbol), tr);
    const NodeField vn = to_nodes(v, tr);
    NodeField p;
    for (auto& c : p) c.resize(u[0].size());
    for (std::size_t i = 0; i < u[0].size(); ++i) {
        p[0][i] = u[1][i] * vn[2][i] - u[2][i] * vn[1][i];
        p[1][i] = u[2][i] * vn[0][i] - u[0][i] * vn[2][i];
        p[2][i] = u[0][i] * vn[1][i] - u[1][i] * vn[0][i];
    }
    SpectralField out = curl_spectral(from_nodes(p, w.grid, tr));
    dealias(out);
    return out;
}

/// B^eps(w, v) at every node of the trajectories.
template <Transform3D Tr>
std::vector<SpectralField> bilinear_B(const std::vector<SpectralField>& w, const std::vector<SpectralField>& v,
                                      const std::vector<cplx>& symbol, double dt, double nu, const Tr& tr,
                                      int workers = 1) {
    if (w.size() != v.size()) throw ShapeError("bilinear_B: trajectories differ in length");
    std::vector<SpectralField> F;
    F.reserve(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) F.push_back(curl_of_product(w[i], v[i], symbol, tr));
    return time_convolution(F, dt, nu, workers);
}

inline double trajectory_sup_norm(const std::vector<SpectralField>& a) {
    double m = 0.0;
    for (const auto& f : a) m = std::max(m, f.l2_norm());
    return m;
}

inline double trajectory_sup_distance(const std::vector<SpectralField>& a, const std::vector<SpectralField>& b) {
    double m = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, (a[j] - b[j]).l2_norm());
    return m;
}

struct PicardResult {
    Trajectory trajectory;
    std::vector<double> residuals; // relative trajectory-sup L2 change per iteration
    std::vector<double> corrections; // absolute ||v^{k+1} - v^k||, trajectory sup
    int iterations = 0;
};

template <Transform3D Tr>
PicardResult solve_mild_picard(const OracleConfig& cfg, const SpectralProblem& prob, const Tr& tr) {
    cfg.validate();
    const std::size_t M = cfg.steps() + 1;
    const auto symbol = mollifier_symbol(cfg.grid(), cfg.profile, cfg.epsilon);
    PicardResult res;
    res.trajectory.dt = cfg.dt;
    for (std::size_t j = 0; j < M; ++j) res.trajectory.t.push_back(j * cfg.dt);
    std::vector<SpectralField> g_nodes;
    for (std::size_t j = 0; j < M; ++j) g_nodes.push_back(prob.g(j * cfg.dt));
    const std::vector<SpectralField> lin = duhamel_linear(prob.w0, g_nodes, cfg.dt, cfg.nu, cfg.workers);
    std::vector<SpectralField> v = lin;
    int non_decreasing = 0;
    for (int it = 1; it <= cfg.picard_max_iters; ++it) {
        std::vector<SpectralField> next = bilinear_B(v, v, symbol, cfg.dt, cfg.nu, tr, cfg.workers);
        for (std::size_t j = 0; j < M; ++j) {
            next[j] += lin[j];
            project_solenoidal(next[j]);
        }
        for (const auto& f : next)
            for (const auto& c : f.c)
                for (const auto& z : c)
                    if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
                        throw NumericalFailure("Picard iterate " + std::to_string(it) + " is not finite");
        const double change = trajectory_sup_distance(next, v);
        const double scale = trajectory_sup_norm(next);
        const double r = scale > 0.0 ? change / scale : 0.0;
        res.corrections.push_back(change);
        res.residuals.push_back(r);
        res.iterations = it;
        v = std::move(next);
        if (r < cfg.picard_tolerance) {
            res.trajectory.w = std::move(v);
            return res;
        }
        const std::size_t n = res.residuals.size();
        non_decreasing = (n >= 2 && res.residuals[n - 1] >= res.residuals[n - 2]) ? non_decreasing + 1 : 0;
        if (non_decreasing >= 3)
            throw NumericalFailure("Picard iteration is not contracting (residual " + std::to_string(r) +
                                   " after " + std::to_string(it) + " iterations); shrink T or the data amplitude");
    }
    throw NumericalFailure("Picard iteration reached " + std::to_string(cfg.picard_max_iters) +
                           " iterations without meeting the tolerance; shrink T or the data amplitude");
}

struct PseudoSpectralResult {
    Trajectory trajectory;
    double max_divergence_defect = 0.0;
    double max_cfl = 0.0;
    std::vector<std::string> warnings;
};

/// (w.grad) u - (u.grad) w with u = K^eps(w), formed from explicit node gradients,
/// dealiased and projected. The mean vanishes for solenoidal periodic fields and is
/// set to zero exactly. Also reports max |u| over the nodes.
template <Transform3D Tr>
SpectralField stretching_minus_transport(const SpectralField& w, const std::vector<cplx>& symbol, const Tr& tr,
                                         double* max_u = nullptr) {
    const SpectralGrid& g = w.grid;
    const SpectralField u_hat = biot_savart_spectral(w, symbol);
    const NodeField u = to_nodes(u_hat, tr);
    const NodeField wn = to_nodes(w, tr);
    const cplx I(0.0, 1.0);
    std::array<NodeField, 3> du, dw; // du[j][i] = d_j u_i
    for (int j = 0; j < 3; ++j) {
        SpectralField a(g), b(g);
        for (std::size_t idx = 0; idx < g.size(); ++idx) {
            const double kj = g.wavevector(idx)(j);
            for (int i = 0; i < 3; ++i) {
                a.c[i][idx] = I * kj * u_hat.c[i][idx];
                b.c[i][idx] = I * kj * w.c[i][idx];
            }
        }
        du[j] = to_nodes(a, tr);
        dw[j] = to_nodes(b, tr);
    }
    NodeField out;
    for (auto& c : out) c.assign(g.size(), 0.0);
    double umax = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) {
        for (int i = 0; i < 3; ++i) {
            double s = 0.0;
            for (int j = 0; j < 3; ++j) s += wn[j][n] * du[j][i][n] - u[j][n] * dw[j][i][n];
            out[i][n] = s;
        }
        umax = std::max(umax, std::sqrt(u[0][n] * u[0][n] + u[1][n] * u[1][n] + u[2][n] * u[2][n]));
    }
    if (max_u) *max_u = umax;
    SpectralField N = from_nodes(out, g, tr);
    dealias(N);
    project_solenoidal(N);
    for (auto& c : N.c) c[0] = 0.0;
    return N;
}

template <Transform3D Tr>
PseudoSpectralResult solve_pseudospectral(const OracleConfig& cfg, const SpectralProblem& prob, const Tr& tr) {
    cfg.validate();
    const SpectralGrid g = cfg.grid();
    const std::size_t steps = cfg.steps();
    const auto symbol = mollifier_symbol(g, cfg.profile, cfg.epsilon);
    std::vector<double> E(g.size());
    double kmax = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec3 k = g.wavevector(i);
        E[i] = std::exp(-cfg.nu * k.squaredNorm() * cfg.dt);
        if (g.kept(i)) kmax = std::max(kmax, k.norm());
    }
    auto decay = [&](SpectralField f) {
        for (auto& c : f.c)
            for (std::size_t i = 0; i < c.size(); ++i) c[i] *= E[i];
        return f;
    };
    PseudoSpectralResult res;
    res.trajectory.dt = cfg.dt;
    SpectralField w = prob.w0;
    res.trajectory.t.push_back(0.0);
    res.trajectory.w.push_back(w);
    res.max_divergence_defect = divergence_defect(w);
    for (std::size_t n = 0; n < steps; ++n) {
        const double t = n * cfg.dt;
        double umax = 0.0;
        SpectralField rhs = stretching_minus_transport(w, symbol, tr, &umax);
        rhs += prob.g(t);
        const double cfl = cfg.dt * umax * kmax;
        res.max_cfl = std::max(res.max_cfl, cfl);
        if (cfl >= 1.0 && res.warnings.empty())
            res.warnings.push_back("CFL number " + std::to_string(cfl) + " >= 1 at step " + std::to_string(n));
        SpectralField a = w;
        for (int c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < g.size(); ++i) a.c[c][i] += cfg.dt * rhs.c[c][i];
        a = decay(std::move(a));
        SpectralField rhs2 = stretching_minus_transport(a, symbol, tr);
        rhs2 += prob.g(t + cfg.dt);
        SpectralField next = decay(w);
        const SpectralField erhs = decay(rhs);
        for (int c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < g.size(); ++i)
                next.c[c][i] += 0.5 * cfg.dt * (erhs.c[c][i] + rhs2.c[c][i]);
        project_solenoidal(next);
        for (const auto& c : next.c)
            for (const auto& z : c)
                if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
                    throw NumericalFailure("pseudo-spectral blow-up at step " + std::to_string(n + 1));
        w = std::move(next);
        res.max_divergence_defect = std::max(res.max_divergence_defect, divergence_defect(w));
        res.trajectory.t.push_back((n + 1) * cfg.dt);
        res.trajectory.w.push_back(w);
    }
    return res;
}

} // namespace stochvortex
