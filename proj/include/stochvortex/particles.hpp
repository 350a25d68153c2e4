#pragma once

// Interacting particle system with random space-time births. Each particle
// carries (tau, X0, X_t, Phi_t, h); its vector intensity is chi_R(Phi) h once
// born. Time stepping is Euler-Maruyama; drifts come from a DriftProvider so the
// same step serves the interacting system, the mean-field copies of the coupling
// study and frozen-drift tests.

#include "stochvortex/birth.hpp"
#include "stochvortex/core.hpp"
#include "stochvortex/grid.hpp"
#include "stochvortex/kernels.hpp"
#include "stochvortex/parallel.hpp"
#include "stochvortex/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <string>
#include <vector>

namespace stochvortex {

struct IntegratorConfig {
    std::size_t n = 1000;
    double epsilon = 0.5;
    double R = 10.0;
    double dt = 0.05;
    double nu = 0.1;
    double T = 1.0;
    std::uint64_t seed = 1;
    int workers = 1;

    void validate() const {
        if (n < 2) throw InvalidParameter("n must be >= 2");
        if (!(epsilon > 0.0)) throw InvalidParameter("epsilon must be > 0");
        if (!(R > 0.0)) throw InvalidParameter("R must be > 0");
        if (!(dt > 0.0)) throw InvalidParameter("dt must be > 0");
        if (!(nu > 0.0)) throw InvalidParameter("nu must be > 0");
        if (!(T >= 0.0)) throw InvalidParameter("T must be >= 0");
        if (T > 0.0 && dt > T + 1e-12) throw InvalidParameter("dt must not exceed T");
    }
};

struct ParticleState {
    double tau = 0.0;
    Vec3 x0 = Vec3::Zero();
    Vec3 x = Vec3::Zero();
    Mat3 phi = Mat3::Identity();
    Vec3 h = Vec3::Zero();
    std::uint64_t stream = 0; // Brownian stream id

    bool born(double t) const noexcept { return t >= tau; }
};

struct SystemState {
    std::vector<ParticleState> particles;
    double t = 0.0;
    std::int64_t step_index = 0;

    std::size_t size() const noexcept { return particles.size(); }
};

/// Projection of phi onto the Frobenius ball of radius R.
inline Mat3 truncate(const Mat3& phi, double R) {
    if (!(R > 0.0)) throw InvalidParameter("truncation radius must be > 0");
    const double norm = phi.norm();
    return norm <= R ? phi : Mat3(phi * (R / norm));
}

/// chi_R(Phi) h for born particles, zero before birth.
inline Vec3 intensity(const ParticleState& p, double R, double t) {
    if (!p.born(t)) return Vec3::Zero();
    return truncate(p.phi, R) * p.h;
}

struct DriftSample {
    Vec3 u = Vec3::Zero();
    Mat3 grad = Mat3::Zero();
};

/// Sources of a kernel sum: positions and intensities; unborn and zero-weight entries are flagged off.
struct SourceSet {
    double t = 0.0;
    std::vector<Vec3> x;
    std::vector<Vec3> a;
    std::vector<char> active;

    static SourceSet from(const SystemState& sys, double R) {
        SourceSet s;
        s.t = sys.t;
        const std::size_t n = sys.size();
        s.x.resize(n);
        s.a.resize(n);
        s.active.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            const auto& p = sys.particles[j];
            s.x[j] = p.x;
            s.a[j] = p.born(sys.t) ? Vec3(truncate(p.phi, R) * p.h) : Vec3::Zero();
            s.active[j] = !s.a[j].isZero(0.0); // zero intensities contribute exactly nothing
        }
        return s;
    }
};

/// scale * sum_{j active, j != skip} (K_eps(x - x_j) wedge a_j, grad_x of the same).
/// Terms are added in increasing j.
inline DriftSample kernel_sum(const SourceSet& src, const MollifiedKernel& kernel, const Vec3& x, double scale,
                              std::size_t skip = static_cast<std::size_t>(-1)) {
    DriftSample d;
    const std::size_t n = src.x.size();
    for (std::size_t j = 0; j < n; ++j) {
        if (j == skip || !src.active[j]) continue;
        const auto [u, g] = kernel.eval_grad(x - src.x[j], src.a[j]);
        d.u += u;
        d.grad += g;
    }
    d.u *= scale;
    d.grad *= scale;
    return d;
}

/// Drift (1/n) sum_{j != i, j born} K_eps(X^i - X^j) wedge chi_R(Phi^j) h^j and its gradient;
/// zero when particle i is unborn.
inline DriftSample pairwise_drift(const SystemState& sys, std::size_t i, const MollifiedKernel& kernel, double R) {
    if (sys.size() < 2) throw InvalidParameter("pairwise_drift needs n >= 2");
    if (i >= sys.size()) throw InvalidParameter("pairwise_drift: particle index out of range");
    if (!sys.particles[i].born(sys.t)) return {};
    return kernel_sum(SourceSet::from(sys, R), kernel, sys.particles[i].x, 1.0 / static_cast<double>(sys.size()), i);
}

/// A drift provider is prepared once per step (sequentially) and then queried
/// concurrently for every particle that is born by the end of the step.
template <class D>
concept DriftProvider = requires(D d, const D cd, const SystemState& sys, std::size_t i) {
    { d.prepare(sys) };
    { cd.at(sys, i) } -> std::convertible_to<DriftSample>;
};

/// The interacting system's own kernel sums.
class InteractingDrift {
public:
    InteractingDrift(const MollifiedKernel& kernel, double R) : kernel_(kernel), R_(R) {}
    void prepare(const SystemState& sys) { sources_ = SourceSet::from(sys, R_); }
    DriftSample at(const SystemState& sys, std::size_t i) const {
        return kernel_sum(sources_, kernel_, sys.particles[i].x, 1.0 / static_cast<double>(sys.size()), i);
    }

private:
    const MollifiedKernel& kernel_;
    double R_;
    SourceSet sources_;
};

/// Drift from a recorded external ensemble, one SourceSet per step index. With
/// `exclude_self`, particle i skips source index `index_map[i]` (or i).
class ExternalEnsembleDrift {
public:
    ExternalEnsembleDrift(const MollifiedKernel& kernel, const std::vector<SourceSet>& steps, bool exclude_self,
                          std::vector<std::size_t> index_map = {})
        : kernel_(kernel), steps_(steps), exclude_self_(exclude_self), index_map_(std::move(index_map)) {}

    void prepare(const SystemState& sys) {
        if (sys.step_index < 0 || static_cast<std::size_t>(sys.step_index) >= steps_.size())
            throw InvalidParameter("external drift has no sources for step " + std::to_string(sys.step_index));
        current_ = &steps_[static_cast<std::size_t>(sys.step_index)];
        if (std::abs(current_->t - sys.t) > 1e-12)
            throw InvalidParameter("external drift time grid does not match the system");
    }
    DriftSample at(const SystemState& sys, std::size_t i) const {
        const std::size_t skip = !exclude_self_ ? static_cast<std::size_t>(-1)
                                 : index_map_.empty() ? i
                                                      : index_map_[i];
        return kernel_sum(*current_, kernel_, sys.particles[i].x, 1.0 / static_cast<double>(current_->x.size()),
                          skip);
    }

private:
    const MollifiedKernel& kernel_;
    const std::vector<SourceSet>& steps_;
    bool exclude_self_;
    std::vector<std::size_t> index_map_;
    const SourceSet* current_ = nullptr;
};

/// Spatially constant drift; a test hook for the stretching integrator.
struct FrozenDrift {
    DriftSample value;
    void prepare(const SystemState&) {}
    DriftSample at(const SystemState&, std::size_t) const { return value; }
};

/// One Euler-Maruyama step of length dt. Particles born in (t, t + dt] start at tau
/// from (X0, I) and integrate the remaining sub-interval with the drift evaluated at
/// time t. Brownian increments come from stream (seed, particle stream, step index).
template <DriftProvider Drift>
SystemState step(const SystemState& sys, const IntegratorConfig& cfg, double dt, Drift& drift) {
    if (!(dt > 0.0)) throw InvalidParameter("step: dt must be > 0");
    if (sys.t + dt > cfg.T + 1e-12) throw InvalidParameter("step would pass the horizon T");
    drift.prepare(sys);
    SystemState next;
    next.t = sys.t + dt;
    next.step_index = sys.step_index + 1;
    next.particles = sys.particles;
    const double t_end = sys.t + dt;
    const double diffusion = std::sqrt(2.0 * cfg.nu);
    parallel_for(sys.size(), cfg.workers, [&](std::size_t i) {
        const ParticleState& p = sys.particles[i];
        if (!p.born(t_end)) return;
        const bool activating = !p.born(sys.t);
        const double h = activating ? t_end - p.tau : dt;
        const DriftSample d = drift.at(sys, i);
        CounterStream rng(cfg.seed, p.stream, StreamPurpose::brownian, static_cast<std::uint32_t>(sys.step_index));
        const Vec3 xi = rng.normal3();
        ParticleState& q = next.particles[i];
        const Vec3 x = activating ? p.x0 : p.x;
        const Mat3 phi = activating ? Mat3::Identity() : p.phi;
        q.x = x + d.u * h + diffusion * std::sqrt(h) * xi;
        q.phi = phi + d.grad * truncate(phi, cfg.R) * h;
    });
    for (std::size_t i = 0; i < next.size(); ++i) {
        const auto& q = next.particles[i];
        if (!all_finite(q.x) || !all_finite(q.phi))
            throw NumericalFailure("non-finite particle state at step " + std::to_string(next.step_index) +
                                   " (particle " + std::to_string(i) + ")");
    }
    return next;
}

/// n births from per-particle streams; every particle starts at (X0, I).
inline SystemState initial_state(const BirthLaw& law, std::size_t n, std::uint64_t seed, int workers = 1) {
    SystemState sys;
    sys.particles.resize(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const BirthDraw b = sample_birth(law, seed, i);
        auto& p = sys.particles[i];
        p.tau = b.tau;
        p.x0 = b.x0;
        p.x = b.x0;
        p.h = b.h;
        p.stream = i;
    });
    return sys;
}

/// Step end times covering [0, T] with steps of at most dt, cut so that every
/// requested time is hit exactly.
inline std::vector<double> step_schedule(double T, double dt, const std::vector<double>& stops) {
    std::vector<double> marks(stops.begin(), stops.end());
    marks.push_back(T);
    std::sort(marks.begin(), marks.end());
    std::vector<double> ends;
    double t = 0.0;
    for (double m : marks) {
        while (m - t > 1e-12) {
            const double next = (m - (t + dt) > 1e-9 * std::max(1.0, dt)) ? t + dt : m;
            ends.push_back(next);
            t = next;
        }
    }
    return ends;
}

/// dt * L_eps * R * hbar; above 1 the explicit stretching update can amplify.
inline double stability_number(const IntegratorConfig& cfg, double L_eps, double hbar) {
    return cfg.dt * L_eps * cfg.R * hbar;
}

struct SimulationHooks {
    /// Called with the state at the start of every step.
    std::function<void(const SystemState&)> on_step;
    std::vector<std::string>* warnings = nullptr;
};

/// Runs `initial` (or fresh births) to T with the given drift provider, recording
/// deep copies at the requested times.
template <DriftProvider Drift>
std::vector<SystemState> simulate_from(SystemState sys, const IntegratorConfig& cfg, Drift& drift,
                                       std::vector<double> snapshot_times, const SimulationHooks& hooks = {}) {
    std::sort(snapshot_times.begin(), snapshot_times.end());
    for (double s : snapshot_times)
        if (s < -1e-12 || s > cfg.T + 1e-12) throw InvalidParameter("snapshot time outside [0, T]");
    std::vector<SystemState> out;
    auto record = [&] {
        for (double s : snapshot_times)
            if (std::abs(s - sys.t) <= 1e-12 && (out.empty() || out.back().t != sys.t)) out.push_back(sys);
    };
    record();
    for (double end : step_schedule(cfg.T, cfg.dt, snapshot_times)) {
        if (hooks.on_step) hooks.on_step(sys);
        sys = step(sys, cfg, end - sys.t, drift);
        sys.t = end;
        record();
    }
    return out;
}

/// Births, then the interacting system up to T. Deterministic in cfg.seed for any worker count.
inline std::vector<SystemState> simulate(const IntegratorConfig& cfg, const BirthLaw& law,
                                         const MollifiedKernel& kernel, const std::vector<double>& snapshot_times,
                                         const SimulationHooks& hooks = {}) {
    cfg.validate();
    if (std::abs(cfg.T - law.T()) > 1e-12) throw InvalidParameter("integrator T differs from the data horizon");
    if (hooks.warnings) {
        const double s = stability_number(cfg, kernel_bounds(kernel, 400).L_eps, law.hbar);
        if (s >= 1.0)
            hooks.warnings->push_back("dt*L_eps*R*hbar = " + std::to_string(s) + " >= 1; the step may be unstable");
    }
    InteractingDrift drift(kernel, cfg.R);
    return simulate_from(initial_state(law, cfg.n, cfg.seed, cfg.workers), cfg, drift, snapshot_times, hooks);
}

// Snapshot files.
//
// Binary (little-endian): 8-byte magic "SVSNAP01"; float64 t; int64 step index;
// uint64 n; config echo as float64 epsilon, R, dt, nu, T and uint64 seed; then n
// records of 19 float64: tau, x0[3], x[3], phi[9] row-major, h[3].
// Text: '#'-prefixed header lines with the same fields, then one record per line.

namespace detail {
inline constexpr char snapshot_magic[8] = {'S', 'V', 'S', 'N', 'A', 'P', '0', '1'};

inline std::array<double, 19> pack_particle(const ParticleState& p) {
    std::array<double, 19> r{};
    r[0] = p.tau;
    for (int a = 0; a < 3; ++a) {
        r[1 + a] = p.x0(a);
        r[4 + a] = p.x(a);
        r[16 + a] = p.h(a);
    }
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) r[7 + 3 * a + b] = p.phi(a, b);
    return r;
}

inline ParticleState unpack_particle(const std::array<double, 19>& r, std::uint64_t stream) {
    ParticleState p;
    p.tau = r[0];
    for (int a = 0; a < 3; ++a) {
        p.x0(a) = r[1 + a];
        p.x(a) = r[4 + a];
        p.h(a) = r[16 + a];
    }
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) p.phi(a, b) = r[7 + 3 * a + b];
    p.stream = stream;
    return p;
}
} // namespace detail

inline void write_snapshot_binary(const SystemState& s, const IntegratorConfig& cfg, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(detail::snapshot_magic, 8);
    detail::write_raw(os, s.t);
    detail::write_raw(os, static_cast<std::int64_t>(s.step_index));
    detail::write_raw(os, static_cast<std::uint64_t>(s.size()));
    for (double v : {cfg.epsilon, cfg.R, cfg.dt, cfg.nu, cfg.T}) detail::write_raw(os, v);
    detail::write_raw(os, cfg.seed);
    for (const auto& p : s.particles) {
        const auto r = detail::pack_particle(p);
        os.write(reinterpret_cast<const char*>(r.data()), sizeof(r));
    }
    if (!os) throw IoError("write failed for " + path);
}

struct SnapshotFile {
    SystemState state;
    IntegratorConfig cfg;
};

inline SnapshotFile read_snapshot_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char head[8] = {};
    is.read(head, 8);
    if (is.gcount() != 8 || std::memcmp(head, detail::snapshot_magic, 8) != 0)
        throw IoError(path + ": not a snapshot file");
    SnapshotFile f;
    f.state.t = detail::read_raw<double>(is);
    f.state.step_index = detail::read_raw<std::int64_t>(is);
    const auto n = detail::read_raw<std::uint64_t>(is);
    f.cfg.n = n;
    f.cfg.epsilon = detail::read_raw<double>(is);
    f.cfg.R = detail::read_raw<double>(is);
    f.cfg.dt = detail::read_raw<double>(is);
    f.cfg.nu = detail::read_raw<double>(is);
    f.cfg.T = detail::read_raw<double>(is);
    f.cfg.seed = detail::read_raw<std::uint64_t>(is);
    if (!is) throw IoError(path + ": truncated header");
    f.state.particles.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::array<double, 19> r{};
        is.read(reinterpret_cast<char*>(r.data()), sizeof(r));
        if (!is) throw IoError(path + ": truncated particle records");
        f.state.particles.push_back(detail::unpack_particle(r, i));
    }
    return f;
}

inline void write_snapshot_text(const SystemState& s, const IntegratorConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << std::setprecision(17);
    os << "# t " << s.t << "\n# step " << s.step_index << "\n# n " << s.size() << "\n";
    os << "# epsilon " << cfg.epsilon << " R " << cfg.R << " dt " << cfg.dt << " nu " << cfg.nu << " T " << cfg.T
       << " seed " << cfg.seed << "\n";
    os << "# tau x0_1 x0_2 x0_3 x_1 x_2 x_3 phi_11 phi_12 phi_13 phi_21 phi_22 phi_23 phi_31 phi_32 phi_33 h_1 h_2 h_3\n";
    for (const auto& p : s.particles) {
        const auto r = detail::pack_particle(p);
        for (std::size_t k = 0; k < r.size(); ++k) os << (k ? " " : "") << r[k];
        os << '\n';
    }
    if (!os) throw IoError("write failed for " + path);
}

} // namespace stochvortex
