#pragma once

// Macroscopic fields from a particle snapshot: the weighted empirical measure
// mu = (1/n) sum delta_{X^i} chi_R(Phi^i) h^i, its mollified density on grids,
// the induced velocity, and discrete norms.

#include "stochvortex/core.hpp"
#include "stochvortex/grid.hpp"
#include "stochvortex/kernels.hpp"
#include "stochvortex/parallel.hpp"
#include "stochvortex/particles.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace stochvortex {

using TestField = std::function<Vec3(const Vec3&)>;

/// <mu, f> = (1/n) sum f(X^i) . chi_R(Phi^i) h^i over born particles.
inline double pair_with_test(const SystemState& sys, double R, const TestField& f) {
    if (sys.size() == 0) return 0.0;
    double acc = 0.0;
    for (const auto& p : sys.particles) {
        if (!p.born(sys.t)) continue;
        acc += f(p.x).dot(intensity(p, R, sys.t));
    }
    return acc / static_cast<double>(sys.size());
}

/// Node values of (phi_eps * mu)(x). Particles further than the profile extent
/// from a node are skipped (their contribution is below exp(-72) relative).
inline FieldGrid empirical_vorticity(const SystemState& sys, const MollifiedKernel& kernel, double R,
                                     const GridSpec& grid, int workers = 1) {
    FieldGrid out(grid, 3);
    if (sys.size() == 0) return out;
    const SourceSet src = SourceSet::from(sys, R);
    const CutoffProfile& prof = kernel.profile();
    const double eps = kernel.epsilon();
    const Vec3 centre = eps * prof.shift();
    const double reach = prof.extent() * eps;
    const double reach2 = std::isfinite(reach) ? reach * reach : std::numeric_limits<double>::infinity();
    const double scale = 1.0 / static_cast<double>(sys.size());
    const double inv_e3 = 1.0 / (eps * eps * eps);
    parallel_for(grid.size(), workers, [&](std::size_t node) {
        const Vec3 x = grid.node(node) - centre;
        Vec3 v = Vec3::Zero();
        for (std::size_t j = 0; j < src.x.size(); ++j) {
            if (!src.active[j]) continue;
            const Vec3 d = x - src.x[j];
            const double r2 = d.squaredNorm();
            if (r2 > reach2) continue;
            v += (prof.radial_value(std::sqrt(r2) / eps) * inv_e3) * src.a[j];
        }
        out.set_vec(node, scale * v);
    });
    return out;
}

/// (1/n) sum K_eps(x - X^i) wedge chi_R(Phi^i) h^i over born particles.
inline Vec3 empirical_velocity(const SystemState& sys, const MollifiedKernel& kernel, double R, const Vec3& x) {
    if (sys.size() == 0) return Vec3::Zero();
    const SourceSet src = SourceSet::from(sys, R);
    Vec3 u = Vec3::Zero();
    for (std::size_t j = 0; j < src.x.size(); ++j)
        if (src.active[j]) u += kernel.vector_kernel(x - src.x[j]).cross(src.a[j]);
    return u / static_cast<double>(sys.size());
}

inline std::vector<Vec3> empirical_velocity(const SystemState& sys, const MollifiedKernel& kernel, double R,
                                            const std::vector<Vec3>& probes, int workers = 1) {
    std::vector<Vec3> out(probes.size(), Vec3::Zero());
    if (sys.size() == 0) return out;
    const SourceSet src = SourceSet::from(sys, R);
    parallel_for(probes.size(), workers, [&](std::size_t k) {
        Vec3 u = Vec3::Zero();
        for (std::size_t j = 0; j < src.x.size(); ++j)
            if (src.active[j]) u += kernel.vector_kernel(probes[k] - src.x[j]).cross(src.a[j]);
        out[k] = u / static_cast<double>(sys.size());
    });
    return out;
}

/// Discrete L^p norm of a - b with trapezoid node weights; p = infinity gives the max
/// of the pointwise Euclidean norm.
inline double field_error(const FieldGrid& a, const FieldGrid& b, double p) {
    if (!(a.spec() == b.spec()) || a.components() != b.components())
        throw ShapeError("field_error: grids differ");
    if (!(p >= 1.0)) throw InvalidParameter("field_error: p must be >= 1");
    const auto& spec = a.spec();
    const int c = a.components();
    if (std::isinf(p)) {
        double m = 0.0;
        for (std::size_t n = 0; n < a.nodes(); ++n) {
            double s = 0.0;
            for (int k = 0; k < c; ++k) s += (a.at(n, k) - b.at(n, k)) * (a.at(n, k) - b.at(n, k));
            m = std::max(m, std::sqrt(s));
        }
        return m;
    }
    double acc = 0.0;
    for (std::size_t n = 0; n < a.nodes(); ++n) {
        double s = 0.0;
        for (int k = 0; k < c; ++k) s += (a.at(n, k) - b.at(n, k)) * (a.at(n, k) - b.at(n, k));
        acc += spec.weight(n) * std::pow(std::sqrt(s), p);
    }
    return std::pow(acc, 1.0 / p);
}

inline double field_norm(const FieldGrid& a, double p) { return field_error(a, FieldGrid(a.spec(), a.components()), p); }

/// int f . w dx over the grid with trapezoid weights.
inline double grid_pairing(const FieldGrid& w, const TestField& f) {
    double acc = 0.0;
    for (std::size_t n = 0; n < w.nodes(); ++n) acc += w.spec().weight(n) * f(w.spec().node(n)).dot(w.vec(n));
    return acc;
}

/// Gaussian test field e exp(-|x - c|^2 / 2 s^2), scaled so that sup + Lipschitz = 1.
struct GaussianTestField {
    Vec3 centre;
    double scale;
    Vec3 direction; // unit

    double amplitude() const { return 1.0 / (1.0 + std::exp(-0.5) / scale); }

    Vec3 operator()(const Vec3& x) const {
        const double z2 = (x - centre).squaredNorm() / (scale * scale);
        return (amplitude() * std::exp(-0.5 * z2)) * direction;
    }

    std::string label() const {
        return "gauss(c=" + std::to_string(centre(0)) + "," + std::to_string(centre(1)) + "," +
               std::to_string(centre(2)) + ";s=" + std::to_string(scale) + ";e=" + std::to_string(direction(0)) +
               "," + std::to_string(direction(1)) + "," + std::to_string(direction(2)) + ")";
    }
};

/// The fixed 20-field dictionary around `centre` with length unit `ell`: each of the
/// three coordinate directions at the centre for scales 0.5, 1, 2 (9 fields), the six
/// axis-offset centres at +-ell with a direction cycling through e1, e2, e3 (6 fields),
/// and five diagonal probes at scale ell (5 fields).
inline std::vector<GaussianTestField> test_dictionary(const Vec3& centre = Vec3::Zero(), double ell = 1.0) {
    std::vector<GaussianTestField> d;
    const Vec3 e[3] = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
    for (double s : {0.5, 1.0, 2.0})
        for (const auto& dir : e) d.push_back({centre, s * ell, dir});
    for (int a = 0; a < 3; ++a)
        for (int sgn : {-1, 1}) d.push_back({centre + sgn * ell * e[a], ell, e[(a + (sgn > 0)) % 3]});
    const Vec3 diag[5] = {Vec3(1, 1, 1), Vec3(-1, 1, -1), Vec3(1, -1, -1), Vec3(-1, -1, 1), Vec3(1, 1, -1)};
    for (int k = 0; k < 5; ++k)
        d.push_back({centre + 0.5 * ell * diag[k], ell, diag[(k + 1) % 5].normalized()});
    return d;
}

} // namespace stochvortex
