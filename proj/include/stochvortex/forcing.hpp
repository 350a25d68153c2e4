#pragma once

// Problem data (w0, g, nu, T). Spatial fields are either sums of "curl bumps"
// w = curl(A exp(-|x-c|^2 / 2 sigma^2) d), which are divergence-free vortex
// rings, or gridded samples with trilinear interpolation. The forcing is
// separable, g(t, x) = b(t) G(x).

#include "stochvortex/core.hpp"
#include "stochvortex/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace stochvortex {

struct CurlBump {
    double amplitude = 1.0;
    Vec3 centre = Vec3::Zero();
    double sigma = 1.0;
    Vec3 direction = Vec3::UnitZ();

    Vec3 value(const Vec3& x) const {
        const Vec3 r = x - centre;
        const double psi = amplitude * std::exp(-0.5 * r.squaredNorm() / (sigma * sigma));
        return (-psi / (sigma * sigma)) * r.cross(direction);
    }

    /// Closed form of int |value| dx.
    double l1_norm() const { return 2.0 * pi * pi * std::abs(amplitude) * sigma * sigma * direction.norm(); }
};

class SpatialField {
public:
    enum class Kind { zero, bumps, grid };

    static SpatialField zero() { return SpatialField(); }

    static SpatialField bumps(std::vector<CurlBump> b) {
        for (const auto& c : b)
            if (!(c.sigma > 0.0)) throw InvalidParameter("curl bump sigma must be positive");
        SpatialField f;
        f.kind_ = b.empty() ? Kind::zero : Kind::bumps;
        f.bumps_ = std::move(b);
        return f;
    }

    static SpatialField gridded(FieldGrid g) {
        if (g.components() != 3) throw ShapeError("gridded field needs 3 components");
        SpatialField f;
        f.kind_ = Kind::grid;
        f.grid_ = std::make_shared<const FieldGrid>(std::move(g));
        return f;
    }

    Kind kind() const noexcept { return kind_; }
    const std::vector<CurlBump>& bump_list() const noexcept { return bumps_; }
    const FieldGrid& grid() const { return *grid_; }

    /// True when the field is identically zero by construction (no amplitude anywhere).
    bool trivially_zero() const {
        switch (kind_) {
        case Kind::zero: return true;
        case Kind::bumps:
            return std::all_of(bumps_.begin(), bumps_.end(),
                               [](const CurlBump& b) { return b.amplitude == 0.0 || b.direction.isZero(0.0); });
        case Kind::grid:
            return std::all_of(grid_->values().begin(), grid_->values().end(), [](double v) { return v == 0.0; });
        }
        return true;
    }

    Vec3 operator()(const Vec3& x) const {
        switch (kind_) {
        case Kind::zero: return Vec3::Zero();
        case Kind::bumps: {
            Vec3 v = Vec3::Zero();
            for (const auto& b : bumps_) v += b.value(x);
            return v;
        }
        case Kind::grid: return grid_->interpolate(x);
        }
        return Vec3::Zero();
    }

    /// Box outside of which the field is (numerically) zero.
    std::pair<Vec3, Vec3> bounding_box() const {
        if (kind_ == Kind::grid) return {grid_->spec().box_min, grid_->spec().box_max};
        if (bumps_.empty()) return {Vec3::Zero(), Vec3::Zero()};
        Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        Vec3 hi = -lo;
        for (const auto& b : bumps_) {
            lo = lo.cwiseMin(b.centre - Vec3::Constant(reach_sigmas * b.sigma));
            hi = hi.cwiseMax(b.centre + Vec3::Constant(reach_sigmas * b.sigma));
        }
        return {lo, hi};
    }

    static constexpr double reach_sigmas = 6.5;

private:
    Kind kind_ = Kind::zero;
    std::vector<CurlBump> bumps_;
    std::shared_ptr<const FieldGrid> grid_;
};

/// b(t) of the separable forcing.
struct TimeProfile {
    enum class Kind { constant, cosine };
    Kind kind = Kind::constant;
    double frequency = 0.0; // angular
    double phase = 0.0;

    double operator()(double t) const {
        return kind == Kind::constant ? 1.0 : std::cos(frequency * t + phase);
    }

    double sup_abs() const { return 1.0; }

    /// int_0^T |b(t)| dt.
    double abs_integral(double T) const {
        if (T <= 0.0) return 0.0;
        if (kind == Kind::constant) return T;
        return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            [&](double t) { return std::abs((*this)(t)); }, 0.0, T, 20, 1e-13);
    }

    static TimeProfile constant() { return {}; }
    static TimeProfile cosine(double frequency, double phase = 0.0) { return {Kind::cosine, frequency, phase}; }
};

struct ForcingData {
    SpatialField w0;
    SpatialField g_space;
    TimeProfile g_time;
    double T = 1.0;
    double nu = 0.1;

    Vec3 g(double t, const Vec3& x) const {
        const double b = g_time(t);
        return b == 0.0 ? Vec3::Zero() : Vec3(b * g_space(x));
    }

    void validate_scalars() const {
        if (!(T >= 0.0) || !std::isfinite(T)) throw InvalidParameter("horizon T must be >= 0");
        if (!(nu > 0.0) || !std::isfinite(nu)) throw InvalidParameter("viscosity nu must be > 0");
    }
};

/// One curl bump as initial vorticity plus one as forcing profile.
inline ForcingData ring_preset(const CurlBump& w0, const CurlBump& g, TimeProfile profile, double T, double nu) {
    ForcingData d;
    d.w0 = SpatialField::bumps({w0});
    d.g_space = SpatialField::bumps({g});
    d.g_time = profile;
    d.T = T;
    d.nu = nu;
    d.validate_scalars();
    return d;
}

inline ForcingData zero_data(double T, double nu) {
    ForcingData d;
    d.T = T;
    d.nu = nu;
    d.validate_scalars();
    return d;
}

struct NormEstimate {
    double value = 0.0;   // int |f| dx
    double sup = 0.0;     // max |f| over the finest sample lattice
    int cells_per_axis = 0;
    double relative_change = 0.0;
};

namespace detail {

/// Midpoint sum of |f| and max |f| on an m^3 lattice of cells over [lo, hi].
inline std::pair<double, double> midpoint_abs(const SpatialField& f, const Vec3& lo, const Vec3& hi, int m) {
    const Vec3 h = (hi - lo) / m;
    const double vol = h.prod();
    double sum = 0.0, sup = 0.0;
    if (f.kind() == SpatialField::Kind::bumps) {
        // Gaussian factors separate per axis, so tabulate them once per bump.
        const auto& bumps = f.bump_list();
        std::vector<std::array<std::vector<double>, 3>> ex(bumps.size());
        for (std::size_t b = 0; b < bumps.size(); ++b)
            for (int a = 0; a < 3; ++a) {
                ex[b][a].resize(m);
                for (int i = 0; i < m; ++i) {
                    const double d = lo(a) + (i + 0.5) * h(a) - bumps[b].centre(a);
                    ex[b][a][i] = std::exp(-0.5 * d * d / (bumps[b].sigma * bumps[b].sigma));
                }
            }
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                for (int k = 0; k < m; ++k) {
                    const Vec3 x = lo + Vec3((i + 0.5) * h(0), (j + 0.5) * h(1), (k + 0.5) * h(2));
                    Vec3 v = Vec3::Zero();
                    for (std::size_t b = 0; b < bumps.size(); ++b) {
                        const auto& c = bumps[b];
                        const double psi = c.amplitude * ex[b][0][i] * ex[b][1][j] * ex[b][2][k];
                        v += (-psi / (c.sigma * c.sigma)) * (x - c.centre).cross(c.direction);
                    }
                    const double a = v.norm();
                    sum += a;
                    sup = std::max(sup, a);
                }
    } else {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                for (int k = 0; k < m; ++k) {
                    const double a = f(lo + Vec3((i + 0.5) * h(0), (j + 0.5) * h(1), (k + 0.5) * h(2))).norm();
                    sum += a;
                    sup = std::max(sup, a);
                }
    }
    return {sum * vol, sup};
}

/// Midpoint sum of |f| and max |f| for a gridded field with s x s x s sub-cells per
/// data cell. Trilinear weights separate per axis, so each data cell costs s^3 small sums.
inline std::pair<double, double> grid_midpoint_abs(const FieldGrid& g, int s) {
    const auto& spec = g.spec();
    const auto& r = spec.resolution;
    const double vol = spec.spacing().prod() / (static_cast<double>(s) * s * s);
    std::vector<double> w(s);
    for (int i = 0; i < s; ++i) w[i] = (i + 0.5) / s;
    double sum = 0.0, sup = 0.0;
    for (int i = 0; i + 1 < r[0]; ++i)
        for (int j = 0; j + 1 < r[1]; ++j)
            for (int k = 0; k + 1 < r[2]; ++k) {
                Vec3 c[8];
                for (int q = 0; q < 8; ++q) c[q] = g.vec(spec.index(i + (q >> 2), j + ((q >> 1) & 1), k + (q & 1)));
                for (int a = 0; a < s; ++a) {
                    const double fa = w[a];
                    Vec3 e[4];
                    for (int q = 0; q < 4; ++q) e[q] = (1 - fa) * c[q] + fa * c[q + 4];
                    for (int b = 0; b < s; ++b) {
                        const double fb = w[b];
                        const Vec3 lo = (1 - fb) * e[0] + fb * e[2];
                        const Vec3 hi = (1 - fb) * e[1] + fb * e[3];
                        for (int cc = 0; cc < s; ++cc) {
                            const double m = ((1 - w[cc]) * lo + w[cc] * hi).norm();
                            sum += m;
                            sup = std::max(sup, m);
                        }
                    }
                }
            }
    return {sum * vol, sup};
}

} // namespace detail

/// ||f||_1 by tensor-product midpoint quadrature, doubling the lattice until the
/// relative change drops below `rel_tol`. Analytic fields start at 16 cells per axis.
/// Gridded fields refine inside each data cell; |trilinear| gives clean h^2 midpoint
/// errors there, so the estimate is the Richardson value (4 I_{2s} - I_s) / 3 and the
/// change is measured between successive extrapolants.
inline NormEstimate l1_norm(const SpatialField& f, double rel_tol = 1e-5, int max_cells = 512) {
    NormEstimate est;
    if (f.trivially_zero()) return est;
    if (f.kind() == SpatialField::Kind::grid) {
        const auto& r = f.grid().spec().resolution;
        const int data_cells = std::max({r[0], r[1], r[2]}) - 1;
        auto [coarse, sup] = detail::grid_midpoint_abs(f.grid(), 1);
        double prev_extrap = std::numeric_limits<double>::quiet_NaN();
        for (int s = 2;; s *= 2) {
            if (s > 16) {
                throw QuadratureError("l1_norm: gridded field did not converge to " + std::to_string(rel_tol) +
                                      " with 16 sub-cells per data cell");
            }
            const auto [fine, fine_sup] = detail::grid_midpoint_abs(f.grid(), s);
            sup = std::max(sup, fine_sup);
            const double extrap = (4.0 * fine - coarse) / 3.0;
            coarse = fine;
            if (std::isfinite(prev_extrap)) {
                const double change = extrap > 0.0 ? std::abs(extrap - prev_extrap) / extrap : 0.0;
                if (change < rel_tol) {
                    est.value = extrap;
                    est.sup = sup;
                    est.cells_per_axis = s * data_cells;
                    est.relative_change = change;
                    return est;
                }
            }
            prev_extrap = extrap;
        }
    }
    const auto [lo, hi] = f.bounding_box();
    int m = 16;
    auto [prev, sup] = detail::midpoint_abs(f, lo, hi, m);
    while (true) {
        const int next_m = 2 * m;
        if (next_m > max_cells) {
            throw QuadratureError("l1_norm: no convergence to " + std::to_string(rel_tol) + " within " +
                                  std::to_string(max_cells) + " cells per axis");
        }
        const auto [cur, cur_sup] = detail::midpoint_abs(f, lo, hi, next_m);
        const double change = cur > 0.0 ? std::abs(cur - prev) / cur : 0.0;
        m = next_m;
        sup = std::max(sup, cur_sup);
        prev = cur;
        if (change < rel_tol) {
            est.relative_change = change;
            break;
        }
    }
    est.value = prev;
    est.sup = sup;
    est.cells_per_axis = m;
    return est;
}

struct DivergenceReport {
    double sup_divergence = 0.0; // 1/time/length
    double sup_value = 0.0;
    double normalized = 0.0; // sup|div| * h / sup|f|, h the evaluation spacing
    bool passed = true;
};

/// Central-difference divergence of f on the nodes of `grid`. Analytic fields are
/// differenced with a step of 1e-3 of the node spacing; gridded fields use their
/// own nodes, so `grid` is ignored for them.
inline DivergenceReport divergence_check(const SpatialField& f, const GridSpec& grid, double tolerance = 1e-4) {
    DivergenceReport rep;
    if (f.trivially_zero()) return rep;
    if (f.kind() == SpatialField::Kind::grid) {
        const FieldGrid& g = f.grid();
        const auto& s = g.spec();
        const Vec3 h = s.spacing();
        for (std::size_t n = 0; n < g.nodes(); ++n) rep.sup_value = std::max(rep.sup_value, g.vec(n).norm());
        for (int i = 1; i + 1 < s.resolution[0]; ++i)
            for (int j = 1; j + 1 < s.resolution[1]; ++j)
                for (int k = 1; k + 1 < s.resolution[2]; ++k) {
                    const double div = (g.vec(s.index(i + 1, j, k))(0) - g.vec(s.index(i - 1, j, k))(0)) / (2 * h(0)) +
                                       (g.vec(s.index(i, j + 1, k))(1) - g.vec(s.index(i, j - 1, k))(1)) / (2 * h(1)) +
                                       (g.vec(s.index(i, j, k + 1))(2) - g.vec(s.index(i, j, k - 1))(2)) / (2 * h(2));
                    rep.sup_divergence = std::max(rep.sup_divergence, std::abs(div));
                }
        rep.normalized = rep.sup_value > 0.0 ? rep.sup_divergence * h.minCoeff() / rep.sup_value : 0.0;
    } else {
        grid.validate();
        const double spacing = grid.spacing().minCoeff();
        const double step = 1e-3 * spacing;
        for (std::size_t n = 0; n < grid.size(); ++n) {
            const Vec3 x = grid.node(n);
            rep.sup_value = std::max(rep.sup_value, f(x).norm());
            double div = 0.0;
            for (int a = 0; a < 3; ++a) {
                Vec3 xp = x, xm = x;
                xp(a) += step;
                xm(a) -= step;
                div += (f(xp)(a) - f(xm)(a)) / (2.0 * step);
            }
            rep.sup_divergence = std::max(rep.sup_divergence, std::abs(div));
        }
        rep.normalized = rep.sup_value > 0.0 ? rep.sup_divergence * spacing / rep.sup_value : 0.0;
    }
    rep.passed = rep.normalized < tolerance;
    return rep;
}

/// Grid spanning the field's bounding box, used for divergence checks of analytic data.
inline GridSpec evaluation_grid(const SpatialField& f, int resolution = 33) {
    auto [lo, hi] = f.bounding_box();
    if (!(hi.array() > lo.array()).all()) {
        lo = Vec3::Constant(-1.0);
        hi = Vec3::Constant(1.0);
    }
    return GridSpec{lo, hi, {resolution, resolution, resolution}};
}

/// Throws InvalidParameter when w0 or the forcing profile fails the divergence check.
inline void check_data_divergence(const ForcingData& d, double tolerance = 1e-4) {
    d.validate_scalars();
    for (const auto* f : {&d.w0, &d.g_space}) {
        const auto rep = divergence_check(*f, evaluation_grid(*f), tolerance);
        if (!rep.passed) {
            throw InvalidParameter(std::string(f == &d.w0 ? "w0" : "g") + " is not divergence-free: sup|div| h/sup|f| = " +
                                   std::to_string(rep.normalized));
        }
    }
}

} // namespace stochvortex
