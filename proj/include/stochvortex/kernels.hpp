#pragma once

// Exact and mollified 3D Biot-Savart kernels.
//
// K(x) = -x / (4 pi |x|^3) acts on a vorticity vector by cross product.
// Mollified kernels K_eps = phi_eps * K are built from a cutoff profile phi
// scaled as phi_eps(x) = eps^-3 phi(x / eps).
//
// Gaussian-mixture profiles (plain, shifted, multi-scale) have a closed form:
// since K is the gradient of the Newtonian potential, convolving with a
// radial density only rescales K by the enclosed mass,
//
//     K_eps(x) = K(x) * q(|x| / eps),   q(rho) = erf(rho/sqrt2) - sqrt(2/pi) rho e^{-rho^2/2}.
//
// Other radial profiles evaluate the enclosed mass by adaptive quadrature.

#include "stochvortex/core.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <array>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace stochvortex {

inline Mat3 skew(const Vec3& w) {
    Mat3 s;
    s << 0.0, -w.z(), w.y(),
         w.z(), 0.0, -w.x(),
         -w.y(), w.x(), 0.0;
    return s;
}

/// K(x) wedge omega for the singular kernel.
inline Vec3 biot_savart(const Vec3& x, const Vec3& omega) {
    const double r2 = x.squaredNorm();
    if (r2 == 0.0) throw SingularityError("biot_savart: kernel is singular at x = 0");
    const double r = std::sqrt(r2);
    return (-inv_four_pi / (r2 * r)) * x.cross(omega);
}

/// Vector part of the singular kernel, K(x) = -x / (4 pi |x|^3).
inline Vec3 biot_savart_kernel(const Vec3& x) {
    const double r2 = x.squaredNorm();
    if (r2 == 0.0) throw SingularityError("biot_savart_kernel: kernel is singular at x = 0");
    const double r = std::sqrt(r2);
    return (-inv_four_pi / (r2 * r)) * x;
}

namespace detail {

inline constexpr double sqrt_two_over_pi = 0.79788456080286535588;

// Radial attenuation of a unit-width Gaussian blob. Returns F(rho) = q(rho)/rho^3
// and D(rho) = F'(rho)/rho, both smooth through rho = 0.
struct BlobRadial {
    double F;
    double D;
};

inline BlobRadial gaussian_blob_radial(double rho) {
    if (rho < 1.0) {
        // F = sqrt(2/pi) sum_k t_k / (2k+3),  t_k = (-s/2)^k / k!,  s = rho^2
        // D = sqrt(2/pi) sum_{k>=1} 2k u_k / (2k+3),  u_k = t_k / s
        const double s = rho * rho;
        double t = 1.0;
        double u = -0.5;
        double F = 1.0 / 3.0;
        double D = 0.0;
        for (int k = 1; k < 18; ++k) {
            t *= -0.5 * s / k;
            const double denom = 2.0 * k + 3.0;
            F += t / denom;
            D += 2.0 * k * u / denom;
            u *= -0.5 * s / (k + 1);
        }
        return {sqrt_two_over_pi * F, sqrt_two_over_pi * D};
    }
    if (rho > 10.0) {
        // erf = 1 and the Gaussian terms are below double rounding.
        const double inv3 = 1.0 / (rho * rho * rho);
        return {inv3, -3.0 * inv3 / (rho * rho)};
    }
    const double g = std::exp(-0.5 * rho * rho);
    const double q = std::erf(rho / std::numbers::sqrt2) - sqrt_two_over_pi * rho * g;
    const double rho2 = rho * rho;
    const double rho3 = rho2 * rho;
    const double F = q / rho3;
    const double D = sqrt_two_over_pi * g / rho2 - 3.0 * q / (rho3 * rho2);
    return {F, D};
}

// Gauss-Legendre nodes on [-1, 1] from boost's positive half.
template <int N>
std::vector<std::array<double, 2>> gauss_legendre_nodes() {
    using rule = boost::math::quadrature::gauss<double, N>;
    const auto& a = rule::abscissa();
    const auto& w = rule::weights();
    std::vector<std::array<double, 2>> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == 0.0) {
            out.push_back({0.0, w[i]});
        } else {
            out.push_back({a[i], w[i]});
            out.push_back({-a[i], w[i]});
        }
    }
    std::sort(out.begin(), out.end(), [](const auto& l, const auto& r) { return l[0] < r[0]; });
    return out;
}

} // namespace detail

/// Smoothing profile phi with unit mass. Gaussian mixtures sum_j c_j G_{s_j}(x - shift)
/// cover the built-in profiles; `radial` accepts any compactly supported radial density.
class CutoffProfile {
public:
    enum class Kind { gaussian, shifted_gaussian, multiscale_gaussian, radial_custom };

    struct Component {
        double weight;
        double scale;
    };

    /// Standard Gaussian, order 2 (first moments vanish by symmetry).
    static CutoffProfile gaussian() {
        CutoffProfile p;
        p.kind_ = Kind::gaussian;
        p.components_ = {{1.0, 1.0}};
        p.order_ = 2;
        return p;
    }

    /// Gaussian centred at `shift` (in units of eps). Non-zero first moment, so order 1 only.
    static CutoffProfile shifted_gaussian(const Vec3& shift) {
        CutoffProfile p = gaussian();
        p.kind_ = Kind::shifted_gaussian;
        p.shift_ = shift;
        p.order_ = shift.squaredNorm() > 0.0 ? 1 : 2;
        return p;
    }

    /// Signed combination of Gaussians at scales 1, 1/2, 1/4, ... whose even moments of
    /// degree 2..m cancel. Odd moments vanish by symmetry, so the result has order
    /// 2*(floor(m/2)+1) >= m+1.
    static CutoffProfile multiscale_gaussian(int m) {
        if (m < 0) throw InvalidParameter("multiscale_gaussian: m must be >= 0");
        const int conditions = m / 2; // even degrees 2, 4, ..., 2*conditions
        const int count = conditions + 1;
        Eigen::MatrixXd A(count, count);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(count);
        std::vector<double> scales(count);
        for (int j = 0; j < count; ++j) scales[j] = std::ldexp(1.0, -j);
        for (int l = 0; l < count; ++l)
            for (int j = 0; j < count; ++j) A(l, j) = std::pow(scales[j], 2.0 * l);
        b(0) = 1.0;
        const Eigen::VectorXd c = A.fullPivLu().solve(b);
        CutoffProfile p;
        p.kind_ = Kind::multiscale_gaussian;
        for (int j = 0; j < count; ++j) p.components_.push_back({c(j), scales[j]});
        p.order_ = 2 * (conditions + 1);
        return p;
    }

    /// Radial density on |x| < support, normalised here to unit mass.
    static CutoffProfile radial(std::function<double(double)> density, double support, int order,
                                std::string label = "radial") {
        if (!(support > 0.0)) throw InvalidParameter("radial profile: support must be positive");
        CutoffProfile p;
        p.kind_ = Kind::radial_custom;
        p.support_ = support;
        p.order_ = order;
        p.label_ = std::move(label);
        auto raw = std::make_shared<std::function<double(double)>>(std::move(density));
        const double mass = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            [&](double r) { return 4.0 * pi * r * r * (*raw)(r); }, 0.0, support, 12, 1e-14);
        if (!(mass > 0.0)) throw InvalidParameter("radial profile: density has no mass");
        p.radial_density_ = [raw, mass](double r) { return (*raw)(r) / mass; };
        return p;
    }

    Kind kind() const noexcept { return kind_; }
    int order() const noexcept { return order_; }
    const Vec3& shift() const noexcept { return shift_; }
    const std::vector<Component>& components() const noexcept { return components_; }
    bool is_gaussian_mixture() const noexcept { return kind_ != Kind::radial_custom; }
    bool is_radial() const noexcept { return shift_.squaredNorm() == 0.0; }

    std::string name() const {
        switch (kind_) {
        case Kind::gaussian: return "gaussian";
        case Kind::shifted_gaussian: return "shifted_gaussian";
        case Kind::multiscale_gaussian: return "multiscale_gaussian";
        case Kind::radial_custom: return label_;
        }
        return "unknown";
    }

    /// Support radius around shift(); infinite for Gaussian mixtures.
    double support_radius() const noexcept {
        return is_gaussian_mixture() ? std::numeric_limits<double>::infinity() : support_;
    }

    /// Radius around shift() beyond which the profile is numerically zero.
    double extent() const noexcept {
        if (!is_gaussian_mixture()) return support_;
        double s = 0.0;
        for (const auto& c : components_) s = std::max(s, c.scale);
        return 12.0 * s;
    }

    double radial_value(double r) const {
        if (!is_gaussian_mixture()) return r < support_ ? radial_density_(r) : 0.0;
        double v = 0.0;
        for (const auto& c : components_) {
            const double z = r / c.scale;
            v += c.weight * std::exp(-0.5 * z * z) / (c.scale * c.scale * c.scale);
        }
        return v * 0.063493635934240969785; // (2 pi)^{-3/2}
    }

    double operator()(const Vec3& x) const { return radial_value((x - shift_).norm()); }

    /// Fourier transform  phi^(k) = int phi(x) e^{-i k.x} dx.
    std::complex<double> fourier(const Vec3& k) const {
        const double k2 = k.squaredNorm();
        std::complex<double> radial_part;
        if (is_gaussian_mixture()) {
            double v = 0.0;
            for (const auto& c : components_) v += c.weight * std::exp(-0.5 * c.scale * c.scale * k2);
            radial_part = v;
        } else {
            const double kk = std::sqrt(k2);
            radial_part = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                [&](double r) {
                    const double kr = kk * r;
                    const double sinc = kr < 1e-8 ? 1.0 - kr * kr / 6.0 : std::sin(kr) / kr;
                    return 4.0 * pi * r * r * radial_density_(r) * sinc;
                },
                0.0, support_, 12, 1e-13);
        }
        const double phase = -k.dot(shift_);
        return radial_part * std::complex<double>(std::cos(phase), std::sin(phase));
    }

    /// Mass of the radial density inside radius rho (profile units).
    double enclosed_mass(double rho) const {
        if (rho <= 0.0) return 0.0;
        if (is_gaussian_mixture()) {
            double m = 0.0;
            for (const auto& c : components_) {
                const double z = rho / c.scale;
                const double q = std::erf(z / std::numbers::sqrt2) -
                                 detail::sqrt_two_over_pi * z * std::exp(-0.5 * z * z);
                m += c.weight * q;
            }
            return m;
        }
        const double upper = std::min(rho, support_);
        return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
            [&](double r) { return 4.0 * pi * r * r * radial_density_(r); }, 0.0, upper, 15, 1e-14);
    }

private:
    Kind kind_ = Kind::gaussian;
    std::vector<Component> components_;
    Vec3 shift_ = Vec3::Zero();
    double support_ = 0.0;
    int order_ = 1;
    std::string label_;
    std::function<double(double)> radial_density_;
};

/// phi_eps(x) = eps^-3 phi(x / eps).
inline double mollifier_eval(const CutoffProfile& profile, double epsilon, const Vec3& x) {
    if (!(epsilon > 0.0)) throw InvalidParameter("mollifier_eval: epsilon must be positive");
    return profile(x / epsilon) / (epsilon * epsilon * epsilon);
}

/// Tensor-product rule on a ball around the profile centre: Gauss-Legendre radial
/// panels, Gauss-Legendre in cos(theta), trapezoid in azimuth. Nodes are in profile
/// units; weights already include r^2 sin(theta).
class SphericalRule {
public:
    struct Node {
        Vec3 offset; // unit-free position relative to profile centre
        double weight;
    };

    SphericalRule(double radius, int radial_panels, int azimuth_points, bool fine_polar = true) {
        const auto radial = detail::gauss_legendre_nodes<16>();
        const auto polar = fine_polar ? detail::gauss_legendre_nodes<40>() : detail::gauss_legendre_nodes<20>();
        const double panel = radius / radial_panels;
        const double dphi = 2.0 * pi / azimuth_points;
        for (int p = 0; p < radial_panels; ++p) {
            const double a = p * panel;
            for (const auto& [xr, wr] : radial) {
                const double r = a + 0.5 * panel * (xr + 1.0);
                const double w_r = 0.5 * panel * wr * r * r;
                for (const auto& [ct, wt] : polar) {
                    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
                    for (int k = 0; k < azimuth_points; ++k) {
                        const double ph = (k + 0.5) * dphi;
                        nodes_.push_back({Vec3(r * st * std::cos(ph), r * st * std::sin(ph), r * ct),
                                          w_r * wt * dphi});
                    }
                }
            }
        }
    }

    /// Default resolution for moment checks of a given profile.
    static SphericalRule for_profile(const CutoffProfile& profile, int refinement = 1) {
        return SphericalRule(profile.extent(), 12 * refinement, 48 * refinement, true);
    }

    const std::vector<Node>& nodes() const noexcept { return nodes_; }

private:
    std::vector<Node> nodes_;
};

/// (phi_eps * f)(x) = int phi(z) f(x - eps z) dz by the spherical rule.
template <class F>
auto mollify(const CutoffProfile& profile, double epsilon, F&& f, const Vec3& x, const SphericalRule& rule) {
    if (!(epsilon > 0.0)) throw InvalidParameter("mollify: epsilon must be positive");
    using Value = std::decay_t<decltype(f(x))>;
    Value acc;
    if constexpr (std::is_same_v<Value, Vec3>)
        acc = Vec3::Zero();
    else
        acc = 0.0;
    const Vec3& c = profile.shift();
    for (const auto& node : rule.nodes()) {
        const Vec3 z = c + node.offset;
        const double w = node.weight * profile.radial_value(node.offset.norm());
        if (w == 0.0) continue;
        acc += w * f(x - epsilon * z);
    }
    return acc;
}

/// Value and Jacobian of the vector kernel at one point.
struct KernelSample {
    Vec3 K;
    Mat3 J;
};

/// K_eps(x) = alpha y and grad K_eps(x) = alpha I + beta y y^T with y = x - eps * shift;
/// every supported profile is radial about its shift.
struct RadialCoefficients {
    Vec3 y;
    double alpha;
    double beta;
};

/// K_eps = phi_eps * K for a given profile and scale.
class MollifiedKernel {
public:
    MollifiedKernel(CutoffProfile profile, double epsilon) : profile_(std::move(profile)), epsilon_(epsilon) {
        if (!(epsilon_ > 0.0)) throw InvalidParameter("MollifiedKernel: epsilon must be positive");
    }

    const CutoffProfile& profile() const noexcept { return profile_; }
    double epsilon() const noexcept { return epsilon_; }

    RadialCoefficients coefficients(const Vec3& x) const {
        const Vec3 y = x - epsilon_ * profile_.shift();
        if (profile_.is_gaussian_mixture()) {
            const double r = y.norm();
            double alpha = 0.0, beta = 0.0;
            for (const auto& c : profile_.components()) {
                const double e = epsilon_ * c.scale;
                const auto rad = detail::gaussian_blob_radial(r / e);
                const double pre = -c.weight * inv_four_pi / (e * e * e);
                alpha += pre * rad.F;
                beta += pre * rad.D / (e * e);
            }
            return {y, alpha, beta};
        }
        // alpha(r) = -m(r / eps) / (4 pi r^3) with m the enclosed mass; beta = alpha'(r) / r.
        const double r = y.norm();
        const double h = 1e-4 * epsilon_;
        if (r < 2.0 * h) {
            const double a0 = -profile_.radial_value(0.0) / (3.0 * epsilon_ * epsilon_ * epsilon_);
            return {y, a0, 0.0};
        }
        const double da = (radial_alpha(r + h) - radial_alpha(r - h)) / (2.0 * h);
        return {y, radial_alpha(r), da / r};
    }

    /// K_eps(x) and its Jacobian.
    KernelSample sample(const Vec3& x) const {
        const auto c = coefficients(x);
        return {c.alpha * c.y, c.alpha * Mat3::Identity() + c.beta * (c.y * c.y.transpose())};
    }

    Vec3 vector_kernel(const Vec3& x) const {
        const auto c = coefficients(x);
        return c.alpha * c.y;
    }

    /// K_eps(x) wedge omega.
    Vec3 eval(const Vec3& x, const Vec3& omega) const { return term_u(coefficients(x), omega); }

    /// Jacobian in x of eval(., omega); entry (i, j) is d/dx_j of component i.
    Mat3 grad(const Vec3& x, const Vec3& omega) const { return term_grad(coefficients(x), omega); }

    /// eval and grad from one coefficient evaluation, bitwise equal to the separate calls.
    std::pair<Vec3, Mat3> eval_grad(const Vec3& x, const Vec3& omega) const {
        const auto c = coefficients(x);
        return {term_u(c, omega), term_grad(c, omega)};
    }

private:
    static Vec3 term_u(const RadialCoefficients& c, const Vec3& omega) { return c.alpha * c.y.cross(omega); }

    // -skew(omega) (alpha I + beta y y^T) = -alpha skew(omega) - beta (omega x y) y^T
    static Mat3 term_grad(const RadialCoefficients& c, const Vec3& omega) {
        return -c.alpha * skew(omega) - c.beta * (omega.cross(c.y) * c.y.transpose());
    }

    double radial_alpha(double r) const {
        const double rho = r / epsilon_;
        if (rho < 1e-4) return -profile_.radial_value(0.0) / (3.0 * epsilon_ * epsilon_ * epsilon_);
        return -inv_four_pi * profile_.enclosed_mass(rho) / (r * r * r);
    }

    CutoffProfile profile_;
    double epsilon_;
};

struct KernelBounds {
    double M_eps; // sup |K_eps|
    double L_eps; // sup of the Jacobian operator norm (a Lipschitz constant)
};

/// Sup norms of K_eps and of its Jacobian by dense radial sampling around the profile centre.
inline KernelBounds kernel_bounds(const MollifiedKernel& kernel, int samples = 4000) {
    const double eps = kernel.epsilon();
    const Vec3 centre = eps * kernel.profile().shift();
    const double reach = 12.0 * eps * std::max(1.0, kernel.profile().is_gaussian_mixture()
                                                        ? 1.0
                                                        : kernel.profile().support_radius());
    std::vector<Vec3> directions{Vec3::UnitX()};
    if (!kernel.profile().is_radial()) {
        directions = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitX(), -Vec3::UnitY(),
                      -Vec3::UnitZ(), Vec3(1, 1, 1).normalized(), Vec3(-1, 1, -1).normalized()};
    }
    KernelBounds b{0.0, 0.0};
    for (const auto& d : directions) {
        for (int i = 0; i <= samples; ++i) {
            const double r = reach * i / samples;
            const auto s = kernel.sample(centre + r * d);
            b.M_eps = std::max(b.M_eps, s.K.norm());
            Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (s.J + s.J.transpose()), Eigen::EigenvaluesOnly);
            b.L_eps = std::max(b.L_eps, es.eigenvalues().cwiseAbs().maxCoeff());
        }
    }
    return b;
}

struct MomentEntry {
    std::array<int, 3> exponents;
    double value;
};

struct CutoffOrderReport {
    bool satisfied = false;
    int m = 0;
    double mass = 0.0;
    std::vector<MomentEntry> moments; // all mixed moments of total degree 1..m
    double absolute_moment = 0.0;     // int |x|^{m+1} |phi|
    std::string summary;
};

/// Checks the order-(m+1) cutoff conditions: unit mass, vanishing mixed moments of
/// degree 1..m, finite (m+1)-th absolute moment. Tolerances are 1e-8 absolute.
inline CutoffOrderReport check_cutoff_order(const CutoffProfile& profile, int m, double tolerance = 1e-8) {
    if (m < 0) throw InvalidParameter("check_cutoff_order: m must be >= 0");
    std::vector<std::array<int, 3>> exps;
    for (int deg = 1; deg <= m; ++deg)
        for (int a = deg; a >= 0; --a)
            for (int b = deg - a; b >= 0; --b) exps.push_back({a, b, deg - a - b});

    auto integrate = [&](const SphericalRule& rule, std::vector<double>& moments, double& abs_moment) {
        double mass = 0.0;
        moments.assign(exps.size(), 0.0);
        abs_moment = 0.0;
        const Vec3& c = profile.shift();
        for (const auto& node : rule.nodes()) {
            const double phi = profile.radial_value(node.offset.norm());
            if (phi == 0.0) continue;
            const double w = node.weight * phi;
            const Vec3 x = c + node.offset;
            mass += w;
            for (std::size_t e = 0; e < exps.size(); ++e) {
                const auto& ex = exps[e];
                moments[e] += w * std::pow(x.x(), ex[0]) * std::pow(x.y(), ex[1]) * std::pow(x.z(), ex[2]);
            }
            abs_moment += std::abs(w) * std::pow(x.norm(), m + 1);
        }
        return mass;
    };

    std::vector<double> coarse_m, fine_m;
    double coarse_abs = 0.0, fine_abs = 0.0;
    const double coarse_mass = integrate(SphericalRule(profile.extent(), 6, 24, false), coarse_m, coarse_abs);
    const double fine_mass = integrate(SphericalRule::for_profile(profile), fine_m, fine_abs);
    if (!std::isfinite(fine_mass) || std::abs(fine_mass - coarse_mass) > 1e-9)
        throw QuadratureError("check_cutoff_order: quadrature did not converge (mass " +
                              std::to_string(coarse_mass) + " vs " + std::to_string(fine_mass) + ")");

    CutoffOrderReport rep;
    rep.m = m;
    rep.mass = fine_mass;
    rep.absolute_moment = fine_abs;
    bool ok = std::abs(fine_mass - 1.0) < tolerance && std::isfinite(fine_abs);
    for (std::size_t e = 0; e < exps.size(); ++e) {
        rep.moments.push_back({exps[e], fine_m[e]});
        if (std::abs(fine_m[e]) >= tolerance) ok = false;
    }
    rep.satisfied = ok;
    rep.summary = profile.name() + (ok ? " satisfies" : " fails") + " order " + std::to_string(m + 1) +
                  " conditions (mass " + std::to_string(fine_mass) + ")";
    return rep;
}

} // namespace stochvortex
