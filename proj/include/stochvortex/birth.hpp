#pragma once

// Birth law P0(dt, dx) = (|w0(x)| delta_0(dt) dx + |g(t, x)| dt dx) / hbar and the
// weight h(t, x) = hbar * (w0 or g) / |w0 or g|.

#include "stochvortex/core.hpp"
#include "stochvortex/forcing.hpp"
#include "stochvortex/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

namespace stochvortex {

/// Draws x with density |f(x)| / ||f||_1.
class SpatialSampler {
public:
    SpatialSampler() = default;

    /// `sup` sets the zero threshold: |f| < zero_fraction * sup counts as no density.
    SpatialSampler(const SpatialField& f, double sup) : field_(f), threshold_(zero_fraction * sup) {
        if (f.kind() == SpatialField::Kind::bumps) build_mixture();
        if (f.kind() == SpatialField::Kind::grid) build_cells();
    }

    static constexpr double zero_fraction = 1e-12;
    static constexpr int max_attempts = 10000;
    /// Envelope widening factor for the Gaussian-mixture proposal.
    static constexpr double widening = 1.5;

    double threshold() const noexcept { return threshold_; }

    /// Mean acceptance probability, ||f||_1 / envelope mass. Analytic envelopes only.
    double envelope_mass() const noexcept { return envelope_total_; }

    Vec3 sample(CounterStream& rng) const {
        for (int attempt = 0; attempt < max_attempts; ++attempt) {
            Vec3 x;
            double bound;
            if (field_.kind() == SpatialField::Kind::bumps) {
                const std::size_t j = pick(mixture_cdf_, rng.uniform());
                const auto& c = mixture_[j];
                x = c.mean + c.stddev * rng.normal3();
                bound = 0.0;
                for (const auto& e : mixture_) {
                    const double z2 = (x - e.mean).squaredNorm() / (e.stddev * e.stddev);
                    bound += e.weight * std::exp(-0.5 * z2) /
                             (std::pow(2.0 * pi, 1.5) * e.stddev * e.stddev * e.stddev);
                }
            } else if (field_.kind() == SpatialField::Kind::grid) {
                const std::size_t c = pick(cell_cdf_, rng.uniform());
                const auto& spec = field_.grid().spec();
                const Vec3 h = spec.spacing();
                const auto ijk = cell_origin(c);
                x = spec.box_min + Vec3((ijk[0] + rng.uniform()) * h(0), (ijk[1] + rng.uniform()) * h(1),
                                        (ijk[2] + rng.uniform()) * h(2));
                bound = cell_max_[c];
            } else {
                throw EmptyProblem("cannot sample from a zero field");
            }
            const double a = field_(x).norm();
            if (a < threshold_) continue;
            if (rng.uniform() * bound <= a) return x;
        }
        throw EnvelopeError("rejection sampler exhausted " + std::to_string(max_attempts) + " attempts");
    }

private:
    struct MixtureComponent {
        Vec3 mean;
        double stddev;
        double weight; // mass of the component in the envelope
    };

    static std::size_t pick(const std::vector<double>& cdf, double u) {
        const double target = u * cdf.back();
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
        return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    }

    // |curl bump| <= |A| |d| / sigma^2 * r exp(-r^2 / 2 sigma^2) and
    // r exp(-beta' r^2) <= (2 beta)^{-1/2} e^{-1/2} exp(-r^2 / 2 s^2 sigma^2),
    // beta = (1 - 1/s^2) / (2 sigma^2), so each bump sits under a wider Gaussian.
    void build_mixture() {
        const double s = widening;
        for (const auto& b : field_.bump_list()) {
            if (b.amplitude == 0.0 || b.direction.isZero(0.0)) continue;
            const double sig2 = b.sigma * b.sigma;
            const double beta = (1.0 - 1.0 / (s * s)) / (2.0 * sig2);
            const double norm = std::pow(2.0 * pi * s * s * sig2, 1.5);
            const double C = std::abs(b.amplitude) * b.direction.norm() / sig2 * norm / std::sqrt(2.0 * beta) *
                             std::exp(-0.5);
            mixture_.push_back({b.centre, s * b.sigma, C});
        }
        double acc = 0.0;
        for (const auto& c : mixture_) mixture_cdf_.push_back(acc += c.weight);
        envelope_total_ = acc;
    }

    std::array<int, 3> cell_origin(std::size_t c) const {
        const auto& r = field_.grid().spec().resolution;
        const int k = static_cast<int>(c % (r[2] - 1));
        c /= (r[2] - 1);
        const int j = static_cast<int>(c % (r[1] - 1));
        return {static_cast<int>(c / (r[1] - 1)), j, k};
    }

    // Trilinear interpolation is a convex combination of the corners, so its norm
    // never exceeds the largest corner norm.
    void build_cells() {
        const FieldGrid& g = field_.grid();
        const auto& spec = g.spec();
        const auto& r = spec.resolution;
        const double vol = spec.spacing().prod();
        const std::size_t cells = static_cast<std::size_t>(r[0] - 1) * (r[1] - 1) * (r[2] - 1);
        cell_max_.resize(cells);
        cell_cdf_.resize(cells);
        double acc = 0.0;
        for (std::size_t c = 0; c < cells; ++c) {
            const auto o = cell_origin(c);
            double m = 0.0;
            for (int q = 0; q < 8; ++q)
                m = std::max(m, g.vec(spec.index(o[0] + (q >> 2), o[1] + ((q >> 1) & 1), o[2] + (q & 1))).norm());
            cell_max_[c] = m;
            cell_cdf_[c] = acc += (m >= threshold_ ? m * vol : 0.0);
        }
        envelope_total_ = acc;
    }

    SpatialField field_;
    double threshold_ = 0.0;
    std::vector<MixtureComponent> mixture_;
    std::vector<double> mixture_cdf_;
    std::vector<double> cell_max_;
    std::vector<double> cell_cdf_;
    double envelope_total_ = 0.0;
};

struct BirthLaw {
    std::shared_ptr<const ForcingData> data;
    double hbar = 0.0;
    double w0_norm = 0.0;        // ||w0||_1
    double g_norm = 0.0;         // ||g||_{1,T} = int_0^T |b| dt * ||G||_1
    double p_initial = 0.0;      // ||w0||_1 / hbar
    double w0_sup = 0.0;
    double g_sup = 0.0;          // sup |G|, the time profile has sup 1
    NormEstimate w0_estimate;
    NormEstimate g_estimate;
    SpatialSampler w0_sampler;
    SpatialSampler g_sampler;

    double T() const { return data->T; }
};

struct BirthDraw {
    double tau = 0.0;
    Vec3 x0 = Vec3::Zero();
    Vec3 h = Vec3::Zero();
};

inline BirthLaw build_birth_law(const ForcingData& data, double rel_tol = 1e-5) {
    data.validate_scalars();
    BirthLaw law;
    law.data = std::make_shared<const ForcingData>(data);
    law.w0_estimate = l1_norm(data.w0, rel_tol);
    law.w0_norm = law.w0_estimate.value;
    law.w0_sup = law.w0_estimate.sup;
    const double time_mass = data.g_time.abs_integral(data.T);
    if (time_mass > 0.0) {
        law.g_estimate = l1_norm(data.g_space, rel_tol);
        law.g_norm = time_mass * law.g_estimate.value;
        law.g_sup = law.g_estimate.sup;
    }
    if (law.w0_norm < 0.0 || law.g_norm < 0.0) throw NumericalFailure("negative L1 quadrature");
    law.hbar = law.w0_norm + law.g_norm;
    if (!(law.hbar > 0.0)) throw EmptyProblem("hbar = 0: both w0 and g vanish");
    law.p_initial = law.w0_norm / law.hbar;
    if (law.w0_norm > 0.0) law.w0_sampler = SpatialSampler(data.w0, law.w0_sup);
    if (law.g_norm > 0.0) law.g_sampler = SpatialSampler(data.g_space, law.g_sup);
    return law;
}

/// h(tau, x): hbar times the unit direction of w0 (tau = 0) or g(tau, .) (tau > 0);
/// zero where the relevant density is below the zero threshold.
inline Vec3 weight_vector(const BirthLaw& law, double tau, const Vec3& x) {
    const ForcingData& d = *law.data;
    const Vec3 f = tau == 0.0 ? d.w0(x) : d.g(tau, x);
    const double sup = tau == 0.0 ? law.w0_sup : law.g_sup;
    const double a = f.norm();
    if (a == 0.0 || a < SpatialSampler::zero_fraction * sup) return Vec3::Zero();
    return (law.hbar / a) * f;
}

namespace detail {
inline double sample_birth_time(const BirthLaw& law, CounterStream& rng) {
    const ForcingData& d = *law.data;
    if (d.g_time.kind == TimeProfile::Kind::constant) return d.T * rng.uniform();
    for (int attempt = 0; attempt < SpatialSampler::max_attempts; ++attempt) {
        const double t = d.T * rng.uniform();
        if (rng.uniform() * d.g_time.sup_abs() <= std::abs(d.g_time(t))) return t;
    }
    throw EnvelopeError("birth time sampler exhausted its attempts");
}
} // namespace detail

inline BirthDraw sample_birth(const BirthLaw& law, CounterStream& rng) {
    BirthDraw b;
    if (law.g_norm == 0.0 || rng.uniform() < law.p_initial) {
        b.tau = 0.0;
        b.x0 = law.w0_sampler.sample(rng);
    } else {
        b.tau = detail::sample_birth_time(law, rng);
        b.x0 = law.g_sampler.sample(rng);
    }
    b.h = weight_vector(law, b.tau, b.x0);
    return b;
}

/// Birth of particle `index` from its own counter-based stream.
inline BirthDraw sample_birth(const BirthLaw& law, std::uint64_t seed, std::uint64_t index) {
    CounterStream rng(seed, index, StreamPurpose::birth);
    return sample_birth(law, rng);
}

} // namespace stochvortex
