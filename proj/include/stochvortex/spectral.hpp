#pragma once

// Periodic box [-L, L)^3 with N_a nodes per axis. A SpectralField stores Fourier
// series coefficients c_k of each component, f(x) = sum_k c_k exp(i k.(x + L)),
// with k = (pi / L) m and m in FFT order. The Nyquist plane is always zero.

#include "stochvortex/core.hpp"
#include "stochvortex/forcing.hpp"
#include "stochvortex/grid.hpp"
#include "stochvortex/kernels.hpp"
#include "stochvortex/parallel.hpp"

#include <fftw3.h>

#include <array>
#include <complex>
#include <concepts>
#include <memory>
#include <vector>

namespace stochvortex {

using cplx = std::complex<double>;

/// Real wavevector times complex amplitude. Eigen's cross() conjugates complex results.
inline Eigen::Vector3cd kcross(const Vec3& k, const Eigen::Vector3cd& v) {
    return Eigen::Vector3cd(k(1) * v(2) - k(2) * v(1), k(2) * v(0) - k(0) * v(2), k(0) * v(1) - k(1) * v(0));
}

struct SpectralGrid {
    double L = 8.0;
    std::array<int, 3> N{32, 32, 32};

    void validate() const {
        if (!(L > 0.0)) throw InvalidParameter("spectral box half-width must be > 0");
        for (int n : N)
            if (n < 4 || n % 2 != 0) throw InvalidParameter("spectral modes must be even and >= 4");
    }

    std::size_t size() const { return static_cast<std::size_t>(N[0]) * N[1] * N[2]; }
    double spacing(int a) const { return 2.0 * L / N[a]; }
    double cell_volume() const { return spacing(0) * spacing(1) * spacing(2); }

    std::array<int, 3> unravel(std::size_t idx) const {
        const int k = static_cast<int>(idx % N[2]);
        idx /= N[2];
        const int j = static_cast<int>(idx % N[1]);
        return {static_cast<int>(idx / N[1]), j, k};
    }

    /// Signed integer wavenumber m of FFT index i on axis a; 0 for the Nyquist index.
    int signed_mode(int a, int i) const {
        if (2 * i == N[a]) return 0;
        return 2 * i < N[a] ? i : i - N[a];
    }

    bool is_nyquist(std::size_t idx) const {
        const auto ijk = unravel(idx);
        for (int a = 0; a < 3; ++a)
            if (2 * ijk[a] == N[a]) return true;
        return false;
    }

    Vec3 wavevector(std::size_t idx) const {
        const auto ijk = unravel(idx);
        const double base = pi / L;
        return Vec3(base * signed_mode(0, ijk[0]), base * signed_mode(1, ijk[1]), base * signed_mode(2, ijk[2]));
    }

    /// 2/3-rule: keep modes with 3|m_a| < N_a on every axis.
    bool kept(std::size_t idx) const {
        if (is_nyquist(idx)) return false;
        const auto ijk = unravel(idx);
        for (int a = 0; a < 3; ++a)
            if (3 * std::abs(signed_mode(a, ijk[a])) >= N[a]) return false;
        return true;
    }

    Vec3 node(std::size_t idx) const {
        const auto ijk = unravel(idx);
        return Vec3(-L + spacing(0) * ijk[0], -L + spacing(1) * ijk[1], -L + spacing(2) * ijk[2]);
    }

    /// Node lattice as a FieldGrid spec (the periodic image at +L is not included).
    GridSpec node_spec() const {
        return GridSpec{Vec3::Constant(-L), Vec3(L - spacing(0), L - spacing(1), L - spacing(2)), N};
    }

    /// Index of the mirrored wavenumber -k.
    std::size_t mirror(std::size_t idx) const {
        const auto ijk = unravel(idx);
        const int i = (N[0] - ijk[0]) % N[0], j = (N[1] - ijk[1]) % N[1], k = (N[2] - ijk[2]) % N[2];
        return (static_cast<std::size_t>(i) * N[1] + j) * N[2] + k;
    }

    bool operator==(const SpectralGrid& o) const { return L == o.L && N == o.N; }
};

struct SpectralField {
    SpectralGrid grid;
    std::array<std::vector<cplx>, 3> c;

    SpectralField() = default;
    explicit SpectralField(const SpectralGrid& g) : grid(g) {
        for (auto& v : c) v.assign(g.size(), cplx(0.0, 0.0));
    }

    SpectralField& operator+=(const SpectralField& o) {
        for (int a = 0; a < 3; ++a)
            for (std::size_t i = 0; i < c[a].size(); ++i) c[a][i] += o.c[a][i];
        return *this;
    }
    SpectralField& operator-=(const SpectralField& o) {
        for (int a = 0; a < 3; ++a)
            for (std::size_t i = 0; i < c[a].size(); ++i) c[a][i] -= o.c[a][i];
        return *this;
    }
    SpectralField& operator*=(double s) {
        for (auto& v : c)
            for (auto& z : v) z *= s;
        return *this;
    }

    Eigen::Vector3cd mode(std::size_t idx) const { return Eigen::Vector3cd(c[0][idx], c[1][idx], c[2][idx]); }
    void set_mode(std::size_t idx, const Eigen::Vector3cd& v) {
        c[0][idx] = v(0);
        c[1][idx] = v(1);
        c[2][idx] = v(2);
    }

    /// Grid L2 norm, sqrt(h^3 sum_n |f(x_n)|^2), by Parseval.
    double l2_norm() const {
        double s = 0.0;
        for (const auto& v : c)
            for (const auto& z : v) s += std::norm(z);
        return std::sqrt(s * std::pow(2.0 * grid.L, 3));
    }

    /// Point evaluation of the Fourier series (real part).
    Vec3 evaluate(const Vec3& x) const {
        Vec3 out = Vec3::Zero();
        const Vec3 y = x + Vec3::Constant(grid.L);
        for (std::size_t idx = 0; idx < grid.size(); ++idx) {
            if (c[0][idx] == 0.0 && c[1][idx] == 0.0 && c[2][idx] == 0.0) continue;
            const double ph = grid.wavevector(idx).dot(y);
            const cplx e(std::cos(ph), std::sin(ph));
            for (int a = 0; a < 3; ++a) out(a) += (c[a][idx] * e).real();
        }
        return out;
    }
};

inline SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
inline SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }

/// Any in-place 3-D complex transform over the grid's node lattice. `forward` is
/// the unnormalised exp(-i) DFT, `inverse` the unnormalised exp(+i) one.
template <class T>
concept Transform3D = requires(const T t, cplx* data) {
    { t.forward(data) };
    { t.inverse(data) };
};

class FftwTransform {
public:
    explicit FftwTransform(const SpectralGrid& g) : size_(g.size()) {
        std::vector<cplx> scratch(size_);
        auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        fwd_ = std::shared_ptr<fftw_plan_s>(fftw_plan_dft_3d(g.N[0], g.N[1], g.N[2], p, p, FFTW_FORWARD, flags),
                                            fftw_destroy_plan);
        inv_ = std::shared_ptr<fftw_plan_s>(fftw_plan_dft_3d(g.N[0], g.N[1], g.N[2], p, p, FFTW_BACKWARD, flags),
                                            fftw_destroy_plan);
        if (!fwd_ || !inv_) throw NumericalFailure("FFTW could not create a plan");
    }

    void forward(cplx* data) const { fftw_execute_dft(fwd_.get(), as_fftw(data), as_fftw(data)); }
    void inverse(cplx* data) const { fftw_execute_dft(inv_.get(), as_fftw(data), as_fftw(data)); }

private:
    static fftw_complex* as_fftw(cplx* d) { return reinterpret_cast<fftw_complex*>(d); }
    std::size_t size_;
    std::shared_ptr<fftw_plan_s> fwd_, inv_;
};

static_assert(Transform3D<FftwTransform>);

/// Real node samples of each component.
using NodeField = std::array<std::vector<double>, 3>;

template <Transform3D Tr>
NodeField to_nodes(const SpectralField& f, const Tr& tr) {
    NodeField out;
    std::vector<cplx> buf;
    for (int a = 0; a < 3; ++a) {
        buf = f.c[a];
        tr.inverse(buf.data());
        out[a].resize(buf.size());
        for (std::size_t i = 0; i < buf.size(); ++i) out[a][i] = buf[i].real();
    }
    return out;
}

template <Transform3D Tr>
SpectralField from_nodes(const NodeField& nodes, const SpectralGrid& g, const Tr& tr) {
    SpectralField f(g);
    const double inv = 1.0 / static_cast<double>(g.size());
    for (int a = 0; a < 3; ++a) {
        for (std::size_t i = 0; i < g.size(); ++i) f.c[a][i] = cplx(nodes[a][i] * inv, 0.0);
        tr.forward(f.c[a].data());
    }
    return f;
}

/// Zero every mode outside the 2/3-rule band.
inline void dealias(SpectralField& f) {
    for (std::size_t i = 0; i < f.grid.size(); ++i)
        if (!f.grid.kept(i))
            for (auto& v : f.c) v[i] = 0.0;
}

/// Leray projection c - k (k.c)/|k|^2; the mean (k = 0) is left alone.
inline void project_solenoidal(SpectralField& f) {
    for (std::size_t i = 0; i < f.grid.size(); ++i) {
        const Vec3 k = f.grid.wavevector(i);
        const double k2 = k.squaredNorm();
        if (k2 == 0.0) continue;
        const Eigen::Vector3cd v = f.mode(i);
        const cplx kv = k(0) * v(0) + k(1) * v(1) + k(2) * v(2);
        f.set_mode(i, v - (kv / k2) * k.cast<cplx>());
    }
}

/// sqrt(sum |k.c|^2) / sqrt(sum |k|^2 |c|^2); zero for the zero field.
inline double divergence_defect(const SpectralField& f) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < f.grid.size(); ++i) {
        const Vec3 k = f.grid.wavevector(i);
        const Eigen::Vector3cd v = f.mode(i);
        num += std::norm(k(0) * v(0) + k(1) * v(1) + k(2) * v(2));
        den += k.squaredNorm() * v.squaredNorm();
    }
    return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

/// max |c(-k) - conj c(k)| relative to max |c|.
inline double reality_defect(const SpectralField& f) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < f.grid.size(); ++i) {
        const std::size_t j = f.grid.mirror(i);
        for (int a = 0; a < 3; ++a) {
            num = std::max(num, std::abs(f.c[a][j] - std::conj(f.c[a][i])));
            den = std::max(den, std::abs(f.c[a][i]));
        }
    }
    return den > 0.0 ? num / den : 0.0;
}

/// Samples a spatial field at the nodes and transforms it; the result is dealiased
/// and projected so that discrete divergence-freeness holds exactly.
template <Transform3D Tr>
SpectralField sample_field(const SpatialField& f, const SpectralGrid& g, const Tr& tr, int workers = 1) {
    NodeField nodes;
    for (auto& v : nodes) v.assign(g.size(), 0.0);
    if (!f.trivially_zero()) {
        parallel_for(g.size(), workers, [&](std::size_t i) {
            const Vec3 v = f(g.node(i));
            for (int a = 0; a < 3; ++a) nodes[a][i] = v(a);
        });
    }
    SpectralField out = from_nodes(nodes, g, tr);
    dealias(out);
    project_solenoidal(out);
    return out;
}

/// Export to the FieldGrid format on the node lattice.
template <Transform3D Tr>
FieldGrid export_field(const SpectralField& f, const Tr& tr) {
    const NodeField nodes = to_nodes(f, tr);
    FieldGrid out(f.grid.node_spec(), 3);
    for (std::size_t i = 0; i < f.grid.size(); ++i) out.set_vec(i, Vec3(nodes[0][i], nodes[1][i], nodes[2][i]));
    return out;
}

/// Heat semigroup G_t: multiply by exp(-nu |k|^2 t).
inline SpectralField heat_semigroup(SpectralField w, double t, double nu) {
    if (t < 0.0) throw InvalidParameter("heat_semigroup: t must be >= 0");
    for (std::size_t i = 0; i < w.grid.size(); ++i) {
        const double f = std::exp(-nu * w.grid.wavevector(i).squaredNorm() * t);
        for (auto& v : w.c) v[i] *= f;
    }
    return w;
}

/// Multiplier phi^(eps k); eps = 0 means no mollification.
inline std::vector<cplx> mollifier_symbol(const SpectralGrid& g, const CutoffProfile& profile, double eps) {
    std::vector<cplx> m(g.size(), cplx(1.0, 0.0));
    if (eps == 0.0) return m;
    if (eps < 0.0) throw InvalidParameter("mollifier scale must be >= 0");
    for (std::size_t i = 0; i < g.size(); ++i) m[i] = profile.fourier(eps * g.wavevector(i));
    return m;
}

inline SpectralField apply_symbol(SpectralField f, const std::vector<cplx>& symbol) {
    for (auto& v : f.c)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] *= symbol[i];
    return f;
}

/// Velocity of a vorticity field: u^ = phi^(eps k) i k x w^ / |k|^2, u^(0) = 0.
inline SpectralField biot_savart_spectral(const SpectralField& w, const std::vector<cplx>& symbol) {
    SpectralField u(w.grid);
    const cplx I(0.0, 1.0);
    for (std::size_t i = 0; i < w.grid.size(); ++i) {
        const Vec3 k = w.grid.wavevector(i);
        const double k2 = k.squaredNorm();
        if (k2 == 0.0) continue;
        const Eigen::Vector3cd v = w.mode(i);
        u.set_mode(i, (I * symbol[i] / k2) * kcross(k, v));
    }
    return u;
}

inline SpectralField biot_savart_spectral(const SpectralField& w) {
    return biot_savart_spectral(w, std::vector<cplx>(w.grid.size(), cplx(1.0, 0.0)));
}

/// Curl, i k x f^.
inline SpectralField curl_spectral(const SpectralField& f) {
    SpectralField out(f.grid);
    const cplx I(0.0, 1.0);
    for (std::size_t i = 0; i < f.grid.size(); ++i) {
        out.set_mode(i, I * kcross(f.grid.wavevector(i), f.mode(i)));
    }
    return out;
}

/// Fraction of the node energy sum |f|^2 in the outer shell max_a |x_a| > 3L/4.
template <Transform3D Tr>
double outer_shell_fraction(const SpectralField& f, const Tr& tr) {
    const NodeField n = to_nodes(f, tr);
    double outer = 0.0, total = 0.0;
    for (std::size_t i = 0; i < f.grid.size(); ++i) {
        const double e = n[0][i] * n[0][i] + n[1][i] * n[1][i] + n[2][i] * n[2][i];
        total += e;
        if (f.grid.node(i).cwiseAbs().maxCoeff() > 0.75 * f.grid.L) outer += e;
    }
    return total > 0.0 ? outer / total : 0.0;
}

} // namespace stochvortex
