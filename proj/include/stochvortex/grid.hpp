#pragma once

// Uniform node grids carrying vector samples, plus the FieldGrid file format.
//
// Text layout:
//   stochvortex-fieldgrid 1
//   box_min <x> <y> <z>
//   box_max <x> <y> <z>
//   resolution <nx> <ny> <nz>
//   components <c>
//   <c values of node (0,0,0)>
//   <c values of node (0,0,1)>
//   ...
// Nodes are row-major: (i, j, k) with k fastest.
//
// Binary layout (little-endian): 8-byte magic "SVFGRID1", 6 float64 box
// corners (min then max), 3 int32 resolutions, 1 int32 component count, then
// nx*ny*nz*c float64 values in the same row-major node order.

#include "stochvortex/core.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace stochvortex {

struct GridSpec {
    Vec3 box_min = Vec3::Zero();
    Vec3 box_max = Vec3::Ones();
    std::array<int, 3> resolution{2, 2, 2};

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (resolution[a] < 2) throw ShapeError("grid resolution must be >= 2 on every axis");
            if (!(box_max(a) > box_min(a))) throw ShapeError("grid box must have positive extent");
        }
    }

    std::size_t size() const {
        return static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2];
    }

    Vec3 spacing() const {
        return Vec3((box_max(0) - box_min(0)) / (resolution[0] - 1), (box_max(1) - box_min(1)) / (resolution[1] - 1),
                    (box_max(2) - box_min(2)) / (resolution[2] - 1));
    }

    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * resolution[1] + j) * resolution[2] + k;
    }

    std::array<int, 3> unravel(std::size_t idx) const {
        const int k = static_cast<int>(idx % resolution[2]);
        idx /= resolution[2];
        const int j = static_cast<int>(idx % resolution[1]);
        return {static_cast<int>(idx / resolution[1]), j, k};
    }

    Vec3 node(std::size_t idx) const {
        const auto [i, j, k] = unravel(idx);
        const Vec3 h = spacing();
        return box_min + Vec3(i * h(0), j * h(1), k * h(2));
    }

    /// Trapezoid (cell-volume) weight of a node.
    double weight(std::size_t idx) const {
        const auto ijk = unravel(idx);
        const Vec3 h = spacing();
        double w = 1.0;
        for (int a = 0; a < 3; ++a) w *= (ijk[a] == 0 || ijk[a] == resolution[a] - 1) ? 0.5 * h(a) : h(a);
        return w;
    }

    double volume() const { return (box_max - box_min).prod(); }

    bool operator==(const GridSpec& o) const {
        return box_min == o.box_min && box_max == o.box_max && resolution == o.resolution;
    }
};

class FieldGrid {
public:
    FieldGrid() = default;
    FieldGrid(GridSpec spec, int components = 3) : spec_(std::move(spec)), components_(components) {
        spec_.validate();
        if (components_ < 1) throw ShapeError("field grid needs at least one component");
        values_.assign(spec_.size() * components_, 0.0);
    }

    const GridSpec& spec() const noexcept { return spec_; }
    int components() const noexcept { return components_; }
    std::size_t nodes() const noexcept { return spec_.size(); }
    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    double& at(std::size_t node, int c) { return values_[node * components_ + c]; }
    double at(std::size_t node, int c) const { return values_[node * components_ + c]; }

    Vec3 vec(std::size_t node) const {
        require_vector();
        const double* p = values_.data() + node * 3;
        return Vec3(p[0], p[1], p[2]);
    }
    void set_vec(std::size_t node, const Vec3& v) {
        require_vector();
        double* p = values_.data() + node * 3;
        p[0] = v(0);
        p[1] = v(1);
        p[2] = v(2);
    }

    bool contains(const Vec3& x) const {
        return (x.array() >= spec_.box_min.array()).all() && (x.array() <= spec_.box_max.array()).all();
    }

    /// Trilinear interpolation; zero outside the box.
    Vec3 interpolate(const Vec3& x) const {
        require_vector();
        if (!contains(x)) return Vec3::Zero();
        const Vec3 h = spec_.spacing();
        std::array<int, 3> lo{};
        std::array<double, 3> f{};
        for (int a = 0; a < 3; ++a) {
            const double s = (x(a) - spec_.box_min(a)) / h(a);
            lo[a] = std::min(static_cast<int>(std::floor(s)), spec_.resolution[a] - 2);
            f[a] = s - lo[a];
        }
        Vec3 v = Vec3::Zero();
        for (int c = 0; c < 8; ++c) {
            const int di = c >> 2, dj = (c >> 1) & 1, dk = c & 1;
            const double w = (di ? f[0] : 1 - f[0]) * (dj ? f[1] : 1 - f[1]) * (dk ? f[2] : 1 - f[2]);
            if (w != 0.0) v += w * vec(spec_.index(lo[0] + di, lo[1] + dj, lo[2] + dk));
        }
        return v;
    }

private:
    void require_vector() const {
        if (components_ != 3) throw ShapeError("vector access on a grid with " + std::to_string(components_) +
                                                " components");
    }

    GridSpec spec_;
    int components_ = 3;
    std::vector<double> values_;
};

namespace detail {
inline constexpr char field_grid_magic[8] = {'S', 'V', 'F', 'G', 'R', 'I', 'D', '1'};
inline constexpr const char* field_grid_text_tag = "stochvortex-fieldgrid";

template <class T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}
} // namespace detail

inline void write_field_grid_text(const FieldGrid& g, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    const auto& s = g.spec();
    os << std::setprecision(17);
    os << detail::field_grid_text_tag << " 1\n";
    os << "box_min " << s.box_min(0) << ' ' << s.box_min(1) << ' ' << s.box_min(2) << '\n';
    os << "box_max " << s.box_max(0) << ' ' << s.box_max(1) << ' ' << s.box_max(2) << '\n';
    os << "resolution " << s.resolution[0] << ' ' << s.resolution[1] << ' ' << s.resolution[2] << '\n';
    os << "components " << g.components() << '\n';
    for (std::size_t n = 0; n < g.nodes(); ++n) {
        for (int c = 0; c < g.components(); ++c) os << (c ? " " : "") << g.at(n, c);
        os << '\n';
    }
    if (!os) throw IoError("write failed for " + path);
}

inline void write_field_grid_binary(const FieldGrid& g, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(detail::field_grid_magic, 8);
    const auto& s = g.spec();
    for (int a = 0; a < 3; ++a) detail::write_raw(os, s.box_min(a));
    for (int a = 0; a < 3; ++a) detail::write_raw(os, s.box_max(a));
    for (int a = 0; a < 3; ++a) detail::write_raw(os, static_cast<std::int32_t>(s.resolution[a]));
    detail::write_raw(os, static_cast<std::int32_t>(g.components()));
    os.write(reinterpret_cast<const char*>(g.values().data()),
             static_cast<std::streamsize>(g.values().size() * sizeof(double)));
    if (!os) throw IoError("write failed for " + path);
}

/// Reads either layout; the format is detected from the first bytes.
inline FieldGrid read_field_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char head[8] = {};
    is.read(head, 8);
    if (is.gcount() == 8 && std::memcmp(head, detail::field_grid_magic, 8) == 0) {
        GridSpec s;
        for (int a = 0; a < 3; ++a) s.box_min(a) = detail::read_raw<double>(is);
        for (int a = 0; a < 3; ++a) s.box_max(a) = detail::read_raw<double>(is);
        for (int a = 0; a < 3; ++a) s.resolution[a] = detail::read_raw<std::int32_t>(is);
        const int comps = detail::read_raw<std::int32_t>(is);
        if (!is) throw IoError(path + ": truncated header");
        FieldGrid g(s, comps);
        is.read(reinterpret_cast<char*>(g.values().data()),
                static_cast<std::streamsize>(g.values().size() * sizeof(double)));
        if (!is) throw IoError(path + ": truncated values");
        return g;
    }
    is.clear();
    is.seekg(0);
    std::string tag, key;
    int version = 0;
    is >> tag >> version;
    if (tag != detail::field_grid_text_tag || version != 1) throw IoError(path + ": not a field grid file");
    GridSpec s;
    int comps = 0;
    is >> key >> s.box_min(0) >> s.box_min(1) >> s.box_min(2);
    if (key != "box_min") throw IoError(path + ": expected box_min");
    is >> key >> s.box_max(0) >> s.box_max(1) >> s.box_max(2);
    if (key != "box_max") throw IoError(path + ": expected box_max");
    is >> key >> s.resolution[0] >> s.resolution[1] >> s.resolution[2];
    if (key != "resolution") throw IoError(path + ": expected resolution");
    is >> key >> comps;
    if (key != "components" || !is) throw IoError(path + ": expected components");
    FieldGrid g(s, comps);
    for (auto& v : g.values())
        if (!(is >> v)) throw IoError(path + ": truncated values");
    return g;
}

} // namespace stochvortex
