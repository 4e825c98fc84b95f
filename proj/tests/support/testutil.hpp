#pragma once

#include <cmath>
#include <vector>

#include "dyntomo/rng.hpp"
#include "dyntomo/types.hpp"

namespace dyntomo::testutil {

inline Image2D random_image(const Grid2D& g, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Image2D img(g);
    auto eng = make_engine(seed);
    for (double& v : img.v) v = uniform(eng, lo, hi);
    return img;
}

inline VectorField2D random_field(const Grid2D& g, std::uint64_t seed, double amp = 1.0) {
    VectorField2D f(g);
    auto eng = make_engine(seed);
    for (double& v : f.x) v = uniform(eng, -amp, amp);
    for (double& v : f.y) v = uniform(eng, -amp, amp);
    return f;
}

/// Smooth random field: random low-frequency Fourier modes, zero near the rim.
inline VectorField2D smooth_field(const Grid2D& g, std::uint64_t seed, double amp) {
    VectorField2D f(g);
    auto eng = make_engine(seed);
    const double a1 = uniform(eng, -1.0, 1.0), a2 = uniform(eng, -1.0, 1.0);
    const double b1 = uniform(eng, -1.0, 1.0), b2 = uniform(eng, -1.0, 1.0);
    const double p1 = uniform(eng, 0.0, 6.28), p2 = uniform(eng, 0.0, 6.28);
    const double Lx = g.nx * g.spacing, Ly = g.ny * g.spacing;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
            const double x = g.x(ix), y = g.y(iy);
            const double wx = std::cos(2 * 3.14159265358979 * x / Lx + p1);
            const double wy = std::sin(2 * 3.14159265358979 * y / Ly + p2);
            // taper to zero towards the boundary
            const double tx = 0.5 * (1 - std::cos(2 * 3.14159265358979 * (ix + 0.5) / g.nx));
            const double ty = 0.5 * (1 - std::cos(2 * 3.14159265358979 * (iy + 0.5) / g.ny));
            f.x[i] = amp * (a1 * wx + a2 * wy) * tx * ty;
            f.y[i] = amp * (b1 * wy + b2 * wx) * tx * ty;
        }
    }
    return f;
}

/// Disc indicator rasterised with 3x3 subpixel averaging (soft edge).
inline Image2D disc_image(const Grid2D& g, double cx, double cy, double r, double value = 1.0) {
    Image2D img(g);
    const double sub[3] = {-g.spacing / 3.0, 0.0, g.spacing / 3.0};
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            int hit = 0;
            for (double dx : sub)
                for (double dy : sub) {
                    const double x = g.x(ix) + dx - cx;
                    const double y = g.y(iy) + dy - cy;
                    if (x * x + y * y <= r * r) ++hit;
                }
            img.at(ix, iy) = value * hit / 9.0;
        }
    }
    return img;
}

/// Disc with a C1 smoothstep edge of half-width `w`; rasterises consistently
/// under rotation, unlike a binary indicator.
inline Image2D smooth_disc_image(const Grid2D& g, double cx, double cy, double r,
                                 double value = 1.0, double w = 1.5) {
    Image2D img(g);
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const double dx = g.x(ix) - cx, dy = g.y(iy) - cy;
            const double rho = std::sqrt(dx * dx + dy * dy);
            double s;
            if (rho <= r - w) s = 1.0;
            else if (rho >= r + w) s = 0.0;
            else {
                const double t = (r + w - rho) / (2.0 * w);
                s = t * t * (3.0 - 2.0 * t);
            }
            img.at(ix, iy) = value * s;
        }
    }
    return img;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace dyntomo::testutil
