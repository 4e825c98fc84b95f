#include "dyntomo/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dyntomo {

namespace {

// Continuous pixel coordinate of a world point, clamped to [0, n-1].
inline void to_pixel_clamped(const Grid2D& g, double wx, double wy,
                             double& px, double& py) {
    px = (wx - g.origin_x) / g.spacing;
    py = (wy - g.origin_y) / g.spacing;
    px = std::clamp(px, 0.0, static_cast<double>(g.nx - 1));
    py = std::clamp(py, 0.0, static_cast<double>(g.ny - 1));
}

}  // namespace

double bilinear_sample_one(const Image2D& img, double wx, double wy) {
    const Grid2D& g = img.grid;
    double px, py;
    to_pixel_clamped(g, wx, wy, px, py);
    int ix = std::min(static_cast<int>(px), g.nx - 2);
    int iy = std::min(static_cast<int>(py), g.ny - 2);
    if (g.nx == 1) ix = 0;
    if (g.ny == 1) iy = 0;
    const double fx = px - ix;
    const double fy = py - iy;
    const int ix1 = std::min(ix + 1, g.nx - 1);
    const int iy1 = std::min(iy + 1, g.ny - 1);
    const double v00 = img.at(ix, iy), v10 = img.at(ix1, iy);
    const double v01 = img.at(ix, iy1), v11 = img.at(ix1, iy1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

std::vector<double> bilinear_sample(const Image2D& img,
                                    std::span<const std::pair<double, double>> pts) {
    std::vector<double> out;
    out.reserve(pts.size());
    for (const auto& [wx, wy] : pts) {
        if (!std::isfinite(wx) || !std::isfinite(wy))
            throw std::invalid_argument("bilinear_sample: non-finite point");
        out.push_back(bilinear_sample_one(img, wx, wy));
    }
    return out;
}

SampleGrad bilinear_sample_grad(const Image2D& img, double wx, double wy) {
    const Grid2D& g = img.grid;
    double pxr = (wx - g.origin_x) / g.spacing;
    double pyr = (wy - g.origin_y) / g.spacing;
    const bool cx = pxr > 0.0 && pxr < g.nx - 1;  // derivative vanishes in the clamp region
    const bool cy = pyr > 0.0 && pyr < g.ny - 1;
    double px = std::clamp(pxr, 0.0, static_cast<double>(g.nx - 1));
    double py = std::clamp(pyr, 0.0, static_cast<double>(g.ny - 1));
    int ix = std::min(static_cast<int>(px), std::max(g.nx - 2, 0));
    int iy = std::min(static_cast<int>(py), std::max(g.ny - 2, 0));
    const double fx = px - ix;
    const double fy = py - iy;
    const int ix1 = std::min(ix + 1, g.nx - 1);
    const int iy1 = std::min(iy + 1, g.ny - 1);
    const double v00 = img.at(ix, iy), v10 = img.at(ix1, iy);
    const double v01 = img.at(ix, iy1), v11 = img.at(ix1, iy1);
    SampleGrad s;
    s.value = (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
    s.dx = cx ? ((1 - fy) * (v10 - v00) + fy * (v11 - v01)) / g.spacing : 0.0;
    s.dy = cy ? ((1 - fx) * (v01 - v00) + fx * (v11 - v10)) / g.spacing : 0.0;
    return s;
}

SampleStencil bilinear_stencil(const Grid2D& g, double wx, double wy) {
    double px, py;
    to_pixel_clamped(g, wx, wy, px, py);
    int ix = std::min(static_cast<int>(px), std::max(g.nx - 2, 0));
    int iy = std::min(static_cast<int>(py), std::max(g.ny - 2, 0));
    const double fx = px - ix;
    const double fy = py - iy;
    const int ix1 = std::min(ix + 1, g.nx - 1);
    const int iy1 = std::min(iy + 1, g.ny - 1);
    const auto id = [&](int x, int y) { return static_cast<std::size_t>(y) * g.nx + x; };
    SampleStencil s;
    s.idx[0] = id(ix, iy);   s.w[0] = (1 - fx) * (1 - fy);
    s.idx[1] = id(ix1, iy);  s.w[1] = fx * (1 - fy);
    s.idx[2] = id(ix, iy1);  s.w[2] = (1 - fx) * fy;
    s.idx[3] = id(ix1, iy1); s.w[3] = fx * fy;
    return s;
}

VectorField2D grad(const Image2D& img) {
    const Grid2D& g = img.grid;
    VectorField2D out(g);
    const double inv_h = 1.0 / g.spacing;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
            out.x[i] = (ix + 1 < g.nx) ? (img.v[i + 1] - img.v[i]) * inv_h : 0.0;
            out.y[i] = (iy + 1 < g.ny) ? (img.v[i + g.nx] - img.v[i]) * inv_h : 0.0;
        }
    }
    return out;
}

Image2D div(const VectorField2D& vf) {
    const Grid2D& g = vf.grid;
    Image2D out(g);
    const double inv_h = 1.0 / g.spacing;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
            double d = 0.0;
            // x component: backward difference, with the Neumann-consistent rows
            if (ix == 0) d += vf.x[i];
            else if (ix == g.nx - 1) d += -vf.x[i - 1];
            else d += vf.x[i] - vf.x[i - 1];
            if (iy == 0) d += vf.y[i];
            else if (iy == g.ny - 1) d += -vf.y[i - g.nx];
            else d += vf.y[i] - vf.y[i - g.nx];
            out.v[i] = d * inv_h;
        }
    }
    return out;
}

Image2D laplacian(const Image2D& img) { return div(grad(img)); }

void central_diff_x(const Image2D& in, Image2D& out) {
    const Grid2D& g = in.grid;
    out = Image2D(g);
    const double c = 0.5 / g.spacing;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const int xm = std::max(ix - 1, 0);
            const int xp = std::min(ix + 1, g.nx - 1);
            out.at(ix, iy) = (in.at(xp, iy) - in.at(xm, iy)) * c;
        }
    }
}

void central_diff_y(const Image2D& in, Image2D& out) {
    const Grid2D& g = in.grid;
    out = Image2D(g);
    const double c = 0.5 / g.spacing;
    for (int iy = 0; iy < g.ny; ++iy) {
        const int ym = std::max(iy - 1, 0);
        const int yp = std::min(iy + 1, g.ny - 1);
        for (int ix = 0; ix < g.nx; ++ix)
            out.at(ix, iy) = (in.at(ix, yp) - in.at(ix, ym)) * c;
    }
}

void central_diff_x_adjoint(const Image2D& in, Image2D& out) {
    const Grid2D& g = in.grid;
    out = Image2D(g);
    const double c = 0.5 / g.spacing;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const int xm = std::max(ix - 1, 0);
            const int xp = std::min(ix + 1, g.nx - 1);
            const double v = in.at(ix, iy) * c;
            out.at(xp, iy) += v;
            out.at(xm, iy) -= v;
        }
    }
}

void central_diff_y_adjoint(const Image2D& in, Image2D& out) {
    const Grid2D& g = in.grid;
    out = Image2D(g);
    const double c = 0.5 / g.spacing;
    for (int iy = 0; iy < g.ny; ++iy) {
        const int ym = std::max(iy - 1, 0);
        const int yp = std::min(iy + 1, g.ny - 1);
        for (int ix = 0; ix < g.nx; ++ix) {
            const double v = in.at(ix, iy) * c;
            out.at(ix, yp) += v;
            out.at(ix, ym) -= v;
        }
    }
}

Image2D jacobian_det_of_displacement(const VectorField2D& disp) {
    const Grid2D& g = disp.grid;
    // pack components as images to reuse the central stencils
    Image2D compx(g), compy(g);
    compx.v = disp.x;
    compy.v = disp.y;
    Image2D dxx(g), dxy(g), dyx(g), dyy(g);
    central_diff_x(compx, dxx);
    central_diff_y(compx, dxy);
    central_diff_x(compy, dyx);
    central_diff_y(compy, dyy);
    Image2D out(g);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = (1.0 + dxx.v[i]) * (1.0 + dyy.v[i]) - dxy.v[i] * dyx.v[i];
    return out;
}

double psnr(const Image2D& ref, const Image2D& test, double peak) {
    require_same_grid(ref.grid, test.grid, "psnr");
    if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
    double mse = 0.0;
    for (std::size_t i = 0; i < ref.v.size(); ++i) {
        const double d = ref.v[i] - test.v[i];
        mse += d * d;
    }
    mse /= static_cast<double>(ref.v.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double l2_rel_error(const Image2D& a, const Image2D& b) {
    require_same_grid(a.grid, b.grid, "l2_rel_error");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        const double d = a.v[i] - b.v[i];
        num += d * d;
        den += b.v[i] * b.v[i];
    }
    if (num == 0.0) return 0.0;
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(num / den);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double nrm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double l2_inner(const Image2D& a, const Image2D& b) {
    require_same_grid(a.grid, b.grid, "l2_inner");
    return dot(a.v, b.v) * a.grid.cell_area();
}

double l2_inner(const VectorField2D& a, const VectorField2D& b) {
    require_same_grid(a.grid, b.grid, "l2_inner");
    return (dot(a.x, b.x) + dot(a.y, b.y)) * a.grid.cell_area();
}

double total_mass(const Image2D& img) {
    double s = 0.0;
    for (double x : img.v) s += x;
    return s * img.grid.cell_area();
}

}  // namespace dyntomo
