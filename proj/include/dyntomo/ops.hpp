#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dyntomo/types.hpp"

namespace dyntomo {

// --- interpolation ----------------------------------------------------------

/// Bilinear sample of `img` at one world point. Points outside the grid's
/// convex hull are clamped to the boundary (replicate extension).
double bilinear_sample_one(const Image2D& img, double wx, double wy);

/// Bilinear samples at a list of world points. Throws on non-finite points.
std::vector<double> bilinear_sample(const Image2D& img,
                                    std::span<const std::pair<double, double>> pts);

/// Sample value and its spatial derivative (d/dwx, d/dwy) of the bilinear
/// interpolant at a world point, with replicate extension outside the hull.
/// The derivative is the within-cell derivative of the clamped interpolant.
struct SampleGrad {
    double value;
    double dx;
    double dy;
};
SampleGrad bilinear_sample_grad(const Image2D& img, double wx, double wy);

/// Corner weights of one bilinear sample, for building adjoints of warps.
/// Always returns 4 (index, weight) pairs; indices are clamped in-range and
/// weights sum to 1.
struct SampleStencil {
    std::size_t idx[4];
    double w[4];
};
SampleStencil bilinear_stencil(const Grid2D& g, double wx, double wy);

// --- discrete vector calculus ----------------------------------------------

/// Forward-difference gradient with replicate (Neumann) boundary: the last
/// row/column of each component is zero.
VectorField2D grad(const Image2D& img);

/// Negative adjoint of grad under the discrete L2 inner product:
/// <grad u, p> = -<u, div p> holds to rounding.
Image2D div(const VectorField2D& vf);

/// div(grad(u)) with the pair above; used by H1-type quadratic forms.
Image2D laplacian(const Image2D& img);

/// Central-difference first derivative along x or y with replicate boundary,
/// plus its exact adjoint. Used by motion residual operators.
void central_diff_x(const Image2D& in, Image2D& out);
void central_diff_y(const Image2D& in, Image2D& out);
void central_diff_x_adjoint(const Image2D& in, Image2D& out);
void central_diff_y_adjoint(const Image2D& in, Image2D& out);

/// Determinant of the discrete Jacobian of phi(x) = x + disp(x), central
/// differences (one-sided at the boundary).
Image2D jacobian_det_of_displacement(const VectorField2D& disp);

// --- metrics -----------------------------------------------------------------

/// Peak signal-to-noise ratio in dB; identical images give +infinity.
double psnr(const Image2D& ref, const Image2D& test, double peak);

/// ||a - b|| / ||b||; zero when the difference vanishes (also for zero b).
double l2_rel_error(const Image2D& a, const Image2D& b);

// --- small vector helpers ----------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b);
double nrm2(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Discrete L2 inner product over the grid: dot(a,b) * cell_area.
double l2_inner(const Image2D& a, const Image2D& b);
double l2_inner(const VectorField2D& a, const VectorField2D& b);

double total_mass(const Image2D& img);

}  // namespace dyntomo
