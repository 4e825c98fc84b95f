#include "dyntomo/linop.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dyntomo/ops.hpp"
#include "dyntomo/rng.hpp"

namespace dyntomo {

std::vector<double> LinOp::apply_vec(std::span<const double> x) const {
    std::vector<double> y(rows(), 0.0);
    apply(x, y);
    return y;
}

std::vector<double> LinOp::adjoint_vec(std::span<const double> y) const {
    std::vector<double> x(cols(), 0.0);
    adjoint(y, x);
    return x;
}

double op_norm_estimate(const LinOp& op, std::uint64_t seed, int iters) {
    std::vector<double> x(op.cols());
    auto eng = make_engine(seed, 0xB0B);
    for (double& v : x) v = uniform(eng, -1.0, 1.0);
    double n = nrm2(x);
    if (n == 0.0) x[0] = n = 1.0;
    for (double& v : x) v /= n;

    std::vector<double> y(op.rows());
    double norm = 0.0;
    for (int k = 0; k < iters; ++k) {
        std::fill(y.begin(), y.end(), 0.0);
        op.apply(x, y);
        std::fill(x.begin(), x.end(), 0.0);
        op.adjoint(y, x);
        const double xn = nrm2(x);
        if (xn == 0.0) return 0.0;
        norm = std::sqrt(xn);  // ||A^T A x|| -> sigma_max^2 at convergence
        for (double& v : x) v /= xn;
    }
    return norm;
}

StackedOp::StackedOp(std::vector<const LinOp*> blocks) : blocks_(std::move(blocks)) {
    if (blocks_.empty()) throw std::invalid_argument("StackedOp: no blocks");
    cols_ = blocks_[0]->cols();
    for (const LinOp* b : blocks_) {
        if (b->cols() != cols_) throw std::invalid_argument("StackedOp: input dims differ");
        offsets_.push_back(rows_);
        rows_ += b->rows();
    }
}

void StackedOp::apply(std::span<const double> x, std::span<double> y) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i]->apply(x, y.subspan(offsets_[i], blocks_[i]->rows()));
}

void StackedOp::adjoint(std::span<const double> y, std::span<double> x) const {
    std::fill(x.begin(), x.end(), 0.0);
    std::vector<double> tmp(cols_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        std::fill(tmp.begin(), tmp.end(), 0.0);
        blocks_[i]->adjoint(y.subspan(offsets_[i], blocks_[i]->rows()), tmp);
        axpy(1.0, tmp, x);
    }
}

void GradOp::apply(std::span<const double> x, std::span<double> y) const {
    const int nx = grid_.nx, ny = grid_.ny;
    const double inv_h = 1.0 / grid_.spacing;
    const std::size_t n = grid_.size();
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * nx + ix;
            y[i] = (ix + 1 < nx) ? (x[i + 1] - x[i]) * inv_h : 0.0;
            y[n + i] = (iy + 1 < ny) ? (x[i + nx] - x[i]) * inv_h : 0.0;
        }
    }
}

void GradOp::adjoint(std::span<const double> y, std::span<double> x) const {
    // exact transpose of the forward stencil (negative divergence)
    const int nx = grid_.nx, ny = grid_.ny;
    const double inv_h = 1.0 / grid_.spacing;
    const std::size_t n = grid_.size();
    std::fill(x.begin(), x.end(), 0.0);
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * nx + ix;
            if (ix + 1 < nx) {
                const double v = y[i] * inv_h;
                x[i + 1] += v;
                x[i] -= v;
            }
            if (iy + 1 < ny) {
                const double v = y[n + i] * inv_h;
                x[i + nx] += v;
                x[i] -= v;
            }
        }
    }
}

void RayOp::apply(std::span<const double> x, std::span<double> y) const {
    Image2D img(grid_);
    std::copy(x.begin(), x.end(), img.v.begin());
    tomo::Sinogram s = tomo::ray_transform(img, geom_);
    std::copy(s.v.begin(), s.v.end(), y.begin());
}

void RayOp::adjoint(std::span<const double> y, std::span<double> x) const {
    tomo::Sinogram s(geom_.n_angles(), geom_.n_det);
    std::copy(y.begin(), y.end(), s.v.begin());
    Image2D img = tomo::backprojection(s, geom_, grid_);
    std::copy(img.v.begin(), img.v.end(), x.begin());
}

WarpOp::WarpOp(const Grid2D& g, const VectorField2D& disp, const Image2D* pointwise_weight)
    : grid_(g) {
    require_same_grid(g, disp.grid, "WarpOp");
    if (pointwise_weight) require_same_grid(g, pointwise_weight->grid, "WarpOp weight");
    const std::size_t n = g.size();
    idx_.resize(4 * n);
    w_.resize(4 * n);
    std::size_t k = 0;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix, ++k) {
            const double wx = g.x(ix) + disp.x[k];
            const double wy = g.y(iy) + disp.y[k];
            SampleStencil st = bilinear_stencil(g, wx, wy);
            const double scale = pointwise_weight ? pointwise_weight->v[k] : 1.0;
            for (int c = 0; c < 4; ++c) {
                idx_[4 * k + c] = st.idx[c];
                w_[4 * k + c] = st.w[c] * scale;
            }
        }
    }
}

void WarpOp::apply(std::span<const double> x, std::span<double> y) const {
    const std::size_t n = grid_.size();
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t b = 4 * k;
        y[k] = w_[b] * x[idx_[b]] + w_[b + 1] * x[idx_[b + 1]] +
               w_[b + 2] * x[idx_[b + 2]] + w_[b + 3] * x[idx_[b + 3]];
    }
}

void WarpOp::adjoint(std::span<const double> y, std::span<double> x) const {
    std::fill(x.begin(), x.end(), 0.0);
    const std::size_t n = grid_.size();
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t b = 4 * k;
        const double v = y[k];
        x[idx_[b]] += w_[b] * v;
        x[idx_[b + 1]] += w_[b + 1] * v;
        x[idx_[b + 2]] += w_[b + 2] * v;
        x[idx_[b + 3]] += w_[b + 3] * v;
    }
}

void ComposedOp::apply(std::span<const double> x, std::span<double> y) const {
    std::vector<double> mid(inner_->rows(), 0.0);
    inner_->apply(x, mid);
    outer_->apply(mid, y);
}

void ComposedOp::adjoint(std::span<const double> y, std::span<double> x) const {
    std::vector<double> mid(inner_->rows(), 0.0);
    outer_->adjoint(y, mid);
    inner_->adjoint(mid, x);
}

BlockDiagOp::BlockDiagOp(std::vector<const LinOp*> blocks) : blocks_(std::move(blocks)) {
    if (blocks_.empty()) throw std::invalid_argument("BlockDiagOp: no blocks");
    for (const LinOp* b : blocks_) {
        row_off_.push_back(rows_);
        col_off_.push_back(cols_);
        rows_ += b->rows();
        cols_ += b->cols();
    }
}

void BlockDiagOp::apply(std::span<const double> x, std::span<double> y) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i]->apply(x.subspan(col_off_[i], blocks_[i]->cols()),
                          y.subspan(row_off_[i], blocks_[i]->rows()));
}

void BlockDiagOp::adjoint(std::span<const double> y, std::span<double> x) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i]->adjoint(y.subspan(row_off_[i], blocks_[i]->rows()),
                            x.subspan(col_off_[i], blocks_[i]->cols()));
}

}  // namespace dyntomo
