#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dyntomo/tomo.hpp"
#include "dyntomo/types.hpp"

namespace dyntomo {

/// Matrix-free linear operator between flat coefficient vectors.
class LinOp {
 public:
    virtual ~LinOp() = default;
    virtual std::size_t rows() const = 0;  // output dimension
    virtual std::size_t cols() const = 0;  // input dimension
    virtual void apply(std::span<const double> x, std::span<double> y) const = 0;
    virtual void adjoint(std::span<const double> y, std::span<double> x) const = 0;

    std::vector<double> apply_vec(std::span<const double> x) const;
    std::vector<double> adjoint_vec(std::span<const double> y) const;
};

/// Power iteration estimate of ||A||_2, deterministic in the seed.
double op_norm_estimate(const LinOp& op, std::uint64_t seed = 1, int iters = 60);

/// Vertical stack [A0; A1; ...]; all blocks share the input space.
class StackedOp : public LinOp {
 public:
    explicit StackedOp(std::vector<const LinOp*> blocks);
    std::size_t rows() const override { return rows_; }
    std::size_t cols() const override { return cols_; }
    void apply(std::span<const double> x, std::span<double> y) const override;
    void adjoint(std::span<const double> y, std::span<double> x) const override;
    std::size_t block_offset(std::size_t i) const { return offsets_[i]; }

 private:
    std::vector<const LinOp*> blocks_;
    std::vector<std::size_t> offsets_;
    std::size_t rows_ = 0, cols_ = 0;
};

/// Forward-difference gradient as an operator image -> [gx | gy].
class GradOp : public LinOp {
 public:
    explicit GradOp(const Grid2D& g) : grid_(g) {}
    std::size_t rows() const override { return 2 * grid_.size(); }
    std::size_t cols() const override { return grid_.size(); }
    void apply(std::span<const double> x, std::span<double> y) const override;
    void adjoint(std::span<const double> y, std::span<double> x) const override;

 private:
    Grid2D grid_;
};

/// Joseph ray transform as an operator image -> sinogram.
class RayOp : public LinOp {
 public:
    RayOp(const Grid2D& g, tomo::ProjectionGeometry geom)
        : grid_(g), geom_(std::move(geom)) {}
    std::size_t rows() const override {
        return static_cast<std::size_t>(geom_.n_angles()) * geom_.n_det;
    }
    std::size_t cols() const override { return grid_.size(); }
    void apply(std::span<const double> x, std::span<double> y) const override;
    void adjoint(std::span<const double> y, std::span<double> x) const override;
    const tomo::ProjectionGeometry& geometry() const { return geom_; }

 private:
    Grid2D grid_;
    tomo::ProjectionGeometry geom_;
};

/// Bilinear warp x -> x(id + disp) as a sparse gather; exact scatter adjoint.
/// Optionally multiplied pointwise by a weight image (mass-preserving action).
class WarpOp : public LinOp {
 public:
    WarpOp(const Grid2D& g, const VectorField2D& disp, const Image2D* pointwise_weight = nullptr);
    std::size_t rows() const override { return grid_.size(); }
    std::size_t cols() const override { return grid_.size(); }
    void apply(std::span<const double> x, std::span<double> y) const override;
    void adjoint(std::span<const double> y, std::span<double> x) const override;

 private:
    Grid2D grid_;
    std::vector<std::size_t> idx_;  // 4 per output pixel
    std::vector<double> w_;        // 4 per output pixel, scaled by the weight image
};

/// B . A (apply A first).
class ComposedOp : public LinOp {
 public:
    ComposedOp(const LinOp* outer, const LinOp* inner) : outer_(outer), inner_(inner) {}
    std::size_t rows() const override { return outer_->rows(); }
    std::size_t cols() const override { return inner_->cols(); }
    void apply(std::span<const double> x, std::span<double> y) const override;
    void adjoint(std::span<const double> y, std::span<double> x) const override;

 private:
    const LinOp* outer_;
    const LinOp* inner_;
};

/// Block-diagonal operator over a time series: block j maps frame j.
class BlockDiagOp : public LinOp {
 public:
    explicit BlockDiagOp(std::vector<const LinOp*> blocks);
    std::size_t rows() const override { return rows_; }
    std::size_t cols() const override { return cols_; }
    void apply(std::span<const double> x, std::span<double> y) const override;
    void adjoint(std::span<const double> y, std::span<double> x) const override;
    std::size_t row_offset(std::size_t i) const { return row_off_[i]; }
    std::size_t col_offset(std::size_t i) const { return col_off_[i]; }

 private:
    std::vector<const LinOp*> blocks_;
    std::vector<std::size_t> row_off_, col_off_;
    std::size_t rows_ = 0, cols_ = 0;
};

}  // namespace dyntomo
