#include "dyntomo/variational.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "dyntomo/ops.hpp"

namespace dyntomo::var {

std::string to_string(DataFitKind k) {
    switch (k) {
        case DataFitKind::L2sq: return "l2sq";
        case DataFitKind::L1: return "l1";
        case DataFitKind::KL: return "kl";
    }
    return "unknown";
}

DataFitKind datafit_from_string(const std::string& s) {
    if (s == "l2sq") return DataFitKind::L2sq;
    if (s == "l1") return DataFitKind::L1;
    if (s == "kl") return DataFitKind::KL;
    throw std::invalid_argument("unknown data fit: " + s);
}

double h1_energy(const Image2D& img) {
    VectorField2D g = grad(img);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g.x[i] * g.x[i] + g.y[i] * g.y[i];
    return s * img.grid.cell_area();
}

Image2D h1_grad(const Image2D& img) {
    Image2D lap = laplacian(img);
    Image2D out(img.grid);
    const double c = -2.0 * img.grid.cell_area();
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = c * lap.v[i];
    return out;
}

namespace {
inline double huber(double t, double eps) {
    if (eps <= 0.0) return t;
    return (t <= eps) ? t * t / (2.0 * eps) : t - 0.5 * eps;
}
}  // namespace

double tv_energy(const Image2D& img, double epsilon_huber) {
    VectorField2D g = grad(img);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        s += huber(std::sqrt(g.x[i] * g.x[i] + g.y[i] * g.y[i]), epsilon_huber);
    return s * img.grid.cell_area();
}

Image2D tv_grad_huber(const Image2D& img, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("tv_grad_huber: epsilon must be positive");
    VectorField2D g = grad(img);
    // d/dg huber(|g|) = g / max(|g|, eps), then chain through grad^T = -div
    VectorField2D p(img.grid);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double n = std::sqrt(g.x[i] * g.x[i] + g.y[i] * g.y[i]);
        const double d = std::max(n, eps);
        p.x[i] = g.x[i] / d;
        p.y[i] = g.y[i] / d;
    }
    Image2D d = div(p);
    Image2D out(img.grid);
    const double c = -img.grid.cell_area();
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = c * d.v[i];
    return out;
}

double temporal_l2_energy(const ImageSeries& series) {
    series.validate();
    if (series.n_frames() < 2)
        throw std::invalid_argument("temporal_l2_energy: need at least 2 frames");
    const double cell = series.grid().cell_area();
    double s = 0.0;
    for (int j = 0; j + 1 < series.n_frames(); ++j) {
        const double dt = series.times[j + 1] - series.times[j];
        double d2 = 0.0;
        const auto& a = series.frames[j].v;
        const auto& b = series.frames[j + 1].v;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = b[i] - a[i];
            d2 += d * d;
        }
        s += d2 * cell / dt;
    }
    return s;
}

double datafit_value(const DataFit& fit, std::span<const double> forward,
                     std::span<const double> data) {
    if (forward.size() != data.size()) throw std::invalid_argument("datafit_value: size mismatch");
    double s = 0.0;
    switch (fit.kind) {
        case DataFitKind::L2sq:
            for (std::size_t i = 0; i < forward.size(); ++i) {
                const double d = forward[i] - data[i];
                s += 0.5 * d * d;
            }
            break;
        case DataFitKind::L1:
            for (std::size_t i = 0; i < forward.size(); ++i) s += std::abs(forward[i] - data[i]);
            break;
        case DataFitKind::KL:
            for (std::size_t i = 0; i < forward.size(); ++i) {
                if (data[i] < 0.0) throw std::invalid_argument("KL: data must be nonnegative");
                const double z = forward[i];
                if (z < 0.0) return std::numeric_limits<double>::infinity();
                if (data[i] > 0.0) {
                    if (z == 0.0) return std::numeric_limits<double>::infinity();
                    s += z - data[i] + data[i] * std::log(data[i] / z);
                } else {
                    s += z;
                }
            }
            break;
    }
    return s;
}

void datafit_grad_l2sq(std::span<const double> forward, std::span<const double> data,
                       std::span<double> out) {
    for (std::size_t i = 0; i < forward.size(); ++i) out[i] = forward[i] - data[i];
}

DualBlock make_datafit_block(std::size_t offset, std::size_t len, const DataFit& fit,
                             std::span<const double> data) {
    switch (fit.kind) {
        case DataFitKind::L2sq: return dual_l2sq(offset, len, data);
        case DataFitKind::L1: return dual_l1(offset, len, 1.0, data);
        case DataFitKind::KL: return dual_kl(offset, len, data);
    }
    throw std::logic_error("make_datafit_block: bad kind");
}

Image2D tv_reconstruct_single(const tomo::Sinogram& sino, const tomo::ProjectionGeometry& geom,
                              const Grid2D& grid, const DataFit& fit, double alpha,
                              const PdhgOptions& opts, SolveReport* report) {
    RayOp A(grid, geom);
    GradOp D(grid);
    StackedOp K({&A, &D});
    const std::size_t npix = grid.size();
    const std::size_t ndata = A.rows();
    const double w_tv = alpha * grid.cell_area();

    SaddleSpec spec;
    spec.K = &K;
    spec.dual_blocks.push_back(make_datafit_block(0, ndata, fit, sino.v));
    spec.dual_blocks.push_back(dual_iso_pairs(ndata, npix, 2, w_tv));
    spec.energy = [&](std::span<const double> x) {
        std::vector<double> fw(ndata, 0.0);
        A.apply(x, fw);
        Image2D img(grid);
        std::copy(x.begin(), x.end(), img.v.begin());
        return datafit_value(fit, fw, sino.v) + alpha * tv_energy(img);
    };

    auto [x, rep] = pdhg(spec, std::vector<double>(npix, 0.0), opts);
    if (report) *report = std::move(rep);
    Image2D out(grid);
    std::copy(x.begin(), x.end(), out.v.begin());
    return out;
}

FrameResult reconstruct_frames_independent(const tomo::GatedDataset& ds, const DataFit& fit,
                                           const RegParams& reg, const PdhgOptions& opts) {
    ds.validate();
    FrameResult res;
    res.series.times = ds.times;
    for (int j = 0; j < ds.n_frames(); ++j) {
        SolveReport rep;
        res.series.frames.push_back(tv_reconstruct_single(
            ds.sinograms[j], ds.schedule.frames[j], ds.grid, fit, reg.alpha, opts, &rep));
        res.reports.push_back(std::move(rep));
    }
    return res;
}

namespace {

// Scaled forward time difference over a frame stack:
// out_j = w_j (f_{j+1} - f_j), one weight per interval.
class TimeDiffOp : public LinOp {
 public:
    TimeDiffOp(std::size_t npix, std::vector<double> weights)
        : npix_(npix), w_(std::move(weights)) {}
    std::size_t rows() const override { return npix_ * w_.size(); }
    std::size_t cols() const override { return npix_ * (w_.size() + 1); }
    void apply(std::span<const double> x, std::span<double> y) const override {
        for (std::size_t j = 0; j < w_.size(); ++j)
            for (std::size_t i = 0; i < npix_; ++i)
                y[j * npix_ + i] = w_[j] * (x[(j + 1) * npix_ + i] - x[j * npix_ + i]);
    }
    void adjoint(std::span<const double> y, std::span<double> x) const override {
        std::fill(x.begin(), x.end(), 0.0);
        for (std::size_t j = 0; j < w_.size(); ++j)
            for (std::size_t i = 0; i < npix_; ++i) {
                const double v = w_[j] * y[j * npix_ + i];
                x[(j + 1) * npix_ + i] += v;
                x[j * npix_ + i] -= v;
            }
    }

 private:
    std::size_t npix_;
    std::vector<double> w_;
};

}  // namespace

SeriesResult reconstruct_spatiotemporal_plain(const tomo::GatedDataset& ds, const DataFit& fit,
                                              const RegParams& reg, const PdhgOptions& opts) {
    ds.validate();
    if (ds.n_frames() < 2)
        throw std::invalid_argument("reconstruct_spatiotemporal_plain: need at least 2 frames");
    const Grid2D& grid = ds.grid;
    const std::size_t npix = grid.size();
    const int n = ds.n_frames();

    std::vector<std::unique_ptr<LinOp>> own;
    std::vector<const LinOp*> rays, grads;
    for (int j = 0; j < n; ++j) {
        own.push_back(std::make_unique<RayOp>(grid, ds.schedule.frames[j]));
        rays.push_back(own.back().get());
    }
    for (int j = 0; j < n; ++j) {
        own.push_back(std::make_unique<GradOp>(grid));
        grads.push_back(own.back().get());
    }
    auto rayBlock = std::make_unique<BlockDiagOp>(rays);
    auto gradBlock = std::make_unique<BlockDiagOp>(grads);

    std::vector<const LinOp*> stack = {rayBlock.get(), gradBlock.get()};
    std::unique_ptr<TimeDiffOp> dt_op;
    if (reg.tau_t > 0.0) {
        std::vector<double> w(n - 1);
        for (int j = 0; j + 1 < n; ++j)
            w[j] = std::sqrt(grid.cell_area() / (ds.times[j + 1] - ds.times[j]));
        dt_op = std::make_unique<TimeDiffOp>(npix, std::move(w));
        stack.push_back(dt_op.get());
    }
    StackedOp K(stack);

    SaddleSpec spec;
    spec.K = &K;
    std::size_t off = 0;
    for (int j = 0; j < n; ++j) {
        const std::size_t len = rays[j]->rows();
        spec.dual_blocks.push_back(make_datafit_block(off, len, fit, ds.sinograms[j].v));
        off += len;
    }
    const double w_tv = reg.alpha * grid.cell_area();
    for (int j = 0; j < n; ++j) {
        spec.dual_blocks.push_back(dual_iso_pairs(off, npix, 2, w_tv));
        off += 2 * npix;
    }
    if (dt_op) spec.dual_blocks.push_back(dual_l2sq_scaled(off, dt_op->rows(), reg.tau_t));

    spec.energy = [&, n](std::span<const double> x) {
        double e = 0.0;
        std::vector<double> fw;
        for (int j = 0; j < n; ++j) {
            fw.assign(rays[j]->rows(), 0.0);
            rays[j]->apply(x.subspan(j * npix, npix), fw);
            e += datafit_value(fit, fw, ds.sinograms[j].v);
            Image2D img(grid);
            std::copy(x.begin() + j * npix, x.begin() + (j + 1) * npix, img.v.begin());
            e += reg.alpha * tv_energy(img);
        }
        if (reg.tau_t > 0.0) {
            for (int j = 0; j + 1 < n; ++j) {
                double d2 = 0.0;
                for (std::size_t i = 0; i < npix; ++i) {
                    const double d = x[(j + 1) * npix + i] - x[j * npix + i];
                    d2 += d * d;
                }
                e += reg.tau_t * d2 * grid.cell_area() / (ds.times[j + 1] - ds.times[j]);
            }
        }
        return e;
    };

    auto [x, rep] = pdhg(spec, std::vector<double>(npix * n, 0.0), opts);

    SeriesResult res;
    res.report = std::move(rep);
    res.series.times = ds.times;
    for (int j = 0; j < n; ++j) {
        Image2D img(grid);
        std::copy(x.begin() + j * npix, x.begin() + (j + 1) * npix, img.v.begin());
        res.series.frames.push_back(std::move(img));
    }
    return res;
}

}  // namespace dyntomo::var
