#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dyntomo/solvers.hpp"
#include "dyntomo/tomo.hpp"
#include "dyntomo/types.hpp"

namespace dyntomo::var {

enum class DataFitKind { L2sq, L1, KL };

std::string to_string(DataFitKind k);
DataFitKind datafit_from_string(const std::string& s);

struct DataFit {
    DataFitKind kind = DataFitKind::L2sq;
};

/// Weights of the no-temporal-model objective: spatial TV weight alpha,
/// temporal smoothness weight tau_t, optional Huber smoothing for the
/// gradient-descent paths (convex solves always use exact TV).
struct RegParams {
    double alpha = 0.1;
    double tau_t = 0.0;
    double epsilon_huber = 0.0;
};

// --- energies ----------------------------------------------------------------

/// sum |grad f|^2 * cell_area (H1 seminorm squared).
double h1_energy(const Image2D& img);
/// Gradient of h1_energy: -2 * cell_area * div(grad f).
Image2D h1_grad(const Image2D& img);

/// Isotropic discrete TV, optionally Huber-smoothed (epsilon > 0).
double tv_energy(const Image2D& img, double epsilon_huber = 0.0);
/// Gradient of the Huber TV (requires epsilon > 0).
Image2D tv_grad_huber(const Image2D& img, double epsilon_huber);

/// sum_j ||f_{j+1} - f_j||_{L2}^2 / dt_j  (forward time differences,
/// integrated over the time axis).
double temporal_l2_energy(const ImageSeries& series);

/// Data-fit value S(forward, data) for the configured kind.
double datafit_value(const DataFit& fit, std::span<const double> forward,
                     std::span<const double> data);
/// d S / d forward (L2sq only; the smooth fit used by the ODE branch).
void datafit_grad_l2sq(std::span<const double> forward, std::span<const double> data,
                       std::span<double> out);

/// Dual block for the data term of a saddle problem.
DualBlock make_datafit_block(std::size_t offset, std::size_t len, const DataFit& fit,
                             std::span<const double> data);

// --- reconstructions (Section 2.1 style, no temporal model) -------------------

struct FrameResult {
    ImageSeries series;
    std::vector<SolveReport> reports;
};

struct SeriesResult {
    ImageSeries series;
    SolveReport report;
};

/// Single-frame TV-regularised solve; the workhorse behind the per-frame
/// methods and the template updates of the ODE branch.
Image2D tv_reconstruct_single(const tomo::Sinogram& sino, const tomo::ProjectionGeometry& geom,
                              const Grid2D& grid, const DataFit& fit, double alpha,
                              const PdhgOptions& opts = {}, SolveReport* report = nullptr);

/// Per-frame independent variational reconstruction.
FrameResult reconstruct_frames_independent(const tomo::GatedDataset& ds, const DataFit& fit,
                                           const RegParams& reg, const PdhgOptions& opts = {});

/// Joint convex solve over all frames: data fits + spatial TV + temporal L2.
SeriesResult reconstruct_spatiotemporal_plain(const tomo::GatedDataset& ds, const DataFit& fit,
                                              const RegParams& reg, const PdhgOptions& opts = {});

}  // namespace dyntomo::var
