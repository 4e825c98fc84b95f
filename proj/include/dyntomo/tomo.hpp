#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyntomo/types.hpp"

namespace dyntomo::tomo {

/// Parallel-beam sampling pattern for one frame: projection angles plus a
/// shared linear detector. Angle a, detector offset s measure the line
/// {s*(cos a, sin a) + t*(-sin a, cos a)}.
struct ProjectionGeometry {
    std::vector<double> angles;  // radians
    int n_det = 0;
    double det_spacing = 1.0;

    ProjectionGeometry() = default;
    ProjectionGeometry(std::vector<double> a, int nd, double ds);

    int n_angles() const { return static_cast<int>(angles.size()); }
    /// World offset of detector bin i (centered detector array).
    double det_offset(int i) const {
        return (i - 0.5 * (n_det - 1)) * det_spacing;
    }
};

/// Detector sized to cover the grid diagonal at pixel pitch.
ProjectionGeometry default_geometry(const Grid2D& grid, std::vector<double> angles);
int default_n_det(const Grid2D& grid);

/// One geometry per time index; detector configuration shared across frames.
struct GatedSchedule {
    std::vector<ProjectionGeometry> frames;

    int n_frames() const { return static_cast<int>(frames.size()); }
    void validate() const;
};

/// Projection data for one frame, angle-major: v[a*n_det + d].
struct Sinogram {
    int n_angles = 0;
    int n_det = 0;
    std::vector<double> v;

    Sinogram() = default;
    Sinogram(int na, int nd) : n_angles(na), n_det(nd), v(static_cast<std::size_t>(na) * nd, 0.0) {}

    double& at(int a, int d) { return v[static_cast<std::size_t>(a) * n_det + d]; }
    double at(int a, int d) const { return v[static_cast<std::size_t>(a) * n_det + d]; }
};

enum class NoiseKind { None, Gaussian, PoissonDirect, PoissonTransmission };

struct NoiseModel {
    NoiseKind kind = NoiseKind::None;
    double snr_db = 14.9;  // Gaussian: dataset-level target SNR
    double scale = 1e4;    // Poisson: mean-count scale

    static NoiseModel none() { return {}; }
    static NoiseModel gaussian(double snr) { return {NoiseKind::Gaussian, snr, 0.0}; }
    static NoiseModel poisson_direct(double scale) { return {NoiseKind::PoissonDirect, 0.0, scale}; }
    static NoiseModel poisson_transmission(double scale) { return {NoiseKind::PoissonTransmission, 0.0, scale}; }
};

std::string to_string(NoiseKind k);
NoiseKind noise_kind_from_string(const std::string& s);

/// Gated measurement bundle: schedule, per-frame sinograms, and the metadata
/// needed to reproduce the simulation.
struct GatedDataset {
    Grid2D grid;                // image grid the data was simulated on / targets
    std::vector<double> times;
    GatedSchedule schedule;
    std::vector<Sinogram> sinograms;
    NoiseModel noise;
    std::uint64_t seed = 0;
    std::string notes;

    int n_frames() const { return static_cast<int>(sinograms.size()); }
    void validate() const;
};

// --- forward model -----------------------------------------------------------

/// Joseph (interpolating ray-driven) parallel-beam ray transform.
Sinogram ray_transform(const Image2D& img, const ProjectionGeometry& geom);

/// Exact discrete adjoint of ray_transform: <A f, g> = <f, A* g>.
Image2D backprojection(const Sinogram& sino, const ProjectionGeometry& geom, const Grid2D& grid);

enum class FbpFilter { Ramp, Hann };

/// Filtered backprojection; requires at least 2 angles.
Image2D fbp(const Sinogram& sino, const ProjectionGeometry& geom, const Grid2D& grid,
            FbpFilter filter = FbpFilter::Ramp);

// --- acquisition schedules ----------------------------------------------------

enum class ScheduleScheme { RandomWindow, GatedEven, Sequential, RandomUniform };

std::string to_string(ScheduleScheme s);
ScheduleScheme schedule_scheme_from_string(const std::string& s);

struct ScheduleParams {
    int n_frames = 1;
    int n_angles = 1;                 // angles per frame
    double window_width = -1.0;       // RandomWindow; <=0 -> pi/10
    double offset_step = -1.0;        // GatedEven; <=0 -> pi/5
    double step = -1.0;               // Sequential; <=0 -> pi/n_frames
    int n_pairs = 1;                  // Sequential: 1 or 2 source-detector pairs
    int n_det = 0;
    double det_spacing = 1.0;
};

/// Deterministic in (scheme, params, seed).
GatedSchedule make_schedule(ScheduleScheme scheme, const ScheduleParams& params,
                            std::uint64_t seed);

// --- simulation ----------------------------------------------------------------

/// Clean projections of a ground-truth series under a schedule.
GatedDataset project_series(const ImageSeries& truth, const GatedSchedule& schedule);

/// Apply a noise model; per-frame seeded substreams, reproducible.
GatedDataset add_noise(const GatedDataset& ds, const NoiseModel& model, std::uint64_t seed);

/// Merge all frames of a gated dataset into a single static frame
/// (concatenated angle sets), for stationary-target baselines.
std::pair<Sinogram, ProjectionGeometry> concatenate_frames(const GatedDataset& ds);

}  // namespace dyntomo::tomo
