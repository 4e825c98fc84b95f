#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyntomo {

/// Regular pixel grid over a rectangular domain. `origin` is the world
/// coordinate of the center of pixel (0,0); pixels are square with side
/// `spacing`. Grids are value types and compared exactly.
struct Grid2D {
    int nx = 0;
    int ny = 0;
    double spacing = 1.0;
    double origin_x = 0.0;
    double origin_y = 0.0;

    Grid2D() = default;
    Grid2D(int nx_, int ny_, double spacing_, double ox, double oy)
        : nx(nx_), ny(ny_), spacing(spacing_), origin_x(ox), origin_y(oy) {
        if (nx < 1 || ny < 1) throw std::invalid_argument("Grid2D: pixel counts must be >= 1");
        if (!(spacing > 0.0)) throw std::invalid_argument("Grid2D: spacing must be positive");
    }

    /// Grid symmetric about the world origin (tomography rotates about 0).
    static Grid2D centered(int nx, int ny, double spacing = 1.0) {
        return Grid2D(nx, ny, spacing,
                      -0.5 * spacing * (nx - 1),
                      -0.5 * spacing * (ny - 1));
    }

    std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }
    double cell_area() const { return spacing * spacing; }
    double x(int ix) const { return origin_x + ix * spacing; }
    double y(int iy) const { return origin_y + iy * spacing; }

    bool operator==(const Grid2D& o) const {
        return nx == o.nx && ny == o.ny && spacing == o.spacing &&
               origin_x == o.origin_x && origin_y == o.origin_y;
    }
    bool operator!=(const Grid2D& o) const { return !(*this == o); }
};

inline void require_same_grid(const Grid2D& a, const Grid2D& b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

/// Scalar image on a Grid2D. Row-major, y-outer: index = iy*nx + ix.
struct Image2D {
    Grid2D grid;
    std::vector<double> v;

    Image2D() = default;
    explicit Image2D(const Grid2D& g, double fill = 0.0)
        : grid(g), v(g.size(), fill) {}

    double& at(int ix, int iy) { return v[static_cast<std::size_t>(iy) * grid.nx + ix]; }
    double at(int ix, int iy) const { return v[static_cast<std::size_t>(iy) * grid.nx + ix]; }
    std::size_t size() const { return v.size(); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

/// Two-component vector field on a Grid2D; components stored as separate planes.
struct VectorField2D {
    Grid2D grid;
    std::vector<double> x;
    std::vector<double> y;

    VectorField2D() = default;
    explicit VectorField2D(const Grid2D& g, double fx = 0.0, double fy = 0.0)
        : grid(g), x(g.size(), fx), y(g.size(), fy) {}

    std::size_t size() const { return x.size(); }

    bool all_finite() const {
        for (double a : x)
            if (!std::isfinite(a)) return false;
        for (double a : y)
            if (!std::isfinite(a)) return false;
        return true;
    }
};

/// Time-indexed stack of images sharing one grid. Times strictly increasing.
struct ImageSeries {
    std::vector<double> times;
    std::vector<Image2D> frames;

    ImageSeries() = default;
    ImageSeries(std::vector<double> t, std::vector<Image2D> f)
        : times(std::move(t)), frames(std::move(f)) {
        validate();
    }

    void validate() const {
        if (times.size() != frames.size())
            throw std::invalid_argument("ImageSeries: frame count != time count");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw std::invalid_argument("ImageSeries: times must be strictly increasing");
        for (std::size_t i = 1; i < frames.size(); ++i)
            if (frames[i].grid != frames[0].grid)
                throw std::invalid_argument("ImageSeries: frames must share one grid");
    }

    int n_frames() const { return static_cast<int>(frames.size()); }
    const Grid2D& grid() const {
        if (frames.empty()) throw std::logic_error("ImageSeries: empty");
        return frames[0].grid;
    }
};

/// Time-indexed stack of vector fields; same shape rules as ImageSeries.
struct VectorFieldSeries {
    std::vector<double> times;
    std::vector<VectorField2D> fields;

    VectorFieldSeries() = default;
    VectorFieldSeries(std::vector<double> t, std::vector<VectorField2D> f)
        : times(std::move(t)), fields(std::move(f)) {
        validate();
    }

    void validate() const {
        if (times.size() != fields.size())
            throw std::invalid_argument("VectorFieldSeries: field count != time count");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw std::invalid_argument("VectorFieldSeries: times must be strictly increasing");
        for (std::size_t i = 1; i < fields.size(); ++i)
            if (fields[i].grid != fields[0].grid)
                throw std::invalid_argument("VectorFieldSeries: fields must share one grid");
    }

    int n_fields() const { return static_cast<int>(fields.size()); }
    const Grid2D& grid() const {
        if (fields.empty()) throw std::logic_error("VectorFieldSeries: empty");
        return fields[0].grid;
    }
};

enum class StopReason {
    Converged,
    MaxIterations,
    NonFiniteEnergy,
    GradientCheckFailed,
    StepSizeUnderflow,
};

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::Converged: return "converged";
        case StopReason::MaxIterations: return "max_iterations";
        case StopReason::NonFiniteEnergy: return "non_finite_energy";
        case StopReason::GradientCheckFailed: return "gradient_check_failed";
        case StopReason::StepSizeUnderflow: return "step_size_underflow";
    }
    return "unknown";
}

/// Convergence record kept by every iterative solver.
/// energy_trace has iterations+1 entries (initial energy included).
struct SolveReport {
    std::vector<double> energy_trace;
    int iterations = 0;
    bool converged = false;
    StopReason stop_reason = StopReason::MaxIterations;
    std::map<std::string, double> stats;  // solver-specific scalars (op norms, gaps, ...)

    double initial_energy() const { return energy_trace.empty() ? 0.0 : energy_trace.front(); }
    double final_energy() const { return energy_trace.empty() ? 0.0 : energy_trace.back(); }
};

}  // namespace dyntomo
