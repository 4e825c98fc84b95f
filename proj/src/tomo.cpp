#include "dyntomo/tomo.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dyntomo/rng.hpp"

namespace dyntomo::tomo {

namespace {
constexpr double kPi = std::numbers::pi;
}

ProjectionGeometry::ProjectionGeometry(std::vector<double> a, int nd, double ds)
    : angles(std::move(a)), n_det(nd), det_spacing(ds) {
    if (n_det < 1) throw std::invalid_argument("ProjectionGeometry: n_det must be >= 1");
    if (!(det_spacing > 0.0)) throw std::invalid_argument("ProjectionGeometry: det_spacing must be positive");
    for (double ang : angles)
        if (!std::isfinite(ang)) throw std::invalid_argument("ProjectionGeometry: non-finite angle");
}

int default_n_det(const Grid2D& grid) {
    return static_cast<int>(std::ceil(std::numbers::sqrt2 * std::max(grid.nx, grid.ny)));
}

ProjectionGeometry default_geometry(const Grid2D& grid, std::vector<double> angles) {
    return ProjectionGeometry(std::move(angles), default_n_det(grid), grid.spacing);
}

void GatedSchedule::validate() const {
    if (frames.empty()) throw std::invalid_argument("GatedSchedule: empty");
    for (const auto& g : frames) {
        if (g.n_det != frames[0].n_det || g.det_spacing != frames[0].det_spacing)
            throw std::invalid_argument("GatedSchedule: detector configuration must be shared");
    }
}

void GatedDataset::validate() const {
    schedule.validate();
    if (static_cast<int>(times.size()) != n_frames() || schedule.n_frames() != n_frames())
        throw std::invalid_argument("GatedDataset: frame/time/schedule counts differ");
    for (int j = 0; j < n_frames(); ++j) {
        const auto& g = schedule.frames[j];
        const auto& s = sinograms[j];
        if (s.n_angles != g.n_angles() || s.n_det != g.n_det)
            throw std::invalid_argument("GatedDataset: sinogram shape does not match schedule");
        for (double x : s.v)
            if (!std::isfinite(x)) throw std::invalid_argument("GatedDataset: non-finite data");
    }
}

// Joseph kernel: every (pixel, weight) pair a ray touches, emitted in a fixed
// order. Forward gathers, adjoint scatters the same weights, so the pair is
// adjoint to rounding.
template <typename Visit>
static void joseph_ray(const Grid2D& grid, double angle, double s, Visit&& visit) {
    const double c = std::cos(angle), sn = std::sin(angle);
    // detector axis (c, sn); ray direction (-sn, c)
    const double rx = -sn, ry = c;
    const double h = grid.spacing;
    if (std::abs(rx) >= std::abs(ry)) {
        // drive along x, interpolate in y
        const double w = h / std::abs(rx);
        for (int ix = 0; ix < grid.nx; ++ix) {
            const double x = grid.x(ix);
            const double t = (x - s * c) / rx;
            const double y = s * sn + t * ry;
            const double py = (y - grid.origin_y) / h;
            const int iy0 = static_cast<int>(std::floor(py));
            const double f = py - iy0;
            if (iy0 >= 0 && iy0 < grid.ny)
                visit(static_cast<std::size_t>(iy0) * grid.nx + ix, w * (1.0 - f));
            if (iy0 + 1 >= 0 && iy0 + 1 < grid.ny)
                visit(static_cast<std::size_t>(iy0 + 1) * grid.nx + ix, w * f);
        }
    } else {
        // drive along y, interpolate in x
        const double w = h / std::abs(ry);
        for (int iy = 0; iy < grid.ny; ++iy) {
            const double y = grid.y(iy);
            const double t = (y - s * sn) / ry;
            const double x = s * c + t * rx;
            const double px = (x - grid.origin_x) / h;
            const int ix0 = static_cast<int>(std::floor(px));
            const double f = px - ix0;
            const std::size_t row = static_cast<std::size_t>(iy) * grid.nx;
            if (ix0 >= 0 && ix0 < grid.nx) visit(row + ix0, w * (1.0 - f));
            if (ix0 + 1 >= 0 && ix0 + 1 < grid.nx) visit(row + ix0 + 1, w * f);
        }
    }
}

Sinogram ray_transform(const Image2D& img, const ProjectionGeometry& geom) {
    Sinogram out(geom.n_angles(), geom.n_det);
    for (int a = 0; a < geom.n_angles(); ++a) {
        for (int d = 0; d < geom.n_det; ++d) {
            double acc = 0.0;
            joseph_ray(img.grid, geom.angles[a], geom.det_offset(d),
                       [&](std::size_t i, double w) { acc += w * img.v[i]; });
            out.at(a, d) = acc;
        }
    }
    return out;
}

Image2D backprojection(const Sinogram& sino, const ProjectionGeometry& geom, const Grid2D& grid) {
    if (sino.n_angles != geom.n_angles() || sino.n_det != geom.n_det)
        throw std::invalid_argument("backprojection: sinogram shape does not match geometry");
    Image2D out(grid);
    for (int a = 0; a < geom.n_angles(); ++a) {
        for (int d = 0; d < geom.n_det; ++d) {
            const double val = sino.at(a, d);
            if (val == 0.0) continue;
            joseph_ray(grid, geom.angles[a], geom.det_offset(d),
                       [&](std::size_t i, double w) { out.v[i] += w * val; });
        }
    }
    return out;
}

namespace {

// Ramp-filter a sinogram row-by-row in the frequency domain.
// q = IDFT(|omega_k| . DFT(g_padded)) / N, omega in cycles per world unit.
void filter_rows(Sinogram& sino, double det_spacing, FbpFilter filter) {
    const int nd = sino.n_det;
    int n = 1;
    while (n < 2 * nd) n *= 2;
    std::vector<double> in(n, 0.0);
    std::vector<double> out(n, 0.0);
    const int nc = n / 2 + 1;
    fftw_complex* spec = fftw_alloc_complex(nc);
    fftw_plan fwd = fftw_plan_dft_r2c_1d(n, in.data(), spec, FFTW_ESTIMATE);
    fftw_plan bwd = fftw_plan_dft_c2r_1d(n, spec, out.data(), FFTW_ESTIMATE);

    const double nyquist = 0.5 / det_spacing;
    std::vector<double> resp(nc);
    for (int k = 0; k < nc; ++k) {
        const double freq = static_cast<double>(k) / (n * det_spacing);
        double r = freq;
        if (filter == FbpFilter::Hann) r *= 0.5 * (1.0 + std::cos(kPi * freq / nyquist));
        resp[k] = r / n;  // fold the 1/N of the unnormalised inverse transform in here
    }

    for (int a = 0; a < sino.n_angles; ++a) {
        std::fill(in.begin(), in.end(), 0.0);
        for (int d = 0; d < nd; ++d) in[d] = sino.at(a, d);
        fftw_execute(fwd);
        for (int k = 0; k < nc; ++k) {
            spec[k][0] *= resp[k];
            spec[k][1] *= resp[k];
        }
        fftw_execute(bwd);
        for (int d = 0; d < nd; ++d) sino.at(a, d) = out[d];
    }

    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
    fftw_free(spec);
}

}  // namespace

Image2D fbp(const Sinogram& sino, const ProjectionGeometry& geom, const Grid2D& grid,
            FbpFilter filter) {
    if (geom.n_angles() < 2) throw std::invalid_argument("fbp: need at least 2 angles");
    if (sino.n_angles != geom.n_angles() || sino.n_det != geom.n_det)
        throw std::invalid_argument("fbp: sinogram shape does not match geometry");

    Sinogram q = sino;
    filter_rows(q, geom.det_spacing, filter);

    Image2D out(grid);
    const double dtheta = kPi / geom.n_angles();
    const double s0 = -0.5 * (geom.n_det - 1) * geom.det_spacing;
    for (int a = 0; a < geom.n_angles(); ++a) {
        const double c = std::cos(geom.angles[a]), sn = std::sin(geom.angles[a]);
        for (int iy = 0; iy < grid.ny; ++iy) {
            const double y = grid.y(iy);
            for (int ix = 0; ix < grid.nx; ++ix) {
                const double s = grid.x(ix) * c + y * sn;
                const double ps = (s - s0) / geom.det_spacing;
                const int d0 = static_cast<int>(std::floor(ps));
                const double f = ps - d0;
                double v = 0.0;
                if (d0 >= 0 && d0 < geom.n_det) v += (1.0 - f) * q.at(a, d0);
                if (d0 + 1 >= 0 && d0 + 1 < geom.n_det) v += f * q.at(a, d0 + 1);
                out.at(ix, iy) += dtheta * v;
            }
        }
    }
    return out;
}

std::string to_string(ScheduleScheme s) {
    switch (s) {
        case ScheduleScheme::RandomWindow: return "random_window";
        case ScheduleScheme::GatedEven: return "gated_even";
        case ScheduleScheme::Sequential: return "sequential";
        case ScheduleScheme::RandomUniform: return "random_uniform";
    }
    return "unknown";
}

ScheduleScheme schedule_scheme_from_string(const std::string& s) {
    if (s == "random_window") return ScheduleScheme::RandomWindow;
    if (s == "gated_even") return ScheduleScheme::GatedEven;
    if (s == "sequential") return ScheduleScheme::Sequential;
    if (s == "random_uniform") return ScheduleScheme::RandomUniform;
    throw std::invalid_argument("unknown schedule scheme: " + s);
}

std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::None: return "none";
        case NoiseKind::Gaussian: return "gaussian";
        case NoiseKind::PoissonDirect: return "poisson_direct";
        case NoiseKind::PoissonTransmission: return "poisson_transmission";
    }
    return "unknown";
}

NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "none") return NoiseKind::None;
    if (s == "gaussian") return NoiseKind::Gaussian;
    if (s == "poisson_direct") return NoiseKind::PoissonDirect;
    if (s == "poisson_transmission") return NoiseKind::PoissonTransmission;
    throw std::invalid_argument("unknown noise kind: " + s);
}

GatedSchedule make_schedule(ScheduleScheme scheme, const ScheduleParams& p, std::uint64_t seed) {
    if (p.n_frames < 1) throw std::invalid_argument("make_schedule: n_frames must be >= 1");
    if (p.n_angles < 1) throw std::invalid_argument("make_schedule: n_angles must be >= 1");
    if (p.n_det < 1) throw std::invalid_argument("make_schedule: n_det must be >= 1");
    if (scheme == ScheduleScheme::Sequential && p.n_pairs != 1 && p.n_pairs != 2)
        throw std::invalid_argument("make_schedule: sequential n_pairs must be 1 or 2");

    GatedSchedule sched;
    sched.frames.reserve(p.n_frames);
    for (int j = 0; j < p.n_frames; ++j) {
        std::vector<double> angles;
        switch (scheme) {
            case ScheduleScheme::RandomWindow: {
                const double w = (p.window_width > 0.0) ? p.window_width : kPi / 10.0;
                auto eng = make_engine(seed, static_cast<std::uint64_t>(j));
                for (int a = 0; a < p.n_angles; ++a) angles.push_back(uniform(eng, j * w, (j + 1) * w));
                std::sort(angles.begin(), angles.end());
                break;
            }
            case ScheduleScheme::GatedEven: {
                const double off = (p.offset_step > 0.0) ? p.offset_step : kPi / 5.0;
                const double start = j * off;
                for (int a = 0; a < p.n_angles; ++a) angles.push_back(start + a * kPi / p.n_angles);
                break;
            }
            case ScheduleScheme::Sequential: {
                const double step = (p.step > 0.0) ? p.step : kPi / p.n_frames;
                const double base = std::fmod(j * step, kPi);
                angles.push_back(base);
                if (p.n_pairs == 2) angles.push_back(base + kPi / 2.0);
                break;
            }
            case ScheduleScheme::RandomUniform: {
                auto eng = make_engine(seed, static_cast<std::uint64_t>(j));
                for (int a = 0; a < p.n_angles; ++a) angles.push_back(uniform(eng, 0.0, kPi));
                std::sort(angles.begin(), angles.end());
                break;
            }
        }
        sched.frames.emplace_back(std::move(angles), p.n_det, p.det_spacing);
    }
    return sched;
}

GatedDataset project_series(const ImageSeries& truth, const GatedSchedule& schedule) {
    truth.validate();
    schedule.validate();
    if (truth.n_frames() != schedule.n_frames())
        throw std::invalid_argument("project_series: frame counts differ");
    GatedDataset ds;
    ds.grid = truth.grid();
    ds.times = truth.times;
    ds.schedule = schedule;
    ds.sinograms.reserve(truth.n_frames());
    for (int j = 0; j < truth.n_frames(); ++j)
        ds.sinograms.push_back(ray_transform(truth.frames[j], schedule.frames[j]));
    return ds;
}

GatedDataset add_noise(const GatedDataset& ds, const NoiseModel& model, std::uint64_t seed) {
    GatedDataset out = ds;
    out.noise = model;
    out.seed = seed;
    if (model.kind == NoiseKind::None) return out;

    if (model.kind == NoiseKind::Gaussian) {
        // dataset-level SNR: sigma^2 = mean(g^2) / 10^(snr/10)
        double power = 0.0;
        std::size_t count = 0;
        for (const auto& s : ds.sinograms) {
            for (double x : s.v) power += x * x;
            count += s.v.size();
        }
        if (count == 0) return out;
        power /= static_cast<double>(count);
        const double sigma = std::sqrt(power / std::pow(10.0, model.snr_db / 10.0));
        for (int j = 0; j < out.n_frames(); ++j) {
            auto eng = make_engine(seed, static_cast<std::uint64_t>(j));
            auto& s = out.sinograms[j];
            // Box-Muller on the portable uniform stream
            for (std::size_t i = 0; i < s.v.size(); i += 2) {
                const double u1 = std::max(uniform01(eng), 1e-300);
                const double u2 = uniform01(eng);
                const double r = std::sqrt(-2.0 * std::log(u1));
                s.v[i] += sigma * r * std::cos(2.0 * kPi * u2);
                if (i + 1 < s.v.size()) s.v[i + 1] += sigma * r * std::sin(2.0 * kPi * u2);
            }
        }
        return out;
    }

    // Poisson models
    if (!(model.scale > 0.0)) throw std::invalid_argument("add_noise: Poisson scale must be positive");
    for (const auto& s : ds.sinograms)
        for (double x : s.v)
            if (x < 0.0) throw std::invalid_argument("add_noise: Poisson requires nonnegative clean data");

    for (int j = 0; j < out.n_frames(); ++j) {
        auto eng = make_engine(seed, static_cast<std::uint64_t>(j));
        auto& s = out.sinograms[j];
        for (double& x : s.v) {
            if (model.kind == NoiseKind::PoissonDirect) {
                std::poisson_distribution<long long> pois(model.scale * x);
                x = (x > 0.0) ? static_cast<double>(pois(eng)) / model.scale : 0.0;
            } else {
                // transmission: counts ~ Poisson(scale * exp(-g)), then log-convert
                std::poisson_distribution<long long> pois(model.scale * std::exp(-x));
                const double counts = std::max<double>(static_cast<double>(pois(eng)), 0.5);
                x = -std::log(counts / model.scale);
            }
        }
    }
    return out;
}

std::pair<Sinogram, ProjectionGeometry> concatenate_frames(const GatedDataset& ds) {
    ds.validate();
    std::vector<double> angles;
    for (const auto& g : ds.schedule.frames)
        angles.insert(angles.end(), g.angles.begin(), g.angles.end());
    ProjectionGeometry geom(std::move(angles), ds.schedule.frames[0].n_det,
                            ds.schedule.frames[0].det_spacing);
    Sinogram sino(geom.n_angles(), geom.n_det);
    int row = 0;
    for (const auto& s : ds.sinograms) {
        std::copy(s.v.begin(), s.v.end(), sino.v.begin() + static_cast<std::size_t>(row) * geom.n_det);
        row += s.n_angles;
    }
    return {std::move(sino), std::move(geom)};
}

}  // namespace dyntomo::tomo
