#include "dyntomo/deform.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dyntomo/ops.hpp"

namespace dyntomo::deform {

double v_norm_sq(const VectorField2D& v, const VNormSpec& spec) {
    if (!(spec.lambda_v > 0.0)) throw std::invalid_argument("v_norm_sq: lambda_v must be positive");
    // <v, (I - lambda Lap) v> = ||v||^2 + lambda ||grad v||^2 with the exact
    // adjoint pair, so the form is positive definite by construction.
    Image2D cx(v.grid), cy(v.grid);
    cx.v = v.x;
    cy.v = v.y;
    VectorField2D gx = grad(cx);
    VectorField2D gy = grad(cy);
    double s = dot(v.x, v.x) + dot(v.y, v.y);
    s += spec.lambda_v * (dot(gx.x, gx.x) + dot(gx.y, gx.y) + dot(gy.x, gy.x) + dot(gy.y, gy.y));
    return s * v.grid.cell_area();
}

Diffeo Diffeo::identity(const Grid2D& g) {
    Diffeo d;
    d.grid = g;
    d.forward = VectorField2D(g);
    d.inverse = VectorField2D(g);
    d.composition_gap = 0.0;
    return d;
}

namespace {

// Bilinear sample of a vector field at a world point (replicate extension).
inline void sample_field(const VectorField2D& f, double wx, double wy, double& vx, double& vy) {
    const Grid2D& g = f.grid;
    double px = (wx - g.origin_x) / g.spacing;
    double py = (wy - g.origin_y) / g.spacing;
    px = std::clamp(px, 0.0, static_cast<double>(g.nx - 1));
    py = std::clamp(py, 0.0, static_cast<double>(g.ny - 1));
    int ix = std::min(static_cast<int>(px), std::max(g.nx - 2, 0));
    int iy = std::min(static_cast<int>(py), std::max(g.ny - 2, 0));
    const double fx = px - ix;
    const double fy = py - iy;
    const int ix1 = std::min(ix + 1, g.nx - 1);
    const int iy1 = std::min(iy + 1, g.ny - 1);
    const auto id = [&](int x, int y) { return static_cast<std::size_t>(y) * g.nx + x; };
    const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
    const double w01 = (1 - fx) * fy, w11 = fx * fy;
    vx = w00 * f.x[id(ix, iy)] + w10 * f.x[id(ix1, iy)] + w01 * f.x[id(ix, iy1)] +
         w11 * f.x[id(ix1, iy1)];
    vy = w00 * f.y[id(ix, iy)] + w10 * f.y[id(ix1, iy)] + w01 * f.y[id(ix, iy1)] +
         w11 * f.y[id(ix1, iy1)];
}

// Velocity lookup: node interval containing a time, with optional reversal
// and sign flip for inverse flows. The field is resolved once per step at the
// step midpoint, so piecewise-constant paths never straddle a stage lookup.
struct PathField {
    const VectorFieldSeries* nu;
    double sign = 1.0;
    bool reversed = false;
    double t0 = 0.0, t1 = 0.0;  // integration window in forward time

    const VectorField2D& field_for(double s) const {
        const double t = reversed ? (t0 + t1 - s) : s;
        const auto& times = nu->times;
        int k = static_cast<int>(times.size()) - 1;
        while (k > 0 && times[k] > t) --k;
        return nu->fields[k];
    }
};

// One integration sweep of the displacement field disp over [t0, t1].
void integrate_displacement(const PathField& path, VectorField2D& disp, double t0, double t1,
                            int n_steps, FlowScheme scheme, double* max_step_move) {
    const Grid2D& g = disp.grid;
    const double h = (t1 - t0) / n_steps;
    double worst = 0.0;
    for (int s = 0; s < n_steps; ++s) {
        const double t = t0 + s * h;
        const VectorField2D& vel = path.field_for(t + 0.5 * h);
        const double sign = path.sign;
        for (int iy = 0; iy < g.ny; ++iy) {
            for (int ix = 0; ix < g.nx; ++ix) {
                const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                const double px = g.x(ix) + disp.x[i];
                const double py = g.y(iy) + disp.y[i];
                double dx, dy;
                if (scheme == FlowScheme::Euler) {
                    sample_field(vel, px, py, dx, dy);
                    dx *= sign;
                    dy *= sign;
                } else {
                    double k1x, k1y, k2x, k2y, k3x, k3y, k4x, k4y;
                    sample_field(vel, px, py, k1x, k1y);
                    k1x *= sign, k1y *= sign;
                    sample_field(vel, px + 0.5 * h * k1x, py + 0.5 * h * k1y, k2x, k2y);
                    k2x *= sign, k2y *= sign;
                    sample_field(vel, px + 0.5 * h * k2x, py + 0.5 * h * k2y, k3x, k3y);
                    k3x *= sign, k3y *= sign;
                    sample_field(vel, px + h * k3x, py + h * k3y, k4x, k4y);
                    k4x *= sign, k4y *= sign;
                    dx = (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0;
                    dy = (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0;
                }
                disp.x[i] += h * dx;
                disp.y[i] += h * dy;
                worst = std::max(worst, std::abs(h) * std::hypot(dx, dy));
            }
        }
    }
    if (max_step_move) *max_step_move = std::max(*max_step_move, worst);
}

double composition_gap(const Grid2D& g, const VectorField2D& fwd, const VectorField2D& inv) {
    double worst = 0.0;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
            const double qx = g.x(ix) + inv.x[i];
            const double qy = g.y(iy) + inv.y[i];
            double fx, fy;
            sample_field(fwd, qx, qy, fx, fy);
            worst = std::max(worst, std::hypot(qx + fx - g.x(ix), qy + fy - g.y(iy)));
        }
    }
    return worst;
}

}  // namespace

Diffeo integrate_flow(const VectorFieldSeries& nu, double t0, double t1, int n_steps,
                      FlowScheme scheme, bool* cfl_warning) {
    nu.validate();
    if (n_steps < 1) throw std::invalid_argument("integrate_flow: n_steps must be >= 1");
    if (!(t1 >= t0)) throw std::invalid_argument("integrate_flow: need t1 >= t0");
    const Grid2D& g = nu.grid();

    Diffeo d;
    d.grid = g;
    d.forward = VectorField2D(g);
    d.inverse = VectorField2D(g);

    double max_move = 0.0;
    PathField fwd{&nu, +1.0, false, t0, t1};
    integrate_displacement(fwd, d.forward, t0, t1, n_steps, scheme, &max_move);
    PathField bwd{&nu, -1.0, true, t0, t1};
    integrate_displacement(bwd, d.inverse, t0, t1, n_steps, scheme, &max_move);

    if (cfl_warning) *cfl_warning = max_move > g.spacing;
    d.composition_gap = composition_gap(g, d.forward, d.inverse);
    return d;
}

Image2D act_geometric(const Diffeo& d, const Image2D& img) {
    require_same_grid(d.grid, img.grid, "act_geometric");
    Image2D out(img.grid);
    const Grid2D& g = img.grid;
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
            out.v[i] = bilinear_sample_one(img, g.x(ix) + d.inverse.x[i], g.y(iy) + d.inverse.y[i]);
        }
    return out;
}

Image2D act_mass_preserving(const Diffeo& d, const Image2D& img) {
    require_same_grid(d.grid, img.grid, "act_mass_preserving");
    Image2D out = act_geometric(d, img);
    Image2D det = jacobian_det_of_displacement(d.inverse);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= det.v[i];
    return out;
}

Diffeo compose(const Diffeo& b, const Diffeo& a) {
    require_same_grid(a.grid, b.grid, "compose");
    const Grid2D& g = a.grid;
    Diffeo out;
    out.grid = g;
    out.forward = VectorField2D(g);
    out.inverse = VectorField2D(g);
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
            // (b.a)(x) = b(a(x))
            const double ax = g.x(ix) + a.forward.x[i];
            const double ay = g.y(iy) + a.forward.y[i];
            double bx, by;
            sample_field(b.forward, ax, ay, bx, by);
            out.forward.x[i] = ax + bx - g.x(ix);
            out.forward.y[i] = ay + by - g.y(iy);
            // (b.a)^{-1}(x) = a^{-1}(b^{-1}(x))
            const double px = g.x(ix) + b.inverse.x[i];
            const double py = g.y(iy) + b.inverse.y[i];
            double qx, qy;
            sample_field(a.inverse, px, py, qx, qy);
            out.inverse.x[i] = px + qx - g.x(ix);
            out.inverse.y[i] = py + qy - g.y(iy);
        }
    }
    out.composition_gap = composition_gap(g, out.forward, out.inverse);
    return out;
}

void MetamorphosisParams::validate() const {
    nu.validate();
    zeta.validate();
    if (n_steps < 1) throw std::invalid_argument("MetamorphosisParams: n_steps must be >= 1");
    if (nu.times != zeta.times)
        throw std::invalid_argument("MetamorphosisParams: nu and zeta must share the time axis");
    require_same_grid(nu.grid(), zeta.grid(), "MetamorphosisParams");
}

double MetamorphosisParams::interval(int k) const {
    const auto& t = nu.times;
    const int m = static_cast<int>(t.size());
    if (k + 1 < m) return t[k + 1] - t[k];
    if (m > 1) return t[m - 1] - t[m - 2];
    return 1.0 - t[0];
}

MetamorphosisResult integrate_metamorphosis(const MetamorphosisParams& params,
                                            const Image2D& template_img, FlowScheme scheme) {
    params.validate();
    require_same_grid(params.nu.grid(), template_img.grid, "integrate_metamorphosis");
    const Grid2D& g = template_img.grid;
    const int m = params.n_nodes();
    const int sub = params.n_steps;

    MetamorphosisResult res;
    res.flows.push_back(Diffeo::identity(g));
    res.trajectory.times.push_back(params.nu.times[0]);
    res.trajectory.frames.push_back(template_img);
    res.intensity.times.push_back(params.nu.times[0]);
    res.intensity.frames.push_back(template_img);

    VectorField2D fwd(g);
    Image2D f = template_img;

    for (int k = 0; k < m; ++k) {
        const double tk = params.nu.times[k];
        const double dt = params.interval(k);
        const double h = dt / sub;
        const VectorField2D& vel = params.nu.fields[k];
        const Image2D& zk = params.zeta.frames[k];
        for (int s = 0; s < sub; ++s) {
            // intensity source sampled along the current forward flow, then
            // the flow advances (pinned order, shared with the ODE solvers)
            for (int iy = 0; iy < g.ny; ++iy)
                for (int ix = 0; ix < g.nx; ++ix) {
                    const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                    const double px = g.x(ix) + fwd.x[i];
                    const double py = g.y(iy) + fwd.y[i];
                    f.v[i] += h * bilinear_sample_one(zk, px, py);
                }
            for (int iy = 0; iy < g.ny; ++iy)
                for (int ix = 0; ix < g.nx; ++ix) {
                    const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                    const double px = g.x(ix) + fwd.x[i];
                    const double py = g.y(iy) + fwd.y[i];
                    double dx, dy;
                    if (scheme == FlowScheme::Euler) {
                        sample_field(vel, px, py, dx, dy);
                    } else {
                        double k1x, k1y, k2x, k2y, k3x, k3y, k4x, k4y;
                        sample_field(vel, px, py, k1x, k1y);
                        sample_field(vel, px + 0.5 * h * k1x, py + 0.5 * h * k1y, k2x, k2y);
                        sample_field(vel, px + 0.5 * h * k2x, py + 0.5 * h * k2y, k3x, k3y);
                        sample_field(vel, px + h * k3x, py + h * k3y, k4x, k4y);
                        dx = (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0;
                        dy = (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0;
                    }
                    fwd.x[i] += h * dx;
                    fwd.y[i] += h * dy;
                }
        }

        // inverse flow at this boundary: reverse sweep over intervals 0..k
        VectorField2D inv(g);
        for (int r = k; r >= 0; --r) {
            const double dr = params.interval(r);
            const double hr = dr / sub;
            const VectorField2D& vr = params.nu.fields[r];
            for (int s = 0; s < sub; ++s) {
                for (int iy = 0; iy < g.ny; ++iy)
                    for (int ix = 0; ix < g.nx; ++ix) {
                        const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                        const double px = g.x(ix) + inv.x[i];
                        const double py = g.y(iy) + inv.y[i];
                        double dx, dy;
                        if (scheme == FlowScheme::Euler) {
                            sample_field(vr, px, py, dx, dy);
                        } else {
                            double k1x, k1y, k2x, k2y, k3x, k3y, k4x, k4y;
                            sample_field(vr, px, py, k1x, k1y);
                            sample_field(vr, px - 0.5 * hr * k1x, py - 0.5 * hr * k1y, k2x, k2y);
                            sample_field(vr, px - 0.5 * hr * k2x, py - 0.5 * hr * k2y, k3x, k3y);
                            sample_field(vr, px - hr * k3x, py - hr * k3y, k4x, k4y);
                            dx = (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0;
                            dy = (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0;
                        }
                        inv.x[i] -= hr * dx;
                        inv.y[i] -= hr * dy;
                    }
            }
        }

        Diffeo d;
        d.grid = g;
        d.forward = fwd;
        d.inverse = inv;
        d.composition_gap = composition_gap(g, d.forward, d.inverse);

        const double t_next = tk + dt;
        res.intensity.times.push_back(t_next);
        res.intensity.frames.push_back(f);
        res.trajectory.times.push_back(t_next);
        res.trajectory.frames.push_back(act_geometric(d, f));
        res.flows.push_back(std::move(d));
    }
    return res;
}

}  // namespace dyntomo::deform
