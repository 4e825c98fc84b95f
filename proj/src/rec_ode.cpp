#include "dyntomo/rec_ode.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "dyntomo/linop.hpp"
#include "dyntomo/ops.hpp"

namespace dyntomo::ode {

namespace {

// Bilinear stencil over raw planes, with the data needed for both value
// lookups and position derivatives.
struct Stencil {
    std::size_t i00, i10, i01, i11;
    double w00, w10, w01, w11;
    double fx, fy;
    bool in_x, in_y;  // position derivative vanishes in the clamp region
};

inline Stencil stencil_at(const Grid2D& g, double wx, double wy) {
    double px = (wx - g.origin_x) / g.spacing;
    double py = (wy - g.origin_y) / g.spacing;
    Stencil s;
    s.in_x = px > 0.0 && px < g.nx - 1;
    s.in_y = py > 0.0 && py < g.ny - 1;
    px = std::clamp(px, 0.0, static_cast<double>(g.nx - 1));
    py = std::clamp(py, 0.0, static_cast<double>(g.ny - 1));
    int ix = std::min(static_cast<int>(px), std::max(g.nx - 2, 0));
    int iy = std::min(static_cast<int>(py), std::max(g.ny - 2, 0));
    s.fx = px - ix;
    s.fy = py - iy;
    const int ix1 = std::min(ix + 1, g.nx - 1);
    const int iy1 = std::min(iy + 1, g.ny - 1);
    const auto id = [&](int x, int y) { return static_cast<std::size_t>(y) * g.nx + x; };
    s.i00 = id(ix, iy);
    s.i10 = id(ix1, iy);
    s.i01 = id(ix, iy1);
    s.i11 = id(ix1, iy1);
    s.w00 = (1 - s.fx) * (1 - s.fy);
    s.w10 = s.fx * (1 - s.fy);
    s.w01 = (1 - s.fx) * s.fy;
    s.w11 = s.fx * s.fy;
    return s;
}

inline double plane_value(const double* p, const Stencil& s) {
    return s.w00 * p[s.i00] + s.w10 * p[s.i10] + s.w01 * p[s.i01] + s.w11 * p[s.i11];
}

inline void plane_deriv(const double* p, const Stencil& s, double inv_h, double& dx, double& dy) {
    dx = s.in_x ? ((1 - s.fy) * (p[s.i10] - p[s.i00]) + s.fy * (p[s.i11] - p[s.i01])) * inv_h : 0.0;
    dy = s.in_y ? ((1 - s.fx) * (p[s.i01] - p[s.i00]) + s.fx * (p[s.i11] - p[s.i10])) * inv_h : 0.0;
}

inline void plane_scatter(double* p, const Stencil& s, double v) {
    p[s.i00] += s.w00 * v;
    p[s.i10] += s.w10 * v;
    p[s.i01] += s.w01 * v;
    p[s.i11] += s.w11 * v;
}

// Parameter plane offsets in the flat layout.
struct ParamLayout {
    std::size_t n;  // pixels
    int m;          // nodes
    bool has_zeta;
    const double* nu_x(std::span<const double> p, int k) const { return p.data() + (2 * k) * n; }
    const double* nu_y(std::span<const double> p, int k) const { return p.data() + (2 * k + 1) * n; }
    const double* zeta(std::span<const double> p, int k) const {
        return p.data() + (2 * m + k) * n;
    }
    double* nu_x(std::vector<double>& p, int k) const { return p.data() + (2 * k) * n; }
    double* nu_y(std::vector<double>& p, int k) const { return p.data() + (2 * k + 1) * n; }
    double* zeta(std::vector<double>& p, int k) const { return p.data() + (2 * m + k) * n; }
};

// Solve (I - lambda Lap) u = rhs in place on one plane. The replicate-boundary
// Laplacian is the Neumann 5-point stencil, which DCT-II diagonalises exactly.
void sobolev_invert_plane(const Grid2D& g, double lambda, double* plane) {
    const int nx = g.nx, ny = g.ny;
    fftw_plan fwd = fftw_plan_r2r_2d(ny, nx, plane, plane, FFTW_REDFT10, FFTW_REDFT10,
                                     FFTW_ESTIMATE);
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);
    const double inv_h2 = 1.0 / (g.spacing * g.spacing);
    const double norm = 1.0 / (4.0 * nx * ny);
    for (int ky = 0; ky < ny; ++ky) {
        const double my = (2.0 - 2.0 * std::cos(M_PI * ky / ny)) * inv_h2;
        for (int kx = 0; kx < nx; ++kx) {
            const double mx = (2.0 - 2.0 * std::cos(M_PI * kx / nx)) * inv_h2;
            plane[static_cast<std::size_t>(ky) * nx + kx] *= norm / (1.0 + lambda * (mx + my));
        }
    }
    fftw_plan bwd = fftw_plan_r2r_2d(ny, nx, plane, plane, FFTW_REDFT01, FFTW_REDFT01,
                                     FFTW_ESTIMATE);
    fftw_execute(bwd);
    fftw_destroy_plan(bwd);
}

// 2 cell_area (v - lambda div grad v) per component, the exact gradient of
// v_norm_sq with the library's adjoint-consistent operators.
void add_vnorm_grad(const Grid2D& g, const double* vx, const double* vy, double coef,
                    double lambda_v, double* gx, double* gy) {
    VectorField2D v(g);
    std::copy(vx, vx + g.size(), v.x.begin());
    std::copy(vy, vy + g.size(), v.y.begin());
    Image2D cx(g), cy(g);
    cx.v = v.x;
    cy.v = v.y;
    Image2D lx = laplacian(cx);
    Image2D ly = laplacian(cy);
    const double c = 2.0 * g.cell_area() * coef;
    for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += c * (v.x[i] - lambda_v * lx.v[i]);
        gy[i] += c * (v.y[i] - lambda_v * ly.v[i]);
    }
}

}  // namespace

double chain_energy(const ChainSpec& spec, const Image2D& tmpl, std::span<const double> params,
                    std::span<const GateData> gates, std::vector<double>* grad,
                    ChainOutputs* outputs) {
    const Grid2D& g = spec.grid;
    const std::size_t n = g.size();
    const int m = spec.n_nodes;
    const int S = spec.substeps;
    if (m < 1 || S < 1) throw std::invalid_argument("chain_energy: bad node/substep counts");
    if (params.size() != spec.n_params()) throw std::invalid_argument("chain_energy: parameter size");
    require_same_grid(tmpl.grid, g, "chain_energy");
    const double dt = spec.interval();
    const double delta = dt / S;
    const double inv_h = 1.0 / g.spacing;
    const ParamLayout lay{n, m, spec.has_zeta};

    std::vector<double> nu_w = spec.nu_weights;
    if (nu_w.empty()) nu_w.assign(m, dt);
    if (static_cast<int>(nu_w.size()) != m)
        throw std::invalid_argument("chain_energy: nu_weights size");

    // --- forward flow with snapshots -------------------------------------
    const int total_sub = m * S;
    std::vector<std::vector<double>> dsx(total_sub + 1), dsy(total_sub + 1);
    dsx[0].assign(n, 0.0);
    dsy[0].assign(n, 0.0);
    std::vector<Image2D> Fb(m + 1, Image2D(g));
    Fb[0] = tmpl;
    {
        std::vector<double> dx = dsx[0], dy = dsy[0];
        Image2D F = tmpl;
        for (int k = 0; k < m; ++k) {
            const double* vx = lay.nu_x(params, k);
            const double* vy = lay.nu_y(params, k);
            const double* zk = spec.has_zeta ? lay.zeta(params, k) : nullptr;
            for (int s = 0; s < S; ++s) {
                const int q = k * S + s;
                for (int iy = 0; iy < g.ny; ++iy) {
                    for (int ix = 0; ix < g.nx; ++ix) {
                        const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                        const Stencil st = stencil_at(g, g.x(ix) + dx[i], g.y(iy) + dy[i]);
                        if (zk) F.v[i] += delta * plane_value(zk, st);
                        dx[i] += delta * plane_value(vx, st);
                        dy[i] += delta * plane_value(vy, st);
                    }
                }
                dsx[q + 1] = dx;
                dsy[q + 1] = dy;
            }
            Fb[k + 1] = F;
        }
    }

    // --- per-gate inverse chains, actions, data terms ---------------------
    struct GateWork {
        std::vector<std::vector<double>> esx, esy;  // inverse-chain snapshots
        Image2D warped;                             // sample(F_b, x + e)
        Image2D det;                                // mass-preserving Jacobian factor
        Image2D recon;
        tomo::Sinogram sino;
        tomo::Sinogram data_residual;
    };
    std::vector<GateWork> work(gates.size());

    double energy = 0.0;
    for (std::size_t gi = 0; gi < gates.size(); ++gi) {
        const GateData& gd = gates[gi];
        if (gd.boundary < 1 || gd.boundary > m)
            throw std::invalid_argument("chain_energy: gate boundary out of range");
        GateWork& w = work[gi];
        const int b = gd.boundary;
        const int bs = b * S;
        w.esx.resize(bs + 1);
        w.esy.resize(bs + 1);
        w.esx[0].assign(n, 0.0);
        w.esy[0].assign(n, 0.0);
        std::vector<double> ex = w.esx[0], ey = w.esy[0];
        for (int u = 0; u < bs; ++u) {
            const int r = b - 1 - u / S;
            const double* vx = lay.nu_x(params, r);
            const double* vy = lay.nu_y(params, r);
            for (int iy = 0; iy < g.ny; ++iy) {
                for (int ix = 0; ix < g.nx; ++ix) {
                    const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                    const Stencil st = stencil_at(g, g.x(ix) + ex[i], g.y(iy) + ey[i]);
                    ex[i] -= delta * plane_value(vx, st);
                    ey[i] -= delta * plane_value(vy, st);
                }
            }
            w.esx[u + 1] = ex;
            w.esy[u + 1] = ey;
        }

        // geometric action through the final inverse displacement
        w.warped = Image2D(g);
        for (int iy = 0; iy < g.ny; ++iy)
            for (int ix = 0; ix < g.nx; ++ix) {
                const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                const Stencil st = stencil_at(g, g.x(ix) + ex[i], g.y(iy) + ey[i]);
                w.warped.v[i] = plane_value(Fb[b].v.data(), st);
            }
        w.recon = w.warped;
        if (spec.action == ActionKind::MassPreserving) {
            VectorField2D e(g);
            e.x = ex;
            e.y = ey;
            w.det = jacobian_det_of_displacement(e);
            for (std::size_t i = 0; i < n; ++i) w.recon.v[i] *= w.det.v[i];
        }

        w.sino = tomo::ray_transform(w.recon, *gd.geom);
        w.data_residual = w.sino;
        double e_data = 0.0;
        for (std::size_t i = 0; i < w.sino.v.size(); ++i) {
            w.data_residual.v[i] -= gd.sino->v[i];
            e_data += 0.5 * w.data_residual.v[i] * w.data_residual.v[i];
        }
        energy += e_data;
        if (gd.tv_weight > 0.0) energy += gd.tv_weight * var::tv_energy(w.recon, gd.tv_eps);
    }

    // --- regularisers ------------------------------------------------------
    for (int k = 0; k < m; ++k) {
        if (spec.lambda_flow > 0.0) {
            VectorField2D v(g);
            std::copy(lay.nu_x(params, k), lay.nu_x(params, k) + n, v.x.begin());
            std::copy(lay.nu_y(params, k), lay.nu_y(params, k) + n, v.y.begin());
            energy += spec.lambda_flow * nu_w[k] * deform::v_norm_sq(v, spec.vnorm);
        }
        if (spec.has_zeta && spec.tau_intensity > 0.0) {
            const double* zk = lay.zeta(params, k);
            double zz = 0.0;
            for (std::size_t i = 0; i < n; ++i) zz += zk[i] * zk[i];
            energy += spec.tau_intensity * dt * zz * g.cell_area();
        }
    }

    if (outputs) {
        outputs->recon.clear();
        outputs->intensity.clear();
        outputs->fwd_disp.clear();
        outputs->inv_disp.clear();
        for (std::size_t gi = 0; gi < gates.size(); ++gi) {
            const int b = gates[gi].boundary;
            outputs->recon.push_back(work[gi].recon);
            outputs->intensity.push_back(Fb[b]);
            VectorField2D fwd(g), inv(g);
            fwd.x = dsx[b * S];
            fwd.y = dsy[b * S];
            inv.x = work[gi].esx[b * S];
            inv.y = work[gi].esy[b * S];
            outputs->fwd_disp.push_back(std::move(fwd));
            outputs->inv_disp.push_back(std::move(inv));
        }
    }

    if (!grad) return energy;

    // --- backward pass -----------------------------------------------------
    grad->assign(spec.n_params(), 0.0);
    std::vector<Image2D> gF_at_boundary(m + 1, Image2D(g));  // scatter targets per boundary

    for (std::size_t gi = 0; gi < gates.size(); ++gi) {
        const GateData& gd = gates[gi];
        GateWork& w = work[gi];
        const int b = gd.boundary;
        const int bs = b * S;

        Image2D grecon = tomo::backprojection(w.data_residual, *gd.geom, g);
        if (gd.tv_weight > 0.0) {
            Image2D gtv = var::tv_grad_huber(w.recon, gd.tv_eps);
            for (std::size_t i = 0; i < n; ++i) grecon.v[i] += gd.tv_weight * gtv.v[i];
        }

        std::vector<double> gex(n, 0.0), gey(n, 0.0);
        Image2D gwarp(g);
        if (spec.action == ActionKind::MassPreserving) {
            // recon = det * warped
            Image2D gdet(g);
            for (std::size_t i = 0; i < n; ++i) {
                gdet.v[i] = grecon.v[i] * w.warped.v[i];
                gwarp.v[i] = grecon.v[i] * w.det.v[i];
            }
            // det = (1+a)(1+d) - b c of the central differences of e
            Image2D exi(g), eyi(g);
            exi.v = w.esx[bs];
            eyi.v = w.esy[bs];
            Image2D a(g), bb(g), c(g), d(g);
            central_diff_x(exi, a);
            central_diff_y(exi, bb);
            central_diff_x(eyi, c);
            central_diff_y(eyi, d);
            Image2D ga(g), gb(g), gc(g), gdd(g);
            for (std::size_t i = 0; i < n; ++i) {
                ga.v[i] = gdet.v[i] * (1.0 + d.v[i]);
                gdd.v[i] = gdet.v[i] * (1.0 + a.v[i]);
                gb.v[i] = -gdet.v[i] * c.v[i];
                gc.v[i] = -gdet.v[i] * bb.v[i];
            }
            Image2D t1(g), t2(g);
            central_diff_x_adjoint(ga, t1);
            central_diff_y_adjoint(gb, t2);
            for (std::size_t i = 0; i < n; ++i) gex[i] += t1.v[i] + t2.v[i];
            central_diff_x_adjoint(gc, t1);
            central_diff_y_adjoint(gdd, t2);
            for (std::size_t i = 0; i < n; ++i) gey[i] += t1.v[i] + t2.v[i];
        } else {
            gwarp = grecon;
        }

        // backward through the geometric action
        const double* Fplane = Fb[b].v.data();
        for (int iy = 0; iy < g.ny; ++iy)
            for (int ix = 0; ix < g.nx; ++ix) {
                const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                const Stencil st =
                    stencil_at(g, g.x(ix) + w.esx[bs][i], g.y(iy) + w.esy[bs][i]);
                plane_scatter(gF_at_boundary[b].v.data(), st, gwarp.v[i]);
                double fdx, fdy;
                plane_deriv(Fplane, st, inv_h, fdx, fdy);
                gex[i] += gwarp.v[i] * fdx;
                gey[i] += gwarp.v[i] * fdy;
            }

        // backward through the inverse Euler chain
        for (int u = bs - 1; u >= 0; --u) {
            const int r = b - 1 - u / S;
            const double* vx = lay.nu_x(params, r);
            const double* vy = lay.nu_y(params, r);
            double* gnx = lay.nu_x(*grad, r);
            double* gny = lay.nu_y(*grad, r);
            for (int iy = 0; iy < g.ny; ++iy)
                for (int ix = 0; ix < g.nx; ++ix) {
                    const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                    const Stencil st =
                        stencil_at(g, g.x(ix) + w.esx[u][i], g.y(iy) + w.esy[u][i]);
                    const double gx = gex[i], gy = gey[i];
                    // e_{u+1} = e_u - delta * nu_r(x + e_u)
                    plane_scatter(gnx, st, -delta * gx);
                    plane_scatter(gny, st, -delta * gy);
                    double axx, axy, ayx, ayy;
                    plane_deriv(vx, st, inv_h, axx, axy);
                    plane_deriv(vy, st, inv_h, ayx, ayy);
                    gex[i] = gx - delta * (axx * gx + ayx * gy);
                    gey[i] = gy - delta * (axy * gx + ayy * gy);
                }
        }
    }

    // suffix sums over boundaries: gFsfx[k] = sum of gF at boundaries >= k
    std::vector<Image2D> gFsfx(m + 2, Image2D(g));
    for (int b = m; b >= 1; --b) {
        gFsfx[b] = gFsfx[b + 1];
        for (std::size_t i = 0; i < n; ++i) gFsfx[b].v[i] += gF_at_boundary[b].v[i];
    }

    // backward through the forward chain (only the intensity path uses it)
    if (spec.has_zeta) {
        std::vector<double> gdx(n, 0.0), gdy(n, 0.0);
        for (int q = total_sub - 1; q >= 0; --q) {
            const int k = q / S;
            const double* vx = lay.nu_x(params, k);
            const double* vy = lay.nu_y(params, k);
            const double* zk = lay.zeta(params, k);
            double* gnx = lay.nu_x(*grad, k);
            double* gny = lay.nu_y(*grad, k);
            double* gzk = lay.zeta(*grad, k);
            const Image2D& gF = gFsfx[k + 1];
            for (int iy = 0; iy < g.ny; ++iy)
                for (int ix = 0; ix < g.nx; ++ix) {
                    const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                    const Stencil st = stencil_at(g, g.x(ix) + dsx[q][i], g.y(iy) + dsy[q][i]);
                    const double gx = gdx[i], gy = gdy[i];
                    // d-update: d_{q+1} = d_q + delta nu_k(x + d_q)
                    plane_scatter(gnx, st, delta * gx);
                    plane_scatter(gny, st, delta * gy);
                    double axx, axy, ayx, ayy;
                    plane_deriv(vx, st, inv_h, axx, axy);
                    plane_deriv(vy, st, inv_h, ayx, ayy);
                    double ngx = gx + delta * (axx * gx + ayx * gy);
                    double ngy = gy + delta * (axy * gx + ayy * gy);
                    // intensity update: F += delta zeta_k(x + d_q)
                    const double gf = gF.v[i];
                    if (gf != 0.0) {
                        plane_scatter(gzk, st, delta * gf);
                        double zdx, zdy;
                        plane_deriv(zk, st, inv_h, zdx, zdy);
                        ngx += delta * gf * zdx;
                        ngy += delta * gf * zdy;
                    }
                    gdx[i] = ngx;
                    gdy[i] = ngy;
                }
        }
    }

    // regulariser gradients
    for (int k = 0; k < m; ++k) {
        if (spec.lambda_flow > 0.0)
            add_vnorm_grad(g, lay.nu_x(params, k), lay.nu_y(params, k),
                           spec.lambda_flow * nu_w[k], spec.vnorm.lambda_v, lay.nu_x(*grad, k),
                           lay.nu_y(*grad, k));
        if (spec.has_zeta && spec.tau_intensity > 0.0) {
            const double* zk = lay.zeta(params, k);
            double* gzk = lay.zeta(*grad, k);
            const double c = 2.0 * spec.tau_intensity * dt * g.cell_area();
            for (std::size_t i = 0; i < n; ++i) gzk[i] += c * zk[i];
        }
    }

    return energy;
}

// ---------------------------------------------------------------------------

namespace {

deform::MetamorphosisParams unpack_params(const ChainSpec& spec, std::span<const double> params,
                                          double t0 = 0.0) {
    const std::size_t n = spec.grid.size();
    const ParamLayout lay{n, spec.n_nodes, spec.has_zeta};
    deform::MetamorphosisParams mp;
    mp.n_steps = spec.substeps;
    for (int k = 0; k < spec.n_nodes; ++k) {
        const double t = t0 + k * spec.interval();
        mp.nu.times.push_back(t);
        mp.zeta.times.push_back(t);
        VectorField2D v(spec.grid);
        std::copy(lay.nu_x(params, k), lay.nu_x(params, k) + n, v.x.begin());
        std::copy(lay.nu_y(params, k), lay.nu_y(params, k) + n, v.y.begin());
        mp.nu.fields.push_back(std::move(v));
        Image2D z(spec.grid);
        if (spec.has_zeta) std::copy(lay.zeta(params, k), lay.zeta(params, k) + n, z.v.begin());
        mp.zeta.frames.push_back(std::move(z));
    }
    return mp;
}

GdProblem make_chain_gd(const ChainSpec& spec, const Image2D& tmpl,
                        const std::vector<GateData>& gates) {
    GdProblem prob;
    prob.energy = [&spec, &tmpl, &gates](std::span<const double> p) {
        return chain_energy(spec, tmpl, p, gates, nullptr);
    };
    prob.gradient = [&spec, &tmpl, &gates](std::span<const double> p, std::span<double> out) {
        std::vector<double> gbuf;
        chain_energy(spec, tmpl, p, gates, &gbuf);
        std::copy(gbuf.begin(), gbuf.end(), out.begin());
    };
    // descent in the V metric: smooth the velocity planes by (I - lambda Lap)^-1
    prob.precondition = [spec](std::span<double> grad) {
        const std::size_t n = spec.grid.size();
        for (int k = 0; k < 2 * spec.n_nodes; ++k)
            sobolev_invert_plane(spec.grid, spec.vnorm.lambda_v, grad.data() + k * n);
    };
    return prob;
}

// Convex template update: min_I sum_j 1/2 || A_j W_j I - (g_j - c_j) ||^2
// + gamma TV(I), where W_j warps by the gate's fixed inverse displacement and
// c_j covers the accumulated intensity part.
Image2D template_update(const Grid2D& grid, const tomo::GatedDataset& ds,
                        const std::vector<VectorField2D>& inv_disp,
                        const std::vector<Image2D>& zeta_offsets, ActionKind action,
                        double gamma, const PdhgOptions& opts, SolveReport* rep) {
    const std::size_t npix = grid.size();
    const int n = ds.n_frames();
    std::vector<std::unique_ptr<Image2D>> dets;
    std::vector<std::unique_ptr<WarpOp>> warps;
    std::vector<std::unique_ptr<RayOp>> rays;
    std::vector<std::unique_ptr<ComposedOp>> comps;
    std::vector<const LinOp*> blocks;
    std::vector<std::vector<double>> shifted(n);
    for (int j = 0; j < n; ++j) {
        const Image2D* det = nullptr;
        if (action == ActionKind::MassPreserving) {
            dets.push_back(std::make_unique<Image2D>(jacobian_det_of_displacement(inv_disp[j])));
            det = dets.back().get();
        }
        warps.push_back(std::make_unique<WarpOp>(grid, inv_disp[j], det));
        rays.push_back(std::make_unique<RayOp>(grid, ds.schedule.frames[j]));
        comps.push_back(std::make_unique<ComposedOp>(rays.back().get(), warps.back().get()));
        blocks.push_back(comps.back().get());

        // data shift from the intensity contribution
        shifted[j] = ds.sinograms[j].v;
        if (!zeta_offsets.empty()) {
            std::vector<double> warped(npix, 0.0);
            warps.back()->apply(zeta_offsets[j].v, warped);
            std::vector<double> proj(rays.back()->rows(), 0.0);
            rays.back()->apply(warped, proj);
            for (std::size_t i = 0; i < shifted[j].size(); ++i) shifted[j][i] -= proj[i];
        }
    }
    GradOp D(grid);
    blocks.push_back(&D);
    StackedOp K(blocks);

    SaddleSpec spec;
    spec.K = &K;
    std::size_t off = 0;
    for (int j = 0; j < n; ++j) {
        spec.dual_blocks.push_back(dual_l2sq(off, comps[j]->rows(), shifted[j]));
        off += comps[j]->rows();
    }
    spec.dual_blocks.push_back(dual_iso_pairs(off, npix, 2, gamma * grid.cell_area()));
    spec.energy = [&](std::span<const double> x) {
        double e = 0.0;
        std::vector<double> fw;
        for (int j = 0; j < n; ++j) {
            fw.assign(comps[j]->rows(), 0.0);
            comps[j]->apply(x, fw);
            for (std::size_t i = 0; i < fw.size(); ++i) {
                const double d = fw[i] - shifted[j][i];
                e += 0.5 * d * d;
            }
        }
        Image2D img(grid);
        std::copy(x.begin(), x.end(), img.v.begin());
        return e + gamma * var::tv_energy(img);
    };

    auto [x, r] = pdhg(spec, std::vector<double>(npix, 0.0), opts);
    if (rep) *rep = std::move(r);
    Image2D out(grid);
    std::copy(x.begin(), x.end(), out.v.begin());
    return out;
}

ChainSpec gate_chain_spec(const Grid2D& grid, int boundary, int n_gates, const OdeRecConfig& cfg) {
    ChainSpec spec;
    spec.grid = grid;
    spec.n_nodes = boundary;
    spec.substeps = cfg.substeps;
    spec.total_time = static_cast<double>(boundary) / n_gates;
    spec.has_zeta = true;
    spec.action = cfg.action;
    spec.lambda_flow = cfg.lambda_flow;
    spec.tau_intensity = cfg.tau_intensity;
    return spec;
}

double tv_of(const Image2D& img) { return var::tv_energy(img); }

}  // namespace

IndirectRegResult indirect_register_meta(const Image2D& tmpl, const tomo::Sinogram& sino,
                                         const tomo::ProjectionGeometry& geom,
                                         const OdeRecConfig& cfg) {
    if (cfg.fit.kind != var::DataFitKind::L2sq)
        throw std::invalid_argument("indirect_register_meta: the ODE branch uses the L2sq fit");
    ChainSpec spec;
    spec.grid = tmpl.grid;
    spec.n_nodes = cfg.reg_nodes;
    spec.substeps = cfg.substeps;
    spec.total_time = 1.0;
    spec.has_zeta = true;
    spec.action = cfg.action;
    spec.lambda_flow = cfg.lambda_flow;
    spec.tau_intensity = cfg.tau_intensity;

    std::vector<GateData> gates = {{spec.n_nodes, &sino, &geom, 0.0, 1e-3}};
    GdProblem prob = make_chain_gd(spec, tmpl, gates);
    auto [p, rep] = grad_descent(prob, std::vector<double>(spec.n_params(), 0.0), cfg.inner_gd);

    ChainOutputs out;
    chain_energy(spec, tmpl, p, gates, nullptr, &out);
    IndirectRegResult res;
    res.params = unpack_params(spec, p);
    res.deformed = out.recon[0];
    res.report = std::move(rep);
    return res;
}

MetamorphosisRecResult reconstruct_metamorphosis(const tomo::GatedDataset& ds,
                                                 const OdeRecConfig& cfg) {
    ds.validate();
    if (cfg.fit.kind != var::DataFitKind::L2sq)
        throw std::invalid_argument("reconstruct_metamorphosis: the ODE branch uses the L2sq fit");
    const Grid2D& grid = ds.grid;
    const int n = ds.n_frames();

    // template from the first gate
    Image2D tmpl = var::tv_reconstruct_single(ds.sinograms[0], ds.schedule.frames[0], grid,
                                              cfg.fit, cfg.gamma_template, cfg.inner_pdhg);

    std::vector<ChainSpec> specs;
    std::vector<std::vector<double>> params(n);
    for (int j = 0; j < n; ++j) {
        specs.push_back(gate_chain_spec(grid, j + 1, n, cfg));
        params[j].assign(specs[j].n_params(), 0.0);
    }

    auto total_objective = [&](const Image2D& I) {
        double e = cfg.gamma_template * tv_of(I);
        for (int j = 0; j < n; ++j) {
            std::vector<GateData> gate = {{j + 1, &ds.sinograms[j], &ds.schedule.frames[j]}};
            e += chain_energy(specs[j], I, params[j], gate, nullptr);
        }
        return e;
    };

    SolveReport rep;
    rep.energy_trace.push_back(total_objective(tmpl));
    int guard_hits = 0;

    for (int outer = 0; outer < cfg.outer_iters; ++outer) {
        // per-gate indirect registrations (independent subproblems)
        for (int j = 0; j < n; ++j) {
            std::vector<GateData> gate = {{j + 1, &ds.sinograms[j], &ds.schedule.frames[j]}};
            GdProblem prob = make_chain_gd(specs[j], tmpl, gate);
            params[j] = grad_descent(prob, params[j], cfg.inner_gd).first;
        }

        // template update with deformations fixed
        std::vector<VectorField2D> inv_disp;
        std::vector<Image2D> zeta_off;
        for (int j = 0; j < n; ++j) {
            std::vector<GateData> gate = {{j + 1, &ds.sinograms[j], &ds.schedule.frames[j]}};
            ChainOutputs out;
            chain_energy(specs[j], tmpl, params[j], gate, nullptr, &out);
            inv_disp.push_back(out.inv_disp[0]);
            Image2D gz = out.intensity[0];
            for (std::size_t i = 0; i < gz.v.size(); ++i) gz.v[i] -= tmpl.v[i];
            zeta_off.push_back(std::move(gz));
        }
        Image2D cand = template_update(grid, ds, inv_disp, zeta_off, cfg.action,
                                       cfg.gamma_template, cfg.inner_pdhg, nullptr);
        const double e_prev = total_objective(tmpl);
        const double e_cand = total_objective(cand);
        if (e_cand <= e_prev + 1e-8 * std::max(1.0, std::abs(e_prev))) {
            tmpl = std::move(cand);
        } else {
            ++guard_hits;  // inexact inner solve; keep the previous template
        }
        rep.energy_trace.push_back(total_objective(tmpl));
        if (!std::isfinite(rep.energy_trace.back())) {
            rep.stop_reason = StopReason::NonFiniteEnergy;
            break;
        }
    }
    rep.iterations = static_cast<int>(rep.energy_trace.size()) - 1;
    rep.converged = rep.stop_reason != StopReason::NonFiniteEnergy;
    if (rep.converged) rep.stop_reason = StopReason::MaxIterations;
    rep.stats["template_guard_hits"] = guard_hits;

    // final trajectories
    MetamorphosisRecResult res;
    res.template_img = tmpl;
    res.report = std::move(rep);
    for (int j = 0; j < n; ++j) {
        std::vector<GateData> gate = {{j + 1, &ds.sinograms[j], &ds.schedule.frames[j]}};
        ChainOutputs out;
        chain_energy(specs[j], tmpl, params[j], gate, nullptr, &out);
        const double t = static_cast<double>(j + 1) / n;
        res.recon.times.push_back(t);
        res.recon.frames.push_back(out.recon[0]);
        res.photo_traj.times.push_back(t);
        res.photo_traj.frames.push_back(out.intensity[0]);
        // shape trajectory: the flow applied to the template, zeta ignored
        deform::Diffeo d;
        d.grid = grid;
        d.forward = out.fwd_disp[0];
        d.inverse = out.inv_disp[0];
        res.shape_traj.times.push_back(t);
        res.shape_traj.frames.push_back(deform::act_geometric(d, tmpl));
    }
    return res;
}

LddmmRecResult reconstruct_lddmm(const tomo::GatedDataset& ds, const OdeRecConfig& cfg) {
    ds.validate();
    if (cfg.fit.kind != var::DataFitKind::L2sq)
        throw std::invalid_argument("reconstruct_lddmm: the ODE branch uses the L2sq fit");
    const Grid2D& grid = ds.grid;
    const int n = ds.n_frames();

    Image2D tmpl = var::tv_reconstruct_single(ds.sinograms[0], ds.schedule.frames[0], grid,
                                              cfg.fit, cfg.gamma_template, cfg.inner_pdhg);

    ChainSpec spec;
    spec.grid = grid;
    spec.n_nodes = n;
    spec.substeps = cfg.substeps;
    spec.total_time = 1.0;
    spec.has_zeta = false;
    spec.action = cfg.action;
    spec.lambda_flow = cfg.lambda_flow;
    // nested time integral of Eq. 24: node k appears in every gate j > k
    spec.nu_weights.assign(n, 0.0);
    for (int k = 0; k < n; ++k) spec.nu_weights[k] = (n - k) * spec.interval();

    std::vector<GateData> gates;
    for (int j = 0; j < n; ++j) gates.push_back({j + 1, &ds.sinograms[j], &ds.schedule.frames[j]});

    std::vector<double> params(spec.n_params(), 0.0);

    auto total_objective = [&](const Image2D& I, const std::vector<double>& p) {
        return chain_energy(spec, I, p, gates, nullptr) + cfg.gamma_template * tv_of(I);
    };

    SolveReport rep;
    rep.energy_trace.push_back(total_objective(tmpl, params));
    int guard_hits = 0;

    for (int outer = 0; outer < cfg.outer_iters; ++outer) {
        GdProblem prob = make_chain_gd(spec, tmpl, gates);
        params = grad_descent(prob, params, cfg.inner_gd).first;

        ChainOutputs out;
        chain_energy(spec, tmpl, params, gates, nullptr, &out);
        Image2D cand = template_update(grid, ds, out.inv_disp, {}, cfg.action, cfg.gamma_template,
                                       cfg.inner_pdhg, nullptr);
        const double e_prev = total_objective(tmpl, params);
        const double e_cand = total_objective(cand, params);
        if (e_cand <= e_prev + 1e-8 * std::max(1.0, std::abs(e_prev))) {
            tmpl = std::move(cand);
        } else {
            ++guard_hits;
        }
        rep.energy_trace.push_back(total_objective(tmpl, params));
        if (!std::isfinite(rep.energy_trace.back())) {
            rep.stop_reason = StopReason::NonFiniteEnergy;
            break;
        }
    }
    rep.iterations = static_cast<int>(rep.energy_trace.size()) - 1;
    rep.converged = rep.stop_reason != StopReason::NonFiniteEnergy;
    if (rep.converged) rep.stop_reason = StopReason::MaxIterations;
    rep.stats["template_guard_hits"] = guard_hits;

    LddmmRecResult res;
    res.template_img = tmpl;
    ChainOutputs out;
    chain_energy(spec, tmpl, params, gates, nullptr, &out);
    for (int j = 0; j < n; ++j) {
        res.recon.times.push_back(static_cast<double>(j + 1) / n);
        res.recon.frames.push_back(out.recon[j]);
    }
    deform::MetamorphosisParams mp = unpack_params(spec, params);
    res.velocity = std::move(mp.nu);
    res.report = std::move(rep);
    return res;
}

SequentialRecResult reconstruct_sequential(const tomo::GatedDataset& ds, const OdeRecConfig& cfg) {
    ds.validate();
    if (ds.n_frames() < 2)
        throw std::invalid_argument("reconstruct_sequential: need at least 2 frames");
    if (ds.schedule.frames[0].n_angles() < 1)
        throw std::invalid_argument("reconstruct_sequential: first frame has no data");
    const Grid2D& grid = ds.grid;
    const int n = ds.n_frames();

    SequentialRecResult res;
    res.recon.times = ds.times;

    Image2D prev = var::tv_reconstruct_single(ds.sinograms[0], ds.schedule.frames[0], grid,
                                              cfg.fit, cfg.gamma_template, cfg.inner_pdhg);
    res.recon.frames.push_back(prev);

    SolveReport rep;
    std::vector<double> frame_energy;

    ChainSpec spec;
    spec.grid = grid;
    spec.n_nodes = 1;
    spec.substeps = cfg.substeps;
    spec.total_time = 1.0;
    spec.has_zeta = true;
    spec.action = cfg.action;
    spec.lambda_flow = cfg.lambda_flow;
    spec.tau_intensity = cfg.tau_intensity;

    for (int j = 1; j < n; ++j) {
        std::vector<GateData> gate = {
            {1, &ds.sinograms[j], &ds.schedule.frames[j], cfg.gamma_template, 1e-3}};
        GdProblem prob = make_chain_gd(spec, prev, gate);
        auto [p, r] = grad_descent(prob, std::vector<double>(spec.n_params(), 0.0), cfg.inner_gd);
        ChainOutputs out;
        chain_energy(spec, prev, p, gate, nullptr, &out);
        prev = out.recon[0];
        res.recon.frames.push_back(prev);
        frame_energy.push_back(r.final_energy());
    }

    rep.energy_trace.push_back(0.0);
    for (double e : frame_energy) rep.energy_trace.push_back(e);
    rep.iterations = static_cast<int>(frame_energy.size());
    rep.converged = true;
    rep.stop_reason = StopReason::Converged;
    rep.stats["frames"] = n;
    res.report = std::move(rep);
    return res;
}

double metamorphosis_objective(const tomo::GatedDataset& ds, const OdeRecConfig& cfg,
                               const Image2D& tmpl,
                               const std::vector<std::vector<double>>& gate_params) {
    ds.validate();
    const int n = ds.n_frames();
    double e = cfg.gamma_template * var::tv_energy(tmpl);
    for (int j = 0; j < n; ++j) {
        ChainSpec spec = gate_chain_spec(ds.grid, j + 1, n, cfg);
        std::vector<GateData> gate = {{j + 1, &ds.sinograms[j], &ds.schedule.frames[j]}};
        e += chain_energy(spec, tmpl, gate_params[j], gate, nullptr);
    }
    return e;
}

double lddmm_objective(const tomo::GatedDataset& ds, const OdeRecConfig& cfg, const Image2D& tmpl,
                       std::span<const double> nu_params) {
    ds.validate();
    const int n = ds.n_frames();
    ChainSpec spec;
    spec.grid = ds.grid;
    spec.n_nodes = n;
    spec.substeps = cfg.substeps;
    spec.total_time = 1.0;
    spec.has_zeta = false;
    spec.action = cfg.action;
    spec.lambda_flow = cfg.lambda_flow;
    spec.nu_weights.assign(n, 0.0);
    for (int k = 0; k < n; ++k) spec.nu_weights[k] = (n - k) * spec.interval();
    std::vector<GateData> gates;
    for (int j = 0; j < n; ++j) gates.push_back({j + 1, &ds.sinograms[j], &ds.schedule.frames[j]});
    return chain_energy(spec, tmpl, nu_params, gates, nullptr) +
           cfg.gamma_template * var::tv_energy(tmpl);
}

}  // namespace dyntomo::ode
