#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dyntomo/ops.hpp"
#include "dyntomo/rec_ode.hpp"
#include "dyntomo/rng.hpp"
#include "dyntomo/tomo.hpp"
#include "dyntomo/variational.hpp"
#include "support/testutil.hpp"

using namespace dyntomo;
using namespace dyntomo::ode;

namespace {

std::vector<double> even_angles(int n) {
    std::vector<double> a(n);
    for (int i = 0; i < n; ++i) a[i] = M_PI * i / n;
    return a;
}

// relative error of the analytic directional derivative against central FD
double gradient_fd_gap(const ChainSpec& spec, const Image2D& tmpl,
                       const std::vector<GateData>& gates, std::uint64_t seed) {
    auto eng = make_engine(seed);
    std::vector<double> p(spec.n_params());
    for (double& v : p) v = uniform(eng, -0.3, 0.3);
    std::vector<double> dir(p.size());
    for (double& v : dir) v = uniform(eng, -1.0, 1.0);
    const double dn = nrm2(dir);
    for (double& v : dir) v /= dn;

    std::vector<double> grad;
    chain_energy(spec, tmpl, p, gates, &grad);
    const double an = dot(grad, dir);

    const double h = 1e-5;
    std::vector<double> pp = p, pm = p;
    axpy(h, dir, pp);
    axpy(-h, dir, pm);
    const double ep = chain_energy(spec, tmpl, pp, gates, nullptr);
    const double em = chain_energy(spec, tmpl, pm, gates, nullptr);
    const double fd = (ep - em) / (2.0 * h);
    return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12});
}

}  // namespace

TEST_CASE("chain gradients match finite differences on 16^2 instances") {
    Grid2D g = Grid2D::centered(16, 16, 1.0);
    Image2D tmpl = testutil::smooth_disc_image(g, 1.0, -0.5, 4.0, 1.0, 2.0);
    tomo::ProjectionGeometry geom = tomo::default_geometry(g, even_angles(6));
    Image2D target = testutil::smooth_disc_image(g, 2.0, 0.5, 4.0, 0.9, 2.0);
    tomo::Sinogram sino = tomo::ray_transform(target, geom);

    ChainSpec spec;
    spec.grid = g;
    spec.n_nodes = 2;
    spec.substeps = 2;
    spec.total_time = 1.0;
    spec.has_zeta = true;
    spec.lambda_flow = 0.02;
    spec.tau_intensity = 0.1;

    std::vector<GateData> gates = {{2, &sino, &geom}};

    SUBCASE("geometric action, metamorphosis parameters") {
        for (std::uint64_t s : {1ULL, 2ULL, 3ULL})
            CHECK(gradient_fd_gap(spec, tmpl, gates, s) <= 1e-4);
    }
    SUBCASE("mass-preserving action") {
        spec.action = ActionKind::MassPreserving;
        for (std::uint64_t s : {4ULL, 5ULL})
            CHECK(gradient_fd_gap(spec, tmpl, gates, s) <= 1e-4);
    }
    SUBCASE("pure LDDMM parameters (no intensity path)") {
        spec.has_zeta = false;
        for (std::uint64_t s : {6ULL, 7ULL})
            CHECK(gradient_fd_gap(spec, tmpl, gates, s) <= 1e-4);
    }
    SUBCASE("with the Huber-TV term of the sequential scheme") {
        gates[0].tv_weight = 0.05;
        gates[0].tv_eps = 0.05;
        CHECK(gradient_fd_gap(spec, tmpl, gates, 8) <= 1e-4);
    }
    SUBCASE("multi-gate readout on a shared chain") {
        spec.has_zeta = false;
        tomo::Sinogram sino1 = tomo::ray_transform(tmpl, geom);
        std::vector<GateData> two = {{1, &sino1, &geom}, {2, &sino, &geom}};
        CHECK(gradient_fd_gap(spec, tmpl, two, 9) <= 1e-4);
    }
}

TEST_CASE("matched data keeps the registration at zero deformation") {
    Grid2D g = Grid2D::centered(16, 16, 1.0);
    Image2D tmpl = testutil::smooth_disc_image(g, 0.5, 0.5, 4.0, 1.0, 2.0);
    tomo::ProjectionGeometry geom = tomo::default_geometry(g, even_angles(8));
    tomo::Sinogram sino = tomo::ray_transform(tmpl, geom);

    OdeRecConfig cfg;
    cfg.reg_nodes = 2;
    cfg.substeps = 2;
    cfg.inner_gd.max_iter = 30;
    IndirectRegResult res = indirect_register_meta(tmpl, sino, geom, cfg);

    // zero parameters reproduce the data exactly, so the solved energy must be
    // far below the energy of a perturbed start
    ChainSpec spec;
    spec.grid = g;
    spec.n_nodes = cfg.reg_nodes;
    spec.substeps = cfg.substeps;
    spec.has_zeta = true;
    spec.lambda_flow = cfg.lambda_flow;
    spec.tau_intensity = cfg.tau_intensity;
    std::vector<GateData> gates = {{2, &sino, &geom}};
    auto eng = make_engine(3);
    std::vector<double> perturbed(spec.n_params());
    for (double& v : perturbed) v = uniform(eng, -0.5, 0.5);
    const double e_perturbed = chain_energy(spec, tmpl, perturbed, gates, nullptr);
    CHECK(res.report.final_energy() <= 1e-6 * e_perturbed);
    CHECK(testutil::max_abs_diff(res.deformed.v, tmpl.v) <= 1e-6);
}

TEST_CASE("registration recovers a 2-pixel translation better than TV") {
    const int n = 24;
    Grid2D g = Grid2D::centered(n, n, 1.0);
    Image2D tmpl = testutil::smooth_disc_image(g, 0.0, 0.0, 6.0, 1.0, 2.0);
    Image2D target = testutil::smooth_disc_image(g, 2.0, 0.0, 6.0, 1.0, 2.0);
    tomo::ProjectionGeometry geom = tomo::default_geometry(g, even_angles(30));
    tomo::Sinogram sino = tomo::ray_transform(target, geom);

    OdeRecConfig cfg;
    cfg.reg_nodes = 2;
    cfg.substeps = 2;
    cfg.lambda_flow = 5e-4;
    cfg.tau_intensity = 0.5;
    cfg.inner_gd.max_iter = 150;
    IndirectRegResult res = indirect_register_meta(tmpl, sino, geom, cfg);

    PdhgOptions popts;
    popts.max_iter = 400;
    Image2D tv = var::tv_reconstruct_single(sino, geom, g, {}, 0.05, popts);

    const double psnr_reg = psnr(target, res.deformed, 1.0);
    const double psnr_tv = psnr(target, tv, 1.0);
    CHECK(psnr_reg >= psnr_tv);
}

TEST_CASE("suppressing the intensity source blocks photometric fits") {
    // target differs from the template only in intensity; the velocity path
    // cannot explain that, so the fit stalls when zeta is penalised away
    const int n = 16;
    Grid2D g = Grid2D::centered(n, n, 1.0);
    Image2D tmpl = testutil::smooth_disc_image(g, 0.0, 0.0, 5.0, 0.6, 2.0);
    Image2D target = tmpl;
    for (double& v : target.v) v *= 1.5;
    tomo::ProjectionGeometry geom = tomo::default_geometry(g, even_angles(12));
    tomo::Sinogram sino = tomo::ray_transform(target, geom);

    auto run = [&](double tau) {
        OdeRecConfig cfg;
        cfg.reg_nodes = 1;
        cfg.substeps = 2;
        cfg.tau_intensity = tau;
        cfg.inner_gd.max_iter = 120;
        IndirectRegResult res = indirect_register_meta(tmpl, sino, geom, cfg);
        tomo::Sinogram fw = tomo::ray_transform(res.deformed, geom);
        return var::datafit_value({}, fw.v, sino.v);
    };
    const double fit_enabled = run(0.05);
    const double fit_blocked = run(1e7);
    CHECK(fit_blocked > 10.0 * fit_enabled);
}

TEST_CASE("metamorphosis objective with zeta=0 equals the LDDMM objective") {
    const int n_img = 16, n_gates = 3;
    Grid2D g = Grid2D::centered(n_img, n_img, 1.0);
    std::vector<double> times;
    std::vector<Image2D> frames;
    for (int j = 0; j < n_gates; ++j) {
        times.push_back(static_cast<double>(j + 1) / n_gates);
        frames.push_back(testutil::smooth_disc_image(g, 0.5 * j, 0.0, 4.0, 1.0, 2.0));
    }
    ImageSeries truth(times, frames);
    tomo::ScheduleParams sp;
    sp.n_frames = n_gates;
    sp.n_angles = 6;
    sp.n_det = tomo::default_n_det(g);
    auto sched = tomo::make_schedule(tomo::ScheduleScheme::GatedEven, sp, 0);
    tomo::GatedDataset ds = tomo::project_series(truth, sched);

    OdeRecConfig cfg;
    cfg.lambda_flow = 0.03;
    cfg.tau_intensity = 0.03;  // matched; zeta is zero anyway
    cfg.substeps = 2;
    Image2D tmpl = testutil::smooth_disc_image(g, 0.0, 0.0, 4.0, 1.0, 2.0);

    // one shared velocity path; gate j uses its restriction to [0, t_j]
    auto eng = make_engine(17);
    const std::size_t npix = g.size();
    std::vector<double> shared(2 * n_gates * npix);
    for (double& v : shared) v = uniform(eng, -0.4, 0.4);

    std::vector<std::vector<double>> gate_params(n_gates);
    for (int j = 0; j < n_gates; ++j) {
        // nu planes of nodes 0..j plus zero zeta planes
        gate_params[j].assign((2 + 1) * (j + 1) * npix, 0.0);
        std::copy(shared.begin(), shared.begin() + 2 * (j + 1) * npix, gate_params[j].begin());
    }

    const double e_meta = metamorphosis_objective(ds, cfg, tmpl, gate_params);
    const double e_lddmm = lddmm_objective(ds, cfg, tmpl, shared);
    CHECK(std::abs(e_meta - e_lddmm) <= 1e-8 * std::max(1.0, std::abs(e_lddmm)));
}

TEST_CASE("sequential scheme: static phantom stays near frame 1") {
    const int n = 16, frames = 4;
    Grid2D g = Grid2D::centered(n, n, 1.0);
    std::vector<double> times;
    std::vector<Image2D> imgs;
    for (int j = 0; j < frames; ++j) {
        times.push_back(static_cast<double>(j) / frames);
        imgs.push_back(testutil::smooth_disc_image(g, 1.0, 0.0, 4.5, 1.0, 2.0));
    }
    ImageSeries truth(times, imgs);
    tomo::ScheduleParams p;
    p.n_frames = frames;
    p.n_angles = 10;
    p.n_det = tomo::default_n_det(g);
    auto sched = tomo::make_schedule(tomo::ScheduleScheme::GatedEven, p, 1);
    tomo::GatedDataset ds = tomo::project_series(truth, sched);

    OdeRecConfig cfg;
    cfg.reg_nodes = 1;
    cfg.substeps = 2;
    cfg.inner_gd.max_iter = 60;
    SequentialRecResult res = reconstruct_sequential(ds, cfg);
    REQUIRE(res.recon.n_frames() == frames);
    for (int j = 1; j < frames; ++j)
        CHECK(l2_rel_error(res.recon.frames[j], res.recon.frames[0]) <= 0.05);
}

TEST_CASE("sequential scheme rejects an empty first frame") {
    Grid2D g = Grid2D::centered(8, 8, 1.0);
    tomo::GatedDataset ds;
    ds.grid = g;
    ds.times = {0.0, 0.5};
    ds.schedule.frames.emplace_back(std::vector<double>{}, 12, 1.0);
    ds.schedule.frames.emplace_back(std::vector<double>{0.5}, 12, 1.0);
    ds.sinograms.emplace_back(0, 12);
    ds.sinograms.emplace_back(1, 12);
    CHECK_THROWS_AS(reconstruct_sequential(ds, {}), std::invalid_argument);
}
