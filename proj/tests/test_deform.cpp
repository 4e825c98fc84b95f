#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dyntomo/deform.hpp"
#include "dyntomo/ops.hpp"
#include "support/testutil.hpp"

using namespace dyntomo;
using namespace dyntomo::deform;

namespace {

VectorFieldSeries single_node(const VectorField2D& f, double t0 = 0.0) {
    VectorFieldSeries s;
    s.times = {t0};
    s.fields = {f};
    return s;
}

VectorField2D rotation_field(const Grid2D& g, double omega) {
    VectorField2D f(g);
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
            f.x[i] = -omega * g.y(iy);
            f.y[i] = omega * g.x(ix);
        }
    return f;
}

}  // namespace

TEST_CASE("v_norm_sq: zero, constants, oscillation penalty") {
    Grid2D g = Grid2D::centered(16, 16, 1.0);
    VNormSpec spec{2.5};
    CHECK(v_norm_sq(VectorField2D(g), spec) == 0.0);

    VectorField2D c(g, 0.4, -0.3);
    const double expect = (0.4 * 0.4 + 0.3 * 0.3) * g.size() * g.cell_area();
    CHECK(v_norm_sq(c, spec) == doctest::Approx(expect));

    // checkerboard with the same L2 norm costs more
    VectorField2D cb(g);
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
            const double s = ((ix + iy) % 2 == 0) ? 1.0 : -1.0;
            cb.x[i] = 0.5 * s;
            cb.y[i] = 0.5 * s;
        }
    const double l2_cb = l2_inner(cb, cb);
    VectorField2D cc(g, 0.5, 0.5);
    CHECK(l2_inner(cc, cc) == doctest::Approx(l2_cb));
    CHECK(v_norm_sq(cb, spec) > v_norm_sq(cc, spec));

    CHECK_THROWS(v_norm_sq(c, VNormSpec{0.0}));
}

TEST_CASE("integrate_flow: identity, translation, rotation oracle") {
    Grid2D g = Grid2D::centered(33, 33, 1.0);

    SUBCASE("zero velocity gives the identity") {
        Diffeo d = integrate_flow(single_node(VectorField2D(g)), 0.0, 1.0, 10);
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(d.forward.x[i] == 0.0);
            CHECK(d.inverse.y[i] == 0.0);
        }
        CHECK(d.composition_gap == 0.0);
    }

    SUBCASE("constant velocity translates exactly") {
        VectorField2D c(g, 0.75, -0.4);
        Diffeo d = integrate_flow(single_node(c), 0.0, 2.0, 7);
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(std::abs(d.forward.x[i] - 1.5) <= 1e-10);
            CHECK(std::abs(d.forward.y[i] + 0.8) <= 1e-10);
            CHECK(std::abs(d.inverse.x[i] + 1.5) <= 1e-10);
        }
    }

    SUBCASE("rigid rotation matches the analytic map to 1e-4 pixel") {
        const double omega = 0.5;
        Diffeo d = integrate_flow(single_node(rotation_field(g, omega)), 0.0, 1.0, 20);
        const double half = 0.5 * (g.nx - 1) * g.spacing;
        double worst = 0.0;
        for (int iy = 0; iy < g.ny; ++iy)
            for (int ix = 0; ix < g.nx; ++ix) {
                const double x = g.x(ix), y = g.y(iy);
                if (std::hypot(x, y) > 0.75 * half) continue;  // interior only
                const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                const double ex = std::cos(omega) * x - std::sin(omega) * y;
                const double ey = std::sin(omega) * x + std::cos(omega) * y;
                worst = std::max(worst, std::hypot(x + d.forward.x[i] - ex,
                                                   y + d.forward.y[i] - ey));
            }
        CHECK(worst <= 1e-4 * g.spacing);
    }

    SUBCASE("argument validation and CFL flag") {
        CHECK_THROWS(integrate_flow(single_node(VectorField2D(g)), 0.0, 1.0, 0));
        bool warn = false;
        VectorField2D fast(g, 30.0, 0.0);
        integrate_flow(single_node(fast), 0.0, 1.0, 5, FlowScheme::RK4, &warn);
        CHECK(warn);
        warn = true;
        integrate_flow(single_node(VectorField2D(g)), 0.0, 1.0, 5, FlowScheme::RK4, &warn);
        CHECK_FALSE(warn);
    }
}

TEST_CASE("invertibility within 0.1 pixel for moderate smooth fields") {
    Grid2D g = Grid2D::centered(48, 48, 1.0);
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        VectorField2D f = testutil::smooth_field(g, seed, 5.0);
        // cap |v| T at 5 pixels
        double vmax = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i)
            vmax = std::max(vmax, std::hypot(f.x[i], f.y[i]));
        const double scale = 5.0 / std::max(vmax, 1e-12);
        for (std::size_t i = 0; i < f.size(); ++i) {
            f.x[i] *= scale;
            f.y[i] *= scale;
        }
        Diffeo d = integrate_flow(single_node(f), 0.0, 1.0, 20);
        CHECK(d.composition_gap <= 0.1 * g.spacing);
    }
}

TEST_CASE("semigroup property on a smooth two-node path") {
    Grid2D g = Grid2D::centered(48, 48, 1.0);
    VectorFieldSeries nu;
    nu.times = {0.0, 0.5};
    nu.fields = {testutil::smooth_field(g, 11, 0.4), testutil::smooth_field(g, 12, 0.4)};

    Diffeo whole = integrate_flow(nu, 0.0, 1.0, 20);
    Diffeo first = integrate_flow(nu, 0.0, 0.5, 10);
    Diffeo second = integrate_flow(nu, 0.5, 1.0, 10);
    Diffeo comp = compose(second, first);

    double worst = 0.0;
    const double half = 0.5 * (g.nx - 1) * g.spacing;
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix) {
            if (std::hypot(g.x(ix), g.y(iy)) > 0.8 * half) continue;
            const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
            worst = std::max(worst, std::hypot(whole.forward.x[i] - comp.forward.x[i],
                                               whole.forward.y[i] - comp.forward.y[i]));
        }
    CHECK(worst <= 1e-3 * g.spacing);
}

TEST_CASE("geometric action: identity, pixel shift, range preservation") {
    Grid2D g = Grid2D::centered(16, 16, 1.0);
    Image2D img = testutil::random_image(g, 5, 0.0, 2.0);

    Diffeo id = Diffeo::identity(g);
    Image2D same = act_geometric(id, img);
    CHECK(testutil::max_abs_diff(same.v, img.v) == 0.0);

    // translation by +1 pixel in x moves content right
    VectorField2D c(g, 1.0, 0.0);
    Diffeo shift = integrate_flow(single_node(c), 0.0, 1.0, 4);
    Image2D spot(g);
    spot.at(7, 8) = 1.0;
    Image2D moved = act_geometric(shift, spot);
    CHECK(moved.at(8, 8) == doctest::Approx(1.0));
    CHECK(moved.at(7, 8) == doctest::Approx(0.0));

    VectorField2D f = testutil::smooth_field(g, 3, 2.0);
    Diffeo d = integrate_flow(single_node(f), 0.0, 1.0, 10);
    Image2D out = act_geometric(d, img);
    const auto [lo, hi] = std::minmax_element(img.v.begin(), img.v.end());
    for (double v : out.v) {
        CHECK(v >= *lo - 1e-12);
        CHECK(v <= *hi + 1e-12);
    }

    Grid2D g2 = Grid2D::centered(8, 8, 1.0);
    CHECK_THROWS(act_geometric(d, Image2D(g2)));
}

TEST_CASE("mass-preserving action conserves mass and scales under dilation") {
    Grid2D g = Grid2D::centered(64, 64, 1.0);

    SUBCASE("identity") {
        Image2D img = testutil::random_image(g, 9);
        Image2D out = act_mass_preserving(Diffeo::identity(g), img);
        CHECK(testutil::max_abs_diff(out.v, img.v) <= 1e-12);
    }

    SUBCASE("total mass within 0.1% under an interior flow") {
        Image2D blob = testutil::smooth_disc_image(g, 3.0, -2.0, 10.0, 1.0, 5.0);
        VectorField2D f = testutil::smooth_field(g, 21, 2.0);
        Diffeo d = integrate_flow(single_node(f), 0.0, 1.0, 20);
        Image2D out = act_mass_preserving(d, blob);
        CHECK(std::abs(total_mass(out) - total_mass(blob)) <= 1e-3 * total_mass(blob));
    }

    SUBCASE("uniform dilation scales values by the analytic Jacobian") {
        // phi^{-1}(x) = x / 1.1 built by hand
        Diffeo d = Diffeo::identity(g);
        for (int iy = 0; iy < g.ny; ++iy)
            for (int ix = 0; ix < g.nx; ++ix) {
                const std::size_t i = static_cast<std::size_t>(iy) * g.nx + ix;
                d.inverse.x[i] = g.x(ix) / 1.1 - g.x(ix);
                d.inverse.y[i] = g.y(iy) / 1.1 - g.y(iy);
                d.forward.x[i] = 1.1 * g.x(ix) - g.x(ix);
                d.forward.y[i] = 1.1 * g.y(iy) - g.y(iy);
            }
        Image2D blob = testutil::smooth_disc_image(g, 0.0, 0.0, 12.0, 1.0, 4.0);
        Image2D out = act_mass_preserving(d, blob);
        // at the blob center the image is constant 1, so the output is 1/1.21
        CHECK(out.at(32, 32) == doctest::Approx(1.0 / 1.21).epsilon(1e-6));
    }
}

TEST_CASE("metamorphosis degenerate cases") {
    Grid2D g = Grid2D::centered(24, 24, 1.0);
    Image2D tmpl = testutil::smooth_disc_image(g, 1.0, -1.0, 6.0);
    const int m = 4;

    auto uniform_times = [&] {
        std::vector<double> t(m);
        for (int k = 0; k < m; ++k) t[k] = static_cast<double>(k) / m;
        return t;
    };

    SUBCASE("zeta = 0 reduces to pure transport") {
        MetamorphosisParams p;
        p.nu.times = uniform_times();
        p.zeta.times = uniform_times();
        for (int k = 0; k < m; ++k) {
            p.nu.fields.push_back(testutil::smooth_field(g, 30 + k, 2.0));
            p.zeta.frames.push_back(Image2D(g));
        }
        p.n_steps = 5;
        MetamorphosisResult res = integrate_metamorphosis(p, tmpl);
        for (int b = 1; b <= m; ++b) {
            const double t_end = res.trajectory.times[b];
            Diffeo d = integrate_flow(p.nu, 0.0, t_end, b * p.n_steps);
            Image2D expect = act_geometric(d, tmpl);
            CHECK(testutil::max_abs_diff(res.trajectory.frames[b].v, expect.v) <= 1e-8);
        }
    }

    SUBCASE("nu = 0 accumulates the intensity source on identity flows") {
        MetamorphosisParams p;
        p.nu.times = uniform_times();
        p.zeta.times = uniform_times();
        for (int k = 0; k < m; ++k) {
            p.nu.fields.push_back(VectorField2D(g));
            p.zeta.frames.push_back(testutil::random_image(g, 40 + k, -0.5, 0.5));
        }
        p.n_steps = 3;
        MetamorphosisResult res = integrate_metamorphosis(p, tmpl);
        Image2D expect = tmpl;
        for (int k = 0; k < m; ++k) {
            const double dt = p.interval(k);
            for (std::size_t i = 0; i < expect.v.size(); ++i)
                expect.v[i] += dt * p.zeta.frames[k].v[i];
            // flows stay identity
            CHECK(res.flows[k + 1].composition_gap == 0.0);
        }
        CHECK(testutil::max_abs_diff(res.trajectory.frames[m].v, expect.v) <= 1e-10);
    }

    SUBCASE("both zero: constant trajectory") {
        MetamorphosisParams p;
        p.nu.times = uniform_times();
        p.zeta.times = uniform_times();
        for (int k = 0; k < m; ++k) {
            p.nu.fields.push_back(VectorField2D(g));
            p.zeta.frames.push_back(Image2D(g));
        }
        MetamorphosisResult res = integrate_metamorphosis(p, tmpl);
        for (const auto& f : res.trajectory.frames)
            CHECK(testutil::max_abs_diff(f.v, tmpl.v) == 0.0);
    }

    SUBCASE("mismatched axes are rejected") {
        MetamorphosisParams p;
        p.nu.times = uniform_times();
        p.zeta.times = {0.0, 0.5};
        for (int k = 0; k < m; ++k) p.nu.fields.push_back(VectorField2D(g));
        p.zeta.frames = {Image2D(g), Image2D(g)};
        CHECK_THROWS(integrate_metamorphosis(p, tmpl));
    }
}
