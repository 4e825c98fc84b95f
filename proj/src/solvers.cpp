#include "dyntomo/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dyntomo/ops.hpp"
#include "dyntomo/rng.hpp"

namespace dyntomo {

std::pair<std::vector<double>, SolveReport> pdhg(const SaddleSpec& spec,
                                                 std::vector<double> x0,
                                                 const PdhgOptions& opts) {
    const LinOp& K = *spec.K;
    if (x0.size() != K.cols()) throw std::invalid_argument("pdhg: x0 dimension mismatch");

    double L = spec.op_norm;
    if (!(L > 0.0)) L = op_norm_estimate(K, opts.norm_seed);
    double sigma = opts.sigma, tau = opts.tau;
    if (sigma <= 0.0 || tau <= 0.0) {
        sigma = tau = 0.95 / std::max(L, 1e-30);
    } else if (sigma * tau * L * L >= 1.0) {
        throw std::invalid_argument("pdhg: step sizes violate sigma*tau*||K||^2 < 1");
    }

    std::vector<double> x = std::move(x0);
    std::vector<double> xbar = x;
    std::vector<double> xprev(x.size());
    std::vector<double> y(K.rows(), 0.0);
    std::vector<double> yprev(y.size());
    std::vector<double> Kx(K.rows());
    std::vector<double> Kty(x.size());
    std::vector<double> diff_x(x.size()), diff_y(y.size());
    std::vector<double> tmp_r(K.rows()), tmp_c(x.size());

    SolveReport rep;
    rep.stats["op_norm"] = L;
    rep.stats["sigma"] = sigma;
    rep.stats["tau"] = tau;
    rep.energy_trace.push_back(spec.energy ? spec.energy(x) : 0.0);

    // Chambolle-Pock iterates are not monotone; the solver keeps the
    // best-energy iterate as the incumbent and reports its energy trace.
    std::vector<double> x_best = x;
    double e_best = rep.energy_trace.front();

    double res0 = -1.0;
    int it = 0;
    for (; it < opts.max_iter; ++it) {
        xprev = x;
        yprev = y;

        // dual ascent: y = prox_{sigma F*}(y + sigma K xbar)
        std::fill(Kx.begin(), Kx.end(), 0.0);
        K.apply(xbar, Kx);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += sigma * Kx[i];
        for (const DualBlock& b : spec.dual_blocks)
            b.prox(std::span<double>(y).subspan(b.offset, b.len), sigma);

        // primal descent: x = prox_{tau G}(x - tau K^T y)
        std::fill(Kty.begin(), Kty.end(), 0.0);
        K.adjoint(y, Kty);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= tau * Kty[i];
        if (spec.prox_primal) spec.prox_primal(x, tau);

        // extrapolate
        for (std::size_t i = 0; i < x.size(); ++i)
            xbar[i] = x[i] + opts.theta * (x[i] - xprev[i]);

        const double e_now = spec.energy ? spec.energy(x) : 0.0;
        if (spec.energy && e_now < e_best) {
            e_best = e_now;
            x_best = x;
        }
        rep.energy_trace.push_back(spec.energy ? e_best : 0.0);

        // primal-dual residual gap surrogate (Goldstein et al. style)
        if ((it + 1) % opts.check_every == 0 || it + 1 == opts.max_iter) {
            for (std::size_t i = 0; i < x.size(); ++i) diff_x[i] = xprev[i] - x[i];
            for (std::size_t i = 0; i < y.size(); ++i) diff_y[i] = yprev[i] - y[i];
            std::fill(tmp_c.begin(), tmp_c.end(), 0.0);
            K.adjoint(diff_y, tmp_c);
            double rp = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double r = diff_x[i] / tau - tmp_c[i];
                rp += r * r;
            }
            std::fill(tmp_r.begin(), tmp_r.end(), 0.0);
            K.apply(diff_x, tmp_r);
            double rd = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double r = diff_y[i] / sigma - tmp_r[i];
                rd += r * r;
            }
            const double res = std::sqrt(rp) + std::sqrt(rd);
            if (res0 < 0.0) res0 = std::max(res, 1e-300);
            rep.stats["gap_surrogate"] = res / res0;
            if (res / res0 <= opts.tol) {
                rep.converged = true;
                rep.stop_reason = StopReason::Converged;
                ++it;
                break;
            }
        }
        if (!std::isfinite(e_now)) {
            rep.stop_reason = StopReason::NonFiniteEnergy;
            ++it;
            break;
        }
    }
    rep.iterations = it;
    if (spec.energy) rep.stats["final_iterate_energy"] = spec.energy(x);
    return {spec.energy ? std::move(x_best) : std::move(x), std::move(rep)};
}

DualBlock dual_l2sq(std::size_t offset, std::size_t len, std::span<const double> g) {
    std::vector<double> data(g.begin(), g.end());
    return {offset, len, [data = std::move(data)](std::span<double> y, double sigma) {
                const double inv = 1.0 / (1.0 + sigma);
                for (std::size_t i = 0; i < y.size(); ++i) y[i] = (y[i] - sigma * data[i]) * inv;
            }};
}

DualBlock dual_l1(std::size_t offset, std::size_t len, double w, std::span<const double> g) {
    std::vector<double> data(g.begin(), g.end());
    return {offset, len, [data = std::move(data), w](std::span<double> y, double sigma) {
                for (std::size_t i = 0; i < y.size(); ++i) {
                    const double shifted = y[i] - (data.empty() ? 0.0 : sigma * data[i]);
                    y[i] = std::clamp(shifted, -w, w);
                }
            }};
}

DualBlock dual_iso_pairs(std::size_t offset, std::size_t n_pairs, int n_components, double w) {
    return {offset, n_pairs * static_cast<std::size_t>(n_components),
            [n_pairs, n_components, w](std::span<double> y, double) {
                for (std::size_t i = 0; i < n_pairs; ++i) {
                    double sq = 0.0;
                    for (int c = 0; c < n_components; ++c) {
                        const double v = y[i + c * n_pairs];
                        sq += v * v;
                    }
                    const double n = std::sqrt(sq);
                    if (n > w) {
                        const double s = w / n;
                        for (int c = 0; c < n_components; ++c) y[i + c * n_pairs] *= s;
                    }
                }
            }};
}

DualBlock dual_l2sq_scaled(std::size_t offset, std::size_t len, double c) {
    return {offset, len, [c](std::span<double> y, double sigma) {
                const double inv = 1.0 / (1.0 + sigma / (2.0 * c));
                for (double& v : y) v *= inv;
            }};
}

DualBlock dual_kl(std::size_t offset, std::size_t len, std::span<const double> g) {
    std::vector<double> data(g.begin(), g.end());
    return {offset, len, [data = std::move(data)](std::span<double> y, double sigma) {
                for (std::size_t i = 0; i < y.size(); ++i) {
                    const double b = y[i] - 1.0;
                    y[i] = 0.5 * (y[i] + 1.0 - std::sqrt(b * b + 4.0 * sigma * data[i]));
                }
            }};
}

std::pair<std::vector<double>, SolveReport> grad_descent(const GdProblem& prob,
                                                         std::vector<double> x0,
                                                         const GdOptions& opts) {
    SolveReport rep;
    std::vector<double> x = std::move(x0);
    std::vector<double> g(x.size());
    std::vector<double> trial(x.size());

    double e = prob.energy(x);
    if (!std::isfinite(e)) throw std::invalid_argument("grad_descent: non-finite energy at init");
    rep.energy_trace.push_back(e);

    if (opts.check_gradient) {
        // directional finite-difference probe against the analytic gradient
        prob.gradient(x, g);
        auto eng = make_engine(7, 0xFD);
        std::vector<double> dir(x.size());
        for (double& v : dir) v = uniform(eng, -1.0, 1.0);
        const double dn = nrm2(dir);
        for (double& v : dir) v /= dn;
        const double h = opts.check_eps;
        std::vector<double> xp = x, xm = x;
        axpy(h, dir, xp);
        axpy(-h, dir, xm);
        const double fd = (prob.energy(xp) - prob.energy(xm)) / (2.0 * h);
        const double an = dot(g, dir);
        const double scale = std::max({std::abs(fd), std::abs(an), 1e-12});
        if (std::abs(fd - an) / scale > opts.check_rel_tol) {
            rep.iterations = 0;
            rep.converged = false;
            rep.stop_reason = StopReason::GradientCheckFailed;
            rep.stats["fd_directional"] = fd;
            rep.stats["analytic_directional"] = an;
            return {std::move(x), std::move(rep)};
        }
    }

    std::vector<double> dir(x.size());
    double step = opts.step0;
    int it = 0;
    for (; it < opts.max_iter; ++it) {
        prob.gradient(x, g);
        dir = g;
        if (prob.precondition) prob.precondition(dir);
        const double gd = dot(g, dir);  // = <g, P g> > 0 for SPD P
        if (gd == 0.0) {
            rep.converged = true;
            rep.stop_reason = StopReason::Converged;
            break;
        }
        // Armijo backtracking along the preconditioned direction
        bool accepted = false;
        double e_new = e;
        while (step >= opts.min_step) {
            trial = x;
            axpy(-step, dir, trial);
            e_new = prob.energy(trial);
            if (std::isfinite(e_new) && e_new <= e - opts.armijo_c * step * gd) {
                accepted = true;
                break;
            }
            step *= opts.shrink;
        }
        if (!accepted) {
            rep.stop_reason = StopReason::StepSizeUnderflow;
            break;
        }
        x.swap(trial);
        const double decrease = e - e_new;
        e = e_new;
        rep.energy_trace.push_back(e);
        step *= opts.grow;
        if (decrease <= opts.tol * std::max(1.0, std::abs(e))) {
            ++it;
            rep.converged = true;
            rep.stop_reason = StopReason::Converged;
            break;
        }
    }
    rep.iterations = static_cast<int>(rep.energy_trace.size()) - 1;
    return {std::move(x), std::move(rep)};
}

}  // namespace dyntomo
