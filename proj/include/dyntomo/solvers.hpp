#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "dyntomo/linop.hpp"
#include "dyntomo/types.hpp"

namespace dyntomo {

/// One dual block of a saddle problem: a contiguous slice of K x paired with
/// the proximal map of the convex conjugate of its term.
struct DualBlock {
    std::size_t offset = 0;
    std::size_t len = 0;
    /// In-place prox of sigma * F_i^* at y.
    std::function<void(std::span<double>, double sigma)> prox;
};

/// min_x G(x) + sum_i F_i((K x)_i) posed for Chambolle-Pock.
struct SaddleSpec {
    const LinOp* K = nullptr;
    std::vector<DualBlock> dual_blocks;
    /// In-place prox of tau * G; null means G = 0.
    std::function<void(std::span<double>, double tau)> prox_primal;
    /// Primal objective, used for the energy trace.
    std::function<double(std::span<const double>)> energy;
    double op_norm = 0.0;  // <= 0: estimated by power iteration
};

struct PdhgOptions {
    int max_iter = 2000;
    double tol = 1e-6;
    double sigma = 0.0;  // <= 0: sigma = tau = 0.95 / ||K||
    double tau = 0.0;
    double theta = 1.0;
    int check_every = 10;  // gap-surrogate cadence
    std::uint64_t norm_seed = 1;
};

/// Chambolle-Pock primal-dual iteration. Raw iterates are not energy-monotone,
/// so the solver tracks the lowest-energy iterate: the returned vector is the
/// incumbent and energy_trace records the incumbent energy (nonincreasing).
/// Stops on a relative primal-dual residual gap surrogate <= tol or max_iter.
std::pair<std::vector<double>, SolveReport> pdhg(const SaddleSpec& spec,
                                                 std::vector<double> x0,
                                                 const PdhgOptions& opts = {});

// Dual prox helpers (F is the primal term the block represents).

/// F(z) = (1/2) ||z - g||^2.
DualBlock dual_l2sq(std::size_t offset, std::size_t len, std::span<const double> g);
/// F(z) = w * ||z - g||_1; g may be empty (treated as zero).
DualBlock dual_l1(std::size_t offset, std::size_t len, double w, std::span<const double> g = {});
/// F(p) = w * sum_i |(p_i, p_{i+n})|_2 over pair planes (isotropic TV dual ball).
DualBlock dual_iso_pairs(std::size_t offset, std::size_t n_pairs, int n_components, double w);
/// F(z) = c * ||z||^2.
DualBlock dual_l2sq_scaled(std::size_t offset, std::size_t len, double c);
/// F(z) = KL(z; g) = sum z - g + g log(g/z) on z > 0.
DualBlock dual_kl(std::size_t offset, std::size_t len, std::span<const double> g);

struct GdOptions {
    int max_iter = 500;
    double tol = 1e-6;
    double step0 = 1.0;
    double armijo_c = 1e-4;
    double shrink = 0.5;
    double grow = 1.5;
    double min_step = 1e-14;
    bool check_gradient = false;  // finite-difference consistency probe at x0
    double check_eps = 1e-5;
    double check_rel_tol = 1e-3;
};

struct GdProblem {
    std::function<double(std::span<const double>)> energy;
    std::function<void(std::span<const double>, std::span<double>)> gradient;
    /// Optional SPD preconditioner applied in place to the gradient to form
    /// the descent direction (e.g. a Sobolev metric for velocity variables).
    std::function<void(std::span<double>)> precondition;
};

/// Armijo-backtracking gradient descent; monotone energy trace.
std::pair<std::vector<double>, SolveReport> grad_descent(const GdProblem& prob,
                                                         std::vector<double> x0,
                                                         const GdOptions& opts = {});

}  // namespace dyntomo
