#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dyntomo/deform.hpp"
#include "dyntomo/solvers.hpp"
#include "dyntomo/tomo.hpp"
#include "dyntomo/types.hpp"
#include "dyntomo/variational.hpp"

namespace dyntomo::ode {

enum class ActionKind { Geometric, MassPreserving };

/// Weights and budgets of the deformable-template reconstructions.
struct OdeRecConfig {
    double lambda_flow = 0.02;     // velocity penalty
    double tau_intensity = 0.2;    // intensity-source penalty (metamorphosis)
    double gamma_template = 0.02;  // template TV weight
    int outer_iters = 4;
    int reg_nodes = 3;    // velocity nodes of a standalone registration chain
    int substeps = 2;     // Euler substeps per node interval
    GdOptions inner_gd{.max_iter = 60, .tol = 1e-7};
    PdhgOptions inner_pdhg{.max_iter = 300, .tol = 1e-7};
    ActionKind action = ActionKind::Geometric;
    var::DataFit fit;  // L2sq is the differentiable fit the ODE branch uses
    std::uint64_t seed = 0;
};

// --- differentiable chain evaluation (testing surface + shared engine) -------

/// One explicit-Euler metamorphosis chain: n_nodes piecewise-constant
/// velocity (and optional intensity-source) fields over [0, total_time],
/// substeps Euler steps per interval. Parameters are flattened as
/// [nu_0.x | nu_0.y | nu_1.x | ... | zeta_0 | zeta_1 | ...].
struct ChainSpec {
    Grid2D grid;
    int n_nodes = 1;
    int substeps = 1;
    double total_time = 1.0;
    bool has_zeta = false;
    ActionKind action = ActionKind::Geometric;
    deform::VNormSpec vnorm;
    double lambda_flow = 0.0;
    double tau_intensity = 0.0;
    /// Per-node quadrature weight of ||nu_k||_V^2 in the regulariser
    /// (rectangle rule by default; the LDDMM objective uses its nested
    /// time-integral weights). Empty means interval-length weights.
    std::vector<double> nu_weights;

    double interval() const { return total_time / n_nodes; }
    std::size_t n_params() const {
        return static_cast<std::size_t>(n_nodes) * grid.size() * (has_zeta ? 3 : 2);
    }
};

/// Data read out after `boundary` intervals of the chain.
struct GateData {
    int boundary = 1;
    const tomo::Sinogram* sino = nullptr;
    const tomo::ProjectionGeometry* geom = nullptr;
    /// Optional Huber-TV term w * TV_eps(recon) added to the gate energy
    /// (used by the sequential scheme's deformed-image regulariser).
    double tv_weight = 0.0;
    double tv_eps = 1e-3;
};

struct ChainOutputs {
    std::vector<Image2D> recon;            // one per gate
    std::vector<Image2D> intensity;        // f_t at each gate boundary
    std::vector<VectorField2D> fwd_disp;   // phi_{0,t_j} - id per gate
    std::vector<VectorField2D> inv_disp;   // phi_{0,t_j}^{-1} - id per gate
};

/// Energy (data fits + velocity/intensity regularisers) of one chain, with
/// the exact gradient of the discretised energy when `grad` is non-null.
double chain_energy(const ChainSpec& spec, const Image2D& tmpl,
                    std::span<const double> params, std::span<const GateData> gates,
                    std::vector<double>* grad, ChainOutputs* outputs = nullptr);

// --- reconstructions -----------------------------------------------------------

struct IndirectRegResult {
    deform::MetamorphosisParams params;
    Image2D deformed;
    SolveReport report;
};

/// Register a template against one gate of indirect data by metamorphosis,
/// minimising S(A(W_theta(I)), g) + lambda ||nu||^2 + tau ||zeta||^2 over
/// theta = (nu, zeta) with gradients through the discretised integrator.
IndirectRegResult indirect_register_meta(const Image2D& tmpl, const tomo::Sinogram& sino,
                                         const tomo::ProjectionGeometry& geom,
                                         const OdeRecConfig& cfg);

struct MetamorphosisRecResult {
    ImageSeries recon;
    ImageSeries shape_traj;
    ImageSeries photo_traj;
    Image2D template_img;
    SolveReport report;
};

/// Independent-trajectory metamorphosis reconstruction: gate j is matched by
/// its own chain over [0, t_j] (t_j = j/n), intertwined with convex
/// TV-regularised template updates.
MetamorphosisRecResult reconstruct_metamorphosis(const tomo::GatedDataset& ds,
                                                 const OdeRecConfig& cfg);

struct LddmmRecResult {
    ImageSeries recon;
    Image2D template_img;
    VectorFieldSeries velocity;
    SolveReport report;
};

/// Single shared velocity path over [0,1]; gate j reads the flow after j
/// intervals. Supports both group actions.
LddmmRecResult reconstruct_lddmm(const tomo::GatedDataset& ds, const OdeRecConfig& cfg);

struct SequentialRecResult {
    ImageSeries recon;
    SolveReport report;
};

/// Single-trajectory scheme: frame 1 by a variational solve, every further
/// frame by indirect registration of the previous frame to the new data.
SequentialRecResult reconstruct_sequential(const tomo::GatedDataset& ds, const OdeRecConfig& cfg);

/// Objective value of the metamorphosis reconstruction at given parameters
/// (used by the degenerate-case equivalence checks).
double metamorphosis_objective(const tomo::GatedDataset& ds, const OdeRecConfig& cfg,
                               const Image2D& tmpl,
                               const std::vector<std::vector<double>>& gate_params);

/// Objective value of the LDDMM reconstruction at given parameters.
double lddmm_objective(const tomo::GatedDataset& ds, const OdeRecConfig& cfg, const Image2D& tmpl,
                       std::span<const double> nu_params);

}  // namespace dyntomo::ode
