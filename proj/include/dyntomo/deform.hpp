#pragma once

#include <vector>

#include "dyntomo/types.hpp"

namespace dyntomo::deform {

/// H1-type velocity norm <v, (I - lambda Laplacian) v> on the grid.
struct VNormSpec {
    double lambda_v = 1.0;
};

double v_norm_sq(const VectorField2D& v, const VNormSpec& spec);

/// Forward and inverse displacement of one diffeomorphism, with the measured
/// composition gap max|phi(phi^{-1}(x)) - x| (world units).
struct Diffeo {
    Grid2D grid;
    VectorField2D forward;  // phi - id at grid nodes
    VectorField2D inverse;  // phi^{-1} - id at grid nodes
    double composition_gap = 0.0;

    static Diffeo identity(const Grid2D& g);
};

enum class FlowScheme { RK4, Euler };

/// Integrate dphi/dt = nu(t, phi) over [t0, t1] with n_steps uniform steps.
/// nu is piecewise constant in time on its node axis (last value extended).
/// The inverse flow is integrated directly with reversed time and negated
/// field. Sets *cfl_warning when a step moves material by more than a pixel.
Diffeo integrate_flow(const VectorFieldSeries& nu, double t0, double t1, int n_steps,
                      FlowScheme scheme = FlowScheme::RK4, bool* cfl_warning = nullptr);

/// Geometric action I . phi^{-1} (shape-only deformation).
Image2D act_geometric(const Diffeo& d, const Image2D& img);

/// Mass-preserving action |D phi^{-1}| (I . phi^{-1}).
Image2D act_mass_preserving(const Diffeo& d, const Image2D& img);

/// Compose two diffeomorphisms: (b . a)(x) = b(a(x)); displacement fields are
/// resampled bilinearly.
Diffeo compose(const Diffeo& b, const Diffeo& a);

/// Joint shape-and-intensity flow parameters: velocity path nu and intensity
/// source path zeta on a shared node axis, integrated with n_steps substeps
/// per node interval.
struct MetamorphosisParams {
    VectorFieldSeries nu;
    ImageSeries zeta;
    int n_steps = 1;

    void validate() const;
    int n_nodes() const { return nu.n_fields(); }
    /// Length of node interval k (the last interval reuses the previous
    /// spacing; a single node spans up to t = 1).
    double interval(int k) const;
};

struct MetamorphosisResult {
    /// Deformed trajectory phi_{0,t}.f_t at the n_nodes+1 interval boundaries.
    ImageSeries trajectory;
    /// Intensity part f_t on the template grid (photometric trajectory).
    ImageSeries intensity;
    /// phi_{0,t} at the interval boundaries; flows[0] is the identity.
    std::vector<Diffeo> flows;
};

/// Integrate the metamorphosis flow from a template. The intensity update per
/// substep samples zeta at the current forward flow position (Euler in the
/// intensity variable; the flow itself uses the requested scheme).
MetamorphosisResult integrate_metamorphosis(const MetamorphosisParams& params,
                                            const Image2D& template_img,
                                            FlowScheme scheme = FlowScheme::RK4);

}  // namespace dyntomo::deform
