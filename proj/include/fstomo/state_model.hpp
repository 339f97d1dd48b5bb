// state_model.hpp — N-mode states in a truncated Fock basis and exact
// expectation values, most importantly the joint characteristic function
//   Psi(z, psi) = <exp[i sum_k z_k F_k(psi_k)]>
//               = Tr[rho prod_k D_k(i z_k |F| e^{i psi_k})].

#pragma once

#include <memory>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fstomo/core.hpp"

namespace fstomo {

struct StateSpec;

namespace spec {

struct Vacuum {};

struct Coherent {
    std::vector<cplx> gamma;  // per-mode amplitudes
};

struct FockProduct {
    std::vector<int> occupation;  // per-mode photon numbers
};

struct SingleModeSqueezed {
    int mode = 0;
    double r = 0.0;
    double phase = 0.0;  // squeezing phase theta, zeta = r e^{i theta}
};

struct TwoModeSqueezedVacuum {
    int mode_a = 0;
    int mode_b = 1;
    double r = 0.0;
};

struct Mixture {
    std::vector<double> weights;        // >= 0, sum to 1 within 1e-12
    std::vector<StateSpec> components;  // same n_modes / truncation_dim
};

using Kind = std::variant<Vacuum, Coherent, FockProduct, SingleModeSqueezed,
                          TwoModeSqueezedVacuum, Mixture>;

}  // namespace spec

/// Declarative description of a test state; build_state turns it into a
/// truncated density operator.
struct StateSpec {
    int n_modes = 1;
    int truncation_dim = 8;  // Fock levels per mode
    spec::Kind kind = spec::Vacuum{};

    void validate() const;
};

/// N-mode density operator, dense in the truncated Fock basis.
/// Row/column index is the row-major multi-index (n_1, ..., n_N) with
/// n_1 slowest: flat = ((n_1 * dim) + n_2) * dim + ...
struct DensityOperatorFock {
    int n_modes = 1;
    int dim = 2;  // per mode
    Eigen::MatrixXcd rho;
    double trace_deficit = 0.0;  // trace lost to truncation, pre-renormalization

    size_t total_dim() const { return static_cast<size_t>(rho.rows()); }
    void validate() const;
};

/// Build a normalized truncated density operator from a spec. The trace lost
/// to truncation is recorded; a deficit above trace_tol is an error naming
/// the offending mode and the dimension that would suffice.
DensityOperatorFock build_state(const StateSpec& spec, double trace_tol = kTraceTol);

/// Displacement operator matrix elements <m|D(mu)|n>, m,n < dim, computed by
/// the associated-Laguerre recurrence
///   <m|D(mu)|n> = sqrt(n!/m!) mu^{m-n} e^{-|mu|^2/2} L_n^{(m-n)}(|mu|^2),  m >= n,
/// not by exponentiating a truncated generator (which corrupts large |mu|).
Eigen::MatrixXcd displacement_matrix(int dim, cplx mu);

/// Psi(z, psi) for the given state. |result| <= 1 + char_tol; Psi(0) = 1.
cplx characteristic_function(const DensityOperatorFock& state,
                             std::span<const double> z,
                             std::span<const double> psi,
                             const FieldScale& scale);

/// Psi along the ray z -> (z w_1, ..., z w_N) at fixed phases, for many z at
/// once. Matches characteristic_function pointwise; batched so the per-mode
/// contractions run as matrix products.
std::vector<cplx> characteristic_function_ray(const DensityOperatorFock& state,
                                              std::span<const double> z_nodes,
                                              std::span<const double> weights,
                                              std::span<const double> psi,
                                              const FieldScale& scale);

/// <F_k(psi)> = |F| 2 Re(<a_k> e^{-i psi}).
double mean_field(const DensityOperatorFock& state, int mode_index, double psi,
                  const FieldScale& scale);

/// Largest per-mode mean photon number; drives default grid extents.
double max_mean_photon_number(const DensityOperatorFock& state);

/// State with every mode rotated by delta: rho -> e^{-i delta N} rho e^{i delta N}.
/// Used by the phase-averaged reconstruction.
DensityOperatorFock rotate_state(const DensityOperatorFock& state, double delta);

namespace detail {
// Decompose a flat row-major multi-index into per-mode digits.
inline void unflatten(size_t flat, int n_modes, int dim, int* digits) {
    for (int k = n_modes - 1; k >= 0; --k) {
        digits[k] = static_cast<int>(flat % dim);
        flat /= dim;
    }
}
}  // namespace detail

}  // namespace fstomo
