// quadrature.hpp — exact field-strength-basis mathematics: quadrature
// wavefunctions, the joint distribution, exact sum-field distributions, and
// the brute-force matrix-element oracle every reconstruction is tested
// against.
//
// Eigenket convention (enforced by the test suite): the eigenket of
// F(psi) = |F|(a e^{-i psi} + a^dag e^{i psi}) with eigenvalue Fv is
//   |Fv, psi> = sum_n u_n(Fv) e^{+i n psi} |n>,
// i.e. <Fv, psi|n> = u_n(Fv) e^{-i n psi}. This is the unique relative-phase
// choice for which the characteristic function, the joint distribution and
// the matrix-element oracle are mutually consistent.

#pragma once

#include <span>
#include <vector>

#include "fstomo/core.hpp"
#include "fstomo/state_model.hpp"

namespace fstomo {

enum class SumRoute { projection, fourier };

/// u_n(f) = (2 pi |F|^2)^{-1/4} (2^n n!)^{-1/2} H_n(f / (|F| sqrt 2)) e^{-f^2/(4|F|^2)},
/// by stable upward recurrence. Vacuum (n = 0) distribution has variance |F|^2.
double quadrature_wavefunction(int n, double f, const FieldScale& scale);

/// All of u_0..u_{nmax-1} at once (the recurrence is shared).
void quadrature_wavefunctions(int nmax, double f, const FieldScale& scale, double* out);

/// p_j(F_1..F_N, psi_1..psi_N) = <F, psi| rho |F, psi>.
double joint_distribution(const DensityOperatorFock& state,
                          std::span<const double> f,
                          std::span<const double> psi,
                          const FieldScale& scale);

/// Pointwise sum-field density p_s(f; alpha, psi) at a single field value.
/// route = projection integrates p_j over the hyperplane
/// sum_k w_k F_k = f; route = fourier inverts Psi along the ray z w.
double sum_distribution_at(const DensityOperatorFock& state,
                           std::span<const double> alpha,
                           std::span<const double> psi,
                           double f,
                           const FieldScale& scale,
                           SumRoute route);

/// p_s sampled at the bin centers of `grid`. Errors if more than 1e-4 of the
/// distribution falls outside the grid (the message suggests an f_max).
std::vector<double> sum_distribution_exact(const DensityOperatorFock& state,
                                           std::span<const double> alpha,
                                           std::span<const double> psi,
                                           const QuadratureGrid& grid,
                                           const FieldScale& scale,
                                           SumRoute route);

/// Ground truth: <F - F', phi| rho |F + F', phi> by direct double Fock
/// expansion. Exact up to the state's truncation; no inversion involved.
cplx oracle_matrix_element(const DensityOperatorFock& state,
                           const FsMatrixPoint& point,
                           const FieldScale& scale);

/// Default symmetric grid: f_max = 6 |F| (1 + sqrt(nbar_max)), 64 bins.
QuadratureGrid default_grid(const DensityOperatorFock& state, const FieldScale& scale);

// Internals shared with the reconstruction module's joint-route source.
namespace detail {
// Wavefunction matrix U(g, n) = u_n(center g) on a grid; one row per bin.
std::vector<double> wavefunction_table(const QuadratureGrid& grid, int dim,
                                       const FieldScale& scale);
}  // namespace detail

}  // namespace fstomo
