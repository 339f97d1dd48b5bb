// reconstruction.hpp — recover the joint characteristic function from
// sum-field data and invert it to field-strength-basis density-matrix
// elements with N+1 Fourier integrals (one z-transform fused into the
// characteristic-function source, N outer y-integrals), including detector
// efficiency compensation, the phase-averaged variant, the N-mode
// generalization, and the 2N-transform joint-distribution baseline.

#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fstomo/core.hpp"
#include "fstomo/density_matrix.hpp"
#include "fstomo/measurement.hpp"
#include "fstomo/quadrature.hpp"
#include "fstomo/state_model.hpp"

namespace fstomo {

/// Coordinate map between the outer integration variables (y_k), the output
/// offsets (F'_k) and the characteristic-function coordinates:
///   z_k = sqrt(y_k^2 + F'_k^2 / |F|^4)
///   psi_k = phi_k - arccot(y_k |F|^2 / F'_k),  arccot ranged in (0, pi),
/// with the F' -> 0 limit taken explicitly (psi = phi for y > 0, phi - pi
/// for y < 0); radial y = sqrt(sum z_k^2) and N-1 hyperspherical angles.
struct CoordinateMapResult {
    std::vector<double> z;     // per-mode z_k >= 0
    std::vector<double> psi;   // per-mode psi_k
    double y_radial = 0.0;     // Eq. coupling the inner transform variable
    std::vector<double> beta;  // N-1 angles in [0, pi/2]
};

/// Public map; offsets must be >= 0 (negative offsets are resolved by the
/// callers through Hermiticity).
CoordinateMapResult coordinate_map(std::span<const double> y,
                                   std::span<const double> f_offset,
                                   std::span<const double> phases,
                                   const FieldScale& scale);

/// Hyperspherical mixing weights: w_1 = cos a_1, w_2 = sin a_1 cos a_2, ...,
/// w_N = sin a_1 ... sin a_{N-1}; sum w_k^2 = 1. N = 2 reduces to
/// (cos a, sin a).
std::vector<double> nmode_weights(std::span<const double> angles);

/// Hard radial cutoff with optional cosine rolloff; required whenever the
/// efficiency compensation exponential is active.
struct RegularizationFilter {
    double y_cut = 8.0;
    double taper_width = 0.0;  // 0 = hard cutoff

    double attenuation(double y_radial) const;
    /// e^{y_cut^2 |F|^2 (1-eta)/(2 eta)} — recorded with every reconstruction.
    double amplification_bound(const DetectorModel& model, const FieldScale& scale) const;
    void validate() const;
};

struct QuadParams {
    int nodes_per_axis = 128;
    double amplification_ceiling = 4.851651954097903e8;  // e^20

    void validate() const;
};

/// Where the characteristic function comes from: exact state evaluation, a
/// measured/simulated dataset, or the joint-distribution baseline.
class CharFnSource {
  public:
    virtual ~CharFnSource() = default;

    virtual int n_modes() const = 0;
    virtual const char* name() const = 0;

    /// Psi at radial coordinate z >= 0, direction angles beta (N-1 of them)
    /// and per-mode phases psi.
    virtual cplx eval(double z, std::span<const double> beta,
                      std::span<const double> psi) const = 0;

    /// Transform-stage count recorded in reconstruction metadata: the inner
    /// z-transform stages plus one outer integral per mode.
    virtual int transform_stages() const { return n_modes() + 1; }

    /// Sources that factorize over modes expose per-mode kernels so grids can
    /// be contracted axis by axis; Psi = sum_{a,b} rho(a,b) prod_k K_k(b_k,a_k).
    virtual bool factorizable() const { return false; }
    virtual const DensityOperatorFock* state() const { return nullptr; }
    virtual Eigen::MatrixXcd mode_kernel(int mode, double z, double psi) const;

    /// Extra radial factor applied after the per-mode contraction (used by
    /// the degraded-analytic source).
    virtual double radial_factor(double /*z*/) const { return 1.0; }

    /// True when a query was clamped to the covered control range.
    virtual bool clamped() const { return false; }
};

/// Exact Psi from a truncated Fock state.
class AnalyticSource final : public CharFnSource {
  public:
    explicit AnalyticSource(const DensityOperatorFock& state, const FieldScale& scale)
        : state_(&state), scale_(scale) {}
    AnalyticSource(DensityOperatorFock&&, const FieldScale&) = delete;  // holds a reference
    int n_modes() const override { return state_->n_modes; }
    const char* name() const override { return "analytic"; }
    cplx eval(double z, std::span<const double> beta,
              std::span<const double> psi) const override;
    bool factorizable() const override { return true; }
    const DensityOperatorFock* state() const override { return state_; }
    Eigen::MatrixXcd mode_kernel(int mode, double z, double psi) const override;

  private:
    const DensityOperatorFock* state_;
    FieldScale scale_;
};

/// Exact Psi of the eta-degraded distributions: Psi * e^{-z^2 |F|^2 (1-eta)/(2 eta)}.
/// The ideal experiment with an inefficient detector, without grid effects.
class DegradedAnalyticSource final : public CharFnSource {
  public:
    DegradedAnalyticSource(const DensityOperatorFock& state, const FieldScale& scale,
                           const DetectorModel& model)
        : inner_(state, scale), noise_var_(model.noise_variance(scale)) {}
    DegradedAnalyticSource(DensityOperatorFock&&, const FieldScale&, const DetectorModel&) =
        delete;
    int n_modes() const override { return inner_.n_modes(); }
    const char* name() const override { return "analytic-degraded"; }
    cplx eval(double z, std::span<const double> beta,
              std::span<const double> psi) const override {
        return inner_.eval(z, beta, psi) * radial_factor(z);
    }
    bool factorizable() const override { return true; }
    const DensityOperatorFock* state() const override { return inner_.state(); }
    Eigen::MatrixXcd mode_kernel(int mode, double z, double psi) const override {
        return inner_.mode_kernel(mode, z, psi);
    }
    double radial_factor(double z) const override {
        return std::exp(-0.5 * z * z * noise_var_);
    }

  private:
    AnalyticSource inner_;
    double noise_var_;
};

/// Empirical estimator from a dataset: Psi_hat(z) = (1/M) sum_j e^{i z F_j}
/// per setting (exact in z; histogram/analytic records sum over bin centers),
/// multilinear interpolation across the (alpha, psi) control grid. Queries in
/// the open wrap zone past the last phase node, and beta outside
/// [alpha_min, alpha_max], are clamped to the nearest covered setting.
class EmpiricalSource final : public CharFnSource {
  public:
    explicit EmpiricalSource(const SumFieldDataset& dataset);
    explicit EmpiricalSource(SumFieldDataset&&) = delete;  // holds a reference
    int n_modes() const override { return dataset_->n_modes; }
    const char* name() const override { return "empirical"; }
    cplx eval(double z, std::span<const double> beta,
              std::span<const double> psi) const override;
    bool clamped() const override { return clamped_.load(std::memory_order_relaxed); }

    /// Psi_hat at one recorded setting (no interpolation).
    cplx eval_setting(size_t flat_setting, double z) const;

  private:
    const SumFieldDataset* dataset_;
    std::vector<double> alpha_first_;  // first angle of each tuple, sorted
    mutable std::atomic<bool> clamped_{false};
};

/// The 2N-transform baseline: per-mode characteristic-function kernels are
/// obtained by grid quadrature of the joint distribution's wavefunction
/// products (the Fourier inversion route), then the same N outer integrals.
class JointFTSource final : public CharFnSource {
  public:
    JointFTSource(const DensityOperatorFock& state, const FieldScale& scale,
                  const QuadratureGrid& inner_grid);
    JointFTSource(DensityOperatorFock&&, const FieldScale&, const QuadratureGrid&) = delete;
    int n_modes() const override { return state_->n_modes; }
    const char* name() const override { return "joint"; }
    int transform_stages() const override { return 2 * n_modes(); }
    cplx eval(double z, std::span<const double> beta,
              std::span<const double> psi) const override;
    bool factorizable() const override { return true; }
    const DensityOperatorFock* state() const override { return state_; }
    Eigen::MatrixXcd mode_kernel(int mode, double z, double psi) const override;

  private:
    const DensityOperatorFock* state_;
    FieldScale scale_;
    QuadratureGrid inner_grid_;
    std::vector<double> wf_table_;  // u_n at the inner-grid centers
};

/// One density-matrix element (Eq.-level reference path; the grid routine is
/// the production path). Returns the element; `amplification` (optional out)
/// receives the recorded bound.
cplx reconstruct_element(const CharFnSource& source,
                         const FsMatrixPoint& point,
                         const DetectorModel& model,
                         const std::optional<RegularizationFilter>& filter,
                         const QuadParams& quad,
                         const FieldScale& scale,
                         double* amplification = nullptr);

/// Full output grid: offsets with a lexicographically nonnegative tuple are
/// computed directly, the mirrored half is filled through Hermiticity.
FsDensityMatrix reconstruct_grid(const CharFnSource& source,
                                 std::span<const double> center_values,
                                 std::span<const double> offset_values,
                                 std::span<const double> phases,
                                 const DetectorModel& model,
                                 const std::optional<RegularizationFilter>& filter,
                                 const QuadParams& quad,
                                 const FieldScale& scale);

/// Baseline reconstruction through the joint distribution (2N transforms).
FsDensityMatrix reconstruct_from_joint(const DensityOperatorFock& state,
                                       const QuadratureGrid& inner_grid,
                                       std::span<const double> center_values,
                                       std::span<const double> offset_values,
                                       std::span<const double> phases,
                                       const QuadParams& quad,
                                       const FieldScale& scale);

enum class PhaseAverageMethod { matrices, distributions };

/// Uniform-grid average over a full 2 pi of global phase rotations;
/// the independent-average building block used by tests as well.
FsDensityMatrix average_phase_rotations(
    int k_points, const std::function<FsDensityMatrix(double delta)>& producer);

/// Phase-averaged reconstruction. Analytic sources average K reconstructions
/// of rotated states (method=matrices) or K characteristic-function grids
/// before the outer integrals (method=distributions); an empirical source
/// whose dataset is in the delta-psi layout is already averaged and is
/// reconstructed directly.
FsDensityMatrix phase_averaged_reconstruct(const CharFnSource& source,
                                           std::span<const double> center_values,
                                           std::span<const double> offset_values,
                                           std::span<const double> phases,
                                           const DetectorModel& model,
                                           const std::optional<RegularizationFilter>& filter,
                                           const QuadParams& quad,
                                           const FieldScale& scale,
                                           int k_points = 16,
                                           PhaseAverageMethod method = PhaseAverageMethod::matrices);

namespace detail {
/// Signed-offset generalization of the public coordinate_map (used when a
/// lexicographic representative carries negative components).
CoordinateMapResult coordinate_map_general(std::span<const double> y,
                                           std::span<const double> f_offset,
                                           std::span<const double> phases,
                                           const FieldScale& scale);
}  // namespace detail

}  // namespace fstomo
