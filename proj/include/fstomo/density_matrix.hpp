// density_matrix.hpp — reconstructed (or oracle) density-matrix elements in
// the field-strength basis on a product grid, plus the comparison metrics.

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fstomo/core.hpp"
#include "fstomo/state_model.hpp"

namespace fstomo {

/// Residuals recorded with every accepted output.
struct FsResiduals {
    double hermiticity = 0.0;    // max |m(F,F') - conj(m(F,-F'))|, F' != -F' pairs
    double diag_max_imag = 0.0;  // max |Im| on the F' = 0 slice
    double diag_min_real = 0.0;  // most negative Re on the F' = 0 slice
    double diag_norm = 0.0;      // grid quadrature of the F' = 0 slice
};

/// Free-form provenance, serialized verbatim into the output file.
struct Provenance {
    std::string source;  // "oracle" | "analytic" | "empirical" | "joint" | ...
    double eta = 1.0;
    double filter_y_cut = 0.0;        // 0 = none
    double filter_taper_width = 0.0;  // 0 = hard cutoff
    double amplification_bound = 1.0;
    int quad_nodes_per_axis = 0;
    int transform_stages = 0;  // N+1 for the radial pipeline, 2N for the baseline
    bool phase_averaged = false;
    int phase_average_points = 0;
    std::string phase_average_method;  // "matrices" | "distributions"
    bool control_clamped = false;      // empirical queries clamped to covered settings
    std::string config_hash;
    uint64_t seed = 0;
    std::string tool_version;
};

/// Matrix elements <F - F', phi| rho |F + F', phi> on the product grid
/// center_values^N x offset_values^N. Element ordering is row-major over the
/// F multi-index, then row-major over the F' multi-index.
struct FsDensityMatrix {
    int n_modes = 2;
    FieldScale scale;
    std::vector<double> phases;         // reference phases phi_k
    std::vector<double> center_values;  // shared per-mode F grid
    std::vector<double> offset_values;  // shared per-mode F' grid, symmetric about 0
    std::vector<cplx> elements;
    Provenance prov;
    FsResiduals res;

    size_t n_center() const { return center_values.size(); }
    size_t n_offset() const { return offset_values.size(); }
    size_t centers_total() const;
    size_t offsets_total() const;
    size_t flat_index(std::span<const int> c_idx, std::span<const int> o_idx) const;
    void validate_layout() const;

    /// Index of the offset value -offset_values[i], or -1 if absent.
    int mirror_offset_index(int i) const;
};

struct CompareMetrics {
    double l_inf = 0.0;
    double l2 = 0.0;  // RMS
    double hermiticity_residual_a = 0.0;
    double diag_negativity_a = 0.0;  // most negative Re on the diagonal slice of a
    double diag_norm_a = 0.0;
};

/// Metrics between two matrices on identical grids/phases (else error).
CompareMetrics compare_matrices(const FsDensityMatrix& a, const FsDensityMatrix& b);

/// Residuals of a single matrix (same quantities compare_matrices reports
/// for its first argument).
FsResiduals compute_residuals(const FsDensityMatrix& m);

/// Brute-force oracle on a full grid (drives `fstomo oracle` and the tests).
FsDensityMatrix oracle_grid(const DensityOperatorFock& state,
                            std::span<const double> center_values,
                            std::span<const double> offset_values,
                            std::span<const double> phases,
                            const FieldScale& scale);

/// Diagnostic only: project the F'-offset grid back onto number states,
/// returning <n_1..n_N| rho |n_1..n_N> for all n_k < nmax by grid quadrature.
/// Accuracy is limited by the offset grid; reported, never asserted.
std::vector<double> fock_diagonal_projection(const FsDensityMatrix& m, int nmax);

}  // namespace fstomo
