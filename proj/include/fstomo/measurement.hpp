// measurement.hpp — simulated experiment: sum-field samples or histograms on
// a grid of control settings (mixing angles, LO phases), with optional
// detector inefficiency modeled as Gaussian convolution.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fstomo/core.hpp"
#include "fstomo/quadrature.hpp"
#include "fstomo/state_model.hpp"

namespace fstomo {

enum class DataMode { samples, histogram, analytic };

std::string to_string(DataMode m);
DataMode data_mode_from_string(const std::string& s);

/// Experimental control grid. Mixing-angle tuples (N-1 angles each) and
/// per-mode phase lists; each phase list spans the pi-interval
/// [phi_ref - pi, phi_ref), left-closed, per the measurement scheme.
///
/// delta_psi_layout (N = 2 only) is the phase-averaged variant: mode 0 holds
/// absolute psi_1 values on a uniform full-circle grid and mode 1 holds
/// phase differences delta = psi_2 - psi_1 on a pi-interval; the recorded
/// setting phases are (psi_1, psi_1 + delta).
struct ControlGrid {
    std::vector<std::vector<double>> alphas;     // sorted (N-1)-tuples in (0, pi/2)
    std::vector<std::vector<double>> psi_values; // one sorted list per mode
    std::vector<double> phi_ref;                 // right interval endpoints
    QuadratureGrid grid;
    bool delta_psi_layout = false;

    int n_modes() const { return static_cast<int>(psi_values.size()); }
    size_t n_settings() const;
    size_t flatten(int alpha_idx, std::span<const int> psi_idx) const;
    void unflatten(size_t flat, int& alpha_idx, std::vector<int>& psi_idx) const;
    /// Absolute per-mode phases of a setting (resolves the delta layout).
    std::vector<double> setting_phases(std::span<const int> psi_idx) const;
    void validate() const;
};

/// Uniform default: alpha_count interior angles, psi_counts[k] phases per mode.
ControlGrid make_uniform_control_grid(int n_modes, int alpha_count,
                                      std::span<const int> psi_counts,
                                      std::span<const double> phi_ref,
                                      const QuadratureGrid& grid);

/// Phase-averaged layout: psi_1 on a uniform 2 pi grid (psi1_count >= 16
/// points), delta = psi_2 - psi_1 on a pi-interval ending at delta_ref.
ControlGrid make_delta_psi_control_grid(int alpha_count, int psi1_count,
                                        int delta_count, double delta_ref,
                                        const QuadratureGrid& grid);

/// Measured/simulated sum-field data, one record per control setting.
struct SumFieldDataset {
    int n_modes = 2;
    FieldScale scale;
    DetectorModel detector;
    uint64_t seed = 0;
    int samples_per_setting = 0;  // 0 for analytic
    DataMode mode = DataMode::analytic;
    ControlGrid control;
    // samples: raw values; histogram: per-bin counts; analytic: per-bin density
    std::vector<std::vector<double>> records;

    void validate() const;
};

/// Convolve a normalized bin-center density with the detector noise Gaussian
/// (variance |F|^2 (1-eta)/eta) via the characteristic-function product on a
/// zero-padded grid; output renormalized to 1. eta = 1 returns the input.
std::vector<double> apply_efficiency(const std::vector<double>& density,
                                     const QuadratureGrid& grid,
                                     const DetectorModel& model,
                                     const FieldScale& scale);

/// Exact post-detector density for one setting (fourier route + efficiency).
std::vector<double> setting_density(const DensityOperatorFock& state,
                                    std::span<const double> alpha,
                                    std::span<const double> psi,
                                    const DetectorModel& model,
                                    const QuadratureGrid& grid,
                                    const FieldScale& scale);

/// M inverse-CDF samples from the setting's post-detector density, drawn on
/// an 8x refined grid with linear CDF interpolation. Bitwise deterministic
/// for a given seed.
std::vector<double> sample_setting(const DensityOperatorFock& state,
                                   std::span<const double> alpha,
                                   std::span<const double> psi,
                                   int m_samples,
                                   const DetectorModel& model,
                                   uint64_t seed,
                                   const QuadratureGrid& grid,
                                   const FieldScale& scale);

/// Per-setting seed: splitmix64 chain over (master, alpha index, psi indices).
uint64_t setting_seed(uint64_t master, int alpha_idx, std::span<const int> psi_idx);

/// Histogram of samples on the grid; left-closed bins, values at f_max land
/// in the last bin. Values outside the grid are an error.
std::vector<double> histogram_counts(std::span<const double> samples,
                                     const QuadratureGrid& grid);

/// One record per setting; per-setting seeds derive from the master seed and
/// the setting index, so any subset regenerates identically. `progress`, when
/// set, is called once per completed setting with the number done so far.
SumFieldDataset build_dataset(const DensityOperatorFock& state,
                              const ControlGrid& control,
                              int m_samples,
                              const DetectorModel& model,
                              uint64_t seed,
                              const FieldScale& scale,
                              DataMode mode,
                              const std::function<void(size_t)>& progress = {});

/// Lossless beam-splitter mapping: alpha = arccos(sqrt(T)), psi_k = theta_k.
struct InterferometerParams {
    double alpha;
    double psi1;
    double psi2;
};
InterferometerParams interferometer_params(double transmittance, double theta1,
                                           double theta2);

}  // namespace fstomo
