#include "fstomo/measurement.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "fstomo/threading.hpp"

namespace fstomo {

std::string to_string(DataMode m) {
    switch (m) {
        case DataMode::samples: return "samples";
        case DataMode::histogram: return "histogram";
        case DataMode::analytic: return "analytic";
    }
    return "?";
}

DataMode data_mode_from_string(const std::string& s) {
    if (s == "samples") return DataMode::samples;
    if (s == "histogram") return DataMode::histogram;
    if (s == "analytic") return DataMode::analytic;
    throw ValidationError("unknown data mode '" + s + "' (samples|histogram|analytic)");
}

size_t ControlGrid::n_settings() const {
    size_t n = alphas.size();
    for (const auto& p : psi_values) n *= p.size();
    return n;
}

size_t ControlGrid::flatten(int alpha_idx, std::span<const int> psi_idx) const {
    size_t flat = static_cast<size_t>(alpha_idx);
    for (int k = 0; k < n_modes(); ++k)
        flat = flat * psi_values[k].size() + static_cast<size_t>(psi_idx[k]);
    return flat;
}

void ControlGrid::unflatten(size_t flat, int& alpha_idx, std::vector<int>& psi_idx) const {
    psi_idx.resize(n_modes());
    for (int k = n_modes() - 1; k >= 0; --k) {
        psi_idx[k] = static_cast<int>(flat % psi_values[k].size());
        flat /= psi_values[k].size();
    }
    alpha_idx = static_cast<int>(flat);
}

std::vector<double> ControlGrid::setting_phases(std::span<const int> psi_idx) const {
    std::vector<double> psi(n_modes());
    for (int k = 0; k < n_modes(); ++k) psi[k] = psi_values[k][psi_idx[k]];
    if (delta_psi_layout) psi[1] += psi[0];  // mode 1 stores psi_2 - psi_1
    return psi;
}

void ControlGrid::validate() const {
    const int N = n_modes();
    if (N < 2) throw ValidationError("ControlGrid: need at least 2 modes");
    if (delta_psi_layout && N != 2)
        throw ValidationError("ControlGrid: delta-psi layout supports exactly 2 modes");
    if (alphas.empty()) throw ValidationError("ControlGrid: empty mixing-angle list");
    for (size_t i = 0; i < alphas.size(); ++i) {
        if (static_cast<int>(alphas[i].size()) != N - 1)
            throw ValidationError("ControlGrid: each alpha tuple needs N-1 angles");
        for (double a : alphas[i])
            if (!(a > 0.0) || !(a < 0.5 * kPi))
                throw ValidationError("ControlGrid: mixing angles must lie in (0, pi/2)");
        if (i > 0 && !(alphas[i - 1] < alphas[i]))
            throw ValidationError("ControlGrid: alpha tuples must be strictly increasing");
    }
    if (static_cast<int>(phi_ref.size()) != N)
        throw ValidationError("ControlGrid: one phi_ref per mode required");
    for (int k = 0; k < N; ++k) {
        const auto& p = psi_values[k];
        if (p.empty()) throw ValidationError("ControlGrid: empty phase list");
        for (size_t i = 0; i + 1 < p.size(); ++i)
            if (!(p[i] < p[i + 1]))
                throw ValidationError("ControlGrid: phase lists must be strictly increasing");
        if (delta_psi_layout && k == 0) {
            // full-circle psi_1 grid: uniform coverage of [0, 2 pi)
            if (p.size() < 2 || p.back() - p.front() > 2.0 * kPi)
                throw ValidationError("ControlGrid: delta-psi layout needs a full-circle psi_1 grid");
            const double gap = 2.0 * kPi / static_cast<double>(p.size());
            for (size_t i = 0; i + 1 < p.size(); ++i)
                if (std::abs(p[i + 1] - p[i] - gap) > 1e-9)
                    throw ValidationError(
                        "ControlGrid: delta-psi layout needs a uniform full-circle psi_1 grid");
            continue;
        }
        if (p.back() - p.front() > kPi + 1e-12)
            throw ValidationError("ControlGrid: phase span exceeds pi in mode " +
                                  std::to_string(k));
    }
    grid.validate();
}

ControlGrid make_uniform_control_grid(int n_modes, int alpha_count,
                                      std::span<const int> psi_counts,
                                      std::span<const double> phi_ref,
                                      const QuadratureGrid& grid) {
    if (alpha_count < 1) throw ValidationError("control grid: alpha_count must be >= 1");
    if (static_cast<int>(psi_counts.size()) != n_modes ||
        static_cast<int>(phi_ref.size()) != n_modes)
        throw ValidationError("control grid: per-mode counts/phases required");
    ControlGrid c;
    c.grid = grid;
    c.phi_ref.assign(phi_ref.begin(), phi_ref.end());
    // interior angles; for N > 2 the same 1-D ladder is used on every axis
    // of the tuple (a diagonal family, sufficient for the analytic source)
    for (int i = 0; i < alpha_count; ++i) {
        const double a = (i + 0.5) * (0.5 * kPi) / alpha_count;
        c.alphas.push_back(std::vector<double>(n_modes - 1, a));
    }
    c.psi_values.resize(n_modes);
    for (int k = 0; k < n_modes; ++k) {
        const int n = psi_counts[k];
        if (n < 1) throw ValidationError("control grid: psi counts must be >= 1");
        for (int j = 0; j < n; ++j)
            c.psi_values[k].push_back(phi_ref[k] - kPi + j * kPi / n);
    }
    c.validate();
    return c;
}

ControlGrid make_delta_psi_control_grid(int alpha_count, int psi1_count,
                                        int delta_count, double delta_ref,
                                        const QuadratureGrid& grid) {
    if (psi1_count < 16)
        throw ValidationError("delta-psi control grid: need >= 16 psi_1 points over 2 pi");
    ControlGrid c;
    c.grid = grid;
    c.delta_psi_layout = true;
    c.phi_ref = {0.0, delta_ref};
    for (int i = 0; i < alpha_count; ++i)
        c.alphas.push_back({(i + 0.5) * (0.5 * kPi) / alpha_count});
    c.psi_values.resize(2);
    for (int j = 0; j < psi1_count; ++j)
        c.psi_values[0].push_back(j * 2.0 * kPi / psi1_count);
    for (int j = 0; j < delta_count; ++j)
        c.psi_values[1].push_back(delta_ref - kPi + j * kPi / delta_count);
    c.validate();
    return c;
}

void SumFieldDataset::validate() const {
    scale.validate();
    detector.validate();
    control.validate();
    if (control.n_modes() != n_modes)
        throw ValidationError("SumFieldDataset: control grid mode count mismatch");
    if (records.size() != control.n_settings())
        throw ValidationError("SumFieldDataset: record count mismatch");
    for (const auto& r : records) {
        if (mode == DataMode::samples) {
            if (static_cast<int>(r.size()) != samples_per_setting)
                throw ValidationError("SumFieldDataset: sample count mismatch");
            for (double v : r)
                if (!std::isfinite(v)) throw ValidationError("SumFieldDataset: non-finite sample");
        } else {
            if (static_cast<int>(r.size()) != control.grid.n_bins)
                throw ValidationError("SumFieldDataset: bin count mismatch");
            if (mode == DataMode::histogram) {
                const double total = std::accumulate(r.begin(), r.end(), 0.0);
                if (std::abs(total - samples_per_setting) > 1e-9)
                    throw ValidationError("SumFieldDataset: histogram counts must sum to M");
            }
        }
    }
}

std::vector<double> apply_efficiency(const std::vector<double>& density,
                                     const QuadratureGrid& grid,
                                     const DetectorModel& model,
                                     const FieldScale& scale) {
    model.validate();
    if (static_cast<int>(density.size()) != grid.n_bins)
        throw ValidationError("apply_efficiency: density size does not match the grid");
    if (model.eta == 1.0) return density;

    const double var = model.noise_variance(scale);
    const int n = grid.n_bins;
    const int pad = 4 * n;  // linear (non-circular) convolution within the window
    const double d = grid.step();

    // characteristic-function product on the padded grid
    std::vector<cplx> cf(pad, cplx(0.0));
    for (int m = 0; m < pad; ++m) {
        const double y = 2.0 * kPi * (m - pad / 2) / (pad * d);
        cplx acc = 0.0;
        for (int g = 0; g < n; ++g) acc += density[g] * std::polar(1.0, y * grid.center(g));
        cf[m] = acc * d * std::exp(-0.5 * y * y * var);
    }
    std::vector<double> out(n);
    for (int g = 0; g < n; ++g) {
        cplx acc = 0.0;
        for (int m = 0; m < pad; ++m) {
            const double y = 2.0 * kPi * (m - pad / 2) / (pad * d);
            acc += cf[m] * std::polar(1.0, -y * grid.center(g));
        }
        out[g] = acc.real() / (pad * d);
    }
    double mass = 0.0;
    for (double v : out) mass += v * d;
    for (double& v : out) v /= mass;
    return out;
}

std::vector<double> setting_density(const DensityOperatorFock& state,
                                    std::span<const double> alpha,
                                    std::span<const double> psi,
                                    const DetectorModel& model,
                                    const QuadratureGrid& grid,
                                    const FieldScale& scale) {
    std::vector<double> p =
        sum_distribution_exact(state, alpha, psi, grid, scale, SumRoute::fourier);
    if (model.eta < 1.0) p = apply_efficiency(p, grid, model, scale);
    return p;
}

uint64_t setting_seed(uint64_t master, int alpha_idx, std::span<const int> psi_idx) {
    uint64_t h = splitmix64(master);
    h = splitmix64(h ^ static_cast<uint64_t>(alpha_idx));
    for (int p : psi_idx) h = splitmix64(h ^ static_cast<uint64_t>(p));
    return h;
}

namespace {

// Inverse-CDF sampler over a bin-center density, x8 refinement with linear
// interpolation of the density between neighboring centers.
class InverseCdfSampler {
  public:
    InverseCdfSampler(const std::vector<double>& density, const QuadratureGrid& grid) {
        constexpr int kRefine = 8;
        const int n = grid.n_bins * kRefine;
        const double d = 2.0 * grid.f_max / n;
        edges_.resize(n + 1);
        cdf_.resize(n + 1);
        cdf_[0] = 0.0;
        for (int i = 0; i <= n; ++i) edges_[i] = -grid.f_max + i * d;
        for (int i = 0; i < n; ++i) {
            const double x = -grid.f_max + (i + 0.5) * d;
            cdf_[i + 1] = cdf_[i] + std::max(interp(density, grid, x), 0.0) * d;
        }
        const double total = cdf_.back();
        if (!(total > 0.0)) throw ComputeError("sample_setting: degenerate distribution");
        for (double& c : cdf_) c /= total;
    }

    double draw(double u) const {
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        size_t hi = std::min<size_t>(cdf_.size() - 1,
                                     static_cast<size_t>(it - cdf_.begin()));
        if (hi == 0) hi = 1;
        const double c0 = cdf_[hi - 1], c1 = cdf_[hi];
        const double t = (c1 > c0) ? (u - c0) / (c1 - c0) : 0.0;
        return edges_[hi - 1] + t * (edges_[hi] - edges_[hi - 1]);
    }

  private:
    static double interp(const std::vector<double>& density, const QuadratureGrid& grid,
                         double x) {
        const double pos = (x - grid.center(0)) / grid.step();
        if (pos <= 0.0) return density.front();
        if (pos >= grid.n_bins - 1) return density.back();
        const int i = static_cast<int>(pos);
        const double t = pos - i;
        return density[i] * (1.0 - t) + density[i + 1] * t;
    }

    std::vector<double> edges_;
    std::vector<double> cdf_;
};

// Platform-independent uniform doubles in [0, 1).
struct Splitmix64Stream {
    uint64_t state;
    double next() {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return static_cast<double>(z >> 11) * 0x1.0p-53;
    }
};

}  // namespace

std::vector<double> sample_setting(const DensityOperatorFock& state,
                                   std::span<const double> alpha,
                                   std::span<const double> psi,
                                   int m_samples,
                                   const DetectorModel& model,
                                   uint64_t seed,
                                   const QuadratureGrid& grid,
                                   const FieldScale& scale) {
    if (m_samples < 1) throw ValidationError("sample_setting: M must be >= 1");
    const std::vector<double> p = setting_density(state, alpha, psi, model, grid, scale);
    const InverseCdfSampler sampler(p, grid);
    Splitmix64Stream rng{seed};
    std::vector<double> out(m_samples);
    for (int i = 0; i < m_samples; ++i) out[i] = sampler.draw(rng.next());
    return out;
}

std::vector<double> histogram_counts(std::span<const double> samples,
                                     const QuadratureGrid& grid) {
    std::vector<double> counts(grid.n_bins, 0.0);
    const double d = grid.step();
    for (double v : samples) {
        if (v < grid.f_min() || v > grid.f_max)
            throw ComputeError("histogram_counts: sample outside the grid");
        int bin = static_cast<int>((v - grid.f_min()) / d);
        if (bin >= grid.n_bins) bin = grid.n_bins - 1;  // right edge
        counts[bin] += 1.0;
    }
    return counts;
}

SumFieldDataset build_dataset(const DensityOperatorFock& state,
                              const ControlGrid& control,
                              int m_samples,
                              const DetectorModel& model,
                              uint64_t seed,
                              const FieldScale& scale,
                              DataMode mode,
                              const std::function<void(size_t)>& progress) {
    control.validate();
    model.validate();
    if (control.n_modes() != state.n_modes)
        throw ValidationError("build_dataset: control grid mode count mismatch");
    if (mode != DataMode::analytic && m_samples < 1)
        throw ValidationError("build_dataset: M must be >= 1 for sampled modes");

    SumFieldDataset ds;
    ds.n_modes = state.n_modes;
    ds.scale = scale;
    ds.detector = model;
    ds.seed = seed;
    ds.samples_per_setting = (mode == DataMode::analytic) ? 0 : m_samples;
    ds.mode = mode;
    ds.control = control;
    ds.records.resize(control.n_settings());

    std::atomic<size_t> completed{0};
    parallel_for(control.n_settings(), [&](size_t s) {
        int alpha_idx;
        std::vector<int> psi_idx;
        control.unflatten(s, alpha_idx, psi_idx);
        const std::vector<double> psi = control.setting_phases(psi_idx);
        const auto& alpha = control.alphas[alpha_idx];
        try {
            if (mode == DataMode::analytic) {
                ds.records[s] = setting_density(state, alpha, psi, model, control.grid, scale);
            } else {
                const uint64_t s_seed = setting_seed(seed, alpha_idx, psi_idx);
                std::vector<double> samples = sample_setting(
                    state, alpha, psi, m_samples, model, s_seed, control.grid, scale);
                if (mode == DataMode::samples)
                    ds.records[s] = std::move(samples);
                else
                    ds.records[s] = histogram_counts(samples, control.grid);
            }
        } catch (const std::exception& e) {
            throw ComputeError("build_dataset: setting alpha_idx=" + std::to_string(alpha_idx) +
                               " flat=" + std::to_string(s) + ": " + e.what());
        }
        if (progress) {
            const size_t done = ++completed;
            progress(done);
        }
    });
    ds.validate();
    return ds;
}

InterferometerParams interferometer_params(double transmittance, double theta1,
                                           double theta2) {
    if (!(transmittance > 0.0) || !(transmittance < 1.0))
        throw ValidationError("interferometer_params: transmittance must lie strictly in (0, 1)");
    return {std::acos(std::sqrt(transmittance)), theta1, theta2};
}

}  // namespace fstomo
