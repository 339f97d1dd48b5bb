// core.hpp — shared domain types, tolerances and small utilities.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fstomo {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

// Library-wide tolerances (see README, "Numerical conventions").
inline constexpr double kTraceTol = 1e-6;   // admissible truncation deficit
inline constexpr double kCharTol = 1e-8;    // |Psi| <= 1 + kCharTol

// Input/validation problems (CLI exit code 2).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Runtime / numerical failures (CLI exit code 1).
struct ComputeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Mode amplitude |F| of the scaled field-strength operator
/// F(phi) = |F| (a e^{-i phi} + a^dag e^{i phi}).
/// Vacuum field-strength variance equals f_abs^2; default 1.
struct FieldScale {
    double f_abs = 1.0;

    void validate() const {
        if (!(f_abs > 0.0) || !std::isfinite(f_abs))
            throw ValidationError("FieldScale: f_abs must be positive and finite");
    }
};

/// Uniform symmetric field-strength grid: n_bins bins on [-f_max, f_max),
/// values attached to bin centers.
struct QuadratureGrid {
    double f_max = 6.0;
    int n_bins = 64;

    double f_min() const { return -f_max; }
    double step() const { return 2.0 * f_max / n_bins; }
    double center(int i) const { return -f_max + (i + 0.5) * step(); }

    void validate() const {
        if (!(f_max > 0.0) || !std::isfinite(f_max))
            throw ValidationError("QuadratureGrid: f_max must be positive");
        if (n_bins < 8)
            throw ValidationError("QuadratureGrid: n_bins must be >= 8");
    }
    bool operator==(const QuadratureGrid& o) const {
        return f_max == o.f_max && n_bins == o.n_bins;
    }
};

/// One requested density-matrix element <F-F', phi| rho |F+F', phi>.
/// Offsets of either sign are accepted; entries with a lexicographically
/// negative offset tuple are resolved through Hermiticity by the callers.
struct FsMatrixPoint {
    std::vector<double> f_center;   // F_k
    std::vector<double> f_offset;   // F'_k
    std::vector<double> phases;     // reference phases phi_k

    void validate() const {
        const size_t n = f_center.size();
        if (f_offset.size() != n || phases.size() != n)
            throw ValidationError("FsMatrixPoint: component count mismatch");
        for (size_t k = 0; k < n; ++k)
            if (!std::isfinite(f_center[k]) || !std::isfinite(f_offset[k]) ||
                !std::isfinite(phases[k]))
                throw ValidationError("FsMatrixPoint: non-finite entry");
    }
};

/// Detector quantum efficiency. eta < 1 convolves measured distributions
/// with a zero-mean Gaussian of variance |F|^2 (1-eta)/eta.
struct DetectorModel {
    double eta = 1.0;

    double noise_variance(const FieldScale& scale) const {
        return scale.f_abs * scale.f_abs * (1.0 - eta) / eta;
    }
    void validate() const {
        if (!(eta > 0.0) || !(eta <= 1.0))
            throw ValidationError("DetectorModel: eta must lie in (0, 1], got " +
                                  std::to_string(eta));
    }
};

// splitmix64 — stable across platforms; used to derive per-setting seeds.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a, used for provenance hashes of canonical config text.
inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline double sqr(double x) { return x * x; }

}  // namespace fstomo
