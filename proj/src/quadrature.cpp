#include "fstomo/quadrature.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "fstomo/threading.hpp"

namespace fstomo {

namespace {
constexpr int kWavefunctionCeiling = 256;  // upward recurrence validated up to here

// Per-axis trapezoid nodes over [-zmax, zmax], endpoints included.
struct Trapezoid {
    double step;
    int count;
    double node(int j) const { return -0.5 * step * (count - 1) + step * j; }
    double weight(int j) const { return (j == 0 || j == count - 1) ? 0.5 * step : step; }
};

Trapezoid make_trapezoid(double halfwidth, int count) {
    return Trapezoid{2.0 * halfwidth / (count - 1), count};
}

// Phase-rotated real quadratic form for repeated p_j evaluations at a fixed
// psi: p_j = u^T Re(Phi^dag rho Phi) u with u the real product wavefunction.
Eigen::MatrixXd rotated_real_form(const DensityOperatorFock& state,
                                  std::span<const double> psi) {
    const int N = state.n_modes, dim = state.dim;
    const size_t D = state.total_dim();
    Eigen::VectorXcd phase(D);
    std::vector<int> digits(N);
    for (size_t a = 0; a < D; ++a) {
        detail::unflatten(a, N, dim, digits.data());
        double arg = 0.0;
        for (int k = 0; k < N; ++k) arg += digits[k] * psi[k];
        phase(a) = std::polar(1.0, arg);
    }
    Eigen::MatrixXcd rotated =
        phase.conjugate().asDiagonal() * state.rho * phase.asDiagonal();
    return rotated.real();
}

void product_wavefunction(const DensityOperatorFock& state,
                          std::span<const double> f,
                          const FieldScale& scale,
                          std::vector<double>& per_mode,
                          Eigen::VectorXd& out) {
    const int N = state.n_modes, dim = state.dim;
    per_mode.resize(static_cast<size_t>(N) * dim);
    for (int k = 0; k < N; ++k)
        quadrature_wavefunctions(dim, f[k], scale, per_mode.data() + k * dim);
    std::vector<int> digits(N);
    const size_t D = state.total_dim();
    out.resize(static_cast<Eigen::Index>(D));
    for (size_t a = 0; a < D; ++a) {
        detail::unflatten(a, N, dim, digits.data());
        double v = 1.0;
        for (int k = 0; k < N; ++k) v *= per_mode[k * dim + digits[k]];
        out(static_cast<Eigen::Index>(a)) = v;
    }
}

// Orthonormal basis of the hyperplane orthogonal to w (unit vector).
std::vector<std::vector<double>> orthogonal_complement(std::span<const double> w) {
    const int N = static_cast<int>(w.size());
    std::vector<std::vector<double>> basis;
    // Gram-Schmidt on the coordinate axes against w and accepted vectors.
    for (int axis = 0; axis < N && static_cast<int>(basis.size()) < N - 1; ++axis) {
        std::vector<double> v(N, 0.0);
        v[axis] = 1.0;
        double dot = 0.0;
        for (int k = 0; k < N; ++k) dot += v[k] * w[k];
        for (int k = 0; k < N; ++k) v[k] -= dot * w[k];
        for (const auto& b : basis) {
            double d2 = 0.0;
            for (int k = 0; k < N; ++k) d2 += v[k] * b[k];
            for (int k = 0; k < N; ++k) v[k] -= d2 * b[k];
        }
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        if (n2 > 1e-12) {
            const double inv = 1.0 / std::sqrt(n2);
            for (double& x : v) x *= inv;
            basis.push_back(std::move(v));
        }
    }
    return basis;
}

std::vector<double> mixing_weights(std::span<const double> alpha, int n_modes) {
    if (static_cast<int>(alpha.size()) != n_modes - 1)
        throw ValidationError("sum distribution: need N-1 mixing angles");
    for (double a : alpha)
        if (!(a > 0.0) || !(a < 0.5 * kPi))
            throw ValidationError("sum distribution: mixing angles must lie in (0, pi/2)");
    std::vector<double> w(n_modes, 1.0);
    double sin_prod = 1.0;
    for (int k = 0; k + 1 < n_modes; ++k) {
        w[k] = sin_prod * std::cos(alpha[k]);
        sin_prod *= std::sin(alpha[k]);
    }
    w[n_modes - 1] = sin_prod;
    return w;
}

}  // namespace

double quadrature_wavefunction(int n, double f, const FieldScale& scale) {
    if (n < 0) throw ValidationError("quadrature_wavefunction: n must be >= 0");
    if (n > kWavefunctionCeiling)
        throw ValidationError("quadrature_wavefunction: n exceeds the stability ceiling " +
                              std::to_string(kWavefunctionCeiling));
    std::vector<double> u(n + 1);
    quadrature_wavefunctions(n + 1, f, scale, u.data());
    return u[n];
}

void quadrature_wavefunctions(int nmax, double f, const FieldScale& scale, double* out) {
    if (nmax > kWavefunctionCeiling + 1)
        throw ValidationError("quadrature_wavefunctions: order exceeds the stability ceiling");
    const double F = scale.f_abs;
    out[0] = std::pow(2.0 * kPi * F * F, -0.25) * std::exp(-f * f / (4.0 * F * F));
    if (nmax == 1) return;
    out[1] = (f / F) * out[0];
    for (int n = 1; n + 1 < nmax; ++n)
        out[n + 1] = (f / (F * std::sqrt(double(n + 1)))) * out[n] -
                     std::sqrt(double(n) / double(n + 1)) * out[n - 1];
}

double joint_distribution(const DensityOperatorFock& state,
                          std::span<const double> f,
                          std::span<const double> psi,
                          const FieldScale& scale) {
    const int N = state.n_modes, dim = state.dim;
    if (static_cast<int>(f.size()) != N || static_cast<int>(psi.size()) != N)
        throw ValidationError("joint_distribution: f/psi must have one entry per mode");
    const size_t D = state.total_dim();
    std::vector<double> per_mode(static_cast<size_t>(N) * dim);
    for (int k = 0; k < N; ++k)
        quadrature_wavefunctions(dim, f[k], scale, per_mode.data() + k * dim);
    Eigen::VectorXcd w(static_cast<Eigen::Index>(D));
    std::vector<int> digits(N);
    for (size_t a = 0; a < D; ++a) {
        detail::unflatten(a, N, dim, digits.data());
        double mag = 1.0, arg = 0.0;
        for (int k = 0; k < N; ++k) {
            mag *= per_mode[k * dim + digits[k]];
            arg += digits[k] * psi[k];
        }
        w(static_cast<Eigen::Index>(a)) = std::polar(mag, arg);
    }
    return std::real(w.dot(state.rho * w));  // Eigen dot conjugates its left argument
}

namespace {
double sum_distribution_point(const DensityOperatorFock& state,
                              std::span<const double> alpha,
                              std::span<const double> psi,
                              double f,
                              const FieldScale& scale,
                              SumRoute route,
                              double line_step,
                              double line_halfwidth);
}

double sum_distribution_at(const DensityOperatorFock& state,
                           std::span<const double> alpha,
                           std::span<const double> psi,
                           double f,
                           const FieldScale& scale,
                           SumRoute route) {
    const QuadratureGrid ref = default_grid(state, scale);
    return sum_distribution_point(state, alpha, psi, f, scale, route, 0.5 * ref.step(),
                                  2.0 * ref.f_max);
}

namespace {
double sum_distribution_point(const DensityOperatorFock& state,
                              std::span<const double> alpha,
                              std::span<const double> psi,
                              double f,
                              const FieldScale& scale,
                              SumRoute route,
                              double line_step,
                              double line_halfwidth) {
    const int N = state.n_modes;
    const std::vector<double> w = mixing_weights(alpha, N);

    if (route == SumRoute::fourier) {
        // p_s(f) = (1/2pi) int dz e^{-i z f} Psi(z w_1, ..., z w_N, psi)
        const double z_max = 10.0 / scale.f_abs;
        const Trapezoid tz = make_trapezoid(z_max, 512);
        std::vector<double> zk(N);
        cplx acc = 0.0;
        for (int j = 0; j < tz.count; ++j) {
            const double z = tz.node(j);
            for (int k = 0; k < N; ++k) zk[k] = z * w[k];
            acc += tz.weight(j) * std::polar(1.0, -z * f) *
                   characteristic_function(state, zk, psi, scale);
        }
        return acc.real() / (2.0 * kPi);
    }

    // projection: integrate p_j over the hyperplane sum w_k F_k = f,
    // sampled with half the requesting grid's bin width and trapezoid weights
    const double t_max = line_halfwidth;
    const int n_t = 2 * static_cast<int>(std::ceil(t_max / line_step)) + 1;
    const Trapezoid tt = make_trapezoid(t_max, n_t);
    const auto basis = orthogonal_complement(w);

    const Eigen::MatrixXd R = rotated_real_form(state, psi);
    std::vector<double> per_mode;
    Eigen::VectorXd u;
    std::vector<double> point(N);

    if (N == 2) {
        // batched quadratic forms along the line
        const size_t D = state.total_dim();
        Eigen::MatrixXd U(static_cast<Eigen::Index>(D), tt.count);
        Eigen::VectorXd wt(tt.count);
        for (int j = 0; j < tt.count; ++j) {
            const double t = tt.node(j);
            for (int k = 0; k < N; ++k) point[k] = f * w[k] + t * basis[0][k];
            product_wavefunction(state, point, scale, per_mode, u);
            U.col(j) = u;
            wt(j) = tt.weight(j);
        }
        const Eigen::MatrixXd P = R.selfadjointView<Eigen::Lower>() * U;
        return (U.cwiseProduct(P).colwise().sum().transpose().cwiseProduct(wt)).sum();
    }

    // general N: tensor-product trapezoid over the complement
    std::vector<int> idx(N - 1, 0);
    double acc = 0.0;
    while (true) {
        double weight = 1.0;
        for (int d = 0; d < N - 1; ++d) weight *= tt.weight(idx[d]);
        for (int k = 0; k < N; ++k) {
            double x = f * w[k];
            for (int d = 0; d < N - 1; ++d) x += tt.node(idx[d]) * basis[d][k];
            point[k] = x;
        }
        product_wavefunction(state, point, scale, per_mode, u);
        acc += weight * u.dot(R.selfadjointView<Eigen::Lower>() * u);
        int d = N - 2;
        while (d >= 0 && ++idx[d] == tt.count) idx[d--] = 0;
        if (d < 0) break;
    }
    return acc;
}
}  // namespace

std::vector<double> sum_distribution_exact(const DensityOperatorFock& state,
                                           std::span<const double> alpha,
                                           std::span<const double> psi,
                                           const QuadratureGrid& grid,
                                           const FieldScale& scale,
                                           SumRoute route) {
    grid.validate();
    std::vector<double> out(grid.n_bins);
    if (route == SumRoute::fourier) {
        // share the 512 characteristic-function evaluations across all bins;
        // evaluate the nonnegative half of the ray, mirror by conjugation
        const int N = state.n_modes;
        const std::vector<double> w = mixing_weights(alpha, N);
        const double z_max = 10.0 / scale.f_abs;
        const Trapezoid tz = make_trapezoid(z_max, 512);
        std::vector<cplx> psi_ray(tz.count);
        std::vector<double> z_pos;
        std::vector<int> pos_idx;
        for (int j = 0; j < tz.count; ++j) {
            if (tz.node(j) >= 0.0) {
                z_pos.push_back(tz.node(j));
                pos_idx.push_back(j);
            }
        }
        const std::vector<cplx> half =
            characteristic_function_ray(state, z_pos, w, psi, scale);
        for (size_t i = 0; i < pos_idx.size(); ++i) {
            psi_ray[pos_idx[i]] = half[i];
            psi_ray[tz.count - 1 - pos_idx[i]] = std::conj(half[i]);
        }
        for (int i = 0; i < grid.n_bins; ++i) {
            const double f = grid.center(i);
            cplx acc = 0.0;
            for (int j = 0; j < tz.count; ++j)
                acc += tz.weight(j) * std::polar(1.0, -tz.node(j) * f) * psi_ray[j];
            out[i] = acc.real() / (2.0 * kPi);
        }
    } else {
        // line sampled at half the output bin width, reaching far enough to
        // cover the distribution's support diagonally across the grid
        const QuadratureGrid ref = default_grid(state, scale);
        const double halfwidth = 2.0 * std::max(grid.f_max, ref.f_max);
        parallel_for(grid.n_bins, [&](size_t i) {
            out[i] = sum_distribution_point(state, alpha, psi,
                                            grid.center(static_cast<int>(i)), scale, route,
                                            0.5 * grid.step(), halfwidth);
        });
    }

    double mass = 0.0, mean = 0.0, m2 = 0.0;
    for (int i = 0; i < grid.n_bins; ++i) {
        mass += out[i] * grid.step();
        mean += out[i] * grid.center(i) * grid.step();
        m2 += out[i] * sqr(grid.center(i)) * grid.step();
    }
    if (1.0 - mass > 1e-4) {
        mean /= std::max(mass, 1e-12);
        const double sigma = std::sqrt(std::max(m2 / std::max(mass, 1e-12) - mean * mean, 0.0));
        throw ComputeError(
            "sum_distribution_exact: " + std::to_string(1.0 - mass) +
            " of the distribution falls outside the grid; suggest f_max >= " +
            std::to_string(std::abs(mean) + 7.0 * sigma));
    }
    return out;
}

cplx oracle_matrix_element(const DensityOperatorFock& state,
                           const FsMatrixPoint& point,
                           const FieldScale& scale) {
    point.validate();
    const int N = state.n_modes, dim = state.dim;
    if (static_cast<int>(point.f_center.size()) != N)
        throw ValidationError("oracle_matrix_element: point dimension mismatch");
    const size_t D = state.total_dim();

    std::vector<double> uL(static_cast<size_t>(N) * dim), uR(uL.size());
    for (int k = 0; k < N; ++k) {
        quadrature_wavefunctions(dim, point.f_center[k] - point.f_offset[k], scale,
                                 uL.data() + k * dim);
        quadrature_wavefunctions(dim, point.f_center[k] + point.f_offset[k], scale,
                                 uR.data() + k * dim);
    }
    Eigen::VectorXcd wl(static_cast<Eigen::Index>(D)), wr(static_cast<Eigen::Index>(D));
    std::vector<int> digits(N);
    for (size_t a = 0; a < D; ++a) {
        detail::unflatten(a, N, dim, digits.data());
        double magL = 1.0, magR = 1.0, arg = 0.0;
        for (int k = 0; k < N; ++k) {
            magL *= uL[k * dim + digits[k]];
            magR *= uR[k * dim + digits[k]];
            arg += digits[k] * point.phases[k];
        }
        // ket coefficients <a|Fv, phi> = u_a(Fv) e^{+i a phi}
        wl(a) = std::polar(magL, arg);
        wr(a) = std::polar(magR, arg);
    }
    return wl.dot(state.rho * wr);  // <F-F'| rho |F+F'>
}

QuadratureGrid default_grid(const DensityOperatorFock& state, const FieldScale& scale) {
    const double nbar = max_mean_photon_number(state);
    QuadratureGrid g;
    g.f_max = 6.0 * scale.f_abs * (1.0 + std::sqrt(nbar));
    g.n_bins = 64;
    return g;
}

namespace detail {
std::vector<double> wavefunction_table(const QuadratureGrid& grid, int dim,
                                       const FieldScale& scale) {
    std::vector<double> table(static_cast<size_t>(grid.n_bins) * dim);
    for (int g = 0; g < grid.n_bins; ++g)
        quadrature_wavefunctions(dim, grid.center(g), scale, table.data() + static_cast<size_t>(g) * dim);
    return table;
}
}  // namespace detail

}  // namespace fstomo
