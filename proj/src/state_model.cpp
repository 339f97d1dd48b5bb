#include "fstomo/state_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fstomo {

namespace {

// Normalized single-mode amplitude vectors -----------------------------------

std::vector<cplx> coherent_amplitudes(cplx gamma, int dim) {
    std::vector<cplx> c(dim);
    c[0] = std::exp(-0.5 * std::norm(gamma));
    for (int n = 1; n < dim; ++n) c[n] = c[n - 1] * gamma / std::sqrt(double(n));
    return c;
}

// Squeezed vacuum S(r e^{i theta})|0>: only even levels populated,
// c_{2m} = (cosh r)^{-1/2} (-e^{i theta} tanh r / 2)^m sqrt((2m)!)/m!.
std::vector<cplx> squeezed_amplitudes(double r, double theta, int dim) {
    std::vector<cplx> c(dim, cplx(0.0));
    const cplx q = -0.5 * std::tanh(r) * std::polar(1.0, theta);
    cplx amp = 1.0 / std::sqrt(std::cosh(r));
    c[0] = amp;
    for (int m = 1; 2 * m < dim; ++m) {
        // ratio c_{2m}/c_{2m-2} = q * sqrt((2m)(2m-1)) / m
        amp *= q * std::sqrt(double(2 * m) * double(2 * m - 1)) / double(m);
        c[2 * m] = amp;
    }
    return c;
}

size_t pow_int(int base, int exp) {
    size_t r = 1;
    for (int i = 0; i < exp; ++i) r *= static_cast<size_t>(base);
    return r;
}

// Smallest dim with single-mode tail weight below tol.
int required_dim_coherent(cplx gamma, double tol) {
    const double nbar = std::norm(gamma);
    double p = std::exp(-nbar), tail = 1.0 - p;
    int n = 0;
    while (tail > tol && n < 4096) {
        ++n;
        p *= nbar / n;
        tail -= p;
    }
    return n + 1;
}

int required_dim_squeezed(double r, double tol) {
    const double t2 = sqr(std::tanh(r));
    double w = 1.0 / std::cosh(r);  // |c_0|^2 = 1/cosh r
    w = w * 1.0;                    // weight at m = 0
    double tail = 1.0 - w;
    int m = 0;
    // |c_{2m}|^2 ratio: t2 * (2m)(2m-1)/(2m)^2 -> recompute directly
    double amp2 = 1.0 / std::cosh(r);
    while (tail > tol && m < 2048) {
        ++m;
        amp2 *= t2 * double(2 * m) * double(2 * m - 1) / (4.0 * double(m) * double(m));
        tail -= amp2;
    }
    return 2 * m + 1;
}

int required_dim_tmsv(double r, double tol) {
    const double l2 = sqr(std::tanh(r));
    double w = 1.0 - l2, tail = 1.0 - w;
    int n = 0;
    while (tail > tol && n < 4096) {
        ++n;
        w *= l2;
        tail -= w;
    }
    return n + 1;
}

struct BuildResult {
    Eigen::MatrixXcd rho;
    double deficit = 0.0;
};

BuildResult build_kind(const StateSpec& s, double trace_tol);

BuildResult build_pure_product(const StateSpec& s,
                               const std::vector<std::vector<cplx>>& mode_amps,
                               double trace_tol,
                               const char* kind_name,
                               int (*required_dim)(const StateSpec&, int)) {
    const int N = s.n_modes, dim = s.truncation_dim;
    // per-mode truncation check first, so the error can name the mode
    for (int k = 0; k < N; ++k) {
        double w = 0.0;
        for (const cplx& a : mode_amps[k]) w += std::norm(a);
        if (1.0 - w > trace_tol) {
            throw ValidationError(std::string(kind_name) + ": truncation deficit " +
                                  std::to_string(1.0 - w) + " in mode " +
                                  std::to_string(k) + " exceeds trace_tol; use truncation_dim >= " +
                                  std::to_string(required_dim ? required_dim(s, k) : 2 * dim));
        }
    }
    const size_t D = pow_int(dim, N);
    Eigen::VectorXcd psi(D);
    std::vector<int> digits(N);
    for (size_t a = 0; a < D; ++a) {
        detail::unflatten(a, N, dim, digits.data());
        cplx v = 1.0;
        for (int k = 0; k < N; ++k) v *= mode_amps[k][digits[k]];
        psi(a) = v;
    }
    const double norm2 = psi.squaredNorm();
    BuildResult out;
    out.deficit = 1.0 - norm2;
    psi /= std::sqrt(norm2);
    out.rho = psi * psi.adjoint();
    return out;
}

BuildResult build_kind(const StateSpec& s, double trace_tol) {
    const int N = s.n_modes, dim = s.truncation_dim;
    const size_t D = pow_int(dim, N);

    return std::visit(
        [&](const auto& k) -> BuildResult {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, spec::Vacuum>) {
                Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(D, D);
                rho(0, 0) = 1.0;
                return {std::move(rho), 0.0};
            } else if constexpr (std::is_same_v<T, spec::FockProduct>) {
                size_t flat = 0;
                for (int m = 0; m < N; ++m) {
                    if (k.occupation[m] >= dim)
                        throw ValidationError(
                            "FockProduct: occupation " + std::to_string(k.occupation[m]) +
                            " in mode " + std::to_string(m) + " requires truncation_dim >= " +
                            std::to_string(k.occupation[m] + 1));
                    flat = flat * dim + static_cast<size_t>(k.occupation[m]);
                }
                Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(D, D);
                rho(flat, flat) = 1.0;
                return {std::move(rho), 0.0};
            } else if constexpr (std::is_same_v<T, spec::Coherent>) {
                std::vector<std::vector<cplx>> amps(N);
                for (int m = 0; m < N; ++m) amps[m] = coherent_amplitudes(k.gamma[m], dim);
                return build_pure_product(
                    s, amps, trace_tol, "Coherent",
                    +[](const StateSpec& sp, int mode) {
                        const auto& c = std::get<spec::Coherent>(sp.kind);
                        return required_dim_coherent(c.gamma[mode], kTraceTol);
                    });
            } else if constexpr (std::is_same_v<T, spec::SingleModeSqueezed>) {
                std::vector<std::vector<cplx>> amps(N);
                for (int m = 0; m < N; ++m) {
                    if (m == k.mode)
                        amps[m] = squeezed_amplitudes(k.r, k.phase, dim);
                    else {
                        amps[m].assign(dim, cplx(0.0));
                        amps[m][0] = 1.0;
                    }
                }
                return build_pure_product(
                    s, amps, trace_tol, "SingleModeSqueezed",
                    +[](const StateSpec& sp, int) {
                        const auto& q = std::get<spec::SingleModeSqueezed>(sp.kind);
                        return required_dim_squeezed(q.r, kTraceTol);
                    });
            } else if constexpr (std::is_same_v<T, spec::TwoModeSqueezedVacuum>) {
                // sqrt(1-l^2) sum_n l^n |n, n>,  l = tanh r
                const double l = std::tanh(k.r);
                double tail = 0.0;
                {
                    double w = (1.0 - l * l) * std::pow(l * l, dim);
                    // geometric remainder sum_{n>=dim} (1-l^2) l^{2n}
                    tail = (l < 1.0) ? std::pow(l * l, dim) : 1.0;
                    (void)w;
                }
                if (tail > trace_tol)
                    throw ValidationError(
                        "TwoModeSqueezedVacuum: truncation deficit " + std::to_string(tail) +
                        " in mode " + std::to_string(k.mode_a) + " exceeds trace_tol; use truncation_dim >= " +
                        std::to_string(required_dim_tmsv(k.r, trace_tol)));
                Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(D);
                std::vector<int> digits(N, 0);
                double amp = std::sqrt(1.0 - l * l);
                for (int n = 0; n < dim; ++n) {
                    std::fill(digits.begin(), digits.end(), 0);
                    digits[k.mode_a] = n;
                    digits[k.mode_b] = n;
                    size_t flat = 0;
                    for (int m = 0; m < N; ++m) flat = flat * dim + digits[m];
                    psi(flat) = amp * std::pow(l, n);
                }
                const double norm2 = psi.squaredNorm();
                BuildResult out;
                out.deficit = 1.0 - norm2;
                psi /= std::sqrt(norm2);
                out.rho = psi * psi.adjoint();
                return out;
            } else {  // Mixture
                BuildResult out;
                out.rho = Eigen::MatrixXcd::Zero(D, D);
                double deficit = 0.0;
                for (size_t i = 0; i < k.components.size(); ++i) {
                    BuildResult part = build_kind(k.components[i], trace_tol);
                    out.rho += k.weights[i] * part.rho;
                    deficit += k.weights[i] * part.deficit;
                }
                out.deficit = deficit;
                // components are individually normalized; renormalize the sum
                const double tr = out.rho.trace().real();
                out.rho /= tr;
                return out;
            }
        },
        s.kind);
}

}  // namespace

void StateSpec::validate() const {
    if (n_modes < 1) throw ValidationError("StateSpec: n_modes must be >= 1");
    if (truncation_dim < 2) throw ValidationError("StateSpec: truncation_dim must be >= 2");
    std::visit(
        [&](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, spec::Coherent>) {
                if (static_cast<int>(k.gamma.size()) != n_modes)
                    throw ValidationError("Coherent: need one gamma per mode");
            } else if constexpr (std::is_same_v<T, spec::FockProduct>) {
                if (static_cast<int>(k.occupation.size()) != n_modes)
                    throw ValidationError("FockProduct: need one occupation per mode");
                for (int n : k.occupation)
                    if (n < 0) throw ValidationError("FockProduct: occupations must be >= 0");
            } else if constexpr (std::is_same_v<T, spec::SingleModeSqueezed>) {
                if (k.mode < 0 || k.mode >= n_modes)
                    throw ValidationError("SingleModeSqueezed: mode index out of range");
                if (k.r < 0.0) throw ValidationError("SingleModeSqueezed: r must be >= 0");
            } else if constexpr (std::is_same_v<T, spec::TwoModeSqueezedVacuum>) {
                if (k.mode_a == k.mode_b || k.mode_a < 0 || k.mode_b < 0 ||
                    k.mode_a >= n_modes || k.mode_b >= n_modes)
                    throw ValidationError("TwoModeSqueezedVacuum: invalid mode pair");
                if (k.r < 0.0) throw ValidationError("TwoModeSqueezedVacuum: r must be >= 0");
            } else if constexpr (std::is_same_v<T, spec::Mixture>) {
                if (k.weights.size() != k.components.size() || k.components.empty())
                    throw ValidationError("Mixture: weights/components mismatch");
                double sum = 0.0;
                for (double w : k.weights) {
                    if (w < 0.0) throw ValidationError("Mixture: weights must be >= 0");
                    sum += w;
                }
                if (std::abs(sum - 1.0) > 1e-12)
                    throw ValidationError("Mixture: weights must sum to 1 within 1e-12, got " +
                                          std::to_string(sum));
                for (const StateSpec& c : k.components) {
                    if (c.n_modes != n_modes || c.truncation_dim != truncation_dim)
                        throw ValidationError("Mixture: components must share n_modes and truncation_dim");
                    c.validate();
                }
            }
        },
        kind);
}

void DensityOperatorFock::validate() const {
    const auto D = static_cast<Eigen::Index>(total_dim());
    if (rho.rows() != D || rho.cols() != D)
        throw ComputeError("DensityOperatorFock: shape mismatch");
    const double herm = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    if (herm > 1e-12) throw ComputeError("DensityOperatorFock: Hermiticity residual " +
                                         std::to_string(herm));
    const cplx tr = rho.trace();
    if (std::abs(tr.imag()) > 1e-12 || tr.real() < 1.0 - kTraceTol || tr.real() > 1.0 + 1e-12)
        throw ComputeError("DensityOperatorFock: trace " + std::to_string(tr.real()) +
                           " outside [1 - trace_tol, 1 + 1e-12]");
    for (Eigen::Index i = 0; i < D; ++i) {
        if (rho(i, i).real() < -1e-12 || std::abs(rho(i, i).imag()) > 1e-12)
            throw ComputeError("DensityOperatorFock: invalid diagonal entry");
    }
}

DensityOperatorFock build_state(const StateSpec& spec, double trace_tol) {
    spec.validate();
    BuildResult r = build_kind(spec, trace_tol);
    DensityOperatorFock out;
    out.n_modes = spec.n_modes;
    out.dim = spec.truncation_dim;
    out.rho = std::move(r.rho);
    out.trace_deficit = r.deficit;
    // renormalize exactly after truncation
    out.rho /= out.rho.trace().real();
    out.validate();
    return out;
}

Eigen::MatrixXcd displacement_matrix(int dim, cplx mu) {
    Eigen::MatrixXcd D(dim, dim);
    const double x = std::norm(mu);
    if (x == 0.0) {
        D.setIdentity();
        return D;
    }
    const double damp = std::exp(-0.5 * x);
    const double absmu = std::abs(mu);
    const cplx phase = mu / absmu;

    for (int d = 0; d < dim; ++d) {
        // mag(k) = |mu|^d sqrt(k!/(k+d)!) accumulated along the diagonal
        double mag = 1.0;
        for (int j = 1; j <= d; ++j) mag *= absmu / std::sqrt(double(j));
        const cplx up = std::pow(phase, d);            // factor for <k+d|D|k>
        const cplx down = std::pow(-std::conj(phase), d);  // factor for <k|D|k+d>

        double Lkm1 = 0.0, Lk = 1.0;  // L_0^{(d)}(x) = 1
        for (int k = 0; k + d < dim; ++k) {
            if (k > 0) {
                const double Lnext =
                    ((2.0 * (k - 1) + d + 1.0 - x) * Lk - (k - 1 + d) * Lkm1) / double(k);
                Lkm1 = Lk;
                Lk = Lnext;
                mag *= std::sqrt(double(k) / double(k + d));
            }
            const double val = damp * mag * Lk;
            D(k + d, k) = val * up;
            if (d > 0) D(k, k + d) = val * down;
        }
    }
    return D;
}

cplx characteristic_function(const DensityOperatorFock& state,
                             std::span<const double> z,
                             std::span<const double> psi,
                             const FieldScale& scale) {
    const int N = state.n_modes, dim = state.dim;
    if (static_cast<int>(z.size()) != N || static_cast<int>(psi.size()) != N)
        throw ValidationError("characteristic_function: z/psi must have one entry per mode");
    for (int k = 0; k < N; ++k)
        if (!std::isfinite(z[k]) || !std::isfinite(psi[k]))
            throw ValidationError("characteristic_function: non-finite argument");

    std::vector<Eigen::MatrixXcd> D(N);
    for (int k = 0; k < N; ++k)
        D[k] = displacement_matrix(dim, cplx(0.0, 1.0) * z[k] * scale.f_abs *
                                            std::polar(1.0, psi[k]));

    const size_t Dt = state.total_dim();
    std::vector<int> da(N), db(N);
    cplx sum = 0.0;
    for (size_t a = 0; a < Dt; ++a) {
        detail::unflatten(a, N, dim, da.data());
        for (size_t b = 0; b < Dt; ++b) {
            detail::unflatten(b, N, dim, db.data());
            cplx m = state.rho(a, b);
            for (int k = 0; k < N; ++k) m *= D[k](db[k], da[k]);
            sum += m;
        }
    }
    return sum;
}

std::vector<cplx> characteristic_function_ray(const DensityOperatorFock& state,
                                              std::span<const double> z_nodes,
                                              std::span<const double> weights,
                                              std::span<const double> psi,
                                              const FieldScale& scale) {
    using MatrixRM = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const int N = state.n_modes, dim = state.dim;
    const int nz = static_cast<int>(z_nodes.size());
    if (static_cast<int>(weights.size()) != N || static_cast<int>(psi.size()) != N)
        throw ValidationError("characteristic_function_ray: weights/psi size mismatch");

    std::vector<cplx> out(nz);
    if (N != 2) {  // the batched path below is specific to two modes
        std::vector<double> zk(N);
        for (int j = 0; j < nz; ++j) {
            for (int k = 0; k < N; ++k) zk[k] = z_nodes[j] * weights[k];
            out[j] = characteristic_function(state, zk, psi, scale);
        }
        return out;
    }

    const int d2 = dim * dim;
    // R[(a1 b1), (a2 b2)] = rho(a1 a2, b1 b2)
    MatrixRM R(d2, d2);
    for (int a1 = 0; a1 < dim; ++a1)
        for (int b1 = 0; b1 < dim; ++b1)
            for (int a2 = 0; a2 < dim; ++a2)
                for (int b2 = 0; b2 < dim; ++b2)
                    R(a1 * dim + b1, a2 * dim + b2) =
                        state.rho(a1 * dim + a2, b1 * dim + b2);

    MatrixRM K1(nz, d2), K2(nz, d2);
    for (int j = 0; j < nz; ++j) {
        for (int k = 0; k < 2; ++k) {
            const Eigen::MatrixXcd D = displacement_matrix(
                dim, cplx(0.0, 1.0) * z_nodes[j] * weights[k] * scale.f_abs *
                         std::polar(1.0, psi[k]));
            MatrixRM& K = (k == 0) ? K1 : K2;
            for (int a = 0; a < dim; ++a)
                for (int b = 0; b < dim; ++b) K(j, a * dim + b) = D(b, a);
        }
    }
    const MatrixRM T = K1 * R;  // (nz x d2)
    for (int j = 0; j < nz; ++j) out[j] = T.row(j).cwiseProduct(K2.row(j)).sum();
    return out;
}

double mean_field(const DensityOperatorFock& state, int mode_index, double psi,
                  const FieldScale& scale) {
    const int N = state.n_modes, dim = state.dim;
    if (mode_index < 0 || mode_index >= N)
        throw ValidationError("mean_field: mode index out of range");
    // <a_k> = Tr[rho a_k]; a_k couples n_k -> n_k - 1
    const size_t Dt = state.total_dim();
    std::vector<int> digits(N);
    size_t stride = 1;
    for (int k = N - 1; k > mode_index; --k) stride *= dim;
    cplx mean_a = 0.0;
    for (size_t a = 0; a < Dt; ++a) {
        detail::unflatten(a, N, dim, digits.data());
        const int nk = digits[mode_index];
        if (nk + 1 < dim) {
            // <a| a_k |a + stride> = sqrt(nk + 1)
            mean_a += state.rho(a + stride, a) * std::sqrt(double(nk + 1));
        }
    }
    return 2.0 * scale.f_abs * std::real(mean_a * std::polar(1.0, -psi));
}

double max_mean_photon_number(const DensityOperatorFock& state) {
    const int N = state.n_modes, dim = state.dim;
    const size_t Dt = state.total_dim();
    std::vector<double> nbar(N, 0.0);
    std::vector<int> digits(N);
    for (size_t a = 0; a < Dt; ++a) {
        detail::unflatten(a, N, dim, digits.data());
        const double p = state.rho(a, a).real();
        for (int k = 0; k < N; ++k) nbar[k] += p * digits[k];
    }
    return *std::max_element(nbar.begin(), nbar.end());
}

DensityOperatorFock rotate_state(const DensityOperatorFock& state, double delta) {
    const int N = state.n_modes, dim = state.dim;
    const size_t Dt = state.total_dim();
    DensityOperatorFock out = state;
    std::vector<int> digits(N);
    std::vector<int> total(Dt);
    for (size_t a = 0; a < Dt; ++a) {
        detail::unflatten(a, N, dim, digits.data());
        total[a] = std::accumulate(digits.begin(), digits.end(), 0);
    }
    for (size_t a = 0; a < Dt; ++a)
        for (size_t b = 0; b < Dt; ++b)
            out.rho(a, b) = state.rho(a, b) * std::polar(1.0, -delta * (total[a] - total[b]));
    return out;
}

}  // namespace fstomo
