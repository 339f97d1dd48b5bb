#include "fstomo/reconstruction.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "fstomo/threading.hpp"

namespace fstomo {

namespace {

using MatrixRM = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

size_t ipow(size_t b, int e) {
    size_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

// endpoint-inclusive trapezoid nodes on [-half, half]
struct Axis {
    double half;
    int count;
    double node(int j) const { return -half + 2.0 * half * j / (count - 1); }
    double weight(int j) const {
        const double step = 2.0 * half / (count - 1);
        return (j == 0 || j == count - 1) ? 0.5 * step : step;
    }
};

std::vector<double> hyperspherical_weights_unchecked(std::span<const double> angles) {
    const int n = static_cast<int>(angles.size()) + 1;
    std::vector<double> w(n);
    double sin_prod = 1.0;
    for (int k = 0; k + 1 < n; ++k) {
        w[k] = sin_prod * std::cos(angles[k]);
        sin_prod *= std::sin(angles[k]);
    }
    w[n - 1] = sin_prod;
    return w;
}

// shared generic contraction Psi = sum_{a,b} rho(a,b) prod_k K_k(b_k, a_k)
cplx contract_mode_kernels(const DensityOperatorFock& state,
                           const std::vector<Eigen::MatrixXcd>& kernels) {
    const int N = state.n_modes, dim = state.dim;
    const size_t D = state.total_dim();
    std::vector<int> da(N), db(N);
    cplx sum = 0.0;
    for (size_t a = 0; a < D; ++a) {
        detail::unflatten(a, N, dim, da.data());
        for (size_t b = 0; b < D; ++b) {
            detail::unflatten(b, N, dim, db.data());
            cplx m = state.rho(a, b);
            for (int k = 0; k < N; ++k) m *= kernels[k](db[k], da[k]);
            sum += m;
        }
    }
    return sum;
}

}  // namespace

// ---------------------------------------------------------------------------
// coordinate map & weights

namespace detail {
CoordinateMapResult coordinate_map_general(std::span<const double> y,
                                           std::span<const double> f_offset,
                                           std::span<const double> phases,
                                           const FieldScale& scale) {
    const int N = static_cast<int>(y.size());
    const double f2 = sqr(scale.f_abs);
    CoordinateMapResult r;
    r.z.resize(N);
    r.psi.resize(N);
    double sum2 = 0.0;
    for (int k = 0; k < N; ++k) {
        const double v = f_offset[k] / f2;
        r.z[k] = std::hypot(y[k], v);
        if (f_offset[k] == 0.0)
            r.psi[k] = (y[k] >= 0.0) ? phases[k] : phases[k] - kPi;
        else
            r.psi[k] = phases[k] + std::atan2(-v, y[k]);
        sum2 += sqr(r.z[k]);
    }
    r.y_radial = std::sqrt(sum2);
    r.beta.resize(N - 1);
    double tail2 = sum2;
    for (int k = 0; k + 1 < N; ++k) {
        tail2 -= sqr(r.z[k]);
        r.beta[k] = std::atan2(std::sqrt(std::max(tail2, 0.0)), r.z[k]);
    }
    return r;
}
}  // namespace detail

CoordinateMapResult coordinate_map(std::span<const double> y,
                                   std::span<const double> f_offset,
                                   std::span<const double> phases,
                                   const FieldScale& scale) {
    if (y.size() != f_offset.size() || y.size() != phases.size())
        throw ValidationError("coordinate_map: component count mismatch");
    for (double v : f_offset)
        if (v < 0.0)
            throw ValidationError("coordinate_map: offsets must be >= 0 "
                                  "(negative offsets resolve through Hermiticity)");
    return detail::coordinate_map_general(y, f_offset, phases, scale);
}

std::vector<double> nmode_weights(std::span<const double> angles) {
    for (double a : angles)
        if (!(a > 0.0) || !(a < 0.5 * kPi))
            throw ValidationError("nmode_weights: angles must lie in (0, pi/2)");
    std::vector<double> w = hyperspherical_weights_unchecked(angles);
    // recompute the last weight so sum w^2 = 1 holds exactly
    double partial = 0.0;
    for (size_t k = 0; k + 1 < w.size(); ++k) partial += sqr(w[k]);
    w.back() = std::sqrt(std::max(1.0 - partial, 0.0));
    return w;
}

// ---------------------------------------------------------------------------
// filter and quadrature parameters

double RegularizationFilter::attenuation(double y_radial) const {
    if (taper_width <= 0.0) return y_radial <= y_cut ? 1.0 : 0.0;
    const double start = y_cut - taper_width;
    if (y_radial <= start) return 1.0;
    if (y_radial >= y_cut) return 0.0;
    return 0.5 * (1.0 + std::cos(kPi * (y_radial - start) / taper_width));
}

double RegularizationFilter::amplification_bound(const DetectorModel& model,
                                                 const FieldScale& scale) const {
    return std::exp(0.5 * sqr(y_cut) * model.noise_variance(scale));
}

void RegularizationFilter::validate() const {
    if (!(y_cut > 0.0)) throw ValidationError("RegularizationFilter: y_cut must be > 0");
    if (taper_width < 0.0 || taper_width > y_cut)
        throw ValidationError("RegularizationFilter: taper width must lie in [0, y_cut]");
}

void QuadParams::validate() const {
    if (nodes_per_axis < 8)
        throw ValidationError("QuadParams: nodes_per_axis must be >= 8");
    if (!(amplification_ceiling > 1.0))
        throw ValidationError("QuadParams: amplification ceiling must exceed 1");
}

// ---------------------------------------------------------------------------
// sources

Eigen::MatrixXcd CharFnSource::mode_kernel(int, double, double) const {
    throw ComputeError("mode_kernel: source is not factorizable");
}

cplx AnalyticSource::eval(double z, std::span<const double> beta,
                          std::span<const double> psi) const {
    const std::vector<double> w = hyperspherical_weights_unchecked(beta);
    std::vector<double> zk(w.size());
    for (size_t k = 0; k < w.size(); ++k) zk[k] = z * w[k];
    return characteristic_function(*state_, zk, psi, scale_);
}

Eigen::MatrixXcd AnalyticSource::mode_kernel(int, double z, double psi) const {
    return displacement_matrix(state_->dim,
                               cplx(0.0, 1.0) * z * scale_.f_abs * std::polar(1.0, psi));
}

EmpiricalSource::EmpiricalSource(const SumFieldDataset& dataset) : dataset_(&dataset) {
    dataset.validate();
    if (dataset.n_modes != 2)
        throw ValidationError("EmpiricalSource: dataset reconstruction supports 2 modes");
    alpha_first_.resize(dataset.control.alphas.size());
    for (size_t i = 0; i < alpha_first_.size(); ++i)
        alpha_first_[i] = dataset.control.alphas[i][0];
}

cplx EmpiricalSource::eval_setting(size_t flat_setting, double z) const {
    const auto& rec = dataset_->records[flat_setting];
    const QuadratureGrid& g = dataset_->control.grid;
    cplx acc = 0.0;
    switch (dataset_->mode) {
        case DataMode::samples:
            for (double f : rec) acc += std::polar(1.0, z * f);
            return acc / double(rec.size());
        case DataMode::histogram:
            for (int i = 0; i < g.n_bins; ++i)
                if (rec[i] != 0.0) acc += rec[i] * std::polar(1.0, z * g.center(i));
            return acc / double(dataset_->samples_per_setting);
        case DataMode::analytic:
            for (int i = 0; i < g.n_bins; ++i)
                acc += rec[i] * std::polar(1.0, z * g.center(i));
            return acc * g.step();
    }
    return acc;
}

namespace {

// linear interpolation bracket along a sorted node list; clamps outside the
// hull (the wrap zone past the last phase node has no recorded setting)
struct Bracket {
    int lo = 0, hi = 0;
    double t = 0.0;     // weight of hi
    bool clamped = false;
};

Bracket bracket_clamped(const std::vector<double>& nodes, double x) {
    Bracket b;
    const int n = static_cast<int>(nodes.size());
    if (n == 1 || x <= nodes.front()) {
        b.lo = b.hi = 0;
        b.clamped = x < nodes.front() - 1e-12;
        return b;
    }
    if (x >= nodes.back()) {
        b.lo = b.hi = n - 1;
        b.clamped = x > nodes.back() + 1e-12;
        return b;
    }
    int hi = static_cast<int>(std::upper_bound(nodes.begin(), nodes.end(), x) - nodes.begin());
    b.lo = hi - 1;
    b.hi = hi;
    b.t = (x - nodes[b.lo]) / (nodes[b.hi] - nodes[b.lo]);
    return b;
}

// wrap x into [base, base + period) before bracketing on a circular axis
double wrap_into(double x, double base, double period) {
    double r = std::fmod(x - base, period);
    if (r < 0.0) r += period;
    return base + r;
}

}  // namespace

namespace {

// expand a bracket into (index, weight) corner pairs
struct Corner {
    int idx;
    double w;
};

int corners_of(const Bracket& b, Corner out[2]) {
    if (b.lo == b.hi) {
        out[0] = {b.lo, 1.0};
        return 1;
    }
    out[0] = {b.lo, 1.0 - b.t};
    out[1] = {b.hi, b.t};
    return 2;
}

}  // namespace

cplx EmpiricalSource::eval(double z, std::span<const double> beta,
                           std::span<const double> psi) const {
    const ControlGrid& c = dataset_->control;
    const Bracket ba = bracket_clamped(alpha_first_, beta[0]);
    if (ba.clamped) clamped_.store(true, std::memory_order_relaxed);
    Corner ac[2];
    const int na = corners_of(ba, ac);

    // circular clamp past the covered end of a phase-like axis
    const auto clamp_circular = [&](const std::vector<double>& nodes, double x) {
        x = wrap_into(x, nodes.front(), 2.0 * kPi);
        if (x > nodes.back()) {
            const double d_hi = x - nodes.back();
            const double d_lo = 2.0 * kPi - (x - nodes.front());
            x = (d_hi <= d_lo) ? nodes.back() : nodes.front();
            if (std::min(d_hi, d_lo) > 1e-12) clamped_.store(true, std::memory_order_relaxed);
        }
        return x;
    };

    int idx[2];
    cplx acc = 0.0;

    if (c.delta_psi_layout) {
        // already psi_1-averaged: interpolate in (alpha, delta psi) and
        // average the estimator over the full-circle psi_1 grid
        const auto& dnodes = c.psi_values[1];
        const Bracket bd = bracket_clamped(dnodes, clamp_circular(dnodes, psi[1] - psi[0]));
        Corner dc[2];
        const int nd = corners_of(bd, dc);
        const size_t n_psi1 = c.psi_values[0].size();
        for (int i = 0; i < na; ++i)
            for (int j = 0; j < nd; ++j) {
                if (ac[i].w == 0.0 || dc[j].w == 0.0) continue;
                cplx sum = 0.0;
                for (size_t p1 = 0; p1 < n_psi1; ++p1) {
                    idx[0] = static_cast<int>(p1);
                    idx[1] = dc[j].idx;
                    sum += eval_setting(c.flatten(ac[i].idx, idx), z);
                }
                acc += ac[i].w * dc[j].w * sum / double(n_psi1);
            }
        return acc;
    }

    // standard layout: multilinear over (alpha, psi_1, psi_2)
    Bracket bp0 = bracket_clamped(c.psi_values[0], clamp_circular(c.psi_values[0], psi[0]));
    Bracket bp1 = bracket_clamped(c.psi_values[1], clamp_circular(c.psi_values[1], psi[1]));
    Corner p0[2], p1[2];
    const int n0 = corners_of(bp0, p0), n1 = corners_of(bp1, p1);
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < n0; ++j)
            for (int k = 0; k < n1; ++k) {
                const double w = ac[i].w * p0[j].w * p1[k].w;
                if (w == 0.0) continue;
                idx[0] = p0[j].idx;
                idx[1] = p1[k].idx;
                acc += w * eval_setting(c.flatten(ac[i].idx, idx), z);
            }
    return acc;
}

JointFTSource::JointFTSource(const DensityOperatorFock& state, const FieldScale& scale,
                             const QuadratureGrid& inner_grid)
    : state_(&state), scale_(scale), inner_grid_(inner_grid) {
    inner_grid.validate();
    wf_table_ = fstomo::detail::wavefunction_table(inner_grid, state.dim, scale);
}

Eigen::MatrixXcd JointFTSource::mode_kernel(int, double z, double psi) const {
    const int dim = state_->dim;
    const int nb = inner_grid_.n_bins;
    const double d = inner_grid_.step();
    // T(a,b) = sum_g df e^{i z F_g} u_a(F_g) u_b(F_g); kernel K(b,a) = T(a,b) e^{i(b-a)psi}
    Eigen::MatrixXcd T = Eigen::MatrixXcd::Zero(dim, dim);
    for (int g = 0; g < nb; ++g) {
        const cplx ph = std::polar(d, z * inner_grid_.center(g));
        const double* u = wf_table_.data() + static_cast<size_t>(g) * dim;
        for (int a = 0; a < dim; ++a)
            for (int b = a; b < dim; ++b) T(a, b) += ph * (u[a] * u[b]);
    }
    Eigen::MatrixXcd K(dim, dim);
    for (int a = 0; a < dim; ++a)
        for (int b = 0; b < dim; ++b) {
            const cplx t = (a <= b) ? T(a, b) : T(b, a);
            K(b, a) = t * std::polar(1.0, (b - a) * psi);
        }
    return K;
}

cplx JointFTSource::eval(double z, std::span<const double> beta,
                         std::span<const double> psi) const {
    const std::vector<double> w = hyperspherical_weights_unchecked(beta);
    std::vector<Eigen::MatrixXcd> kernels(n_modes());
    for (int k = 0; k < n_modes(); ++k) kernels[k] = mode_kernel(k, z * w[k], psi[k]);
    return contract_mode_kernels(*state_, kernels);
}

// ---------------------------------------------------------------------------
// reconstruction pipeline

namespace {

struct PipelineConfig {
    int n_modes;
    Axis axis;
    RegularizationFilter filter;
    double compensation_var;  // |F|^2 (1-eta)/eta, 0 when eta = 1
    FieldScale scale;
};

RegularizationFilter effective_filter(const std::optional<RegularizationFilter>& filter,
                                      const DetectorModel& model,
                                      const QuadParams& quad,
                                      const FieldScale& scale,
                                      double* bound_out) {
    model.validate();
    quad.validate();
    if (model.eta < 1.0 && !filter.has_value())
        throw ComputeError(
            "reconstruction: eta < 1 requires a regularization filter (set a y_cut)");
    RegularizationFilter f = filter.value_or(RegularizationFilter{8.0 / scale.f_abs, 0.0});
    f.validate();
    const double bound = f.amplification_bound(model, scale);
    if (bound > quad.amplification_ceiling)
        throw ComputeError(
            "reconstruction: amplification bound " + std::to_string(bound) +
            " exceeds the ceiling " + std::to_string(quad.amplification_ceiling) +
            "; use a smaller y_cut or a larger eta");
    if (bound_out) *bound_out = bound;
    return f;
}

// weight applied pointwise on the y-grid: trapezoid weights, radial cutoff,
// efficiency compensation and the source's own radial factor
double node_weight(const PipelineConfig& cfg, const CharFnSource& source,
                   double trap_weight, double y_radial) {
    const double att = cfg.filter.attenuation(y_radial);
    if (att == 0.0) return 0.0;
    double w = trap_weight * att * source.radial_factor(y_radial);
    if (cfg.compensation_var > 0.0)
        w *= std::exp(0.5 * sqr(y_radial) * cfg.compensation_var);
    return w;
}

// Psi on the tensor y-grid for one offset tuple, factorized sources:
// contract the permuted density tensor axis by axis with per-mode kernels.
void psi_grid_factorized(const PipelineConfig& cfg, const CharFnSource& source,
                         std::span<const double> v, std::span<const double> phases,
                         std::vector<cplx>& out) {
    const DensityOperatorFock& state = *source.state();
    const int N = cfg.n_modes, dim = state.dim, ny = cfg.axis.count;
    const int d2 = dim * dim;
    const size_t D = state.total_dim();

    // permuted flat density tensor [(a1 b1), (a2 b2), ..., (aN bN)], a slow
    std::vector<cplx> tensor(ipow(static_cast<size_t>(d2), N));
    {
        std::vector<int> da(N), db(N);
        for (size_t a = 0; a < D; ++a) {
            fstomo::detail::unflatten(a, N, dim, da.data());
            for (size_t b = 0; b < D; ++b) {
                fstomo::detail::unflatten(b, N, dim, db.data());
                size_t idx = 0;
                for (int k = 0; k < N; ++k)
                    idx = idx * d2 + static_cast<size_t>(da[k]) * dim + db[k];
                tensor[idx] = state.rho(a, b);
            }
        }
    }

    // per-mode kernel rows over the y nodes: Kmat(j, a*dim+b) = K(b, a)
    std::vector<MatrixRM> kmats(N);
    const double f2 = sqr(cfg.scale.f_abs);
    for (int k = 0; k < N; ++k) {
        kmats[k].resize(ny, d2);
        for (int j = 0; j < ny; ++j) {
            const double y = cfg.axis.node(j);
            const double voff = v[k] / f2;
            const double z = std::hypot(y, voff);
            double psi;
            if (v[k] == 0.0)
                psi = (y >= 0.0) ? phases[k] : phases[k] - kPi;
            else
                psi = phases[k] + std::atan2(-voff, y);
            const Eigen::MatrixXcd K = source.mode_kernel(k, z, psi);
            for (int a = 0; a < dim; ++a)
                for (int b = 0; b < dim; ++b) kmats[k](j, a * dim + b) = K(b, a);
        }
    }

    // successive contractions: C_k has shape (ny^k) x (d2^(N-k))
    std::vector<cplx> cur = std::move(tensor);
    size_t lead = 1;
    for (int k = 0; k < N; ++k) {
        const size_t trail = ipow(static_cast<size_t>(d2), N - k - 1);
        std::vector<cplx> next(lead * static_cast<size_t>(ny) * trail);
        for (size_t r = 0; r < lead; ++r) {
            Eigen::Map<const MatrixRM> block(cur.data() + r * d2 * trail,
                                             d2, static_cast<Eigen::Index>(trail));
            Eigen::Map<MatrixRM> dst(next.data() + r * ny * trail,
                                     ny, static_cast<Eigen::Index>(trail));
            dst.noalias() = kmats[k] * block;
        }
        cur = std::move(next);
        lead *= static_cast<size_t>(ny);
    }
    out = std::move(cur);  // ny^N values, j1 slowest
}

// Psi on the tensor y-grid, generic (non-factorizable) sources
void psi_grid_generic(const PipelineConfig& cfg, const CharFnSource& source,
                      std::span<const double> v, std::span<const double> phases,
                      std::vector<cplx>& out) {
    const int N = cfg.n_modes, ny = cfg.axis.count;
    const double f2 = sqr(cfg.scale.f_abs);

    // per-axis tables
    std::vector<double> z2(static_cast<size_t>(N) * ny), psit(static_cast<size_t>(N) * ny);
    for (int k = 0; k < N; ++k)
        for (int j = 0; j < ny; ++j) {
            const double y = cfg.axis.node(j);
            const double voff = v[k] / f2;
            z2[k * ny + j] = y * y + voff * voff;
            if (v[k] == 0.0)
                psit[k * ny + j] = (y >= 0.0) ? phases[k] : phases[k] - kPi;
            else
                psit[k * ny + j] = phases[k] + std::atan2(-voff, y);
        }

    const size_t total = ipow(static_cast<size_t>(ny), N);
    out.assign(total, cplx(0.0));
    std::vector<int> jk(N);
    std::vector<double> beta(N - 1), psi(N), zk(N);
    for (size_t flat = 0; flat < total; ++flat) {
        size_t rem = flat;
        for (int k = N - 1; k >= 0; --k) {
            jk[k] = static_cast<int>(rem % ny);
            rem /= ny;
        }
        double sum2 = 0.0;
        for (int k = 0; k < N; ++k) {
            zk[k] = std::sqrt(z2[k * ny + jk[k]]);
            psi[k] = psit[k * ny + jk[k]];
            sum2 += z2[k * ny + jk[k]];
        }
        const double z_rad = std::sqrt(sum2);
        if (cfg.filter.attenuation(z_rad) == 0.0) continue;  // outside the cut
        double tail2 = sum2;
        for (int k = 0; k + 1 < N; ++k) {
            tail2 -= sqr(zk[k]);
            beta[k] = std::atan2(std::sqrt(std::max(tail2, 0.0)), zk[k]);
        }
        out[flat] = source.eval(z_rad, beta, psi);
        // the generic eval already includes the source's radial factor;
        // divide it back out so the shared node_weight applies it once
        const double rf = source.radial_factor(z_rad);
        if (rf != 1.0 && rf != 0.0) out[flat] /= rf;
    }
}

// multiply Psi grid by node weights in place
void apply_node_weights(const PipelineConfig& cfg, const CharFnSource& source,
                        std::span<const double> v, std::vector<cplx>& grid) {
    const int N = cfg.n_modes, ny = cfg.axis.count;
    const double f2 = sqr(cfg.scale.f_abs);
    std::vector<double> z2(static_cast<size_t>(N) * ny), tw(static_cast<size_t>(N) * ny);
    for (int k = 0; k < N; ++k)
        for (int j = 0; j < ny; ++j) {
            const double y = cfg.axis.node(j);
            z2[k * ny + j] = y * y + sqr(v[k] / f2);
            tw[k * ny + j] = cfg.axis.weight(j);
        }
    std::vector<int> jk(N);
    const size_t total = grid.size();
    for (size_t flat = 0; flat < total; ++flat) {
        size_t rem = flat;
        double sum2 = 0.0, trap = 1.0;
        for (int k = N - 1; k >= 0; --k) {
            const int j = static_cast<int>(rem % ny);
            rem /= ny;
            sum2 += z2[k * ny + j];
            trap *= tw[k * ny + j];
        }
        grid[flat] *= node_weight(cfg, source, trap, std::sqrt(sum2));
    }
}

// contract the weighted Psi grid with e^{-i y_j F_c} axis by axis
void assemble_centers(const PipelineConfig& cfg, const std::vector<cplx>& psi_grid,
                      const MatrixRM& e_matrix, std::vector<cplx>& out) {
    const int N = cfg.n_modes, ny = cfg.axis.count;
    const int nc = static_cast<int>(e_matrix.rows());
    std::vector<cplx> cur(psi_grid.begin(), psi_grid.end());
    size_t lead = 1, trail = ipow(static_cast<size_t>(ny), N - 1);
    for (int k = 0; k < N; ++k) {
        std::vector<cplx> next(lead * static_cast<size_t>(nc) * trail);
        for (size_t r = 0; r < lead; ++r) {
            Eigen::Map<const MatrixRM> block(cur.data() + r * ny * trail,
                                             ny, static_cast<Eigen::Index>(trail));
            Eigen::Map<MatrixRM> dst(next.data() + r * nc * trail,
                                     nc, static_cast<Eigen::Index>(trail));
            dst.noalias() = e_matrix * block;
        }
        cur = std::move(next);
        lead *= static_cast<size_t>(nc);
        trail = (k + 1 < N) ? trail / static_cast<size_t>(ny) : trail;
    }
    const double norm = std::pow(1.0 / (2.0 * kPi), N);
    out.resize(cur.size());
    for (size_t i = 0; i < cur.size(); ++i) out[i] = cur[i] * norm;
}

// offset tuple classification: direct representatives have a lexicographically
// nonnegative value tuple (first nonzero component positive)
bool is_representative(std::span<const double> v) {
    for (double x : v) {
        if (x > 0.0) return true;
        if (x < 0.0) return false;
    }
    return true;  // all zero
}

struct WeightedSource {
    const CharFnSource* source;
    double weight;
};

FsDensityMatrix run_pipeline(const std::vector<WeightedSource>& sources,
                             std::span<const double> center_values,
                             std::span<const double> offset_values,
                             std::span<const double> phases,
                             const DetectorModel& model,
                             const std::optional<RegularizationFilter>& filter,
                             const QuadParams& quad,
                             const FieldScale& scale) {
    const CharFnSource& lead_source = *sources.front().source;
    const int N = lead_source.n_modes();
    if (static_cast<int>(phases.size()) != N)
        throw ValidationError("reconstruct_grid: one reference phase per mode required");
    scale.validate();

    FsDensityMatrix out;
    out.n_modes = N;
    out.scale = scale;
    out.phases.assign(phases.begin(), phases.end());
    out.center_values.assign(center_values.begin(), center_values.end());
    out.offset_values.assign(offset_values.begin(), offset_values.end());
    out.elements.assign(out.centers_total() * out.offsets_total(), cplx(0.0));
    out.validate_layout();

    double bound = 1.0;
    PipelineConfig cfg;
    cfg.n_modes = N;
    cfg.filter = effective_filter(filter, model, quad, scale, &bound);
    cfg.axis = Axis{cfg.filter.y_cut, quad.nodes_per_axis};
    cfg.compensation_var = (model.eta < 1.0) ? model.noise_variance(scale) : 0.0;
    cfg.scale = scale;

    // e^{-i y_j F_c} is shared by every offset tuple
    const int nc = static_cast<int>(out.n_center());
    MatrixRM e_matrix(nc, cfg.axis.count);
    for (int c = 0; c < nc; ++c)
        for (int j = 0; j < cfg.axis.count; ++j)
            e_matrix(c, j) = std::polar(1.0, -cfg.axis.node(j) * out.center_values[c]);

    const size_t no = out.offsets_total();
    const size_t n_off_vals = out.n_offset();
    std::vector<int> mirror_of(n_off_vals);
    for (size_t i = 0; i < n_off_vals; ++i)
        mirror_of[i] = out.mirror_offset_index(static_cast<int>(i));

    std::vector<size_t> reps;
    for (size_t o = 0; o < no; ++o) {
        std::vector<int> oi(N);
        size_t rem = o;
        for (int k = N - 1; k >= 0; --k) {
            oi[k] = static_cast<int>(rem % n_off_vals);
            rem /= n_off_vals;
        }
        std::vector<double> v(N);
        for (int k = 0; k < N; ++k) v[k] = out.offset_values[oi[k]];
        if (is_representative(v)) reps.push_back(o);
    }

    parallel_for(reps.size(), [&](size_t ri) {
        const size_t o = reps[ri];
        std::vector<int> oi(N);
        size_t rem = o;
        for (int k = N - 1; k >= 0; --k) {
            oi[k] = static_cast<int>(rem % n_off_vals);
            rem /= n_off_vals;
        }
        std::vector<double> v(N);
        size_t o_mirror = 0;
        for (int k = 0; k < N; ++k) {
            v[k] = out.offset_values[oi[k]];
            o_mirror = o_mirror * n_off_vals + static_cast<size_t>(mirror_of[oi[k]]);
        }

        std::vector<cplx> psi_grid, tmp;
        for (const WeightedSource& ws : sources) {
            std::vector<cplx>& dst = (&ws == &sources.front()) ? psi_grid : tmp;
            if (ws.source->factorizable() && ws.source->state())
                psi_grid_factorized(cfg, *ws.source, v, phases, dst);
            else
                psi_grid_generic(cfg, *ws.source, v, phases, dst);
            if (&ws == &sources.front()) {
                if (ws.weight != 1.0)
                    for (cplx& x : psi_grid) x *= ws.weight;
            } else {
                for (size_t i = 0; i < psi_grid.size(); ++i)
                    psi_grid[i] += ws.weight * tmp[i];
            }
        }
        apply_node_weights(cfg, lead_source, v, psi_grid);

        std::vector<cplx> vals;
        assemble_centers(cfg, psi_grid, e_matrix, vals);

        const size_t ncN = out.centers_total();
        for (size_t c = 0; c < ncN; ++c) {
            out.elements[c * no + o] = vals[c];
            if (o_mirror != o) out.elements[c * no + o_mirror] = std::conj(vals[c]);
        }
    });

    out.prov.source = lead_source.name();
    out.prov.eta = model.eta;
    out.prov.filter_y_cut = cfg.filter.y_cut;
    out.prov.filter_taper_width = cfg.filter.taper_width;
    out.prov.amplification_bound = bound;
    out.prov.quad_nodes_per_axis = quad.nodes_per_axis;
    out.prov.transform_stages = lead_source.transform_stages();
    out.prov.control_clamped = lead_source.clamped();
    out.res = compute_residuals(out);
    return out;
}

}  // namespace

cplx reconstruct_element(const CharFnSource& source,
                         const FsMatrixPoint& point,
                         const DetectorModel& model,
                         const std::optional<RegularizationFilter>& filter,
                         const QuadParams& quad,
                         const FieldScale& scale,
                         double* amplification) {
    point.validate();
    const int N = source.n_modes();
    if (static_cast<int>(point.f_center.size()) != N)
        throw ValidationError("reconstruct_element: point dimension mismatch");
    for (double v : point.f_offset)
        if (v < 0.0)
            throw ValidationError("reconstruct_element: offsets must be >= 0 "
                                  "(resolve negative offsets through Hermiticity)");

    double bound = 1.0;
    PipelineConfig cfg;
    cfg.n_modes = N;
    cfg.filter = effective_filter(filter, model, quad, scale, &bound);
    cfg.axis = Axis{cfg.filter.y_cut, quad.nodes_per_axis};
    cfg.compensation_var = (model.eta < 1.0) ? model.noise_variance(scale) : 0.0;
    cfg.scale = scale;
    if (amplification) *amplification = bound;

    const int ny = cfg.axis.count;
    const size_t total = ipow(static_cast<size_t>(ny), N);
    std::vector<int> jk(N);
    std::vector<double> y(N);
    cplx acc = 0.0;
    for (size_t flat = 0; flat < total; ++flat) {
        size_t rem = flat;
        double trap = 1.0;
        for (int k = N - 1; k >= 0; --k) {
            jk[k] = static_cast<int>(rem % ny);
            rem /= ny;
            y[k] = cfg.axis.node(jk[k]);
            trap *= cfg.axis.weight(jk[k]);
        }
        const CoordinateMapResult cm =
            detail::coordinate_map_general(y, point.f_offset, point.phases, scale);
        const double att = cfg.filter.attenuation(cm.y_radial);
        if (att == 0.0) continue;
        double w = trap * att;
        if (cfg.compensation_var > 0.0)
            w *= std::exp(0.5 * sqr(cm.y_radial) * cfg.compensation_var);
        double arg = 0.0;
        for (int k = 0; k < N; ++k) arg -= y[k] * point.f_center[k];
        acc += w * std::polar(1.0, arg) * source.eval(cm.y_radial, cm.beta, cm.psi);
    }
    return acc * std::pow(1.0 / (2.0 * kPi), N);
}

FsDensityMatrix reconstruct_grid(const CharFnSource& source,
                                 std::span<const double> center_values,
                                 std::span<const double> offset_values,
                                 std::span<const double> phases,
                                 const DetectorModel& model,
                                 const std::optional<RegularizationFilter>& filter,
                                 const QuadParams& quad,
                                 const FieldScale& scale) {
    return run_pipeline({{&source, 1.0}}, center_values, offset_values, phases, model,
                        filter, quad, scale);
}

FsDensityMatrix reconstruct_from_joint(const DensityOperatorFock& state,
                                       const QuadratureGrid& inner_grid,
                                       std::span<const double> center_values,
                                       std::span<const double> offset_values,
                                       std::span<const double> phases,
                                       const QuadParams& quad,
                                       const FieldScale& scale) {
    JointFTSource source(state, scale, inner_grid);
    return reconstruct_grid(source, center_values, offset_values, phases, DetectorModel{1.0},
                            std::nullopt, quad, scale);
}

FsDensityMatrix average_phase_rotations(
    int k_points, const std::function<FsDensityMatrix(double delta)>& producer) {
    if (k_points < 16)
        throw ValidationError("phase average: need >= 16 points on the 2 pi grid");
    FsDensityMatrix avg = producer(0.0);
    for (int j = 1; j < k_points; ++j) {
        const FsDensityMatrix m = producer(2.0 * kPi * j / k_points);
        if (m.elements.size() != avg.elements.size())
            throw ComputeError("phase average: inconsistent grids across rotations");
        for (size_t i = 0; i < avg.elements.size(); ++i) avg.elements[i] += m.elements[i];
    }
    const double inv = 1.0 / k_points;
    for (cplx& x : avg.elements) x *= inv;
    avg.prov.phase_averaged = true;
    avg.prov.phase_average_points = k_points;
    avg.res = compute_residuals(avg);
    return avg;
}

FsDensityMatrix phase_averaged_reconstruct(const CharFnSource& source,
                                           std::span<const double> center_values,
                                           std::span<const double> offset_values,
                                           std::span<const double> phases,
                                           const DetectorModel& model,
                                           const std::optional<RegularizationFilter>& filter,
                                           const QuadParams& quad,
                                           const FieldScale& scale,
                                           int k_points,
                                           PhaseAverageMethod method) {
    if (const auto* emp = dynamic_cast<const EmpiricalSource*>(&source)) {
        (void)emp;
        // delta-psi datasets are already psi_1-averaged by the estimator
        FsDensityMatrix out = reconstruct_grid(source, center_values, offset_values, phases,
                                               model, filter, quad, scale);
        out.prov.phase_averaged = true;
        out.prov.phase_average_method = "distributions";
        return out;
    }
    if (!dynamic_cast<const AnalyticSource*>(&source))
        throw ValidationError("phase_averaged_reconstruct: supported sources are analytic "
                              "states and delta-psi empirical datasets");
    const DensityOperatorFock* state = source.state();

    if (method == PhaseAverageMethod::matrices) {
        std::vector<double> c(center_values.begin(), center_values.end());
        std::vector<double> o(offset_values.begin(), offset_values.end());
        std::vector<double> p(phases.begin(), phases.end());
        FsDensityMatrix out = average_phase_rotations(k_points, [&](double delta) {
            const DensityOperatorFock rotated = rotate_state(*state, delta);
            AnalyticSource rotated_source(rotated, scale);
            return reconstruct_grid(rotated_source, c, o, p, model, filter, quad, scale);
        });
        out.prov.phase_average_method = "matrices";
        return out;
    }

    // distributions: average the characteristic-function grids before the
    // outer integrals (equal to the matrices method in exact arithmetic)
    std::vector<DensityOperatorFock> rotated;
    rotated.reserve(k_points);
    std::vector<std::unique_ptr<AnalyticSource>> rotated_sources;
    std::vector<WeightedSource> weighted;
    for (int j = 0; j < k_points; ++j) {
        rotated.push_back(rotate_state(*state, 2.0 * kPi * j / k_points));
    }
    for (int j = 0; j < k_points; ++j) {
        rotated_sources.push_back(std::make_unique<AnalyticSource>(rotated[j], scale));
        weighted.push_back({rotated_sources.back().get(), 1.0 / k_points});
    }
    FsDensityMatrix out = run_pipeline(weighted, center_values, offset_values, phases,
                                       model, filter, quad, scale);
    out.prov.phase_averaged = true;
    out.prov.phase_average_points = k_points;
    out.prov.phase_average_method = "distributions";
    out.res = compute_residuals(out);
    return out;
}

}  // namespace fstomo
