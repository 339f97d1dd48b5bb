#include "fstomo/density_matrix.hpp"

#include <algorithm>
#include <cmath>

#include "fstomo/quadrature.hpp"
#include "fstomo/threading.hpp"

namespace fstomo {

namespace {

size_t ipow(size_t b, int e) {
    size_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

void unflatten_multi(size_t flat, int n_modes, size_t base, int* idx) {
    for (int k = n_modes - 1; k >= 0; --k) {
        idx[k] = static_cast<int>(flat % base);
        flat /= base;
    }
}

double grid_step(const std::vector<double>& v) {
    return v.size() > 1 ? v[1] - v[0] : 1.0;
}

}  // namespace

size_t FsDensityMatrix::centers_total() const { return ipow(n_center(), n_modes); }
size_t FsDensityMatrix::offsets_total() const { return ipow(n_offset(), n_modes); }

size_t FsDensityMatrix::flat_index(std::span<const int> c_idx,
                                   std::span<const int> o_idx) const {
    size_t c = 0, o = 0;
    for (int k = 0; k < n_modes; ++k) c = c * n_center() + static_cast<size_t>(c_idx[k]);
    for (int k = 0; k < n_modes; ++k) o = o * n_offset() + static_cast<size_t>(o_idx[k]);
    return c * offsets_total() + o;
}

void FsDensityMatrix::validate_layout() const {
    if (n_modes < 1) throw ValidationError("FsDensityMatrix: n_modes must be >= 1");
    if (static_cast<int>(phases.size()) != n_modes)
        throw ValidationError("FsDensityMatrix: one phase per mode required");
    if (center_values.empty() || offset_values.empty())
        throw ValidationError("FsDensityMatrix: empty grid");
    if (elements.size() != centers_total() * offsets_total())
        throw ValidationError("FsDensityMatrix: element count does not match the grid");
    for (size_t i = 0; i + 1 < center_values.size(); ++i)
        if (!(center_values[i] < center_values[i + 1]))
            throw ValidationError("FsDensityMatrix: center grid must be strictly increasing");
    for (size_t i = 0; i < offset_values.size(); ++i)
        if (mirror_offset_index(static_cast<int>(i)) < 0)
            throw ValidationError("FsDensityMatrix: offset grid must be symmetric about 0");
}

int FsDensityMatrix::mirror_offset_index(int i) const {
    const double target = -offset_values[static_cast<size_t>(i)];
    for (size_t j = 0; j < offset_values.size(); ++j)
        if (std::abs(offset_values[j] - target) <= 1e-12) return static_cast<int>(j);
    return -1;
}

FsResiduals compute_residuals(const FsDensityMatrix& m) {
    FsResiduals r;
    const size_t nc = m.centers_total(), no = m.offsets_total();
    const int N = m.n_modes;
    const size_t n_off = m.n_offset();

    // mirror of a flat offset multi-index (negate every component)
    std::vector<int> idx(N), mirror(N);
    std::vector<int> mirror_of(m.n_offset());
    for (size_t i = 0; i < n_off; ++i) mirror_of[i] = m.mirror_offset_index(static_cast<int>(i));

    // diagonal slice index (all offsets at value 0), if present
    int zero_idx = -1;
    for (size_t i = 0; i < n_off; ++i)
        if (m.offset_values[i] == 0.0) zero_idx = static_cast<int>(i);

    double herm = 0.0, max_imag = 0.0, min_real = 0.0, norm = 0.0;
    for (size_t o = 0; o < no; ++o) {
        unflatten_multi(o, N, n_off, idx.data());
        size_t om = 0;
        for (int k = 0; k < N; ++k) om = om * n_off + static_cast<size_t>(mirror_of[idx[k]]);
        const bool is_diag =
            zero_idx >= 0 &&
            std::all_of(idx.begin(), idx.end(), [&](int v) { return v == zero_idx; });
        for (size_t c = 0; c < nc; ++c) {
            const cplx a = m.elements[c * no + o];
            const cplx b = m.elements[c * no + om];
            // self-mirrored tuples are the diagonal slice; its imaginary part
            // is tracked separately
            if (om != o) herm = std::max(herm, std::abs(a - std::conj(b)));
            if (is_diag) {
                max_imag = std::max(max_imag, std::abs(a.imag()));
                min_real = std::min(min_real, a.real());
                norm += a.real();
            }
        }
    }
    r.hermiticity = herm;
    r.diag_max_imag = max_imag;
    r.diag_min_real = min_real;
    const double dc = grid_step(m.center_values);
    r.diag_norm = (zero_idx >= 0) ? norm * std::pow(dc, N) : 0.0;
    return r;
}

CompareMetrics compare_matrices(const FsDensityMatrix& a, const FsDensityMatrix& b) {
    a.validate_layout();
    b.validate_layout();
    if (a.n_modes != b.n_modes || a.center_values != b.center_values ||
        a.offset_values != b.offset_values || a.phases != b.phases ||
        a.scale.f_abs != b.scale.f_abs)
        throw ValidationError("compare_matrices: grids, phases or field scale differ");

    CompareMetrics m;
    double sum2 = 0.0;
    for (size_t i = 0; i < a.elements.size(); ++i) {
        const double d = std::abs(a.elements[i] - b.elements[i]);
        m.l_inf = std::max(m.l_inf, d);
        sum2 += d * d;
    }
    m.l2 = std::sqrt(sum2 / a.elements.size());
    const FsResiduals r = compute_residuals(a);
    m.hermiticity_residual_a = r.hermiticity;
    m.diag_negativity_a = r.diag_min_real;
    m.diag_norm_a = r.diag_norm;
    return m;
}

FsDensityMatrix oracle_grid(const DensityOperatorFock& state,
                            std::span<const double> center_values,
                            std::span<const double> offset_values,
                            std::span<const double> phases,
                            const FieldScale& scale) {
    FsDensityMatrix out;
    out.n_modes = state.n_modes;
    out.scale = scale;
    out.phases.assign(phases.begin(), phases.end());
    out.center_values.assign(center_values.begin(), center_values.end());
    out.offset_values.assign(offset_values.begin(), offset_values.end());
    out.elements.resize(out.centers_total() * out.offsets_total());
    out.prov.source = "oracle";
    out.prov.transform_stages = 0;
    out.validate_layout();

    const int N = state.n_modes;
    const size_t nc = out.centers_total(), no = out.offsets_total();
    parallel_for(nc, [&](size_t c) {
        std::vector<int> ci(N), oi(N);
        unflatten_multi(c, N, out.n_center(), ci.data());
        FsMatrixPoint p;
        p.f_center.resize(N);
        p.f_offset.resize(N);
        p.phases.assign(phases.begin(), phases.end());
        for (int k = 0; k < N; ++k) p.f_center[k] = out.center_values[ci[k]];
        for (size_t o = 0; o < no; ++o) {
            unflatten_multi(o, N, out.n_offset(), oi.data());
            for (int k = 0; k < N; ++k) p.f_offset[k] = out.offset_values[oi[k]];
            out.elements[c * no + o] = oracle_matrix_element(state, p, scale);
        }
    });
    out.res = compute_residuals(out);
    return out;
}

std::vector<double> fock_diagonal_projection(const FsDensityMatrix& m, int nmax) {
    m.validate_layout();
    const int N = m.n_modes;
    const double dc = grid_step(m.center_values), dv = grid_step(m.offset_values);
    const size_t nc = m.centers_total(), no = m.offsets_total();

    // per-mode u_n(center - offset), u_n(center + offset) tables
    const size_t n_cv = m.n_center(), n_ov = m.n_offset();
    std::vector<double> uminus(n_cv * n_ov * nmax), uplus(n_cv * n_ov * nmax);
    for (size_t c = 0; c < n_cv; ++c)
        for (size_t o = 0; o < n_ov; ++o) {
            quadrature_wavefunctions(nmax, m.center_values[c] - m.offset_values[o], m.scale,
                                     &uminus[(c * n_ov + o) * nmax]);
            quadrature_wavefunctions(nmax, m.center_values[c] + m.offset_values[o], m.scale,
                                     &uplus[(c * n_ov + o) * nmax]);
        }

    const size_t total = ipow(static_cast<size_t>(nmax), N);
    std::vector<double> diag(total, 0.0);
    std::vector<int> ci(N), oi(N), nidx(N);
    for (size_t t = 0; t < total; ++t) {
        unflatten_multi(t, N, static_cast<size_t>(nmax), nidx.data());
        cplx acc = 0.0;
        for (size_t c = 0; c < nc; ++c) {
            unflatten_multi(c, N, n_cv, ci.data());
            for (size_t o = 0; o < no; ++o) {
                unflatten_multi(o, N, n_ov, oi.data());
                double w = 1.0;
                for (int k = 0; k < N; ++k) {
                    const size_t cell = (static_cast<size_t>(ci[k]) * n_ov + oi[k]) * nmax;
                    w *= uminus[cell + nidx[k]] * uplus[cell + nidx[k]];
                }
                acc += w * m.elements[c * no + o];
            }
        }
        diag[t] = std::pow(2.0, N) * std::pow(dc * dv, N) * acc.real();
    }
    return diag;
}

}  // namespace fstomo
