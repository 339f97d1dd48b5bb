#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fstomo/density_matrix.hpp"
#include "fstomo/quadrature.hpp"
#include "oracles.hpp"

using namespace fstomo;

namespace {

const FieldScale kScale{};

DensityOperatorFock make_state(const char* kind, int dim = 16) {
    StateSpec s;
    s.n_modes = 2;
    s.truncation_dim = dim;
    const std::string k = kind;
    if (k == "vacuum")
        s.kind = spec::Vacuum{};
    else if (k == "coherent")
        s.kind = spec::Coherent{{cplx(1.0, 0.0), cplx(0.0, 0.0)}};
    else if (k == "coherent-complex")
        s.kind = spec::Coherent{{cplx(0.5, 0.6), cplx(-0.3, 0.4)}};
    else if (k == "fock10")
        s.kind = spec::FockProduct{{1, 0}};
    else if (k == "tmsv")
        s.kind = spec::TwoModeSqueezedVacuum{0, 1, 0.5};
    else
        REQUIRE(false);
    return build_state(s);
}

}  // namespace

TEST_CASE("wavefunction basics") {
    CHECK(quadrature_wavefunction(1, 0.0, kScale) == 0.0);  // odd parity
    CHECK(quadrature_wavefunction(0, 0.0, kScale) ==
          doctest::Approx(0.63161877774606470).epsilon(1e-14));
    CHECK_THROWS_AS(quadrature_wavefunction(300, 0.1, kScale), ValidationError);
    CHECK_THROWS_AS(quadrature_wavefunction(-1, 0.1, kScale), ValidationError);
}

TEST_CASE("wavefunction orthonormality by quadrature") {
    for (int n = 0; n <= 10; ++n) {
        for (int m = n; m <= 10; ++m) {
            const double got = oracles::integrate(
                [&](double f) {
                    return quadrature_wavefunction(n, f, kScale) *
                           quadrature_wavefunction(m, f, kScale);
                },
                -12.0, 12.0, 6001);
            CHECK(std::abs(got - (n == m ? 1.0 : 0.0)) < 1e-8);
        }
    }
}

TEST_CASE("wavefunction scale convention: vacuum variance is |F|^2") {
    const FieldScale s2{1.7};
    const double var = oracles::integrate(
        [&](double f) {
            const double u = quadrature_wavefunction(0, f, s2);
            return f * f * u * u;
        },
        -20.0, 20.0, 8001);
    CHECK(var == doctest::Approx(1.7 * 1.7).epsilon(1e-8));
}

TEST_CASE("joint distribution values") {
    const DensityOperatorFock vac = make_state("vacuum", 8);
    const double f0[2] = {0.0, 0.0}, psi[2] = {0.4, -0.8};
    CHECK(joint_distribution(vac, f0, psi, kScale) ==
          doctest::Approx(0.15915494309189535).epsilon(1e-12));

    // oracle: Fourier inversion of the vacuum characteristic function (Eq.-2
    // route, done with plain quadrature in test code)
    const double f1[2] = {0.7, -0.3};
    const double want = [&] {
        auto inv1 = [&](double x) {
            return oracles::integrate(
                       [&](double z) {
                           return std::real(std::polar(1.0, -z * x) *
                                            oracles::charfn_vacuum(z, 1.0));
                       },
                       -10.0, 10.0, 4001) /
                   (2.0 * oracles::kPi);
        };
        return inv1(f1[0]) * inv1(f1[1]);
    }();
    CHECK(joint_distribution(vac, f1, psi, kScale) == doctest::Approx(want).epsilon(1e-9));

    const DensityOperatorFock fock = make_state("fock10", 8);
    for (double f2 : {-1.0, 0.0, 2.0}) {
        const double f[2] = {0.0, f2};
        CHECK(std::abs(joint_distribution(fock, f, psi, kScale)) < 1e-14);  // u_1(0) = 0
    }
}

TEST_CASE("joint distribution: normalization and positivity") {
    for (const char* kind : {"vacuum", "coherent", "tmsv", "coherent-complex"}) {
        const DensityOperatorFock st = make_state(kind);
        const QuadratureGrid g = default_grid(st, kScale);
        const double psi[2] = {0.9, -0.4};
        double mass = 0.0;
        for (int i = 0; i < g.n_bins; ++i)
            for (int j = 0; j < g.n_bins; ++j) {
                const double f[2] = {g.center(i), g.center(j)};
                const double p = joint_distribution(st, f, psi, kScale);
                CHECK(p >= -1e-10);
                mass += p * g.step() * g.step();
            }
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("joint distribution matches the Eq.-2 inversion for a complex state") {
    // pins the eigenket phase convention: <F,psi|n> = u_n(F) e^{-i n psi}
    const DensityOperatorFock st = make_state("coherent-complex", 20);
    const double psi[2] = {0.9, -1.3};
    const double f[2] = {1.1, -0.4};
    auto inv1 = [&](cplx gamma, double x, double ps) {
        return oracles::integrate(
                   [&](double z) {
                       return std::real(std::polar(1.0, -z * x) *
                                        oracles::charfn_coherent(z, ps, gamma, 1.0));
                   },
                   -10.0, 10.0, 4001) /
               (2.0 * oracles::kPi);
    };
    const double want = inv1(cplx(0.5, 0.6), f[0], psi[0]) * inv1(cplx(-0.3, 0.4), f[1], psi[1]);
    CHECK(joint_distribution(st, f, psi, kScale) == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("sum distribution: vacuum value and route equivalence at a point") {
    const DensityOperatorFock vac = make_state("vacuum", 8);
    const double alpha[1] = {0.6}, psi[2] = {0.2, -1.0};
    const double got_f =
        sum_distribution_at(vac, alpha, psi, 0.0, kScale, SumRoute::fourier);
    const double got_p =
        sum_distribution_at(vac, alpha, psi, 0.0, kScale, SumRoute::projection);
    CHECK(got_f == doctest::Approx(0.39894228040143268).epsilon(1e-10));
    CHECK(got_p == doctest::Approx(0.39894228040143268).epsilon(1e-8));
}

TEST_CASE("sum distribution: alpha -> 0 limit is the mode-1 marginal") {
    const DensityOperatorFock st = make_state("coherent");
    const QuadratureGrid g{6.0, 64};
    const double alpha[1] = {1e-6}, psi[2] = {0.7, 0.1};
    const std::vector<double> ps =
        sum_distribution_exact(st, alpha, psi, g, kScale, SumRoute::fourier);
    for (int i = 0; i < g.n_bins; i += 7) {
        // marginal over mode 2 by quadrature of the joint distribution
        const double marginal = oracles::integrate(
            [&](double f2) {
                const double f[2] = {g.center(i), f2};
                return joint_distribution(st, f, psi, kScale);
            },
            -8.0, 8.0, 1601);
        CHECK(std::abs(ps[i] - marginal) < 1e-6);
    }
}

TEST_CASE("sum distribution mean: coherent scaling with alpha and psi") {
    const DensityOperatorFock st = make_state("coherent");
    const QuadratureGrid g{12.0, 96};
    for (double alpha : {0.35, 0.85}) {
        for (double psi1 : {0.0, 0.6, -2.2}) {
            const double a[1] = {alpha}, psi[2] = {psi1, 0.3};
            const std::vector<double> ps =
                sum_distribution_exact(st, a, psi, g, kScale, SumRoute::projection);
            const double mean = oracles::density_moment(ps, g.f_max, 1);
            CHECK(mean ==
                  doctest::Approx(2.0 * std::cos(alpha) * std::cos(psi1)).epsilon(1e-6));
        }
    }
}

TEST_CASE("route equivalence on random settings") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ua(0.05, 0.5 * kPi - 0.05), up(-kPi, 0.0);
    for (const char* kind : {"vacuum", "coherent", "fock10", "tmsv", "coherent-complex"}) {
        const DensityOperatorFock st = make_state(kind);
        const QuadratureGrid g{6.0, 64};
        for (int t = 0; t < 4; ++t) {
            const double a[1] = {ua(rng)};
            const double psi[2] = {up(rng), up(rng)};
            const std::vector<double> pf =
                sum_distribution_exact(st, a, psi, g, kScale, SumRoute::fourier);
            const std::vector<double> pp =
                sum_distribution_exact(st, a, psi, g, kScale, SumRoute::projection);
            double linf = 0.0;
            for (int i = 0; i < g.n_bins; ++i)
                linf = std::max(linf, std::abs(pf[i] - pp[i]));
            CAPTURE(kind);
            CHECK(linf < 1e-6);
        }
    }
}

TEST_CASE("sum distribution rejects grids that lose mass") {
    const DensityOperatorFock st = make_state("coherent");
    const QuadratureGrid tiny{2.0, 16};
    const double a[1] = {0.4}, psi[2] = {0.0, 0.0};
    CHECK_THROWS_WITH_AS(
        (void)sum_distribution_exact(st, a, psi, tiny, kScale, SumRoute::fourier),
        doctest::Contains("suggest f_max"), ComputeError);
}

TEST_CASE("parity: vacuum distributions are even") {
    const DensityOperatorFock vac = make_state("vacuum", 8);
    const QuadratureGrid g{6.0, 64};
    const double a[1] = {0.7}, psi[2] = {0.3, 0.9};
    const std::vector<double> ps =
        sum_distribution_exact(vac, a, psi, g, kScale, SumRoute::fourier);
    for (int i = 0; i < g.n_bins / 2; ++i)
        CHECK(std::abs(ps[i] - ps[g.n_bins - 1 - i]) < 1e-12);
}

TEST_CASE("oracle matrix element: values and symmetries") {
    const DensityOperatorFock vac = make_state("vacuum", 8);
    FsMatrixPoint p;
    p.f_center = {0.0, 0.0};
    p.f_offset = {0.0, 0.0};
    p.phases = {0.0, 0.0};
    CHECK(std::abs(oracle_matrix_element(vac, p, kScale) -
                   cplx(0.15915494309189535, 0.0)) < 1e-12);

    // Hermiticity: element(F, F') = conj(element(F, -F'))
    const DensityOperatorFock st = make_state("coherent-complex");
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> uf(-2.0, 2.0);
    for (int t = 0; t < 10; ++t) {
        FsMatrixPoint q;
        q.f_center = {uf(rng), uf(rng)};
        q.f_offset = {uf(rng), uf(rng)};
        q.phases = {0.4, -0.9};
        FsMatrixPoint qm = q;
        qm.f_offset = {-q.f_offset[0], -q.f_offset[1]};
        CHECK(std::abs(oracle_matrix_element(st, q, kScale) -
                       std::conj(oracle_matrix_element(st, qm, kScale))) < 1e-12);
    }
}

TEST_CASE("oracle matrix element: Fock(1,0) Hermite closed form") {
    const DensityOperatorFock st = make_state("fock10", 8);
    const double x = 1.0;
    FsMatrixPoint p;
    p.f_center = {0.0, 0.0};
    p.f_offset = {x, 0.0};
    p.phases = {0.0, 0.0};
    // u_1(-x) u_1(x) u_0(0)^2 with u_1(x) = x (2 pi)^{-1/4} e^{-x^2/4}
    const double u1 = x * std::pow(2.0 * oracles::kPi, -0.25) * std::exp(-x * x / 4.0);
    const double want = -u1 * u1 * std::pow(2.0 * oracles::kPi, -0.5);
    const cplx got = oracle_matrix_element(st, p, kScale);
    CHECK(got.real() == doctest::Approx(want).epsilon(1e-12));
    CHECK(std::abs(got.imag()) < 1e-15);
    CHECK(got.real() < 0.0);
}

TEST_CASE("oracle at zero offset equals the joint distribution") {
    const DensityOperatorFock st = make_state("coherent-complex");
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> uf(-2.5, 2.5), up(-kPi, kPi);
    for (int t = 0; t < 10; ++t) {
        FsMatrixPoint p;
        p.f_center = {uf(rng), uf(rng)};
        p.f_offset = {0.0, 0.0};
        p.phases = {up(rng), up(rng)};
        const cplx el = oracle_matrix_element(st, p, kScale);
        const double pj = joint_distribution(st, p.f_center, p.phases, kScale);
        CHECK(std::abs(el - cplx(pj, 0.0)) < 1e-10);
    }
}

TEST_CASE("compare_matrices metrics") {
    const DensityOperatorFock vac = make_state("vacuum", 8);
    std::vector<double> centers, offsets = {-1.0, 0.0, 1.0};
    for (int i = 0; i < 9; ++i) centers.push_back(-6.0 + 1.5 * i);
    const std::vector<double> phases = {0.0, 0.0};
    const FsDensityMatrix a = oracle_grid(vac, centers, offsets, phases, kScale);

    const CompareMetrics self = compare_matrices(a, a);
    CHECK(self.l_inf == 0.0);
    CHECK(self.l2 == 0.0);
    CHECK(self.hermiticity_residual_a < 1e-14);
    CHECK(self.diag_negativity_a >= -1e-12);
    CHECK(self.diag_norm_a == doctest::Approx(1.0).epsilon(1e-3));

    FsDensityMatrix b = a;
    b.elements[5] += 1e-3;
    CHECK(compare_matrices(a, b).l_inf == doctest::Approx(1e-3).epsilon(1e-12));

    FsDensityMatrix c = a;
    c.center_values[0] -= 0.5;
    CHECK_THROWS_AS((void)compare_matrices(a, c), ValidationError);
}

TEST_CASE("oracle grid of Fock(1,0) at phase zero is purely real") {
    const DensityOperatorFock fock = make_state("fock10", 8);
    std::vector<double> centers, offsets = {-1.0, 0.0, 1.0};
    for (int i = 0; i < 9; ++i) centers.push_back(-6.0 + 1.5 * i);
    const std::vector<double> phases = {0.0, 0.0};
    const FsDensityMatrix m = oracle_grid(fock, centers, offsets, phases, kScale);
    double max_imag = 0.0;
    for (const cplx& e : m.elements) max_imag = std::max(max_imag, std::abs(e.imag()));
    CHECK(max_imag <= 1e-12);
    CHECK(m.res.hermiticity <= 1e-15);  // exact symmetry of the direct expansion
}

TEST_CASE("fock projection diagnostic recovers leading occupations") {
    const DensityOperatorFock vac = make_state("vacuum", 8);
    std::vector<double> centers, offsets;
    for (int i = 0; i < 25; ++i) centers.push_back(-6.0 + 0.5 * i);
    for (int i = 0; i < 13; ++i) offsets.push_back(-3.0 + 0.5 * i);
    const std::vector<double> phases = {0.0, 0.0};
    const FsDensityMatrix m = oracle_grid(vac, centers, offsets, phases, kScale);
    const std::vector<double> diag = fock_diagonal_projection(m, 2);
    CHECK(diag[0] == doctest::Approx(1.0).epsilon(2e-2));  // vacuum occupation
    for (size_t i = 1; i < diag.size(); ++i) CHECK(std::abs(diag[i]) < 2e-2);
}
