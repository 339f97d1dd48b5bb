#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fstomo/measurement.hpp"
#include "fstomo/threading.hpp"
#include "oracles.hpp"

using namespace fstomo;

namespace {

const FieldScale kScale{};

DensityOperatorFock vacuum_state(int dim = 8) {
    StateSpec s;
    s.n_modes = 2;
    s.truncation_dim = dim;
    s.kind = spec::Vacuum{};
    return build_state(s);
}

DensityOperatorFock coherent_state() {
    StateSpec s;
    s.n_modes = 2;
    s.truncation_dim = 16;
    s.kind = spec::Coherent{{cplx(1.0, 0.0), cplx(0.0, 0.0)}};
    return build_state(s);
}

std::vector<double> vacuum_density(const QuadratureGrid& g) {
    const DensityOperatorFock vac = vacuum_state();
    const double a[1] = {0.5}, psi[2] = {0.0, 0.0};
    return sum_distribution_exact(vac, a, psi, g, kScale, SumRoute::fourier);
}

}  // namespace

TEST_CASE("apply_efficiency: eta = 1 is the identity") {
    const QuadratureGrid g{6.0, 64};
    const std::vector<double> p = vacuum_density(g);
    const std::vector<double> q = apply_efficiency(p, g, DetectorModel{1.0}, kScale);
    for (int i = 0; i < g.n_bins; ++i) CHECK(q[i] == p[i]);
}

TEST_CASE("apply_efficiency: variance grows by |F|^2 (1-eta)/eta") {
    const QuadratureGrid g{12.0, 256};  // wide grid so tails do not bias moments
    const std::vector<double> p = vacuum_density(g);
    for (double eta : {0.5, 0.9}) {
        const std::vector<double> q = apply_efficiency(p, g, DetectorModel{eta}, kScale);
        double mass = 0.0;
        for (double v : q) mass += v * g.step();
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-8));
        CHECK(oracles::density_moment(q, g.f_max, 1) ==
              doctest::Approx(oracles::density_moment(p, g.f_max, 1)).epsilon(1e-8));
        const double got_var = oracles::density_moment(q, g.f_max, 2);
        CHECK(got_var == doctest::Approx(1.0 + (1.0 - eta) / eta).epsilon(1e-6));
    }
}

TEST_CASE("apply_efficiency commutes with the mode mixing on vacuum") {
    // ordering A: mix (exact p_s), then degrade the sum-field distribution
    const QuadratureGrid g{12.0, 256};
    const double eta = 0.7;
    const std::vector<double> a =
        apply_efficiency(vacuum_density(g), g, DetectorModel{eta}, kScale);
    const double var_a = oracles::density_moment(a, g.f_max, 2);

    // ordering B in test code: degrade each mode's vacuum Gaussian first, then
    // mix; with sum w_k^2 = 1 the mixed variance is again the per-mode one
    const double per_mode_var = 1.0 + (1.0 - eta) / eta;
    const double var_b = oracles::integrate(
        [&](double x) {
            return x * x * std::exp(-x * x / (2.0 * per_mode_var)) /
                   std::sqrt(2.0 * oracles::kPi * per_mode_var);
        },
        -16.0, 16.0, 6001);
    CHECK(var_a == doctest::Approx(1.0 / eta).epsilon(1e-8));
    CHECK(var_b == doctest::Approx(1.0 / eta).epsilon(1e-8));
    CHECK(var_a == doctest::Approx(var_b).epsilon(1e-8));
}

TEST_CASE("sample_setting: deterministic, mean within CLT bounds") {
    const QuadratureGrid g{6.0, 64};
    const DensityOperatorFock vac = vacuum_state();
    const double a[1] = {0.8}, psi[2] = {0.1, -0.7};
    const int m = 100000;
    const std::vector<double> s1 =
        sample_setting(vac, a, psi, m, DetectorModel{1.0}, 42, g, kScale);
    const std::vector<double> s2 =
        sample_setting(vac, a, psi, m, DetectorModel{1.0}, 42, g, kScale);
    CHECK(s1 == s2);  // bitwise determinism

    CHECK(std::abs(oracles::mean_of(s1)) <= 0.02);  // 5 sigma at sigma_mean ~ 0.0032
    CHECK(oracles::variance_of(s1) == doctest::Approx(1.0).epsilon(0.03));

    const std::vector<double> s3 =
        sample_setting(vac, a, psi, m, DetectorModel{1.0}, 43, g, kScale);
    CHECK(s1 != s3);
}

TEST_CASE("sample_setting: coherent mean tracks the field mean") {
    const QuadratureGrid g{12.0, 96};
    const DensityOperatorFock coh = coherent_state();
    const double a[1] = {0.25 * kPi}, psi[2] = {0.0, 0.0};
    const int m = 100000;
    const std::vector<double> s =
        sample_setting(coh, a, psi, m, DetectorModel{1.0}, 7, g, kScale);
    // mean = 2 cos(pi/4) = sqrt(2), sigma_mean = 1/sqrt(M)
    CHECK(std::abs(oracles::mean_of(s) - std::sqrt(2.0)) < 5.0 / std::sqrt(double(m)));
}

TEST_CASE("Kolmogorov-Smirnov against the analytic CDF (vacuum)") {
    const QuadratureGrid g{8.0, 64};
    const DensityOperatorFock vac = vacuum_state();
    const double a[1] = {0.6}, psi[2] = {0.4, 0.2};
    const int m = 40000;
    for (double eta : {1.0, 0.8}) {
        const std::vector<double> s =
            sample_setting(vac, a, psi, m, DetectorModel{eta}, 11, g, kScale);
        const double var = 1.0 / eta;
        const double d = oracles::ks_distance(
            s, [&](double x) { return oracles::gaussian_cdf(x, 0.0, var); });
        CHECK(d <= 1.63 / std::sqrt(double(m)));  // 99% KS band
    }
}

TEST_CASE("histogram binning: left-closed bins, top edge included") {
    const QuadratureGrid g{1.0, 8};
    const std::vector<double> samples = {-1.0, -0.75 - 1e-12, 0.0, 1.0, 0.999};
    const std::vector<double> h = histogram_counts(samples, g);
    CHECK(h[0] == 2.0);  // f_min and just below the second edge
    CHECK(h[4] == 1.0);  // 0.0 is the left edge of bin 4
    CHECK(h[7] == 2.0);  // f_max lands in the last bin
    CHECK_THROWS_AS((void)histogram_counts(std::vector<double>{1.5}, g), ComputeError);
}

TEST_CASE("build_dataset: analytic bookkeeping, 8x8x8 grid") {
    const DensityOperatorFock vac = vacuum_state();
    const QuadratureGrid g{6.0, 64};
    const int psi_counts[2] = {8, 8};
    const double phi[2] = {0.0, 0.0};
    const ControlGrid c = make_uniform_control_grid(2, 8, psi_counts, phi, g);
    const SumFieldDataset ds =
        build_dataset(vac, c, 0, DetectorModel{1.0}, 1, kScale, DataMode::analytic);
    CHECK(ds.records.size() == 512);
    CHECK(ds.samples_per_setting == 0);
    for (const auto& rec : ds.records) {
        double mass = 0.0;
        for (double v : rec) mass += v * g.step();
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-8));
    }
}

TEST_CASE("build_dataset: histogram variance matches |F|^2/eta within 5 sigma") {
    const DensityOperatorFock vac = vacuum_state();
    const QuadratureGrid g{8.0, 64};
    const int psi_counts[2] = {2, 2};
    const double phi[2] = {0.0, 0.0};
    const ControlGrid c = make_uniform_control_grid(2, 2, psi_counts, phi, g);
    const int m = 50000;
    const double eta = 0.8;
    const SumFieldDataset ds =
        build_dataset(vac, c, m, DetectorModel{eta}, 3, kScale, DataMode::histogram);
    for (const auto& rec : ds.records) {
        double total = 0.0, second = 0.0;
        for (int i = 0; i < g.n_bins; ++i) {
            total += rec[i];
            second += rec[i] * sqr(g.center(i));
        }
        CHECK(total == doctest::Approx(double(m)));
        const double want = 1.0 / eta;
        // sampling error of the variance ~ sqrt(2/M) var; binning adds O(step^2/12)
        const double tol = 5.0 * std::sqrt(2.0 / m) * want + sqr(g.step()) / 12.0;
        CHECK(std::abs(second / m - want) < tol);
    }
}

TEST_CASE("build_dataset: histogram tracks analytic within binomial bounds") {
    const DensityOperatorFock vac = vacuum_state();
    const QuadratureGrid g{6.0, 64};
    const int psi_counts[2] = {2, 2};
    const double phi[2] = {0.0, 0.0};
    const ControlGrid c = make_uniform_control_grid(2, 2, psi_counts, phi, g);
    const int m = 200000;
    const SumFieldDataset hist =
        build_dataset(vac, c, m, DetectorModel{1.0}, 9, kScale, DataMode::histogram);
    const SumFieldDataset ana =
        build_dataset(vac, c, 0, DetectorModel{1.0}, 9, kScale, DataMode::analytic);
    for (size_t s = 0; s < hist.records.size(); ++s) {
        for (int i = 0; i < g.n_bins; ++i) {
            const double p = ana.records[s][i] * g.step();  // bin probability (dense grid)
            const double got = hist.records[s][i] / m / g.step();
            const double bound =
                5.0 * std::sqrt(std::max(p, 1e-12) * (1.0 - p) / m) / g.step() + 2e-3;
            CHECK(std::abs(got - ana.records[s][i]) < bound);
        }
    }
}

TEST_CASE("dataset regeneration is bit-identical, independent of threads") {
    const DensityOperatorFock vac = vacuum_state();
    const QuadratureGrid g{6.0, 64};
    const int psi_counts[2] = {3, 3};
    const double phi[2] = {0.0, 0.0};
    const ControlGrid c = make_uniform_control_grid(2, 3, psi_counts, phi, g);
    set_thread_count(1);
    const SumFieldDataset a =
        build_dataset(vac, c, 2000, DetectorModel{0.9}, 123, kScale, DataMode::samples);
    set_thread_count(4);
    const SumFieldDataset b =
        build_dataset(vac, c, 2000, DetectorModel{0.9}, 123, kScale, DataMode::samples);
    set_thread_count(0);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t s = 0; s < a.records.size(); ++s) CHECK(a.records[s] == b.records[s]);
}

TEST_CASE("per-setting seeds differ and are stable") {
    const int psi_a[2] = {0, 0}, psi_b[2] = {0, 1};
    const uint64_t s1 = setting_seed(42, 0, psi_a);
    const uint64_t s2 = setting_seed(42, 0, psi_b);
    const uint64_t s3 = setting_seed(42, 1, psi_a);
    CHECK(s1 != s2);
    CHECK(s1 != s3);
    CHECK(s1 == setting_seed(42, 0, psi_a));
}

TEST_CASE("interferometer parameter mapping") {
    CHECK(interferometer_params(0.5, 0.0, 0.0).alpha == doctest::Approx(0.25 * kPi));
    CHECK(interferometer_params(sqr(std::cos(1.0)), 0.3, -0.2).alpha ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(interferometer_params(1e-9, 0.0, 0.0).alpha ==
          doctest::Approx(0.5 * kPi).epsilon(1e-3));
    CHECK(interferometer_params(0.3, 0.7, -0.4).psi1 == 0.7);
    CHECK_THROWS_AS(interferometer_params(0.0, 0.0, 0.0), ValidationError);
    CHECK_THROWS_AS(interferometer_params(1.0, 0.0, 0.0), ValidationError);
}

TEST_CASE("control grid validation") {
    const QuadratureGrid g{6.0, 64};
    const int psi_counts[2] = {4, 4};
    const double phi[2] = {0.0, 0.5};
    ControlGrid c = make_uniform_control_grid(2, 4, psi_counts, phi, g);
    CHECK(c.n_settings() == 64);
    CHECK(c.psi_values[0].front() == doctest::Approx(-kPi));
    CHECK(c.psi_values[1].back() < 0.5);  // right-open pi interval

    c.psi_values[0].push_back(0.1);  // span > pi
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("delta-psi control grid for phase averaging") {
    const QuadratureGrid g{6.0, 64};
    const ControlGrid c = make_delta_psi_control_grid(4, 16, 8, 0.0, g);
    CHECK(c.delta_psi_layout);
    CHECK(c.psi_values[0].size() == 16);
    CHECK(c.n_settings() == 4 * 16 * 8);
    const int idx[2] = {3, 2};
    const std::vector<double> psi = c.setting_phases(idx);
    CHECK(psi[1] == doctest::Approx(psi[0] + c.psi_values[1][2]));
    CHECK_THROWS_AS(make_delta_psi_control_grid(4, 8, 8, 0.0, g), ValidationError);
}
