// fstomo — simulate balanced-homodyne sum-field measurements of N-mode
// states and reconstruct field-strength-basis density matrices.
//
// Subcommands: simulate | reconstruct | oracle | compare | bench
// Exit codes: 0 success, 1 runtime/numerical failure, 2 input/validation
// failure, 3 comparison tolerance exceeded.

#include <chrono>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fstomo/io.hpp"
#include "fstomo/threading.hpp"

using namespace fstomo;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_path;
    std::optional<uint64_t> seed;
    std::optional<double> eta;
    std::optional<double> filter_ycut;
    std::optional<int> samples;
    std::optional<std::string> mode;
    int threads = 0;
};

void apply_overrides(RunConfig& cfg, const CommonFlags& f) {
    if (f.seed) cfg.seed = *f.seed;
    if (f.eta) {
        cfg.detector.eta = *f.eta;
        cfg.detector.validate();
    }
    if (f.samples) cfg.samples_per_setting = *f.samples;
    if (f.mode) cfg.mode = data_mode_from_string(*f.mode);
    if (f.filter_ycut) {
        RegularizationFilter rf;
        rf.y_cut = *f.filter_ycut;
        if (cfg.filter) rf.taper_width = cfg.filter->taper_width;
        rf.validate();
        cfg.filter = rf;
    }
}

double elapsed_ms(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

int cmd_simulate(const CommonFlags& flags) {
    RunConfig cfg = load_run_config(flags.config_path);
    apply_overrides(cfg, flags);
    const std::string out = flags.out_path.empty() ? "dataset.json" : flags.out_path;

    const DensityOperatorFock state = build_state(cfg.state);
    const ControlGrid control = cfg.control_grid();
    std::cout << "simulate: " << control.n_settings() << " settings, mode="
              << to_string(cfg.mode) << ", eta=" << cfg.detector.eta << ", M="
              << (cfg.mode == DataMode::analytic ? 0 : cfg.samples_per_setting) << "\n";

    const auto t0 = std::chrono::steady_clock::now();
    const size_t total = control.n_settings();
    const size_t stride = std::max<size_t>(1, total / 10);
    std::mutex print_mutex;
    const SumFieldDataset ds = build_dataset(
        state, control, cfg.samples_per_setting, cfg.detector, cfg.seed, cfg.scale,
        cfg.mode, [&](size_t done) {
            if (done % stride == 0 || done == total) {
                std::lock_guard<std::mutex> lock(print_mutex);
                std::cout << "simulate: settings " << done << "/" << total << "\n";
            }
        });
    std::cout << "simulate: generation took " << elapsed_ms(t0) << " ms\n";

    // normalization summary over the stored records
    double min_mass = 1e300, max_mass = -1e300;
    for (const auto& rec : ds.records) {
        double mass = 0.0;
        if (ds.mode == DataMode::analytic)
            for (double v : rec) mass += v * control.grid.step();
        else if (ds.mode == DataMode::histogram)
            for (double v : rec) mass += v / ds.samples_per_setting;
        else
            mass = 1.0;
        min_mass = std::min(min_mass, mass);
        max_mass = std::max(max_mass, mass);
    }
    std::cout << "simulate: per-setting normalization in [" << min_mass << ", " << max_mass
              << "]\n";

    save_dataset(ds, out, cfg.hash());
    std::cout << "simulate: wrote " << out << "\n";
    return 0;
}

int cmd_reconstruct(const CommonFlags& flags, const std::string& data_path, bool analytic,
                    bool phase_averaged) {
    RunConfig cfg = flags.config_path.empty() ? RunConfig{} : load_run_config(flags.config_path);
    if (flags.config_path.empty() && analytic)
        throw ValidationError("reconstruct --analytic requires --config with a state");
    apply_overrides(cfg, flags);
    const std::string out = flags.out_path.empty() ? "matrix.json" : flags.out_path;

    const std::vector<double> centers = cfg.output.centers();
    const std::vector<double> offsets = cfg.output.offsets();

    FsDensityMatrix m;
    if (analytic) {
        const DensityOperatorFock state = build_state(cfg.state);
        const std::vector<double> phases(state.n_modes, 0.0);
        AnalyticSource source(state, cfg.scale);
        m = phase_averaged
                ? phase_averaged_reconstruct(source, centers, offsets, phases, cfg.detector,
                                             cfg.filter, cfg.quad, cfg.scale,
                                             cfg.phase_average ? cfg.phase_average->points : 16,
                                             cfg.phase_average &&
                                                     cfg.phase_average->method == "distributions"
                                                 ? PhaseAverageMethod::distributions
                                                 : PhaseAverageMethod::matrices)
                : reconstruct_grid(source, centers, offsets, phases, cfg.detector, cfg.filter,
                                   cfg.quad, cfg.scale);
    } else {
        const SumFieldDataset ds = load_dataset(data_path);
        if (flags.eta && *flags.eta != ds.detector.eta)
            throw ValidationError("reconstruct: --eta disagrees with the dataset's eta");
        const std::vector<double> phases = ds.control.phi_ref;
        EmpiricalSource source(ds);
        FieldScale scale = ds.scale;
        if (!flags.config_path.empty() && cfg.scale.f_abs != scale.f_abs)
            throw ValidationError("reconstruct: config field_scale disagrees with the dataset");
        if (phase_averaged && !ds.control.delta_psi_layout)
            throw ValidationError(
                "reconstruct: --phase-averaged needs a delta-psi dataset (insufficient psi_1 coverage)");
        m = phase_averaged
                ? phase_averaged_reconstruct(source, centers, offsets, phases, ds.detector,
                                             cfg.filter, cfg.quad, scale)
                : reconstruct_grid(source, centers, offsets, phases, ds.detector, cfg.filter,
                                   cfg.quad, scale);
        m.prov.seed = ds.seed;
    }
    if (!flags.config_path.empty()) m.prov.config_hash = cfg.hash();
    m.prov.tool_version = kToolVersion;
    if (flags.seed) m.prov.seed = *flags.seed;

    std::cout << "reconstruct: source=" << m.prov.source
              << " stages=" << m.prov.transform_stages << "\n"
              << "residuals: hermiticity=" << m.res.hermiticity
              << " diag_max_imag=" << m.res.diag_max_imag
              << " diag_min_real=" << m.res.diag_min_real
              << " diag_norm=" << m.res.diag_norm << "\n";
    if (m.prov.eta < 1.0)
        std::cout << "amplification bound: " << m.prov.amplification_bound << "\n";

    save_matrix(m, out);
    std::cout << "reconstruct: wrote " << out << "\n";
    return 0;
}

int cmd_oracle(const CommonFlags& flags) {
    RunConfig cfg = load_run_config(flags.config_path);
    apply_overrides(cfg, flags);
    const std::string out = flags.out_path.empty() ? "oracle.json" : flags.out_path;

    const DensityOperatorFock state = build_state(cfg.state);
    const std::vector<double> phases(state.n_modes, 0.0);
    FsDensityMatrix m =
        oracle_grid(state, cfg.output.centers(), cfg.output.offsets(), phases, cfg.scale);
    m.prov.config_hash = cfg.hash();
    m.prov.seed = cfg.seed;
    m.prov.tool_version = kToolVersion;

    std::cout << "oracle: residuals: hermiticity=" << m.res.hermiticity
              << " diag_max_imag=" << m.res.diag_max_imag
              << " diag_norm=" << m.res.diag_norm << "\n";
    save_matrix(m, out);
    std::cout << "oracle: wrote " << out << "\n";
    return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, double tol,
                const std::string& out_path) {
    const FsDensityMatrix a = load_matrix(a_path);
    const FsDensityMatrix b = load_matrix(b_path);
    const CompareMetrics m = compare_matrices(a, b);

    const nlohmann::json report = compare_report(m, a, 3);
    std::cout << "compare: l_inf=" << m.l_inf << " l2=" << m.l2
              << " hermiticity_a=" << m.hermiticity_residual_a
              << " diag_negativity_a=" << m.diag_negativity_a
              << " diag_norm_a=" << m.diag_norm_a << "\n";
    if (!out_path.empty()) atomic_write(out_path, report.dump(2) + "\n");

    if (m.l_inf > tol) {
        std::cout << "compare: l_inf " << m.l_inf << " exceeds tolerance " << tol << "\n";
        return 3;
    }
    return 0;
}

int cmd_bench(const CommonFlags& flags) {
    RunConfig cfg = load_run_config(flags.config_path);
    apply_overrides(cfg, flags);

    const DensityOperatorFock state = build_state(cfg.state);
    const std::vector<double> phases(state.n_modes, 0.0);
    std::ostringstream csv;
    csv << "method,n_modes,centers,offsets,nodes,wall_ms,l_inf_vs_oracle\n";

    for (int nodes : {cfg.quad.nodes_per_axis / 2, cfg.quad.nodes_per_axis}) {
        QuadParams quad = cfg.quad;
        quad.nodes_per_axis = nodes;
        const std::vector<double> centers = cfg.output.centers();
        const std::vector<double> offsets = cfg.output.offsets();
        const FsDensityMatrix oracle =
            oracle_grid(state, centers, offsets, phases, cfg.scale);

        {
            AnalyticSource source(state, cfg.scale);
            const auto t0 = std::chrono::steady_clock::now();
            const FsDensityMatrix m =
                reconstruct_grid(source, centers, offsets, phases, cfg.detector, cfg.filter,
                                 quad, cfg.scale);
            const double ms = elapsed_ms(t0);
            csv << "radial_n_plus_1," << state.n_modes << ',' << centers.size() << ','
                << offsets.size() << ',' << nodes << ',' << format_double(ms) << ','
                << format_double(compare_matrices(m, oracle).l_inf) << "\n";
        }
        {
            const auto t0 = std::chrono::steady_clock::now();
            const FsDensityMatrix m = reconstruct_from_joint(
                state, cfg.grid, centers, offsets, phases, quad, cfg.scale);
            const double ms = elapsed_ms(t0);
            csv << "joint_2n," << state.n_modes << ',' << centers.size() << ','
                << offsets.size() << ',' << nodes << ',' << format_double(ms) << ','
                << format_double(compare_matrices(m, oracle).l_inf) << "\n";
        }
    }
    if (flags.out_path.empty())
        std::cout << csv.str();
    else {
        atomic_write(flags.out_path, csv.str());
        std::cout << "bench: wrote " << flags.out_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"field-strength tomography via amplitude and phase control"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string data_path, compare_a, compare_b;
    bool analytic = false, phase_averaged = false;
    double tol = 1e-3;

    const auto add_common = [&](CLI::App* sub, bool with_config_required) {
        auto* opt = sub->add_option("--config", flags.config_path, "run configuration JSON");
        if (with_config_required) opt->required();
        sub->add_option("--out", flags.out_path, "output path");
        sub->add_option("--seed", flags.seed, "master seed override");
        sub->add_option("--eta", flags.eta, "detector efficiency override");
        sub->add_option("--filter-ycut", flags.filter_ycut, "regularization cutoff y_cut");
        sub->add_option("--samples", flags.samples, "samples per setting override");
        sub->add_option("--mode", flags.mode, "dataset mode: samples|histogram|analytic");
        sub->add_option("--threads", flags.threads, "worker threads (default: FSTOMO_THREADS or hardware)");
    };

    CLI::App* sim = app.add_subcommand("simulate", "generate a sum-field dataset");
    add_common(sim, true);

    CLI::App* rec = app.add_subcommand("reconstruct", "reconstruct a density matrix");
    add_common(rec, false);
    rec->add_option("data", data_path, "dataset manifest path");
    rec->add_flag("--analytic", analytic, "use the exact state from --config instead of data");
    rec->add_flag("--phase-averaged", phase_averaged, "phase-averaged reconstruction");

    CLI::App* orc = app.add_subcommand("oracle", "exact density matrix from the state");
    add_common(orc, true);

    CLI::App* cmp = app.add_subcommand("compare", "compare two density-matrix files");
    cmp->add_option("a", compare_a, "first matrix file")->required();
    cmp->add_option("b", compare_b, "second matrix file")->required();
    cmp->add_option("--tol", tol, "L-infinity tolerance");
    cmp->add_option("--out", flags.out_path, "JSON report path");
    cmp->add_option("--threads", flags.threads, "worker threads");

    CLI::App* ben = app.add_subcommand("bench", "N+1 vs 2N transform timing table");
    add_common(ben, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (flags.threads > 0) set_thread_count(flags.threads);

    try {
        if (sim->parsed()) return cmd_simulate(flags);
        if (rec->parsed()) {
            if (!analytic && data_path.empty())
                throw ValidationError("reconstruct: give a dataset path or --analytic");
            return cmd_reconstruct(flags, data_path, analytic, phase_averaged);
        }
        if (orc->parsed()) return cmd_oracle(flags);
        if (cmp->parsed()) return cmd_compare(compare_a, compare_b, tol, flags.out_path);
        if (ben->parsed()) return cmd_bench(flags);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ComputeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
