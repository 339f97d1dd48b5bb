#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "fstomo/io.hpp"

using namespace fstomo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const FieldScale kScale{};

fs::path work_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "fstomo_io_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
    const fs::path log = work_dir() / "cli_output.txt";
    const std::string cmd =
        std::string(FSTOMO_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(log);
        std::stringstream ss;
        ss << in.rdbuf();
        *output = ss.str();
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

json vacuum_config(int alpha = 4, int psi = 4) {
    json j;
    j["state"] = {{"kind", "vacuum"}, {"n_modes", 2}, {"dim", 8}};
    j["control"] = {{"alpha_count", alpha}, {"psi_counts", {psi, psi}}};
    j["quadrature_grid"] = {{"f_max", 6.0}, {"n_bins", 64}};
    j["samples_per_setting"] = 2000;
    j["seed"] = 77;
    j["mode"] = "histogram";
    j["output_grid"] = {{"center_max", 4.5},
                        {"center_count", 5},
                        {"offset_max", 1.0},
                        {"offset_count", 3}};
    j["reconstruction"] = {{"nodes_per_axis", 64}};
    return j;
}

DensityOperatorFock vacuum_state() {
    StateSpec s;
    s.n_modes = 2;
    s.truncation_dim = 8;
    s.kind = spec::Vacuum{};
    return build_state(s);
}

}  // namespace

TEST_CASE("config parsing: strict keys and ranges") {
    json j = vacuum_config();
    CHECK_NOTHROW((void)parse_run_config(j));

    json bad = j;
    bad["detctor"] = {{"eta", 0.9}};
    CHECK_THROWS_WITH_AS((void)parse_run_config(bad), doctest::Contains("config.detctor"),
                         ValidationError);

    bad = j;
    bad["detector"] = {{"eta", 1.2}};
    CHECK_THROWS_WITH_AS((void)parse_run_config(bad), doctest::Contains("eta"),
                         ValidationError);

    bad = j;
    bad["state"]["flavor"] = "x";
    CHECK_THROWS_WITH_AS((void)parse_run_config(bad), doctest::Contains("state.flavor"),
                         ValidationError);

    bad = j;
    bad["output_grid"]["offset_count"] = 4;  // even: no zero offset
    CHECK_THROWS_AS((void)parse_run_config(bad), ValidationError);
}

TEST_CASE("config hash is stable and key-order independent") {
    const RunConfig a = parse_run_config(vacuum_config());
    json reordered;
    const json src = vacuum_config();
    for (auto it = src.rbegin(); it != src.rend(); ++it) reordered[it.key()] = it.value();
    const RunConfig b = parse_run_config(reordered);
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);

    json changed = vacuum_config();
    changed["seed"] = 78;
    CHECK(parse_run_config(changed).hash() != a.hash());
}

TEST_CASE("dataset file round trip is bit exact") {
    const auto ds = build_dataset(vacuum_state(),
                                  parse_run_config(vacuum_config(2, 2)).control_grid(), 500,
                                  DetectorModel{0.9}, 5, kScale, DataMode::samples);
    // same filename in two directories so the manifests can match byte for byte
    fs::create_directories(work_dir() / "a");
    fs::create_directories(work_dir() / "b");
    const fs::path p1 = work_dir() / "a" / "ds.json";
    const fs::path p2 = work_dir() / "b" / "ds.json";
    save_dataset(ds, p1, "cafe");
    const SumFieldDataset back = load_dataset(p1);
    CHECK(back.records.size() == ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) CHECK(back.records[i] == ds.records[i]);
    CHECK(back.seed == ds.seed);
    CHECK(back.detector.eta == ds.detector.eta);

    save_dataset(back, p2, "cafe");
    CHECK(slurp(p1) == slurp(p2));
    CHECK(slurp(work_dir() / "a" / "ds.csv") == slurp(work_dir() / "b" / "ds.csv"));
}

TEST_CASE("matrix file round trip is bit exact") {
    const std::vector<double> centers = {-3.0, 0.0, 3.0};
    const std::vector<double> offsets = {-1.0, 0.0, 1.0};
    const std::vector<double> phases = {0.0, 0.0};
    FsDensityMatrix m = oracle_grid(vacuum_state(), centers, offsets, phases, kScale);
    m.prov.config_hash = "deadbeef";
    m.prov.seed = 9;

    const fs::path p1 = work_dir() / "m1.json";
    const fs::path p2 = work_dir() / "m2.json";
    save_matrix(m, p1);
    const FsDensityMatrix back = load_matrix(p1);
    CHECK(back.elements == m.elements);  // bitwise numeric round trip
    CHECK(back.center_values == m.center_values);
    CHECK(back.prov.config_hash == "deadbeef");
    save_matrix(back, p2);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("format_double survives the decimal round trip") {
    for (double v : {0.1, 1.0 / 3.0, 6.02e23, -7.25e-12, 0.15915494309189535}) {
        CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
    }
}

TEST_CASE("atomic_write leaves no temp file") {
    const fs::path p = work_dir() / "atomic.txt";
    atomic_write(p, "payload");
    CHECK(slurp(p) == "payload");
    CHECK(!fs::exists(p.string() + ".tmp"));
}

TEST_CASE("cli: simulate determinism and validation exit codes") {
    const fs::path cfg = work_dir() / "config.json";
    write_file(cfg, vacuum_config().dump(2));

    fs::create_directories(work_dir() / "r1");
    fs::create_directories(work_dir() / "r2");
    const fs::path out1 = work_dir() / "r1" / "run.json";
    const fs::path out2 = work_dir() / "r2" / "run.json";
    CHECK(run_cli("simulate --config " + cfg.string() + " --out " + out1.string()) == 0);
    CHECK(run_cli("simulate --config " + cfg.string() + " --out " + out2.string()) == 0);
    CHECK(slurp(out1) == slurp(out2));
    CHECK(slurp(work_dir() / "r1" / "run.csv") == slurp(work_dir() / "r2" / "run.csv"));

    // eta out of range -> validation failure, message cites the range
    std::string msg;
    json bad = vacuum_config();
    bad["detector"] = {{"eta", 1.2}};
    const fs::path badcfg = work_dir() / "bad.json";
    write_file(badcfg, bad.dump(2));
    CHECK(run_cli("simulate --config " + badcfg.string(), &msg) == 2);
    CHECK(msg.find("(0, 1]") != std::string::npos);

    // unknown key -> exit 2 naming the path
    json unk = vacuum_config();
    unk["xyz"] = 1;
    write_file(badcfg, unk.dump(2));
    CHECK(run_cli("simulate --config " + badcfg.string(), &msg) == 2);
    CHECK(msg.find("config.xyz") != std::string::npos);
}

TEST_CASE("cli: analytic reconstruction, oracle, compare") {
    const fs::path cfg = work_dir() / "config.json";
    write_file(cfg, vacuum_config().dump(2));

    const fs::path rec = work_dir() / "rec.json";
    const fs::path orc = work_dir() / "orc.json";
    CHECK(run_cli("reconstruct --analytic --config " + cfg.string() + " --out " +
                  rec.string()) == 0);
    CHECK(run_cli("oracle --config " + cfg.string() + " --out " + orc.string()) == 0);

    // center element approx 1/(2 pi)
    const FsDensityMatrix m = load_matrix(rec);
    const int c_idx[2] = {2, 2}, o_idx[2] = {1, 1};
    const cplx center = m.elements[m.flat_index(c_idx, o_idx)];
    CHECK(std::abs(center - cplx(0.15915494309189535)) < 1e-3);

    // compare: self -> exit 0; vs oracle at tol 1e-3 -> exit 0
    CHECK(run_cli("compare " + rec.string() + " " + rec.string() + " --tol 0") == 0);
    CHECK(run_cli("compare " + rec.string() + " " + orc.string() + " --tol 1e-3") == 0);

    // a constructed 1e-3 perturbation trips the tolerance gate
    FsDensityMatrix perturbed = m;
    perturbed.elements[0] += 1e-3;
    const fs::path pert = work_dir() / "pert.json";
    save_matrix(perturbed, pert);
    std::string msg;
    CHECK(run_cli("compare " + rec.string() + " " + pert.string() + " --tol 1e-4", &msg) == 3);
    CHECK(msg.find("exceeds tolerance") != std::string::npos);

    // mismatched grids -> exit 2
    json cfg2 = vacuum_config();
    cfg2["output_grid"]["center_count"] = 3;
    const fs::path cfg2p = work_dir() / "config2.json";
    write_file(cfg2p, cfg2.dump(2));
    const fs::path orc2 = work_dir() / "orc2.json";
    CHECK(run_cli("oracle --config " + cfg2p.string() + " --out " + orc2.string()) == 0);
    CHECK(run_cli("compare " + rec.string() + " " + orc2.string()) == 2);
}

TEST_CASE("cli: empirical reconstruction pipeline and eta guard") {
    json cfg = vacuum_config();
    cfg["detector"] = {{"eta", 0.9}};
    cfg["samples_per_setting"] = 5000;
    const fs::path cfgp = work_dir() / "eta_config.json";
    write_file(cfgp, cfg.dump(2));

    const fs::path ds = work_dir() / "eta_ds.json";
    REQUIRE(run_cli("simulate --config " + cfgp.string() + " --out " + ds.string()) == 0);

    // eta < 1 without a filter -> runtime failure advising one
    std::string msg;
    CHECK(run_cli("reconstruct " + ds.string() + " --config " + cfgp.string() + " --out " +
                      (work_dir() / "x.json").string(),
                  &msg) == 1);
    CHECK(msg.find("filter") != std::string::npos);

    // with a cutoff it runs and records the amplification bound
    const fs::path rec = work_dir() / "eta_rec.json";
    CHECK(run_cli("reconstruct " + ds.string() + " --config " + cfgp.string() +
                      " --filter-ycut 6 --out " + rec.string(),
                  &msg) == 0);
    CHECK(msg.find("amplification bound") != std::string::npos);
    const FsDensityMatrix m = load_matrix(rec);
    CHECK(m.prov.eta == 0.9);
    CHECK(m.prov.amplification_bound == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
}

TEST_CASE("cli: phase-averaged dataset flag lands in the metadata") {
    json cfg = vacuum_config(2, 4);
    cfg["phase_average"] = {{"points", 16}, {"method", "distributions"}};
    cfg["samples_per_setting"] = 500;
    const fs::path cfgp = work_dir() / "pa_config.json";
    write_file(cfgp, cfg.dump(2));

    const fs::path ds = work_dir() / "pa_ds.json";
    REQUIRE(run_cli("simulate --config " + cfgp.string() + " --out " + ds.string()) == 0);
    const SumFieldDataset loaded = load_dataset(ds);
    CHECK(loaded.control.delta_psi_layout);

    const fs::path rec = work_dir() / "pa_rec.json";
    CHECK(run_cli("reconstruct " + ds.string() + " --config " + cfgp.string() +
                  " --phase-averaged --out " + rec.string()) == 0);
    const FsDensityMatrix m = load_matrix(rec);
    CHECK(m.prov.phase_averaged);

    // --phase-averaged on a standard dataset -> coverage error
    const fs::path std_cfg = work_dir() / "std_config.json";
    write_file(std_cfg, vacuum_config(2, 2).dump(2));
    const fs::path std_ds = work_dir() / "std_ds.json";
    REQUIRE(run_cli("simulate --config " + std_cfg.string() + " --out " + std_ds.string()) ==
            0);
    std::string msg;
    CHECK(run_cli("reconstruct " + std_ds.string() + " --config " + std_cfg.string() +
                      " --phase-averaged --out " + (work_dir() / "y.json").string(),
                  &msg) == 2);
    CHECK(msg.find("psi_1 coverage") != std::string::npos);
}

TEST_CASE("cli: bench emits the timing table") {
    const fs::path cfg = work_dir() / "bench_config.json";
    write_file(cfg, vacuum_config().dump(2));
    const fs::path out = work_dir() / "bench.csv";
    CHECK(run_cli("bench --config " + cfg.string() + " --out " + out.string()) == 0);
    const std::string csv = slurp(out);
    CHECK(csv.find("method,n_modes,centers,offsets,nodes,wall_ms,l_inf_vs_oracle") == 0);
    CHECK(csv.find("radial_n_plus_1") != std::string::npos);
    CHECK(csv.find("joint_2n") != std::string::npos);
    // two methods x two node counts
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}
