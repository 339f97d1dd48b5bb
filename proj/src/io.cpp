#include "fstomo/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fstomo {

using nlohmann::json;

namespace {

void require_keys(const json& j, const std::string& path,
                  const std::set<std::string>& allowed,
                  const std::set<std::string>& required = {}) {
    if (!j.is_object()) throw ValidationError(path + ": expected an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw ValidationError(path + "." + key + ": unknown key");
    for (const auto& key : required)
        if (!j.contains(key))
            throw ValidationError(path + "." + key + ": missing required key");
}

double get_num(const json& j, const std::string& path, const char* key, double fallback,
               bool required = false) {
    if (!j.contains(key)) {
        if (required) throw ValidationError(path + "." + key + ": missing required key");
        return fallback;
    }
    if (!j.at(key).is_number())
        throw ValidationError(path + "." + key + ": expected a number");
    return j.at(key).get<double>();
}

int get_int(const json& j, const std::string& path, const char* key, int fallback,
            bool required = false) {
    if (!j.contains(key)) {
        if (required) throw ValidationError(path + "." + key + ": missing required key");
        return fallback;
    }
    if (!j.at(key).is_number_integer())
        throw ValidationError(path + "." + key + ": expected an integer");
    return j.at(key).get<int>();
}

cplx parse_complex(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw ValidationError(path + ": expected [re, im]");
    return {j[0].get<double>(), j[1].get<double>()};
}

json dump_state_spec(const StateSpec& s);

json dump_kind(const StateSpec& s) {
    return std::visit(
        [&](const auto& k) -> json {
            using T = std::decay_t<decltype(k)>;
            json j;
            if constexpr (std::is_same_v<T, spec::Vacuum>) {
                j["kind"] = "vacuum";
            } else if constexpr (std::is_same_v<T, spec::Coherent>) {
                j["kind"] = "coherent";
                json g = json::array();
                for (const cplx& c : k.gamma) g.push_back({c.real(), c.imag()});
                j["gamma"] = g;
            } else if constexpr (std::is_same_v<T, spec::FockProduct>) {
                j["kind"] = "fock";
                j["occupations"] = k.occupation;
            } else if constexpr (std::is_same_v<T, spec::SingleModeSqueezed>) {
                j["kind"] = "single_mode_squeezed";
                j["mode"] = k.mode;
                j["r"] = k.r;
                j["squeeze_phase"] = k.phase;
            } else if constexpr (std::is_same_v<T, spec::TwoModeSqueezedVacuum>) {
                j["kind"] = "two_mode_squeezed_vacuum";
                j["pair"] = {k.mode_a, k.mode_b};
                j["r"] = k.r;
            } else {
                j["kind"] = "mixture";
                json comps = json::array();
                for (size_t i = 0; i < k.components.size(); ++i) {
                    json c;
                    c["weight"] = k.weights[i];
                    c["state"] = dump_state_spec(k.components[i]);
                    comps.push_back(c);
                }
                j["components"] = comps;
            }
            return j;
        },
        s.kind);
}

json dump_state_spec(const StateSpec& s) {
    json j = dump_kind(s);
    j["n_modes"] = s.n_modes;
    j["dim"] = s.truncation_dim;
    return j;
}

}  // namespace

StateSpec parse_state_spec(const json& j) {
    const std::string path = "state";
    if (!j.is_object() || !j.contains("kind"))
        throw ValidationError(path + ".kind: missing required key");
    const std::string kind = j.at("kind").get<std::string>();

    StateSpec s;
    s.n_modes = get_int(j, path, "n_modes", 2, true);
    s.truncation_dim = get_int(j, path, "dim", 8, true);

    if (kind == "vacuum") {
        require_keys(j, path, {"kind", "n_modes", "dim"});
        s.kind = spec::Vacuum{};
    } else if (kind == "coherent") {
        require_keys(j, path, {"kind", "n_modes", "dim", "gamma"}, {"gamma"});
        spec::Coherent c;
        for (size_t i = 0; i < j.at("gamma").size(); ++i)
            c.gamma.push_back(parse_complex(j.at("gamma")[i], path + ".gamma"));
        s.kind = std::move(c);
    } else if (kind == "fock") {
        require_keys(j, path, {"kind", "n_modes", "dim", "occupations"}, {"occupations"});
        spec::FockProduct f;
        f.occupation = j.at("occupations").get<std::vector<int>>();
        s.kind = std::move(f);
    } else if (kind == "single_mode_squeezed") {
        require_keys(j, path, {"kind", "n_modes", "dim", "mode", "r", "squeeze_phase"},
                     {"r"});
        spec::SingleModeSqueezed q;
        q.mode = get_int(j, path, "mode", 0);
        q.r = get_num(j, path, "r", 0.0, true);
        q.phase = get_num(j, path, "squeeze_phase", 0.0);
        s.kind = q;
    } else if (kind == "two_mode_squeezed_vacuum") {
        require_keys(j, path, {"kind", "n_modes", "dim", "pair", "r"}, {"r"});
        spec::TwoModeSqueezedVacuum q;
        if (j.contains("pair")) {
            const auto pair = j.at("pair").get<std::vector<int>>();
            if (pair.size() != 2) throw ValidationError(path + ".pair: expected two modes");
            q.mode_a = pair[0];
            q.mode_b = pair[1];
        }
        q.r = get_num(j, path, "r", 0.0, true);
        s.kind = q;
    } else if (kind == "mixture") {
        require_keys(j, path, {"kind", "n_modes", "dim", "components"}, {"components"});
        spec::Mixture m;
        for (const auto& comp : j.at("components")) {
            require_keys(comp, path + ".components[]", {"weight", "state"},
                         {"weight", "state"});
            m.weights.push_back(comp.at("weight").get<double>());
            StateSpec sub = parse_state_spec(comp.at("state"));
            m.components.push_back(std::move(sub));
        }
        s.kind = std::move(m);
    } else {
        throw ValidationError(path + ".kind: unknown state kind '" + kind + "'");
    }
    s.validate();
    return s;
}

std::vector<double> OutputGridSpec::centers() const {
    std::vector<double> v(center_count);
    for (int i = 0; i < center_count; ++i)
        v[i] = (center_count == 1)
                   ? 0.0
                   : -center_max + 2.0 * center_max * i / (center_count - 1);
    return v;
}

std::vector<double> OutputGridSpec::offsets() const {
    std::vector<double> v(offset_count);
    for (int i = 0; i < offset_count; ++i)
        v[i] = (offset_count == 1)
                   ? 0.0
                   : -offset_max + 2.0 * offset_max * i / (offset_count - 1);
    return v;
}

void OutputGridSpec::validate() const {
    if (center_count < 1 || offset_count < 1 || !(center_max > 0.0) || !(offset_max > 0.0))
        throw ValidationError("output_grid: counts must be >= 1 and extents positive");
    if (offset_count % 2 == 0)
        throw ValidationError("output_grid: offset_count must be odd so the grid contains 0");
}

ControlGrid RunConfig::control_grid() const {
    if (phase_average)
        return make_delta_psi_control_grid(alpha_count, phase_average->points,
                                           psi_counts.empty() ? 8 : psi_counts.back(),
                                           phi_ref.empty() ? 0.0 : phi_ref.back(), grid);
    return make_uniform_control_grid(state.n_modes, alpha_count, psi_counts, phi_ref, grid);
}

RunConfig parse_run_config(const json& j) {
    require_keys(j, "config",
                 {"state", "field_scale", "detector", "control", "quadrature_grid",
                  "samples_per_setting", "seed", "mode", "filter", "reconstruction",
                  "output_grid", "phase_average"},
                 {"state"});
    RunConfig c;
    c.state = parse_state_spec(j.at("state"));
    c.scale.f_abs = get_num(j, "config", "field_scale", 1.0);
    c.scale.validate();

    if (j.contains("detector")) {
        require_keys(j.at("detector"), "config.detector", {"eta"});
        c.detector.eta = get_num(j.at("detector"), "config.detector", "eta", 1.0);
    }
    c.detector.validate();

    if (j.contains("control")) {
        const json& ctl = j.at("control");
        require_keys(ctl, "config.control", {"alpha_count", "psi_counts", "phi_ref"});
        c.alpha_count = get_int(ctl, "config.control", "alpha_count", 8);
        if (ctl.contains("psi_counts"))
            c.psi_counts = ctl.at("psi_counts").get<std::vector<int>>();
        if (ctl.contains("phi_ref"))
            c.phi_ref = ctl.at("phi_ref").get<std::vector<double>>();
    }
    if (c.psi_counts.empty()) c.psi_counts.assign(c.state.n_modes, 8);
    if (c.phi_ref.empty()) c.phi_ref.assign(c.state.n_modes, 0.0);

    if (j.contains("quadrature_grid")) {
        const json& g = j.at("quadrature_grid");
        require_keys(g, "config.quadrature_grid", {"f_max", "n_bins"});
        c.grid.f_max = get_num(g, "config.quadrature_grid", "f_max", 6.0);
        c.grid.n_bins = get_int(g, "config.quadrature_grid", "n_bins", 64);
    }
    c.grid.validate();

    c.samples_per_setting = get_int(j, "config", "samples_per_setting", 100000);
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
            throw ValidationError("config.seed: expected an unsigned integer");
        c.seed = j.at("seed").get<uint64_t>();
    }
    if (j.contains("mode")) c.mode = data_mode_from_string(j.at("mode").get<std::string>());

    if (j.contains("filter")) {
        const json& f = j.at("filter");
        require_keys(f, "config.filter", {"y_cut", "taper_width"}, {"y_cut"});
        RegularizationFilter rf;
        rf.y_cut = get_num(f, "config.filter", "y_cut", 8.0, true);
        rf.taper_width = get_num(f, "config.filter", "taper_width", 0.0);
        rf.validate();
        c.filter = rf;
    }
    if (j.contains("reconstruction")) {
        const json& r = j.at("reconstruction");
        require_keys(r, "config.reconstruction",
                     {"nodes_per_axis", "amplification_ceiling"});
        c.quad.nodes_per_axis = get_int(r, "config.reconstruction", "nodes_per_axis", 128);
        c.quad.amplification_ceiling =
            get_num(r, "config.reconstruction", "amplification_ceiling",
                    c.quad.amplification_ceiling);
    }
    c.quad.validate();

    if (j.contains("output_grid")) {
        const json& o = j.at("output_grid");
        require_keys(o, "config.output_grid",
                     {"center_max", "center_count", "offset_max", "offset_count"});
        c.output.center_max = get_num(o, "config.output_grid", "center_max", 6.0);
        c.output.center_count = get_int(o, "config.output_grid", "center_count", 9);
        c.output.offset_max = get_num(o, "config.output_grid", "offset_max", 2.0);
        c.output.offset_count = get_int(o, "config.output_grid", "offset_count", 5);
    }
    c.output.validate();

    if (j.contains("phase_average")) {
        const json& p = j.at("phase_average");
        require_keys(p, "config.phase_average", {"points", "method"});
        PhaseAverageSpec pa;
        pa.points = get_int(p, "config.phase_average", "points", 16);
        if (p.contains("method")) pa.method = p.at("method").get<std::string>();
        if (pa.method != "matrices" && pa.method != "distributions")
            throw ValidationError("config.phase_average.method: matrices|distributions");
        c.phase_average = pa;
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ValidationError("config parse error: " + std::string(e.what()));
    }
    return parse_run_config(j);
}

std::string RunConfig::canonical_text() const {
    json j;
    j["state"] = dump_state_spec(state);
    j["field_scale"] = scale.f_abs;
    j["detector"] = {{"eta", detector.eta}};
    j["control"] = {{"alpha_count", alpha_count},
                    {"psi_counts", psi_counts},
                    {"phi_ref", phi_ref}};
    j["quadrature_grid"] = {{"f_max", grid.f_max}, {"n_bins", grid.n_bins}};
    j["samples_per_setting"] = samples_per_setting;
    j["seed"] = seed;
    j["mode"] = to_string(mode);
    if (filter)
        j["filter"] = {{"y_cut", filter->y_cut}, {"taper_width", filter->taper_width}};
    j["reconstruction"] = {{"nodes_per_axis", quad.nodes_per_axis},
                           {"amplification_ceiling", quad.amplification_ceiling}};
    j["output_grid"] = {{"center_max", output.center_max},
                        {"center_count", output.center_count},
                        {"offset_max", output.offset_max},
                        {"offset_count", output.offset_count}};
    if (phase_average)
        j["phase_average"] = {{"points", phase_average->points},
                              {"method", phase_average->method}};
    return j.dump();  // nlohmann objects serialize with sorted keys
}

std::string RunConfig::hash() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(canonical_text()));
    return buf;
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ComputeError("cannot write " + tmp.string());
        out << content;
        if (!out) throw ComputeError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::filesystem::path csv_path_for(const std::filesystem::path& json_path) {
    std::filesystem::path p = json_path;
    p.replace_extension(".csv");
    return p;
}

json dump_control(const ControlGrid& c) {
    json j;
    json alphas = json::array();
    for (const auto& t : c.alphas) alphas.push_back(t);
    j["alphas"] = alphas;
    json psis = json::array();
    for (const auto& p : c.psi_values) psis.push_back(p);
    j["psi_values"] = psis;
    j["phi_ref"] = c.phi_ref;
    j["quadrature_grid"] = {{"f_max", c.grid.f_max}, {"n_bins", c.grid.n_bins}};
    j["delta_psi_layout"] = c.delta_psi_layout;
    return j;
}

ControlGrid parse_control(const json& j) {
    require_keys(j, "manifest.control",
                 {"alphas", "psi_values", "phi_ref", "quadrature_grid", "delta_psi_layout"},
                 {"alphas", "psi_values", "phi_ref", "quadrature_grid"});
    ControlGrid c;
    for (const auto& t : j.at("alphas")) c.alphas.push_back(t.get<std::vector<double>>());
    for (const auto& p : j.at("psi_values"))
        c.psi_values.push_back(p.get<std::vector<double>>());
    c.phi_ref = j.at("phi_ref").get<std::vector<double>>();
    c.grid.f_max = j.at("quadrature_grid").at("f_max").get<double>();
    c.grid.n_bins = j.at("quadrature_grid").at("n_bins").get<int>();
    if (j.contains("delta_psi_layout")) c.delta_psi_layout = j.at("delta_psi_layout").get<bool>();
    return c;
}

}  // namespace

void save_dataset(const SumFieldDataset& ds, const std::filesystem::path& json_path,
                  const std::string& config_hash) {
    ds.validate();
    const std::filesystem::path data_path = csv_path_for(json_path);

    json manifest;
    manifest["format"] = "fstomo-dataset";
    manifest["tool_version"] = kToolVersion;
    manifest["n_modes"] = ds.n_modes;
    manifest["field_scale"] = ds.scale.f_abs;
    manifest["eta"] = ds.detector.eta;
    manifest["seed"] = ds.seed;
    manifest["samples_per_setting"] = ds.samples_per_setting;
    manifest["mode"] = to_string(ds.mode);
    manifest["control"] = dump_control(ds.control);
    manifest["data_file"] = data_path.filename().string();
    manifest["config_hash"] = config_hash;

    std::ostringstream csv;
    csv << "setting,row,value\n";
    for (size_t s = 0; s < ds.records.size(); ++s)
        for (size_t r = 0; r < ds.records[s].size(); ++r)
            csv << s << ',' << r << ',' << format_double(ds.records[s][r]) << '\n';

    atomic_write(data_path, csv.str());
    atomic_write(json_path, manifest.dump(2) + "\n");
}

SumFieldDataset load_dataset(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw ValidationError("cannot open dataset manifest " + json_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::parse_error& e) {
        throw ValidationError("dataset manifest parse error: " + std::string(e.what()));
    }
    require_keys(manifest, "manifest",
                 {"format", "tool_version", "n_modes", "field_scale", "eta", "seed",
                  "samples_per_setting", "mode", "control", "data_file", "config_hash"},
                 {"format", "n_modes", "control", "mode", "data_file"});
    if (manifest.at("format").get<std::string>() != "fstomo-dataset")
        throw ValidationError("not a dataset manifest: " + json_path.string());

    SumFieldDataset ds;
    ds.n_modes = manifest.at("n_modes").get<int>();
    ds.scale.f_abs = manifest.at("field_scale").get<double>();
    ds.detector.eta = manifest.at("eta").get<double>();
    ds.seed = manifest.at("seed").get<uint64_t>();
    ds.samples_per_setting = manifest.at("samples_per_setting").get<int>();
    ds.mode = data_mode_from_string(manifest.at("mode").get<std::string>());
    ds.control = parse_control(manifest.at("control"));

    const std::filesystem::path data_path =
        json_path.parent_path() / manifest.at("data_file").get<std::string>();
    std::ifstream data(data_path);
    if (!data) throw ValidationError("cannot open dataset data file " + data_path.string());

    ds.records.assign(ds.control.n_settings(), {});
    std::string line;
    std::getline(data, line);  // header
    if (line != "setting,row,value")
        throw ValidationError("dataset data file has an unexpected header");
    while (std::getline(data, line)) {
        if (line.empty()) continue;
        size_t c1 = line.find(','), c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw ValidationError("dataset data file: malformed row");
        const size_t s = std::stoull(line.substr(0, c1));
        const size_t r = std::stoull(line.substr(c1 + 1, c2 - c1 - 1));
        const double v = std::strtod(line.c_str() + c2 + 1, nullptr);
        if (s >= ds.records.size())
            throw ValidationError("dataset data file: setting index out of range");
        if (ds.records[s].size() <= r) ds.records[s].resize(r + 1);
        ds.records[s][r] = v;
    }
    ds.validate();
    return ds;
}

void save_matrix(const FsDensityMatrix& m, const std::filesystem::path& path) {
    m.validate_layout();
    json j;
    j["format"] = "fstomo-densitymatrix";
    j["tool_version"] = kToolVersion;
    j["n_modes"] = m.n_modes;
    j["field_scale"] = m.scale.f_abs;
    j["phases"] = m.phases;
    j["center_values"] = m.center_values;
    j["offset_values"] = m.offset_values;
    json el = json::array();
    for (const cplx& e : m.elements) el.push_back({e.real(), e.imag()});
    j["elements"] = std::move(el);
    j["provenance"] = {{"source", m.prov.source},
                       {"eta", m.prov.eta},
                       {"filter_y_cut", m.prov.filter_y_cut},
                       {"filter_taper_width", m.prov.filter_taper_width},
                       {"amplification_bound", m.prov.amplification_bound},
                       {"quad_nodes_per_axis", m.prov.quad_nodes_per_axis},
                       {"transform_stages", m.prov.transform_stages},
                       {"phase_averaged", m.prov.phase_averaged},
                       {"phase_average_points", m.prov.phase_average_points},
                       {"phase_average_method", m.prov.phase_average_method},
                       {"control_clamped", m.prov.control_clamped},
                       {"config_hash", m.prov.config_hash},
                       {"seed", m.prov.seed},
                       {"tool_version",
                        m.prov.tool_version.empty() ? kToolVersion : m.prov.tool_version}};
    j["residuals"] = {{"hermiticity", m.res.hermiticity},
                      {"diag_max_imag", m.res.diag_max_imag},
                      {"diag_min_real", m.res.diag_min_real},
                      {"diag_norm", m.res.diag_norm}};
    atomic_write(path, j.dump(2) + "\n");
}

FsDensityMatrix load_matrix(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open matrix file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ValidationError("matrix file parse error: " + std::string(e.what()));
    }
    if (!j.is_object() || !j.contains("format") ||
        j.at("format").get<std::string>() != "fstomo-densitymatrix")
        throw ValidationError("not a density-matrix file: " + path.string());

    FsDensityMatrix m;
    m.n_modes = j.at("n_modes").get<int>();
    m.scale.f_abs = j.at("field_scale").get<double>();
    m.phases = j.at("phases").get<std::vector<double>>();
    m.center_values = j.at("center_values").get<std::vector<double>>();
    m.offset_values = j.at("offset_values").get<std::vector<double>>();
    for (const auto& e : j.at("elements"))
        m.elements.emplace_back(e[0].get<double>(), e[1].get<double>());
    const json& p = j.at("provenance");
    m.prov.source = p.at("source").get<std::string>();
    m.prov.eta = p.at("eta").get<double>();
    m.prov.filter_y_cut = p.at("filter_y_cut").get<double>();
    m.prov.filter_taper_width = p.at("filter_taper_width").get<double>();
    m.prov.amplification_bound = p.at("amplification_bound").get<double>();
    m.prov.quad_nodes_per_axis = p.at("quad_nodes_per_axis").get<int>();
    m.prov.transform_stages = p.at("transform_stages").get<int>();
    m.prov.phase_averaged = p.at("phase_averaged").get<bool>();
    m.prov.phase_average_points = p.at("phase_average_points").get<int>();
    m.prov.phase_average_method = p.at("phase_average_method").get<std::string>();
    m.prov.control_clamped = p.at("control_clamped").get<bool>();
    m.prov.config_hash = p.at("config_hash").get<std::string>();
    m.prov.seed = p.at("seed").get<uint64_t>();
    m.prov.tool_version = p.at("tool_version").get<std::string>();
    const json& r = j.at("residuals");
    m.res.hermiticity = r.at("hermiticity").get<double>();
    m.res.diag_max_imag = r.at("diag_max_imag").get<double>();
    m.res.diag_min_real = r.at("diag_min_real").get<double>();
    m.res.diag_norm = r.at("diag_norm").get<double>();
    m.validate_layout();
    return m;
}

nlohmann::json compare_report(const CompareMetrics& metrics, const FsDensityMatrix& a,
                              int fock_diag_levels) {
    json j;
    j["l_inf"] = metrics.l_inf;
    j["l2"] = metrics.l2;
    j["hermiticity_residual_a"] = metrics.hermiticity_residual_a;
    j["diag_negativity_a"] = metrics.diag_negativity_a;
    j["diag_norm_a"] = metrics.diag_norm_a;
    if (fock_diag_levels > 0) {
        const std::vector<double> diag = fock_diagonal_projection(a, fock_diag_levels);
        j["diagnostics"] = {{"fock_diagonal_a", diag},
                            {"fock_diagonal_levels", fock_diag_levels}};
    }
    return j;
}

}  // namespace fstomo
