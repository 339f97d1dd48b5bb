// io.hpp — JSON configuration ingestion (strict: unknown keys rejected),
// dataset and density-matrix persistence, provenance hashing.
//
// File formats:
//   dataset:  <out>.json manifest + <out>.csv data block
//             CSV columns: setting,row,value — `setting` is the flattened
//             control index, `row` a bin or sample index. Doubles are written
//             with 17 significant digits so files round-trip bit-exactly.
//   matrix:   single JSON file; elements as flat [re, im] pairs, row-major
//             over the F multi-index then the F' multi-index.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "fstomo/density_matrix.hpp"
#include "fstomo/measurement.hpp"
#include "fstomo/reconstruction.hpp"
#include "fstomo/state_model.hpp"

namespace fstomo {

inline constexpr const char* kToolVersion = "0.1.0";

struct OutputGridSpec {
    double center_max = 6.0;
    int center_count = 9;
    double offset_max = 2.0;
    int offset_count = 5;

    std::vector<double> centers() const;
    std::vector<double> offsets() const;
    void validate() const;
};

struct PhaseAverageSpec {
    int points = 16;
    std::string method = "matrices";
};

/// Everything a run needs; parsed from JSON, schema-validated.
struct RunConfig {
    StateSpec state;
    FieldScale scale;
    DetectorModel detector;
    int alpha_count = 8;
    std::vector<int> psi_counts;
    std::vector<double> phi_ref;
    std::optional<PhaseAverageSpec> phase_average;  // delta-psi dataset layout
    QuadratureGrid grid;
    int samples_per_setting = 100000;
    uint64_t seed = 1;
    DataMode mode = DataMode::analytic;
    std::optional<RegularizationFilter> filter;
    QuadParams quad;
    OutputGridSpec output;

    ControlGrid control_grid() const;
    std::string canonical_text() const;  // deterministic serialization for hashing
    std::string hash() const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
StateSpec parse_state_spec(const nlohmann::json& j);

/// Write-to-temp-then-rename; no partial files.
void atomic_write(const std::filesystem::path& path, const std::string& content);

void save_dataset(const SumFieldDataset& ds, const std::filesystem::path& json_path,
                  const std::string& config_hash);
SumFieldDataset load_dataset(const std::filesystem::path& json_path);

void save_matrix(const FsDensityMatrix& m, const std::filesystem::path& path);
FsDensityMatrix load_matrix(const std::filesystem::path& path);

nlohmann::json compare_report(const CompareMetrics& metrics, const FsDensityMatrix& a,
                              int fock_diag_levels);

std::string format_double(double v);  // %.17g

}  // namespace fstomo
