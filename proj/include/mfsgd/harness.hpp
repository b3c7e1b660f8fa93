#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mfsgd/core.hpp"
#include "mfsgd/fluctuation.hpp"
#include "mfsgd/meanfield.hpp"
#include "mfsgd/sgd.hpp"
#include "mfsgd/sobolev.hpp"
#include "mfsgd/spde.hpp"

#include <json.hpp>

namespace mfsgd {

inline constexpr const char* kCodeVersion = "mfsgd 0.1.0";

// ---------------------------------------------------------------------------
// experiment specification
// ---------------------------------------------------------------------------

enum class ExperimentKind { LlnRate, CltGauss, QvMatch, SpdeCompare, RemainderScaling };

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from(const std::string& name);

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::LlnRate;
    std::string out_dir = "out";
    std::uint64_t master_seed = 1;
    int threads = 1;

    // model
    int d = 1;
    std::string activation = "tanh";
    double alpha = 1.0;
    double horizon = 1.0;
    DataDistribution dataset;
    InitLaw init;

    // sweep
    std::vector<std::size_t> sweep_n;
    std::size_t replicas = 1;

    // reference ensemble
    std::size_t ref_m = 100000;
    double ref_h = 1e-3;
    double coupled_h = 1e-2;
    std::size_t pilot_m = 2000;

    // grids and fields
    std::vector<double> time_grid;  // defaults to {0, T/4, T/2, 3T/4, T}
    std::size_t gamma_grid_points = 65;
    std::size_t n_fields = 5;  // leading sine modes collected per sample
    double co_inflation = 1.25;
    int dual_norm_a_max = 8;
    bool collect_xi_norms = false;
    bool collect_martingale = false;

    // galerkin / spde-compare
    std::size_t galerkin_modes = 8;
    std::size_t galerkin_modes_alt = 16;
    std::size_t spde_paths = 10000;
    double spde_dt = 1e-3;
    std::size_t compare_block = 4;      // leading block of the covariance comparison
    std::string samples_file;           // reuse replica samples from a clt-gauss run

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentSpec from_json(const nlohmann::json& j);
    static ExperimentSpec from_json_file(const std::string& path);
    std::string canonical_hash() const;
};

// canonical 3-point dataset used by the examples and default CLI runs
DataDistribution default_dataset();
ExperimentSpec default_spec(ExperimentKind kind);

nlohmann::json dataset_to_json(const DataDistribution& dist);
DataDistribution dataset_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

struct ManifestFile {
    std::string path;  // relative to the manifest directory
    std::string digest;
    std::uint64_t bytes = 0;
};

struct CellRecord {
    std::string id;
    std::string status;  // "ok" | "failed"
    std::string message;
};

struct RunManifest {
    std::string spec_hash;
    std::uint64_t master_seed = 0;
    std::string code_version;
    std::string created_utc;
    std::string kind;
    std::vector<ManifestFile> files;
    std::vector<CellRecord> cells;
    nlohmann::json results;

    bool has_failures() const;
    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

// ---------------------------------------------------------------------------
// shared reference bundle
// ---------------------------------------------------------------------------

// One large deterministic reference run shared by every experiment with the
// same model parameters: the Sobolev domain sized from a pilot run, the
// L2-normalized sine modes, and the mean-field trajectory with moment traces
// for those modes on the full step grid.
struct ReferenceBundle {
    SobolevDomain domain;          // order = J1 (dual-norm diagnostics)
    std::vector<SineMode> modes;   // L2-normalized leading modes (trace fields)
    MeanFieldTrajectory trajectory;
    double pilot_bound = 0.0;      // observed bound from the pilot run
    std::size_t support_violations = 0;
};

// Builds (or fetches from the in-process cache) the reference bundle with at
// least `min_modes` trace modes.
std::shared_ptr<const ReferenceBundle> get_reference(const ExperimentSpec& spec,
                                                     std::size_t min_modes);

// ---------------------------------------------------------------------------
// orchestration
// ---------------------------------------------------------------------------

// Runs every cell of the experiment, writes sample files, statistics tables,
// plot-data series and the manifest under spec.out_dir. Deterministic given
// the spec: rerunning produces byte-identical sample files.
RunManifest run_experiment(const ExperimentSpec& spec);

// Renders a manifest into a human-readable summary; verifies every file
// digest first and throws std::runtime_error on mismatch or missing files.
std::string report(const std::string& manifest_path);

// Deterministic worker pool over independent cells; results are collected by
// index so any thread count yields identical output.
void parallel_for_cells(std::size_t n_cells, int threads,
                        const std::function<void(std::size_t)>& cell_fn);

// Columnar export of ensemble snapshots: t, i, c, w1..wd.
std::string snapshots_to_csv(const std::vector<double>& grid,
                             const std::vector<ParticleEnsemble>& snapshots);

std::string format_double(double v);
std::uint64_t file_digest(const std::string& path);

}  // namespace mfsgd
