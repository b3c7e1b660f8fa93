#include "mfsgd/harness.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mfsgd {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::LlnRate: return "lln-rate";
        case ExperimentKind::CltGauss: return "clt-gauss";
        case ExperimentKind::QvMatch: return "qv-match";
        case ExperimentKind::SpdeCompare: return "spde-compare";
        case ExperimentKind::RemainderScaling: return "remainder-scaling";
    }
    return "?";
}

ExperimentKind experiment_kind_from(const std::string& name) {
    if (name == "lln-rate") return ExperimentKind::LlnRate;
    if (name == "clt-gauss") return ExperimentKind::CltGauss;
    if (name == "qv-match") return ExperimentKind::QvMatch;
    if (name == "spde-compare") return ExperimentKind::SpdeCompare;
    if (name == "remainder-scaling") return ExperimentKind::RemainderScaling;
    throw std::invalid_argument("unknown experiment kind: " + name);
}

DataDistribution default_dataset() {
    return DataDistribution::make(1, {-1.0, 0.2, 0.9}, {0.4, -0.2, 0.7}, {0.3, 0.4, 0.3}, 1.0);
}

ExperimentSpec default_spec(ExperimentKind kind) {
    ExperimentSpec spec;
    spec.kind = kind;
    spec.dataset = default_dataset();
    spec.init.c_lo = -1.0;
    spec.init.c_hi = 1.0;
    spec.init.w_lo = {-1.0};
    spec.init.w_hi = {1.0};
    spec.sweep_n = {250};
    spec.replicas = 4;
    const double t = spec.horizon;
    spec.time_grid = {0.0, 0.25 * t, 0.5 * t, 0.75 * t, t};
    spec.gamma_grid_points = 101;
    return spec;
}

void ExperimentSpec::validate() const {
    if (out_dir.empty()) throw std::invalid_argument("spec: output directory required");
    if (sweep_n.empty()) throw std::invalid_argument("spec: N sweep must be non-empty");
    if (replicas < 1) throw std::invalid_argument("spec: replica count must be >= 1");
    if (time_grid.empty()) throw std::invalid_argument("spec: time grid must be non-empty");
    for (double t : time_grid) {
        if (t < 0.0 || t > horizon + 1e-12) {
            throw std::invalid_argument("spec: time grid outside [0, T]");
        }
    }
    if (!(alpha > 0.0) || !(horizon > 0.0)) throw std::invalid_argument("spec: alpha, T must be > 0");
    if (dataset.size() == 0) throw std::invalid_argument("spec: dataset required");
    if (dataset.d != d) throw std::invalid_argument("spec: dataset dimension mismatch");
    init.validate(d);
    if (n_fields < 1) throw std::invalid_argument("spec: need at least one test function");
    if (gamma_grid_points < 3) throw std::invalid_argument("spec: gamma grid too small");
}

json dataset_to_json(const DataDistribution& dist) {
    json points = json::array();
    for (std::size_t m = 0; m < dist.size(); ++m) {
        json row = json::array();
        for (double xv : dist.x_row(m)) row.push_back(xv);
        row.push_back(dist.y[m]);
        points.push_back(row);
    }
    return json{{"d", dist.d},
                {"points", points},
                {"weights", dist.p},
                {"support_bound", dist.support_bound}};
}

DataDistribution dataset_from_json(const json& j) {
    const int d = j.at("d").get<int>();
    std::vector<double> x, y;
    for (const auto& row : j.at("points")) {
        if (static_cast<int>(row.size()) != d + 1) {
            throw std::invalid_argument("dataset: each point needs d coordinates plus y");
        }
        for (int q = 0; q < d; ++q) x.push_back(row[static_cast<std::size_t>(q)].get<double>());
        y.push_back(row[static_cast<std::size_t>(d)].get<double>());
    }
    return DataDistribution::make(d, std::move(x), std::move(y),
                                  j.at("weights").get<std::vector<double>>(),
                                  j.at("support_bound").get<double>());
}

json run_config_to_json(const RunConfig& config) {
    return json{{"n", config.n},
                {"horizon", config.horizon},
                {"alpha", config.alpha},
                {"seed", config.seed},
                {"d", config.d},
                {"replicas", config.replicas},
                {"init",
                 {{"c", {config.init.c_lo, config.init.c_hi}},
                  {"w_lo", config.init.w_lo},
                  {"w_hi", config.init.w_hi}}}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig config;
    config.n = j.at("n").get<std::size_t>();
    config.horizon = j.at("horizon").get<double>();
    config.alpha = j.at("alpha").get<double>();
    config.seed = j.at("seed").get<std::uint64_t>();
    config.d = j.at("d").get<int>();
    config.replicas = j.value("replicas", std::size_t{1});
    const auto& init = j.at("init");
    config.init.c_lo = init.at("c")[0].get<double>();
    config.init.c_hi = init.at("c")[1].get<double>();
    config.init.w_lo = init.at("w_lo").get<std::vector<double>>();
    config.init.w_hi = init.at("w_hi").get<std::vector<double>>();
    config.validate();
    return config;
}

json ExperimentSpec::to_json() const {
    return json{
        {"kind", mfsgd::to_string(kind)},
        {"out_dir", out_dir},
        {"master_seed", master_seed},
        {"threads", threads},
        {"model",
         {{"d", d},
          {"activation", activation},
          {"alpha", alpha},
          {"horizon", horizon},
          {"dataset", dataset_to_json(dataset)},
          {"init",
           {{"c", {init.c_lo, init.c_hi}}, {"w_lo", init.w_lo}, {"w_hi", init.w_hi}}}}},
        {"sweep_n", sweep_n},
        {"replicas", replicas},
        {"reference",
         {{"m", ref_m}, {"h", ref_h}, {"coupled_h", coupled_h}, {"pilot_m", pilot_m}}},
        {"grids", {{"time_grid", time_grid}, {"gamma_points", gamma_grid_points}}},
        {"fields",
         {{"count", n_fields},
          {"co_inflation", co_inflation},
          {"dual_norm_a_max", dual_norm_a_max},
          {"collect_xi_norms", collect_xi_norms},
          {"collect_martingale", collect_martingale}}},
        {"galerkin",
         {{"modes", galerkin_modes},
          {"modes_alt", galerkin_modes_alt},
          {"paths", spde_paths},
          {"dt", spde_dt},
          {"compare_block", compare_block},
          {"samples_file", samples_file}}}};
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
    ExperimentSpec spec;
    spec.kind = experiment_kind_from(j.at("kind").get<std::string>());
    spec.out_dir = j.value("out_dir", std::string{"out"});
    spec.master_seed = j.value("master_seed", std::uint64_t{1});
    spec.threads = j.value("threads", 1);
    const auto& model = j.at("model");
    spec.d = model.value("d", 1);
    spec.activation = model.value("activation", std::string{"tanh"});
    spec.alpha = model.value("alpha", 1.0);
    spec.horizon = model.value("horizon", 1.0);
    if (model.at("dataset").contains("file")) {
        std::ifstream in(model.at("dataset").at("file").get<std::string>());
        if (!in) throw std::runtime_error("cannot open dataset file");
        json dj;
        in >> dj;
        spec.dataset = dataset_from_json(dj);
    } else {
        spec.dataset = dataset_from_json(model.at("dataset"));
    }
    if (model.contains("init")) {
        const auto& init = model.at("init");
        spec.init.c_lo = init.at("c")[0].get<double>();
        spec.init.c_hi = init.at("c")[1].get<double>();
        spec.init.w_lo = init.at("w_lo").get<std::vector<double>>();
        spec.init.w_hi = init.at("w_hi").get<std::vector<double>>();
    } else {
        spec.init.w_lo.assign(static_cast<std::size_t>(spec.d), -1.0);
        spec.init.w_hi.assign(static_cast<std::size_t>(spec.d), 1.0);
    }
    spec.sweep_n = j.value("sweep_n", std::vector<std::size_t>{});
    spec.replicas = j.value("replicas", std::size_t{1});
    if (j.contains("reference")) {
        const auto& ref = j.at("reference");
        spec.ref_m = ref.value("m", spec.ref_m);
        spec.ref_h = ref.value("h", spec.ref_h);
        spec.coupled_h = ref.value("coupled_h", spec.coupled_h);
        spec.pilot_m = ref.value("pilot_m", spec.pilot_m);
    }
    if (j.contains("grids")) {
        spec.time_grid = j.at("grids").value("time_grid", std::vector<double>{});
        spec.gamma_grid_points = j.at("grids").value("gamma_points", std::size_t{101});
    }
    if (spec.time_grid.empty()) {
        const double t = spec.horizon;
        spec.time_grid = {0.0, 0.25 * t, 0.5 * t, 0.75 * t, t};
    }
    if (j.contains("fields")) {
        const auto& f = j.at("fields");
        spec.n_fields = f.value("count", spec.n_fields);
        spec.co_inflation = f.value("co_inflation", spec.co_inflation);
        spec.dual_norm_a_max = f.value("dual_norm_a_max", spec.dual_norm_a_max);
        spec.collect_xi_norms = f.value("collect_xi_norms", spec.collect_xi_norms);
        spec.collect_martingale = f.value("collect_martingale", spec.collect_martingale);
    }
    if (j.contains("galerkin")) {
        const auto& g = j.at("galerkin");
        spec.galerkin_modes = g.value("modes", spec.galerkin_modes);
        spec.galerkin_modes_alt = g.value("modes_alt", spec.galerkin_modes_alt);
        spec.spde_paths = g.value("paths", spec.spde_paths);
        spec.spde_dt = g.value("dt", spec.spde_dt);
        spec.compare_block = g.value("compare_block", spec.compare_block);
        spec.samples_file = g.value("samples_file", spec.samples_file);
    }
    return spec;
}

ExperimentSpec ExperimentSpec::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open spec file: " + path);
    json j;
    in >> j;
    return from_json(j);
}

std::string ExperimentSpec::canonical_hash() const {
    const std::string dump = to_json().dump();
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(dump.data(), dump.size())));
    return buf;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

bool RunManifest::has_failures() const {
    for (const auto& c : cells) {
        if (c.status != "ok") return true;
    }
    return false;
}

json RunManifest::to_json() const {
    json jf = json::array();
    for (const auto& f : files) {
        jf.push_back({{"path", f.path}, {"digest", f.digest}, {"bytes", f.bytes}});
    }
    json jc = json::array();
    for (const auto& c : cells) {
        jc.push_back({{"id", c.id}, {"status", c.status}, {"message", c.message}});
    }
    return json{{"spec_hash", spec_hash}, {"master_seed", master_seed},
                {"code_version", code_version}, {"created_utc", created_utc},
                {"kind", kind},          {"files", jf},
                {"cells", jc},           {"results", results}};
}

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    m.spec_hash = j.at("spec_hash").get<std::string>();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.code_version = j.at("code_version").get<std::string>();
    m.created_utc = j.at("created_utc").get<std::string>();
    m.kind = j.at("kind").get<std::string>();
    for (const auto& f : j.at("files")) {
        m.files.push_back({f.at("path").get<std::string>(), f.at("digest").get<std::string>(),
                           f.at("bytes").get<std::uint64_t>()});
    }
    for (const auto& c : j.at("cells")) {
        m.cells.push_back({c.at("id").get<std::string>(), c.at("status").get<std::string>(),
                           c.at("message").get<std::string>()});
    }
    m.results = j.at("results");
    return m;
}

void RunManifest::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    json j;
    in >> j;
    return from_json(j);
}

std::uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file for digest: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
        if (!in) break;
    }
    return h;
}

namespace {

std::string digest_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Writes experiment outputs and tracks (path, digest, bytes) for the manifest.
class OutputWriter {
public:
    explicit OutputWriter(std::string base) : base_(std::move(base)) {
        fs::create_directories(base_);
    }

    void write(const std::string& rel, const std::string& content) {
        const std::string full = base_ + "/" + rel;
        fs::create_directories(fs::path(full).parent_path());
        std::ofstream out(full, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write output file: " + full);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.close();
        files_.push_back({rel, digest_hex(fnv1a64(content.data(), content.size())),
                          static_cast<std::uint64_t>(content.size())});
    }

    const std::vector<ManifestFile>& files() const { return files_; }

private:
    std::string base_;
    std::vector<ManifestFile> files_;
};

}  // namespace

void parallel_for_cells(std::size_t n_cells, int threads,
                        const std::function<void(std::size_t)>& cell_fn) {
    if (threads <= 1 || n_cells <= 1) {
        for (std::size_t i = 0; i < n_cells; ++i) cell_fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int k = std::min<int>(threads, static_cast<int>(n_cells));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(k));
    for (int w = 0; w < k; ++w) {
        pool.emplace_back([&, w] {
            try {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= n_cells) break;
                    cell_fn(i);
                }
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::string snapshots_to_csv(const std::vector<double>& grid,
                             const std::vector<ParticleEnsemble>& snapshots) {
    std::ostringstream out;
    const int d = snapshots.empty() ? 0 : snapshots.front().d;
    out << "t,i,c";
    for (int j = 1; j <= d; ++j) out << ",w" << j;
    out << '\n';
    for (std::size_t s = 0; s < snapshots.size(); ++s) {
        const auto& ens = snapshots[s];
        for (std::size_t i = 0; i < ens.size(); ++i) {
            out << format_double(grid[s]) << ',' << i << ',' << format_double(ens.c[i]);
            for (double wv : ens.w_row(i)) out << ',' << format_double(wv);
            out << '\n';
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// reference bundle
// ---------------------------------------------------------------------------

namespace {

json reference_key_json(const ExperimentSpec& spec) {
    return json{{"dataset", dataset_to_json(spec.dataset)},
                {"activation", spec.activation},
                {"alpha", spec.alpha},
                {"horizon", spec.horizon},
                {"d", spec.d},
                {"init",
                 {{"c", {spec.init.c_lo, spec.init.c_hi}},
                  {"w_lo", spec.init.w_lo},
                  {"w_hi", spec.init.w_hi}}},
                {"ref_m", spec.ref_m},
                {"ref_h", spec.ref_h},
                {"pilot_m", spec.pilot_m},
                {"co_inflation", spec.co_inflation},
                {"time_grid", spec.time_grid},
                {"master_seed", spec.master_seed}};
}

std::vector<double> reference_snapshot_grid(const ExperimentSpec& spec) {
    std::vector<double> grid = spec.time_grid;
    grid.push_back(0.0);
    grid.push_back(spec.horizon);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end(),
                           [](double a, double b) { return std::abs(a - b) < 1e-12; }),
               grid.end());
    return grid;
}

}  // namespace

std::shared_ptr<const ReferenceBundle> get_reference(const ExperimentSpec& spec,
                                                     std::size_t min_modes) {
    static std::mutex mutex;
    static std::map<std::string, std::shared_ptr<const ReferenceBundle>> cache;

    const std::string key = reference_key_json(spec).dump();
    {
        std::lock_guard<std::mutex> lock(mutex);
        auto it = cache.find(key);
        if (it != cache.end() && it->second->modes.size() >= min_modes) return it->second;
    }

    const Activation act = activation_from_name(spec.activation);
    const std::size_t n_modes = std::max<std::size_t>(min_modes, 16);

    // pilot run to size the box; cheap and deterministic
    auto bundle = std::make_shared<ReferenceBundle>();
    {
        Rng pilot_rng(derive_key(spec.master_seed, {tag64("pilot")}));
        ParticleEnsemble pilot =
            draw_initial_ensemble(std::min(spec.pilot_m, spec.ref_m), spec.d, spec.init, pilot_rng);
        const double pilot_h = std::max(spec.ref_h, spec.horizon / 200.0);
        MeanFieldTrajectory pt = integrate_meanfield(pilot, spec.dataset, spec.alpha, act,
                                                     spec.horizon, pilot_h, {});
        bundle->pilot_bound = pt.observed_bound;
    }
    const double c_o = spec.co_inflation * bundle->pilot_bound;
    bundle->domain =
        SobolevDomain::from_support(spec.d + 1, c_o, SobolevDomain::order_uniform_bound(spec.d + 1));
    bundle->modes = leading_modes(bundle->domain, n_modes, 0);

    Rng ref_rng(derive_key(spec.master_seed, {tag64("reference")}));
    ParticleEnsemble init = draw_initial_ensemble(spec.ref_m, spec.d, spec.init, ref_rng);
    const auto grid = reference_snapshot_grid(spec);
    bundle->trajectory = integrate_meanfield(init, spec.dataset, spec.alpha, act, spec.horizon,
                                             spec.ref_h, grid, bundle->modes, true);
    for (const auto& snap : bundle->trajectory.snapshots) {
        bundle->support_violations += count_outside_support(snap, bundle->domain);
    }

    std::lock_guard<std::mutex> lock(mutex);
    cache[key] = bundle;
    return bundle;
}

// ---------------------------------------------------------------------------
// experiment campaigns
// ---------------------------------------------------------------------------

namespace {

struct CellOutcome {
    bool ok = true;
    std::string message;
};

std::string samples_to_csv(const FluctuationSamples& s) {
    std::ostringstream out;
    out << "replica,t,f_id,eta,xi,z";
    const bool with_m = !s.martingale.empty();
    if (with_m) out << ",sqrtn_m";
    out << '\n';
    for (std::size_t r = 0; r < s.replicas; ++r) {
        for (std::size_t j = 0; j < s.times.size(); ++j) {
            for (std::size_t f = 0; f < s.f_ids.size(); ++f) {
                const std::size_t i = s.idx(r, j, f);
                out << r << ',' << format_double(s.times[j]) << ',' << s.f_ids[f] << ','
                    << format_double(s.eta[i]) << ',' << format_double(s.xi[i]) << ','
                    << format_double(s.z[i]);
                if (with_m) out << ',' << format_double(s.martingale[i]);
                out << '\n';
            }
        }
    }
    return out.str();
}

FluctuationSamples samples_from_csv_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("samples csv: empty file");
    const bool with_m = line.find("sqrtn_m") != std::string::npos;

    struct Row {
        std::size_t r;
        double t;
        std::string f;
        double eta, xi, z, m;
    };
    std::vector<Row> rows;
    std::vector<double> times;
    std::vector<std::string> f_ids;
    std::size_t max_r = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Row row;
        std::string tok;
        std::getline(ls, tok, ',');
        row.r = std::stoul(tok);
        std::getline(ls, tok, ',');
        row.t = std::stod(tok);
        std::getline(ls, row.f, ',');
        std::getline(ls, tok, ',');
        row.eta = std::stod(tok);
        std::getline(ls, tok, ',');
        row.xi = std::stod(tok);
        std::getline(ls, tok, ',');
        row.z = std::stod(tok);
        row.m = 0.0;
        if (with_m && std::getline(ls, tok, ',')) row.m = std::stod(tok);
        rows.push_back(row);
        max_r = std::max(max_r, row.r);
        bool seen_t = false;
        for (double t : times) seen_t = seen_t || std::abs(t - row.t) < 1e-12;
        if (!seen_t) times.push_back(row.t);
        bool seen_f = false;
        for (const auto& f : f_ids) seen_f = seen_f || f == row.f;
        if (!seen_f) f_ids.push_back(row.f);
    }
    FluctuationSamples s;
    s.times = times;
    s.f_ids = f_ids;
    s.replicas = max_r + 1;
    const std::size_t total = s.replicas * times.size() * f_ids.size();
    s.eta.assign(total, 0.0);
    s.xi.assign(total, 0.0);
    s.z.assign(total, 0.0);
    if (with_m) s.martingale.assign(total, 0.0);
    for (const auto& row : rows) {
        std::size_t j = 0, f = 0;
        while (std::abs(times[j] - row.t) > 1e-12) ++j;
        while (f_ids[f] != row.f) ++f;
        const std::size_t i = s.idx(row.r, j, f);
        s.eta[i] = row.eta;
        s.xi[i] = row.xi;
        s.z[i] = row.z;
        if (with_m) s.martingale[i] = row.m;
    }
    return s;
}

// One full replica campaign at a fixed width: SGD runs coupled with the
// deterministic tilde system, eta/xi/z pairings per (time, mode), optional
// Xi dual norms and martingale samples.
struct CampaignOutput {
    FluctuationSamples samples;
    std::vector<double> xi_norm_times;
    std::vector<double> xi_norms;  // [replica][time]
    std::size_t support_violations = 0;
    std::vector<CellRecord> cells;
};

CampaignOutput replica_campaign(const ExperimentSpec& spec, const ReferenceBundle& ref,
                                std::size_t width) {
    const Activation act = activation_from_name(spec.activation);
    const std::size_t n_f = std::min(spec.n_fields, ref.modes.size());
    const std::size_t n_t = spec.time_grid.size();

    CampaignOutput out;
    out.samples.times = spec.time_grid;
    out.samples.replicas = spec.replicas;
    out.samples.n = width;
    for (std::size_t f = 0; f < n_f; ++f) out.samples.f_ids.push_back(ref.modes[f].id());
    out.samples.eta.assign(spec.replicas * n_t * n_f, 0.0);
    out.samples.xi.assign(spec.replicas * n_t * n_f, 0.0);
    out.samples.z.assign(spec.replicas * n_t * n_f, 0.0);
    if (spec.collect_martingale) out.samples.martingale.assign(spec.replicas * n_t * n_f, 0.0);

    if (spec.collect_xi_norms) {
        for (double t : spec.time_grid) {
            if (t > 0.0 && (std::abs(t - 0.5 * spec.horizon) < 1e-12 ||
                            std::abs(t - spec.horizon) < 1e-12)) {
                out.xi_norm_times.push_back(t);
            }
        }
        out.xi_norms.assign(spec.replicas * out.xi_norm_times.size(), 0.0);
    }

    // reference pairings shared by all replicas
    std::vector<double> ref_pair(n_t * n_f);
    for (std::size_t j = 0; j < n_t; ++j) {
        for (std::size_t f = 0; f < n_f; ++f) {
            ref_pair[j * n_f + f] = meanfield_pairing(ref.trajectory, ref.modes[f], spec.time_grid[j]);
        }
    }

    std::vector<CellOutcome> outcomes(spec.replicas);
    std::vector<std::size_t> violations(spec.replicas, 0);
    std::mutex io_mutex;

    parallel_for_cells(spec.replicas, spec.threads, [&](std::size_t r) {
        try {
            RunConfig config;
            config.n = width;
            config.horizon = spec.horizon;
            config.alpha = spec.alpha;
            config.d = spec.d;
            config.init = spec.init;
            config.seed = derive_key(spec.master_seed, {tag64("replica"), r});

            MartingaleDiagnostics diag;
            SgdTrajectory sgd;
            if (spec.collect_martingale) {
                std::vector<SineMode> fields(ref.modes.begin(), ref.modes.begin() + n_f);
                sgd = run_sgd_diag<SineMode>(config, spec.dataset, act, spec.time_grid, fields,
                                             &diag);
            } else {
                sgd = run_sgd(config, spec.dataset, act, spec.time_grid);
            }
            MeanFieldTrajectory coupled =
                integrate_meanfield(sgd.snapshot_at(0.0), spec.dataset, spec.alpha, act,
                                    spec.horizon, spec.coupled_h, spec.time_grid);

            const double sqn = std::sqrt(static_cast<double>(width));
            for (std::size_t j = 0; j < n_t; ++j) {
                const ParticleEnsemble& mu_n = sgd.snapshots[j];
                const ParticleEnsemble& mu_c = coupled.snapshots[j];
                violations[r] += count_outside_support(mu_n, ref.domain);
                for (std::size_t f = 0; f < n_f; ++f) {
                    const SineMode& mode = ref.modes[f];
                    const double a = pair_measure(
                        mu_n, [&](double c, std::span<const double> w) { return mode.value(c, w); });
                    const double b = pair_measure(
                        mu_c, [&](double c, std::span<const double> w) { return mode.value(c, w); });
                    const double c_ref = ref_pair[j * n_f + f];
                    const std::size_t i = out.samples.idx(r, j, f);
                    out.samples.eta[i] = sqn * (a - c_ref);
                    out.samples.xi[i] = sqn * (a - b);
                    out.samples.z[i] = sqn * (b - c_ref);
                    if (spec.collect_martingale) {
                        const auto& inc = diag.fields[f].increments;
                        const std::int64_t k_t = steps_for(width, spec.time_grid[j]);
                        CompensatedSum msum;
                        for (std::int64_t k = 0; k < k_t; ++k) {
                            msum.add(inc[static_cast<std::size_t>(k)]);
                        }
                        out.samples.martingale[i] = sqn * msum.value();
                    }
                }
            }
            for (std::size_t q = 0; q < out.xi_norm_times.size(); ++q) {
                const double t = out.xi_norm_times[q];
                SignedParticleMeasure xi_measure;
                xi_measure.terms.push_back({sqn, &sgd.snapshot_at(t)});
                xi_measure.terms.push_back({-sqn, &coupled.snapshot_at(t)});
                const DualNormResult res =
                    dual_norm_truncated(xi_measure, ref.domain, spec.dual_norm_a_max);
                out.xi_norms[r * out.xi_norm_times.size() + q] = res.value;
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(io_mutex);
            outcomes[r] = {false, e.what()};
        }
    });

    for (std::size_t r = 0; r < spec.replicas; ++r) {
        out.support_violations += violations[r];
        CellRecord rec;
        rec.id = "n" + std::to_string(width) + "/r" + std::to_string(r);
        rec.status = outcomes[r].ok ? "ok" : "failed";
        rec.message = outcomes[r].message;
        out.cells.push_back(std::move(rec));
    }
    return out;
}

json checks_entry(const std::string& name, double value, double lo, double hi) {
    return json{{"name", name}, {"value", value}, {"lo", lo}, {"hi", hi},
                {"pass", value >= lo && value <= hi}};
}

std::string plot_csv(const std::vector<std::array<double, 3>>& rows) {
    std::ostringstream out;
    out << "x,y,err\n";
    for (const auto& row : rows) {
        out << format_double(row[0]) << ',' << format_double(row[1]) << ','
            << format_double(row[2]) << '\n';
    }
    return out.str();
}

void run_lln_rate(const ExperimentSpec& spec, const ReferenceBundle& ref, OutputWriter& out,
                  RunManifest& manifest) {
    const Activation act = activation_from_name(spec.activation);
    const SineMode& f = ref.modes[0];
    const double ref_t = meanfield_pairing(ref.trajectory, f, spec.horizon);
    const std::vector<double> grid{spec.horizon};

    std::vector<double> mean_err(spec.sweep_n.size(), 0.0), se_err(spec.sweep_n.size(), 0.0);
    std::ostringstream errors_csv;
    errors_csv << "n,replica,abs_err\n";

    for (std::size_t q = 0; q < spec.sweep_n.size(); ++q) {
        const std::size_t width = spec.sweep_n[q];
        std::vector<double> errs(spec.replicas, 0.0);
        std::vector<CellOutcome> outcomes(spec.replicas);
        parallel_for_cells(spec.replicas, spec.threads, [&](std::size_t r) {
            try {
                RunConfig config;
                config.n = width;
                config.horizon = spec.horizon;
                config.alpha = spec.alpha;
                config.d = spec.d;
                config.init = spec.init;
                config.seed = derive_key(spec.master_seed, {tag64("replica"), r});
                SgdTrajectory traj = run_sgd(config, spec.dataset, act, grid);
                const double v = pair_measure(traj.snapshots[0], [&](double c, std::span<const double> w) {
                    return f.value(c, w);
                });
                errs[r] = std::abs(v - ref_t);
            } catch (const std::exception& e) {
                outcomes[r] = {false, e.what()};
            }
        });
        double mean = 0.0;
        for (double e : errs) mean += e;
        mean /= static_cast<double>(spec.replicas);
        double var = 0.0;
        for (double e : errs) var += (e - mean) * (e - mean);
        var /= std::max<double>(1.0, static_cast<double>(spec.replicas - 1));
        mean_err[q] = mean;
        se_err[q] = std::sqrt(var / static_cast<double>(spec.replicas));
        for (std::size_t r = 0; r < spec.replicas; ++r) {
            errors_csv << width << ',' << r << ',' << format_double(errs[r]) << '\n';
            manifest.cells.push_back({"n" + std::to_string(width) + "/r" + std::to_string(r),
                                      outcomes[r].ok ? "ok" : "failed", outcomes[r].message});
        }
    }

    std::vector<double> nvals(spec.sweep_n.begin(), spec.sweep_n.end());
    const RateFit fit = rate_fit(nvals, mean_err);

    out.write("lln_errors.csv", errors_csv.str());
    std::vector<std::array<double, 3>> plot;
    std::ostringstream table;
    table << "n,mean_abs_err,se,replicas\n";
    for (std::size_t q = 0; q < spec.sweep_n.size(); ++q) {
        table << spec.sweep_n[q] << ',' << format_double(mean_err[q]) << ','
              << format_double(se_err[q]) << ',' << spec.replicas << '\n';
        plot.push_back({static_cast<double>(spec.sweep_n[q]), mean_err[q], se_err[q]});
    }
    out.write("lln_summary.csv", table.str());
    out.write("plot_lln.csv", plot_csv(plot));

    manifest.results["slope"] = fit.slope;
    manifest.results["intercept"] = fit.intercept;
    manifest.results["r_squared"] = fit.r_squared;
    manifest.results["reference_pairing"] = ref_t;
    manifest.results["support_violations"] = ref.support_violations;
    manifest.results["checks"] = json::array({checks_entry("lln_rate_slope", fit.slope, -0.65, -0.35)});
}

void run_clt_gauss(const ExperimentSpec& spec, const ReferenceBundle& ref, OutputWriter& out,
                   RunManifest& manifest) {
    const double significance = 0.01;
    json per_n = json::array();
    json checks = json::array();

    for (std::size_t q = 0; q < spec.sweep_n.size(); ++q) {
        const std::size_t width = spec.sweep_n[q];
        CampaignOutput campaign = replica_campaign(spec, ref, width);
        for (auto& c : campaign.cells) manifest.cells.push_back(c);
        const std::string tag = "n" + std::to_string(width);
        out.write("samples_" + tag + ".csv", samples_to_csv(campaign.samples));

        json block;
        block["n"] = width;
        block["support_violations"] = campaign.support_violations;
        block["decomposition_defect"] = campaign.samples.decomposition_defect();

        // KS per (t > 0, field)
        std::ostringstream ks_csv;
        ks_csv << "t,f_id,n_samples,statistic,p_value,reject\n";
        json ks_results = json::array();
        if (spec.replicas >= 50) {
            for (std::size_t j = 0; j < campaign.samples.times.size(); ++j) {
                const double t = campaign.samples.times[j];
                if (t <= 0.0) continue;
                for (std::size_t f = 0; f < campaign.samples.f_ids.size(); ++f) {
                    const auto col = campaign.samples.eta_column(t, f);
                    const GaussianityResult g = gaussianity_test(col, significance);
                    ks_csv << format_double(t) << ',' << campaign.samples.f_ids[f] << ','
                           << col.size() << ',' << format_double(g.statistic) << ','
                           << format_double(g.p_value) << ',' << (g.reject ? 1 : 0) << '\n';
                    ks_results.push_back({{"t", t},
                                          {"f_id", campaign.samples.f_ids[f]},
                                          {"statistic", g.statistic},
                                          {"p_value", g.p_value},
                                          {"reject", g.reject}});
                }
            }
        }
        out.write("ks_" + tag + ".csv", ks_csv.str());
        block["ks"] = ks_results;

        // initial fluctuation variance against the reference formula
        {
            const auto col0 = campaign.samples.eta_column(0.0, 0);
            double mean = 0.0;
            for (double v : col0) mean += v;
            mean /= static_cast<double>(col0.size());
            double var = 0.0;
            for (double v : col0) var += (v - mean) * (v - mean);
            var /= static_cast<double>(col0.size() - 1);
            const SineMode& f0 = ref.modes[0];
            const ParticleEnsemble& mu0 = ref.trajectory.snapshot_at(0.0);
            const double m1 = pair_measure(
                mu0, [&](double c, std::span<const double> w) { return f0.value(c, w); });
            const double m2 = pair_measure(mu0, [&](double c, std::span<const double> w) {
                const double v = f0.value(c, w);
                return v * v;
            });
            const double target = m2 - m1 * m1;
            block["var0_sample"] = var;
            block["var0_reference"] = target;
            block["var0_rel_err"] = std::abs(var - target) / target;
        }

        // covariance at final time over the collected fields
        if (spec.replicas >= 30) {
            std::vector<std::size_t> idx(campaign.samples.f_ids.size());
            for (std::size_t f = 0; f < idx.size(); ++f) idx[f] = f;
            const CovarianceEstimate est =
                covariance_estimate(campaign.samples, spec.horizon, idx);
            std::ostringstream cov_csv;
            cov_csv << "f_i,f_j,cov,se\n";
            for (std::size_t a = 0; a < idx.size(); ++a) {
                for (std::size_t b = 0; b < idx.size(); ++b) {
                    cov_csv << campaign.samples.f_ids[a] << ',' << campaign.samples.f_ids[b] << ','
                            << format_double(est.cov.at(a, b)) << ','
                            << format_double(est.se.at(a, b)) << '\n';
                }
            }
            out.write("cov_" + tag + ".csv", cov_csv.str());
        }

        // Xi dual norms
        if (spec.collect_xi_norms && !campaign.xi_norm_times.empty()) {
            std::ostringstream xi_csv;
            xi_csv << "n,t,replica,xi_dual_norm\n";
            json xi_means = json::array();
            for (std::size_t jt = 0; jt < campaign.xi_norm_times.size(); ++jt) {
                double mean = 0.0;
                for (std::size_t r = 0; r < spec.replicas; ++r) {
                    const double v = campaign.xi_norms[r * campaign.xi_norm_times.size() + jt];
                    xi_csv << width << ',' << format_double(campaign.xi_norm_times[jt]) << ',' << r
                           << ',' << format_double(v) << '\n';
                    mean += v;
                }
                mean /= static_cast<double>(spec.replicas);
                xi_means.push_back({{"t", campaign.xi_norm_times[jt]}, {"mean", mean}});
            }
            out.write("xi_norms_" + tag + ".csv", xi_csv.str());
            block["xi_norm_means"] = xi_means;
        }

        per_n.push_back(block);
    }

    manifest.results["per_n"] = per_n;
    manifest.results["reference_observed_bound"] = ref.trajectory.observed_bound;
    manifest.results["domain_c_o"] = ref.domain.c_o;
    manifest.results["domain_box_b"] = ref.domain.box_b;
    manifest.results["checks"] = checks;
}

void run_qv_match(const ExperimentSpec& spec, const ReferenceBundle& ref, OutputWriter& out,
                  RunManifest& manifest) {
    const Activation act = activation_from_name(spec.activation);
    const double limit =
        martingale_variance_limit(ref.trajectory.traces, spec.dataset, spec.alpha, spec.horizon, 0);
    const std::vector<double> grid{spec.horizon};
    std::vector<SineMode> fields{ref.modes[0]};

    std::ostringstream qv_csv;
    qv_csv << "n,replica,qv,limit,rel_err\n";
    json per_n = json::array();
    for (std::size_t q = 0; q < spec.sweep_n.size(); ++q) {
        const std::size_t width = spec.sweep_n[q];
        std::vector<double> qv(spec.replicas, 0.0);
        std::vector<CellOutcome> outcomes(spec.replicas);
        MartingaleDiagnostics first_diag;
        parallel_for_cells(spec.replicas, spec.threads, [&](std::size_t r) {
            try {
                RunConfig config;
                config.n = width;
                config.horizon = spec.horizon;
                config.alpha = spec.alpha;
                config.d = spec.d;
                config.init = spec.init;
                config.seed = derive_key(spec.master_seed, {tag64("replica"), r});
                MartingaleDiagnostics diag;
                run_sgd_diag<SineMode>(config, spec.dataset, act, grid, fields, &diag);
                qv[r] = quadratic_variation(diag, 0, spec.horizon);
                if (r == 0) first_diag = std::move(diag);
            } catch (const std::exception& e) {
                outcomes[r] = {false, e.what()};
            }
        });
        // decomposition diagnostics of the first replica, keyed by (t, f)
        if (!first_diag.fields.empty()) {
            std::ostringstream diag_csv;
            diag_csv << "t,f_id,qv,martingale_sum,drift_sum,v_remainder\n";
            for (double t : spec.time_grid) {
                const auto k = static_cast<std::size_t>(steps_for(width, t));
                for (const auto& fd : first_diag.fields) {
                    CompensatedSum msum, dsum;
                    for (std::size_t s = 0; s < k && s < fd.increments.size(); ++s) {
                        msum.add(fd.increments[s]);
                        dsum.add(fd.drift_integrands[s] / static_cast<double>(width));
                    }
                    diag_csv << format_double(t) << ',' << fd.f_id << ','
                             << format_double(quadratic_variation(first_diag, 0, t)) << ','
                             << format_double(msum.value()) << ',' << format_double(dsum.value())
                             << ',' << format_double(v_remainder_at(first_diag, 0, t)) << '\n';
                }
            }
            out.write("diagnostics_n" + std::to_string(width) + ".csv", diag_csv.str());
        }
        double mean = 0.0;
        for (double v : qv) mean += v;
        mean /= static_cast<double>(spec.replicas);
        for (std::size_t r = 0; r < spec.replicas; ++r) {
            qv_csv << width << ',' << r << ',' << format_double(qv[r]) << ','
                   << format_double(limit) << ','
                   << format_double(std::abs(qv[r] - limit) / limit) << '\n';
            manifest.cells.push_back({"n" + std::to_string(width) + "/r" + std::to_string(r),
                                      outcomes[r].ok ? "ok" : "failed", outcomes[r].message});
        }
        per_n.push_back({{"n", width},
                         {"mean_qv", mean},
                         {"limit", limit},
                         {"rel_err", std::abs(mean - limit) / limit}});
    }
    out.write("qv.csv", qv_csv.str());
    manifest.results["per_n"] = per_n;
    manifest.results["limit"] = limit;
    json checks = json::array();
    if (!per_n.empty()) {
        checks.push_back(
            checks_entry("qv_rel_err", per_n.back().at("rel_err").get<double>(), 0.0, 0.10));
    }
    manifest.results["checks"] = checks;
}

void run_remainder_scaling(const ExperimentSpec& spec, const ReferenceBundle& ref,
                           OutputWriter& out, RunManifest& manifest) {
    const Activation act = activation_from_name(spec.activation);
    std::vector<SineMode> fields{ref.modes[0]};
    const std::vector<double> grid{spec.horizon};

    // Gamma grid must sit on the reference step grid
    std::vector<double> gamma_grid;
    for (std::size_t j = 0; j < spec.gamma_grid_points; ++j) {
        gamma_grid.push_back(spec.horizon * static_cast<double>(j) /
                             static_cast<double>(spec.gamma_grid_points - 1));
    }

    std::ostringstream rem_csv;
    rem_csv << "n,replica,v_sup,r1_sup,gamma1,gamma2\n";
    std::vector<double> v_means, r1_means, gamma_means;
    for (std::size_t q = 0; q < spec.sweep_n.size(); ++q) {
        const std::size_t width = spec.sweep_n[q];
        std::vector<double> vs(spec.replicas), r1s(spec.replicas), g1(spec.replicas),
            g2(spec.replicas);
        std::vector<CellOutcome> outcomes(spec.replicas);
        parallel_for_cells(spec.replicas, spec.threads, [&](std::size_t r) {
            try {
                RunConfig config;
                config.n = width;
                config.horizon = spec.horizon;
                config.alpha = spec.alpha;
                config.d = spec.d;
                config.init = spec.init;
                config.seed = derive_key(spec.master_seed, {tag64("replica"), r});
                GammaAccumulator gamma(spec.dataset, act, spec.alpha, width, gamma_grid,
                                       ref.trajectory.traces, 0, ref.modes[0]);
                MartingaleDiagnostics diag;
                run_sgd_diag<SineMode>(config, spec.dataset, act, grid, fields, &diag,
                                       gamma.observer());
                const RemainderTraces traces = remainder_traces(diag, 0);
                vs[r] = traces.v_sup;
                r1s[r] = traces.r1_sup;
                g1[r] = gamma.gamma1_at_end();
                g2[r] = gamma.gamma2_at_end();
            } catch (const std::exception& e) {
                outcomes[r] = {false, e.what()};
            }
        });
        double vm = 0.0, rm = 0.0, gm = 0.0;
        for (std::size_t r = 0; r < spec.replicas; ++r) {
            vm += vs[r];
            rm += r1s[r];
            gm += std::abs(g1[r]) + std::abs(g2[r]);
            rem_csv << width << ',' << r << ',' << format_double(vs[r]) << ','
                    << format_double(r1s[r]) << ',' << format_double(g1[r]) << ','
                    << format_double(g2[r]) << '\n';
            manifest.cells.push_back({"n" + std::to_string(width) + "/r" + std::to_string(r),
                                      outcomes[r].ok ? "ok" : "failed", outcomes[r].message});
        }
        v_means.push_back(vm / static_cast<double>(spec.replicas));
        r1_means.push_back(rm / static_cast<double>(spec.replicas));
        gamma_means.push_back(gm / static_cast<double>(spec.replicas));
    }
    out.write("remainders.csv", rem_csv.str());

    std::vector<double> nvals(spec.sweep_n.begin(), spec.sweep_n.end());
    const RateFit v_fit = rate_fit(nvals, v_means);
    const RateFit r1_fit = rate_fit(nvals, r1_means);
    const RateFit gamma_fit = rate_fit(nvals, gamma_means);

    std::vector<std::array<double, 3>> plot;
    for (std::size_t q = 0; q < nvals.size(); ++q) plot.push_back({nvals[q], v_means[q], 0.0});
    out.write("plot_v_sup.csv", plot_csv(plot));
    plot.clear();
    for (std::size_t q = 0; q < nvals.size(); ++q) plot.push_back({nvals[q], gamma_means[q], 0.0});
    out.write("plot_gamma.csv", plot_csv(plot));

    manifest.results["v_slope"] = v_fit.slope;
    manifest.results["r1_slope"] = r1_fit.slope;
    manifest.results["gamma_slope"] = gamma_fit.slope;
    manifest.results["v_means"] = v_means;
    manifest.results["r1_means"] = r1_means;
    manifest.results["gamma_means"] = gamma_means;
    manifest.results["checks"] = json::array(
        {checks_entry("v_sup_slope", v_fit.slope, -1.3, -0.7),
         checks_entry("gamma_slope", gamma_fit.slope, -0.7, -0.3)});
}

void run_spde_compare(const ExperimentSpec& spec, const ReferenceBundle& ref, OutputWriter& out,
                      RunManifest& manifest) {
    const Activation act = activation_from_name(spec.activation);
    const std::size_t nm = spec.galerkin_modes;

    // replica covariance of <f_a, eta^N_T>: reuse samples or run the campaign
    FluctuationSamples samples;
    if (!spec.samples_file.empty()) {
        std::ifstream in(spec.samples_file);
        if (!in) throw std::runtime_error("cannot open samples file: " + spec.samples_file);
        std::stringstream buf;
        buf << in.rdbuf();
        samples = samples_from_csv_text(buf.str());
    } else {
        ExperimentSpec inner = spec;
        inner.n_fields = std::max(spec.n_fields, nm);
        CampaignOutput campaign = replica_campaign(inner, ref, spec.sweep_n.front());
        for (auto& c : campaign.cells) manifest.cells.push_back(c);
        samples = std::move(campaign.samples);
        out.write("samples_n" + std::to_string(spec.sweep_n.front()) + ".csv",
                  samples_to_csv(samples));
    }
    if (samples.f_ids.size() < nm) {
        throw std::invalid_argument("spde-compare: samples carry fewer fields than galerkin modes");
    }
    for (std::size_t a = 0; a < nm; ++a) {
        if (samples.f_ids[a] != ref.modes[a].id()) {
            throw std::invalid_argument("spde-compare: samples field order does not match modes");
        }
    }
    std::vector<std::size_t> idx(nm);
    for (std::size_t a = 0; a < nm; ++a) idx[a] = a;
    const CovarianceEstimate replica_cov = covariance_estimate(samples, spec.horizon, idx);

    // Galerkin model at m and at the sensitivity truncation
    const GalerkinSystem sys =
        assemble_galerkin(ref.domain, nm, ref.trajectory, spec.dataset, act, spec.alpha);
    const SpdePaths paths = simulate_spde(sys, spec.spde_paths, spec.spde_dt,
                                          derive_key(spec.master_seed, {tag64("spde")}),
                                          std::vector<double>{spec.horizon});
    const CovarianceEstimate model_cov =
        sample_covariance(paths.rows_at(0), paths.n_paths, paths.n_modes);

    const std::size_t nm_alt = spec.galerkin_modes_alt;
    Matrix alt_cov;
    if (nm_alt > nm && ref.modes.size() >= nm_alt) {
        const GalerkinSystem sys_alt =
            assemble_galerkin(ref.domain, nm_alt, ref.trajectory, spec.dataset, act, spec.alpha);
        const SpdePaths paths_alt = simulate_spde(sys_alt, spec.spde_paths, spec.spde_dt,
                                                  derive_key(spec.master_seed, {tag64("spde-alt")}),
                                                  std::vector<double>{spec.horizon});
        alt_cov = sample_covariance(paths_alt.rows_at(0), paths_alt.n_paths, paths_alt.n_modes).cov;
    }

    // entrywise comparison on the leading block
    const std::size_t block = std::min(spec.compare_block, nm);
    std::ostringstream cmp_csv;
    cmp_csv << "a,b,model_cov,model_se,replica_cov,replica_se,pass\n";
    bool all_pass = true;
    double worst_excess = 0.0;
    for (std::size_t a = 0; a < block; ++a) {
        for (std::size_t b = 0; b < block; ++b) {
            const double mv = model_cov.cov.at(a, b);
            const double rv = replica_cov.cov.at(a, b);
            const double se =
                std::sqrt(model_cov.se.at(a, b) * model_cov.se.at(a, b) +
                          replica_cov.se.at(a, b) * replica_cov.se.at(a, b));
            const double tol = std::max(0.25 * std::abs(rv), 3.0 * se);
            const bool pass = std::abs(mv - rv) <= tol;
            all_pass = all_pass && pass;
            worst_excess = std::max(worst_excess, tol > 0.0 ? std::abs(mv - rv) / tol : 0.0);
            cmp_csv << a << ',' << b << ',' << format_double(mv) << ','
                    << format_double(model_cov.se.at(a, b)) << ',' << format_double(rv) << ','
                    << format_double(replica_cov.se.at(a, b)) << ',' << (pass ? 1 : 0) << '\n';
        }
    }
    out.write("spde_cov.csv", cmp_csv.str());

    // path outputs in the columnar sample format
    {
        std::ostringstream paths_csv;
        paths_csv << "path,t,f_id,h\n";
        for (std::size_t p = 0; p < paths.n_paths; ++p) {
            for (std::size_t a = 0; a < paths.n_modes; ++a) {
                paths_csv << p << ',' << format_double(spec.horizon) << ',' << sys.modes[a].id()
                          << ',' << format_double(paths.data[paths.idx(p, 0, a)]) << '\n';
            }
        }
        out.write("spde_paths.csv", paths_csv.str());
    }

    // matrix archive with grid metadata
    {
        json archive;
        archive["times"] = sys.times;
        archive["modes"] = json::array();
        for (const auto& m : sys.modes) archive["modes"].push_back(m.id());
        archive["sigma0"] = sys.sigma0.a;
        archive["projection_residual"] = sys.projection_residual;
        archive["quadrature_warning"] = sys.quadrature_warning;
        json gflat = json::array(), qflat = json::array();
        for (std::size_t k = 0; k < sys.times.size(); ++k) {
            gflat.push_back(sys.drift[k].a);
            qflat.push_back(sys.noise.rate[k].a);
        }
        archive["drift"] = gflat;
        archive["noise_rate"] = qflat;
        out.write("galerkin_archive.json", archive.dump());
    }

    // truncation sensitivity on the leading block
    double sensitivity = 0.0;
    if (alt_cov.rows >= block) {
        for (std::size_t a = 0; a < block; ++a) {
            for (std::size_t b = 0; b < block; ++b) {
                const double denom = std::abs(model_cov.cov.at(a, b));
                if (denom > 0.0) {
                    sensitivity = std::max(
                        sensitivity, std::abs(alt_cov.at(a, b) - model_cov.cov.at(a, b)) / denom);
                }
            }
        }
    }

    manifest.results["all_pass"] = all_pass;
    manifest.results["worst_excess"] = worst_excess;
    manifest.results["truncation_sensitivity"] = sensitivity;
    manifest.results["projection_residual"] = sys.projection_residual;
    manifest.results["quadrature_warning"] = sys.quadrature_warning;
    manifest.results["checks"] =
        json::array({checks_entry("spde_cov_worst_excess", worst_excess, 0.0, 1.0)});
}

}  // namespace

RunManifest run_experiment(const ExperimentSpec& spec) {
    spec.validate();

    RunManifest manifest;
    manifest.spec_hash = spec.canonical_hash();
    manifest.master_seed = spec.master_seed;
    manifest.code_version = kCodeVersion;
    manifest.created_utc = utc_now();
    manifest.kind = to_string(spec.kind);
    manifest.results = json::object();

    OutputWriter out(spec.out_dir);
    out.write("spec.json", spec.to_json().dump(2) + "\n");

    std::size_t min_modes = std::max<std::size_t>(spec.n_fields, 1);
    if (spec.kind == ExperimentKind::SpdeCompare) {
        min_modes = std::max({min_modes, spec.galerkin_modes, spec.galerkin_modes_alt});
    }
    auto ref = get_reference(spec, min_modes);

    switch (spec.kind) {
        case ExperimentKind::LlnRate: run_lln_rate(spec, *ref, out, manifest); break;
        case ExperimentKind::CltGauss: run_clt_gauss(spec, *ref, out, manifest); break;
        case ExperimentKind::QvMatch: run_qv_match(spec, *ref, out, manifest); break;
        case ExperimentKind::SpdeCompare: run_spde_compare(spec, *ref, out, manifest); break;
        case ExperimentKind::RemainderScaling:
            run_remainder_scaling(spec, *ref, out, manifest);
            break;
    }

    manifest.files = out.files();
    manifest.save(spec.out_dir + "/manifest.json");
    return manifest;
}

std::string report(const std::string& manifest_path) {
    const RunManifest manifest = RunManifest::load(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    std::ostringstream out;
    out << "experiment " << manifest.kind << " (spec " << manifest.spec_hash << ", seed "
        << manifest.master_seed << ", " << manifest.code_version << ")\n";
    out << "created " << manifest.created_utc << "\n";

    for (const auto& f : manifest.files) {
        const std::string full = (base / f.path).string();
        if (!fs::exists(full)) {
            throw std::runtime_error("integrity error: missing file " + f.path);
        }
        const std::string digest = digest_hex(file_digest(full));
        if (digest != f.digest) {
            throw std::runtime_error("integrity error: digest mismatch for " + f.path);
        }
    }
    out << "files verified: " << manifest.files.size() << "\n";

    std::size_t failed = 0;
    for (const auto& c : manifest.cells) {
        if (c.status != "ok") {
            ++failed;
            out << "FAIL cell " << c.id << ": " << c.message << "\n";
        }
    }
    out << "cells: " << manifest.cells.size() << " total, " << failed << " failed\n";

    if (manifest.results.contains("checks")) {
        for (const auto& c : manifest.results.at("checks")) {
            const bool pass = c.at("pass").get<bool>();
            out << (pass ? "PASS " : "FAIL ") << c.at("name").get<std::string>() << " = "
                << c.at("value").get<double>() << " (range [" << c.at("lo").get<double>() << ", "
                << c.at("hi").get<double>() << "])\n";
        }
    }
    for (const auto& [key, value] : manifest.results.items()) {
        if (key == "checks" || key == "per_n" || key == "ks") continue;
        out << "  " << key << ": " << value.dump() << "\n";
    }
    return out.str();
}

}  // namespace mfsgd
