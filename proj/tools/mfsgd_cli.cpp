// Command-line front end: single simulations, experiment orchestration,
// normality tests on sample files, and manifest reports.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mfsgd/harness.hpp"

namespace {

mfsgd::DataDistribution load_dataset(const std::string& path) {
    if (path.empty()) return mfsgd::default_dataset();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    nlohmann::json j;
    in >> j;
    return mfsgd::dataset_from_json(j);
}

std::vector<double> parse_grid(const std::string& text, double horizon) {
    if (text.empty()) return {0.0, 0.25 * horizon, 0.5 * horizon, 0.75 * horizon, horizon};
    std::vector<double> grid;
    std::istringstream in(text);
    std::string tok;
    while (std::getline(in, tok, ',')) grid.push_back(std::stod(tok));
    return grid;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << content;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"interacting-particle SGD lab: simulation, mean-field reference, fluctuation "
                 "statistics and the Galerkin limit model"};
    app.require_subcommand(1);

    // ---- simulate ----
    auto* sim = app.add_subcommand("simulate", "run one SGD trajectory, export snapshots");
    std::string sim_dataset, sim_grid, sim_out = "sgd_snapshots.csv";
    std::size_t sim_n = 1000;
    double sim_alpha = 1.0, sim_horizon = 1.0;
    std::uint64_t sim_seed = 1;
    sim->add_option("--n", sim_n, "ensemble width N");
    sim->add_option("--alpha", sim_alpha, "learning rate");
    sim->add_option("--horizon", sim_horizon, "time horizon T");
    sim->add_option("--seed", sim_seed, "run seed");
    sim->add_option("--dataset", sim_dataset, "dataset JSON file (default: built-in 3-point)");
    sim->add_option("--grid", sim_grid, "comma-separated snapshot times");
    sim->add_option("--out", sim_out, "output CSV path");

    // ---- meanfield ----
    auto* mf = app.add_subcommand("meanfield", "integrate the deterministic reference system");
    std::string mf_dataset, mf_grid, mf_out = "meanfield_snapshots.csv";
    std::size_t mf_m = 10000;
    double mf_alpha = 1.0, mf_horizon = 1.0, mf_h = 1e-3;
    std::uint64_t mf_seed = 1;
    mf->add_option("--m", mf_m, "reference ensemble size");
    mf->add_option("--alpha", mf_alpha, "learning rate");
    mf->add_option("--horizon", mf_horizon, "time horizon T");
    mf->add_option("--step", mf_h, "RK4 step size");
    mf->add_option("--seed", mf_seed, "initial draw seed");
    mf->add_option("--dataset", mf_dataset, "dataset JSON file");
    mf->add_option("--grid", mf_grid, "comma-separated snapshot times");
    mf->add_option("--out", mf_out, "output CSV path");

    // ---- fluct ----
    auto* fluct = app.add_subcommand("fluct", "run an experiment spec end to end");
    std::string fluct_config, fluct_out;
    std::uint64_t fluct_seed = 0;
    int fluct_threads = 0;
    fluct->add_option("--config", fluct_config, "experiment spec JSON")->required();
    fluct->add_option("--out", fluct_out, "override output directory");
    fluct->add_option("--seed", fluct_seed, "override master seed");
    fluct->add_option("--threads", fluct_threads, "override worker count");

    // ---- clt-test ----
    auto* clt = app.add_subcommand("clt-test", "KS normality tests on a samples CSV");
    std::string clt_samples;
    double clt_sig = 0.01;
    clt->add_option("--samples", clt_samples, "samples CSV from a clt-gauss run")->required();
    clt->add_option("--significance", clt_sig, "significance level");

    // ---- spde ----
    auto* spde = app.add_subcommand("spde", "assemble the Galerkin model and simulate paths");
    std::string spde_config, spde_out;
    spde->add_option("--config", spde_config, "experiment spec JSON (kind spde-compare)")
        ->required();
    spde->add_option("--out", spde_out, "override output directory");

    // ---- report ----
    auto* rep = app.add_subcommand("report", "verify and summarize a run manifest");
    std::string rep_manifest;
    rep->add_option("--manifest", rep_manifest, "manifest.json path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            mfsgd::RunConfig config;
            config.n = sim_n;
            config.alpha = sim_alpha;
            config.horizon = sim_horizon;
            config.seed = sim_seed;
            const auto dataset = load_dataset(sim_dataset);
            config.d = dataset.d;
            config.init.w_lo.assign(static_cast<std::size_t>(config.d), -1.0);
            config.init.w_hi.assign(static_cast<std::size_t>(config.d), 1.0);
            const auto grid = parse_grid(sim_grid, sim_horizon);
            const auto act = mfsgd::activation_from_name("tanh");
            const auto traj = mfsgd::run_sgd(config, dataset, act, grid);
            write_file(sim_out, mfsgd::snapshots_to_csv(traj.grid, traj.snapshots));
            std::cout << "wrote " << sim_out << " (" << traj.steps_executed << " steps, bound "
                      << traj.final_state.observed_bound << ")\n";
        } else if (mf->parsed()) {
            const auto dataset = load_dataset(mf_dataset);
            mfsgd::InitLaw init;
            init.w_lo.assign(static_cast<std::size_t>(dataset.d), -1.0);
            init.w_hi.assign(static_cast<std::size_t>(dataset.d), 1.0);
            mfsgd::Rng rng(mfsgd::derive_key(mf_seed, {mfsgd::tag64("reference")}));
            const auto ens = mfsgd::draw_initial_ensemble(mf_m, dataset.d, init, rng);
            const auto act = mfsgd::activation_from_name("tanh");
            const auto grid = parse_grid(mf_grid, mf_horizon);
            const auto traj =
                mfsgd::integrate_meanfield(ens, dataset, mf_alpha, act, mf_horizon, mf_h, grid);
            // provenance comment ahead of the columnar data
            const std::string meta = "# scheme=" + traj.scheme +
                                     " h=" + mfsgd::format_double(traj.h) +
                                     " m=" + std::to_string(traj.m_particles) + "\n";
            write_file(mf_out, meta + mfsgd::snapshots_to_csv(traj.grid, traj.snapshots));
            std::cout << "wrote " << mf_out << " (h=" << traj.h << ", bound "
                      << traj.observed_bound << ")\n";
        } else if (fluct->parsed() || spde->parsed()) {
            const std::string config = fluct->parsed() ? fluct_config : spde_config;
            const std::string out_override = fluct->parsed() ? fluct_out : spde_out;
            auto spec = mfsgd::ExperimentSpec::from_json_file(config);
            if (!out_override.empty()) spec.out_dir = out_override;
            if (fluct->parsed() && fluct_seed != 0) spec.master_seed = fluct_seed;
            if (fluct->parsed() && fluct_threads != 0) spec.threads = fluct_threads;
            const auto manifest = mfsgd::run_experiment(spec);
            std::cout << mfsgd::report(spec.out_dir + "/manifest.json");
            return manifest.has_failures() ? 1 : 0;
        } else if (clt->parsed()) {
            std::ifstream in(clt_samples);
            if (!in) throw std::runtime_error("cannot open samples file: " + clt_samples);
            std::string header;
            std::getline(in, header);
            struct Key {
                double t;
                std::string f;
            };
            std::vector<Key> keys;
            std::vector<std::vector<double>> cols;
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::istringstream ls(line);
                std::string tok, fid;
                std::getline(ls, tok, ',');
                std::getline(ls, tok, ',');
                const double t = std::stod(tok);
                std::getline(ls, fid, ',');
                std::getline(ls, tok, ',');
                const double eta = std::stod(tok);
                bool found = false;
                for (std::size_t k = 0; k < keys.size(); ++k) {
                    if (std::abs(keys[k].t - t) < 1e-12 && keys[k].f == fid) {
                        cols[k].push_back(eta);
                        found = true;
                        break;
                    }
                }
                if (!found) {
                    keys.push_back({t, fid});
                    cols.push_back({eta});
                }
            }
            std::cout << "t,f_id,n,statistic,p_value,reject\n";
            for (std::size_t k = 0; k < keys.size(); ++k) {
                if (keys[k].t <= 0.0 || cols[k].size() < 50) continue;
                const auto g = mfsgd::gaussianity_test(cols[k], clt_sig);
                std::cout << keys[k].t << ',' << keys[k].f << ',' << cols[k].size() << ','
                          << g.statistic << ',' << g.p_value << ',' << (g.reject ? 1 : 0) << '\n';
            }
        } else if (rep->parsed()) {
            std::cout << mfsgd::report(rep_manifest);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
