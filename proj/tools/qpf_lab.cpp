// Command-line front end: one subcommand per experiment plus small utilities
// for solving a grid file and generating a labeled dataset.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qpf/dataset.hpp"
#include "qpf/experiments.hpp"
#include "qpf/grid.hpp"
#include "qpf/rng.hpp"
#include "qpf/textio.hpp"

namespace {

struct ExperimentArgs {
    std::string config;
    std::vector<std::uint64_t> seeds;
    std::string out;
    int jobs = 0;
};

int run_experiment_cmd(const std::string& id, const ExperimentArgs& args) {
    auto cfg = qpf::experiments::load_config(args.config);
    if (!cfg.experiment.empty() && cfg.experiment != id) {
        std::fprintf(stderr, "error: config names experiment '%s' but '%s' was requested\n",
                     cfg.experiment.c_str(), id.c_str());
        return 1;
    }
    cfg.experiment = id;
    if (!args.seeds.empty()) cfg.seeds = args.seeds;
    if (!args.out.empty())
        cfg.out_dir = args.out;
    else if (cfg.out_dir == "runs")
        cfg.out_dir = "runs/" + id;
    if (args.jobs > 0) cfg.jobs = args.jobs;
    cfg.validate();

    const auto result = qpf::experiments::run_experiment(cfg);

    int failed = 0;
    double wall = 0.0;
    for (const auto& r : result.records) {
        if (r.failed) {
            ++failed;
            std::fprintf(stderr, "failed: seed=%llu model=%s %s\n",
                         static_cast<unsigned long long>(r.seed), r.model.c_str(),
                         r.message.c_str());
        }
        wall += r.wall_seconds;
    }
    std::printf("%s: %zu runs, %d failed, %.1f s training time\n", id.c_str(),
                result.records.size(), failed, wall);
    for (const auto& [key, value] : result.aggregates)
        std::printf("  %s = %s\n", key.c_str(), qpf::fmt_double(value).c_str());
    std::printf("wrote %s/results.csv and %s/summary.json\n", cfg.out_dir.c_str(),
                cfg.out_dir.c_str());
    return failed == 0 ? 0 : 1;
}

int run_solve_cmd(const std::string& grid_file, double tol, int max_iter) {
    const auto grid = qpf::grid::load_grid(grid_file);
    qpf::grid::NewtonOptions opts;
    opts.tol = tol;
    opts.max_iter = max_iter;
    const auto sol = qpf::grid::solve_newton_raphson(grid, opts);
    if (!sol.converged) {
        std::fprintf(stderr, "did not converge: %s\n", sol.message.c_str());
        return 1;
    }
    std::printf("converged in %d iterations, residual %s\n", sol.iterations,
                qpf::fmt_double(sol.final_residual_norm).c_str());
    const auto deg = sol.delta_deg();
    std::printf("%6s %14s %14s\n", "bus", "v (pu)", "delta (deg)");
    for (int i = 0; i < grid.n; ++i)
        std::printf("%6d %14.6f %14.6f\n", grid.bus_ids[i], sol.v[i], deg[i]);
    return 0;
}

int run_make_dataset_cmd(const std::string& grid_file, const std::string& out,
                         std::uint64_t seed, int size, int pool, double std_frac,
                         double corruption) {
    const auto grid = qpf::grid::load_grid(grid_file);
    const auto sample_pool =
        qpf::dataset::generate_pool(grid, pool, std_frac, qpf::Rng::derive(seed, 11));
    auto ds = qpf::dataset::draw_and_label(sample_pool, size, grid, qpf::Rng::derive(seed, 12));
    if (corruption > 0.0)
        ds = qpf::dataset::corrupt(ds, corruption, qpf::Rng::derive(seed, 13));
    qpf::dataset::save_csv(ds, out);
    std::printf("wrote %s (%zu records, %d redraws, %d corrupted)\n", out.c_str(),
                ds.records.size(), ds.provenance.redraws, ds.provenance.corrupted_records);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"power-flow surrogate lab: classical, hybrid and quantum models"};
    app.require_subcommand(1);

    std::vector<std::pair<std::string, ExperimentArgs>> exp_args;
    exp_args.reserve(qpf::experiments::experiment_ids().size());
    for (const auto& id : qpf::experiments::experiment_ids())
        exp_args.emplace_back(id, ExperimentArgs{});

    int rc = 0;
    for (auto& [id, args] : exp_args) {
        auto* sub = app.add_subcommand(id, "Run the " + id + " experiment");
        sub->add_option("--config", args.config, "Experiment config file (key=value lines)")
            ->required();
        sub->add_option("--seeds", args.seeds, "Override the seed list")->delimiter(',');
        sub->add_option("--out", args.out, "Override the output directory");
        sub->add_option("--jobs", args.jobs, "Worker threads for independent runs");
        sub->callback([&rc, &id = id, &args = args] { rc = run_experiment_cmd(id, args); });
    }

    std::string solve_grid;
    double solve_tol = 1e-8;
    int solve_iters = 50;
    auto* solve = app.add_subcommand("solve", "Solve a grid file and print the bus state");
    solve->add_option("--grid", solve_grid, "Grid file")->required();
    solve->add_option("--tol", solve_tol, "Mismatch tolerance");
    solve->add_option("--max-iter", solve_iters, "Iteration cap");
    solve->callback([&] { rc = run_solve_cmd(solve_grid, solve_tol, solve_iters); });

    std::string md_grid, md_out;
    std::uint64_t md_seed = 1;
    int md_size = 512, md_pool = 5000;
    double md_std = 0.30, md_corruption = 0.0;
    auto* md = app.add_subcommand("make-dataset", "Generate a labeled dataset CSV");
    md->add_option("--grid", md_grid, "Grid file")->required();
    md->add_option("--out", md_out, "Output CSV path")->required();
    md->add_option("--seed", md_seed, "Dataset seed");
    md->add_option("--size", md_size, "Number of records");
    md->add_option("--pool", md_pool, "Sample pool size");
    md->add_option("--std-frac", md_std, "Apparent-power deviation fraction");
    md->add_option("--corruption", md_corruption, "Train-split corruption level");
    md->callback([&] {
        rc = run_make_dataset_cmd(md_grid, md_out, md_seed, md_size, md_pool, md_std,
                                  md_corruption);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return rc;
}
