#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qpf/models.hpp"

namespace qpf::experiments {

/// Recognized experiment ids, in documentation order.
const std::vector<std::string>& experiment_ids();
bool known_experiment(std::string_view id);

/// Flat key=value configuration; unknown keys are rejected. Every field has
/// a usable default except grid_file.
struct ExperimentConfig {
    std::string experiment;
    std::string grid_file;
    std::string out_dir = "runs";
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    // dataset protocol
    int pool_size = 5000;
    double pool_std_frac = 0.30;
    int dataset_size = 512;        // total records; splits are 1/4, 1/4, 1/2
    double corruption_level = 0.10; // train-split corruption of the base protocol

    // training
    double lr = 1.5e-4;
    double weight_decay = 3e-3;
    double dropout = 0.0;
    int batch = 16;
    int epochs = 1000;
    int shots = 0;  // 0 = exact expectations

    // architectures
    int nn_hidden = 7;
    int qcnn_qubits = 6;
    int qcnn_encoder_hidden = 4;
    int qcnn_decoder_hidden = 3;

    // model selection; empty = experiment default
    std::vector<std::string> models;

    // sweep grids
    std::vector<double> corruption_levels;  // robustness; default 0.01..0.10
    std::vector<int> train_sizes{128, 256, 384, 512};
    std::vector<int> arch_depths{0, 2, 3, 4, 5, 6, 7, 8};  // 0 = linear regression
    int hyper_budget = 64;
    std::vector<int> shots_grid;      // default 2^4..2^14
    int shot_reps = 32;               // random circuit instances per seed
    std::vector<double> noise_levels; // default 0.00..0.10
    std::vector<std::string> noise_channels;  // default all four
    std::vector<int> qubit_counts{1, 2, 3, 4, 5, 6, 7};

    // output toggles; -1 = per-experiment default
    int save_checkpoints = -1;
    int save_epoch_logs = -1;
    int jobs = 1;

    models::TrainConfig train_config(std::uint64_t run_seed) const;
    void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
ExperimentConfig load_config(const std::string& path);

struct RunRecord {
    std::uint64_t seed = 0;
    std::string model;    // label: lr, nn, qnn, qcnn, NN_4, QCNN_3, ...
    std::string variant;  // secondary dimension (noise channel), often empty
    double sweep_value = 0;
    bool failed = false;
    std::string message;
    double train_mse = 0, val_mse = 0, test_mse = 0;
    double epoch_mean = 0, epoch_std = 0;  // over per-epoch train MSE
    long circuit_evals = 0;
    double wall_seconds = 0;  // console only; excluded from output files
    std::map<std::string, double> extra;
    std::vector<models::EpochStats> epochs;  // kept only when epoch logs are on
};

struct ExperimentResult {
    std::string experiment;
    std::string sweep_key;  // name of the sweep column; empty = no sweep
    std::vector<RunRecord> records;
    std::map<std::string, double> aggregates;
    std::map<std::string, std::string> notes;
    std::map<std::string, std::vector<double>> series;  // plot-ready curves

    bool all_ok() const;
    /// Median of a record field over seeds, filtered by model/variant/sweep.
    double median_test_mse(std::string_view model, double sweep_value) const;
};

ExperimentResult run_generalization(const ExperimentConfig& cfg);
ExperimentResult run_robustness(const ExperimentConfig& cfg);
ExperimentResult run_trainsize(const ExperimentConfig& cfg);
ExperimentResult run_stability(const ExperimentConfig& cfg);
ExperimentResult run_arch_sweep(const ExperimentConfig& cfg);
ExperimentResult run_hyper_search(const ExperimentConfig& cfg);
ExperimentResult run_shots_sweep(const ExperimentConfig& cfg);
ExperimentResult run_noise_sweep(const ExperimentConfig& cfg);
ExperimentResult run_qubit_sweep(const ExperimentConfig& cfg);
ExperimentResult run_extreme_33bus(const ExperimentConfig& cfg);
ExperimentResult run_pf_table(const ExperimentConfig& cfg);

/// Dispatches on cfg.experiment and writes results.csv, summary.json and any
/// per-run artifacts under cfg.out_dir. All written files are byte-identical
/// across re-runs with the same config.
ExperimentResult run_experiment(const ExperimentConfig& cfg);
void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& result);

double median(std::vector<double> v);

} // namespace qpf::experiments
