#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "qpf/experiments.hpp"
#include "qpf/textio.hpp"

using namespace qpf;
using experiments::ExperimentConfig;
using experiments::ExperimentResult;
using experiments::RunRecord;

namespace {

const std::string kDataDir = QPF_DATA_DIR;
const std::string kTmpDir = QPF_TMP_DIR;

std::string fresh_dir(const std::string& leaf) {
    const std::string dir = kTmpDir + "/" + leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Minutes-long protocols shrunk to seconds: tiny pool, tiny net, few epochs.
ExperimentConfig small_cfg(const std::string& experiment, const std::string& out_leaf) {
    ExperimentConfig cfg;
    cfg.experiment = experiment;
    cfg.grid_file = kDataDir + "/feeder4.grid";
    cfg.out_dir = fresh_dir(out_leaf);
    cfg.seeds = {1};
    cfg.pool_size = 64;
    cfg.dataset_size = 16;
    cfg.epochs = 5;
    cfg.batch = 4;
    cfg.lr = 1e-3;
    cfg.nn_hidden = 1;
    cfg.models = {"nn"};
    cfg.save_checkpoints = 0;
    cfg.save_epoch_logs = 0;
    return cfg;
}

const RunRecord& find_record(const ExperimentResult& res, const std::string& model,
                             double sweep, const std::string& variant = "") {
    for (const auto& r : res.records)
        if (r.model == model && r.sweep_value == sweep && r.variant == variant) return r;
    throw std::runtime_error("record not found: " + model);
}

}  // namespace

TEST_CASE("experiment registry lists the eleven studies") {
    const auto& ids = experiments::experiment_ids();
    CHECK(ids.size() == 11);
    CHECK(ids.front() == "generalization");
    CHECK(ids.back() == "pf_table");
    for (const char* id : {"robustness", "trainsize", "stability", "arch_sweep",
                           "hyper_search", "shots_sweep", "noise_sweep", "qubit_sweep",
                           "extreme_33bus"})
        CHECK(experiments::known_experiment(id));
    CHECK_FALSE(experiments::known_experiment("teleportation"));
}

TEST_CASE("median handles odd, even and empty inputs") {
    CHECK(experiments::median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(experiments::median({4.0, 1.0, 3.0, 2.0}) == 2.5);
    CHECK(experiments::median({7.0}) == 7.0);
    CHECK(std::isnan(experiments::median({})));
}

TEST_CASE("config text parsing applies defaults and reads every key") {
    const ExperimentConfig d =
        experiments::parse_config_text("experiment=generalization\ngrid_file=g.grid\n", "t");
    CHECK(d.experiment == "generalization");
    CHECK(d.grid_file == "g.grid");
    CHECK(d.out_dir == "runs");
    CHECK(d.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    CHECK(d.pool_size == 5000);
    CHECK(d.pool_std_frac == 0.30);
    CHECK(d.dataset_size == 512);
    CHECK(d.corruption_level == 0.10);
    CHECK(d.lr == 1.5e-4);
    CHECK(d.weight_decay == 3e-3);
    CHECK(d.dropout == 0.0);
    CHECK(d.batch == 16);
    CHECK(d.epochs == 1000);
    CHECK(d.shots == 0);
    CHECK(d.nn_hidden == 7);
    CHECK(d.qcnn_qubits == 6);
    CHECK(d.qcnn_encoder_hidden == 4);
    CHECK(d.qcnn_decoder_hidden == 3);
    CHECK(d.models.empty());
    CHECK(d.train_sizes == std::vector<int>{128, 256, 384, 512});
    CHECK(d.hyper_budget == 64);
    CHECK(d.shot_reps == 32);
    CHECK(d.qubit_counts == std::vector<int>{1, 2, 3, 4, 5, 6, 7});
    CHECK(d.save_checkpoints == -1);
    CHECK(d.jobs == 1);

    const std::string full = R"(# comment line
experiment = robustness
grid_file = data/feeder4.grid   # trailing comment
out_dir = out/x
seeds = 7, 8,9
pool_size = 100
pool_std_frac = 0.2
dataset_size = 32
corruption_level = 0.05
lr = 1e-3
weight_decay = 0.01
dropout = 0.015
batch = 8
epochs = 12
shots = 128
nn_hidden = 3
qcnn_qubits = 4
qcnn_encoder_hidden = 2
qcnn_decoder_hidden = 1
models = nn, qcnn
corruption_levels = 0.01, 0.1
train_sizes = 16, 24
arch_depths = 0, 2, 4
hyper_budget = 8
shots_grid = 64, 256
shot_reps = 4
noise_levels = 0, 0.02
noise_channels = measurement_flip, depolarizing
qubit_counts = 2, 3
save_checkpoints = 1
save_epoch_logs = 0
jobs = 2
)";
    const ExperimentConfig c = experiments::parse_config_text(full, "full.cfg");
    CHECK(c.experiment == "robustness");
    CHECK(c.grid_file == "data/feeder4.grid");
    CHECK(c.out_dir == "out/x");
    CHECK(c.seeds == std::vector<std::uint64_t>{7, 8, 9});
    CHECK(c.pool_size == 100);
    CHECK(c.pool_std_frac == 0.2);
    CHECK(c.dataset_size == 32);
    CHECK(c.corruption_level == 0.05);
    CHECK(c.lr == 1e-3);
    CHECK(c.weight_decay == 0.01);
    CHECK(c.dropout == 0.015);
    CHECK(c.batch == 8);
    CHECK(c.epochs == 12);
    CHECK(c.shots == 128);
    CHECK(c.nn_hidden == 3);
    CHECK(c.qcnn_qubits == 4);
    CHECK(c.qcnn_encoder_hidden == 2);
    CHECK(c.qcnn_decoder_hidden == 1);
    CHECK(c.models == std::vector<std::string>{"nn", "qcnn"});
    CHECK(c.corruption_levels == std::vector<double>{0.01, 0.1});
    CHECK(c.train_sizes == std::vector<int>{16, 24});
    CHECK(c.arch_depths == std::vector<int>{0, 2, 4});
    CHECK(c.hyper_budget == 8);
    CHECK(c.shots_grid == std::vector<int>{64, 256});
    CHECK(c.shot_reps == 4);
    CHECK(c.noise_levels == std::vector<double>{0.0, 0.02});
    CHECK(c.noise_channels == std::vector<std::string>{"measurement_flip", "depolarizing"});
    CHECK(c.qubit_counts == std::vector<int>{2, 3});
    CHECK(c.save_checkpoints == 1);
    CHECK(c.save_epoch_logs == 0);
    CHECK(c.jobs == 2);
}

TEST_CASE("config parsing pinpoints malformed lines") {
    using experiments::parse_config_text;
    CHECK_THROWS_WITH_AS(parse_config_text("experiment=x\nbogus=1\n", "f.cfg"),
                         doctest::Contains("f.cfg:2"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_config_text("bogus=1\n", "f.cfg"),
                         doctest::Contains("unknown key 'bogus'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_config_text("epochs=5\nepochs=6\n", "f.cfg"),
                         doctest::Contains("duplicate key"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_config_text("no equals sign\n", "f.cfg"),
                         doctest::Contains("expected key=value"), std::invalid_argument);
    CHECK_THROWS(parse_config_text("epochs=five\n", "f.cfg"));
    CHECK_THROWS(parse_config_text("=5\n", "f.cfg"));
    CHECK_THROWS(parse_config_text("seeds=1,,2\n", "f.cfg"));
    CHECK_NOTHROW(parse_config_text("# only a comment\n\n", "f.cfg"));
}

TEST_CASE("config validation rejects inconsistent settings") {
    ExperimentConfig ok = small_cfg("generalization", "exp_validate");
    CHECK_NOTHROW(ok.validate());

    auto broken = [&](auto mutate) {
        ExperimentConfig c = ok;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    };
    broken([](ExperimentConfig& c) { c.experiment = "warp_drive"; });
    broken([](ExperimentConfig& c) { c.grid_file.clear(); });
    broken([](ExperimentConfig& c) { c.seeds = {1, 1}; });
    broken([](ExperimentConfig& c) { c.seeds.clear(); });
    broken([](ExperimentConfig& c) { c.dataset_size = 4; });
    broken([](ExperimentConfig& c) { c.dataset_size = c.pool_size + 1; });
    broken([](ExperimentConfig& c) { c.corruption_level = 1.5; });
    broken([](ExperimentConfig& c) { c.lr = 0.0; });
    broken([](ExperimentConfig& c) { c.dropout = 1.0; });
    broken([](ExperimentConfig& c) { c.qcnn_qubits = 13; });
    broken([](ExperimentConfig& c) { c.models = {"perceptron"}; });
    broken([](ExperimentConfig& c) { c.train_sizes = {1}; });
    broken([](ExperimentConfig& c) { c.train_sizes = {c.pool_size}; });
    broken([](ExperimentConfig& c) { c.noise_channels = {"thermal"}; });
    broken([](ExperimentConfig& c) { c.qubit_counts = {0}; });
    broken([](ExperimentConfig& c) { c.jobs = 0; });
}

TEST_CASE("train_config copies the protocol and pins the run seed") {
    ExperimentConfig cfg = small_cfg("generalization", "exp_tc");
    cfg.shots = 64;
    cfg.dropout = 0.01;
    const models::TrainConfig tc = cfg.train_config(777);
    CHECK(tc.lr == cfg.lr);
    CHECK(tc.weight_decay == cfg.weight_decay);
    CHECK(tc.dropout == 0.01);
    CHECK(tc.batch == cfg.batch);
    CHECK(tc.epochs == cfg.epochs);
    CHECK(tc.shots == 64);
    CHECK(tc.seed == 777);
}

TEST_CASE("generalization writes the documented artifacts") {
    ExperimentConfig cfg = small_cfg("generalization", "exp_gen");
    cfg.save_checkpoints = 1;
    cfg.save_epoch_logs = 1;
    const ExperimentResult res = experiments::run_experiment(cfg);

    CHECK(res.experiment == "generalization");
    CHECK(res.sweep_key.empty());
    REQUIRE(res.records.size() == 1);
    CHECK(res.all_ok());
    const RunRecord& r = res.records[0];
    CHECK(r.model == "nn");
    CHECK(r.seed == 1);
    CHECK(std::isfinite(r.train_mse));
    CHECK(std::isfinite(r.val_mse));
    CHECK(std::isfinite(r.test_mse));
    CHECK(r.epoch_mean > 0.0);
    CHECK(r.circuit_evals == 0);
    CHECK(res.aggregates.count("median_test_nn") == 1);
    CHECK(res.aggregates.at("median_test_nn") == r.test_mse);

    const std::string dir = cfg.out_dir;
    REQUIRE(std::filesystem::exists(dir + "/results.csv"));
    REQUIRE(std::filesystem::exists(dir + "/summary.json"));
    CHECK(std::filesystem::exists(dir + "/epochs_nn_seed1.csv"));
    CHECK(std::filesystem::exists(dir + "/checkpoints/nn_seed1.txt"));
    CHECK(std::filesystem::exists(dir + "/checkpoints/nn_seed1_best.txt"));

    const auto csv = split(read_file(dir + "/results.csv"), '\n');
    CHECK(csv[0] ==
          "experiment,seed,model,status,message,train_mse,val_mse,test_mse,"
          "epoch_mean,epoch_std,circuit_evals,best_epoch,best_val_mse,"
          "test_mse_per_component");
    CHECK(csv[1].starts_with("generalization,1,nn,ok,,"));
    CHECK(csv.size() == 3);  // header + one row + trailing newline

    const auto epochs_csv = split(read_file(dir + "/epochs_nn_seed1.csv"), '\n');
    CHECK(epochs_csv[0] == "epoch,train_mse,val_mse");
    CHECK(epochs_csv.size() == 1 + 5 + 1);

    const nlohmann::json summary = nlohmann::json::parse(read_file(dir + "/summary.json"));
    CHECK(summary.at("experiment") == "generalization");
    CHECK(summary.at("record_count") == 1);
    CHECK(summary.at("failed_runs") == 0);
    CHECK(summary.at("config").at("pool_size") == 64);
    CHECK(summary.at("aggregates").contains("median_test_nn"));

    // A loaded checkpoint predicts; the best checkpoint is a valid model too.
    const models::Surrogate m = models::load_checkpoint(dir + "/checkpoints/nn_seed1.txt");
    CHECK(m.inputs == 6);
    CHECK(models::predict(m, std::vector<double>(6, 0.1)).size() == 6);
}

TEST_CASE("the same config reproduces every output byte for byte") {
    ExperimentConfig cfg = small_cfg("generalization", "exp_repro");
    cfg.save_checkpoints = 1;
    cfg.save_epoch_logs = 1;
    experiments::run_experiment(cfg);
    const std::string dir = cfg.out_dir;
    const std::string results = read_file(dir + "/results.csv");
    const std::string summary = read_file(dir + "/summary.json");
    const std::string epochs = read_file(dir + "/epochs_nn_seed1.csv");
    const std::string ckpt = read_file(dir + "/checkpoints/nn_seed1.txt");

    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    experiments::run_experiment(cfg);
    CHECK(read_file(dir + "/results.csv") == results);
    CHECK(read_file(dir + "/summary.json") == summary);
    CHECK(read_file(dir + "/epochs_nn_seed1.csv") == epochs);
    CHECK(read_file(dir + "/checkpoints/nn_seed1.txt") == ckpt);
}

TEST_CASE("parallel execution matches sequential execution bitwise") {
    ExperimentConfig cfg = small_cfg("robustness", "exp_par_seq");
    cfg.seeds = {1, 2};
    cfg.corruption_levels = {0.0, 0.1};
    const ExperimentResult seq = experiments::run_experiment(cfg);

    ExperimentConfig par = cfg;
    par.out_dir = fresh_dir("exp_par_par");
    par.jobs = 3;
    const ExperimentResult parallel = experiments::run_experiment(par);

    REQUIRE(seq.records.size() == parallel.records.size());
    for (std::size_t i = 0; i < seq.records.size(); ++i) {
        CHECK(seq.records[i].model == parallel.records[i].model);
        CHECK(seq.records[i].seed == parallel.records[i].seed);
        CHECK(seq.records[i].test_mse == parallel.records[i].test_mse);
        CHECK(seq.records[i].train_mse == parallel.records[i].train_mse);
    }
    CHECK(read_file(cfg.out_dir + "/results.csv") == read_file(par.out_dir + "/results.csv"));
}

TEST_CASE("sweep experiments reproduce the base protocol at matching points") {
    // One seed, one model; the three experiments must hit identical runs.
    ExperimentConfig gen = small_cfg("generalization", "exp_consist_gen");
    const ExperimentResult rg = experiments::run_generalization(gen);
    REQUIRE(rg.records.size() == 1);
    const RunRecord& base = rg.records[0];

    ExperimentConfig rob = small_cfg("robustness", "exp_consist_rob");
    rob.corruption_levels = {gen.corruption_level};
    const ExperimentResult rr = experiments::run_robustness(rob);
    const RunRecord& rob_rec = find_record(rr, "nn", gen.corruption_level);
    CHECK(rob_rec.test_mse == base.test_mse);
    CHECK(rob_rec.train_mse == base.train_mse);
    CHECK(rob_rec.val_mse == base.val_mse);
    CHECK(rob_rec.epoch_mean == base.epoch_mean);

    ExperimentConfig ts = small_cfg("trainsize", "exp_consist_ts");
    ts.train_sizes = {4};  // 4x gives the generalization dataset_size of 16
    const ExperimentResult rt = experiments::run_trainsize(ts);
    const RunRecord& ts_rec = find_record(rt, "nn", 4.0);
    CHECK(ts_rec.test_mse == base.test_mse);
    CHECK(ts_rec.train_mse == base.train_mse);

    ExperimentConfig st = small_cfg("stability", "exp_consist_st");
    const ExperimentResult rs = experiments::run_stability(st);
    REQUIRE(rs.records.size() == 1);
    CHECK(rs.records[0].test_mse == base.test_mse);
    CHECK(rs.records[0].epoch_std == base.epoch_std);
}

TEST_CASE("robustness computes ratio aggregates over its sweep") {
    ExperimentConfig cfg = small_cfg("robustness", "exp_rob");
    cfg.seeds = {1, 2, 3};
    cfg.models = {"nn", "qnn"};
    cfg.epochs = 3;
    cfg.corruption_levels = {0.01, 0.10};
    const ExperimentResult res = experiments::run_experiment(cfg);

    CHECK(res.sweep_key == "corruption_level");
    CHECK(res.records.size() == 3 * 2 * 2);
    CHECK(res.all_ok());
    for (const char* key :
         {"nn_median_ratio", "nn_ratio_of_medians", "qnn_median_ratio",
          "median_test_nn_at_0.01", "median_test_nn_at_0.1"})
        CHECK(res.aggregates.count(key) == 1);
    CHECK(res.series.at("corruption_levels") == std::vector<double>{0.01, 0.10});
    CHECK(res.series.at("median_test_nn").size() == 2);

    // Every record is normalized by its seed's qnn result at the top level.
    for (const auto& r : res.records) {
        REQUIRE(r.extra.count("normalized_test_mse") == 1);
        double seed_norm = 0.0;
        for (const auto& q : res.records)
            if (q.model == "qnn" && q.seed == r.seed && q.sweep_value == 0.10)
                seed_norm = q.test_mse;
        CHECK(r.extra.at("normalizer_value") == seed_norm);
        CHECK(r.extra.at("normalized_test_mse") == r.test_mse / seed_norm);
        if (r.model == "qnn" && r.sweep_value == 0.10)
            CHECK(r.extra.at("normalized_test_mse") == 1.0);
    }
}

TEST_CASE("trainsize keeps the hybrid model at the smallest size only") {
    ExperimentConfig cfg = small_cfg("trainsize", "exp_ts");
    cfg.models = {"nn", "qcnn"};
    cfg.epochs = 2;
    cfg.qcnn_qubits = 2;
    cfg.qcnn_encoder_hidden = 1;
    cfg.qcnn_decoder_hidden = 1;
    cfg.train_sizes = {4, 8};
    const ExperimentResult res = experiments::run_experiment(cfg);

    CHECK(res.sweep_key == "train_size");
    REQUIRE(res.records.size() == 3);  // nn at 4 and 8, qcnn at 4
    CHECK_NOTHROW(find_record(res, "nn", 4.0));
    CHECK_NOTHROW(find_record(res, "nn", 8.0));
    CHECK_NOTHROW(find_record(res, "qcnn", 4.0));
    CHECK_THROWS(find_record(res, "qcnn", 8.0));
    CHECK(res.aggregates.count("nn_at_max_gt_qcnn_at_base") == 1);
    CHECK(find_record(res, "qcnn", 4.0).extra.at("normalized_test_mse") == 1.0);
}

TEST_CASE("arch sweep labels architectures by depth") {
    ExperimentConfig cfg = small_cfg("arch_sweep", "exp_arch");
    cfg.epochs = 3;
    cfg.arch_depths = {0, 2};
    const ExperimentResult res = experiments::run_experiment(cfg);

    CHECK(res.sweep_key == "hidden_layers");
    REQUIRE(res.records.size() == 2);
    CHECK_NOTHROW(find_record(res, "LR", 0.0));
    CHECK_NOTHROW(find_record(res, "NN_2", 2.0));
    CHECK(res.aggregates.count("median_test_LR") == 1);
    CHECK(res.aggregates.count("median_test_NN_2") == 1);
    CHECK(res.aggregates.count("lr_gt_best_nn") == 1);
}

TEST_CASE("hyper search draws seed-independent trials and selects by validation") {
    ExperimentConfig cfg = small_cfg("hyper_search", "exp_hyper");
    cfg.epochs = 3;
    cfg.hyper_budget = 2;
    const ExperimentResult res = experiments::run_experiment(cfg);

    CHECK(res.sweep_key == "trial");
    REQUIRE(res.records.size() == 2);
    for (const auto& r : res.records) {
        CHECK(r.extra.at("lr") >= 1e-6);
        CHECK(r.extra.at("lr") <= 1e-1);
        CHECK(r.extra.at("weight_decay") >= 1e-6);
        CHECK(r.extra.at("dropout") >= 0.0);
        CHECK(r.extra.at("dropout") <= 0.02);
    }
    const double best = res.aggregates.at("best_trial");
    CHECK((best == 0.0 || best == 1.0));
    CHECK(res.aggregates.at("best_median_val_mse") ==
          find_record(res, "nn", best).val_mse);
    CHECK(res.aggregates.count("best_lr") == 1);

    // The trial stream ignores the experiment seed list.
    ExperimentConfig other = cfg;
    other.out_dir = fresh_dir("exp_hyper_other");
    other.seeds = {9};
    const ExperimentResult res2 = experiments::run_experiment(other);
    CHECK(find_record(res2, "nn", 0.0).extra.at("lr") ==
          find_record(res, "nn", 0.0).extra.at("lr"));
}

TEST_CASE("shots sweep estimates the sampling error curve") {
    ExperimentConfig cfg = small_cfg("shots_sweep", "exp_shots");
    cfg.shots_grid = {64, 1024};
    cfg.shot_reps = 4;
    const ExperimentResult res = experiments::run_experiment(cfg);

    CHECK(res.sweep_key == "shots");
    REQUIRE(res.records.size() == 2);
    const double e64 = find_record(res, "circuit", 64.0).extra.at("mean_abs_error");
    const double e1024 = find_record(res, "circuit", 1024.0).extra.at("mean_abs_error");
    CHECK(e64 > 0.0);
    CHECK(e1024 > 0.0);
    CHECK(e1024 < e64);  // sixteen times the shots must help
    REQUIRE(res.aggregates.count("slope_log_error_vs_log_shots") == 1);
    CHECK(res.aggregates.at("slope_log_error_vs_log_shots") < 0.0);
    CHECK(res.series.at("shots") == std::vector<double>{64.0, 1024.0});
    CHECK(res.series.at("median_abs_error").size() == 2);
    // 16384 shots are not in this grid, so the spot-check ratio is absent.
    CHECK(res.aggregates.count("ratio_1024_over_16384") == 0);
}

TEST_CASE("noise sweep trains once and degrades gracefully from the exact point") {
    ExperimentConfig cfg = small_cfg("noise_sweep", "exp_noise");
    cfg.models = {"qnn"};
    cfg.epochs = 3;
    cfg.noise_channels = {"measurement_flip"};
    cfg.noise_levels = {0.0, 0.3};
    const ExperimentResult res = experiments::run_experiment(cfg);

    CHECK(res.sweep_key == "noise_level");
    REQUIRE(res.records.size() == 2);
    const RunRecord& clean = find_record(res, "qnn", 0.0, "measurement_flip");
    const RunRecord& noisy = find_record(res, "qnn", 0.3, "measurement_flip");
    CHECK(clean.train_mse == noisy.train_mse);  // one training, many evaluations
    CHECK(clean.test_mse != noisy.test_mse);
    CHECK(res.aggregates.count("qnn_measurement_flip_ratio_max_over_min") == 1);

    // The exact-evaluation point equals a plain training run.
    ExperimentConfig gen = small_cfg("generalization", "exp_noise_gen");
    gen.models = {"qnn"};
    gen.epochs = 3;
    const ExperimentResult rg = experiments::run_generalization(gen);
    CHECK(clean.test_mse == rg.records[0].test_mse);

    ExperimentConfig bad = cfg;
    bad.out_dir = fresh_dir("exp_noise_bad");
    bad.models = {"nn"};
    CHECK_THROWS(experiments::run_experiment(bad));
}

TEST_CASE("qubit sweep scans hybrid widths") {
    ExperimentConfig cfg = small_cfg("qubit_sweep", "exp_qubits");
    cfg.epochs = 2;
    cfg.qcnn_encoder_hidden = 1;
    cfg.qcnn_decoder_hidden = 1;
    cfg.qubit_counts = {1, 2};
    const ExperimentResult res = experiments::run_experiment(cfg);

    CHECK(res.sweep_key == "qubits");
    REQUIRE(res.records.size() == 2);
    CHECK_NOTHROW(find_record(res, "QCNN_1", 1.0));
    CHECK_NOTHROW(find_record(res, "QCNN_2", 2.0));
    CHECK(res.aggregates.count("median_test_QCNN_1") == 1);
    CHECK(res.series.at("qubits") == std::vector<double>{1.0, 2.0});
    CHECK(res.series.at("median_test").size() == 2);
}

TEST_CASE("the 33-bus stress study captures worst-case voltage profiles") {
    ExperimentConfig cfg = small_cfg("extreme_33bus", "exp_extreme");
    cfg.grid_file = kDataDir + "/feeder33.grid";
    cfg.epochs = 2;
    const ExperimentResult res = experiments::run_experiment(cfg);

    REQUIRE(res.records.size() == 1);
    CHECK(res.records[0].extra.count("max_v_mse") == 1);
    CHECK(res.records[0].extra.at("max_v_mse") >= 0.0);
    CHECK(res.aggregates.count("median_max_v_mse_nn") == 1);
    CHECK(res.aggregates.count("worst_v_mse_nn") == 1);
    CHECK(res.aggregates.at("worst_seed_nn") == 1.0);
    for (const char* key :
         {"radar_v_true_nn", "radar_v_pred_nn", "radar_delta_true_nn", "radar_delta_pred_nn"})
        CHECK(res.series.at(key).size() == 32);
    for (double v : res.series.at("radar_v_true_nn")) {
        CHECK(v > 0.8);
        CHECK(v < 1.1);
    }
}

TEST_CASE("the accuracy table reports absolute error statistics per model") {
    ExperimentConfig cfg = small_cfg("pf_table", "exp_table");
    cfg.models = {"lr", "nn"};
    cfg.epochs = 3;
    const ExperimentResult res = experiments::run_experiment(cfg);

    REQUIRE(res.records.size() == 2);
    for (const char* key : {"mean_v", "std_v", "mean_delta", "std_delta"}) {
        CHECK(find_record(res, "lr", 0.0).extra.count(key) == 1);
        CHECK(res.aggregates.count("median_" + std::string(key) + "_lr") == 1);
        CHECK(res.aggregates.count("median_" + std::string(key) + "_nn") == 1);
    }
    // The four-model ordering flag needs all four models.
    CHECK(res.aggregates.count("voltage_order_qcnn_qnn_nn_lr") == 0);

    const auto csv = split(read_file(cfg.out_dir + "/results.csv"), '\n');
    CHECK(csv[0].starts_with("experiment,seed,model,status"));
    CHECK(csv[0].find(",mean_delta,mean_v,std_delta,std_v,") != std::string::npos);
}

TEST_CASE("diverging runs are flagged instead of aborting the experiment") {
    ExperimentConfig cfg = small_cfg("generalization", "exp_failed");
    cfg.lr = 1e100;  // guaranteed overflow within the first epoch
    const ExperimentResult res = experiments::run_experiment(cfg);

    REQUIRE(res.records.size() == 1);
    CHECK_FALSE(res.all_ok());
    CHECK(res.records[0].failed);
    CHECK_FALSE(res.records[0].message.empty());
    CHECK(std::isnan(experiments::median({})));  // aggregates fall back to NaN

    const std::string csv = read_file(cfg.out_dir + "/results.csv");
    CHECK(csv.find(",failed,") != std::string::npos);
    const nlohmann::json summary =
        nlohmann::json::parse(read_file(cfg.out_dir + "/summary.json"));
    CHECK(summary.at("failed_runs") == 1);
    CHECK(summary.at("aggregates").at("median_test_nn").is_null());
}

TEST_CASE("run_experiment validates ids and configs up front") {
    ExperimentConfig cfg = small_cfg("generalization", "exp_guard");
    cfg.experiment = "";
    CHECK_THROWS(experiments::run_experiment(cfg));
    cfg.experiment = "generalization";
    cfg.grid_file.clear();
    CHECK_THROWS(experiments::run_experiment(cfg));
    cfg.grid_file = kDataDir + "/feeder4.grid";
    cfg.dataset_size = 7;
    CHECK_THROWS(experiments::run_experiment(cfg));
}
