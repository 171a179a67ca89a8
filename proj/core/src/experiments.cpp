#include "qpf/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <stdexcept>
#include <thread>
#include <utility>

#include <json.hpp>

#include "qpf/textio.hpp"

namespace qpf::experiments {

namespace {

using json = nlohmann::json;

// Seed-stream layout. Dataset streams depend only on the run seed, never on
// the experiment or sweep position, so identical protocols produce identical
// datasets (and identical trained models) across experiments.
constexpr std::uint64_t kPoolStream = 11;
constexpr std::uint64_t kDrawStream = 12;
constexpr std::uint64_t kCorruptStream = 13;
constexpr std::uint64_t kTrainStreamBase = 20;  // + model slot
constexpr std::uint64_t kShotStream = 40;
constexpr std::uint64_t kHyperStream = 9000;    // + trial index, seed-independent

int model_slot(models::ModelKind k) {
    switch (k) {
        case models::ModelKind::Lr: return 0;
        case models::ModelKind::Nn: return 1;
        case models::ModelKind::Qnn: return 2;
        case models::ModelKind::Qcnn: return 3;
    }
    throw std::logic_error("unknown model kind");
}

std::uint64_t train_seed(std::uint64_t run_seed, models::ModelKind k) {
    return Rng::derive(run_seed, kTrainStreamBase + static_cast<std::uint64_t>(model_slot(k)));
}

bool toggle(int value, bool dflt) { return value < 0 ? dflt : value != 0; }

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

// ---------------------------------------------------------------- datasets

dataset::LabeledDataset clean_dataset(const ExperimentConfig& cfg, const grid::GridCase& g,
                                      std::uint64_t seed, int k) {
    auto pool = dataset::generate_pool(g, cfg.pool_size, cfg.pool_std_frac,
                                       Rng::derive(seed, kPoolStream));
    return dataset::draw_and_label(pool, k, g, Rng::derive(seed, kDrawStream));
}

dataset::LabeledDataset protocol_dataset(const ExperimentConfig& cfg, const grid::GridCase& g,
                                         std::uint64_t seed, int k, double corruption_level) {
    auto ds = clean_dataset(cfg, g, seed, k);
    if (corruption_level > 0.0)
        ds = dataset::corrupt(ds, corruption_level, Rng::derive(seed, kCorruptStream));
    return ds;
}

// ---------------------------------------------------------------- run specs

struct RunSpec {
    models::ModelKind kind = models::ModelKind::Nn;
    std::string label;
    std::string variant;
    double sweep = 0.0;
    std::uint64_t seed = 0;
    int nn_depth = 7;
    int qubits = 6;
    bool keep_epochs = false;
    models::TrainConfig tc;
};

RunSpec spec_for(const ExperimentConfig& cfg, models::ModelKind kind, std::uint64_t seed) {
    RunSpec rs;
    rs.kind = kind;
    rs.label = std::string(models::kind_name(kind));
    rs.seed = seed;
    rs.nn_depth = cfg.nn_hidden;
    rs.qubits = cfg.qcnn_qubits;
    rs.tc = cfg.train_config(train_seed(seed, kind));
    return rs;
}

models::Surrogate build_model(const ExperimentConfig& cfg, const grid::GridCase& g,
                              const RunSpec& rs) {
    const int m = g.pq_count();
    switch (rs.kind) {
        case models::ModelKind::Lr: return models::make_lr(m);
        case models::ModelKind::Nn:
            return rs.nn_depth == 0 ? models::make_lr(m)
                                    : models::make_nn(m, g.n, rs.nn_depth, rs.tc.dropout);
        case models::ModelKind::Qnn: return models::make_qnn(m);
        case models::ModelKind::Qcnn:
            return models::make_qcnn(m, g.n, rs.qubits, cfg.qcnn_encoder_hidden,
                                     cfg.qcnn_decoder_hidden, rs.tc.dropout);
    }
    throw std::logic_error("unknown model kind");
}

RunRecord run_training(const ExperimentConfig& cfg, const grid::GridCase& g,
                       const dataset::LabeledDataset& ds, const RunSpec& rs,
                       models::Surrogate* model_out = nullptr,
                       models::TrainResult* train_out = nullptr) {
    models::Surrogate model = build_model(cfg, g, rs);
    models::TrainResult tr = models::train(model, ds, rs.tc);

    RunRecord rec;
    rec.seed = rs.seed;
    rec.model = rs.label;
    rec.variant = rs.variant;
    rec.sweep_value = rs.sweep;
    rec.train_mse = tr.final_train_mse;
    rec.val_mse = tr.final_val_mse;
    rec.test_mse = tr.test_mse;
    rec.circuit_evals = tr.circuit_evals;
    rec.wall_seconds = tr.wall_seconds;

    double sum = 0.0, sum2 = 0.0;
    for (const auto& e : tr.epochs) {
        sum += e.train_mse;
        sum2 += e.train_mse * e.train_mse;
    }
    const double n = static_cast<double>(tr.epochs.size());
    if (n > 0) {
        rec.epoch_mean = sum / n;
        rec.epoch_std = std::sqrt(std::max(0.0, sum2 / n - rec.epoch_mean * rec.epoch_mean));
    }
    rec.extra["test_mse_per_component"] = tr.test_mse / static_cast<double>(model.outputs);
    rec.extra["best_val_mse"] = tr.best_val_mse;
    rec.extra["best_epoch"] = static_cast<double>(tr.best_epoch);
    if (rs.keep_epochs) rec.epochs = tr.epochs;

    if (model_out) *model_out = std::move(model);
    if (train_out) *train_out = std::move(tr);
    return rec;
}

// ---------------------------------------------------------------- executor

struct Task {
    RunRecord fallback;
    std::function<std::vector<RunRecord>()> work;
};

std::vector<RunRecord> execute(const ExperimentConfig& cfg, std::vector<Task>& tasks) {
    std::vector<std::vector<RunRecord>> slots(tasks.size());
    auto run_one = [&](std::size_t i) {
        try {
            slots[i] = tasks[i].work();
        } catch (const std::exception& e) {
            RunRecord r = tasks[i].fallback;
            r.failed = true;
            r.message = e.what();
            slots[i] = {std::move(r)};
        }
    };
    const std::size_t jobs =
        std::min<std::size_t>(static_cast<std::size_t>(std::max(1, cfg.jobs)), tasks.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < tasks.size(); ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(jobs);
        for (std::size_t t = 0; t < jobs; ++t)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1))
                    run_one(i);
            });
        for (auto& th : pool) th.join();
    }
    std::vector<RunRecord> out;
    for (auto& s : slots)
        for (auto& r : s) out.push_back(std::move(r));
    return out;
}

// ---------------------------------------------------------------- resolution

std::vector<models::ModelKind> resolved_kinds(const ExperimentConfig& cfg,
                                              std::initializer_list<const char*> dflt) {
    std::vector<models::ModelKind> out;
    if (cfg.models.empty())
        for (const char* name : dflt) out.push_back(models::kind_from_name(name));
    else
        for (const auto& name : cfg.models) out.push_back(models::kind_from_name(name));
    return out;
}

std::vector<double> resolved_corruption_levels(const ExperimentConfig& cfg) {
    if (!cfg.corruption_levels.empty()) return cfg.corruption_levels;
    std::vector<double> out;
    for (int i = 1; i <= 10; ++i) out.push_back(static_cast<double>(i) / 100.0);
    return out;
}

std::vector<int> resolved_shots_grid(const ExperimentConfig& cfg) {
    if (!cfg.shots_grid.empty()) return cfg.shots_grid;
    std::vector<int> out;
    for (int s = 16; s <= 16384; s *= 2) out.push_back(s);
    return out;
}

std::vector<double> resolved_noise_levels(const ExperimentConfig& cfg) {
    if (!cfg.noise_levels.empty()) return cfg.noise_levels;
    std::vector<double> out;
    for (int i = 0; i <= 10; ++i) out.push_back(static_cast<double>(i) / 100.0);
    return out;
}

const std::vector<std::string>& all_noise_channels() {
    static const std::vector<std::string> chans{"depolarizing", "amplitude_damping",
                                               "measurement_flip", "gate_imperfection"};
    return chans;
}

std::vector<std::string> resolved_noise_channels(const ExperimentConfig& cfg) {
    return cfg.noise_channels.empty() ? all_noise_channels() : cfg.noise_channels;
}

qsim::NoiseModel channel_noise(std::string_view channel, double level) {
    qsim::NoiseModel nm;
    if (channel == "depolarizing")
        nm.depolarizing = level;
    else if (channel == "amplitude_damping")
        nm.amplitude_damping = level;
    else if (channel == "measurement_flip")
        nm.measurement_flip = level;
    else if (channel == "gate_imperfection")
        nm.gate_imperfection = level * std::numbers::pi / 20.0;
    else
        throw std::invalid_argument("unknown noise channel '" + std::string(channel) + "'");
    nm.validate();
    return nm;
}

// ---------------------------------------------------------------- aggregates

std::vector<double> gather(const std::vector<RunRecord>& recs, std::string_view model,
                           const std::optional<double>& sweep,
                           const std::function<double(const RunRecord&)>& field,
                           const std::optional<std::string>& variant = std::nullopt) {
    std::vector<double> out;
    for (const auto& r : recs) {
        if (r.failed || r.model != model) continue;
        if (sweep && r.sweep_value != *sweep) continue;
        if (variant && r.variant != *variant) continue;
        out.push_back(field(r));
    }
    return out;
}

double test_of(const RunRecord& r) { return r.test_mse; }
double train_of(const RunRecord& r) { return r.train_mse; }
double estd_of(const RunRecord& r) { return r.epoch_std; }
double emean_of(const RunRecord& r) { return r.epoch_mean; }

std::map<std::uint64_t, double> by_seed(const std::vector<RunRecord>& recs, std::string_view model,
                                        const std::optional<double>& sweep,
                                        const std::function<double(const RunRecord&)>& field,
                                        const std::optional<std::string>& variant = std::nullopt) {
    std::map<std::uint64_t, double> out;
    for (const auto& r : recs) {
        if (r.failed || r.model != model) continue;
        if (sweep && r.sweep_value != *sweep) continue;
        if (variant && r.variant != *variant) continue;
        out[r.seed] = field(r);
    }
    return out;
}

/// Median over seeds of combine(a_seed, b_seed); seeds missing either side
/// are skipped.
double paired_median(const std::map<std::uint64_t, double>& a,
                     const std::map<std::uint64_t, double>& b,
                     const std::function<double(double, double)>& combine) {
    std::vector<double> vals;
    for (const auto& [seed, av] : a) {
        auto it = b.find(seed);
        if (it != b.end()) vals.push_back(combine(av, it->second));
    }
    return median(std::move(vals));
}

/// Annotates every record of a seed with normalized_test_mse relative to the
/// seed's reference record (model at sweep value).
void normalize_records(std::vector<RunRecord>& recs, std::string_view ref_model,
                       double ref_sweep) {
    std::map<std::uint64_t, double> ref;
    for (const auto& r : recs)
        if (!r.failed && r.model == ref_model && r.sweep_value == ref_sweep && r.test_mse > 0)
            ref[r.seed] = r.test_mse;
    for (auto& r : recs) {
        auto it = ref.find(r.seed);
        if (it == ref.end() || r.failed) continue;
        r.extra["normalizer_value"] = it->second;
        r.extra["normalized_test_mse"] = r.test_mse / it->second;
    }
}

std::string level_key(double v) { return fmt_double(v); }

// Runs the standard per-seed protocol for a set of model kinds; shared by the
// generalization and stability experiments so their records agree bitwise.
std::vector<RunRecord> standard_runs(const ExperimentConfig& cfg, const grid::GridCase& g,
                                     const std::vector<models::ModelKind>& kinds,
                                     bool keep_epochs, bool checkpoints) {
    std::map<std::uint64_t, dataset::LabeledDataset> datasets;
    for (auto seed : cfg.seeds)
        datasets.emplace(seed,
                         protocol_dataset(cfg, g, seed, cfg.dataset_size, cfg.corruption_level));

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        for (auto kind : kinds) {
            RunSpec rs = spec_for(cfg, kind, seed);
            rs.keep_epochs = keep_epochs;
            Task t;
            t.fallback.seed = seed;
            t.fallback.model = rs.label;
            const dataset::LabeledDataset& ds = datasets.at(seed);
            t.work = [&cfg, &g, &ds, rs, checkpoints]() -> std::vector<RunRecord> {
                models::Surrogate trained;
                models::TrainResult tr;
                RunRecord rec = run_training(cfg, g, ds, rs, &trained, &tr);
                if (checkpoints) {
                    const std::string base = cfg.out_dir + "/checkpoints/" + rs.label + "_seed" +
                                             std::to_string(rs.seed);
                    models::save_checkpoint(base + ".txt", trained);
                    models::save_checkpoint(base + "_best.txt", tr.best);
                }
                return {std::move(rec)};
            };
            tasks.push_back(std::move(t));
        }
    }
    return execute(cfg, tasks);
}

void add_pairwise_reductions(ExperimentResult& res, const std::vector<models::ModelKind>& kinds) {
    auto has = [&](models::ModelKind k) {
        return std::find(kinds.begin(), kinds.end(), k) != kinds.end();
    };
    if (!has(models::ModelKind::Nn)) return;
    auto reduction = [](double nn, double q) { return (1.0 - q / nn) * 100.0; };
    const auto nn_test = by_seed(res.records, "nn", std::nullopt, test_of);
    const auto nn_train = by_seed(res.records, "nn", std::nullopt, train_of);
    const auto nn_emean = by_seed(res.records, "nn", std::nullopt, emean_of);
    const auto nn_estd = by_seed(res.records, "nn", std::nullopt, estd_of);
    for (auto kind : {models::ModelKind::Qcnn, models::ModelKind::Qnn}) {
        if (!has(kind)) continue;
        const std::string name(models::kind_name(kind));
        res.aggregates["reduction_test_" + name + "_vs_nn_pct"] = paired_median(
            nn_test, by_seed(res.records, name, std::nullopt, test_of), reduction);
        res.aggregates["reduction_train_" + name + "_vs_nn_pct"] = paired_median(
            nn_train, by_seed(res.records, name, std::nullopt, train_of), reduction);
        res.aggregates["reduction_epoch_mean_" + name + "_vs_nn_pct"] = paired_median(
            nn_emean, by_seed(res.records, name, std::nullopt, emean_of), reduction);
        res.aggregates["reduction_epoch_std_" + name + "_vs_nn_pct"] = paired_median(
            nn_estd, by_seed(res.records, name, std::nullopt, estd_of), reduction);
    }
}

}  // namespace

// ------------------------------------------------------------------- basics

const std::vector<std::string>& experiment_ids() {
    static const std::vector<std::string> ids{
        "generalization", "robustness",  "trainsize",   "stability",
        "arch_sweep",     "hyper_search", "shots_sweep", "noise_sweep",
        "qubit_sweep",    "extreme_33bus", "pf_table"};
    return ids;
}

bool known_experiment(std::string_view id) {
    const auto& ids = experiment_ids();
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

double median(std::vector<double> v) {
    if (v.empty()) return nan_value();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

models::TrainConfig ExperimentConfig::train_config(std::uint64_t run_seed) const {
    models::TrainConfig tc;
    tc.lr = lr;
    tc.weight_decay = weight_decay;
    tc.dropout = dropout;
    tc.batch = batch;
    tc.epochs = epochs;
    tc.seed = run_seed;
    tc.shots = shots;
    return tc;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
    if (!experiment.empty() && !known_experiment(experiment))
        fail("unknown experiment '" + experiment + "'");
    if (grid_file.empty()) fail("grid_file is required");
    if (out_dir.empty()) fail("out_dir must be non-empty");
    if (seeds.empty()) fail("at least one seed is required");
    {
        std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
        if (uniq.size() != seeds.size()) fail("duplicate seeds");
    }
    if (pool_size < 1) fail("pool_size must be >= 1");
    if (pool_std_frac < 0) fail("pool_std_frac must be >= 0");
    if (dataset_size < 8) fail("dataset_size must be >= 8");
    if (dataset_size > pool_size) fail("dataset_size cannot exceed pool_size");
    if (corruption_level < 0 || corruption_level > 1) fail("corruption_level must be in [0, 1]");
    if (!(lr > 0)) fail("lr must be > 0");
    if (weight_decay < 0) fail("weight_decay must be >= 0");
    if (dropout < 0 || dropout >= 1) fail("dropout must be in [0, 1)");
    if (batch < 1) fail("batch must be >= 1");
    if (epochs < 1) fail("epochs must be >= 1");
    if (shots < 0) fail("shots must be >= 0");
    if (nn_hidden < 0) fail("nn_hidden must be >= 0");
    if (qcnn_qubits < 1 || qcnn_qubits > qsim::kMaxPureQubits)
        fail("qcnn_qubits must be in [1, " + std::to_string(qsim::kMaxPureQubits) + "]");
    if (qcnn_encoder_hidden < 0 || qcnn_decoder_hidden < 0)
        fail("qcnn encoder/decoder hidden counts must be >= 0");
    for (const auto& m : models) models::kind_from_name(m);  // throws on bad name
    for (double l : corruption_levels)
        if (l < 0 || l > 1) fail("corruption_levels entries must be in [0, 1]");
    for (int t : train_sizes) {
        if (t < 2) fail("train_sizes entries must be >= 2");
        if (4 * t > pool_size) fail("train_sizes entry needs 4x records; raise pool_size");
    }
    for (int d : arch_depths)
        if (d < 0) fail("arch_depths entries must be >= 0");
    if (hyper_budget < 1) fail("hyper_budget must be >= 1");
    for (int s : shots_grid)
        if (s < 1) fail("shots_grid entries must be >= 1");
    if (shot_reps < 1) fail("shot_reps must be >= 1");
    for (double l : noise_levels)
        if (l < 0 || l > 1) fail("noise_levels entries must be in [0, 1]");
    for (const auto& c : noise_channels) channel_noise(c, 0.0);  // throws on bad name
    for (int q : qubit_counts)
        if (q < 1 || q > qsim::kMaxPureQubits) fail("qubit_counts entries must be in [1, 12]");
    if (save_checkpoints < -1 || save_checkpoints > 1) fail("save_checkpoints must be -1, 0 or 1");
    if (save_epoch_logs < -1 || save_epoch_logs > 1) fail("save_epoch_logs must be -1, 0 or 1");
    if (jobs < 1) fail("jobs must be >= 1");
}

// ------------------------------------------------------------------- config

namespace {

std::vector<std::string> parse_list(const std::string& value) {
    std::vector<std::string> out;
    for (const auto& piece : split(value, ',')) {
        std::string t(trim(piece));
        if (t.empty()) throw std::invalid_argument("empty list element");
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& value) {
    std::vector<double> out;
    for (const auto& piece : parse_list(value)) out.push_back(parse_double(piece));
    return out;
}

std::vector<int> parse_int_list(const std::string& value) {
    std::vector<int> out;
    for (const auto& piece : parse_list(value))
        out.push_back(static_cast<int>(parse_long(piece)));
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& value) {
    std::vector<std::uint64_t> out;
    for (const auto& piece : parse_list(value)) {
        long long v = parse_long(piece);
        if (v < 0) throw std::invalid_argument("seeds must be non-negative");
        out.push_back(static_cast<std::uint64_t>(v));
    }
    return out;
}

int parse_int(const std::string& v) { return static_cast<int>(parse_long(v)); }

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    const auto lines = split(text, '\n');
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string line = lines[i];
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = std::string(trim(line));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(origin + ":" + std::to_string(i + 1) +
                                        ": expected key=value");
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (key.empty())
            throw std::invalid_argument(origin + ":" + std::to_string(i + 1) + ": empty key");
        if (!seen.insert(key).second)
            throw std::invalid_argument(origin + ":" + std::to_string(i + 1) +
                                        ": duplicate key '" + key + "'");
        try {
            if (key == "experiment") cfg.experiment = value;
            else if (key == "grid_file") cfg.grid_file = value;
            else if (key == "out_dir") cfg.out_dir = value;
            else if (key == "seeds") cfg.seeds = parse_seed_list(value);
            else if (key == "pool_size") cfg.pool_size = parse_int(value);
            else if (key == "pool_std_frac") cfg.pool_std_frac = parse_double(value);
            else if (key == "dataset_size") cfg.dataset_size = parse_int(value);
            else if (key == "corruption_level") cfg.corruption_level = parse_double(value);
            else if (key == "lr") cfg.lr = parse_double(value);
            else if (key == "weight_decay") cfg.weight_decay = parse_double(value);
            else if (key == "dropout") cfg.dropout = parse_double(value);
            else if (key == "batch") cfg.batch = parse_int(value);
            else if (key == "epochs") cfg.epochs = parse_int(value);
            else if (key == "shots") cfg.shots = parse_int(value);
            else if (key == "nn_hidden") cfg.nn_hidden = parse_int(value);
            else if (key == "qcnn_qubits") cfg.qcnn_qubits = parse_int(value);
            else if (key == "qcnn_encoder_hidden") cfg.qcnn_encoder_hidden = parse_int(value);
            else if (key == "qcnn_decoder_hidden") cfg.qcnn_decoder_hidden = parse_int(value);
            else if (key == "models") cfg.models = parse_list(value);
            else if (key == "corruption_levels") cfg.corruption_levels = parse_double_list(value);
            else if (key == "train_sizes") cfg.train_sizes = parse_int_list(value);
            else if (key == "arch_depths") cfg.arch_depths = parse_int_list(value);
            else if (key == "hyper_budget") cfg.hyper_budget = parse_int(value);
            else if (key == "shots_grid") cfg.shots_grid = parse_int_list(value);
            else if (key == "shot_reps") cfg.shot_reps = parse_int(value);
            else if (key == "noise_levels") cfg.noise_levels = parse_double_list(value);
            else if (key == "noise_channels") cfg.noise_channels = parse_list(value);
            else if (key == "qubit_counts") cfg.qubit_counts = parse_int_list(value);
            else if (key == "save_checkpoints") cfg.save_checkpoints = parse_int(value);
            else if (key == "save_epoch_logs") cfg.save_epoch_logs = parse_int(value);
            else if (key == "jobs") cfg.jobs = parse_int(value);
            else
                throw std::invalid_argument("unknown key '" + key + "'");
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(origin + ":" + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    return parse_config_text(read_file(path), path);
}

bool ExperimentResult::all_ok() const {
    for (const auto& r : records)
        if (r.failed) return false;
    return true;
}

double ExperimentResult::median_test_mse(std::string_view model, double sweep_value) const {
    std::vector<double> vals;
    for (const auto& r : records)
        if (!r.failed && r.model == model && r.sweep_value == sweep_value)
            vals.push_back(r.test_mse);
    return median(std::move(vals));
}

// -------------------------------------------------------------- experiments

ExperimentResult run_generalization(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "generalization";
    const auto g = grid::load_grid(cfg.grid_file);
    const auto kinds = resolved_kinds(cfg, {"nn", "qcnn", "qnn"});
    res.records = standard_runs(cfg, g, kinds, toggle(cfg.save_epoch_logs, true),
                                toggle(cfg.save_checkpoints, true));
    for (auto kind : kinds) {
        const std::string name(models::kind_name(kind));
        res.aggregates["median_test_" + name] =
            median(gather(res.records, name, std::nullopt, test_of));
        res.aggregates["median_train_" + name] =
            median(gather(res.records, name, std::nullopt, train_of));
        res.aggregates["median_epoch_std_" + name] =
            median(gather(res.records, name, std::nullopt, estd_of));
    }
    add_pairwise_reductions(res, kinds);
    res.notes["protocol"] = "shared dataset per seed; per-model training streams";
    return res;
}

ExperimentResult run_stability(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "stability";
    const auto g = grid::load_grid(cfg.grid_file);
    const auto kinds = resolved_kinds(cfg, {"nn", "qcnn", "qnn"});
    res.records = standard_runs(cfg, g, kinds, toggle(cfg.save_epoch_logs, true),
                                toggle(cfg.save_checkpoints, false));
    for (auto kind : kinds) {
        const std::string name(models::kind_name(kind));
        res.aggregates["median_final_train_" + name] =
            median(gather(res.records, name, std::nullopt, train_of));
        res.aggregates["median_epoch_mean_" + name] =
            median(gather(res.records, name, std::nullopt, emean_of));
        res.aggregates["median_epoch_std_" + name] =
            median(gather(res.records, name, std::nullopt, estd_of));
    }
    add_pairwise_reductions(res, kinds);
    res.notes["protocol"] = "per-epoch training MSE statistics over the full run";
    return res;
}

ExperimentResult run_robustness(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "robustness";
    res.sweep_key = "corruption_level";
    const auto g = grid::load_grid(cfg.grid_file);
    const auto kinds = resolved_kinds(cfg, {"nn", "qcnn", "qnn"});
    auto levels = resolved_corruption_levels(cfg);
    std::sort(levels.begin(), levels.end());

    std::map<std::uint64_t, dataset::LabeledDataset> clean;
    for (auto seed : cfg.seeds)
        clean.emplace(seed, clean_dataset(cfg, g, seed, cfg.dataset_size));

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        for (double level : levels) {
            for (auto kind : kinds) {
                RunSpec rs = spec_for(cfg, kind, seed);
                rs.sweep = level;
                rs.keep_epochs = toggle(cfg.save_epoch_logs, false);
                Task t;
                t.fallback.seed = seed;
                t.fallback.model = rs.label;
                t.fallback.sweep_value = level;
                const dataset::LabeledDataset& base = clean.at(seed);
                t.work = [&cfg, &g, &base, rs, level]() -> std::vector<RunRecord> {
                    dataset::LabeledDataset ds =
                        level > 0 ? dataset::corrupt(base, level,
                                                     Rng::derive(rs.seed, kCorruptStream))
                                  : base;
                    return {run_training(cfg, g, ds, rs)};
                };
                tasks.push_back(std::move(t));
            }
        }
    }
    res.records = execute(cfg, tasks);

    const double lo = levels.front(), hi = levels.back();
    if (std::find(kinds.begin(), kinds.end(), models::ModelKind::Qnn) != kinds.end())
        normalize_records(res.records, "qnn", hi);

    res.series["corruption_levels"] = levels;
    for (auto kind : kinds) {
        const std::string name(models::kind_name(kind));
        std::vector<double> curve;
        for (double level : levels)
            curve.push_back(median(gather(res.records, name, level, test_of)));
        res.series["median_test_" + name] = curve;
        const auto at_lo = by_seed(res.records, name, lo, test_of);
        const auto at_hi = by_seed(res.records, name, hi, test_of);
        res.aggregates[name + "_median_ratio"] =
            paired_median(at_hi, at_lo, [](double h, double l) { return h / l; });
        const double mlo = median(gather(res.records, name, lo, test_of));
        const double mhi = median(gather(res.records, name, hi, test_of));
        res.aggregates[name + "_ratio_of_medians"] = mhi / mlo;
        res.aggregates["median_test_" + name + "_at_" + level_key(lo)] = mlo;
        res.aggregates["median_test_" + name + "_at_" + level_key(hi)] = mhi;
    }
    res.notes["normalization"] =
        "normalized_test_mse divides by the seed's qnn test MSE at the highest level";
    return res;
}

ExperimentResult run_trainsize(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "trainsize";
    res.sweep_key = "train_size";
    const auto g = grid::load_grid(cfg.grid_file);
    const auto kinds = resolved_kinds(cfg, {"nn", "qcnn"});
    std::vector<int> sizes = cfg.train_sizes;
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    const int base_size = sizes.front();

    std::map<std::pair<std::uint64_t, int>, dataset::LabeledDataset> datasets;
    for (auto seed : cfg.seeds)
        for (int size : sizes) {
            const bool needed =
                size == base_size ||
                std::any_of(kinds.begin(), kinds.end(),
                            [](models::ModelKind k) { return k != models::ModelKind::Qcnn; });
            if (!needed) continue;
            datasets.emplace(std::make_pair(seed, size),
                             protocol_dataset(cfg, g, seed, 4 * size, cfg.corruption_level));
        }

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        for (int size : sizes) {
            for (auto kind : kinds) {
                // The quantum-classical model is the fixed small-data baseline.
                if (kind == models::ModelKind::Qcnn && size != base_size) continue;
                RunSpec rs = spec_for(cfg, kind, seed);
                rs.sweep = static_cast<double>(size);
                Task t;
                t.fallback.seed = seed;
                t.fallback.model = rs.label;
                t.fallback.sweep_value = rs.sweep;
                const dataset::LabeledDataset& ds = datasets.at({seed, size});
                t.work = [&cfg, &g, &ds, rs]() -> std::vector<RunRecord> {
                    return {run_training(cfg, g, ds, rs)};
                };
                tasks.push_back(std::move(t));
            }
        }
    }
    res.records = execute(cfg, tasks);

    if (std::find(kinds.begin(), kinds.end(), models::ModelKind::Qcnn) != kinds.end())
        normalize_records(res.records, "qcnn", static_cast<double>(base_size));

    res.series["train_sizes"] = std::vector<double>(sizes.begin(), sizes.end());
    for (auto kind : kinds) {
        const std::string name(models::kind_name(kind));
        std::vector<double> curve;
        for (int size : sizes)
            curve.push_back(
                median(gather(res.records, name, static_cast<double>(size), test_of)));
        res.series["median_test_" + name] = curve;
        for (int size : sizes) {
            const double m = median(gather(res.records, name, static_cast<double>(size), test_of));
            if (std::isfinite(m))
                res.aggregates["median_test_" + name + "_" + std::to_string(size)] = m;
        }
    }
    const double nn_max =
        median(gather(res.records, "nn", static_cast<double>(sizes.back()), test_of));
    const double qcnn_base =
        median(gather(res.records, "qcnn", static_cast<double>(base_size), test_of));
    if (std::isfinite(nn_max) && std::isfinite(qcnn_base))
        res.aggregates["nn_at_max_gt_qcnn_at_base"] = nn_max > qcnn_base ? 1.0 : 0.0;
    res.notes["protocol"] =
        "train split = sweep value; total records = 4x (quarter/quarter/half splits)";
    return res;
}

ExperimentResult run_arch_sweep(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "arch_sweep";
    res.sweep_key = "hidden_layers";
    const auto g = grid::load_grid(cfg.grid_file);
    std::vector<int> depths = cfg.arch_depths;
    std::sort(depths.begin(), depths.end());
    depths.erase(std::unique(depths.begin(), depths.end()), depths.end());

    std::map<std::uint64_t, dataset::LabeledDataset> datasets;
    for (auto seed : cfg.seeds)
        datasets.emplace(seed,
                         protocol_dataset(cfg, g, seed, cfg.dataset_size, cfg.corruption_level));

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        for (int depth : depths) {
            const auto kind = depth == 0 ? models::ModelKind::Lr : models::ModelKind::Nn;
            RunSpec rs = spec_for(cfg, kind, seed);
            rs.nn_depth = depth;
            rs.label = depth == 0 ? "LR" : "NN_" + std::to_string(depth);
            rs.sweep = static_cast<double>(depth);
            Task t;
            t.fallback.seed = seed;
            t.fallback.model = rs.label;
            t.fallback.sweep_value = rs.sweep;
            const dataset::LabeledDataset& ds = datasets.at(seed);
            t.work = [&cfg, &g, &ds, rs]() -> std::vector<RunRecord> {
                return {run_training(cfg, g, ds, rs)};
            };
            tasks.push_back(std::move(t));
        }
    }
    res.records = execute(cfg, tasks);

    if (std::find(depths.begin(), depths.end(), 7) != depths.end()) {
        for (const auto& r : res.records)
            if (r.model == "NN_7") {
                normalize_records(res.records, "NN_7", 7.0);
                break;
            }
    }
    res.series["hidden_layers"] = std::vector<double>(depths.begin(), depths.end());
    std::vector<double> curve;
    double best_nn = nan_value();
    for (int depth : depths) {
        const std::string label = depth == 0 ? "LR" : "NN_" + std::to_string(depth);
        const double m = median(gather(res.records, label, static_cast<double>(depth), test_of));
        curve.push_back(m);
        res.aggregates["median_test_" + label] = m;
        if (depth > 0 && (!std::isfinite(best_nn) || m < best_nn)) best_nn = m;
    }
    res.series["median_test"] = curve;
    if (depths.front() == 0 && std::isfinite(best_nn))
        res.aggregates["lr_gt_best_nn"] = res.aggregates.at("median_test_LR") > best_nn ? 1.0 : 0.0;
    return res;
}

ExperimentResult run_hyper_search(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "hyper_search";
    res.sweep_key = "trial";
    const auto g = grid::load_grid(cfg.grid_file);

    struct Trial {
        double lr, weight_decay, dropout;
    };
    std::vector<Trial> trials;
    for (int t = 0; t < cfg.hyper_budget; ++t) {
        Rng hr(Rng::derive(kHyperStream, static_cast<std::uint64_t>(t)));
        Trial tr;
        tr.lr = std::pow(10.0, hr.uniform(-6.0, -1.0));
        tr.weight_decay = std::pow(10.0, hr.uniform(-6.0, -1.0));
        tr.dropout = hr.uniform(0.0, 0.02);
        trials.push_back(tr);
    }

    std::map<std::uint64_t, dataset::LabeledDataset> datasets;
    for (auto seed : cfg.seeds)
        datasets.emplace(seed,
                         protocol_dataset(cfg, g, seed, cfg.dataset_size, cfg.corruption_level));

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        for (int t = 0; t < cfg.hyper_budget; ++t) {
            RunSpec rs = spec_for(cfg, models::ModelKind::Nn, seed);
            rs.sweep = static_cast<double>(t);
            rs.tc.lr = trials[t].lr;
            rs.tc.weight_decay = trials[t].weight_decay;
            rs.tc.dropout = trials[t].dropout;
            Task task;
            task.fallback.seed = seed;
            task.fallback.model = rs.label;
            task.fallback.sweep_value = rs.sweep;
            const dataset::LabeledDataset& ds = datasets.at(seed);
            const Trial trial = trials[t];
            task.work = [&cfg, &g, &ds, rs, trial]() -> std::vector<RunRecord> {
                RunRecord rec = run_training(cfg, g, ds, rs);
                rec.extra["lr"] = trial.lr;
                rec.extra["weight_decay"] = trial.weight_decay;
                rec.extra["dropout"] = trial.dropout;
                return {std::move(rec)};
            };
            tasks.push_back(std::move(task));
        }
    }
    res.records = execute(cfg, tasks);

    int best_trial = -1;
    double best_val = nan_value();
    for (int t = 0; t < cfg.hyper_budget; ++t) {
        const double mv = median(gather(res.records, "nn", static_cast<double>(t),
                                        [](const RunRecord& r) { return r.val_mse; }));
        if (std::isfinite(mv) && (best_trial < 0 || mv < best_val)) {
            best_trial = t;
            best_val = mv;
        }
    }
    if (best_trial >= 0) {
        res.aggregates["best_trial"] = static_cast<double>(best_trial);
        res.aggregates["best_median_val_mse"] = best_val;
        res.aggregates["best_median_test_mse"] =
            median(gather(res.records, "nn", static_cast<double>(best_trial), test_of));
        res.aggregates["best_lr"] = trials[best_trial].lr;
        res.aggregates["best_weight_decay"] = trials[best_trial].weight_decay;
        res.aggregates["best_dropout"] = trials[best_trial].dropout;
    }
    res.notes["selection"] = "median validation MSE over seeds; trial draws are seed-independent";
    return res;
}

ExperimentResult run_shots_sweep(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "shots_sweep";
    res.sweep_key = "shots";
    const auto g = grid::load_grid(cfg.grid_file);
    const int qubits = 2 * g.pq_count();
    if (qubits > qsim::kMaxPureQubits)
        throw std::invalid_argument("shots sweep needs a grid with at most " +
                                    std::to_string(qsim::kMaxPureQubits / 2) + " load buses");
    std::vector<int> shots_grid = resolved_shots_grid(cfg);
    std::sort(shots_grid.begin(), shots_grid.end());

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        Task t;
        t.fallback.seed = seed;
        t.fallback.model = "circuit";
        t.work = [&cfg, seed, qubits, shots_grid]() -> std::vector<RunRecord> {
            const auto circuit = models::build_qnn_circuit(qubits);
            Rng rng(Rng::derive(seed, kShotStream));
            std::vector<double> err(shots_grid.size(), 0.0);
            for (int rep = 0; rep < cfg.shot_reps; ++rep) {
                std::vector<double> bindings(static_cast<std::size_t>(circuit.param_count));
                for (auto& b : bindings) b = rng.uniform(-std::numbers::pi, std::numbers::pi);
                const auto state = qsim::run_circuit(circuit, bindings);
                std::vector<double> exact(static_cast<std::size_t>(qubits));
                for (int q = 0; q < qubits; ++q) exact[q] = qsim::expectation_z(state, q);
                for (std::size_t si = 0; si < shots_grid.size(); ++si)
                    for (int q = 0; q < qubits; ++q) {
                        const double est =
                            qsim::sample_shots(state, q, shots_grid[si], rng);
                        err[si] += std::abs(est - exact[q]);
                    }
            }
            const double count = static_cast<double>(cfg.shot_reps) * qubits;
            std::vector<RunRecord> recs;
            for (std::size_t si = 0; si < shots_grid.size(); ++si) {
                RunRecord r;
                r.seed = seed;
                r.model = "circuit";
                r.sweep_value = static_cast<double>(shots_grid[si]);
                r.extra["mean_abs_error"] = err[si] / count;
                recs.push_back(std::move(r));
            }
            return recs;
        };
        tasks.push_back(std::move(t));
    }
    res.records = execute(cfg, tasks);

    std::vector<double> med_err;
    for (int s : shots_grid)
        med_err.push_back(median(gather(res.records, "circuit", static_cast<double>(s),
                                        [](const RunRecord& r) {
                                            return r.extra.at("mean_abs_error");
                                        })));
    res.series["shots"] = std::vector<double>(shots_grid.begin(), shots_grid.end());
    res.series["median_abs_error"] = med_err;

    // Log-log slope over the 64..16384 window.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < shots_grid.size(); ++i) {
        if (shots_grid[i] < 64 || shots_grid[i] > 16384) continue;
        if (!(med_err[i] > 0)) continue;
        const double x = std::log10(static_cast<double>(shots_grid[i]));
        const double y = std::log10(med_err[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n >= 2)
        res.aggregates["slope_log_error_vs_log_shots"] =
            (n * sxy - sx * sy) / (n * sxx - sx * sx);
    auto err_at = [&](int s) -> double {
        for (std::size_t i = 0; i < shots_grid.size(); ++i)
            if (shots_grid[i] == s) return med_err[i];
        return nan_value();
    };
    const double e1024 = err_at(1024), e16384 = err_at(16384);
    if (std::isfinite(e1024) && std::isfinite(e16384))
        res.aggregates["ratio_1024_over_16384"] = e1024 / e16384;
    res.notes["protocol"] = "random circuit instances; error = |exact - shot estimate| per qubit";
    return res;
}

ExperimentResult run_noise_sweep(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "noise_sweep";
    res.sweep_key = "noise_level";
    const auto g = grid::load_grid(cfg.grid_file);
    const auto kinds = resolved_kinds(cfg, {"qnn"});
    for (auto kind : kinds)
        if (kind != models::ModelKind::Qnn && kind != models::ModelKind::Qcnn)
            throw std::invalid_argument("noise_sweep applies to quantum models only");
    std::vector<double> levels = resolved_noise_levels(cfg);
    std::sort(levels.begin(), levels.end());
    const auto channels = resolved_noise_channels(cfg);

    std::map<std::uint64_t, dataset::LabeledDataset> datasets;
    for (auto seed : cfg.seeds)
        datasets.emplace(seed,
                         protocol_dataset(cfg, g, seed, cfg.dataset_size, cfg.corruption_level));

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        for (auto kind : kinds) {
            RunSpec rs = spec_for(cfg, kind, seed);
            Task t;
            t.fallback.seed = seed;
            t.fallback.model = rs.label;
            const dataset::LabeledDataset& ds = datasets.at(seed);
            t.work = [&cfg, &g, &ds, rs, levels, channels]() -> std::vector<RunRecord> {
                models::Surrogate trained;
                RunRecord base = run_training(cfg, g, ds, rs, &trained);
                std::vector<RunRecord> recs;
                for (const auto& channel : channels) {
                    for (double level : levels) {
                        RunRecord rec = base;
                        rec.variant = channel;
                        rec.sweep_value = level;
                        const auto nm = channel_noise(channel, level);
                        models::EvalContext ctx;
                        if (nm.any()) ctx.noise = &nm;
                        rec.test_mse = models::mse(trained, ds, dataset::Split::Test, ctx);
                        rec.extra["test_mse_per_component"] =
                            rec.test_mse / static_cast<double>(trained.outputs);
                        recs.push_back(std::move(rec));
                    }
                }
                return recs;
            };
            tasks.push_back(std::move(t));
        }
    }
    res.records = execute(cfg, tasks);

    res.series["noise_levels"] = levels;
    const double lo = levels.front(), hi = levels.back();
    for (auto kind : kinds) {
        const std::string name(models::kind_name(kind));
        for (const auto& channel : channels) {
            std::vector<double> curve;
            for (double level : levels)
                curve.push_back(
                    median(gather(res.records, name, level, test_of, channel)));
            res.series["median_test_" + name + "_" + channel] = curve;
            const auto at_lo = by_seed(res.records, name, lo, test_of, channel);
            const auto at_hi = by_seed(res.records, name, hi, test_of, channel);
            res.aggregates[name + "_" + channel + "_ratio_max_over_min"] =
                paired_median(at_hi, at_lo, [](double h, double l) { return h / l; });
        }
    }
    res.notes["protocol"] = "trained with exact expectations; noise applied at inference";
    return res;
}

ExperimentResult run_qubit_sweep(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "qubit_sweep";
    res.sweep_key = "qubits";
    const auto g = grid::load_grid(cfg.grid_file);
    std::vector<int> counts = cfg.qubit_counts;
    std::sort(counts.begin(), counts.end());
    counts.erase(std::unique(counts.begin(), counts.end()), counts.end());

    std::map<std::uint64_t, dataset::LabeledDataset> datasets;
    for (auto seed : cfg.seeds)
        datasets.emplace(seed,
                         protocol_dataset(cfg, g, seed, cfg.dataset_size, cfg.corruption_level));

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        for (int q : counts) {
            RunSpec rs = spec_for(cfg, models::ModelKind::Qcnn, seed);
            rs.qubits = q;
            rs.label = "QCNN_" + std::to_string(q);
            rs.sweep = static_cast<double>(q);
            Task t;
            t.fallback.seed = seed;
            t.fallback.model = rs.label;
            t.fallback.sweep_value = rs.sweep;
            const dataset::LabeledDataset& ds = datasets.at(seed);
            t.work = [&cfg, &g, &ds, rs]() -> std::vector<RunRecord> {
                return {run_training(cfg, g, ds, rs)};
            };
            tasks.push_back(std::move(t));
        }
    }
    res.records = execute(cfg, tasks);

    if (std::find(counts.begin(), counts.end(), 6) != counts.end())
        normalize_records(res.records, "QCNN_6", 6.0);

    res.series["qubits"] = std::vector<double>(counts.begin(), counts.end());
    std::vector<double> test_curve, train_curve;
    for (int q : counts) {
        const std::string label = "QCNN_" + std::to_string(q);
        const double mt = median(gather(res.records, label, static_cast<double>(q), test_of));
        test_curve.push_back(mt);
        train_curve.push_back(
            median(gather(res.records, label, static_cast<double>(q), train_of)));
        res.aggregates["median_test_" + label] = mt;
    }
    res.series["median_test"] = test_curve;
    res.series["median_train"] = train_curve;
    return res;
}

ExperimentResult run_extreme_33bus(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "extreme_33bus";
    const auto g = grid::load_grid(cfg.grid_file);
    const auto kinds = resolved_kinds(cfg, {"nn", "qcnn"});

    std::map<std::uint64_t, dataset::LabeledDataset> datasets;
    for (auto seed : cfg.seeds)
        datasets.emplace(seed,
                         protocol_dataset(cfg, g, seed, cfg.dataset_size, cfg.corruption_level));

    struct WorstCase {
        double max_v_mse = -1.0;
        std::uint64_t seed = 0;
        std::vector<double> v_true, v_pred, delta_true, delta_pred;
    };
    std::map<std::string, WorstCase> worst;  // by model label
    std::mutex worst_mutex;

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        for (auto kind : kinds) {
            RunSpec rs = spec_for(cfg, kind, seed);
            Task t;
            t.fallback.seed = seed;
            t.fallback.model = rs.label;
            const dataset::LabeledDataset& ds = datasets.at(seed);
            t.work = [&cfg, &g, &ds, rs, &worst, &worst_mutex]() -> std::vector<RunRecord> {
                models::Surrogate trained;
                RunRecord rec = run_training(cfg, g, ds, rs, &trained);
                const int m = g.pq_count();
                double max_v_mse = -1.0;
                std::size_t arg = 0;
                std::vector<double> arg_pred;
                for (std::size_t i : ds.indices(dataset::Split::Test)) {
                    const auto& r = ds.records[i];
                    const auto yhat = models::predict(trained, r.x);
                    double v_mse = 0.0;
                    for (int b = 0; b < m; ++b) {
                        const double d = yhat[b] - r.y[b];
                        v_mse += d * d;
                    }
                    v_mse /= m;
                    if (v_mse > max_v_mse) {
                        max_v_mse = v_mse;
                        arg = i;
                        arg_pred = yhat;
                    }
                }
                rec.extra["max_v_mse"] = max_v_mse;
                {
                    std::lock_guard<std::mutex> lock(worst_mutex);
                    WorstCase& w = worst[rs.label];
                    if (max_v_mse > w.max_v_mse ||
                        (max_v_mse == w.max_v_mse && rs.seed < w.seed)) {
                        w.max_v_mse = max_v_mse;
                        w.seed = rs.seed;
                        const auto& y = ds.records[arg].y;
                        w.v_true.assign(y.begin(), y.begin() + m);
                        w.delta_true.assign(y.begin() + m, y.end());
                        w.v_pred.assign(arg_pred.begin(), arg_pred.begin() + m);
                        w.delta_pred.assign(arg_pred.begin() + m, arg_pred.end());
                    }
                }
                return {std::move(rec)};
            };
            tasks.push_back(std::move(t));
        }
    }
    res.records = execute(cfg, tasks);

    for (auto kind : kinds) {
        const std::string name(models::kind_name(kind));
        res.aggregates["median_max_v_mse_" + name] =
            median(gather(res.records, name, std::nullopt,
                          [](const RunRecord& r) { return r.extra.at("max_v_mse"); }));
        res.aggregates["median_test_" + name] =
            median(gather(res.records, name, std::nullopt, test_of));
        auto it = worst.find(name);
        if (it != worst.end() && it->second.max_v_mse >= 0) {
            res.aggregates["worst_v_mse_" + name] = it->second.max_v_mse;
            res.aggregates["worst_seed_" + name] = static_cast<double>(it->second.seed);
            res.series["radar_v_true_" + name] = it->second.v_true;
            res.series["radar_v_pred_" + name] = it->second.v_pred;
            res.series["radar_delta_true_" + name] = it->second.delta_true;
            res.series["radar_delta_pred_" + name] = it->second.delta_pred;
        }
    }
    res.notes["radar"] =
        "radar_* series hold per-bus values at the worst test record over all seeds";
    return res;
}

ExperimentResult run_pf_table(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.experiment = "pf_table";
    const auto g = grid::load_grid(cfg.grid_file);
    const auto kinds = resolved_kinds(cfg, {"lr", "nn", "qcnn", "qnn"});

    std::map<std::uint64_t, dataset::LabeledDataset> datasets;
    for (auto seed : cfg.seeds)
        datasets.emplace(seed,
                         protocol_dataset(cfg, g, seed, cfg.dataset_size, cfg.corruption_level));

    std::vector<Task> tasks;
    for (auto seed : cfg.seeds) {
        for (auto kind : kinds) {
            RunSpec rs = spec_for(cfg, kind, seed);
            Task t;
            t.fallback.seed = seed;
            t.fallback.model = rs.label;
            const dataset::LabeledDataset& ds = datasets.at(seed);
            t.work = [&cfg, &g, &ds, rs]() -> std::vector<RunRecord> {
                models::Surrogate trained;
                RunRecord rec = run_training(cfg, g, ds, rs, &trained);
                const auto st = models::abs_error_stats(trained, ds, dataset::Split::Test);
                rec.extra["mean_v"] = st.mean_v;
                rec.extra["std_v"] = st.std_v;
                rec.extra["mean_delta"] = st.mean_delta;
                rec.extra["std_delta"] = st.std_delta;
                return {std::move(rec)};
            };
            tasks.push_back(std::move(t));
        }
    }
    res.records = execute(cfg, tasks);

    for (auto kind : kinds) {
        const std::string name(models::kind_name(kind));
        for (const char* key : {"mean_v", "std_v", "mean_delta", "std_delta"}) {
            res.aggregates["median_" + std::string(key) + "_" + name] =
                median(gather(res.records, name, std::nullopt, [key](const RunRecord& r) {
                    return r.extra.at(key);
                }));
        }
    }
    auto agg = [&](const char* key, const char* name) -> double {
        auto it = res.aggregates.find("median_" + std::string(key) + "_" + name);
        return it == res.aggregates.end() ? nan_value() : it->second;
    };
    const double lr_v = agg("mean_v", "lr"), nn_v = agg("mean_v", "nn");
    const double qcnn_v = agg("mean_v", "qcnn"), qnn_v = agg("mean_v", "qnn");
    if (std::isfinite(lr_v) && std::isfinite(nn_v) && std::isfinite(qcnn_v) &&
        std::isfinite(qnn_v))
        res.aggregates["voltage_order_qcnn_qnn_nn_lr"] =
            (qcnn_v < qnn_v && qnn_v < nn_v && nn_v < lr_v) ? 1.0 : 0.0;
    res.notes["units"] = "mean/std of absolute voltage error (pu) and angle error (degrees)";
    return res;
}

// ------------------------------------------------------------------ outputs

namespace {

std::string sanitize_message(std::string s) {
    for (char& c : s) {
        if (c == ',') c = ';';
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

json config_json(const ExperimentConfig& c) {
    json j;
    j["experiment"] = c.experiment;
    j["grid_file"] = c.grid_file;
    j["out_dir"] = c.out_dir;
    j["seeds"] = c.seeds;
    j["pool_size"] = c.pool_size;
    j["pool_std_frac"] = c.pool_std_frac;
    j["dataset_size"] = c.dataset_size;
    j["corruption_level"] = c.corruption_level;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["dropout"] = c.dropout;
    j["batch"] = c.batch;
    j["epochs"] = c.epochs;
    j["shots"] = c.shots;
    j["nn_hidden"] = c.nn_hidden;
    j["qcnn_qubits"] = c.qcnn_qubits;
    j["qcnn_encoder_hidden"] = c.qcnn_encoder_hidden;
    j["qcnn_decoder_hidden"] = c.qcnn_decoder_hidden;
    j["models"] = c.models;
    j["corruption_levels"] = resolved_corruption_levels(c);
    j["train_sizes"] = c.train_sizes;
    j["arch_depths"] = c.arch_depths;
    j["hyper_budget"] = c.hyper_budget;
    j["shots_grid"] = resolved_shots_grid(c);
    j["shot_reps"] = c.shot_reps;
    j["noise_levels"] = resolved_noise_levels(c);
    j["noise_channels"] = resolved_noise_channels(c);
    j["qubit_counts"] = c.qubit_counts;
    j["save_checkpoints"] = c.save_checkpoints;
    j["save_epoch_logs"] = c.save_epoch_logs;
    j["jobs"] = c.jobs;
    return j;
}

void write_results_csv(const ExperimentConfig& cfg, const ExperimentResult& res) {
    bool any_variant = false;
    std::set<std::string> extra_keys;
    for (const auto& r : res.records) {
        if (!r.variant.empty()) any_variant = true;
        for (const auto& [k, v] : r.extra) extra_keys.insert(k);
    }

    std::string out = "experiment,seed,model";
    if (any_variant) out += ",variant";
    if (!res.sweep_key.empty()) out += "," + res.sweep_key;
    out += ",status,message,train_mse,val_mse,test_mse,epoch_mean,epoch_std,circuit_evals";
    for (const auto& k : extra_keys) out += "," + k;
    out += "\n";

    for (const auto& r : res.records) {
        out += res.experiment + "," + std::to_string(r.seed) + "," + r.model;
        if (any_variant) out += "," + r.variant;
        if (!res.sweep_key.empty()) out += "," + fmt_double(r.sweep_value);
        out += r.failed ? ",failed," : ",ok,";
        out += sanitize_message(r.message);
        out += "," + fmt_double(r.train_mse);
        out += "," + fmt_double(r.val_mse);
        out += "," + fmt_double(r.test_mse);
        out += "," + fmt_double(r.epoch_mean);
        out += "," + fmt_double(r.epoch_std);
        out += "," + std::to_string(r.circuit_evals);
        for (const auto& k : extra_keys) {
            auto it = r.extra.find(k);
            out += ",";
            if (it != r.extra.end()) out += fmt_double(it->second);
        }
        out += "\n";
    }
    write_file_atomic(cfg.out_dir + "/results.csv", out);
}

void write_summary_json(const ExperimentConfig& cfg, const ExperimentResult& res) {
    json j;
    j["experiment"] = res.experiment;
    j["sweep_key"] = res.sweep_key;
    j["config"] = config_json(cfg);
    j["aggregates"] = json::object();
    for (const auto& [k, v] : res.aggregates) {
        if (std::isfinite(v))
            j["aggregates"][k] = v;
        else
            j["aggregates"][k] = nullptr;
    }
    j["notes"] = res.notes;
    j["series"] = res.series;
    int failed = 0;
    for (const auto& r : res.records)
        if (r.failed) ++failed;
    j["record_count"] = res.records.size();
    j["failed_runs"] = failed;
    write_file_atomic(cfg.out_dir + "/summary.json", j.dump(2) + "\n");
}

void write_epoch_logs(const ExperimentConfig& cfg, const ExperimentResult& res) {
    for (const auto& r : res.records) {
        if (r.epochs.empty()) continue;
        std::string name = "epochs_" + r.model;
        if (!r.variant.empty()) name += "_" + r.variant;
        if (!res.sweep_key.empty())
            name += "_" + res.sweep_key + fmt_double(r.sweep_value);
        name += "_seed" + std::to_string(r.seed) + ".csv";
        std::string out = "epoch,train_mse,val_mse\n";
        for (std::size_t e = 0; e < r.epochs.size(); ++e)
            out += std::to_string(e + 1) + "," + fmt_double(r.epochs[e].train_mse) + "," +
                   fmt_double(r.epochs[e].val_mse) + "\n";
        write_file_atomic(cfg.out_dir + "/" + name, out);
    }
}

}  // namespace

void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& result) {
    write_results_csv(cfg, result);
    write_summary_json(cfg, result);
    write_epoch_logs(cfg, result);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.experiment.empty()) throw std::invalid_argument("config: experiment id is required");
    ExperimentResult res;
    if (cfg.experiment == "generalization") res = run_generalization(cfg);
    else if (cfg.experiment == "robustness") res = run_robustness(cfg);
    else if (cfg.experiment == "trainsize") res = run_trainsize(cfg);
    else if (cfg.experiment == "stability") res = run_stability(cfg);
    else if (cfg.experiment == "arch_sweep") res = run_arch_sweep(cfg);
    else if (cfg.experiment == "hyper_search") res = run_hyper_search(cfg);
    else if (cfg.experiment == "shots_sweep") res = run_shots_sweep(cfg);
    else if (cfg.experiment == "noise_sweep") res = run_noise_sweep(cfg);
    else if (cfg.experiment == "qubit_sweep") res = run_qubit_sweep(cfg);
    else if (cfg.experiment == "extreme_33bus") res = run_extreme_33bus(cfg);
    else if (cfg.experiment == "pf_table") res = run_pf_table(cfg);
    else throw std::invalid_argument("unknown experiment '" + cfg.experiment + "'");
    write_outputs(cfg, res);
    return res;
}

}  // namespace qpf::experiments
