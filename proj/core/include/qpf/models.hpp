#pragma once

#include <cstdint>
#include <string_view>

#include "qpf/dataset.hpp"
#include "qpf/mlp.hpp"
#include "qpf/qsim.hpp"

namespace qpf::models {

enum class ModelKind { Lr, Nn, Qnn, Qcnn };
std::string_view kind_name(ModelKind k);
ModelKind kind_from_name(std::string_view name);

/// Output intervals: v in [0.85, 1.15] pu, delta in [-8, 8] degrees.
inline constexpr double kVCenter = 1.0;
inline constexpr double kVHalfSpan = 0.15;
inline constexpr double kDeltaHalfSpan = 8.0;

struct Standardizer {
    std::vector<double> mean, std;  // empty = identity
    bool identity() const { return mean.empty(); }
    std::vector<double> apply(std::span<const double> x) const;
};

/// Per-feature mean/std over the train split; constant features get std 1.
Standardizer fit_standardizer(const dataset::LabeledDataset& ds);

/// Feature block (H on each qubit, Rz bound to parameter i) followed by the
/// ansatz: Ry layer (parameters q..2q-1), CNOT chain i -> i+1, Ry layer
/// (parameters 2q..3q-1). Bindings are [input angles, ansatz angles].
qsim::Circuit build_qnn_circuit(int qubits);

/// Input angles: atan of each feature, in (-pi/2, pi/2). Throws on non-finite.
std::vector<double> encode_angles(std::span<const double> x);

/// Pairwise readout: qubit 2i carries v_i = 1 + 0.15 <Z>, qubit 2i+1 carries
/// delta_i = 8 <Z>; output layout [v_1..v_m, delta_1..delta_m].
std::vector<double> post_map(std::span<const double> z);

/// Hidden-width rule for an n-bus system: first and last hidden layers are
/// 2n wide, intermediate ones 4n. count = 0 gives the linear-regression
/// baseline, count = k gives the NN_k architecture.
std::vector<int> hidden_widths(int count, int n_buses);

struct Surrogate {
    ModelKind kind = ModelKind::Nn;
    int inputs = 0;   // 2m features
    int outputs = 0;  // 2m targets
    int qubits = 0;   // qnn/qcnn only
    Standardizer stdz;

    mlp::MlpSpec net_spec;  // lr/nn
    mlp::Params net;
    mlp::MlpSpec enc_spec;  // qcnn encoder (out width = qubits)
    mlp::Params enc;
    mlp::MlpSpec dec_spec;  // qcnn decoder (in width = qubits)
    mlp::Params dec;
    std::vector<double> ansatz;  // qnn/qcnn, 2*qubits angles
    qsim::Circuit circuit;       // qnn/qcnn

    std::size_t param_count() const;
    /// Draws every trainable block; order: net, encoder, decoder, ansatz.
    void init(Rng& rng);
};

Surrogate make_lr(int pq_buses);
Surrogate make_nn(int pq_buses, int n_buses, int hidden_layers, double dropout = 0.0);
Surrogate make_qnn(int pq_buses);
Surrogate make_qcnn(int pq_buses, int n_buses, int qubits, int encoder_hidden,
                    int decoder_hidden, double dropout = 0.0);

struct EvalContext {
    const qsim::NoiseModel* noise = nullptr;  // quantum layers only
    int shots = 0;                            // 0 = exact expectations
    Rng* shot_rng = nullptr;                  // required when shots > 0
};

std::vector<double> predict(const Surrogate& model, std::span<const double> x,
                            const EvalContext& ctx = {});

/// Mean over the split's records of the summed squared component error,
/// physical units (pu and degrees).
double mse(const Surrogate& model, const dataset::LabeledDataset& ds, dataset::Split split,
           const EvalContext& ctx = {});

struct ErrorStats {
    double mean_v = 0, std_v = 0;          // |v_hat - v|, pu
    double mean_delta = 0, std_delta = 0;  // |delta_hat - delta|, degrees
};
ErrorStats abs_error_stats(const Surrogate& model, const dataset::LabeledDataset& ds,
                           dataset::Split split, const EvalContext& ctx = {});

/// Gradient of a scalar loss through the quantum layer: given dL/d<Z_i>,
/// returns dL/d(input angle) and dL/d(ansatz angle) via the parameter-shift
/// rule on the weighted observable. Both blocks are always computed, so the
/// per-record circuit-evaluation count is identical for the QNN (which
/// discards the input block) and the QCNN. evals counts state preparations.
struct QuantumGrads {
    std::vector<double> input_angles;
    std::vector<double> ansatz;
    long evals = 0;
};
QuantumGrads quantum_layer_backward(const qsim::Circuit& circuit,
                                    std::span<const double> bindings,
                                    std::span<const double> dl_dz,
                                    const EvalContext& ctx = {});

/// Trainable parameters as one flat vector, in the order used by
/// param_count(): net, encoder, decoder (each layer w then b), ansatz.
std::vector<double> flatten_params(const Surrogate& model);
void unflatten_params(Surrogate& model, std::span<const double> flat);

/// Summed squared error of one record and its gradient with respect to the
/// flat parameter vector, computed through the same backward path the
/// training loop uses (evaluation mode, no dropout). For gradient checks.
double loss_gradient(const Surrogate& model, std::span<const double> x,
                     std::span<const double> y, std::vector<double>& grad,
                     const EvalContext& ctx = {});

struct TrainConfig {
    double lr = 1.5e-4;
    double weight_decay = 3e-3;
    double dropout = 0.0;
    int batch = 16;
    int epochs = 1000;
    std::uint64_t seed = 1;
    int shots = 0;             // quantum layers: 0 = exact expectations
    qsim::NoiseModel noise{};  // quantum layers, training and evaluation
};

struct EpochStats {
    double train_mse = 0;
    double val_mse = 0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    double final_train_mse = 0, final_val_mse = 0, test_mse = 0;
    double best_val_mse = 0;
    int best_epoch = 0;   // 1-based
    Surrogate best;       // parameters at the best validation epoch
    long optimizer_steps = 0;
    long circuit_evals = 0;
    double wall_seconds = 0;  // console diagnostics only; kept out of artifacts
};

/// Seeded minibatch Adam training (initializes the model in place). Dropout,
/// shots and noise come from the config; epoch metrics are evaluation-mode
/// MSE over the full train/validation splits. Throws on non-finite loss.
TrainResult train(Surrogate& model, const dataset::LabeledDataset& ds,
                  const TrainConfig& cfg);

/// Structured-text checkpoint: header, dimensions, standardizer, one block
/// per classical net, ansatz angles for quantum models.
void save_checkpoint(const std::string& path, const Surrogate& model);
Surrogate load_checkpoint(const std::string& path);

} // namespace qpf::models
