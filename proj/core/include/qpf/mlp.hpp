#pragma once

#include <span>
#include <string>
#include <vector>

#include "qpf/rng.hpp"

namespace qpf::mlp {

/// Feed-forward net: affine + rectifier per hidden layer, identity output.
/// hidden may be empty (plain linear regression).
struct MlpSpec {
    int input = 0;
    std::vector<int> hidden;
    int output = 0;
    double dropout = 0.0; // inverted dropout on hidden activations, train mode only

    int layer_count() const { return static_cast<int>(hidden.size()) + 1; }
    std::vector<int> widths() const; // [input, hidden..., output]
    void validate() const;
};

struct Layer {
    int rows = 0, cols = 0;     // rows = fan-out, cols = fan-in
    std::vector<double> w;      // row-major rows x cols
    std::vector<double> b;      // rows
};

struct Params {
    std::vector<Layer> layers;
    std::size_t count() const;
    void fill(double value);
};

Params zero_params(const MlpSpec& spec);
/// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases; draw
/// order is layer by layer, weights row-major then biases.
Params init_params(const MlpSpec& spec, Rng& rng);

struct ForwardCache {
    std::vector<std::vector<double>> act;  // act[0] = input, act[L] = output
    std::vector<std::vector<double>> pre;  // pre-activations per layer
    std::vector<std::vector<double>> mask; // dropout keep-scale per hidden layer
};

std::vector<double> forward(const MlpSpec& spec, const Params& params,
                            std::span<const double> x, ForwardCache* cache = nullptr,
                            bool train_mode = false, Rng* dropout_rng = nullptr);

/// Accumulates dL/dparams into grads given upstream = dL/doutput; optionally
/// emits dL/dinput.
void backward(const MlpSpec& spec, const Params& params, const ForwardCache& cache,
              std::span<const double> upstream, Params& grads,
              std::vector<double>* dx = nullptr);

/// Sum of squared component errors for one record; the batch loss is the mean
/// of this over records.
double sum_sq_error(std::span<const double> predicted, std::span<const double> target);

struct AdamConfig {
    double lr = 1.5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // decoupled: params *= (1 - lr*decay) before the update
};

struct AdamVec {
    std::vector<double> m, v;
};

/// One Adam step on a flat parameter vector; t is the 1-based step count.
void adam_step(std::vector<double>& params, std::span<const double> grads, AdamVec& state,
               long t, const AdamConfig& cfg);

struct MlpAdam {
    std::vector<AdamVec> w, b; // per layer
    long t = 0;
};

MlpAdam make_mlp_adam(const Params& params);
void adam_step(Params& params, const Params& grads, MlpAdam& state, const AdamConfig& cfg);

/// Checkpoint block, structured text:
///   block <name>
///   widths <input> <hidden...> <output>
///   dropout <p>
///   layer <k>
///   w <rows*cols values, row-major>
///   b <rows values>
///   ...
///   end
/// Values use shortest round-trip decimal form.
void append_checkpoint_block(std::string& out, const std::string& name, const MlpSpec& spec,
                             const Params& params);
/// Reads one block starting at lines[pos]; advances pos past `end`.
void read_checkpoint_block(const std::vector<std::string>& lines, std::size_t& pos,
                           std::string& name, MlpSpec& spec, Params& params);

} // namespace qpf::mlp
