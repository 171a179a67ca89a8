#include "qpf/models.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "qpf/textio.hpp"

namespace qpf::models {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

int half_width(std::size_t n, const char* what) {
    if (n == 0 || n % 2 != 0) fail(std::string(what) + ": length must be even and positive");
    return static_cast<int>(n / 2);
}

} // namespace

std::string_view kind_name(ModelKind k) {
    switch (k) {
    case ModelKind::Lr: return "lr";
    case ModelKind::Nn: return "nn";
    case ModelKind::Qnn: return "qnn";
    case ModelKind::Qcnn: return "qcnn";
    }
    fail("unknown model kind");
}

ModelKind kind_from_name(std::string_view name) {
    if (name == "lr") return ModelKind::Lr;
    if (name == "nn") return ModelKind::Nn;
    if (name == "qnn") return ModelKind::Qnn;
    if (name == "qcnn") return ModelKind::Qcnn;
    fail("unknown model kind '" + std::string(name) + "'");
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
    if (identity()) return {x.begin(), x.end()};
    if (x.size() != mean.size()) fail("standardizer: feature length mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / std[i];
    return out;
}

Standardizer fit_standardizer(const dataset::LabeledDataset& ds) {
    const std::vector<std::size_t> train = ds.indices(dataset::Split::Train);
    if (train.empty()) fail("fit_standardizer: no train records");
    const std::size_t d = ds.records[train[0]].x.size();
    Standardizer s;
    s.mean.assign(d, 0.0);
    s.std.assign(d, 0.0);
    for (std::size_t i : train)
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += ds.records[i].x[j];
    for (double& m : s.mean) m /= static_cast<double>(train.size());
    for (std::size_t i : train)
        for (std::size_t j = 0; j < d; ++j) {
            const double e = ds.records[i].x[j] - s.mean[j];
            s.std[j] += e * e;
        }
    for (double& v : s.std) {
        v = std::sqrt(v / static_cast<double>(train.size()));
        if (v < 1e-12) v = 1.0;
    }
    return s;
}

qsim::Circuit build_qnn_circuit(int qubits) {
    qsim::Circuit c(qubits);
    for (int i = 0; i < qubits; ++i) c.add(qsim::Gate::h(i));
    for (int i = 0; i < qubits; ++i) c.add(qsim::Gate::rz_p(i, i));
    for (int i = 0; i < qubits; ++i) c.add(qsim::Gate::ry_p(i, qubits + i));
    for (int i = 0; i + 1 < qubits; ++i) c.add(qsim::Gate::cnot(i, i + 1));
    for (int i = 0; i < qubits; ++i) c.add(qsim::Gate::ry_p(i, 2 * qubits + i));
    return c;
}

std::vector<double> encode_angles(std::span<const double> x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i])) fail("encode_angles: non-finite feature");
        out[i] = std::atan(x[i]);
    }
    return out;
}

std::vector<double> post_map(std::span<const double> z) {
    const int m = half_width(z.size(), "post_map");
    std::vector<double> out(z.size());
    for (int i = 0; i < m; ++i) {
        out[i] = kVCenter + kVHalfSpan * z[2 * i];
        out[m + i] = kDeltaHalfSpan * z[2 * i + 1];
    }
    return out;
}

std::vector<int> hidden_widths(int count, int n_buses) {
    if (count < 0) fail("hidden_widths: count must be >= 0");
    if (n_buses < 1) fail("hidden_widths: need at least one bus");
    if (count == 0) return {};
    std::vector<int> w(count, 4 * n_buses);
    w.front() = 2 * n_buses;
    w.back() = 2 * n_buses;
    return w;
}

std::size_t Surrogate::param_count() const {
    return net.count() + enc.count() + dec.count() + ansatz.size();
}

void Surrogate::init(Rng& rng) {
    switch (kind) {
    case ModelKind::Lr:
    case ModelKind::Nn:
        net = mlp::init_params(net_spec, rng);
        break;
    case ModelKind::Qnn:
        break;
    case ModelKind::Qcnn:
        enc = mlp::init_params(enc_spec, rng);
        dec = mlp::init_params(dec_spec, rng);
        break;
    }
    // Near-identity ansatz start: the quantum models begin at the centers of
    // the output intervals.
    for (double& a : ansatz) a = rng.uniform(-0.1, 0.1);
}

Surrogate make_lr(int pq_buses) {
    Surrogate s;
    s.kind = ModelKind::Lr;
    s.inputs = s.outputs = 2 * pq_buses;
    s.net_spec = {s.inputs, {}, s.outputs, 0.0};
    s.net_spec.validate();
    s.net = mlp::zero_params(s.net_spec);
    return s;
}

Surrogate make_nn(int pq_buses, int n_buses, int hidden_layers, double dropout) {
    if (hidden_layers < 1) fail("make_nn: need at least one hidden layer (use make_lr)");
    Surrogate s;
    s.kind = ModelKind::Nn;
    s.inputs = s.outputs = 2 * pq_buses;
    s.net_spec = {s.inputs, hidden_widths(hidden_layers, n_buses), s.outputs, dropout};
    s.net_spec.validate();
    s.net = mlp::zero_params(s.net_spec);
    return s;
}

Surrogate make_qnn(int pq_buses) {
    Surrogate s;
    s.kind = ModelKind::Qnn;
    s.inputs = s.outputs = 2 * pq_buses;
    s.qubits = 2 * pq_buses;
    s.ansatz.assign(2 * static_cast<std::size_t>(s.qubits), 0.0);
    s.circuit = build_qnn_circuit(s.qubits);
    return s;
}

Surrogate make_qcnn(int pq_buses, int n_buses, int qubits, int encoder_hidden,
                    int decoder_hidden, double dropout) {
    if (qubits < 1) fail("make_qcnn: need at least one qubit");
    Surrogate s;
    s.kind = ModelKind::Qcnn;
    s.inputs = s.outputs = 2 * pq_buses;
    s.qubits = qubits;
    s.enc_spec = {s.inputs, hidden_widths(encoder_hidden, n_buses), qubits, dropout};
    s.dec_spec = {qubits, hidden_widths(decoder_hidden, n_buses), s.outputs, dropout};
    s.enc_spec.validate();
    s.dec_spec.validate();
    s.enc = mlp::zero_params(s.enc_spec);
    s.dec = mlp::zero_params(s.dec_spec);
    s.ansatz.assign(2 * static_cast<std::size_t>(qubits), 0.0);
    s.circuit = build_qnn_circuit(qubits);
    return s;
}

namespace {

std::vector<double> quantum_forward(const Surrogate& s, std::span<const double> angles,
                                    const EvalContext& ctx, long* evals) {
    std::vector<double> bindings(angles.begin(), angles.end());
    bindings.insert(bindings.end(), s.ansatz.begin(), s.ansatz.end());
    if (evals) ++*evals;
    return qsim::evaluate_all_z(s.circuit, bindings, ctx.noise, ctx.shots, ctx.shot_rng);
}

/// Decoder output -> bounded physical outputs.
std::vector<double> bounded_head(std::span<const double> u) {
    const int m = half_width(u.size(), "bounded_head");
    std::vector<double> out(u.size());
    for (int i = 0; i < m; ++i) {
        out[i] = kVCenter + kVHalfSpan * std::tanh(u[i]);
        out[m + i] = kDeltaHalfSpan * std::tanh(u[m + i]);
    }
    return out;
}

struct HybridCache {
    mlp::ForwardCache enc, dec;
    std::vector<double> enc_out, angles, z, dec_out;
};

std::vector<double> forward_any(const Surrogate& s, std::span<const double> x,
                                const EvalContext& ctx, bool train_mode, Rng* dropout_rng,
                                mlp::ForwardCache* net_cache, HybridCache* hybrid,
                                long* evals) {
    switch (s.kind) {
    case ModelKind::Lr:
    case ModelKind::Nn: {
        const std::vector<double> xs = s.stdz.apply(x);
        return mlp::forward(s.net_spec, s.net, xs, net_cache, train_mode, dropout_rng);
    }
    case ModelKind::Qnn:
        return post_map(quantum_forward(s, encode_angles(x), ctx, evals));
    case ModelKind::Qcnn: {
        const std::vector<double> xs = s.stdz.apply(x);
        HybridCache local;
        HybridCache& c = hybrid ? *hybrid : local;
        c.enc_out = mlp::forward(s.enc_spec, s.enc, xs, hybrid ? &c.enc : nullptr,
                                 train_mode, dropout_rng);
        c.angles = encode_angles(c.enc_out);
        c.z = quantum_forward(s, c.angles, ctx, evals);
        c.dec_out = mlp::forward(s.dec_spec, s.dec, c.z, hybrid ? &c.dec : nullptr,
                                 train_mode, dropout_rng);
        return bounded_head(c.dec_out);
    }
    }
    fail("unknown model kind");
}

} // namespace

std::vector<double> predict(const Surrogate& model, std::span<const double> x,
                            const EvalContext& ctx) {
    return forward_any(model, x, ctx, false, nullptr, nullptr, nullptr, nullptr);
}

double mse(const Surrogate& model, const dataset::LabeledDataset& ds, dataset::Split split,
           const EvalContext& ctx) {
    const std::vector<std::size_t> idx = ds.indices(split);
    if (idx.empty()) fail("mse: empty split");
    double total = 0.0;
    for (std::size_t i : idx) {
        const std::vector<double> yhat = predict(model, ds.records[i].x, ctx);
        total += mlp::sum_sq_error(yhat, ds.records[i].y);
    }
    return total / static_cast<double>(idx.size());
}

ErrorStats abs_error_stats(const Surrogate& model, const dataset::LabeledDataset& ds,
                           dataset::Split split, const EvalContext& ctx) {
    const std::vector<std::size_t> idx = ds.indices(split);
    if (idx.empty()) fail("abs_error_stats: empty split");
    std::vector<double> ev, ed;
    for (std::size_t i : idx) {
        const std::vector<double> yhat = predict(model, ds.records[i].x, ctx);
        const std::vector<double>& y = ds.records[i].y;
        const int m = half_width(y.size(), "abs_error_stats");
        for (int b = 0; b < m; ++b) {
            ev.push_back(std::abs(yhat[b] - y[b]));
            ed.push_back(std::abs(yhat[m + b] - y[m + b]));
        }
    }
    auto mean_of = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto std_of = [&](const std::vector<double>& v, double mean) {
        double s = 0;
        for (double x : v) s += (x - mean) * (x - mean);
        return std::sqrt(s / static_cast<double>(v.size()));
    };
    ErrorStats st;
    st.mean_v = mean_of(ev);
    st.std_v = std_of(ev, st.mean_v);
    st.mean_delta = mean_of(ed);
    st.std_delta = std_of(ed, st.mean_delta);
    return st;
}

QuantumGrads quantum_layer_backward(const qsim::Circuit& circuit,
                                    std::span<const double> bindings,
                                    std::span<const double> dl_dz, const EvalContext& ctx) {
    const int q = circuit.qubits;
    if (static_cast<int>(dl_dz.size()) != q)
        fail("quantum_layer_backward: dl_dz length must equal qubit count");
    if (static_cast<int>(bindings.size()) != circuit.param_count)
        fail("quantum_layer_backward: bindings length must equal parameter count");

    auto weighted = [&](const std::vector<double>& z) {
        double s = 0.0;
        for (int i = 0; i < q; ++i) s += dl_dz[i] * z[i];
        return s;
    };

    QuantumGrads out;
    std::vector<double> shifted(bindings.begin(), bindings.end());
    std::vector<double> grad(circuit.param_count);
    for (int k = 0; k < circuit.param_count; ++k) {
        const double orig = shifted[k];
        shifted[k] = orig + M_PI / 2.0;
        const double fp =
            weighted(qsim::evaluate_all_z(circuit, shifted, ctx.noise, ctx.shots, ctx.shot_rng));
        shifted[k] = orig - M_PI / 2.0;
        const double fm =
            weighted(qsim::evaluate_all_z(circuit, shifted, ctx.noise, ctx.shots, ctx.shot_rng));
        shifted[k] = orig;
        grad[k] = 0.5 * (fp - fm);
        out.evals += 2;
    }
    out.input_angles.assign(grad.begin(), grad.begin() + q);
    out.ansatz.assign(grad.begin() + q, grad.end());
    return out;
}

namespace {

/// Forward + backward for one record; upstream is 2*scale*(yhat - y).
/// Gradients accumulate into the block buffers; returns the record's summed
/// squared error. Shared by the training loop and loss_gradient so gradient
/// checks exercise the production path.
double backward_record(const Surrogate& model, std::span<const double> x,
                       std::span<const double> y, double scale, const EvalContext& ctx,
                       bool train_mode, Rng* dropout_rng, mlp::Params& net_grads,
                       mlp::Params& enc_grads, mlp::Params& dec_grads,
                       std::vector<double>& ansatz_grads, long& evals) {
    mlp::ForwardCache net_cache;
    HybridCache hybrid;
    const std::vector<double> yhat =
        forward_any(model, x, ctx, train_mode, dropout_rng,
                    model.kind == ModelKind::Qcnn ? nullptr : &net_cache,
                    model.kind == ModelKind::Qcnn ? &hybrid : nullptr, &evals);
    std::vector<double> upstream(yhat.size());
    for (std::size_t j = 0; j < yhat.size(); ++j)
        upstream[j] = 2.0 * scale * (yhat[j] - y[j]);

    switch (model.kind) {
    case ModelKind::Lr:
    case ModelKind::Nn:
        mlp::backward(model.net_spec, model.net, net_cache, upstream, net_grads);
        break;
    case ModelKind::Qnn: {
        const int m = model.outputs / 2;
        std::vector<double> dz(model.qubits, 0.0);
        for (int i = 0; i < m; ++i) {
            dz[2 * i] = upstream[i] * kVHalfSpan;
            dz[2 * i + 1] = upstream[m + i] * kDeltaHalfSpan;
        }
        std::vector<double> bindings = encode_angles(x);
        bindings.insert(bindings.end(), model.ansatz.begin(), model.ansatz.end());
        const QuantumGrads qg = quantum_layer_backward(model.circuit, bindings, dz, ctx);
        evals += qg.evals;
        for (std::size_t j = 0; j < ansatz_grads.size(); ++j)
            ansatz_grads[j] += qg.ansatz[j];
        break;
    }
    case ModelKind::Qcnn: {
        const int m = model.outputs / 2;
        std::vector<double> du(upstream.size());
        for (int i = 0; i < m; ++i) {
            const double tv = std::tanh(hybrid.dec_out[i]);
            const double td = std::tanh(hybrid.dec_out[m + i]);
            du[i] = upstream[i] * kVHalfSpan * (1.0 - tv * tv);
            du[m + i] = upstream[m + i] * kDeltaHalfSpan * (1.0 - td * td);
        }
        std::vector<double> dz;
        mlp::backward(model.dec_spec, model.dec, hybrid.dec, du, dec_grads, &dz);
        std::vector<double> bindings = hybrid.angles;
        bindings.insert(bindings.end(), model.ansatz.begin(), model.ansatz.end());
        const QuantumGrads qg = quantum_layer_backward(model.circuit, bindings, dz, ctx);
        evals += qg.evals;
        for (std::size_t j = 0; j < ansatz_grads.size(); ++j)
            ansatz_grads[j] += qg.ansatz[j];
        std::vector<double> denc(model.qubits);
        for (int i = 0; i < model.qubits; ++i)
            denc[i] = qg.input_angles[i] / (1.0 + hybrid.enc_out[i] * hybrid.enc_out[i]);
        mlp::backward(model.enc_spec, model.enc, hybrid.enc, denc, enc_grads);
        break;
    }
    }
    return mlp::sum_sq_error(yhat, y);
}

void append_block(std::vector<double>& out, const mlp::Params& p) {
    for (const mlp::Layer& l : p.layers) {
        out.insert(out.end(), l.w.begin(), l.w.end());
        out.insert(out.end(), l.b.begin(), l.b.end());
    }
}

} // namespace

std::vector<double> flatten_params(const Surrogate& model) {
    std::vector<double> out;
    out.reserve(model.param_count());
    append_block(out, model.net);
    append_block(out, model.enc);
    append_block(out, model.dec);
    out.insert(out.end(), model.ansatz.begin(), model.ansatz.end());
    return out;
}

void unflatten_params(Surrogate& model, std::span<const double> flat) {
    if (flat.size() != model.param_count())
        fail("unflatten_params: length does not match the model");
    std::size_t pos = 0;
    auto take_block = [&](mlp::Params& p) {
        for (mlp::Layer& l : p.layers) {
            std::copy(flat.begin() + pos, flat.begin() + pos + l.w.size(), l.w.begin());
            pos += l.w.size();
            std::copy(flat.begin() + pos, flat.begin() + pos + l.b.size(), l.b.begin());
            pos += l.b.size();
        }
    };
    take_block(model.net);
    take_block(model.enc);
    take_block(model.dec);
    std::copy(flat.begin() + pos, flat.end(), model.ansatz.begin());
}

double loss_gradient(const Surrogate& model, std::span<const double> x,
                     std::span<const double> y, std::vector<double>& grad,
                     const EvalContext& ctx) {
    mlp::Params net_grads = model.net;
    mlp::Params enc_grads = model.enc;
    mlp::Params dec_grads = model.dec;
    net_grads.fill(0.0);
    enc_grads.fill(0.0);
    dec_grads.fill(0.0);
    std::vector<double> ansatz_grads(model.ansatz.size(), 0.0);
    long evals = 0;
    const double loss = backward_record(model, x, y, 1.0, ctx, false, nullptr, net_grads,
                                        enc_grads, dec_grads, ansatz_grads, evals);
    grad.clear();
    grad.reserve(model.param_count());
    append_block(grad, net_grads);
    append_block(grad, enc_grads);
    append_block(grad, dec_grads);
    grad.insert(grad.end(), ansatz_grads.begin(), ansatz_grads.end());
    return loss;
}

TrainResult train(Surrogate& model, const dataset::LabeledDataset& ds,
                  const TrainConfig& cfg) {
    if (cfg.lr <= 0.0) fail("train: learning rate must be positive");
    if (cfg.epochs < 1) fail("train: epochs must be >= 1");
    if (cfg.batch < 1) fail("train: batch size must be >= 1");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) fail("train: dropout must be in [0, 1)");
    if (cfg.shots < 0) fail("train: shots must be >= 0");
    cfg.noise.validate();
    for (dataset::Split s :
         {dataset::Split::Train, dataset::Split::Validation, dataset::Split::Test})
        if (ds.count(s) < 1)
            fail("train: dataset lacks a " + std::string(dataset::split_name(s)) + " split");
    if (ds.pq_count * 2 != model.inputs)
        fail("train: dataset feature width does not match the model");

    const auto t0 = std::chrono::steady_clock::now();
    model.net_spec.dropout = cfg.dropout;
    model.enc_spec.dropout = cfg.dropout;
    model.dec_spec.dropout = cfg.dropout;
    model.stdz = model.kind == ModelKind::Qnn ? Standardizer{} : fit_standardizer(ds);

    Rng init_rng(Rng::derive(cfg.seed, 0));
    Rng shuffle_rng(Rng::derive(cfg.seed, 1));
    Rng dropout_rng(Rng::derive(cfg.seed, 2));
    Rng shot_rng(Rng::derive(cfg.seed, 3));
    model.init(init_rng);

    EvalContext ctx;
    ctx.noise = cfg.noise.any() ? &cfg.noise : nullptr;
    ctx.shots = cfg.shots;
    ctx.shot_rng = cfg.shots > 0 ? &shot_rng : nullptr;

    const mlp::AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    mlp::MlpAdam net_adam = make_mlp_adam(model.net);
    mlp::MlpAdam enc_adam = make_mlp_adam(model.enc);
    mlp::MlpAdam dec_adam = make_mlp_adam(model.dec);
    mlp::AdamVec ansatz_adam;
    long ansatz_t = 0;

    mlp::Params net_grads = model.net;
    mlp::Params enc_grads = model.enc;
    mlp::Params dec_grads = model.dec;
    std::vector<double> ansatz_grads(model.ansatz.size(), 0.0);

    std::vector<std::size_t> train_idx = ds.indices(dataset::Split::Train);
    TrainResult res;
    res.epochs.reserve(cfg.epochs);
    res.best_val_mse = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(train_idx);
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch) {
            const std::size_t stop = std::min(train_idx.size(), start + cfg.batch);
            const double inv_b = 1.0 / static_cast<double>(stop - start);
            net_grads.fill(0.0);
            enc_grads.fill(0.0);
            dec_grads.fill(0.0);
            std::fill(ansatz_grads.begin(), ansatz_grads.end(), 0.0);

            for (std::size_t r = start; r < stop; ++r) {
                const dataset::Record& rec = ds.records[train_idx[r]];
                backward_record(model, rec.x, rec.y, inv_b, ctx, true, &dropout_rng,
                                net_grads, enc_grads, dec_grads, ansatz_grads,
                                res.circuit_evals);
            }

            switch (model.kind) {
            case ModelKind::Lr:
            case ModelKind::Nn:
                mlp::adam_step(model.net, net_grads, net_adam, adam_cfg);
                break;
            case ModelKind::Qnn:
                mlp::adam_step(model.ansatz, ansatz_grads, ansatz_adam, ++ansatz_t, adam_cfg);
                break;
            case ModelKind::Qcnn:
                mlp::adam_step(model.enc, enc_grads, enc_adam, adam_cfg);
                mlp::adam_step(model.dec, dec_grads, dec_adam, adam_cfg);
                mlp::adam_step(model.ansatz, ansatz_grads, ansatz_adam, ++ansatz_t, adam_cfg);
                break;
            }
            ++res.optimizer_steps;
        }

        EpochStats st;
        st.train_mse = mse(model, ds, dataset::Split::Train, ctx);
        st.val_mse = mse(model, ds, dataset::Split::Validation, ctx);
        if (!std::isfinite(st.train_mse) || !std::isfinite(st.val_mse))
            fail("train: non-finite loss at epoch " + std::to_string(epoch) + " (" +
                 std::string(kind_name(model.kind)) + ")");
        res.epochs.push_back(st);
        if (st.val_mse < res.best_val_mse) {
            res.best_val_mse = st.val_mse;
            res.best_epoch = epoch;
            res.best = model;
        }
    }

    res.final_train_mse = res.epochs.back().train_mse;
    res.final_val_mse = res.epochs.back().val_mse;
    res.test_mse = mse(model, ds, dataset::Split::Test, ctx);
    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

namespace {

void append_vector(std::string& out, const char* key, std::span<const double> v) {
    out += key;
    for (double x : v) {
        out += ' ';
        out += fmt_double(x);
    }
    out += '\n';
}

std::vector<double> read_vector_line(const std::vector<std::string>& lines, std::size_t& pos,
                                     const std::string& key) {
    if (pos >= lines.size()) fail("checkpoint: unexpected end of file");
    std::vector<std::string> f = split(std::string(trim(lines[pos])), ' ');
    if (f.empty() || f[0] != key)
        fail("checkpoint: expected '" + key + "' at line " + std::to_string(pos + 1));
    std::vector<double> v;
    for (std::size_t i = 1; i < f.size(); ++i) v.push_back(parse_double(f[i]));
    ++pos;
    return v;
}

long read_scalar_line(const std::vector<std::string>& lines, std::size_t& pos,
                      const std::string& key) {
    const std::vector<double> v = read_vector_line(lines, pos, key);
    if (v.size() != 1) fail("checkpoint: '" + key + "' wants exactly one value");
    return static_cast<long>(v[0]);
}

} // namespace

void save_checkpoint(const std::string& path, const Surrogate& model) {
    std::string out = "qpf-lab checkpoint 1\n";
    out += "kind " + std::string(kind_name(model.kind)) + "\n";
    out += "inputs " + std::to_string(model.inputs) + "\n";
    out += "outputs " + std::to_string(model.outputs) + "\n";
    out += "qubits " + std::to_string(model.qubits) + "\n";
    out += "standardizer\n";
    append_vector(out, "mean", model.stdz.mean);
    append_vector(out, "std", model.stdz.std);
    switch (model.kind) {
    case ModelKind::Lr:
    case ModelKind::Nn:
        mlp::append_checkpoint_block(out, "net", model.net_spec, model.net);
        break;
    case ModelKind::Qnn:
        append_vector(out, "ansatz", model.ansatz);
        break;
    case ModelKind::Qcnn:
        mlp::append_checkpoint_block(out, "encoder", model.enc_spec, model.enc);
        mlp::append_checkpoint_block(out, "decoder", model.dec_spec, model.dec);
        append_vector(out, "ansatz", model.ansatz);
        break;
    }
    write_file_atomic(path, out);
}

Surrogate load_checkpoint(const std::string& path) {
    std::vector<std::string> lines = split(read_file(path), '\n');
    std::size_t pos = 0;
    if (pos >= lines.size() || trim(lines[pos]) != "qpf-lab checkpoint 1")
        fail("checkpoint: bad header in " + path);
    ++pos;
    std::vector<std::string> f = split(std::string(trim(lines[pos])), ' ');
    if (f.size() != 2 || f[0] != "kind") fail("checkpoint: missing kind line");
    Surrogate s;
    s.kind = kind_from_name(f[1]);
    ++pos;
    s.inputs = static_cast<int>(read_scalar_line(lines, pos, "inputs"));
    s.outputs = static_cast<int>(read_scalar_line(lines, pos, "outputs"));
    s.qubits = static_cast<int>(read_scalar_line(lines, pos, "qubits"));
    if (pos >= lines.size() || trim(lines[pos]) != "standardizer")
        fail("checkpoint: missing standardizer section");
    ++pos;
    s.stdz.mean = read_vector_line(lines, pos, "mean");
    s.stdz.std = read_vector_line(lines, pos, "std");
    if (s.stdz.mean.size() != s.stdz.std.size())
        fail("checkpoint: standardizer mean/std length mismatch");

    std::string name;
    switch (s.kind) {
    case ModelKind::Lr:
    case ModelKind::Nn:
        mlp::read_checkpoint_block(lines, pos, name, s.net_spec, s.net);
        if (name != "net") fail("checkpoint: expected block 'net'");
        break;
    case ModelKind::Qnn:
        s.ansatz = read_vector_line(lines, pos, "ansatz");
        s.circuit = build_qnn_circuit(s.qubits);
        break;
    case ModelKind::Qcnn:
        mlp::read_checkpoint_block(lines, pos, name, s.enc_spec, s.enc);
        if (name != "encoder") fail("checkpoint: expected block 'encoder'");
        mlp::read_checkpoint_block(lines, pos, name, s.dec_spec, s.dec);
        if (name != "decoder") fail("checkpoint: expected block 'decoder'");
        s.ansatz = read_vector_line(lines, pos, "ansatz");
        s.circuit = build_qnn_circuit(s.qubits);
        break;
    }
    if (s.kind == ModelKind::Qnn || s.kind == ModelKind::Qcnn) {
        if (static_cast<int>(s.ansatz.size()) != 2 * s.qubits)
            fail("checkpoint: ansatz length must be 2 * qubits");
    }
    return s;
}

} // namespace qpf::models
