#include "qpf/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qpf/textio.hpp"

namespace qpf::mlp {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_input(const MlpSpec& spec, std::span<const double> x) {
    if (static_cast<int>(x.size()) != spec.input)
        fail("mlp: input length " + std::to_string(x.size()) + ", expected " +
             std::to_string(spec.input));
}

} // namespace

std::vector<int> MlpSpec::widths() const {
    std::vector<int> w;
    w.reserve(hidden.size() + 2);
    w.push_back(input);
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(output);
    return w;
}

void MlpSpec::validate() const {
    if (input < 1 || output < 1) fail("mlp: input and output widths must be >= 1");
    for (int h : hidden)
        if (h < 1) fail("mlp: hidden widths must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) fail("mlp: dropout must be in [0, 1)");
}

std::size_t Params::count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.w.size() + l.b.size();
    return n;
}

void Params::fill(double value) {
    for (Layer& l : layers) {
        std::fill(l.w.begin(), l.w.end(), value);
        std::fill(l.b.begin(), l.b.end(), value);
    }
}

Params zero_params(const MlpSpec& spec) {
    spec.validate();
    const std::vector<int> w = spec.widths();
    Params p;
    p.layers.resize(w.size() - 1);
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        Layer& layer = p.layers[l];
        layer.rows = w[l + 1];
        layer.cols = w[l];
        layer.w.assign(static_cast<std::size_t>(layer.rows) * layer.cols, 0.0);
        layer.b.assign(layer.rows, 0.0);
    }
    return p;
}

Params init_params(const MlpSpec& spec, Rng& rng) {
    Params p = zero_params(spec);
    for (Layer& layer : p.layers) {
        const double k = 1.0 / std::sqrt(static_cast<double>(layer.cols));
        for (double& x : layer.w) x = rng.uniform(-k, k);
        for (double& x : layer.b) x = rng.uniform(-k, k);
    }
    return p;
}

std::vector<double> forward(const MlpSpec& spec, const Params& params,
                            std::span<const double> x, ForwardCache* cache,
                            bool train_mode, Rng* dropout_rng) {
    check_input(spec, x);
    const int layers = spec.layer_count();
    if (static_cast<int>(params.layers.size()) != layers)
        fail("mlp: params do not match spec");
    const bool dropping = train_mode && spec.dropout > 0.0;
    if (dropping && !dropout_rng) fail("mlp: dropout in train mode needs an rng");

    if (cache) {
        cache->act.assign(layers + 1, {});
        cache->pre.assign(layers, {});
        cache->mask.assign(layers > 0 ? layers - 1 : 0, {});
        cache->act[0].assign(x.begin(), x.end());
    }

    std::vector<double> a(x.begin(), x.end());
    for (int l = 0; l < layers; ++l) {
        const Layer& layer = params.layers[l];
        std::vector<double> z(layer.rows);
        for (int r = 0; r < layer.rows; ++r) {
            double s = layer.b[r];
            const double* wr = &layer.w[static_cast<std::size_t>(r) * layer.cols];
            for (int c = 0; c < layer.cols; ++c) s += wr[c] * a[c];
            z[r] = s;
        }
        if (cache) cache->pre[l] = z;
        if (l < layers - 1) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;
            if (dropping) {
                std::vector<double> mask(z.size());
                const double keep = 1.0 / (1.0 - spec.dropout);
                for (std::size_t i = 0; i < z.size(); ++i) {
                    mask[i] = dropout_rng->uniform() < spec.dropout ? 0.0 : keep;
                    z[i] *= mask[i];
                }
                if (cache) cache->mask[l] = std::move(mask);
            }
        }
        if (cache) cache->act[l + 1] = z;
        a = std::move(z);
    }
    return a;
}

void backward(const MlpSpec& spec, const Params& params, const ForwardCache& cache,
              std::span<const double> upstream, Params& grads, std::vector<double>* dx) {
    const int layers = spec.layer_count();
    if (static_cast<int>(cache.act.size()) != layers + 1)
        fail("mlp: backward needs a forward cache");
    if (static_cast<int>(upstream.size()) != spec.output)
        fail("mlp: upstream length does not match output width");
    if (static_cast<int>(grads.layers.size()) != layers)
        fail("mlp: grads do not match spec");

    std::vector<double> delta(upstream.begin(), upstream.end());
    for (int l = layers - 1; l >= 0; --l) {
        const Layer& layer = params.layers[l];
        Layer& g = grads.layers[l];
        const std::vector<double>& a_in = cache.act[l];
        for (int r = 0; r < layer.rows; ++r) {
            double* gw = &g.w[static_cast<std::size_t>(r) * layer.cols];
            for (int c = 0; c < layer.cols; ++c) gw[c] += delta[r] * a_in[c];
            g.b[r] += delta[r];
        }
        if (l == 0 && !dx) break;
        std::vector<double> prev(layer.cols, 0.0);
        for (int r = 0; r < layer.rows; ++r) {
            const double d = delta[r];
            const double* wr = &layer.w[static_cast<std::size_t>(r) * layer.cols];
            for (int c = 0; c < layer.cols; ++c) prev[c] += wr[c] * d;
        }
        if (l == 0) {
            *dx = std::move(prev);
            break;
        }
        const std::vector<double>& pre = cache.pre[l - 1];
        const std::vector<double>& mask = cache.mask[l - 1];
        for (int c = 0; c < layer.cols; ++c) {
            double factor = pre[c] > 0.0 ? 1.0 : 0.0;
            if (!mask.empty()) factor *= mask[c];
            prev[c] *= factor;
        }
        delta = std::move(prev);
    }
}

double sum_sq_error(std::span<const double> predicted, std::span<const double> target) {
    if (predicted.size() != target.size()) fail("sum_sq_error: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double e = predicted[i] - target[i];
        s += e * e;
    }
    return s;
}

void adam_step(std::vector<double>& params, std::span<const double> grads, AdamVec& state,
               long t, const AdamConfig& cfg) {
    if (params.size() != grads.size()) fail("adam_step: grad length mismatch");
    if (t < 1) fail("adam_step: step count must be >= 1");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) fail("adam_step: state length mismatch");

    if (cfg.weight_decay > 0.0) {
        const double shrink = 1.0 - cfg.lr * cfg.weight_decay;
        for (double& p : params) p *= shrink;
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

MlpAdam make_mlp_adam(const Params& params) {
    MlpAdam s;
    s.w.resize(params.layers.size());
    s.b.resize(params.layers.size());
    return s;
}

void adam_step(Params& params, const Params& grads, MlpAdam& state, const AdamConfig& cfg) {
    if (params.layers.size() != grads.layers.size() ||
        params.layers.size() != state.w.size())
        fail("adam_step: shape mismatch");
    ++state.t;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        adam_step(params.layers[l].w, grads.layers[l].w, state.w[l], state.t, cfg);
        adam_step(params.layers[l].b, grads.layers[l].b, state.b[l], state.t, cfg);
    }
}

void append_checkpoint_block(std::string& out, const std::string& name, const MlpSpec& spec,
                             const Params& params) {
    out += "block " + name + "\n";
    out += "widths";
    for (int w : spec.widths()) out += " " + std::to_string(w);
    out += "\ndropout " + fmt_double(spec.dropout) + "\n";
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const Layer& layer = params.layers[l];
        out += "layer " + std::to_string(l) + "\n";
        out += "w";
        for (double x : layer.w) out += " " + fmt_double(x);
        out += "\nb";
        for (double x : layer.b) out += " " + fmt_double(x);
        out += "\n";
    }
    out += "end\n";
}

namespace {

const std::string& line_at(const std::vector<std::string>& lines, std::size_t pos) {
    if (pos >= lines.size()) throw std::runtime_error("checkpoint: unexpected end of file");
    return lines[pos];
}

std::vector<std::string> fields_of(const std::vector<std::string>& lines, std::size_t pos,
                                   const std::string& key) {
    std::vector<std::string> f = split(trim(line_at(lines, pos)), ' ');
    if (f.empty() || f[0] != key)
        throw std::runtime_error("checkpoint: expected '" + key + "' at line " +
                                 std::to_string(pos + 1));
    f.erase(f.begin());
    return f;
}

std::vector<double> parse_values(std::vector<std::string> f, std::size_t expected,
                                 const std::string& what) {
    if (f.size() != expected)
        throw std::runtime_error("checkpoint: " + what + " has " + std::to_string(f.size()) +
                                 " values, expected " + std::to_string(expected));
    std::vector<double> v(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) v[i] = parse_double(f[i]);
    return v;
}

} // namespace

void read_checkpoint_block(const std::vector<std::string>& lines, std::size_t& pos,
                           std::string& name, MlpSpec& spec, Params& params) {
    std::vector<std::string> f = fields_of(lines, pos, "block");
    if (f.size() != 1) throw std::runtime_error("checkpoint: malformed block header");
    name = f[0];
    ++pos;

    f = fields_of(lines, pos, "widths");
    if (f.size() < 2) throw std::runtime_error("checkpoint: need at least input and output widths");
    std::vector<int> widths(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) widths[i] = static_cast<int>(parse_long(f[i]));
    ++pos;

    f = fields_of(lines, pos, "dropout");
    if (f.size() != 1) throw std::runtime_error("checkpoint: malformed dropout line");
    spec.input = widths.front();
    spec.output = widths.back();
    spec.hidden.assign(widths.begin() + 1, widths.end() - 1);
    spec.dropout = parse_double(f[0]);
    spec.validate();
    ++pos;

    params = zero_params(spec);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        f = fields_of(lines, pos, "layer");
        if (f.size() != 1 || parse_long(f[0]) != static_cast<long>(l))
            throw std::runtime_error("checkpoint: layer blocks out of order");
        ++pos;
        Layer& layer = params.layers[l];
        layer.w = parse_values(fields_of(lines, pos, "w"), layer.w.size(),
                               "layer " + std::to_string(l) + " weights");
        ++pos;
        layer.b = parse_values(fields_of(lines, pos, "b"), layer.b.size(),
                               "layer " + std::to_string(l) + " biases");
        ++pos;
    }
    if (trim(line_at(lines, pos)) != "end")
        throw std::runtime_error("checkpoint: missing block terminator");
    ++pos;
}

} // namespace qpf::mlp
