#include "qpf/qsim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qpf::qsim {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

using U2 = std::array<cplx, 4>; // row-major 2x2

U2 gate_matrix(GateKind kind, double angle) {
    switch (kind) {
    case GateKind::H: {
        const double s = 1.0 / std::sqrt(2.0);
        return {cplx(s), cplx(s), cplx(s), cplx(-s)};
    }
    case GateKind::Ry: {
        const double c = std::cos(angle / 2.0), s = std::sin(angle / 2.0);
        return {cplx(c), cplx(-s), cplx(s), cplx(c)};
    }
    case GateKind::Rz: {
        return {std::polar(1.0, -angle / 2.0), cplx(0.0), cplx(0.0),
                std::polar(1.0, angle / 2.0)};
    }
    default:
        fail("gate_matrix: not a single-qubit gate");
    }
}

// psi <- (U on qubit k) psi
void apply_1q_pure(std::vector<cplx>& a, int k, const U2& u) {
    const std::size_t stride = std::size_t(1) << k;
    const std::size_t dim = a.size();
    for (std::size_t base = 0; base < dim; base += 2 * stride) {
        for (std::size_t i = base; i < base + stride; ++i) {
            const cplx a0 = a[i], a1 = a[i + stride];
            a[i] = u[0] * a0 + u[1] * a1;
            a[i + stride] = u[2] * a0 + u[3] * a1;
        }
    }
}

void apply_cnot_pure(std::vector<cplx>& a, int control, int target) {
    const std::size_t cbit = std::size_t(1) << control;
    const std::size_t tbit = std::size_t(1) << target;
    for (std::size_t i = 0; i < a.size(); ++i)
        if ((i & cbit) && !(i & tbit)) std::swap(a[i], a[i | tbit]);
}

// rho <- (U on qubit k) rho
void apply_1q_left(std::vector<cplx>& rho, std::size_t dim, int k, const U2& u) {
    const std::size_t stride = std::size_t(1) << k;
    for (std::size_t col = 0; col < dim; ++col) {
        for (std::size_t base = 0; base < dim; base += 2 * stride) {
            for (std::size_t r = base; r < base + stride; ++r) {
                cplx& x0 = rho[r * dim + col];
                cplx& x1 = rho[(r + stride) * dim + col];
                const cplx a0 = x0, a1 = x1;
                x0 = u[0] * a0 + u[1] * a1;
                x1 = u[2] * a0 + u[3] * a1;
            }
        }
    }
}

// rho <- rho (U on qubit k)^dagger
void apply_1q_right_adj(std::vector<cplx>& rho, std::size_t dim, int k, const U2& u) {
    const std::size_t stride = std::size_t(1) << k;
    for (std::size_t row = 0; row < dim; ++row) {
        cplx* r = &rho[row * dim];
        for (std::size_t base = 0; base < dim; base += 2 * stride) {
            for (std::size_t c = base; c < base + stride; ++c) {
                const cplx a0 = r[c], a1 = r[c + stride];
                r[c] = a0 * std::conj(u[0]) + a1 * std::conj(u[1]);
                r[c + stride] = a0 * std::conj(u[2]) + a1 * std::conj(u[3]);
            }
        }
    }
}

void apply_1q_mixed(std::vector<cplx>& rho, std::size_t dim, int k, const U2& u) {
    apply_1q_left(rho, dim, k, u);
    apply_1q_right_adj(rho, dim, k, u);
}

void apply_cnot_mixed(std::vector<cplx>& rho, std::size_t dim, int control, int target) {
    const std::size_t cbit = std::size_t(1) << control;
    const std::size_t tbit = std::size_t(1) << target;
    for (std::size_t r = 0; r < dim; ++r)
        if ((r & cbit) && !(r & tbit))
            for (std::size_t c = 0; c < dim; ++c)
                std::swap(rho[r * dim + c], rho[(r | tbit) * dim + c]);
    for (std::size_t c = 0; c < dim; ++c)
        if ((c & cbit) && !(c & tbit))
            for (std::size_t r = 0; r < dim; ++r)
                std::swap(rho[r * dim + c], rho[r * dim + (c | tbit)]);
}

// rho <- sum_i K_i rho K_i^dagger
void apply_kraus(std::vector<cplx>& rho, std::size_t dim, int k, std::span<const U2> ops) {
    std::vector<cplx> acc(rho.size(), cplx(0.0));
    std::vector<cplx> tmp;
    for (const U2& op : ops) {
        tmp = rho;
        apply_1q_mixed(tmp, dim, k, op);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += tmp[i];
    }
    rho = std::move(acc);
}

void apply_channels(std::vector<cplx>& rho, std::size_t dim, int qubit,
                    const NoiseModel& noise) {
    if (noise.depolarizing > 0.0) {
        const double p = noise.depolarizing;
        const double w0 = std::sqrt(1.0 - 0.75 * p), w = std::sqrt(0.25 * p);
        const U2 ops[4] = {
            {cplx(w0), cplx(0.0), cplx(0.0), cplx(w0)},          // sqrt(1-3p/4) I
            {cplx(0.0), cplx(w), cplx(w), cplx(0.0)},            // sqrt(p/4) X
            {cplx(0.0), cplx(0.0, -w), cplx(0.0, w), cplx(0.0)}, // sqrt(p/4) Y
            {cplx(w), cplx(0.0), cplx(0.0), cplx(-w)},           // sqrt(p/4) Z
        };
        apply_kraus(rho, dim, qubit, ops);
    }
    if (noise.amplitude_damping > 0.0) {
        const double g = noise.amplitude_damping;
        const U2 ops[2] = {
            {cplx(1.0), cplx(0.0), cplx(0.0), cplx(std::sqrt(1.0 - g))},
            {cplx(0.0), cplx(std::sqrt(g)), cplx(0.0), cplx(0.0)},
        };
        apply_kraus(rho, dim, qubit, ops);
    }
}

void check_qubit(const State& state, int qubit) {
    if (qubit < 0 || qubit >= state.qubits) fail("qubit index out of range");
}

} // namespace

Circuit::Circuit(int nq) : qubits(nq) {
    if (nq < 1) fail("circuit needs at least one qubit");
}

void Circuit::add(const Gate& gate) {
    if (gate.target < 0 || gate.target >= qubits) fail("gate target out of range");
    if (gate.kind == GateKind::Cnot) {
        if (gate.control < 0 || gate.control >= qubits) fail("cnot control out of range");
        if (gate.control == gate.target) fail("cnot control equals target");
    }
    if (gate.param >= 0) {
        if (!gate.rotation()) fail("only Ry/Rz gates may carry a named parameter");
        for (const Gate& existing : gates)
            if (existing.param == gate.param)
                fail("named parameter bound to more than one gate");
        param_count = std::max(param_count, gate.param + 1);
    }
    gates.push_back(gate);
}

void Circuit::append(const Circuit& other) {
    if (other.qubits != qubits) fail("append: qubit counts differ");
    for (const Gate& gate : other.gates) add(gate);
}

void NoiseModel::validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(measurement_flip) || !prob(depolarizing) || !prob(amplitude_damping))
        fail("noise probabilities must be in [0, 1]");
    if (gate_imperfection < 0.0 || gate_imperfection > M_PI)
        fail("gate_imperfection must be in [0, pi]");
}

State State::zero(int qubits, Mode mode) {
    if (qubits < 1) fail("state needs at least one qubit");
    if (mode == Mode::Pure && qubits > kMaxPureQubits)
        fail("pure simulation capped at 12 qubits");
    if (mode == Mode::Mixed && qubits > kMaxMixedQubits)
        fail("density-matrix simulation capped at 8 qubits");
    State s;
    s.mode = mode;
    s.qubits = qubits;
    const std::size_t dim = s.dim();
    s.a.assign(mode == Mode::Pure ? dim : dim * dim, cplx(0.0));
    s.a[0] = cplx(1.0);
    return s;
}

double State::weight() const {
    const std::size_t dim = this->dim();
    double w = 0.0;
    if (pure()) {
        for (const cplx& x : a) w += std::norm(x);
    } else {
        for (std::size_t i = 0; i < dim; ++i) w += a[i * dim + i].real();
    }
    return w;
}

State State::to_density() const {
    if (!pure()) return *this;
    State out = State::zero(qubits, Mode::Mixed);
    const std::size_t dim = this->dim();
    for (std::size_t r = 0; r < dim; ++r)
        for (std::size_t c = 0; c < dim; ++c) out.a[r * dim + c] = a[r] * std::conj(a[c]);
    return out;
}

State apply_gate(const State& state, const Gate& gate, const NoiseModel* noise) {
    State out = state;
    check_qubit(out, gate.target);
    if (gate.param >= 0) fail("unbound named parameter");
    if (noise) noise->validate();
    const bool channels = noise && noise->needs_density();
    if (channels && out.pure())
        fail("channel application requires a density-matrix state");

    double angle = gate.angle;
    if (noise && gate.rotation()) angle += noise->gate_imperfection;

    const std::size_t dim = out.dim();
    if (gate.kind == GateKind::Cnot) {
        check_qubit(out, gate.control);
        if (out.pure())
            apply_cnot_pure(out.a, gate.control, gate.target);
        else
            apply_cnot_mixed(out.a, dim, gate.control, gate.target);
        if (channels) {
            apply_channels(out.a, dim, gate.control, *noise);
            apply_channels(out.a, dim, gate.target, *noise);
        }
    } else {
        const U2 u = gate_matrix(gate.kind, angle);
        if (out.pure())
            apply_1q_pure(out.a, gate.target, u);
        else
            apply_1q_mixed(out.a, dim, gate.target, u);
        if (channels) apply_channels(out.a, dim, gate.target, *noise);
    }
    return out;
}

State run_circuit(const Circuit& circuit, std::span<const double> params,
                  const NoiseModel* noise) {
    if (noise) noise->validate();
    const bool mixed = noise && noise->needs_density();
    State state = State::zero(circuit.qubits, mixed ? State::Mode::Mixed : State::Mode::Pure);
    for (Gate gate : circuit.gates) {
        if (gate.param >= 0) {
            if (gate.param >= static_cast<int>(params.size()))
                fail("unbound named parameter " + std::to_string(gate.param));
            gate.angle = params[gate.param];
            gate.param = -1;
        }
        state = apply_gate(state, gate, noise);
    }
    return state;
}

double expectation_z(const State& state, int qubit) {
    check_qubit(state, qubit);
    const std::size_t bit = std::size_t(1) << qubit;
    const std::size_t dim = state.dim();
    double z = 0.0;
    if (state.pure()) {
        for (std::size_t i = 0; i < dim; ++i)
            z += (i & bit) ? -std::norm(state.a[i]) : std::norm(state.a[i]);
    } else {
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = state.a[i * dim + i].real();
            z += (i & bit) ? -d : d;
        }
    }
    return z;
}

double expectation_z(const State& state, int qubit, const NoiseModel& noise) {
    noise.validate();
    return (1.0 - 2.0 * noise.measurement_flip) * expectation_z(state, qubit);
}

std::vector<double> all_expectations_z(const State& state, const NoiseModel* noise) {
    std::vector<double> out(state.qubits);
    for (int q = 0; q < state.qubits; ++q)
        out[q] = noise ? expectation_z(state, q, *noise) : expectation_z(state, q);
    return out;
}

double sample_shots(const State& state, int qubit, int shots, Rng& rng,
                    const NoiseModel* noise) {
    if (shots < 1) fail("shots must be >= 1");
    const double z = expectation_z(state, qubit);
    const double p0 = std::clamp((1.0 + z) / 2.0, 0.0, 1.0);
    const double flip = noise ? noise->measurement_flip : 0.0;
    long diff = 0;
    for (int s = 0; s < shots; ++s) {
        int outcome = rng.uniform() < p0 ? 0 : 1;
        if (flip > 0.0 && rng.uniform() < flip) outcome ^= 1;
        diff += outcome == 0 ? 1 : -1;
    }
    return static_cast<double>(diff) / shots;
}

double sample_shots(const State& state, int qubit, int shots, std::uint64_t seed,
                    const NoiseModel* noise) {
    Rng rng(seed);
    return sample_shots(state, qubit, shots, rng, noise);
}

std::vector<double> evaluate_all_z(const Circuit& circuit, std::span<const double> params,
                                   const NoiseModel* noise, int shots, Rng* shot_rng) {
    const State state = run_circuit(circuit, params, noise);
    if (shots == 0) return all_expectations_z(state, noise);
    if (!shot_rng) fail("shot sampling requires an Rng");
    std::vector<double> out(circuit.qubits);
    for (int q = 0; q < circuit.qubits; ++q)
        out[q] = sample_shots(state, q, shots, *shot_rng, noise);
    return out;
}

std::vector<double> parameter_shift_grad(const Circuit& circuit,
                                         std::span<const double> params,
                                         int observable_qubit, const NoiseModel* noise) {
    if (static_cast<int>(params.size()) < circuit.param_count)
        fail("parameter_shift_grad: not all named parameters are bound");
    std::vector<double> grad(circuit.param_count);
    std::vector<double> shifted(params.begin(), params.end());
    for (int k = 0; k < circuit.param_count; ++k) {
        const double orig = shifted[k];
        shifted[k] = orig + M_PI / 2.0;
        const double fp =
            expectation_z(run_circuit(circuit, shifted, noise), observable_qubit,
                          noise ? *noise : NoiseModel{});
        shifted[k] = orig - M_PI / 2.0;
        const double fm =
            expectation_z(run_circuit(circuit, shifted, noise), observable_qubit,
                          noise ? *noise : NoiseModel{});
        shifted[k] = orig;
        grad[k] = 0.5 * (fp - fm);
    }
    return grad;
}

} // namespace qpf::qsim
