#pragma once

#include <complex>
#include <span>
#include <vector>

#include "qpf/rng.hpp"

namespace qpf::qsim {

using cplx = std::complex<double>;

/// Qubit 0 is the least-significant bit of the basis index.
inline constexpr int kMaxPureQubits = 12;
inline constexpr int kMaxMixedQubits = 8;

enum class GateKind { H, Ry, Rz, Cnot };

struct Gate {
    GateKind kind = GateKind::H;
    int target = 0;
    int control = -1;   // CNOT only
    double angle = 0.0; // bound rotation angle, radians
    int param = -1;     // >= 0: index into the binding vector (overrides angle)

    static Gate h(int q) { return {GateKind::H, q}; }
    static Gate ry(int q, double a) { return {GateKind::Ry, q, -1, a}; }
    static Gate rz(int q, double a) { return {GateKind::Rz, q, -1, a}; }
    static Gate ry_p(int q, int param) { return {GateKind::Ry, q, -1, 0.0, param}; }
    static Gate rz_p(int q, int param) { return {GateKind::Rz, q, -1, 0.0, param}; }
    static Gate cnot(int control, int target) {
        return {GateKind::Cnot, target, control};
    }
    bool rotation() const { return kind == GateKind::Ry || kind == GateKind::Rz; }
};

struct Circuit {
    int qubits = 0;
    std::vector<Gate> gates;
    int param_count = 0;

    Circuit() = default;
    explicit Circuit(int nq);
    /// Validates qubit indices and tracks the named-parameter count.
    void add(const Gate& gate);
    void append(const Circuit& other); // same qubit count; parameters shared
};

/// Per-gate and per-measurement error parameters. depolarizing and
/// amplitude_damping force density-matrix simulation; measurement_flip and
/// gate_imperfection are applied in either mode.
struct NoiseModel {
    double measurement_flip = 0.0;   // probability of recording the wrong bit
    double gate_imperfection = 0.0;  // coherent over-rotation per Ry/Rz, radians
    double depolarizing = 0.0;       // per touched qubit, per gate
    double amplitude_damping = 0.0;  // gamma per touched qubit, per gate

    bool needs_density() const { return depolarizing > 0.0 || amplitude_damping > 0.0; }
    bool any() const {
        return measurement_flip > 0.0 || gate_imperfection > 0.0 || needs_density();
    }
    void validate() const;
};

/// Pure statevector (length 2^q) or density matrix (2^q x 2^q, row-major).
struct State {
    enum class Mode { Pure, Mixed };
    Mode mode = Mode::Pure;
    int qubits = 0;
    std::vector<cplx> a;

    static State zero(int qubits, Mode mode = Mode::Pure);
    std::size_t dim() const { return std::size_t(1) << qubits; }
    bool pure() const { return mode == Mode::Pure; }
    /// Norm (pure) or trace (mixed); 1 within 1e-10 for any valid state.
    double weight() const;
    State to_density() const;
};

/// Applies one gate, plus the noise channels on the touched qubits when a
/// noise model is given (unitary, then depolarizing, then amplitude
/// damping). Channel application requires mixed mode.
State apply_gate(const State& state, const Gate& gate, const NoiseModel* noise = nullptr);

/// Runs a circuit from |0...0> with the given parameter bindings. The mode
/// is chosen automatically: density matrix iff the noise model needs it.
State run_circuit(const Circuit& circuit, std::span<const double> params = {},
                  const NoiseModel* noise = nullptr);

/// Exact <Z_qubit>, in [-1, 1].
double expectation_z(const State& state, int qubit);
/// Same, with the measurement-flip channel folded in: (1-2p) <Z>.
double expectation_z(const State& state, int qubit, const NoiseModel& noise);

/// <Z_i> for every qubit from one state.
std::vector<double> all_expectations_z(const State& state, const NoiseModel* noise = nullptr);

/// Shot estimate (n0 - n1)/shots from Bernoulli draws with
/// P(0) = (1 + <Z>)/2; the flip channel is applied per shot.
double sample_shots(const State& state, int qubit, int shots, Rng& rng,
                    const NoiseModel* noise = nullptr);
double sample_shots(const State& state, int qubit, int shots, std::uint64_t seed,
                    const NoiseModel* noise = nullptr);

/// One state preparation, expectation for every qubit; exact when shots == 0.
std::vector<double> evaluate_all_z(const Circuit& circuit, std::span<const double> params,
                                   const NoiseModel* noise = nullptr, int shots = 0,
                                   Rng* shot_rng = nullptr);

/// Gradient of <Z_observable> with respect to every named parameter:
/// d/dtheta_k = (f(theta_k + pi/2) - f(theta_k - pi/2)) / 2. Valid for
/// Ry/Rz-parameterized circuits, with or without noise.
std::vector<double> parameter_shift_grad(const Circuit& circuit,
                                         std::span<const double> params,
                                         int observable_qubit,
                                         const NoiseModel* noise = nullptr);

} // namespace qpf::qsim
