#pragma once

#include <span>
#include <string>
#include <vector>

namespace qpf::grid {

enum class BusType { Slack, Pq };

struct BusSpec {
    int id = 0;
    BusType type = BusType::Pq;
    double p = 0.0;          // net active injection, pu (loads negative)
    double q = 0.0;          // net reactive injection, pu
    double v = 1.0;          // slack only: fixed magnitude, pu
    double delta_deg = 0.0;  // slack only: fixed angle, degrees
};

struct LineSpec {
    int from = 0;
    int to = 0;
    double r = 0.0;  // series resistance, pu
    double x = 0.0;  // series reactance, pu
};

/// Raw description of a network as read from a grid file or built in code.
struct CaseSpec {
    std::vector<BusSpec> buses;
    std::vector<LineSpec> lines;
};

/// Immutable network model with the assembled nodal admittance matrix.
/// Angles are radians internally; degrees appear only at file interfaces.
struct GridCase {
    int n = 0;                   // bus count
    int slack = 0;               // internal index of the slack bus
    std::vector<int> bus_ids;    // external id per internal index
    std::vector<double> p;       // base injections per bus, pu (0 at slack)
    std::vector<double> q;
    std::vector<double> g;       // n*n row-major conductance matrix, pu
    std::vector<double> b;       // n*n row-major susceptance matrix, pu
    double v_slack = 1.0;
    double slack_angle_rad = 0.0;

    double gij(int i, int j) const { return g[static_cast<std::size_t>(i) * n + j]; }
    double bij(int i, int j) const { return b[static_cast<std::size_t>(i) * n + j]; }
    int pq_count() const { return n - 1; }
    /// Internal indices of the PQ buses, ascending.
    std::vector<int> pq_buses() const;
};

struct PowerFlowSolution {
    std::vector<double> v;          // pu, all buses
    std::vector<double> delta_rad;  // radians, all buses
    int iterations = 0;
    double final_residual_norm = 0.0;  // inf-norm of the mismatch vector
    bool converged = false;
    std::string message;

    std::vector<double> delta_deg() const;
};

struct NewtonOptions {
    double tol = 1e-8;  // inf-norm mismatch threshold
    int max_iter = 50;
};

/// Assembles the Y-bus from the line list: off-diagonal y_ij = -1/z_ij,
/// diagonal = sum of incident line admittances. Throws on duplicate bus
/// ids, unknown bus references, zero-impedance lines, missing lines, or
/// anything other than exactly one slack bus.
GridCase build_grid(const CaseSpec& spec);

/// Parses the UTF-8 grid file format (see data/*.grid for the field
/// reference); rejects unknown record types and unknown fields.
CaseSpec parse_grid_file(const std::string& path);
CaseSpec parse_grid_text(const std::string& text, const std::string& origin = "<string>");
GridCase load_grid(const std::string& path);

/// Active/reactive injections implied by a voltage profile.
void injections(const GridCase& grid, std::span<const double> v,
                std::span<const double> delta_rad, std::span<double> p_out,
                std::span<double> q_out);

/// Power mismatch at the PQ buses, ordered [dp_1..dp_m, dq_1..dq_m] over
/// ascending PQ bus index: dp_i = p_spec_i - p_calc_i(v, delta).
std::vector<double> pf_mismatch(const GridCase& grid, std::span<const double> v,
                                std::span<const double> delta_rad);

/// Jacobian of the calculated (p, q) at the PQ buses with respect to the
/// unknowns [delta_pq..., v_pq...]; row-major 2m x 2m, row order matching
/// pf_mismatch.
std::vector<double> pf_jacobian(const GridCase& grid, std::span<const double> v,
                                std::span<const double> delta_rad);

/// Full Newton-Raphson from a flat start (v = 1 pu, delta = 0). Reports
/// non-convergence through the solution record instead of throwing.
PowerFlowSolution solve_newton_raphson(const GridCase& grid,
                                       const NewtonOptions& opts = {});

/// Same solve with the base-case injections replaced at the PQ buses;
/// p_pq/q_pq are ordered by ascending PQ bus index (length m).
PowerFlowSolution solve_newton_raphson(const GridCase& grid, std::span<const double> p_pq,
                                       std::span<const double> q_pq,
                                       const NewtonOptions& opts = {});

} // namespace qpf::grid
