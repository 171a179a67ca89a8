#include "qpf/grid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "qpf/textio.hpp"

namespace qpf::grid {

namespace {

constexpr double kDegPerRad = 180.0 / M_PI;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

} // namespace

std::vector<int> GridCase::pq_buses() const {
    std::vector<int> out;
    out.reserve(n - 1);
    for (int i = 0; i < n; ++i)
        if (i != slack) out.push_back(i);
    return out;
}

std::vector<double> PowerFlowSolution::delta_deg() const {
    std::vector<double> out(delta_rad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = delta_rad[i] * kDegPerRad;
    return out;
}

GridCase build_grid(const CaseSpec& spec) {
    const int n = static_cast<int>(spec.buses.size());
    if (n < 2) fail("grid needs at least 2 buses");
    if (spec.lines.empty()) fail("grid has no lines");

    std::map<int, int> index_of;
    int slack = -1;
    for (int i = 0; i < n; ++i) {
        const BusSpec& bus = spec.buses[i];
        if (!index_of.emplace(bus.id, i).second)
            fail("duplicate bus id " + std::to_string(bus.id));
        if (bus.type == BusType::Slack) {
            if (slack >= 0) fail("more than one slack bus");
            slack = i;
        }
    }
    if (slack < 0) fail("no slack bus");

    GridCase grid;
    grid.n = n;
    grid.slack = slack;
    grid.bus_ids.resize(n);
    grid.p.assign(n, 0.0);
    grid.q.assign(n, 0.0);
    grid.g.assign(static_cast<std::size_t>(n) * n, 0.0);
    grid.b.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        const BusSpec& bus = spec.buses[i];
        grid.bus_ids[i] = bus.id;
        if (i == slack) {
            grid.v_slack = bus.v;
            grid.slack_angle_rad = bus.delta_deg / kDegPerRad;
        } else {
            grid.p[i] = bus.p;
            grid.q[i] = bus.q;
        }
    }
    if (grid.v_slack <= 0.0) fail("slack voltage must be positive");

    auto at = [n](std::vector<double>& m, int i, int j) -> double& {
        return m[static_cast<std::size_t>(i) * n + j];
    };
    for (const LineSpec& line : spec.lines) {
        auto fi = index_of.find(line.from);
        auto ti = index_of.find(line.to);
        if (fi == index_of.end() || ti == index_of.end())
            fail("line references unknown bus " +
                 std::to_string(fi == index_of.end() ? line.from : line.to));
        if (line.from == line.to) fail("line connects a bus to itself");
        const double z2 = line.r * line.r + line.x * line.x;
        if (z2 == 0.0) fail("zero-impedance line " + std::to_string(line.from) + "-" +
                            std::to_string(line.to));
        const double gl = line.r / z2;   // series admittance y = 1/z
        const double bl = -line.x / z2;
        const int i = fi->second, j = ti->second;
        at(grid.g, i, j) -= gl;
        at(grid.b, i, j) -= bl;
        at(grid.g, j, i) -= gl;
        at(grid.b, j, i) -= bl;
        at(grid.g, i, i) += gl;
        at(grid.b, i, i) += bl;
        at(grid.g, j, j) += gl;
        at(grid.b, j, j) += bl;
    }
    return grid;
}

void injections(const GridCase& grid, std::span<const double> v,
                std::span<const double> delta_rad, std::span<double> p_out,
                std::span<double> q_out) {
    const int n = grid.n;
    if (static_cast<int>(v.size()) != n || static_cast<int>(delta_rad.size()) != n ||
        static_cast<int>(p_out.size()) != n || static_cast<int>(q_out.size()) != n)
        fail("injections: state dimension does not match grid");
    for (int i = 0; i < n; ++i) {
        double pi = 0.0, qi = 0.0;
        for (int j = 0; j < n; ++j) {
            const double gij = grid.gij(i, j);
            const double bij = grid.bij(i, j);
            if (gij == 0.0 && bij == 0.0) continue;
            const double dij = delta_rad[i] - delta_rad[j];
            const double c = std::cos(dij), s = std::sin(dij);
            pi += v[i] * v[j] * (gij * c + bij * s);
            qi += v[i] * v[j] * (gij * s - bij * c);
        }
        p_out[i] = pi;
        q_out[i] = qi;
    }
}

namespace {

std::vector<double> mismatch_with(const GridCase& grid, std::span<const double> p_spec,
                                  std::span<const double> q_spec, std::span<const double> v,
                                  std::span<const double> delta_rad) {
    const int n = grid.n;
    if (static_cast<int>(v.size()) != n || static_cast<int>(delta_rad.size()) != n)
        fail("pf_mismatch: state dimension does not match grid");
    std::vector<double> p_calc(n), q_calc(n);
    injections(grid, v, delta_rad, p_calc, q_calc);
    const std::vector<int> pq = grid.pq_buses();
    const int m = static_cast<int>(pq.size());
    std::vector<double> f(2 * m);
    for (int k = 0; k < m; ++k) {
        f[k] = p_spec[pq[k]] - p_calc[pq[k]];
        f[m + k] = q_spec[pq[k]] - q_calc[pq[k]];
    }
    return f;
}

} // namespace

std::vector<double> pf_mismatch(const GridCase& grid, std::span<const double> v,
                                std::span<const double> delta_rad) {
    return mismatch_with(grid, grid.p, grid.q, v, delta_rad);
}

std::vector<double> pf_jacobian(const GridCase& grid, std::span<const double> v,
                                std::span<const double> delta_rad) {
    const int n = grid.n;
    std::vector<double> p_calc(n), q_calc(n);
    injections(grid, v, delta_rad, p_calc, q_calc);
    const std::vector<int> pq = grid.pq_buses();
    const int m = static_cast<int>(pq.size());
    std::vector<double> jac(static_cast<std::size_t>(2 * m) * 2 * m, 0.0);
    auto at = [&](int r, int c) -> double& {
        return jac[static_cast<std::size_t>(r) * 2 * m + c];
    };
    for (int r = 0; r < m; ++r) {
        const int i = pq[r];
        for (int c = 0; c < m; ++c) {
            const int j = pq[c];
            if (i == j) {
                // dP_i/ddelta_i, dP_i/dv_i, dQ_i/ddelta_i, dQ_i/dv_i
                at(r, c) = -q_calc[i] - grid.bij(i, i) * v[i] * v[i];
                at(r, m + c) = p_calc[i] / v[i] + grid.gij(i, i) * v[i];
                at(m + r, c) = p_calc[i] - grid.gij(i, i) * v[i] * v[i];
                at(m + r, m + c) = q_calc[i] / v[i] - grid.bij(i, i) * v[i];
            } else {
                const double gij = grid.gij(i, j);
                const double bij = grid.bij(i, j);
                const double dij = delta_rad[i] - delta_rad[j];
                const double c0 = std::cos(dij), s0 = std::sin(dij);
                const double t1 = v[i] * v[j] * (gij * s0 - bij * c0);
                const double t2 = v[i] * (gij * c0 + bij * s0);
                at(r, c) = t1;          // dP_i/ddelta_j
                at(r, m + c) = t2;      // dP_i/dv_j
                at(m + r, c) = -v[j] * t2;  // dQ_i/ddelta_j = -v_i v_j (g cos + b sin)
                at(m + r, m + c) = t1 / v[j];  // dQ_i/dv_j = v_i (g sin - b cos)
            }
        }
    }
    return jac;
}

namespace {

PowerFlowSolution solve_with(const GridCase& grid, std::span<const double> p_spec,
                             std::span<const double> q_spec, const NewtonOptions& opts) {
    if (opts.tol <= 0.0) fail("solve_newton_raphson: tol must be positive");
    if (opts.max_iter < 1) fail("solve_newton_raphson: max_iter must be >= 1");

    const int n = grid.n;
    PowerFlowSolution sol;
    sol.v.assign(n, 1.0);
    sol.delta_rad.assign(n, 0.0);
    sol.v[grid.slack] = grid.v_slack;
    sol.delta_rad[grid.slack] = grid.slack_angle_rad;

    const std::vector<int> pq = grid.pq_buses();
    const int m = static_cast<int>(pq.size());

    auto inf_norm = [](const std::vector<double>& f) {
        double nrm = 0.0;
        for (double x : f) nrm = std::max(nrm, std::abs(x));
        return nrm;
    };

    std::vector<double> f = mismatch_with(grid, p_spec, q_spec, sol.v, sol.delta_rad);
    sol.final_residual_norm = inf_norm(f);
    if (sol.final_residual_norm <= opts.tol) {
        sol.converged = true;
        return sol;
    }

    for (int it = 1; it <= opts.max_iter; ++it) {
        std::vector<double> jraw = pf_jacobian(grid, sol.v, sol.delta_rad);
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                       Eigen::RowMajor>>
            jac(jraw.data(), 2 * m, 2 * m);
        Eigen::Map<const Eigen::VectorXd> rhs(f.data(), 2 * m);
        Eigen::VectorXd step = jac.partialPivLu().solve(rhs);
        if (!step.allFinite()) {
            sol.iterations = it;
            sol.message = "singular Jacobian";
            return sol;
        }
        for (int k = 0; k < m; ++k) {
            sol.delta_rad[pq[k]] += step[k];
            sol.v[pq[k]] += step[m + k];
        }
        sol.iterations = it;
        if (!std::all_of(sol.v.begin(), sol.v.end(),
                         [](double x) { return std::isfinite(x) && x > 0.0; })) {
            sol.message = "iterate left the feasible voltage region";
            return sol;
        }
        f = mismatch_with(grid, p_spec, q_spec, sol.v, sol.delta_rad);
        sol.final_residual_norm = inf_norm(f);
        if (!std::isfinite(sol.final_residual_norm)) {
            sol.message = "diverged";
            return sol;
        }
        if (sol.final_residual_norm <= opts.tol) {
            sol.converged = true;
            return sol;
        }
    }
    sol.message = "max_iter exceeded";
    return sol;
}

} // namespace

PowerFlowSolution solve_newton_raphson(const GridCase& grid, const NewtonOptions& opts) {
    return solve_with(grid, grid.p, grid.q, opts);
}

PowerFlowSolution solve_newton_raphson(const GridCase& grid, std::span<const double> p_pq,
                                       std::span<const double> q_pq,
                                       const NewtonOptions& opts) {
    const std::vector<int> pq = grid.pq_buses();
    if (p_pq.size() != pq.size() || q_pq.size() != pq.size())
        fail("solve_newton_raphson: injection override length does not match PQ count");
    std::vector<double> p_spec(grid.p), q_spec(grid.q);
    for (std::size_t k = 0; k < pq.size(); ++k) {
        p_spec[pq[k]] = p_pq[k];
        q_spec[pq[k]] = q_pq[k];
    }
    return solve_with(grid, p_spec, q_spec, opts);
}

// --- grid file parsing ---------------------------------------------------

namespace {

struct FieldMap {
    std::map<std::string, std::string> kv;
    std::set<std::string> seen;

    const std::string* get(const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) return nullptr;
        seen.insert(key);
        return &it->second;
    }
};

FieldMap parse_fields(const std::vector<std::string>& tokens, const std::string& where) {
    FieldMap f;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const std::string& tok = tokens[i];
        auto eq = tok.find('=');
        if (eq == std::string::npos) fail(where + ": expected key=value, got '" + tok + "'");
        std::string key = tok.substr(0, eq);
        if (!f.kv.emplace(key, tok.substr(eq + 1)).second)
            fail(where + ": duplicate field '" + key + "'");
    }
    return f;
}

void check_no_unknown(const FieldMap& f, const std::string& where) {
    for (const auto& [key, value] : f.kv)
        if (!f.seen.count(key)) fail(where + ": unknown field '" + key + "'");
}

} // namespace

CaseSpec parse_grid_text(const std::string& text, const std::string& origin) {
    CaseSpec spec;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        std::istringstream ls{std::string(sv)};
        std::vector<std::string> tokens;
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
        const std::string where = origin + ":" + std::to_string(lineno);
        if (tokens[0] == "bus") {
            FieldMap f = parse_fields(tokens, where);
            BusSpec bus;
            const std::string* id = f.get("id");
            const std::string* type = f.get("type");
            if (!id || !type) fail(where + ": bus record needs id and type");
            bus.id = static_cast<int>(parse_long(*id));
            if (*type == "slack") {
                bus.type = BusType::Slack;
                if (const std::string* v = f.get("v")) bus.v = parse_double(*v);
                if (const std::string* d = f.get("delta")) bus.delta_deg = parse_double(*d);
                if (f.kv.count("p") || f.kv.count("q"))
                    fail(where + ": slack bus must not carry p/q");
            } else if (*type == "pq") {
                bus.type = BusType::Pq;
                if (const std::string* p = f.get("p")) bus.p = parse_double(*p);
                if (const std::string* q = f.get("q")) bus.q = parse_double(*q);
                if (f.kv.count("v") || f.kv.count("delta"))
                    fail(where + ": pq bus must not carry v/delta");
            } else {
                fail(where + ": unknown bus type '" + *type + "'");
            }
            check_no_unknown(f, where);
            spec.buses.push_back(bus);
        } else if (tokens[0] == "line") {
            FieldMap f = parse_fields(tokens, where);
            const std::string* from = f.get("from");
            const std::string* to = f.get("to");
            const std::string* r = f.get("r");
            const std::string* x = f.get("x");
            if (!from || !to || !r || !x) fail(where + ": line record needs from, to, r, x");
            check_no_unknown(f, where);
            spec.lines.push_back(LineSpec{static_cast<int>(parse_long(*from)),
                                          static_cast<int>(parse_long(*to)),
                                          parse_double(*r), parse_double(*x)});
        } else {
            fail(where + ": unknown record type '" + tokens[0] + "'");
        }
    }
    return spec;
}

CaseSpec parse_grid_file(const std::string& path) {
    return parse_grid_text(read_file(path), path);
}

GridCase load_grid(const std::string& path) { return build_grid(parse_grid_file(path)); }

} // namespace qpf::grid
