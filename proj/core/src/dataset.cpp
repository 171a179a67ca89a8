#include "qpf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include <json.hpp>

#include "qpf/rng.hpp"
#include "qpf/textio.hpp"

namespace qpf::dataset {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

double signed_shift(Rng& rng, double magnitude_bound) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return sign * rng.uniform(0.0, magnitude_bound);
}

} // namespace

SamplePool generate_pool(const grid::GridCase& grid, int n, double std_frac,
                         std::uint64_t seed) {
    if (n < 1) fail("generate_pool: n must be >= 1");
    if (std_frac < 0.0 || std_frac >= 1.0) fail("generate_pool: std_frac must be in [0, 1)");

    const std::vector<int> pq = grid.pq_buses();
    const int m = static_cast<int>(pq.size());
    SamplePool pool;
    pool.pq_count = m;
    pool.seed = seed;
    pool.std_frac = std_frac;
    pool.p.assign(n, std::vector<double>(m, 0.0));
    pool.q.assign(n, std::vector<double>(m, 0.0));
    pool.s.assign(n, std::vector<double>(m, 0.0));

    Rng rng(seed);
    for (int b = 0; b < m; ++b) {
        const double pb = grid.p[pq[b]];
        const double qb = grid.q[pq[b]];
        const double sb = std::hypot(pb, qb);
        if (sb == 0.0) {
            pool.zero_load_buses.push_back(b);
            continue;
        }
        const double pf = pb / sb;
        const double qsign = qb < 0.0 ? -1.0 : 1.0;  // loads keep their reactive sign
        for (int k = 0; k < n; ++k) {
            double s = std_frac == 0.0 ? sb : rng.normal(sb, std_frac * sb);
            if (s < 0.0) s = 0.0;
            const double p = s * pf;
            pool.s[k][b] = s;
            pool.p[k][b] = p;
            pool.q[k][b] = qsign * std::sqrt(std::max(0.0, s * s - p * p));
        }
    }
    return pool;
}

std::string_view split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
    }
    fail("unknown split");
}

Split split_from_name(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "validation") return Split::Validation;
    if (name == "test") return Split::Test;
    fail("unknown split tag '" + std::string(name) + "'");
}

std::vector<std::size_t> LabeledDataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].split == s) out.push_back(i);
    return out;
}

int LabeledDataset::count(Split s) const {
    return static_cast<int>(std::count_if(records.begin(), records.end(),
                                          [s](const Record& r) { return r.split == s; }));
}

LabeledDataset draw_and_label(const SamplePool& pool, int k, const grid::GridCase& grid,
                              std::uint64_t seed, const grid::NewtonOptions& opts) {
    if (k < 1) fail("draw_and_label: k must be >= 1");
    if (k > pool.size()) fail("draw_and_label: k exceeds pool size");
    if (pool.pq_count != grid.pq_count())
        fail("draw_and_label: pool and grid disagree on PQ bus count");

    const int m = pool.pq_count;
    LabeledDataset ds;
    ds.pq_count = m;
    ds.provenance.pool_seed = pool.seed;
    ds.provenance.pool_size = pool.size();
    ds.provenance.pool_std_frac = pool.std_frac;
    ds.provenance.draw_seed = seed;

    Rng rng(seed);
    std::vector<int> remaining(pool.size());
    for (int i = 0; i < pool.size(); ++i) remaining[i] = i;

    while (static_cast<int>(ds.records.size()) < k) {
        if (remaining.empty())
            fail("draw_and_label: pool exhausted before " + std::to_string(k) +
                 " converged labels (" + std::to_string(ds.provenance.redraws) +
                 " non-convergent draws)");
        const std::size_t j = static_cast<std::size_t>(rng.below(remaining.size()));
        const int idx = remaining[j];
        remaining[j] = remaining.back();
        remaining.pop_back();

        const grid::PowerFlowSolution sol =
            grid::solve_newton_raphson(grid, pool.p[idx], pool.q[idx], opts);
        if (!sol.converged) {
            ++ds.provenance.redraws;
            continue;
        }
        Record rec;
        rec.x.reserve(2 * m);
        rec.x.insert(rec.x.end(), pool.p[idx].begin(), pool.p[idx].end());
        rec.x.insert(rec.x.end(), pool.q[idx].begin(), pool.q[idx].end());
        const std::vector<int> pq = grid.pq_buses();
        const std::vector<double> deg = sol.delta_deg();
        rec.y.reserve(2 * m);
        for (int b : pq) rec.y.push_back(sol.v[b]);
        for (int b : pq) rec.y.push_back(deg[b]);
        ds.records.push_back(std::move(rec));
    }

    const int n_train = k / 4, n_val = k / 4;
    for (int i = 0; i < k; ++i)
        ds.records[i].split = i < n_train            ? Split::Train
                              : i < n_train + n_val  ? Split::Validation
                                                     : Split::Test;
    return ds;
}

LabeledDataset corrupt(const LabeledDataset& ds, double level, std::uint64_t seed) {
    if (level < 0.0 || level > 1.0) fail("corrupt: level must be in [0, 1]");
    LabeledDataset out = ds;
    out.provenance.corruption_level = level;
    out.provenance.corruption_seed = seed;
    out.provenance.corrupted_records = 0;
    if (level == 0.0) return out;

    std::vector<std::size_t> train = out.indices(Split::Train);
    const int count = static_cast<int>(level * static_cast<double>(train.size()));
    if (count == 0) return out;

    Rng rng(seed);
    rng.shuffle(train);
    train.resize(count);
    std::sort(train.begin(), train.end());
    for (std::size_t i : train) {
        for (double& x : out.records[i].x) x += signed_shift(rng, 1.0);
        for (double& y : out.records[i].y) y += signed_shift(rng, 0.1);
    }
    out.provenance.corrupted_records = count;
    return out;
}

void save_csv(const LabeledDataset& ds, const std::string& path) {
    const int m = ds.pq_count;
    std::string out;
    auto emit_group = [&](const char* prefix) {
        for (int i = 1; i <= m; ++i) {
            out += prefix;
            out += std::to_string(i);
            out += ',';
        }
    };
    emit_group("p_");
    emit_group("q_");
    emit_group("v_");
    emit_group("delta_");
    out += "split\n";

    for (const Record& rec : ds.records) {
        if (static_cast<int>(rec.x.size()) != 2 * m || static_cast<int>(rec.y.size()) != 2 * m)
            fail("save_csv: record width does not match pq_count");
        for (double v : rec.x) {
            out += fmt_double(v);
            out += ',';
        }
        for (double v : rec.y) {
            out += fmt_double(v);
            out += ',';
        }
        out += split_name(rec.split);
        out += '\n';
    }
    write_file_atomic(path, out);

    nlohmann::json meta;
    meta["pq_buses"] = m;
    meta["pool"] = {{"seed", ds.provenance.pool_seed},
                    {"size", ds.provenance.pool_size},
                    {"std_frac", ds.provenance.pool_std_frac}};
    meta["draw"] = {{"seed", ds.provenance.draw_seed},
                    {"count", ds.records.size()},
                    {"redraws", ds.provenance.redraws}};
    meta["corruption"] = {{"level", ds.provenance.corruption_level},
                          {"seed", ds.provenance.corruption_seed},
                          {"records", ds.provenance.corrupted_records}};
    meta["splits"] = {{"train", ds.count(Split::Train)},
                      {"validation", ds.count(Split::Validation)},
                      {"test", ds.count(Split::Test)}};
    write_file_atomic(path + ".meta.json", meta.dump(2) + "\n");
}

LabeledDataset load_csv(const std::string& path) {
    const std::string text = read_file(path);
    std::vector<std::string> lines = split(text, '\n');
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) fail("load_csv: empty file " + path);

    const std::vector<std::string> header = split(trim(lines[0]), ',');
    if (header.size() < 5 || (header.size() - 1) % 4 != 0)
        fail("load_csv: malformed header in " + path);
    const int m = static_cast<int>((header.size() - 1) / 4);
    const char* prefixes[4] = {"p_", "q_", "v_", "delta_"};
    for (int grp = 0; grp < 4; ++grp)
        for (int i = 0; i < m; ++i) {
            const std::string want = prefixes[grp] + std::to_string(i + 1);
            if (header[static_cast<std::size_t>(grp) * m + i] != want)
                fail("load_csv: expected column '" + want + "' in " + path);
        }
    if (header.back() != "split") fail("load_csv: last column must be 'split' in " + path);

    LabeledDataset ds;
    ds.pq_count = m;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        const std::vector<std::string> f = split(trim(lines[ln]), ',');
        if (f.size() != header.size())
            fail("load_csv: row " + std::to_string(ln + 1) + " has " +
                 std::to_string(f.size()) + " fields, expected " +
                 std::to_string(header.size()));
        Record rec;
        rec.x.resize(2 * m);
        rec.y.resize(2 * m);
        for (int i = 0; i < 2 * m; ++i) rec.x[i] = parse_double(f[i]);
        for (int i = 0; i < 2 * m; ++i) rec.y[i] = parse_double(f[2 * m + i]);
        rec.split = split_from_name(f.back());
        ds.records.push_back(std::move(rec));
    }

    const std::string meta_path = path + ".meta.json";
    if (std::filesystem::exists(meta_path)) {
        const nlohmann::json meta = nlohmann::json::parse(read_file(meta_path));
        ds.provenance.pool_seed = meta.at("pool").at("seed").get<std::uint64_t>();
        ds.provenance.pool_size = meta.at("pool").at("size").get<int>();
        ds.provenance.pool_std_frac = meta.at("pool").at("std_frac").get<double>();
        ds.provenance.draw_seed = meta.at("draw").at("seed").get<std::uint64_t>();
        ds.provenance.redraws = meta.at("draw").at("redraws").get<int>();
        ds.provenance.corruption_level = meta.at("corruption").at("level").get<double>();
        ds.provenance.corruption_seed = meta.at("corruption").at("seed").get<std::uint64_t>();
        ds.provenance.corrupted_records = meta.at("corruption").at("records").get<int>();
    }
    return ds;
}

} // namespace qpf::dataset
