#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qpf/grid.hpp"

namespace qpf::dataset {

/// Load scenarios drawn around a base case: per PQ bus, apparent power s is
/// Normal(s_base, std_frac * s_base) with negative draws clamped to 0, and
/// (p, q) reconstructed at the base power factor, q = sign(q_base) *
/// sqrt(s^2 - p^2) so the reactive direction of the base load is kept.
struct SamplePool {
    int pq_count = 0;
    std::uint64_t seed = 0;
    double std_frac = 0.0;
    std::vector<std::vector<double>> p;  // [sample][pq bus]
    std::vector<std::vector<double>> q;
    std::vector<std::vector<double>> s;  // drawn apparent power, for audits
    std::vector<int> zero_load_buses;    // pq positions with s_base = 0 (kept fixed)

    int size() const { return static_cast<int>(p.size()); }
};

SamplePool generate_pool(const grid::GridCase& grid, int n, double std_frac,
                         std::uint64_t seed);

enum class Split { Train, Validation, Test };
std::string_view split_name(Split s);
Split split_from_name(std::string_view name);

struct Record {
    std::vector<double> x;  // p_1..p_m, q_1..q_m (pu)
    std::vector<double> y;  // v_1..v_m (pu), delta_1..delta_m (degrees)
    Split split = Split::Train;
};

struct Provenance {
    std::uint64_t pool_seed = 0;
    int pool_size = 0;
    double pool_std_frac = 0.0;
    std::uint64_t draw_seed = 0;
    int redraws = 0;  // non-convergent NR samples discarded during labeling
    double corruption_level = 0.0;
    std::uint64_t corruption_seed = 0;
    int corrupted_records = 0;
};

struct LabeledDataset {
    int pq_count = 0;
    std::vector<Record> records;
    Provenance provenance;

    std::vector<std::size_t> indices(Split s) const;
    int count(Split s) const;
};

/// Draws k samples without replacement, labels each with a converged NR
/// solve (non-convergent draws are redrawn and counted), and assigns splits
/// in draw order: floor(k/4) train, floor(k/4) validation, remainder test.
/// Throws if the pool runs out before k converged labels.
LabeledDataset draw_and_label(const SamplePool& pool, int k, const grid::GridCase& grid,
                              std::uint64_t seed, const grid::NewtonOptions& opts = {});

/// Measurement-noise protocol on the train split only: floor(level * n_train)
/// records chosen uniformly at random; every feature entry shifted by a
/// random sign times U[0,1], every label entry by a random sign times
/// U[0,0.1]. Validation and test are never touched.
LabeledDataset corrupt(const LabeledDataset& ds, double level, std::uint64_t seed);

/// Delimited text, header p_1..p_m,q_1..q_m,v_1..v_m,delta_1..delta_m,split;
/// a JSON sidecar at <path>.meta.json records seeds and split counts.
void save_csv(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_csv(const std::string& path);

} // namespace qpf::dataset
