#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "qpf/dataset.hpp"
#include "qpf/grid.hpp"
#include "qpf/models.hpp"
#include "qpf/rng.hpp"
#include "qpf/textio.hpp"

using namespace qpf;
using dataset::LabeledDataset;
using dataset::Record;
using dataset::Split;
using models::EvalContext;
using models::ModelKind;
using models::Surrogate;

namespace {

const std::string kDataDir = QPF_DATA_DIR;
const std::string kTmpDir = QPF_TMP_DIR;

grid::GridCase two_bus_case() {
    grid::CaseSpec spec;
    spec.buses = {{.id = 1, .type = grid::BusType::Slack, .v = 1.0, .delta_deg = 0.0},
                  {.id = 2, .type = grid::BusType::Pq, .p = -0.5, .q = -0.25}};
    spec.lines = {{.from = 1, .to = 2, .r = 0.01, .x = 0.1}};
    return grid::build_grid(spec);
}

LabeledDataset tiny_dataset(const grid::GridCase& g, int pool_n, int k,
                            std::uint64_t seed) {
    const dataset::SamplePool pool = dataset::generate_pool(g, pool_n, 0.3, seed);
    return dataset::draw_and_label(pool, k, g, seed + 1);
}

double loss_of(const Surrogate& model, std::span<const double> x,
               std::span<const double> y) {
    std::vector<double> grad;
    return models::loss_gradient(model, x, y, grad);
}

void check_loss_gradient_matches_fd(Surrogate model, double tol, std::uint64_t seed) {
    Rng rng(seed);
    model.init(rng);
    std::vector<double> x(model.inputs), y(model.outputs);
    for (double& v : x) v = rng.uniform(-1.5, 1.5);
    const int m = model.outputs / 2;
    for (int b = 0; b < m; ++b) {
        y[b] = rng.uniform(0.9, 1.1);
        y[m + b] = rng.uniform(-5.0, 5.0);
    }

    std::vector<double> grad;
    models::loss_gradient(model, x, y, grad);
    std::vector<double> flat = models::flatten_params(model);
    REQUIRE(grad.size() == flat.size());
    REQUIRE(flat.size() == model.param_count());

    const double h = 1e-5;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        Surrogate pp = model, pm = model;
        auto fp = flat, fm = flat;
        fp[i] += h;
        fm[i] -= h;
        models::unflatten_params(pp, fp);
        models::unflatten_params(pm, fm);
        const double fd = (loss_of(pp, x, y) - loss_of(pm, x, y)) / (2 * h);
        CHECK(std::abs(grad[i] - fd) <= tol * std::max(1.0, std::abs(fd)));
    }
}

}  // namespace

TEST_CASE("model kinds map to and from names") {
    CHECK(models::kind_name(ModelKind::Lr) == "lr");
    CHECK(models::kind_name(ModelKind::Nn) == "nn");
    CHECK(models::kind_name(ModelKind::Qnn) == "qnn");
    CHECK(models::kind_name(ModelKind::Qcnn) == "qcnn");
    CHECK(models::kind_from_name("qcnn") == ModelKind::Qcnn);
    CHECK_THROWS(models::kind_from_name("mlp"));
}

TEST_CASE("the feature-plus-ansatz circuit has the documented shape") {
    const qsim::Circuit c = models::build_qnn_circuit(3);
    CHECK(c.qubits == 3);
    CHECK(c.param_count == 9);
    REQUIRE(c.gates.size() == 14);  // 3 H, 3 Rz, 3 Ry, 2 CNOT, 3 Ry

    using qsim::GateKind;
    const GateKind want[14] = {GateKind::H,    GateKind::H,    GateKind::H,
                               GateKind::Rz,   GateKind::Rz,   GateKind::Rz,
                               GateKind::Ry,   GateKind::Ry,   GateKind::Ry,
                               GateKind::Cnot, GateKind::Cnot, GateKind::Ry,
                               GateKind::Ry,   GateKind::Ry};
    for (int i = 0; i < 14; ++i) CHECK(c.gates[i].kind == want[i]);
    // Feature angles take parameters 0..q-1, the ansatz the rest.
    CHECK(c.gates[3].param == 0);
    CHECK(c.gates[5].param == 2);
    CHECK(c.gates[6].param == 3);
    CHECK(c.gates[8].param == 5);
    CHECK(c.gates[11].param == 6);
    CHECK(c.gates[13].param == 8);
    // The entangler is a forward chain.
    CHECK(c.gates[9].control == 0);
    CHECK(c.gates[9].target == 1);
    CHECK(c.gates[10].control == 1);
    CHECK(c.gates[10].target == 2);

    const qsim::Circuit single = models::build_qnn_circuit(1);
    CHECK(single.gates.size() == 4);  // no entangler on one qubit
    CHECK(single.param_count == 3);
}

TEST_CASE("feature encoding is an arctangent with domain checks") {
    const auto a = models::encode_angles(std::vector<double>{0.0, 1.0, -1e9});
    CHECK(a[0] == 0.0);
    CHECK(a[1] == doctest::Approx(std::numbers::pi / 4).epsilon(1e-15));
    CHECK(a[2] == doctest::Approx(-std::numbers::pi / 2).epsilon(1e-9));
    CHECK_THROWS(models::encode_angles(std::vector<double>{std::nan("")}));
    CHECK_THROWS(models::encode_angles(
        std::vector<double>{std::numeric_limits<double>::infinity()}));
}

TEST_CASE("readout maps qubit pairs onto the physical intervals") {
    const std::vector<double> z{1.0, 1.0, 0.0, 0.0, -1.0, -1.0};
    const auto out = models::post_map(z);
    REQUIRE(out.size() == 6);
    CHECK(out[0] == 1.15);
    CHECK(out[1] == 1.0);
    CHECK(out[2] == 0.85);
    CHECK(out[3] == 8.0);
    CHECK(out[4] == 0.0);
    CHECK(out[5] == -8.0);
    CHECK_THROWS(models::post_map(std::vector<double>{1.0, 0.0, 0.5}));  // odd width
}

TEST_CASE("hidden width rule doubles at the rim and quadruples inside") {
    CHECK(models::hidden_widths(0, 4).empty());
    CHECK(models::hidden_widths(1, 4) == std::vector<int>{8});
    CHECK(models::hidden_widths(2, 4) == std::vector<int>{8, 8});
    CHECK(models::hidden_widths(3, 2) == std::vector<int>{4, 8, 4});
    CHECK(models::hidden_widths(7, 4) ==
          std::vector<int>{8, 16, 16, 16, 16, 16, 8});
}

TEST_CASE("factories assemble the documented shapes") {
    const Surrogate lr = models::make_lr(3);
    CHECK(lr.kind == ModelKind::Lr);
    CHECK(lr.inputs == 6);
    CHECK(lr.outputs == 6);
    CHECK(lr.net_spec.hidden.empty());
    CHECK(lr.param_count() == 6 * 6 + 6);

    const Surrogate nn = models::make_nn(3, 4, 7, 0.01);
    CHECK(nn.net_spec.widths() ==
          std::vector<int>{6, 8, 16, 16, 16, 16, 16, 8, 6});
    CHECK(nn.net_spec.dropout == 0.01);

    const Surrogate qnn = models::make_qnn(3);
    CHECK(qnn.kind == ModelKind::Qnn);
    CHECK(qnn.qubits == 6);  // one v qubit and one delta qubit per bus
    CHECK(qnn.ansatz.size() == 12);
    CHECK(qnn.circuit.param_count == 18);
    CHECK(qnn.param_count() == 12);  // feature angles are not trainable

    const Surrogate qcnn = models::make_qcnn(3, 4, 6, 4, 3, 0.0);
    CHECK(qcnn.kind == ModelKind::Qcnn);
    CHECK(qcnn.qubits == 6);
    CHECK(qcnn.enc_spec.widths() == std::vector<int>{6, 8, 16, 16, 8, 6});
    CHECK(qcnn.dec_spec.widths() == std::vector<int>{6, 8, 16, 8, 6});
    CHECK(qcnn.ansatz.size() == 12);
}

TEST_CASE("a zero ansatz pins the pure-quantum model to the interval centers") {
    Surrogate qnn = models::make_qnn(2);
    Rng rng(1);
    qnn.init(rng);
    std::fill(qnn.ansatz.begin(), qnn.ansatz.end(), 0.0);
    for (const auto& x : {std::vector<double>{0.3, -0.8, 0.1, 0.9},
                          std::vector<double>{-5.0, 5.0, 0.0, 100.0}}) {
        const auto y = models::predict(qnn, x);
        REQUIRE(y.size() == 4);
        CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(y[2] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(y[3] == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("standardizer fits train-split moments and guards constants") {
    LabeledDataset ds;
    ds.pq_count = 1;
    ds.records = {
        Record{.x = {1.0, 7.0}, .y = {1.0, 0.0}, .split = Split::Train},
        Record{.x = {3.0, 7.0}, .y = {1.0, 0.0}, .split = Split::Train},
        Record{.x = {500.0, -500.0}, .y = {1.0, 0.0}, .split = Split::Test},
    };
    const models::Standardizer s = models::fit_standardizer(ds);
    REQUIRE(s.mean.size() == 2);
    CHECK(s.mean[0] == 2.0);
    CHECK(s.std[0] == 1.0);  // population std of {1, 3}
    CHECK(s.mean[1] == 7.0);
    CHECK(s.std[1] == 1.0);  // constant feature guard

    const auto z = s.apply(std::vector<double>{3.0, 8.0});
    CHECK(z[0] == 1.0);
    CHECK(z[1] == 1.0);

    CHECK(models::Standardizer{}.identity());
    const auto id = models::Standardizer{}.apply(std::vector<double>{4.0, 5.0});
    CHECK(id == std::vector<double>{4.0, 5.0});

    LabeledDataset empty;
    CHECK_THROWS(models::fit_standardizer(empty));
}

TEST_CASE("quantum model outputs always live inside the physical intervals") {
    Rng rng(77);
    for (int trial = 0; trial < 8; ++trial) {
        Surrogate qnn = models::make_qnn(2);
        qnn.init(rng);
        for (double& a : qnn.ansatz) a = rng.uniform(-10.0, 10.0);
        Surrogate qcnn = models::make_qcnn(2, 3, 4, 2, 2, 0.0);
        qcnn.init(rng);
        for (mlp::Layer& l : qcnn.dec.layers)
            for (double& w : l.w) w = rng.uniform(-20.0, 20.0);

        std::vector<double> x(4);
        for (double& v : x) v = rng.uniform(-1e6, 1e6);
        for (const Surrogate* model : {&qnn, &qcnn}) {
            const auto y = models::predict(*model, x);
            for (int b = 0; b < 2; ++b) {
                CHECK(y[b] >= 1.0 - 0.15);
                CHECK(y[b] <= 1.0 + 0.15);
                CHECK(y[2 + b] >= -8.0);
                CHECK(y[2 + b] <= 8.0);
            }
        }
    }
}

TEST_CASE("quantum layer gradients match finite differences on the bindings") {
    const qsim::Circuit c = models::build_qnn_circuit(2);
    Rng rng(11);
    std::vector<double> bindings(6);
    for (double& b : bindings) b = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const std::vector<double> dl_dz{0.7, -1.3};

    const models::QuantumGrads qg = models::quantum_layer_backward(c, bindings, dl_dz);
    REQUIRE(qg.input_angles.size() == 2);
    REQUIRE(qg.ansatz.size() == 4);
    CHECK(qg.evals == 12);  // two evaluations per bound parameter

    auto weighted = [&](const std::vector<double>& b) {
        const auto z = qsim::evaluate_all_z(c, b);
        return dl_dz[0] * z[0] + dl_dz[1] * z[1];
    };
    const double h = 1e-6;
    for (int k = 0; k < 6; ++k) {
        auto bp = bindings, bm = bindings;
        bp[k] += h;
        bm[k] -= h;
        const double fd = (weighted(bp) - weighted(bm)) / (2 * h);
        const double analytic = k < 2 ? qg.input_angles[k] : qg.ansatz[k - 2];
        CHECK(std::abs(analytic - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("loss gradients agree with finite differences for every model kind") {
    check_loss_gradient_matches_fd(models::make_lr(2), 1e-5, 101);
    check_loss_gradient_matches_fd(models::make_nn(2, 3, 2, 0.0), 1e-5, 102);
    check_loss_gradient_matches_fd(models::make_qnn(1), 1e-4, 103);
    check_loss_gradient_matches_fd(models::make_qcnn(1, 2, 2, 1, 1, 0.0), 1e-4, 104);
}

TEST_CASE("flatten and unflatten are inverses with strict length checks") {
    Surrogate m = models::make_qcnn(2, 3, 4, 2, 2, 0.0);
    Rng rng(5);
    m.init(rng);
    const std::vector<double> flat = models::flatten_params(m);
    CHECK(flat.size() == m.param_count());

    Surrogate copy = models::make_qcnn(2, 3, 4, 2, 2, 0.0);
    models::unflatten_params(copy, flat);
    CHECK(models::flatten_params(copy) == flat);

    std::vector<double> wrong(flat.size() + 1, 0.0);
    CHECK_THROWS(models::unflatten_params(copy, wrong));
}

TEST_CASE("training reduces the loss deterministically") {
    const grid::GridCase g = two_bus_case();
    const LabeledDataset ds = tiny_dataset(g, 48, 16, 60);

    models::TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.weight_decay = 0.0;
    cfg.batch = 4;
    cfg.epochs = 30;
    cfg.seed = 3;

    Surrogate nn = models::make_nn(1, 2, 2, 0.0);
    const models::TrainResult res = models::train(nn, ds, cfg);
    REQUIRE(res.epochs.size() == 30);
    CHECK(res.final_train_mse < res.epochs.front().train_mse);
    CHECK(res.final_train_mse == res.epochs.back().train_mse);
    CHECK(res.final_val_mse == res.epochs.back().val_mse);
    CHECK(res.optimizer_steps == 30);  // four train records, batch four
    CHECK(res.best_epoch >= 1);
    CHECK(res.best_val_mse <= res.final_val_mse);
    double lowest = res.epochs.front().val_mse;
    for (const auto& e : res.epochs) lowest = std::min(lowest, e.val_mse);
    CHECK(res.best_val_mse == lowest);

    Surrogate nn_again = models::make_nn(1, 2, 2, 0.0);
    const models::TrainResult res_again = models::train(nn_again, ds, cfg);
    CHECK(res_again.final_train_mse == res.final_train_mse);
    CHECK(res_again.final_val_mse == res.final_val_mse);
    CHECK(models::flatten_params(nn_again) == models::flatten_params(nn));

    models::TrainConfig other = cfg;
    other.seed = 4;
    Surrogate nn_other = models::make_nn(1, 2, 2, 0.0);
    const models::TrainResult res_other = models::train(nn_other, ds, other);
    CHECK(res_other.final_train_mse != res.final_train_mse);
}

TEST_CASE("pure and hybrid quantum models cost the same circuit evaluations") {
    const grid::GridCase g = two_bus_case();
    const LabeledDataset ds = tiny_dataset(g, 32, 8, 70);

    models::TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch = 2;
    cfg.epochs = 2;
    cfg.seed = 5;

    Surrogate qnn = models::make_qnn(1);
    const models::TrainResult rq = models::train(qnn, ds, cfg);
    Surrogate qcnn = models::make_qcnn(1, 2, 2, 1, 1, 0.0);
    const models::TrainResult rh = models::train(qcnn, ds, cfg);

    CHECK(rq.circuit_evals > 0);
    CHECK(rq.circuit_evals == rh.circuit_evals);

    Surrogate nn = models::make_nn(1, 2, 1, 0.0);
    const models::TrainResult rn = models::train(nn, ds, cfg);
    CHECK(rn.circuit_evals == 0);
}

TEST_CASE("shot noise and channel noise flow through prediction") {
    Surrogate qnn = models::make_qnn(1);
    Rng rng(9);
    qnn.init(rng);
    const std::vector<double> x{0.4, -0.2};

    const auto exact = models::predict(qnn, x);

    Rng shots_a(21), shots_b(21);
    EvalContext ctx_a{.shots = 256, .shot_rng = &shots_a};
    EvalContext ctx_b{.shots = 256, .shot_rng = &shots_b};
    const auto est_a = models::predict(qnn, x, ctx_a);
    const auto est_b = models::predict(qnn, x, ctx_b);
    CHECK(est_a == est_b);
    CHECK(est_a != exact);

    qsim::NoiseModel nm;
    nm.depolarizing = 0.5;
    EvalContext noisy{.noise = &nm};
    const auto dep = models::predict(qnn, x, noisy);
    // Strong depolarizing pulls every expectation toward zero, so the
    // readout drifts toward the interval centers v = 1, delta = 0.
    CHECK(std::abs(dep[0] - 1.0) < std::abs(exact[0] - 1.0) + 1e-12);
    CHECK(std::abs(dep[1]) < std::abs(exact[1]) + 1e-12);

    EvalContext bad{.shots = 16};
    CHECK_THROWS(models::predict(qnn, x, bad));  // shots need an rng
}

TEST_CASE("mse and error stats match hand computation") {
    LabeledDataset ds;
    ds.pq_count = 1;
    ds.records = {
        Record{.x = {0.0, 0.0}, .y = {1.0, 2.0}, .split = Split::Test},
        Record{.x = {0.0, 0.0}, .y = {0.9, -4.0}, .split = Split::Test},
        Record{.x = {0.0, 0.0}, .y = {100.0, 100.0}, .split = Split::Train},
    };
    const Surrogate lr = models::make_lr(1);  // zero parameters predict zero

    CHECK(models::mse(lr, ds, Split::Test) ==
          doctest::Approx((5.0 + 16.81) / 2).epsilon(1e-12));

    const models::ErrorStats st = models::abs_error_stats(lr, ds, Split::Test);
    CHECK(st.mean_v == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(st.std_v == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(st.mean_delta == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(st.std_delta == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS(models::mse(lr, ds, Split::Validation));  // empty split
}

TEST_CASE("checkpoints round-trip every model kind bitwise") {
    const std::string dir = kTmpDir + "/model_ckpt";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    Rng rng(123);
    std::vector<Surrogate> zoo;
    zoo.push_back(models::make_lr(2));
    zoo.push_back(models::make_nn(2, 3, 2, 0.01));
    zoo.push_back(models::make_qnn(2));
    zoo.push_back(models::make_qcnn(2, 3, 4, 2, 2, 0.0));

    int idx = 0;
    for (Surrogate& model : zoo) {
        model.init(rng);
        model.stdz.mean = std::vector<double>(model.inputs, 0.25);
        model.stdz.std = std::vector<double>(model.inputs, 1.5);
        if (model.kind == ModelKind::Qnn) model.stdz = {};  // raw features by design

        const std::string path = dir + "/m" + std::to_string(idx++) + ".txt";
        models::save_checkpoint(path, model);
        const Surrogate back = models::load_checkpoint(path);

        CHECK(back.kind == model.kind);
        CHECK(back.inputs == model.inputs);
        CHECK(back.outputs == model.outputs);
        CHECK(back.qubits == model.qubits);
        CHECK(back.stdz.mean == model.stdz.mean);
        CHECK(back.stdz.std == model.stdz.std);
        CHECK(models::flatten_params(back) == models::flatten_params(model));

        std::vector<double> x(model.inputs, 0.3);
        CHECK(models::predict(back, x) == models::predict(model, x));
    }

    CHECK_THROWS(models::load_checkpoint(dir + "/missing.txt"));
    write_file_atomic(dir + "/garbage.txt", "not a checkpoint\n");
    CHECK_THROWS(models::load_checkpoint(dir + "/garbage.txt"));
}
