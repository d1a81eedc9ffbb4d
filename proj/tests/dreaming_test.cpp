#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "oracles.hpp"
#include "s2mf/dreaming.hpp"
#include "s2mf/rng.hpp"
#include "s2mf/trainer.hpp"

using namespace s2mf;

namespace {

TaskSplit make_blobs(int dim, int n_per_class, double sep, uint64_t seed) {
    TaskSplit split;
    split.num_classes = 2;
    const int n = 2 * n_per_class;
    auto x = make_tensor({dim, n});
    Rng rng(seed);
    std::vector<double> dir(static_cast<size_t>(dim));
    double norm = 0.0;
    for (double& v : dir) {
        v = rng.gaussian();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : dir) v /= norm;
    for (int j = 0; j < n; ++j) {
        const int cls = j % 2;
        split.y.push_back(cls);
        const double sign = cls == 0 ? -1.0 : 1.0;
        for (int i = 0; i < dim; ++i)
            x->at(i, j) = sign * sep * dir[static_cast<size_t>(i)] + rng.gaussian();
    }
    split.x = x;
    return split;
}

// trained two-class toy model with bn stats adapted to the data
MultiHeadNet trained_toy(uint64_t seed, const TaskSplit& data) {
    std::vector<LayerSpec> trunk{
        LayerSpec::linear(6, 16),
        LayerSpec::batchnorm(16),
        LayerSpec::relu(),
        LayerSpec::linear(16, 12),
        LayerSpec::batchnorm(12),
        LayerSpec::relu(),
    };
    MultiHeadNet net(InputSpec{false, 6, 0, 0, 0}, trunk, seed);
    PhaseConfig cfg;
    cfg.epochs = 25;
    cfg.lr = 5e-3;
    cfg.batch_size = 32;
    cfg.seed = seed + 1;
    train_first_task(net, data, 0, cfg);
    return net;
}

QuerySpec one_class_query(int cls, int batch, int steps, uint64_t seed) {
    QuerySpec q;
    q.task = 0;
    for (int i = 0; i < batch; ++i) q.target_classes.push_back(cls);
    q.steps = steps;
    q.seed = seed;
    return q;
}

const InputRange kRange{-8.0, 8.0};

}  // namespace

TEST_SUITE("dreaming") {

TEST_CASE("steps=0 returns the clamped seeded noise and its logits") {
    TaskSplit data = make_blobs(6, 40, 4.0, 1);
    MultiHeadNet net = trained_toy(2, data);
    QuerySpec q = one_class_query(0, 5, 0, 3);
    DreamSet ds = dream(net, q, kRange);
    CHECK(ds.inputs.dim(0) == 6);
    CHECK(ds.inputs.dim(1) == 5);

    // same seed reproduces the noise; the teacher logits match a fresh forward
    DreamSet ds2 = dream(net, q, kRange);
    CHECK(ds.inputs.values == ds2.inputs.values);
    auto x = make_tensor(ds.inputs.shape(), ds.inputs.values);
    auto logits = net.forward(x, 0, ops::BnPhase::eval);
    CHECK(logits->values == ds.teacher_logits.values);
}

TEST_CASE("final objective never exceeds the initial one (10 seeds)") {
    TaskSplit data = make_blobs(6, 40, 4.0, 4);
    MultiHeadNet net = trained_toy(5, data);
    for (uint64_t seed = 0; seed < 10; ++seed) {
        QuerySpec q = one_class_query(static_cast<int>(seed % 2), 4, 60, 100 + seed);
        DreamSet ds = dream(net, q, kRange);
        CHECK(ds.final_objective <= ds.initial_objective + 1e-12);
    }
}

TEST_CASE("dreams are classified as their query class on a trained toy model") {
    TaskSplit data = make_blobs(6, 60, 4.0, 6);
    MultiHeadNet net = trained_toy(7, data);
    REQUIRE(accuracy_percent(net, data.x, data.y, 0) >= 99.0);

    int hits = 0, total = 0;
    for (int cls = 0; cls < 2; ++cls) {
        QuerySpec q = one_class_query(cls, 8, 300, 8 + static_cast<uint64_t>(cls));
        DreamSet ds = dream(net, q, kRange);
        const int s = ds.teacher_logits.dim(1);
        for (int j = 0; j < s; ++j) {
            ++total;
            if (ds.teacher_logits.at(cls, j) > ds.teacher_logits.at(1 - cls, j)) ++hits;
        }
    }
    CHECK(100.0 * hits / total >= 90.0);
}

TEST_CASE("dreaming leaves the model bitwise unchanged") {
    TaskSplit data = make_blobs(6, 30, 4.0, 9);
    MultiHeadNet net = trained_toy(10, data);
    net.zero_all_grads();
    MultiHeadNet snapshot = net.clone();
    dream(net, one_class_query(1, 6, 40, 11), kRange);
    CHECK(bitwise_equal_params(net, snapshot));
    for (const auto& p : net.all_params()) CHECK(!p->has_grad());
}

TEST_CASE("deterministic under seed, different across seeds") {
    TaskSplit data = make_blobs(6, 30, 4.0, 12);
    MultiHeadNet net = trained_toy(13, data);
    DreamSet a = dream(net, one_class_query(0, 4, 30, 14), kRange);
    DreamSet b = dream(net, one_class_query(0, 4, 30, 14), kRange);
    DreamSet c = dream(net, one_class_query(0, 4, 30, 15), kRange);
    CHECK(a.inputs.values == b.inputs.values);
    CHECK(a.inputs.values != c.inputs.values);
    CHECK(a.inputs.shape() == c.inputs.shape());
}

TEST_CASE("roster: 2 tasks x 2 classes x batch 8 gives two sets of 16 inputs") {
    TaskSplit data = make_blobs(6, 40, 4.0, 16);
    MultiHeadNet net = trained_toy(17, data);
    net.add_head(1, 2);

    DreamConfig cfg;
    cfg.batch_per_class = 8;
    cfg.steps = 10;
    cfg.seed = 18;
    auto dreams = dream_roster(net, {0, 1}, 2, cfg, kRange);
    REQUIRE(dreams.size() == 2);
    for (const auto& [task, ds] : dreams) {
        CHECK(ds.inputs.dim(1) == 16);
        CHECK(ds.teacher_logits.dim(0) == 2);
        CHECK(ds.teacher_logits.dim(1) == 16);
    }
    // per-task seeds differ, so the noise differs
    CHECK(dreams.at(0).inputs.values != dreams.at(1).inputs.values);
}

TEST_CASE("bn penalty of dreams is below the raw-noise baseline (10 seeds)") {
    TaskSplit data = make_blobs(6, 60, 4.0, 19);
    MultiHeadNet net = trained_toy(20, data);
    for (uint64_t seed = 0; seed < 10; ++seed) {
        QuerySpec q = one_class_query(static_cast<int>(seed % 2), 8, 200, 300 + seed);
        DreamSet ds = dream(net, q, kRange);
        DreamSet noise = dream(net, one_class_query(static_cast<int>(seed % 2), 8, 0, 300 + seed),
                               kRange);
        auto dream_x = make_tensor(ds.inputs.shape(), ds.inputs.values);
        auto noise_x = make_tensor(noise.inputs.shape(), noise.inputs.values);
        CHECK(bn_penalty(net, dream_x) < bn_penalty(net, noise_x));
    }
}

TEST_CASE("contract errors: no bn stats, bad class, missing head") {
    TaskSplit data = make_blobs(6, 20, 4.0, 21);
    MultiHeadNet bn_free(InputSpec{false, 6, 0, 0, 0},
                         {LayerSpec::linear(6, 8), LayerSpec::relu()}, 22);
    PhaseConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    train_first_task(bn_free, data, 0, cfg);
    CHECK_THROWS_AS(dream(bn_free, one_class_query(0, 4, 5, 23), kRange), ContractError);

    MultiHeadNet net = trained_toy(24, data);
    CHECK_THROWS_AS(dream(net, one_class_query(5, 4, 5, 25), kRange), ContractError);
    QuerySpec q = one_class_query(0, 4, 5, 26);
    q.task = 9;
    CHECK_THROWS_AS(dream(net, q, kRange), LookupError);
}

TEST_CASE("dream container round-trips") {
    TaskSplit data = make_blobs(6, 30, 4.0, 27);
    MultiHeadNet net = trained_toy(28, data);
    DreamConfig cfg;
    cfg.batch_per_class = 3;
    cfg.steps = 5;
    cfg.seed = 29;
    auto dreams = dream_roster(net, {0}, 2, cfg, kRange);
    const std::string path = "/tmp/s2mf_dreams_roundtrip.bin";
    save_dreams(path, dreams, 30, 31);
    auto loaded = load_dreams(path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded.at(0).inputs.values == dreams.at(0).inputs.values);
    CHECK(loaded.at(0).teacher_logits.values == dreams.at(0).teacher_logits.values);
    CHECK(loaded.at(0).source_hash == dreams.at(0).source_hash);
    std::remove(path.c_str());
}

}  // TEST_SUITE
