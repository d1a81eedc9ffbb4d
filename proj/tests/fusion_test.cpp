#include <doctest.h>

#include <cmath>
#include <vector>

#include "s2mf/fusion.hpp"
#include "toy_fixtures.hpp"

using namespace s2mf;

namespace {

double max_trunk_diff(const MultiHeadNet& a, const MultiHeadNet& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.trunk().size(); ++i) {
        const TrunkLayer& la = a.trunk()[i];
        const TrunkLayer& lb = b.trunk()[i];
        auto cmp = [&](const TensorPtr& x, const TensorPtr& y) {
            if (!x) return;
            for (size_t j = 0; j < x->numel(); ++j)
                worst = std::max(worst, std::abs(x->values[j] - y->values[j]));
        };
        cmp(la.weight, lb.weight);
        cmp(la.bias, lb.bias);
        cmp(la.gamma, lb.gamma);
        cmp(la.beta, lb.beta);
    }
    return worst;
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("alpha endpoints recover the parents bitwise") {
    auto run = fixtures::two_task_run(1, 30);
    FusedModel at_one = fuse_linear(run.slow, run.fast, 1.0);
    CHECK(bitwise_equal_params(at_one.net, run.slow));
    FusedModel at_zero = fuse_linear(run.slow, run.fast, 0.0);
    CHECK(bitwise_equal_params(at_zero.net, run.fast));
}

TEST_CASE("alpha out of range and architecture mismatch are rejected") {
    auto run = fixtures::two_task_run(2, 10);
    CHECK_THROWS_AS(fuse_linear(run.slow, run.fast, 1.5), ContractError);
    MultiHeadNet other = fixtures::toy_net(10, 3);
    CHECK_THROWS_AS(fuse_linear(run.slow, other, 0.5), ContractError);
}

TEST_CASE("constant A = 0.5 equals linear alpha = 0.5 on the trunk within 1e-12") {
    auto run = fixtures::two_task_run(3, 30);
    FusedModel linear = fuse_linear(run.slow, run.fast, 0.5);

    MetaFuseConfig cfg;
    cfg.steps = 0;  // stay at the 0.5 initialization
    FusedModel meta = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, cfg);
    CHECK(max_trunk_diff(linear.net, meta.net) <= 1e-12);
}

TEST_CASE("trunk built from deltas equals A*slow + (1-A)*fast within 1e-12") {
    auto run = fixtures::two_task_run(4, 30);
    MetaFuseConfig cfg;
    cfg.steps = 25;
    FusedModel meta = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, cfg);

    // rebuild by the direct convex form using the snapshot weights
    double worst = 0.0;
    for (const auto& [li, squashed] : meta.weight_snapshot) {
        const TrunkLayer& lf = meta.net.trunk()[static_cast<size_t>(li)];
        const TrunkLayer& ls = run.slow.trunk()[static_cast<size_t>(li)];
        const TrunkLayer& lt = run.fast.trunk()[static_cast<size_t>(li)];
        auto check_slot = [&](const TensorPtr& fused, const TensorPtr& s, const TensorPtr& f) {
            if (!fused) return;
            const int rows = fused->rows();
            const int cols = fused->cols();
            for (int r = 0; r < rows; ++r) {
                const double a = squashed[static_cast<size_t>(r)];
                for (int c = 0; c < cols; ++c) {
                    const double direct = a * s->at(r, c) + (1.0 - a) * f->at(r, c);
                    worst = std::max(worst, std::abs(direct - fused->at(r, c)));
                }
            }
        };
        check_slot(lf.weight, ls.weight, lt.weight);
        check_slot(lf.bias, ls.bias, lt.bias);
        check_slot(lf.gamma, ls.gamma, lt.gamma);
        check_slot(lf.beta, ls.beta, lt.beta);
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("saturated pre-squash weights recover the endpoints within 1e-6") {
    auto run = fixtures::two_task_run(5, 30);
    const double hi = 1.0 / (1.0 + std::exp(-20.0));
    MetaFuseConfig cfg;
    cfg.steps = 0;

    cfg.init_weight = hi;  // pre-squash +20: trunk ~ slow
    FusedModel near_slow = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, cfg);
    CHECK(max_trunk_diff(near_slow.net, run.slow) <= 1e-6);

    cfg.init_weight = 1.0 - hi;  // pre-squash -20: trunk ~ fast
    FusedModel near_fast = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, cfg);
    CHECK(max_trunk_diff(near_fast.net, run.fast) <= 1e-6);
}

TEST_CASE("identical endpoints: trunk constant in A, zero meta gradient") {
    auto run = fixtures::two_task_run(6, 30);
    MetaFuseConfig cfg;
    cfg.steps = 8;
    FusedModel meta = meta_fuse(run.prev, run.fast, run.fast, run.dreams, 1, cfg);
    CHECK(meta.final_lm == meta.initial_lm);
    for (const auto& [li, squashed] : meta.weight_snapshot)
        for (double a : squashed) CHECK(a == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(max_trunk_diff(meta.net, run.fast) <= 1e-12);
}

TEST_CASE("meta descent: final L_m never exceeds the initialization") {
    auto run = fixtures::two_task_run(7, 100);
    MetaFuseConfig cfg;
    cfg.steps = 60;
    FusedModel meta = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, cfg);
    CHECK(meta.final_lm <= meta.initial_lm + 1e-12);
}

TEST_CASE("meta beats the best linear alpha on the dream objective") {
    auto run = fixtures::two_task_run(8, 150);
    MetaFuseConfig cfg;
    FusedModel meta = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, cfg);

    double best_linear = 1e300;
    for (int i = 0; i < 21; ++i) {
        const double alpha = i / 20.0;
        FusedModel lin = fuse_linear(run.slow, run.fast, alpha);
        best_linear = std::min(best_linear, dream_lm(lin.net, run.dreams, {0, 1}));
    }
    CHECK(meta.final_lm <= best_linear + 1e-6);
}

TEST_CASE("meta_fuse leaves endpoints and old heads bitwise unchanged") {
    auto run = fixtures::two_task_run(9, 50);
    MultiHeadNet prev_snap = run.prev.clone();
    MultiHeadNet slow_snap = run.slow.clone();
    MultiHeadNet fast_snap = run.fast.clone();

    MetaFuseConfig cfg;
    cfg.steps = 30;
    FusedModel meta = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, cfg);
    CHECK(bitwise_equal_params(run.prev, prev_snap));
    CHECK(bitwise_equal_params(run.slow, slow_snap));
    CHECK(bitwise_equal_params(run.fast, fast_snap));
    // fused old head is the frozen old head
    CHECK(meta.net.head(0).weight->values == run.fast.head(0).weight->values);
    CHECK(meta.net.head(0).weight->values == run.slow.head(0).weight->values);
}

TEST_CASE("meta_fuse contract errors") {
    auto run = fixtures::two_task_run(10, 10);
    MetaFuseConfig cfg;
    std::map<int, DreamSet> no_new = run.dreams;
    no_new.erase(1);
    CHECK_THROWS_AS(meta_fuse(run.prev, run.slow, run.fast, no_new, 1, cfg), ContractError);
    std::map<int, DreamSet> no_old = run.dreams;
    no_old.erase(0);
    cfg.include_all_old_tasks = false;
    CHECK_THROWS_AS(meta_fuse(run.prev, run.slow, run.fast, no_old, 1, cfg), ContractError);
}

TEST_CASE("restricting the roster to the latest old task changes the objective terms") {
    auto run = fixtures::two_task_run(11, 40);
    MetaFuseConfig all_cfg;
    all_cfg.steps = 20;
    all_cfg.include_all_old_tasks = true;
    MetaFuseConfig latest_cfg = all_cfg;
    latest_cfg.include_all_old_tasks = false;
    // on a two-task run both modes see {0, 1}; they must agree exactly
    FusedModel a = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, all_cfg);
    FusedModel b = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, latest_cfg);
    CHECK(a.final_lm == b.final_lm);
    CHECK(max_trunk_diff(a.net, b.net) == 0.0);
}

TEST_CASE("granularities: per-layer, per-channel, per-parameter all descend") {
    auto run = fixtures::two_task_run(12, 60);
    for (FusionGranularity g : {FusionGranularity::per_layer, FusionGranularity::per_channel,
                                FusionGranularity::per_parameter}) {
        MetaFuseConfig cfg;
        cfg.granularity = g;
        cfg.steps = 40;
        FusedModel meta = meta_fuse(run.prev, run.slow, run.fast, run.dreams, 1, cfg);
        CHECK(meta.final_lm <= meta.initial_lm + 1e-12);
        for (double a : meta.weight_snapshot.front().second) {
            CHECK(a > 0.0);
            CHECK(a < 1.0);
        }
    }
}

TEST_CASE("barrier endpoints equal the direct parent losses; n=2 is exactly the endpoints") {
    auto run = fixtures::two_task_run(13, 30);
    std::vector<EvalSet> sets{EvalSet::labeled(0, run.task0.x, run.task0.y),
                              EvalSet::labeled(1, run.task1.x, run.task1.y)};
    BarrierCurve curve = barrier_sweep(run.slow, run.fast, sets, 2);
    REQUIRE(curve.alphas.size() == 2);
    CHECK(curve.alphas[0] == 0.0);
    CHECK(curve.alphas[1] == 1.0);

    MultiHeadNet fast_copy = run.fast.clone();
    MultiHeadNet slow_copy = run.slow.clone();
    for (size_t t = 0; t < sets.size(); ++t) {
        CHECK(curve.losses[0][t] == eval_loss(fast_copy, sets[t]));
        CHECK(curve.losses[1][t] == eval_loss(slow_copy, sets[t]));
    }
    CHECK_THROWS_AS(barrier_sweep(run.slow, run.fast, sets, 1), ContractError);
}

TEST_CASE("a barrier exists to measure on the toy two-task run") {
    auto run = fixtures::two_task_run(14, 30);
    std::vector<EvalSet> sets{EvalSet::labeled(0, run.task0.x, run.task0.y),
                              EvalSet::labeled(1, run.task1.x, run.task1.y)};
    BarrierCurve curve = barrier_sweep(run.slow, run.fast, sets, 21);
    double interior_max = -1e300;
    for (size_t i = 1; i + 1 < curve.combined.size(); ++i)
        interior_max = std::max(interior_max, curve.combined[i]);
    const double endpoint_min = std::min(curve.combined.front(), curve.combined.back());
    CHECK(interior_max >= endpoint_min);
}

TEST_CASE("dream eval sets drive the sweep through the KL loss") {
    auto run = fixtures::two_task_run(15, 60);
    std::vector<EvalSet> sets{EvalSet::from_dreams(run.dreams.at(0)),
                              EvalSet::from_dreams(run.dreams.at(1))};
    BarrierCurve curve = barrier_sweep(run.slow, run.fast, sets, 5);
    // fast endpoint: the new-task dream teacher is the fast model itself
    CHECK(curve.losses[0][1] == doctest::Approx(0.0).epsilon(1e-10));
    for (const auto& row : curve.losses)
        for (double l : row) CHECK(std::isfinite(l));
}

}  // TEST_SUITE
