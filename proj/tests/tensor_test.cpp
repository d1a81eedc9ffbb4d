#include <doctest.h>

#include <cmath>
#include <functional>
#include <tuple>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "s2mf/rng.hpp"
#include "s2mf/tensor.hpp"

using namespace s2mf;

namespace {

TensorPtr random_leaf(std::vector<int> shape, uint64_t seed, double scale = 1.0) {
    auto t = make_leaf(std::move(shape));
    Rng rng(seed);
    for (double& v : t->values) v = scale * rng.gaussian();
    return t;
}

// checks analytic grads of a scalar-valued graph against central differences
double gradcheck(const std::function<TensorPtr(ComputationRecord*)>& build,
                 const std::vector<TensorPtr>& leaves, double step = 1e-5) {
    for (const TensorPtr& l : leaves) {
        l->requires_grad = true;
        l->drop_grad();
    }
    ComputationRecord rec;
    TensorPtr loss = build(&rec);
    rec.backward(loss);
    return oracle::max_grad_rel_error([&]() { return build(nullptr)->values[0]; }, leaves, step);
}

// fixed random linear functional to turn any output into a scalar
TensorPtr pin(const TensorPtr& out, uint64_t seed, ComputationRecord* rec) {
    auto r = random_leaf(out->shape(), seed);
    r->requires_grad = false;
    return ops::sum(ops::mul(out, r, rec), rec);
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("identity matmul returns operand") {
    auto eye = make_tensor({2, 2}, {1, 0, 0, 1});
    for (uint64_t s = 0; s < 4; ++s) {
        auto m = random_leaf({2, 2}, 100 + s);
        auto out = ops::matmul(eye, m, nullptr);
        CHECK(out->values == m->values);
    }
}

TEST_CASE("matmul hand case") {
    auto a = make_tensor({2, 2}, {1, 2, 3, 4});
    auto b = make_tensor({2, 1}, {1, 1});
    auto out = ops::matmul(a, b, nullptr);
    CHECK(out->values == std::vector<double>{3, 7});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = make_tensor({3, 4});
    auto b = make_tensor({5, 2});
    try {
        ops::matmul(a, b, nullptr);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[3x4]") != std::string::npos);
        CHECK(msg.find("[5x2]") != std::string::npos);
    }
}

TEST_CASE("matmul backward matches finite differences at 1e-6") {
    auto a = random_leaf({3, 4}, 1);
    auto b = random_leaf({4, 2}, 2);
    double err = gradcheck(
        [&](ComputationRecord* rec) { return pin(ops::matmul(a, b, rec), 77, rec); }, {a, b});
    CHECK(err < 1e-6);
}

TEST_CASE("backward of sum is all ones") {
    auto x = random_leaf({3, 5}, 3);
    ComputationRecord rec;
    auto loss = ops::sum(x, &rec);
    rec.backward(loss);
    for (size_t i = 0; i < x->numel(); ++i) CHECK(x->grad()[i] == 1.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
    auto x = random_leaf({4, 3}, 4);
    ComputationRecord rec;
    auto loss = ops::sum(ops::mul(x, x, &rec), &rec);
    rec.backward(loss);
    for (size_t i = 0; i < x->numel(); ++i)
        CHECK(x->grad()[i] == doctest::Approx(2.0 * x->values[i]).epsilon(1e-12));
}

TEST_CASE("three-layer chain matches finite differences") {
    auto w1 = random_leaf({6, 5}, 5, 0.7);
    auto w2 = random_leaf({4, 6}, 6, 0.7);
    auto w3 = random_leaf({2, 4}, 7, 0.7);
    auto x = random_leaf({5, 3}, 8);
    x->requires_grad = false;
    auto build = [&](ComputationRecord* rec) {
        auto h1 = ops::relu(ops::matmul(w1, x, rec), rec);
        auto h2 = ops::relu(ops::matmul(w2, h1, rec), rec);
        auto h3 = ops::matmul(w3, h2, rec);
        return pin(h3, 78, rec);
    };
    CHECK(gradcheck(build, {w1, w2, w3}) < 1e-6);
}

TEST_CASE("grad accumulates across two uses") {
    auto x = random_leaf({3, 3}, 9);
    auto c = random_leaf({3, 3}, 10);
    c->requires_grad = false;
    // loss = sum(x*c) + sum(x*x): dx = c + 2x
    ComputationRecord rec;
    auto loss = ops::add(ops::sum(ops::mul(x, c, &rec), &rec),
                         ops::sum(ops::mul(x, x, &rec), &rec), &rec);
    rec.backward(loss);
    for (size_t i = 0; i < x->numel(); ++i)
        CHECK(x->grad()[i] ==
              doctest::Approx(c->values[i] + 2.0 * x->values[i]).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
    auto x = random_leaf({2, 2}, 11);
    ComputationRecord rec;
    auto y = ops::mul(x, x, &rec);
    CHECK_THROWS_AS(rec.backward(y), ContractError);
}

TEST_CASE("backward rejects unreachable loss") {
    auto x = random_leaf({2, 2}, 12);
    ComputationRecord rec;
    auto detached = make_tensor({1}, {3.0});
    CHECK_THROWS_AS(rec.backward(detached), ContractError);
}

// Criterion-style sweep: every primitive against central differences on at
// least three shapes.
TEST_CASE("gradient check: add/sub/mul/scale/relu") {
    int shape_idx = 0;
    for (auto shape : std::vector<std::vector<int>>{{2, 3}, {5, 1}, {4, 7}}) {
        const uint64_t s = 20 + 10 * shape_idx++;
        auto a = random_leaf(shape, s);
        auto b = random_leaf(shape, s + 1);
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::add(a, b, r), 79, r); },
                        {a, b}) < 1e-5);
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::sub(a, b, r), 80, r); },
                        {a, b}) < 1e-5);
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::mul(a, b, r), 81, r); },
                        {a, b}) < 1e-5);
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::scale(a, -1.7, r), 82, r); },
                        {a}) < 1e-5);
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::relu(a, r), 83, r); }, {a}) <
              1e-5);
    }
}

TEST_CASE("gradient check: matmul across shapes") {
    int i = 0;
    for (auto [m, k, n] : std::vector<std::tuple<int, int, int>>{{2, 3, 4}, {5, 2, 3}, {1, 6, 2}}) {
        auto a = random_leaf({m, k}, 40 + 10 * i);
        auto b = random_leaf({k, n}, 41 + 10 * i);
        ++i;
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::matmul(a, b, r), 84, r); },
                        {a, b}) < 1e-5);
    }
}

TEST_CASE("gradient check: bias add, rows_mean, sigmoid, one_minus, row_scale") {
    int i = 0;
    for (auto shape : std::vector<std::vector<int>>{{3, 4}, {6, 2}, {2, 9}}) {
        const uint64_t s = 60 + 10 * i++;
        auto x = random_leaf(shape, s);
        auto b = random_leaf({shape[0]}, s + 1);
        CHECK(gradcheck(
                  [&](ComputationRecord* r) { return pin(ops::add_bias_cols(x, b, r), 85, r); },
                  {x, b}) < 1e-5);
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::rows_mean(x, r), 86, r); },
                        {x}) < 1e-5);
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::sigmoid(x, r), 87, r); },
                        {x}) < 1e-5);
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::one_minus(x, r), 88, r); },
                        {x}) < 1e-5);
        auto a_row = random_leaf({shape[0]}, s + 2);
        CHECK(gradcheck([&](ComputationRecord* r) { return pin(ops::row_scale(x, a_row, r), 89, r); },
                        {x, a_row}) < 1e-5);
        auto a_scalar = random_leaf({1}, s + 3);
        CHECK(gradcheck(
                  [&](ComputationRecord* r) { return pin(ops::row_scale(x, a_scalar, r), 90, r); },
                  {x, a_scalar}) < 1e-5);
    }
}

TEST_CASE("gradient check: softmax cross entropy") {
    int i = 0;
    for (auto [c, s] : std::vector<std::pair<int, int>>{{3, 5}, {2, 8}, {7, 4}}) {
        auto logits = random_leaf({c, s}, 100 + 10 * i++);
        std::vector<int> labels(static_cast<size_t>(s));
        Rng rng(i);
        for (int& y : labels) y = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(c)));
        for (Reduction red : {Reduction::mean, Reduction::sum}) {
            CHECK(gradcheck(
                      [&](ComputationRecord* r) {
                          return ops::softmax_cross_entropy(logits, labels, red, r);
                      },
                      {logits}) < 1e-5);
        }
    }
}

TEST_CASE("gradient check: kl divergence from logits") {
    int i = 0;
    for (auto [c, s] : std::vector<std::pair<int, int>>{{4, 3}, {2, 6}, {5, 5}}) {
        auto student = random_leaf({c, s}, 200 + 10 * i);
        auto teacher = random_leaf({c, s}, 201 + 10 * i++);
        teacher->requires_grad = false;
        CHECK(gradcheck(
                  [&](ComputationRecord* r) {
                      return ops::kl_div_from_logits(student, teacher, Reduction::mean, r);
                  },
                  {student}) < 1e-5);
    }
    // identical logits give zero divergence
    auto z = random_leaf({3, 4}, 230);
    auto out = ops::kl_div_from_logits(z, z, Reduction::mean, nullptr);
    CHECK(out->values[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gradient check: batch norm, train and eval") {
    int i = 0;
    for (auto [c, s] : std::vector<std::pair<int, int>>{{3, 8}, {5, 4}, {2, 16}}) {
        auto x = random_leaf({c, s}, 300 + 10 * i);
        auto gamma = random_leaf({c}, 301 + 10 * i);
        for (double& v : gamma->values) v = 1.0 + 0.3 * v;
        auto beta = random_leaf({c}, 302 + 10 * i++);
        std::vector<double> rm(static_cast<size_t>(c), 0.1), rv(static_cast<size_t>(c), 0.9);
        for (auto phase : {ops::BnPhase::train, ops::BnPhase::eval}) {
            auto build = [&, phase](ComputationRecord* r) {
                // fresh copies: the train path writes the running stats
                std::vector<double> m = rm, v = rv;
                return pin(ops::batch_norm_cols(x, gamma, beta, m, v, phase, 0.1, 1e-5, r), 91, r);
            };
            CHECK(gradcheck(build, {x, gamma, beta}) < 1e-5);
        }
    }
}

TEST_CASE("gradient check: conv plumbing (im2col, fold, flatten)") {
    int i = 0;
    for (auto [n, c, h, w] : std::vector<std::tuple<int, int, int, int>>{{1, 2, 4, 4}, {2, 1, 5, 3}, {2, 3, 3, 3}}) {
        auto img = random_leaf({n, c, h, w}, 400 + 10 * i++);
        CHECK(gradcheck(
                  [&](ComputationRecord* r) {
                      return pin(ops::im2col(img, 2, 2, 1, 1, r), 92, r);
                  },
                  {img}) < 1e-5);
        CHECK(gradcheck(
                  [&](ComputationRecord* r) {
                      return pin(ops::image_to_feature_cols(img, r), 93, r);
                  },
                  {img}) < 1e-5);
        auto cols = random_leaf({c, n * h * w}, 500 + i);
        CHECK(gradcheck(
                  [&](ComputationRecord* r) {
                      return pin(ops::cols_to_image(cols, n, h, w, r), 94, r);
                  },
                  {cols}) < 1e-5);
    }
}

TEST_CASE("tensor data/shape invariant enforced") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
    Tensor t({2, 2}, {1, 2, 3, 4});
    CHECK(t.numel() == 4);
    t.ensure_grad();
    CHECK(t.grad_values.size() == t.values.size());
}

}  // TEST_SUITE
