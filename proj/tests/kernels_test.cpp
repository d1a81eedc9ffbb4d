#include <doctest.h>

#include <tuple>
#include <vector>

#include "s2mf/kernels.hpp"
#include "s2mf/rng.hpp"

using namespace s2mf;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.gaussian();
    return v;
}

}  // namespace

TEST_SUITE("kernels") {

// The parallel lane must reproduce the serial reference bit for bit; this is
// what makes runs reproducible regardless of thread count.
TEST_CASE("matmul lanes bitwise equal") {
    for (auto [m, k, n] : std::vector<std::tuple<int, int, int>>{{3, 4, 5}, {64, 128, 96}, {1, 200, 1}, {130, 7, 61}}) {
        auto a = random_vec(static_cast<size_t>(m) * k, 1);
        auto b = random_vec(static_cast<size_t>(k) * n, 2);
        std::vector<double> c1(static_cast<size_t>(m) * n), c2 = c1;
        kern::serial::matmul_nn(a.data(), b.data(), c1.data(), m, k, n, false);
        kern::par::matmul_nn(a.data(), b.data(), c2.data(), m, k, n, false);
        CHECK(c1 == c2);

        auto bt = random_vec(static_cast<size_t>(n) * k, 3);
        kern::serial::matmul_nt(a.data(), bt.data(), c1.data(), m, k, n, false);
        kern::par::matmul_nt(a.data(), bt.data(), c2.data(), m, k, n, false);
        CHECK(c1 == c2);

        auto at = random_vec(static_cast<size_t>(k) * m, 4);
        kern::serial::matmul_tn(at.data(), b.data(), c1.data(), m, k, n, false);
        kern::par::matmul_tn(at.data(), b.data(), c2.data(), m, k, n, false);
        CHECK(c1 == c2);
    }
}

TEST_CASE("elementwise and reduction lanes bitwise equal") {
    const size_t n = 100003;
    auto a = random_vec(n, 5);
    auto b = random_vec(n, 6);
    std::vector<double> o1(n), o2(n);

    kern::serial::add(a.data(), b.data(), o1.data(), n);
    kern::par::add(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);

    kern::serial::mul(a.data(), b.data(), o1.data(), n);
    kern::par::mul(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);

    kern::serial::relu_fwd(a.data(), o1.data(), n);
    kern::par::relu_fwd(a.data(), o2.data(), n);
    CHECK(o1 == o2);

    CHECK(kern::serial::sum(a.data(), n) == kern::par::sum(a.data(), n));

    const int c = 37, s = 211;
    std::vector<double> m1(static_cast<size_t>(c)), m2(static_cast<size_t>(c));
    std::vector<double> v1(static_cast<size_t>(c)), v2(static_cast<size_t>(c));
    kern::serial::row_mean_var(a.data(), c, s, m1.data(), v1.data());
    kern::par::row_mean_var(a.data(), c, s, m2.data(), v2.data());
    CHECK(m1 == m2);
    CHECK(v1 == v2);

    std::vector<double> p1(static_cast<size_t>(c) * s), p2(static_cast<size_t>(c) * s);
    kern::serial::col_softmax(a.data(), p1.data(), c, s);
    kern::par::col_softmax(a.data(), p2.data(), c, s);
    CHECK(p1 == p2);
}

TEST_CASE("im2col/col2im lanes bitwise equal") {
    const int n = 3, c = 4, h = 9, w = 7, kh = 3, kw = 3, stride = 2, pad = 1;
    const int oh = kern::conv_out_dim(h, kh, stride, pad);
    const int ow = kern::conv_out_dim(w, kw, stride, pad);
    auto img = random_vec(static_cast<size_t>(n) * c * h * w, 7);
    const size_t cols_n = static_cast<size_t>(c) * kh * kw * n * oh * ow;
    std::vector<double> c1(cols_n), c2(cols_n);
    kern::serial::im2col(img.data(), n, c, h, w, kh, kw, stride, pad, c1.data());
    kern::par::im2col(img.data(), n, c, h, w, kh, kw, stride, pad, c2.data());
    CHECK(c1 == c2);

    auto gcols = random_vec(cols_n, 8);
    std::vector<double> g1(img.size(), 0.0), g2(img.size(), 0.0);
    kern::serial::col2im_acc(gcols.data(), n, c, h, w, kh, kw, stride, pad, g1.data());
    kern::par::col2im_acc(gcols.data(), n, c, h, w, kh, kw, stride, pad, g2.data());
    CHECK(g1 == g2);
}

TEST_CASE("col2im adjoint of im2col") {
    // <im2col(x), y> == <x, col2im(y)> pins the two index maps against each other
    const int n = 2, c = 3, h = 6, w = 5, kh = 3, kw = 2, stride = 1, pad = 1;
    const int oh = kern::conv_out_dim(h, kh, stride, pad);
    const int ow = kern::conv_out_dim(w, kw, stride, pad);
    auto x = random_vec(static_cast<size_t>(n) * c * h * w, 9);
    const size_t cols_n = static_cast<size_t>(c) * kh * kw * n * oh * ow;
    auto y = random_vec(cols_n, 10);
    std::vector<double> cols(cols_n);
    kern::im2col(x.data(), n, c, h, w, kh, kw, stride, pad, cols.data());
    std::vector<double> back(x.size(), 0.0);
    kern::col2im_acc(y.data(), n, c, h, w, kh, kw, stride, pad, back.data());
    double lhs = 0.0, rhs = 0.0;
    for (size_t i = 0; i < cols_n; ++i) lhs += cols[i] * y[i];
    for (size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("matmul hand case") {
    // [[1,2],[3,4]] * [[1],[1]] = [[3],[7]]
    std::vector<double> a{1, 2, 3, 4}, b{1, 1}, c(2);
    kern::matmul_nn(a.data(), b.data(), c.data(), 2, 2, 1, false);
    CHECK(c[0] == 3.0);
    CHECK(c[1] == 7.0);
}

TEST_CASE("lane dispatch switches") {
    kern::set_lane(kern::Lane::serial);
    CHECK(kern::active_lane() == kern::Lane::serial);
    kern::set_lane(kern::Lane::parallel);
    CHECK(kern::active_lane() == kern::Lane::parallel);
}

}  // TEST_SUITE
