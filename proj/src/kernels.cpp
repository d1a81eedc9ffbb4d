#include "s2mf/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace s2mf::kern {

namespace {

Lane initial_lane() {
    const char* env = std::getenv("S2MF_KERNEL_LANE");
    if (env && std::strcmp(env, "serial") == 0) return Lane::serial;
    return Lane::parallel;
}

std::atomic<Lane>& lane_slot() {
    static std::atomic<Lane> lane{initial_lane()};
    return lane;
}

}  // namespace

void set_lane(Lane lane) { lane_slot().store(lane, std::memory_order_relaxed); }
Lane active_lane() { return lane_slot().load(std::memory_order_relaxed); }

#define S2MF_DISPATCH(fn, ...)                                  \
    do {                                                        \
        if (active_lane() == Lane::parallel)                    \
            return par::fn(__VA_ARGS__);                        \
        return serial::fn(__VA_ARGS__);                         \
    } while (0)

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    S2MF_DISPATCH(matmul_nn, a, b, c, m, k, n, acc);
}
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    S2MF_DISPATCH(matmul_nt, a, b, c, m, k, n, acc);
}
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    S2MF_DISPATCH(matmul_tn, a, b, c, m, k, n, acc);
}
void add(const double* a, const double* b, double* out, size_t n) {
    S2MF_DISPATCH(add, a, b, out, n);
}
void sub(const double* a, const double* b, double* out, size_t n) {
    S2MF_DISPATCH(sub, a, b, out, n);
}
void mul(const double* a, const double* b, double* out, size_t n) {
    S2MF_DISPATCH(mul, a, b, out, n);
}
void scale(const double* x, double alpha, double* out, size_t n) {
    S2MF_DISPATCH(scale, x, alpha, out, n);
}
void axpy(double alpha, const double* x, double* y, size_t n) {
    S2MF_DISPATCH(axpy, alpha, x, y, n);
}
void relu_fwd(const double* x, double* out, size_t n) { S2MF_DISPATCH(relu_fwd, x, out, n); }
void relu_bwd(const double* x, const double* dy, double* dx, size_t n) {
    S2MF_DISPATCH(relu_bwd, x, dy, dx, n);
}
double sum(const double* x, size_t n) {
    if (active_lane() == Lane::parallel) return par::sum(x, n);
    return serial::sum(x, n);
}
void col_softmax(const double* z, double* p, int c, int s) { S2MF_DISPATCH(col_softmax, z, p, c, s); }
void row_mean_var(const double* x, int c, int s, double* mean, double* var) {
    S2MF_DISPATCH(row_mean_var, x, c, s, mean, var);
}
void row_sum(const double* x, int c, int s, double* out) { S2MF_DISPATCH(row_sum, x, c, s, out); }
void row_sum_prod(const double* a, const double* b, int c, int s, double* out) {
    S2MF_DISPATCH(row_sum_prod, a, b, c, s, out);
}
void im2col(const double* img, int n, int cin, int h, int w, int kh, int kw, int stride, int pad,
            double* cols) {
    S2MF_DISPATCH(im2col, img, n, cin, h, w, kh, kw, stride, pad, cols);
}
void col2im_acc(const double* cols_grad, int n, int cin, int h, int w, int kh, int kw, int stride,
                int pad, double* img_grad) {
    S2MF_DISPATCH(col2im_acc, cols_grad, n, cin, h, w, kh, kw, stride, pad, img_grad);
}

#undef S2MF_DISPATCH

}  // namespace s2mf::kern
