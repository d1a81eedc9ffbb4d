#pragma once

#include <cstddef>

// Dense numeric kernels. Every kernel has two implementations with identical
// per-element accumulation order: a plain serial reference (kern::serial) and
// an OpenMP one (kern::par). Identical order makes the lanes bitwise equal,
// which the kernel tests assert exactly; it also makes full runs reproducible
// independent of thread count. Top-level entry points dispatch on the active
// lane (default parallel, overridable via set_lane or S2MF_KERNEL_LANE).
namespace s2mf::kern {

enum class Lane { serial, parallel };

void set_lane(Lane lane);
Lane active_lane();

#define S2MF_KERNEL_SET(ns)                                                                       \
    namespace ns {                                                                                \
    /* c (+)= a[m x k] * b[k x n] */                                                              \
    void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);   \
    /* c (+)= a[m x k] * b[n x k]^T */                                                            \
    void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc);   \
    /* c (+)= a[k x m]^T * b[k x n] */                                                            \
    void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);   \
    void add(const double* a, const double* b, double* out, size_t n);                            \
    void sub(const double* a, const double* b, double* out, size_t n);                            \
    void mul(const double* a, const double* b, double* out, size_t n);                            \
    void scale(const double* x, double alpha, double* out, size_t n);                             \
    /* y += alpha * x */                                                                          \
    void axpy(double alpha, const double* x, double* y, size_t n);                                \
    void relu_fwd(const double* x, double* out, size_t n);                                        \
    /* dx += dy where x > 0 */                                                                    \
    void relu_bwd(const double* x, const double* dy, double* dx, size_t n);                       \
    /* fixed-block-order full reduction */                                                        \
    double sum(const double* x, size_t n);                                                        \
    /* per-column softmax of z[c x s] */                                                          \
    void col_softmax(const double* z, double* p, int c, int s);                                   \
    /* per-row mean and biased variance over columns of x[c x s] */                               \
    void row_mean_var(const double* x, int c, int s, double* mean, double* var);                  \
    void row_sum(const double* x, int c, int s, double* out);                                     \
    /* out[r] = sum_col a[r,col] * b[r,col] */                                                    \
    void row_sum_prod(const double* a, const double* b, int c, int s, double* out);               \
    /* cols[cin*kh*kw x n*oh*ow] from img[n,cin,h,w]; zero padding */                             \
    void im2col(const double* img, int n, int cin, int h, int w, int kh, int kw, int stride,      \
                int pad, double* cols);                                                           \
    /* img_grad[n,cin,h,w] += scatter of cols_grad; gather form, deterministic */                 \
    void col2im_acc(const double* cols_grad, int n, int cin, int h, int w, int kh, int kw,        \
                    int stride, int pad, double* img_grad);                                       \
    }

S2MF_KERNEL_SET(serial)
S2MF_KERNEL_SET(par)

#undef S2MF_KERNEL_SET

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc = false);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc = false);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc = false);
void add(const double* a, const double* b, double* out, size_t n);
void sub(const double* a, const double* b, double* out, size_t n);
void mul(const double* a, const double* b, double* out, size_t n);
void scale(const double* x, double alpha, double* out, size_t n);
void axpy(double alpha, const double* x, double* y, size_t n);
void relu_fwd(const double* x, double* out, size_t n);
void relu_bwd(const double* x, const double* dy, double* dx, size_t n);
double sum(const double* x, size_t n);
void col_softmax(const double* z, double* p, int c, int s);
void row_mean_var(const double* x, int c, int s, double* mean, double* var);
void row_sum(const double* x, int c, int s, double* out);
void row_sum_prod(const double* a, const double* b, int c, int s, double* out);
void im2col(const double* img, int n, int cin, int h, int w, int kh, int kw, int stride, int pad,
            double* cols);
void col2im_acc(const double* cols_grad, int n, int cin, int h, int w, int kh, int kw, int stride,
                int pad, double* img_grad);

inline int conv_out_dim(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace s2mf::kern
