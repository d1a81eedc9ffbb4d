#include "s2mf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

// OpenMP lane. Work is split so that every output element is produced by one
// thread with the same inner-loop order as the serial reference; results are
// bitwise identical to it for any thread count. Small problems fall through to
// the serial body via the `if` clause to avoid fork overhead.
namespace s2mf::kern::par {

namespace {
constexpr long long kParCutoff = 1 << 15;
}

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    const long long work = 1LL * m * k * n;
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * n;
        const double* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    const long long work = 1LL * m * k * n;
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double dot = 0.0;
            for (int p = 0; p < k; ++p) dot += arow[p] * brow[p];
            crow[j] = acc ? crow[j] + dot : dot;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    const long long work = 1LL * m * k * n;
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<size_t>(p) * m + i];
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void add(const double* a, const double* b, double* out, size_t n) {
    const long long sn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (sn >= kParCutoff)
    for (long long i = 0; i < sn; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, size_t n) {
    const long long sn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (sn >= kParCutoff)
    for (long long i = 0; i < sn; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, size_t n) {
    const long long sn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (sn >= kParCutoff)
    for (long long i = 0; i < sn; ++i) out[i] = a[i] * b[i];
}

void scale(const double* x, double alpha, double* out, size_t n) {
    const long long sn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (sn >= kParCutoff)
    for (long long i = 0; i < sn; ++i) out[i] = alpha * x[i];
}

void axpy(double alpha, const double* x, double* y, size_t n) {
    const long long sn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (sn >= kParCutoff)
    for (long long i = 0; i < sn; ++i) y[i] += alpha * x[i];
}

void relu_fwd(const double* x, double* out, size_t n) {
    const long long sn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (sn >= kParCutoff)
    for (long long i = 0; i < sn; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd(const double* x, const double* dy, double* dx, size_t n) {
    const long long sn = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (sn >= kParCutoff)
    for (long long i = 0; i < sn; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

namespace {
constexpr size_t kSumBlock = 1024;

double block_sum(const double* x, size_t lo, size_t hi) {
    double s = 0.0;
    for (size_t i = lo; i < hi; ++i) s += x[i];
    return s;
}
}  // namespace

double sum(const double* x, size_t n) {
    const long long nblocks = static_cast<long long>((n + kSumBlock - 1) / kSumBlock);
    if (nblocks <= 4) {
        double total = 0.0;
        for (long long b = 0; b < nblocks; ++b)
            total += block_sum(x, static_cast<size_t>(b) * kSumBlock,
                               std::min(n, static_cast<size_t>(b + 1) * kSumBlock));
        return total;
    }
    std::vector<double> partial(static_cast<size_t>(nblocks));
#pragma omp parallel for schedule(static)
    for (long long b = 0; b < nblocks; ++b)
        partial[static_cast<size_t>(b)] = block_sum(x, static_cast<size_t>(b) * kSumBlock,
                                                    std::min(n, static_cast<size_t>(b + 1) * kSumBlock));
    double total = 0.0;
    for (long long b = 0; b < nblocks; ++b) total += partial[static_cast<size_t>(b)];
    return total;
}

void col_softmax(const double* z, double* p, int c, int s) {
    const long long work = 1LL * c * s;
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (int j = 0; j < s; ++j) {
        double mx = z[j];
        for (int i = 1; i < c; ++i) mx = std::max(mx, z[static_cast<size_t>(i) * s + j]);
        double denom = 0.0;
        for (int i = 0; i < c; ++i) {
            double e = std::exp(z[static_cast<size_t>(i) * s + j] - mx);
            p[static_cast<size_t>(i) * s + j] = e;
            denom += e;
        }
        for (int i = 0; i < c; ++i) p[static_cast<size_t>(i) * s + j] /= denom;
    }
}

void row_mean_var(const double* x, int c, int s, double* mean, double* var) {
    const long long work = 1LL * c * s;
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (int i = 0; i < c; ++i) {
        const double* row = x + static_cast<size_t>(i) * s;
        double m = 0.0;
        for (int j = 0; j < s; ++j) m += row[j];
        m /= s;
        double v = 0.0;
        for (int j = 0; j < s; ++j) {
            double d = row[j] - m;
            v += d * d;
        }
        mean[i] = m;
        var[i] = v / s;
    }
}

void row_sum(const double* x, int c, int s, double* out) {
    const long long work = 1LL * c * s;
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (int i = 0; i < c; ++i) {
        const double* row = x + static_cast<size_t>(i) * s;
        double acc = 0.0;
        for (int j = 0; j < s; ++j) acc += row[j];
        out[i] = acc;
    }
}

void row_sum_prod(const double* a, const double* b, int c, int s, double* out) {
    const long long work = 1LL * c * s;
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (int i = 0; i < c; ++i) {
        const double* ra = a + static_cast<size_t>(i) * s;
        const double* rb = b + static_cast<size_t>(i) * s;
        double acc = 0.0;
        for (int j = 0; j < s; ++j) acc += ra[j] * rb[j];
        out[i] = acc;
    }
}

void im2col(const double* img, int n, int cin, int h, int w, int kh, int kw, int stride, int pad,
            double* cols) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
    const size_t scols = static_cast<size_t>(n) * oh * ow;
    const int rows = cin * kh * kw;
    const long long work = 1LL * rows * static_cast<long long>(scols);
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (int r = 0; r < rows; ++r) {
        const int c = r / (kh * kw);
        const int ky = (r / kw) % kh;
        const int kx = r % kw;
        double* crow = cols + static_cast<size_t>(r) * scols;
        for (int b = 0; b < n; ++b) {
            const double* plane = img + (static_cast<size_t>(b) * cin + c) * h * w;
            for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * stride - pad + ky;
                double* dst = crow + (static_cast<size_t>(b) * oh + oy) * ow;
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride - pad + kx;
                    dst[ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                  ? plane[static_cast<size_t>(iy) * w + ix]
                                  : 0.0;
                }
            }
        }
    }
}

void col2im_acc(const double* cols_grad, int n, int cin, int h, int w, int kh, int kw, int stride,
                int pad, double* img_grad) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
    const size_t scols = static_cast<size_t>(n) * oh * ow;
    const long long planes = 1LL * n * cin;
    const long long work = planes * h * w * kh * kw;
#pragma omp parallel for schedule(static) if (work >= kParCutoff)
    for (long long pl = 0; pl < planes; ++pl) {
        const int b = static_cast<int>(pl / cin);
        const int c = static_cast<int>(pl % cin);
        double* plane = img_grad + static_cast<size_t>(pl) * h * w;
        for (int iy = 0; iy < h; ++iy) {
            for (int ix = 0; ix < w; ++ix) {
                double acc = 0.0;
                for (int ky = 0; ky < kh; ++ky) {
                    const int ty = iy + pad - ky;
                    if (ty < 0 || ty % stride != 0) continue;
                    const int oy = ty / stride;
                    if (oy >= oh) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int tx = ix + pad - kx;
                        if (tx < 0 || tx % stride != 0) continue;
                        const int ox = tx / stride;
                        if (ox >= ow) continue;
                        const size_t r = (static_cast<size_t>(c) * kh + ky) * kw + kx;
                        acc += cols_grad[r * scols + (static_cast<size_t>(b) * oh + oy) * ow + ox];
                    }
                }
                plane[static_cast<size_t>(iy) * w + ix] += acc;
            }
        }
    }
}

}  // namespace s2mf::kern::par
