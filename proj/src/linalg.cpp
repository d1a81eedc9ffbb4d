#include "s2mf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "s2mf/kernels.hpp"

namespace s2mf {

namespace {

// columns are stored contiguously here (column-major work buffer)
struct ColMat {
    int rows = 0, cols = 0;
    std::vector<double> a;
    double* col(int j) { return a.data() + static_cast<size_t>(j) * rows; }
    const double* col(int j) const { return a.data() + static_cast<size_t>(j) * rows; }
};

ColMat to_colmajor(const Tensor& t) {
    ColMat m;
    m.rows = t.dim(0);
    m.cols = t.dim(1);
    m.a.resize(static_cast<size_t>(m.rows) * m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) m.col(j)[i] = t.at(i, j);
    return m;
}

double col_dot(const ColMat& m, int i, int j) {
    const double* a = m.col(i);
    const double* b = m.col(j);
    double s = 0.0;
    for (int r = 0; r < m.rows; ++r) s += a[r] * b[r];
    return s;
}

// One-sided Jacobi on B (p x q, p >= q not required): orthogonalizes the
// columns of B by plane rotations, accumulating them into V.
void hestenes(ColMat& b, ColMat& v, int max_sweeps = 64) {
    const int q = b.cols;
    for (int j = 0; j < q; ++j) {
        std::fill(v.col(j), v.col(j) + q, 0.0);
        v.col(j)[j] = 1.0;
    }
    const double tol = 1e-15;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (int i = 0; i < q - 1; ++i) {
            for (int j = i + 1; j < q; ++j) {
                const double app = col_dot(b, i, i);
                const double aqq = col_dot(b, j, j);
                const double apq = col_dot(b, i, j);
                if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                double* bi = b.col(i);
                double* bj = b.col(j);
                for (int r = 0; r < b.rows; ++r) {
                    const double x = bi[r], y = bj[r];
                    bi[r] = cs * x - sn * y;
                    bj[r] = sn * x + cs * y;
                }
                double* vi = v.col(i);
                double* vj = v.col(j);
                for (int r = 0; r < q; ++r) {
                    const double x = vi[r], y = vj[r];
                    vi[r] = cs * x - sn * y;
                    vj[r] = sn * x + cs * y;
                }
            }
        }
        if (!rotated) break;
    }
}

// Completes `have` orthonormal columns of u (p x p) to a full basis from the
// canonical vectors. A candidate is accepted when its residual after
// Gram-Schmidt exceeds tau = 1e-4: with tau < 1/sqrt(p) the scan cannot run
// out of candidates, since an incomplete basis leaves residual mass >= 1
// while all skipped candidates hold less than p * tau^2 of it.
void complete_basis(ColMat& u, int have) {
    const int p = u.rows;
    int filled = have;
    const double tau = 1e-4;
    auto orthogonalize = [&](std::vector<double>& cand, int upto) {
        for (int j = 0; j < upto; ++j) {
            const double* uj = u.col(j);
            double proj = 0.0;
            for (int r = 0; r < p; ++r) proj += cand[static_cast<size_t>(r)] * uj[r];
            for (int r = 0; r < p; ++r) cand[static_cast<size_t>(r)] -= proj * uj[r];
        }
    };
    auto norm_of = [&](const std::vector<double>& cand) {
        double nrm = 0.0;
        for (double vv : cand) nrm += vv * vv;
        return std::sqrt(nrm);
    };
    for (int e = 0; e < p && filled < p; ++e) {
        std::vector<double> cand(static_cast<size_t>(p), 0.0);
        cand[static_cast<size_t>(e)] = 1.0;
        orthogonalize(cand, filled);
        orthogonalize(cand, filled);
        double nrm = norm_of(cand);
        if (nrm < tau) continue;
        for (double& vv : cand) vv /= nrm;
        // small residuals amplify rounding; one more pass cleans it up
        orthogonalize(cand, filled);
        nrm = norm_of(cand);
        double* dst = u.col(filled);
        for (int r = 0; r < p; ++r) dst[r] = cand[static_cast<size_t>(r)] / nrm;
        ++filled;
    }
    if (filled != p) throw NumericError("svd: failed to complete orthonormal basis");
}

SvdResult svd_tall(const Tensor& m) {
    const int p = m.dim(0), q = m.dim(1);  // p >= q
    ColMat b = to_colmajor(m);
    ColMat v;
    v.rows = q;
    v.cols = q;
    v.a.resize(static_cast<size_t>(q) * q);
    hestenes(b, v);

    std::vector<double> sigma(static_cast<size_t>(q));
    for (int j = 0; j < q; ++j) sigma[static_cast<size_t>(j)] = std::sqrt(col_dot(b, j, j));

    std::vector<int> order(static_cast<size_t>(q));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return sigma[static_cast<size_t>(x)] > sigma[static_cast<size_t>(y)];
    });

    double smax = q > 0 ? sigma[static_cast<size_t>(order[0])] : 0.0;
    const double null_tol = smax * 1e-13 * std::max(p, q);

    ColMat u;
    u.rows = p;
    u.cols = p;
    u.a.assign(static_cast<size_t>(p) * p, 0.0);
    int accepted = 0;
    std::vector<double> s_sorted;
    s_sorted.reserve(static_cast<size_t>(q));
    ColMat v_sorted;
    v_sorted.rows = q;
    v_sorted.cols = q;
    v_sorted.a.assign(static_cast<size_t>(q) * q, 0.0);
    for (int rank_pos = 0; rank_pos < q; ++rank_pos) {
        const int src = order[static_cast<size_t>(rank_pos)];
        const double sv = sigma[static_cast<size_t>(src)];
        s_sorted.push_back(sv);
        std::copy(v.col(src), v.col(src) + q, v_sorted.col(rank_pos));
        if (sv > null_tol && sv > 0.0) {
            double* dst = u.col(accepted);
            const double* bc = b.col(src);
            for (int r = 0; r < p; ++r) dst[r] = bc[r] / sv;
            ++accepted;
        }
    }
    // zero singular values get no left column from B; rebuild those (and the
    // p-q extra rows' null directions) from the canonical basis
    complete_basis(u, accepted);
    for (size_t i = static_cast<size_t>(accepted); i < s_sorted.size(); ++i) s_sorted[i] = 0.0;

    SvdResult res;
    res.left_vectors = Tensor({p, p});
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) res.left_vectors.at(i, j) = u.col(j)[i];
    res.right_vectors = Tensor({q, q});
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) res.right_vectors.at(i, j) = v_sorted.col(j)[i];
    res.singular_values = std::move(s_sorted);
    return res;
}

}  // namespace

SvdResult svd(const Tensor& m) {
    if (m.ndim() != 2) throw ShapeError("svd: expected 2-d tensor, got " + m.shape_str());
    if (!all_finite(m)) throw NumericError("svd: input contains non-finite entries");
    const int p = m.dim(0), q = m.dim(1);
    if (p >= q) return svd_tall(m);
    SvdResult t = svd_tall(transpose(m));
    SvdResult res;
    res.left_vectors = std::move(t.right_vectors);
    res.right_vectors = std::move(t.left_vectors);
    res.singular_values = std::move(t.singular_values);
    return res;
}

Tensor transpose(const Tensor& a) {
    Tensor out({a.dim(1), a.dim(0)});
    for (int i = 0; i < a.dim(0); ++i)
        for (int j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul_plain: inner dimensions do not match: " + a.shape_str() + " vs " +
                         b.shape_str());
    Tensor out({a.dim(0), b.dim(1)});
    kern::matmul_nn(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1), false);
    return out;
}

double frobenius_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values) s += v * v;
    return std::sqrt(s);
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) s += a.values[i] * b.values[i];
    return s;
}

double trace_of_product(const Tensor& a, const Tensor& b) {
    if (a.dim(1) != b.dim(0) || a.dim(0) != b.dim(1))
        throw ShapeError("trace_of_product: incompatible shapes " + a.shape_str() + " vs " +
                         b.shape_str());
    double tr = 0.0;
    for (int i = 0; i < a.dim(0); ++i)
        for (int k = 0; k < a.dim(1); ++k) tr += a.at(i, k) * b.at(k, i);
    return tr;
}

double svd_reconstruction_error(const Tensor& m, const SvdResult& r) {
    const int p = m.dim(0), q = m.dim(1);
    const int mn = static_cast<int>(r.singular_values.size());
    Tensor rec({p, q});
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) {
            double s = 0.0;
            for (int k = 0; k < mn; ++k)
                s += r.left_vectors.at(i, k) * r.singular_values[static_cast<size_t>(k)] *
                     r.right_vectors.at(j, k);
            rec.at(i, j) = s - m.at(i, j);
        }
    const double base = frobenius_norm(m);
    const double err = frobenius_norm(rec);
    return base > 0.0 ? err / base : err;
}

double orthonormality_defect(const Tensor& u) {
    const int q = u.dim(1);
    double worst = 0.0;
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
            double g = 0.0;
            for (int r = 0; r < u.dim(0); ++r) g += u.at(r, i) * u.at(r, j);
            worst = std::max(worst, std::abs(g - (i == j ? 1.0 : 0.0)));
        }
    return worst;
}

}  // namespace s2mf
