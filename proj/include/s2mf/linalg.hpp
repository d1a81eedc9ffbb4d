#pragma once

#include <vector>

#include "s2mf/tensor.hpp"

namespace s2mf {

// Full SVD: m = U diag(s) V^T with U [p x p] and V [q x q] complete
// orthonormal bases (null directions included); s has min(p,q) entries,
// non-negative and non-increasing.
struct SvdResult {
    Tensor left_vectors;
    std::vector<double> singular_values;
    Tensor right_vectors;
};

// One-sided Jacobi (Hestenes) with deterministic sweeps; null-space columns
// completed by Gram-Schmidt against the canonical basis. Full left basis is
// required downstream: the projector keeps the SMALLEST-singular-value
// directions, which includes the completed null block.
SvdResult svd(const Tensor& m);

// Frobenius norm of U diag(s) V^T - m, relative to |m|_F (0 when m == 0).
double svd_reconstruction_error(const Tensor& m, const SvdResult& r);

// max |G - I| entry of U^T U
double orthonormality_defect(const Tensor& u);

double frobenius_norm(const Tensor& t);
double dot(const Tensor& a, const Tensor& b);
// trace(a * b) for a [m x n], b [n x m], without forming the product
double trace_of_product(const Tensor& a, const Tensor& b);
Tensor matmul_plain(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

}  // namespace s2mf
