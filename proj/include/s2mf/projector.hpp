#pragma once

#include <string>
#include <vector>

#include "s2mf/linalg.hpp"
#include "s2mf/network.hpp"
#include "s2mf/tensor.hpp"

namespace s2mf {

// tpnsp builds the per-layer cross-correlation X (dl/dZ)^T of the old task;
// nsp is the classic null-space baseline on the uncentered feature
// covariance X X^T.
enum class ProjectorKind { tpnsp, nsp };

struct RankPolicy {
    enum class Kind { relative_threshold, cumulative_energy, exact_null };
    Kind kind = Kind::relative_threshold;
    double epsilon = 0.05;  // relative_threshold: keep sigma_i <= epsilon * sigma_max
    double rho = 0.98;      // cumulative_energy: discard top directions holding rho of sum(sigma)

    static RankPolicy relative(double eps = 0.05) {
        return {Kind::relative_threshold, eps, 0.98};
    }
    static RankPolicy energy(double rho = 0.98) { return {Kind::cumulative_energy, 0.05, rho}; }
    static RankPolicy exact_null() { return {Kind::exact_null, 0.05, 0.98}; }

    std::string describe() const;
};

// Per-layer retained subspace. u has orthonormal columns spanning the
// directions an update may move in; k == c_in with identity_fallback set
// means the stability constraint was vacuous (near-zero accumulator).
struct LayerBasis {
    int layer = 0;  // trunk index
    Tensor u;       // [c_in x k]
    int k = 0;
    double retained_energy_ratio = 1.0;
    bool identity_fallback = false;
};

struct ProjectionBasis {
    ProjectorKind kind = ProjectorKind::tpnsp;
    std::vector<LayerBasis> layers;
    std::string policy;

    const LayerBasis* find_layer(int trunk_index) const;
};

// Accumulates the per-layer operand matrices over batches of captured layer
// i/o. Batch results add, so a full pass equals one shot over the
// concatenated split.
class CrossCorrAccumulator {
public:
    CrossCorrAccumulator(ProjectorKind kind, const MultiHeadNet& net);

    void accumulate(const std::vector<LayerIO>& batch);

    int batches() const { return batches_; }
    ProjectorKind kind() const { return kind_; }
    const std::vector<int>& layer_indices() const { return layer_indices_; }
    const Tensor& layer_matrix(size_t i) const { return mats_[i]; }
    size_t num_layers() const { return mats_.size(); }

private:
    ProjectorKind kind_;
    std::vector<int> layer_indices_;
    std::vector<Tensor> mats_;
    int batches_ = 0;
};

// SVD per layer; retains the smallest-singular-value directions chosen by
// the policy. Near-zero accumulators (sigma_max < 1e-12) degrade to the
// identity basis with a warning flag: a vanished gradient imposes no
// first-order stability constraint.
ProjectionBasis build_basis(const CrossCorrAccumulator& acc, const RankPolicy& policy);

// identity basis (k = c_in) for every weight layer; the naive-finetune config
ProjectionBasis identity_basis(const MultiHeadNet& net);

// delta -> delta * U U^T for one layer; idempotent, never grows the norm
Tensor project_layer_update(const Tensor& delta_w, const LayerBasis& basis);

// applies project_layer_update to every entry of deltas (trunk-indexed)
void project_update(std::vector<std::pair<int, Tensor>>& deltas, const ProjectionBasis& basis);

// basis sidecar container
void save_basis(const std::string& path, const ProjectionBasis& basis, uint64_t config_hash,
                uint64_t seed);
ProjectionBasis load_basis(const std::string& path);

}  // namespace s2mf
