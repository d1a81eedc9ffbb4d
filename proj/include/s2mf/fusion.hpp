#pragma once

#include <map>
#include <vector>

#include "s2mf/dreaming.hpp"
#include "s2mf/network.hpp"

namespace s2mf {

// granularity of the diagonal fusion weights: one scalar per trunk layer,
// one per output channel (default), or one per parameter entry
enum class FusionGranularity { per_layer, per_channel, per_parameter };

struct MetaFuseConfig {
    FusionGranularity granularity = FusionGranularity::per_channel;
    double lr = 0.05;
    int steps = 300;
    // Eq-level ambiguity: sum dream terms over every old task with dreams, or
    // only the latest one
    bool include_all_old_tasks = true;
    double init_weight = 0.5;
};

// unconstrained pre-squash parameters; the logistic squash keeps the applied
// weights strictly inside (0,1) so the fusion interpolates its endpoints
struct LayerFusionWeights {
    int layer = 0;
    std::vector<TensorPtr> presquash;  // one shared tensor, or one per slot for per_parameter
};

struct FusionWeights {
    FusionGranularity granularity = FusionGranularity::per_channel;
    std::vector<LayerFusionWeights> layers;
};

struct FusedModel {
    MultiHeadNet net;
    uint64_t slow_hash = 0;
    uint64_t fast_hash = 0;
    // squashed per-layer weights at the end of fusion, for histograms
    std::vector<std::pair<int, std::vector<double>>> weight_snapshot;
    double initial_lm = 0.0;
    double final_lm = 0.0;
};

// alpha * slow + (1-alpha) * fast over every parameter (trunk, heads) and
// the bn running stats; alpha in {0,1} short-circuits to a bitwise copy
FusedModel fuse_linear(const MultiHeadNet& slow, const MultiHeadNet& fast, double alpha);

// per-task evaluation target for barrier curves: CE on labels, or KL against
// stored teacher logits when a dream set is the eval set
struct EvalSet {
    int task = 0;
    TensorPtr inputs;
    std::vector<int> labels;
    TensorPtr teacher_logits;

    static EvalSet labeled(int task, TensorPtr x, std::vector<int> y);
    static EvalSet from_dreams(const DreamSet& ds);
};

struct BarrierCurve {
    std::vector<double> alphas;               // ascending, alpha = slow share
    std::vector<int> tasks;
    std::vector<std::vector<double>> losses;  // [alpha][task]
    std::vector<double> combined;             // sum over tasks
};

// per-task losses of fuse_linear along a uniform n-point alpha grid
BarrierCurve barrier_sweep(const MultiHeadNet& slow, const MultiHeadNet& fast,
                           const std::vector<EvalSet>& eval_sets, int n);

double eval_loss(MultiHeadNet& net, const EvalSet& set);

// Dreaming-meta-weighted fusion: descends the dream KL objective over the
// pre-squash weights only, endpoints frozen, and returns the trunk built by
// w_prev + A(w_slow - w_prev) + (I-A)(w_fast - w_prev) at the best iterate.
// Heads come from the fast model; bn stats blend with each layer's mean
// squashed weight (recomputed per step, no gradient through them).
FusedModel meta_fuse(const MultiHeadNet& prev, const MultiHeadNet& slow, const MultiHeadNet& fast,
                     const std::map<int, DreamSet>& dreams, int new_task,
                     const MetaFuseConfig& cfg);

// L_m of an arbitrary candidate net on the given dreams (sum of per-task
// mean KL); the yardstick shared by meta_fuse and the alpha-sweep oracle
double dream_lm(MultiHeadNet& net, const std::map<int, DreamSet>& dreams,
                const std::vector<int>& tasks);

}  // namespace s2mf
