#pragma once

#include <functional>
#include <string>
#include <vector>

#include "s2mf/network.hpp"
#include "s2mf/projector.hpp"
#include "s2mf/tensor.hpp"

namespace s2mf {

enum class OptimizerKind { sgd, sgd_momentum, adam };

struct PhaseConfig {
    int epochs = 10;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    int batch_size = 64;
    uint64_t seed = 0;
    double momentum = 0.9;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

// one task's labeled split; x is [dim x n] (vector trunks) or [n,c,h,w]
struct TaskSplit {
    TensorPtr x;
    std::vector<int> y;
    int num_classes = 0;

    int size() const { return static_cast<int>(y.size()); }
};

TaskSplit gather_batch(const TaskSplit& split, const std::vector<int>& idx);

// Delta-based optimizer: computes the per-step parameter delta from the
// accumulated grads, lets a transform rewrite it (the slow phase projects
// trunk-weight deltas here, after any moment scaling), applies it, and
// clears the grads.
class Optimizer {
public:
    using DeltaTransform = std::function<void(size_t slot, Tensor& delta)>;

    Optimizer(OptimizerKind kind, std::vector<TensorPtr> params, const PhaseConfig& cfg);
    void step(const DeltaTransform& transform = nullptr);
    const std::vector<TensorPtr>& params() const { return params_; }

private:
    OptimizerKind kind_;
    std::vector<TensorPtr> params_;
    PhaseConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long step_count_ = 0;
};

struct EpochRecord {
    std::string phase;
    int task = 0;
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
};

struct TrainHooks {
    std::function<void(int trunk_layer, const Tensor& applied_delta)> on_weight_delta;
    std::function<void(const EpochRecord&)> on_epoch;
};

// First task: plain supervised training. Adds the head; batch-norm runs in
// train mode (stats learn the data).
void train_first_task(MultiHeadNet& net, const TaskSplit& data, int task, const PhaseConfig& cfg,
                      const TrainHooks* hooks = nullptr);

// Slow phase: every trunk-weight step delta is projected onto the retained
// subspace. Old heads, trunk biases and bn (affine + stats) are frozen; the
// new head trains unprojected. Batch norm runs in eval mode so the phase
// optimizes against the same normalization the basis was built with.
void train_slow(MultiHeadNet& net, const TaskSplit& data, int task, const ProjectionBasis& basis,
                const PhaseConfig& cfg, const TrainHooks* hooks = nullptr);

// Fast phase: unconstrained finetuning of trunk + new head from the slow
// weights; bn stats update again. Old heads stay frozen.
void train_fast(MultiHeadNet& net, const TaskSplit& data, int task, const PhaseConfig& cfg,
                const TrainHooks* hooks = nullptr);

}  // namespace s2mf
