#pragma once

#include <map>
#include <vector>

#include "s2mf/network.hpp"
#include "s2mf/tensor.hpp"

namespace s2mf {

// query-matching + bn-mean-matching synthesis target. Either target_classes
// (one-hot queries, one per column) or target_logits (distribution queries)
// drives the first term.
struct QuerySpec {
    int task = 0;
    std::vector<int> target_classes;
    TensorPtr target_logits;  // optional, [num_outputs x batch]
    int steps = 500;
    double input_lr = 0.05;
    double bn_weight = 1.0;
    uint64_t seed = 0;
};

struct DreamConfig {
    int batch_per_class = 8;
    int steps = 500;
    double input_lr = 0.05;
    double bn_weight = 1.0;
    uint64_t seed = 0;
};

// synthesized inputs plus the frozen model's logits on them; teacher data
// for the fusion stage
struct DreamSet {
    int task = 0;
    Tensor inputs;          // [dim x s] or [s, c, h, w]
    Tensor teacher_logits;  // [num_outputs x s]
    uint64_t source_hash = 0;
    double final_objective = 0.0;
    double initial_objective = 0.0;
};

struct InputRange {
    double lo = -6.0;
    double hi = 6.0;
};

// Synthesizes inputs against a frozen model: seeded gaussian init, adam on
// the inputs, re-clamped to the data range each step. Returns the best
// iterate by objective, so the final value never exceeds the initial one.
// The model is cloned internally and left bit-identical.
DreamSet dream(const MultiHeadNet& model, const QuerySpec& q, const InputRange& range);

// balanced one-hot queries over each task's first classes_per_task classes;
// per-task seeds derive from cfg.seed
std::map<int, DreamSet> dream_roster(const MultiHeadNet& model, const std::vector<int>& tasks,
                                     int classes_per_task, const DreamConfig& cfg,
                                     const InputRange& range);

// the Eq-style objective of a given input batch (query CE + weighted bn
// penalty); exposed for tests and the noise-baseline comparison
double dream_objective(const MultiHeadNet& model, const QuerySpec& q, const TensorPtr& inputs);

// bn penalty alone: sum over bn layers of squared deviation of per-channel
// batch means from the stored running means
double bn_penalty(const MultiHeadNet& model, const TensorPtr& inputs);

void save_dreams(const std::string& path, const std::map<int, DreamSet>& dreams,
                 uint64_t config_hash, uint64_t seed);
std::map<int, DreamSet> load_dreams(const std::string& path);

}  // namespace s2mf
