#include "s2mf/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "s2mf/kernels.hpp"
#include "s2mf/rng.hpp"

namespace s2mf {

TaskSplit gather_batch(const TaskSplit& split, const std::vector<int>& idx) {
    TaskSplit out;
    out.num_classes = split.num_classes;
    out.y.reserve(idx.size());
    for (int i : idx) out.y.push_back(split.y[static_cast<size_t>(i)]);
    const TensorPtr& x = split.x;
    if (x->ndim() == 2) {
        const int d = x->dim(0);
        auto xb = make_tensor({d, static_cast<int>(idx.size())});
        for (int r = 0; r < d; ++r)
            for (size_t j = 0; j < idx.size(); ++j)
                xb->at(r, static_cast<int>(j)) = x->at(r, idx[j]);
        out.x = xb;
    } else {
        const int c = x->dim(1), h = x->dim(2), w = x->dim(3);
        const size_t plane = static_cast<size_t>(c) * h * w;
        auto xb = make_tensor({static_cast<int>(idx.size()), c, h, w});
        for (size_t j = 0; j < idx.size(); ++j)
            std::copy(x->data() + static_cast<size_t>(idx[j]) * plane,
                      x->data() + (static_cast<size_t>(idx[j]) + 1) * plane,
                      xb->data() + j * plane);
        out.x = xb;
    }
    return out;
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<TensorPtr> params, const PhaseConfig& cfg)
    : kind_(kind), params_(std::move(params)), cfg_(cfg) {
    if (kind_ != OptimizerKind::sgd) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->numel(), 0.0);
            if (kind_ == OptimizerKind::adam) v_[i].assign(params_[i]->numel(), 0.0);
        }
    }
}

void Optimizer::step(const DeltaTransform& transform) {
    ++step_count_;
    for (size_t slot = 0; slot < params_.size(); ++slot) {
        TensorPtr& p = params_[slot];
        if (!p->has_grad()) continue;
        const size_t n = p->numel();
        Tensor delta(p->shape());
        switch (kind_) {
            case OptimizerKind::sgd:
                kern::scale(p->grad(), -cfg_.lr, delta.data(), n);
                break;
            case OptimizerKind::sgd_momentum: {
                double* buf = m_[slot].data();
                const double* g = p->grad();
                for (size_t i = 0; i < n; ++i) {
                    buf[i] = cfg_.momentum * buf[i] + g[i];
                    delta.values[i] = -cfg_.lr * buf[i];
                }
                break;
            }
            case OptimizerKind::adam: {
                double* m = m_[slot].data();
                double* v = v_[slot].data();
                const double* g = p->grad();
                const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(step_count_));
                const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(step_count_));
                for (size_t i = 0; i < n; ++i) {
                    m[i] = cfg_.adam_beta1 * m[i] + (1.0 - cfg_.adam_beta1) * g[i];
                    v[i] = cfg_.adam_beta2 * v[i] + (1.0 - cfg_.adam_beta2) * g[i] * g[i];
                    const double mhat = m[i] / bc1;
                    const double vhat = v[i] / bc2;
                    delta.values[i] = -cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
                }
                break;
            }
        }
        if (transform) transform(slot, delta);
        kern::axpy(1.0, delta.data(), p->data(), n);
        p->zero_grad();
    }
}

namespace {

void check_phase_contract(const TaskSplit& data, const PhaseConfig& cfg, const char* phase) {
    if (cfg.epochs < 1)
        throw ContractError(std::string(phase) + ": epochs must be >= 1, got " +
                            std::to_string(cfg.epochs));
    if (cfg.lr <= 0.0) throw ContractError(std::string(phase) + ": learning rate must be > 0");
    if (cfg.batch_size < 1) throw ContractError(std::string(phase) + ": batch size must be >= 1");
    if (!data.x || data.size() == 0) throw ContractError(std::string(phase) + ": empty dataset");
}

// shared epoch/minibatch loop; per-phase wiring differs only in the params,
// the bn phase and the delta transform
void run_epochs(MultiHeadNet& net, const TaskSplit& data, int task, ops::BnPhase bn_phase,
                Optimizer& opt, const Optimizer::DeltaTransform& transform, const PhaseConfig& cfg,
                const char* phase_name, const TrainHooks* hooks) {
    Rng rng(cfg.seed);
    std::vector<int> order(static_cast<size_t>(data.size()));
    for (int i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (int start = 0; start < data.size(); start += cfg.batch_size) {
            const int end = std::min(data.size(), start + cfg.batch_size);
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            TaskSplit batch = gather_batch(data, idx);

            ComputationRecord rec;
            TensorPtr logits = net.forward(batch.x, task, bn_phase, &rec);
            TensorPtr loss = ops::softmax_cross_entropy(logits, batch.y, Reduction::mean, &rec);
            if (!std::isfinite(loss->values[0]))
                throw NumericError(std::string(phase_name) + ": non-finite loss at epoch " +
                                   std::to_string(epoch));
            rec.backward(loss);
            opt.step(transform);
        }
        if (hooks && hooks->on_epoch) {
            EpochRecord record;
            record.phase = phase_name;
            record.task = task;
            record.epoch = epoch;
            record.train_loss = ce_loss(net, data.x, data.y, task);
            record.train_acc = accuracy_percent(net, data.x, data.y, task);
            hooks->on_epoch(record);
        }
    }
}

}  // namespace

void train_first_task(MultiHeadNet& net, const TaskSplit& data, int task, const PhaseConfig& cfg,
                      const TrainHooks* hooks) {
    check_phase_contract(data, cfg, "train_first_task");
    if (!net.task_roster().empty())
        throw ContractError("train_first_task: task roster is not empty");
    net.add_head(task, data.num_classes);

    net.set_all_requires_grad(false);
    net.set_trunk_requires_grad(true, true, true);
    net.set_head_requires_grad(task, true);

    std::vector<TensorPtr> params;
    for (auto& layer : net.trunk()) {
        if (layer.weight) params.push_back(layer.weight);
        if (layer.bias) params.push_back(layer.bias);
        if (layer.gamma) params.push_back(layer.gamma);
        if (layer.beta) params.push_back(layer.beta);
    }
    params.push_back(net.head(task).weight);
    params.push_back(net.head(task).bias);

    Optimizer opt(cfg.optimizer, std::move(params), cfg);
    run_epochs(net, data, task, ops::BnPhase::train, opt, nullptr, cfg, "first", hooks);
}

void train_slow(MultiHeadNet& net, const TaskSplit& data, int task, const ProjectionBasis& basis,
                const PhaseConfig& cfg, const TrainHooks* hooks) {
    check_phase_contract(data, cfg, "train_slow");
    if (!net.has_head(task)) throw ContractError("train_slow: head for task not registered");

    // stability control exists only for the weight matrices; everything else
    // in the trunk stays put during the slow phase
    net.set_all_requires_grad(false);
    net.set_trunk_requires_grad(true, false, false);
    net.set_head_requires_grad(task, true);

    std::vector<TensorPtr> params;
    std::vector<int> slot_layer;
    for (int li : net.weight_layer_indices()) {
        TrunkLayer& layer = net.trunk()[static_cast<size_t>(li)];
        if (!basis.find_layer(li))
            throw ShapeError("train_slow: basis has no entry for trunk layer " + std::to_string(li));
        params.push_back(layer.weight);
        slot_layer.push_back(li);
    }
    const size_t n_weight_slots = params.size();
    params.push_back(net.head(task).weight);
    params.push_back(net.head(task).bias);

    Optimizer opt(cfg.optimizer, std::move(params), cfg);
    Optimizer::DeltaTransform transform = [&](size_t slot, Tensor& delta) {
        if (slot >= n_weight_slots) return;  // the new head moves freely
        const int li = slot_layer[slot];
        delta = project_layer_update(delta, *basis.find_layer(li));
        if (hooks && hooks->on_weight_delta) hooks->on_weight_delta(li, delta);
    };
    run_epochs(net, data, task, ops::BnPhase::eval, opt, transform, cfg, "slow", hooks);
}

void train_fast(MultiHeadNet& net, const TaskSplit& data, int task, const PhaseConfig& cfg,
                const TrainHooks* hooks) {
    check_phase_contract(data, cfg, "train_fast");
    if (!net.has_head(task)) throw ContractError("train_fast: head for task not registered");

    net.set_all_requires_grad(false);
    net.set_trunk_requires_grad(true, true, true);
    net.set_head_requires_grad(task, true);

    std::vector<TensorPtr> params;
    for (auto& layer : net.trunk()) {
        if (layer.weight) params.push_back(layer.weight);
        if (layer.bias) params.push_back(layer.bias);
        if (layer.gamma) params.push_back(layer.gamma);
        if (layer.beta) params.push_back(layer.beta);
    }
    params.push_back(net.head(task).weight);
    params.push_back(net.head(task).bias);

    Optimizer opt(cfg.optimizer, std::move(params), cfg);
    run_epochs(net, data, task, ops::BnPhase::train, opt, nullptr, cfg, "fast", hooks);
}

}  // namespace s2mf
