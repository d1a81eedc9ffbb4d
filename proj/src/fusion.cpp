#include "s2mf/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "s2mf/kernels.hpp"

namespace s2mf {

namespace {

void check_same_arch(const MultiHeadNet& a, const MultiHeadNet& b, const char* who) {
    if (!same_architecture(a, b))
        throw ContractError(std::string(who) + ": architectures do not match");
}

void blend_into(std::vector<double>& out, const std::vector<double>& slow,
                const std::vector<double>& fast, double alpha) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = alpha * slow[i] + (1.0 - alpha) * fast[i];
}

// fusable parameter tensors of one trunk layer, with their channel counts
std::vector<TensorPtr> layer_slots(TrunkLayer& layer) {
    std::vector<TensorPtr> slots;
    if (layer.has_weight()) {
        slots.push_back(layer.weight);
        slots.push_back(layer.bias);
    } else if (layer.is_batchnorm()) {
        slots.push_back(layer.gamma);
        slots.push_back(layer.beta);
    }
    return slots;
}

int layer_channels(const TrunkLayer& layer) {
    if (layer.has_weight()) return layer.weight->dim(0);
    if (layer.is_batchnorm()) return layer.spec.in_ch;
    return 0;
}

double inverse_squash(double w) {
    const double c = std::clamp(w, 1e-12, 1.0 - 1e-12);
    return std::log(c / (1.0 - c));
}

FusionWeights init_weights(MultiHeadNet& reference, FusionGranularity granularity,
                           double init_weight) {
    FusionWeights fw;
    fw.granularity = granularity;
    const double pre = inverse_squash(init_weight);
    auto& trunk = reference.trunk();
    for (size_t li = 0; li < trunk.size(); ++li) {
        auto slots = layer_slots(trunk[li]);
        if (slots.empty()) continue;
        LayerFusionWeights lfw;
        lfw.layer = static_cast<int>(li);
        switch (granularity) {
            case FusionGranularity::per_layer: {
                auto t = make_leaf({1});
                t->values[0] = pre;
                lfw.presquash.push_back(t);
                break;
            }
            case FusionGranularity::per_channel: {
                auto t = make_leaf({layer_channels(trunk[li])});
                std::fill(t->values.begin(), t->values.end(), pre);
                lfw.presquash.push_back(t);
                break;
            }
            case FusionGranularity::per_parameter: {
                for (const TensorPtr& slot : slots) {
                    auto t = make_leaf(slot->shape());
                    std::fill(t->values.begin(), t->values.end(), pre);
                    lfw.presquash.push_back(t);
                }
                break;
            }
        }
        fw.layers.push_back(std::move(lfw));
    }
    return fw;
}

}  // namespace

EvalSet EvalSet::labeled(int task, TensorPtr x, std::vector<int> y) {
    EvalSet s;
    s.task = task;
    s.inputs = std::move(x);
    s.labels = std::move(y);
    return s;
}

EvalSet EvalSet::from_dreams(const DreamSet& ds) {
    EvalSet s;
    s.task = ds.task;
    s.inputs = make_tensor(ds.inputs.shape(), ds.inputs.values);
    s.teacher_logits = make_tensor(ds.teacher_logits.shape(), ds.teacher_logits.values);
    return s;
}

double eval_loss(MultiHeadNet& net, const EvalSet& set) {
    TensorPtr logits = net.forward(set.inputs, set.task, ops::BnPhase::eval);
    if (set.teacher_logits)
        return ops::kl_div_from_logits(logits, set.teacher_logits, Reduction::mean, nullptr)
            ->values[0];
    return ops::softmax_cross_entropy(logits, set.labels, Reduction::mean, nullptr)->values[0];
}

FusedModel fuse_linear(const MultiHeadNet& slow, const MultiHeadNet& fast, double alpha) {
    check_same_arch(slow, fast, "fuse_linear");
    if (alpha < 0.0 || alpha > 1.0)
        throw ContractError("fuse_linear: alpha must lie in [0,1], got " + std::to_string(alpha));

    FusedModel out;
    out.slow_hash = slow.param_hash();
    out.fast_hash = fast.param_hash();

    if (alpha == 1.0) {
        out.net = slow.clone();
    } else if (alpha == 0.0) {
        out.net = fast.clone();
    } else {
        out.net = slow.clone();
        auto& trunk = out.net.trunk();
        const auto& ts = slow.trunk();
        const auto& tf = fast.trunk();
        for (size_t i = 0; i < trunk.size(); ++i) {
            if (trunk[i].weight) {
                blend_into(trunk[i].weight->values, ts[i].weight->values, tf[i].weight->values,
                           alpha);
                blend_into(trunk[i].bias->values, ts[i].bias->values, tf[i].bias->values, alpha);
            }
            if (trunk[i].is_batchnorm()) {
                blend_into(trunk[i].gamma->values, ts[i].gamma->values, tf[i].gamma->values, alpha);
                blend_into(trunk[i].beta->values, ts[i].beta->values, tf[i].beta->values, alpha);
                blend_into(trunk[i].running_mean, ts[i].running_mean, tf[i].running_mean, alpha);
                blend_into(trunk[i].running_var, ts[i].running_var, tf[i].running_var, alpha);
            }
        }
        // heads blend too so each endpoint reproduces its parent model exactly
        for (int task : out.net.task_roster()) {
            blend_into(out.net.head(task).weight->values, slow.head(task).weight->values,
                       fast.head(task).weight->values, alpha);
            blend_into(out.net.head(task).bias->values, slow.head(task).bias->values,
                       fast.head(task).bias->values, alpha);
        }
    }
    for (size_t li = 0; li < out.net.trunk().size(); ++li) {
        auto slots = layer_slots(out.net.trunk()[li]);
        if (!slots.empty())
            out.weight_snapshot.emplace_back(static_cast<int>(li), std::vector<double>{alpha});
    }
    return out;
}

BarrierCurve barrier_sweep(const MultiHeadNet& slow, const MultiHeadNet& fast,
                           const std::vector<EvalSet>& eval_sets, int n) {
    if (n < 2) throw ContractError("barrier_sweep: need at least 2 grid points");
    check_same_arch(slow, fast, "barrier_sweep");
    BarrierCurve curve;
    for (const EvalSet& s : eval_sets) curve.tasks.push_back(s.task);
    for (int i = 0; i < n; ++i) {
        const double alpha = static_cast<double>(i) / (n - 1);
        FusedModel fused = fuse_linear(slow, fast, alpha);
        std::vector<double> row;
        double total = 0.0;
        for (const EvalSet& s : eval_sets) {
            const double l = eval_loss(fused.net, s);
            row.push_back(l);
            total += l;
        }
        curve.alphas.push_back(alpha);
        curve.losses.push_back(std::move(row));
        curve.combined.push_back(total);
    }
    return curve;
}

double dream_lm(MultiHeadNet& net, const std::map<int, DreamSet>& dreams,
                const std::vector<int>& tasks) {
    double total = 0.0;
    for (int task : tasks) {
        auto it = dreams.find(task);
        if (it == dreams.end())
            throw ContractError("dream_lm: no dream set for task " + std::to_string(task));
        const DreamSet& ds = it->second;
        auto x = make_tensor(ds.inputs.shape(), ds.inputs.values);
        auto teacher = make_tensor(ds.teacher_logits.shape(), ds.teacher_logits.values);
        TensorPtr logits = net.forward(x, task, ops::BnPhase::eval);
        total +=
            ops::kl_div_from_logits(logits, teacher, Reduction::mean, nullptr)->values[0];
    }
    return total;
}

FusedModel meta_fuse(const MultiHeadNet& prev, const MultiHeadNet& slow, const MultiHeadNet& fast,
                     const std::map<int, DreamSet>& dreams, int new_task,
                     const MetaFuseConfig& cfg) {
    check_same_arch(prev, slow, "meta_fuse");
    check_same_arch(slow, fast, "meta_fuse");
    if (cfg.steps < 0) throw ContractError("meta_fuse: steps must be >= 0");
    if (!dreams.count(new_task))
        throw ContractError("meta_fuse: missing dream set for the new task " +
                            std::to_string(new_task));

    // dream terms: the new task plus the old roster (all of it, or only the
    // most recent old task)
    std::vector<int> terms;
    if (cfg.include_all_old_tasks) {
        for (const auto& [task, ds] : dreams) terms.push_back(task);
    } else {
        int latest_old = -1;
        bool found = false;
        for (const auto& [task, ds] : dreams)
            if (task != new_task && (!found || task > latest_old)) {
                latest_old = task;
                found = true;
            }
        if (!found) throw ContractError("meta_fuse: no old-task dream set present");
        terms = {latest_old, new_task};
    }
    for (int task : terms)
        if (!fast.has_head(task))
            throw ContractError("meta_fuse: no head for dreamed task " + std::to_string(task));

    MultiHeadNet scratch = fast.clone();  // heads and structure; trunk swapped per step
    scratch.set_all_requires_grad(false);
    FusionWeights fw = init_weights(scratch, cfg.granularity, cfg.init_weight);

    // frozen endpoint copies the tape reads from
    MultiHeadNet prev_c = prev.clone();
    MultiHeadNet slow_c = slow.clone();
    MultiHeadNet fast_c = fast.clone();
    prev_c.set_all_requires_grad(false);
    slow_c.set_all_requires_grad(false);
    fast_c.set_all_requires_grad(false);

    // deltas per fusable slot, fixed through the optimization
    struct SlotDelta {
        size_t layer;
        std::vector<TensorPtr> prev_p, dslow, dfast;
    };
    std::vector<SlotDelta> slot_deltas;
    for (const LayerFusionWeights& lfw : fw.layers) {
        SlotDelta sd;
        sd.layer = static_cast<size_t>(lfw.layer);
        auto ps = layer_slots(prev_c.trunk()[sd.layer]);
        auto ss = layer_slots(slow_c.trunk()[sd.layer]);
        auto fs = layer_slots(fast_c.trunk()[sd.layer]);
        for (size_t j = 0; j < ps.size(); ++j) {
            sd.prev_p.push_back(ps[j]);
            auto dslow = make_tensor(ps[j]->shape());
            kern::sub(ss[j]->data(), ps[j]->data(), dslow->data(), dslow->numel());
            auto dfast = make_tensor(ps[j]->shape());
            kern::sub(fs[j]->data(), ps[j]->data(), dfast->data(), dfast->numel());
            sd.dslow.push_back(dslow);
            sd.dfast.push_back(dfast);
        }
        slot_deltas.push_back(std::move(sd));
    }

    auto blend_stats = [&](MultiHeadNet& net) {
        for (size_t k = 0; k < fw.layers.size(); ++k) {
            TrunkLayer& layer = net.trunk()[static_cast<size_t>(fw.layers[k].layer)];
            if (!layer.is_batchnorm()) continue;
            double mean_a = 0.0;
            size_t count = 0;
            for (const TensorPtr& t : fw.layers[k].presquash)
                for (double p : t->values) {
                    mean_a += 1.0 / (1.0 + std::exp(-p));
                    ++count;
                }
            mean_a /= static_cast<double>(count);
            const TrunkLayer& ls = slow_c.trunk()[static_cast<size_t>(fw.layers[k].layer)];
            const TrunkLayer& lf = fast_c.trunk()[static_cast<size_t>(fw.layers[k].layer)];
            blend_into(layer.running_mean, ls.running_mean, lf.running_mean, mean_a);
            blend_into(layer.running_var, ls.running_var, lf.running_var, mean_a);
        }
    };

    // swaps tape-built blended tensors into the scratch trunk
    auto build_blend = [&](ComputationRecord* rec) {
        for (size_t k = 0; k < fw.layers.size(); ++k) {
            const LayerFusionWeights& lfw = fw.layers[k];
            const SlotDelta& sd = slot_deltas[k];
            auto slots = layer_slots(scratch.trunk()[sd.layer]);
            for (size_t j = 0; j < slots.size(); ++j) {
                const TensorPtr& pre =
                    fw.granularity == FusionGranularity::per_parameter ? lfw.presquash[j]
                                                                       : lfw.presquash[0];
                TensorPtr a = ops::sigmoid(pre, rec);
                TensorPtr blended = ops::add(
                    sd.prev_p[j],
                    ops::add(ops::row_scale(sd.dslow[j], a, rec),
                             ops::row_scale(sd.dfast[j], ops::one_minus(a, rec), rec), rec),
                    rec);
                TrunkLayer& layer = scratch.trunk()[sd.layer];
                if (layer.has_weight()) {
                    if (j == 0)
                        layer.weight = blended;
                    else
                        layer.bias = blended;
                } else {
                    if (j == 0)
                        layer.gamma = blended;
                    else
                        layer.beta = blended;
                }
            }
        }
    };

    std::vector<TensorPtr> meta_params;
    for (const LayerFusionWeights& lfw : fw.layers)
        for (const TensorPtr& t : lfw.presquash) {
            t->requires_grad = true;
            meta_params.push_back(t);
        }

    // adam over the pre-squash weights
    std::vector<std::vector<double>> m(meta_params.size()), v(meta_params.size());
    for (size_t i = 0; i < meta_params.size(); ++i) {
        m[i].assign(meta_params[i]->numel(), 0.0);
        v[i].assign(meta_params[i]->numel(), 0.0);
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    FusedModel out;
    out.slow_hash = slow.param_hash();
    out.fast_hash = fast.param_hash();

    std::vector<std::vector<double>> best;
    double best_lm = 0.0;
    bool have_best = false;

    for (int step = 0; step <= cfg.steps; ++step) {
        blend_stats(scratch);
        ComputationRecord rec;
        for (const TensorPtr& p : meta_params) p->drop_grad();
        build_blend(&rec);

        TensorPtr lm;
        for (int task : terms) {
            const DreamSet& ds = dreams.at(task);
            auto x = make_tensor(ds.inputs.shape(), ds.inputs.values);
            auto teacher = make_tensor(ds.teacher_logits.shape(), ds.teacher_logits.values);
            TensorPtr logits = scratch.forward(x, task, ops::BnPhase::eval, &rec);
            TensorPtr term = ops::kl_div_from_logits(logits, teacher, Reduction::mean, &rec);
            lm = lm ? ops::add(lm, term, &rec) : term;
        }
        const double val = lm->values[0];
        if (!std::isfinite(val))
            throw NumericError("meta_fuse: non-finite L_m at step " + std::to_string(step));
        if (step == 0) out.initial_lm = val;
        if (!have_best || val < best_lm) {
            best_lm = val;
            best.clear();
            for (const TensorPtr& p : meta_params) best.push_back(p->values);
            have_best = true;
        }
        if (step == cfg.steps) break;

        rec.backward(lm);
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
        for (size_t i = 0; i < meta_params.size(); ++i) {
            TensorPtr& p = meta_params[i];
            if (!p->has_grad()) continue;
            for (size_t j = 0; j < p->numel(); ++j) {
                const double g = p->grad()[j];
                m[i][j] = b1 * m[i][j] + (1.0 - b1) * g;
                v[i][j] = b2 * v[i][j] + (1.0 - b2) * g * g;
                p->values[j] -= cfg.lr * (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + eps);
            }
        }
    }

    // rebuild the trunk at the best iterate with plain tensors
    for (size_t i = 0; i < meta_params.size(); ++i) {
        meta_params[i]->values = best[i];
        meta_params[i]->requires_grad = false;
        meta_params[i]->drop_grad();
    }
    blend_stats(scratch);
    build_blend(nullptr);
    for (auto& layer : scratch.trunk()) {
        if (layer.weight) layer.weight = clone_tensor(layer.weight);
        if (layer.bias) layer.bias = clone_tensor(layer.bias);
        if (layer.gamma) layer.gamma = clone_tensor(layer.gamma);
        if (layer.beta) layer.beta = clone_tensor(layer.beta);
    }
    scratch.set_all_requires_grad(false);

    out.net = std::move(scratch);
    out.final_lm = best_lm;
    for (const LayerFusionWeights& lfw : fw.layers) {
        std::vector<double> squashed;
        for (const TensorPtr& t : lfw.presquash)
            for (double p : t->values) squashed.push_back(1.0 / (1.0 + std::exp(-p)));
        out.weight_snapshot.emplace_back(lfw.layer, std::move(squashed));
    }
    return out;
}

}  // namespace s2mf
