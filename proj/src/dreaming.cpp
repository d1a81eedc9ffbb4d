#include "s2mf/dreaming.hpp"

#include <algorithm>
#include <cmath>

#include "s2mf/kernels.hpp"
#include "s2mf/rng.hpp"

namespace s2mf {

namespace {

void check_query(const MultiHeadNet& model, const QuerySpec& q) {
    const Head& hd = model.head(q.task);  // throws LookupError for unknown tasks
    bool has_bn = false;
    for (const TrunkLayer& l : model.trunk())
        if (l.is_batchnorm()) has_bn = true;
    if (!has_bn)
        throw ContractError("dream: model has no batch-norm statistics to anchor the synthesis");
    if (q.target_classes.empty() && !q.target_logits)
        throw ContractError("dream: query needs target classes or target logits");
    if (!q.target_classes.empty()) {
        for (int c : q.target_classes)
            if (c < 0 || c >= hd.num_outputs)
                throw ContractError("dream: query class out of range for task head");
    } else if (q.target_logits->dim(0) != hd.num_outputs) {
        throw ShapeError("dream: target logits " + q.target_logits->shape_str() +
                         " do not match head outputs");
    }
}

int query_batch(const QuerySpec& q) {
    return q.target_classes.empty() ? q.target_logits->dim(1)
                                    : static_cast<int>(q.target_classes.size());
}

TensorPtr make_noise_input(const MultiHeadNet& model, int batch, uint64_t seed,
                           const InputRange& range) {
    const InputSpec& in = model.input_spec();
    TensorPtr x = in.image ? make_tensor({batch, in.c, in.h, in.w}) : make_tensor({in.dim, batch});
    Rng rng(seed);
    for (double& v : x->values) v = std::clamp(rng.gaussian(), range.lo, range.hi);
    return x;
}

// builds the full objective on a tape; the bn penalty reads each bn layer's
// input through the capture hook
TensorPtr objective_on_tape(MultiHeadNet& model, const QuerySpec& q, const TensorPtr& x,
                            ComputationRecord* rec) {
    ForwardCapture cap;
    TensorPtr logits = model.forward(x, q.task, ops::BnPhase::eval, rec, &cap);
    TensorPtr query_loss;
    if (!q.target_classes.empty()) {
        query_loss = ops::softmax_cross_entropy(logits, q.target_classes, Reduction::mean, rec);
    } else {
        query_loss = ops::kl_div_from_logits(logits, q.target_logits, Reduction::mean, rec);
    }
    TensorPtr penalty;
    for (const auto& [li, bn_in] : cap.bn_inputs) {
        const TrunkLayer& layer = model.trunk()[static_cast<size_t>(li)];
        auto mu = make_tensor({static_cast<int>(layer.running_mean.size())}, layer.running_mean);
        TensorPtr diff = ops::sub(ops::rows_mean(bn_in, rec), mu, rec);
        TensorPtr sq = ops::sum(ops::mul(diff, diff, rec), rec);
        penalty = penalty ? ops::add(penalty, sq, rec) : sq;
    }
    if (!penalty) return query_loss;
    return ops::add(query_loss, ops::scale(penalty, q.bn_weight, rec), rec);
}

}  // namespace

double dream_objective(const MultiHeadNet& model, const QuerySpec& q, const TensorPtr& inputs) {
    MultiHeadNet work = model.clone();
    work.set_all_requires_grad(false);
    return objective_on_tape(work, q, inputs, nullptr)->values[0];
}

double bn_penalty(const MultiHeadNet& model, const TensorPtr& inputs) {
    MultiHeadNet work = model.clone();
    work.set_all_requires_grad(false);
    ForwardCapture cap;
    work.forward_trunk(inputs, ops::BnPhase::eval, nullptr, &cap);
    double total = 0.0;
    for (const auto& [li, bn_in] : cap.bn_inputs) {
        const TrunkLayer& layer = work.trunk()[static_cast<size_t>(li)];
        TensorPtr m = ops::rows_mean(bn_in, nullptr);
        for (size_t c = 0; c < layer.running_mean.size(); ++c) {
            const double d = m->values[c] - layer.running_mean[c];
            total += d * d;
        }
    }
    return total;
}

DreamSet dream(const MultiHeadNet& model, const QuerySpec& q, const InputRange& range) {
    check_query(model, q);
    if (q.steps < 0) throw ContractError("dream: steps must be >= 0");
    const int batch = query_batch(q);
    if (batch < 1) throw ContractError("dream: batch size must be >= 1");

    // work on a frozen copy; the caller's model keeps its bits
    MultiHeadNet work = model.clone();
    work.set_all_requires_grad(false);

    TensorPtr x = make_noise_input(work, batch, q.seed, range);
    x->requires_grad = true;

    DreamSet out;
    out.task = q.task;
    out.source_hash = model.param_hash();

    std::vector<double> best = x->values;
    double best_obj = 0.0;
    bool have_best = false;

    // adam state on the pixels
    std::vector<double> m(x->numel(), 0.0), v(x->numel(), 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    for (int step = 0; step <= q.steps; ++step) {
        ComputationRecord rec;
        x->drop_grad();
        TensorPtr obj = objective_on_tape(work, q, x, &rec);
        const double val = obj->values[0];
        if (!std::isfinite(val))
            throw NumericError("dream: non-finite objective at step " + std::to_string(step));
        if (step == 0) out.initial_objective = val;
        if (!have_best || val < best_obj) {
            best_obj = val;
            best = x->values;
            have_best = true;
        }
        if (step == q.steps) break;

        rec.backward(obj);
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
        for (size_t i = 0; i < x->numel(); ++i) {
            const double g = x->grad()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            const double stepv = q.input_lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
            x->values[i] = std::clamp(x->values[i] - stepv, range.lo, range.hi);
        }
    }

    x->values = best;
    x->requires_grad = false;
    out.final_objective = best_obj;
    out.inputs = Tensor(x->shape(), x->values);
    TensorPtr teacher = work.forward(x, q.task, ops::BnPhase::eval);
    out.teacher_logits = Tensor(teacher->shape(), teacher->values);
    return out;
}

std::map<int, DreamSet> dream_roster(const MultiHeadNet& model, const std::vector<int>& tasks,
                                     int classes_per_task, const DreamConfig& cfg,
                                     const InputRange& range) {
    if (classes_per_task < 1) throw ContractError("dream_roster: classes_per_task must be >= 1");
    if (cfg.batch_per_class < 1) throw ContractError("dream_roster: batch_per_class must be >= 1");
    std::map<int, DreamSet> out;
    for (int task : tasks) {
        const Head& hd = model.head(task);
        if (classes_per_task > hd.num_outputs)
            throw ContractError("dream_roster: task " + std::to_string(task) + " has only " +
                                std::to_string(hd.num_outputs) + " classes");
        QuerySpec q;
        q.task = task;
        q.steps = cfg.steps;
        q.input_lr = cfg.input_lr;
        q.bn_weight = cfg.bn_weight;
        q.seed = derive_seed(cfg.seed, static_cast<uint64_t>(task), 0xD2EAULL);
        for (int c = 0; c < classes_per_task; ++c)
            for (int b = 0; b < cfg.batch_per_class; ++b) q.target_classes.push_back(c);
        out.emplace(task, dream(model, q, range));
    }
    return out;
}

void save_dreams(const std::string& path, const std::map<int, DreamSet>& dreams,
                 uint64_t config_hash, uint64_t seed) {
    ByteWriter w;
    for (const char* p = "S2MFDREM"; *p; ++p) w.u8(static_cast<uint8_t>(*p));
    w.u32(1);
    w.u64(config_hash);
    w.u64(seed);
    w.u32(static_cast<uint32_t>(dreams.size()));
    for (const auto& [task, ds] : dreams) {
        w.i32(task);
        w.u64(ds.source_hash);
        w.f64(ds.initial_objective);
        w.f64(ds.final_objective);
        w.i32_vec(ds.inputs.shape());
        w.f64_vec(ds.inputs.values);
        w.i32_vec(ds.teacher_logits.shape());
        w.f64_vec(ds.teacher_logits.values);
    }
    write_file(path, w.bytes());
}

std::map<int, DreamSet> load_dreams(const std::string& path) {
    const auto bytes = read_file(path);
    ByteReader r(bytes);
    r.expect_magic("S2MFDREM");
    const uint32_t version = r.u32();
    if (version != 1)
        throw FormatError("unsupported dream container version " + std::to_string(version),
                          r.offset());
    r.u64();
    r.u64();
    const uint32_t n = r.u32();
    std::map<int, DreamSet> out;
    for (uint32_t i = 0; i < n; ++i) {
        DreamSet ds;
        ds.task = r.i32();
        ds.source_hash = r.u64();
        ds.initial_objective = r.f64();
        ds.final_objective = r.f64();
        auto in_shape = r.i32_vec();
        auto in_vals = r.f64_vec();
        ds.inputs = Tensor(in_shape, std::move(in_vals));
        auto lg_shape = r.i32_vec();
        auto lg_vals = r.f64_vec();
        ds.teacher_logits = Tensor(lg_shape, std::move(lg_vals));
        out.emplace(ds.task, std::move(ds));
    }
    return out;
}

}  // namespace s2mf
