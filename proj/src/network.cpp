#include "s2mf/network.hpp"

#include <algorithm>
#include <cmath>

#include "s2mf/kernels.hpp"

namespace s2mf {

namespace {

struct Act {
    enum class Form { vector_cols, spatial_cols, image };
    TensorPtr t;
    Form form = Form::vector_cols;
    int n = 0, c = 0, h = 0, w = 0;
};

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

}  // namespace

MultiHeadNet::MultiHeadNet(InputSpec input, std::vector<LayerSpec> trunk, uint64_t init_seed)
    : input_(input), specs_(std::move(trunk)), init_seed_(init_seed) {
    validate_spec();
    init_params();
}

void MultiHeadNet::validate_spec() const {
    bool image = input_.image;
    int features = input_.dim;
    int c = input_.c, h = input_.h, w = input_.w;
    for (size_t i = 0; i < specs_.size(); ++i) {
        const LayerSpec& s = specs_[i];
        const std::string where = "trunk layer " + std::to_string(i) + " (" + kind_name(s.kind) + ")";
        switch (s.kind) {
            case LayerKind::linear:
                if (image) throw ShapeError(where + ": needs flattened input");
                if (features != s.in_ch)
                    throw ShapeError(where + ": expects " + std::to_string(s.in_ch) +
                                     " features, gets " + std::to_string(features));
                features = s.out_ch;
                break;
            case LayerKind::conv2d: {
                if (!image) throw ShapeError(where + ": needs image input");
                if (c != s.in_ch)
                    throw ShapeError(where + ": expects " + std::to_string(s.in_ch) +
                                     " channels, gets " + std::to_string(c));
                const int oh = kern::conv_out_dim(h, s.kernel, s.stride, s.pad);
                const int ow = kern::conv_out_dim(w, s.kernel, s.stride, s.pad);
                if (oh <= 0 || ow <= 0) throw ShapeError(where + ": kernel does not fit input");
                c = s.out_ch;
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::batchnorm: {
                const int ch = image ? c : features;
                if (ch != s.in_ch)
                    throw ShapeError(where + ": expects " + std::to_string(s.in_ch) +
                                     " channels, gets " + std::to_string(ch));
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::flatten:
                if (!image) throw ShapeError(where + ": input is already flat");
                features = c * h * w;
                image = false;
                break;
        }
        if (s.kind == LayerKind::conv2d) image = true;
    }
    if (image) throw ShapeError("trunk must end in flat features (add a flatten layer)");
    if (features <= 0) throw ShapeError("trunk output dimension must be positive");
}

void MultiHeadNet::init_params() {
    Rng rng(init_seed_);
    trunk_.clear();
    trunk_.reserve(specs_.size());
    int features = input_.dim;
    int c = input_.c, h = input_.h, w = input_.w;
    bool image = input_.image;
    for (const LayerSpec& s : specs_) {
        TrunkLayer layer;
        layer.spec = s;
        switch (s.kind) {
            case LayerKind::linear: {
                const double limit = std::sqrt(1.0 / s.in_ch);
                layer.weight = make_leaf({s.out_ch, s.in_ch});
                for (double& v : layer.weight->values) v = rng.uniform(-limit, limit);
                layer.bias = make_leaf({s.out_ch});
                features = s.out_ch;
                break;
            }
            case LayerKind::conv2d: {
                const int fan_in = s.in_ch * s.kernel * s.kernel;
                const double limit = std::sqrt(1.0 / fan_in);
                layer.weight = make_leaf({s.out_ch, fan_in});
                for (double& v : layer.weight->values) v = rng.uniform(-limit, limit);
                layer.bias = make_leaf({s.out_ch});
                c = s.out_ch;
                h = kern::conv_out_dim(h, s.kernel, s.stride, s.pad);
                w = kern::conv_out_dim(w, s.kernel, s.stride, s.pad);
                image = true;
                break;
            }
            case LayerKind::batchnorm: {
                layer.gamma = make_leaf({s.in_ch});
                std::fill(layer.gamma->values.begin(), layer.gamma->values.end(), 1.0);
                layer.beta = make_leaf({s.in_ch});
                layer.running_mean.assign(static_cast<size_t>(s.in_ch), 0.0);
                layer.running_var.assign(static_cast<size_t>(s.in_ch), 1.0);
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::flatten:
                features = c * h * w;
                image = false;
                break;
        }
        trunk_.push_back(std::move(layer));
    }
    trunk_out_dim_ = features;
}

TensorPtr MultiHeadNet::forward_trunk(const TensorPtr& x, ops::BnPhase phase,
                                      ComputationRecord* rec, ForwardCapture* capture) {
    Act act;
    act.t = x;
    if (input_.image) {
        if (x->ndim() != 4)
            throw ShapeError("forward: image trunk expects [n,c,h,w], got " + x->shape_str());
        if (x->dim(1) != input_.c || x->dim(2) != input_.h || x->dim(3) != input_.w)
            throw ShapeError("forward: input " + x->shape_str() + " does not match trunk input");
        act.form = Act::Form::image;
        act.n = x->dim(0);
        act.c = x->dim(1);
        act.h = x->dim(2);
        act.w = x->dim(3);
    } else {
        if (x->ndim() != 2 || x->dim(0) != input_.dim)
            throw ShapeError("forward: expected [" + std::to_string(input_.dim) + " x s], got " +
                             x->shape_str());
        act.form = Act::Form::vector_cols;
    }

    for (size_t li = 0; li < trunk_.size(); ++li) {
        TrunkLayer& layer = trunk_[li];
        const LayerSpec& s = layer.spec;
        switch (s.kind) {
            case LayerKind::linear: {
                if (act.form != Act::Form::vector_cols)
                    throw ShapeError("forward: linear layer needs flattened features");
                if (capture) capture->weight_layer_inputs.emplace_back(static_cast<int>(li), act.t);
                TensorPtr z = ops::matmul(layer.weight, act.t, rec);
                if (capture) capture->weight_layer_preacts.emplace_back(static_cast<int>(li), z);
                act.t = ops::add_bias_cols(z, layer.bias, rec);
                break;
            }
            case LayerKind::conv2d: {
                if (act.form == Act::Form::spatial_cols)
                    act.t = ops::cols_to_image(act.t, act.n, act.h, act.w, rec);
                else if (act.form != Act::Form::image)
                    throw ShapeError("forward: conv layer needs image input");
                TensorPtr cols = ops::im2col(act.t, s.kernel, s.kernel, s.stride, s.pad, rec);
                if (capture) capture->weight_layer_inputs.emplace_back(static_cast<int>(li), cols);
                TensorPtr z = ops::matmul(layer.weight, cols, rec);
                if (capture) capture->weight_layer_preacts.emplace_back(static_cast<int>(li), z);
                act.t = ops::add_bias_cols(z, layer.bias, rec);
                act.form = Act::Form::spatial_cols;
                act.c = s.out_ch;
                act.h = kern::conv_out_dim(act.h, s.kernel, s.stride, s.pad);
                act.w = kern::conv_out_dim(act.w, s.kernel, s.stride, s.pad);
                break;
            }
            case LayerKind::batchnorm: {
                if (act.form == Act::Form::image)
                    throw ShapeError("forward: batchnorm on raw image input is unsupported");
                if (capture) capture->bn_inputs.emplace_back(static_cast<int>(li), act.t);
                act.t = ops::batch_norm_cols(act.t, layer.gamma, layer.beta, layer.running_mean,
                                             layer.running_var, phase, layer.bn_momentum,
                                             layer.bn_eps, rec);
                break;
            }
            case LayerKind::relu:
                act.t = ops::relu(act.t, rec);
                break;
            case LayerKind::flatten: {
                if (act.form == Act::Form::spatial_cols)
                    act.t = ops::cols_to_image(act.t, act.n, act.h, act.w, rec);
                else if (act.form != Act::Form::image)
                    throw ShapeError("forward: flatten needs spatial input");
                act.t = ops::image_to_feature_cols(act.t, rec);
                act.form = Act::Form::vector_cols;
                break;
            }
        }
    }
    if (act.form != Act::Form::vector_cols)
        throw ShapeError("forward: trunk did not end in flat features");
    return act.t;
}

TensorPtr MultiHeadNet::forward(const TensorPtr& x, int task, ops::BnPhase phase,
                                ComputationRecord* rec, ForwardCapture* capture) {
    const Head& hd = head(task);
    TensorPtr features = forward_trunk(x, phase, rec, capture);
    TensorPtr logits = ops::matmul(hd.weight, features, rec);
    return ops::add_bias_cols(logits, hd.bias, rec);
}

void MultiHeadNet::add_head(int task, int num_outputs) {
    add_head(task, num_outputs, derive_seed(init_seed_, static_cast<uint64_t>(task), 0x48454144ULL));
}

void MultiHeadNet::add_head(int task, int num_outputs, uint64_t seed) {
    if (heads_.count(task))
        throw ContractError("add_head: task " + std::to_string(task) + " already registered");
    if (num_outputs < 1) throw ContractError("add_head: num_outputs must be >= 1");
    Head hd;
    hd.num_outputs = num_outputs;
    hd.weight = make_leaf({num_outputs, trunk_out_dim_});
    hd.bias = make_leaf({num_outputs});
    Rng rng(seed);
    const double limit = std::sqrt(1.0 / trunk_out_dim_);
    for (double& v : hd.weight->values) v = rng.uniform(-limit, limit);
    heads_[task] = std::move(hd);
}

Head& MultiHeadNet::head(int task) {
    auto it = heads_.find(task);
    if (it == heads_.end()) throw LookupError("unknown task " + std::to_string(task));
    return it->second;
}

const Head& MultiHeadNet::head(int task) const {
    auto it = heads_.find(task);
    if (it == heads_.end()) throw LookupError("unknown task " + std::to_string(task));
    return it->second;
}

std::vector<int> MultiHeadNet::task_roster() const {
    std::vector<int> r;
    r.reserve(heads_.size());
    for (const auto& [task, hd] : heads_) r.push_back(task);
    return r;
}

std::vector<int> MultiHeadNet::weight_layer_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < trunk_.size(); ++i)
        if (trunk_[i].has_weight()) idx.push_back(static_cast<int>(i));
    return idx;
}

std::vector<LayerIO> MultiHeadNet::capture_layer_io(const TensorPtr& x,
                                                    const std::vector<int>& labels, int task,
                                                    ops::BnPhase phase) {
    const Head& hd = head(task);
    (void)hd;

    // force-record everything, then leave parameter grads exactly as found
    std::vector<TensorPtr> params = all_params();
    std::vector<bool> req_before(params.size());
    std::vector<std::vector<double>> grads_before(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        req_before[i] = params[i]->requires_grad;
        grads_before[i] = std::move(params[i]->grad_values);
        params[i]->grad_values.clear();
        params[i]->requires_grad = true;
    }

    std::vector<LayerIO> result;
    try {
        ComputationRecord rec;
        ForwardCapture cap;
        TensorPtr logits = forward(x, task, phase, &rec, &cap);
        TensorPtr loss = ops::softmax_cross_entropy(logits, labels, Reduction::sum, &rec);
        rec.backward(loss);

        result.reserve(cap.weight_layer_inputs.size());
        for (size_t i = 0; i < cap.weight_layer_inputs.size(); ++i) {
            const auto& [layer, xin] = cap.weight_layer_inputs[i];
            const auto& [layer2, z] = cap.weight_layer_preacts[i];
            LayerIO io;
            io.layer = layer;
            io.input_cols = Tensor(xin->shape(), xin->values);
            io.output_grad = Tensor(z->shape(), z->grad_values);
            result.push_back(std::move(io));
        }
    } catch (...) {
        for (size_t i = 0; i < params.size(); ++i) {
            params[i]->requires_grad = req_before[i];
            params[i]->grad_values = std::move(grads_before[i]);
        }
        throw;
    }
    for (size_t i = 0; i < params.size(); ++i) {
        params[i]->requires_grad = req_before[i];
        params[i]->grad_values = std::move(grads_before[i]);
    }
    return result;
}

MultiHeadNet MultiHeadNet::clone() const {
    MultiHeadNet out;
    out.input_ = input_;
    out.specs_ = specs_;
    out.trunk_out_dim_ = trunk_out_dim_;
    out.init_seed_ = init_seed_;
    out.trunk_.reserve(trunk_.size());
    for (const TrunkLayer& l : trunk_) {
        TrunkLayer copy;
        copy.spec = l.spec;
        if (l.weight) copy.weight = clone_tensor(l.weight);
        if (l.bias) copy.bias = clone_tensor(l.bias);
        if (l.gamma) copy.gamma = clone_tensor(l.gamma);
        if (l.beta) copy.beta = clone_tensor(l.beta);
        copy.running_mean = l.running_mean;
        copy.running_var = l.running_var;
        copy.bn_momentum = l.bn_momentum;
        copy.bn_eps = l.bn_eps;
        out.trunk_.push_back(std::move(copy));
    }
    for (const auto& [task, hd] : heads_) {
        Head copy;
        copy.num_outputs = hd.num_outputs;
        copy.weight = clone_tensor(hd.weight);
        copy.bias = clone_tensor(hd.bias);
        out.heads_[task] = std::move(copy);
    }
    return out;
}

void MultiHeadNet::set_trunk_requires_grad(bool weights, bool biases, bool bn_affine) {
    for (TrunkLayer& l : trunk_) {
        if (l.weight) l.weight->requires_grad = weights;
        if (l.bias) l.bias->requires_grad = biases;
        if (l.gamma) l.gamma->requires_grad = bn_affine;
        if (l.beta) l.beta->requires_grad = bn_affine;
    }
}

void MultiHeadNet::set_head_requires_grad(int task, bool value) {
    Head& hd = head(task);
    hd.weight->requires_grad = value;
    hd.bias->requires_grad = value;
}

void MultiHeadNet::set_all_requires_grad(bool value) {
    set_trunk_requires_grad(value, value, value);
    for (auto& [task, hd] : heads_) {
        hd.weight->requires_grad = value;
        hd.bias->requires_grad = value;
    }
}

void MultiHeadNet::zero_all_grads() {
    for (const TensorPtr& p : all_params()) p->drop_grad();
}

std::vector<TensorPtr> MultiHeadNet::all_params() const {
    std::vector<TensorPtr> out;
    for (const TrunkLayer& l : trunk_) {
        if (l.weight) out.push_back(l.weight);
        if (l.bias) out.push_back(l.bias);
        if (l.gamma) out.push_back(l.gamma);
        if (l.beta) out.push_back(l.beta);
    }
    for (const auto& [task, hd] : heads_) {
        out.push_back(hd.weight);
        out.push_back(hd.bias);
    }
    return out;
}

void MultiHeadNet::to_bytes(ByteWriter& w) const {
    w.u8(input_.image ? 1 : 0);
    w.i32(input_.dim);
    w.i32(input_.c);
    w.i32(input_.h);
    w.i32(input_.w);
    w.u64(init_seed_);
    w.u32(static_cast<uint32_t>(specs_.size()));
    for (const LayerSpec& s : specs_) {
        w.u8(static_cast<uint8_t>(s.kind));
        w.i32(s.in_ch);
        w.i32(s.out_ch);
        w.i32(s.kernel);
        w.i32(s.stride);
        w.i32(s.pad);
    }
    for (const TrunkLayer& l : trunk_) {
        if (l.has_weight()) {
            w.f64_vec(l.weight->values);
            w.f64_vec(l.bias->values);
        } else if (l.is_batchnorm()) {
            w.f64_vec(l.gamma->values);
            w.f64_vec(l.beta->values);
            w.f64_vec(l.running_mean);
            w.f64_vec(l.running_var);
            w.f64(l.bn_momentum);
            w.f64(l.bn_eps);
        }
    }
    w.u32(static_cast<uint32_t>(heads_.size()));
    for (const auto& [task, hd] : heads_) {
        w.i32(task);
        w.i32(hd.num_outputs);
        w.f64_vec(hd.weight->values);
        w.f64_vec(hd.bias->values);
    }
}

MultiHeadNet MultiHeadNet::from_bytes(ByteReader& r) {
    InputSpec input;
    input.image = r.u8() != 0;
    input.dim = r.i32();
    input.c = r.i32();
    input.h = r.i32();
    input.w = r.i32();
    const uint64_t seed = r.u64();
    const uint32_t nspecs = r.u32();
    std::vector<LayerSpec> specs(nspecs);
    for (LayerSpec& s : specs) {
        s.kind = static_cast<LayerKind>(r.u8());
        s.in_ch = r.i32();
        s.out_ch = r.i32();
        s.kernel = r.i32();
        s.stride = r.i32();
        s.pad = r.i32();
    }
    MultiHeadNet net(input, specs, seed);
    for (TrunkLayer& l : net.trunk_) {
        if (l.has_weight()) {
            l.weight->values = r.f64_vec();
            l.bias->values = r.f64_vec();
            if (l.weight->values.size() != l.weight->numel() ||
                l.bias->values.size() != l.bias->numel())
                throw FormatError("trunk parameter size mismatch", r.offset());
        } else if (l.is_batchnorm()) {
            l.gamma->values = r.f64_vec();
            l.beta->values = r.f64_vec();
            l.running_mean = r.f64_vec();
            l.running_var = r.f64_vec();
            l.bn_momentum = r.f64();
            l.bn_eps = r.f64();
            const size_t ch = static_cast<size_t>(l.spec.in_ch);
            if (l.gamma->values.size() != ch || l.beta->values.size() != ch ||
                l.running_mean.size() != ch || l.running_var.size() != ch)
                throw FormatError("batchnorm parameter size mismatch", r.offset());
        }
    }
    const uint32_t nheads = r.u32();
    for (uint32_t i = 0; i < nheads; ++i) {
        const int task = r.i32();
        const int outputs = r.i32();
        net.add_head(task, outputs, 0);
        Head& hd = net.head(task);
        hd.weight->values = r.f64_vec();
        hd.bias->values = r.f64_vec();
        if (hd.weight->values.size() != hd.weight->numel() || hd.bias->values.size() != hd.bias->numel())
            throw FormatError("head parameter size mismatch", r.offset());
    }
    return net;
}

uint64_t MultiHeadNet::param_hash() const {
    ByteWriter w;
    to_bytes(w);
    return fnv1a(w.bytes().data(), w.bytes().size());
}

bool same_architecture(const MultiHeadNet& a, const MultiHeadNet& b) {
    if (!(a.input_spec() == b.input_spec())) return false;
    const auto& ta = a.trunk();
    const auto& tb = b.trunk();
    if (ta.size() != tb.size()) return false;
    for (size_t i = 0; i < ta.size(); ++i)
        if (!(ta[i].spec == tb[i].spec)) return false;
    const auto ra = a.task_roster();
    const auto rb = b.task_roster();
    if (ra != rb) return false;
    for (int task : ra)
        if (a.head(task).num_outputs != b.head(task).num_outputs) return false;
    return true;
}

bool bitwise_equal_params(const MultiHeadNet& a, const MultiHeadNet& b) {
    if (!same_architecture(a, b)) return false;
    const auto& ta = a.trunk();
    const auto& tb = b.trunk();
    for (size_t i = 0; i < ta.size(); ++i) {
        if (ta[i].weight && ta[i].weight->values != tb[i].weight->values) return false;
        if (ta[i].bias && ta[i].bias->values != tb[i].bias->values) return false;
        if (ta[i].gamma && ta[i].gamma->values != tb[i].gamma->values) return false;
        if (ta[i].beta && ta[i].beta->values != tb[i].beta->values) return false;
        if (ta[i].running_mean != tb[i].running_mean) return false;
        if (ta[i].running_var != tb[i].running_var) return false;
    }
    for (int task : a.task_roster()) {
        if (a.head(task).weight->values != b.head(task).weight->values) return false;
        if (a.head(task).bias->values != b.head(task).bias->values) return false;
    }
    return true;
}

double accuracy_percent(MultiHeadNet& net, const TensorPtr& x, const std::vector<int>& labels,
                        int task) {
    TensorPtr logits = net.forward(x, task, ops::BnPhase::eval);
    const int c = logits->dim(0), s = logits->dim(1);
    int hits = 0;
    for (int j = 0; j < s; ++j) {
        int best = 0;
        double bv = logits->values[static_cast<size_t>(j)];
        for (int i = 1; i < c; ++i) {
            const double v = logits->values[static_cast<size_t>(i) * s + j];
            if (v > bv) {
                bv = v;
                best = i;
            }
        }
        if (best == labels[static_cast<size_t>(j)]) ++hits;
    }
    return 100.0 * hits / s;
}

double ce_loss(MultiHeadNet& net, const TensorPtr& x, const std::vector<int>& labels, int task) {
    TensorPtr logits = net.forward(x, task, ops::BnPhase::eval);
    TensorPtr loss = ops::softmax_cross_entropy(logits, labels, Reduction::mean, nullptr);
    return loss->values[0];
}

void save_checkpoint(const std::string& path, const MultiHeadNet& net, uint64_t config_hash,
                     uint64_t seed) {
    ByteWriter w;
    for (const char* p = kCheckpointMagic; *p; ++p) w.u8(static_cast<uint8_t>(*p));
    w.u32(kCheckpointVersion);
    w.u64(config_hash);
    w.u64(seed);
    net.to_bytes(w);
    write_file(path, w.bytes());
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    ByteReader r(bytes);
    r.expect_magic(kCheckpointMagic);
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), r.offset());
    Checkpoint ck;
    ck.config_hash = r.u64();
    ck.seed = r.u64();
    ck.net = MultiHeadNet::from_bytes(r);
    return ck;
}

}  // namespace s2mf
