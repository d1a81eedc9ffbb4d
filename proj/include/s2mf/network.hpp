#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s2mf/rng.hpp"
#include "s2mf/serialize.hpp"
#include "s2mf/tensor.hpp"

namespace s2mf {

enum class LayerKind { linear, conv2d, batchnorm, relu, flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int in_ch = 0;
    int out_ch = 0;  // batchnorm: in_ch == out_ch == channels
    int kernel = 0;
    int stride = 1;
    int pad = 0;

    static LayerSpec linear(int in, int out) { return {LayerKind::linear, in, out, 0, 1, 0}; }
    static LayerSpec conv2d(int in, int out, int k, int stride = 1, int pad = 0) {
        return {LayerKind::conv2d, in, out, k, stride, pad};
    }
    static LayerSpec batchnorm(int ch) { return {LayerKind::batchnorm, ch, ch, 0, 1, 0}; }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 1, 0}; }
    static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0, 1, 0}; }

    bool operator==(const LayerSpec&) const = default;
};

struct InputSpec {
    bool image = false;
    int dim = 0;           // vector input: features
    int c = 0, h = 0, w = 0;  // image input
    bool operator==(const InputSpec&) const = default;
};

// linear weight: [out, in]; conv weight: [out, in*k*k] in the unfolded space,
// so every projection step treats conv exactly like linear.
struct TrunkLayer {
    LayerSpec spec;
    TensorPtr weight;
    TensorPtr bias;
    TensorPtr gamma, beta;
    std::vector<double> running_mean, running_var;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    bool has_weight() const {
        return spec.kind == LayerKind::linear || spec.kind == LayerKind::conv2d;
    }
    bool is_batchnorm() const { return spec.kind == LayerKind::batchnorm; }
};

struct Head {
    int num_outputs = 0;
    TensorPtr weight;  // [num_outputs, trunk_out]
    TensorPtr bias;    // [num_outputs]
};

// Optional per-forward capture of the tensors the projector and the dreamer
// need: per weight-layer input columns X and pre-activation Z, and per
// batch-norm layer its input.
struct ForwardCapture {
    std::vector<std::pair<int, TensorPtr>> weight_layer_inputs;
    std::vector<std::pair<int, TensorPtr>> weight_layer_preacts;
    std::vector<std::pair<int, TensorPtr>> bn_inputs;
};

// Per-layer (X, dl/dZ) pair in the layer's matmul space; the operand of the
// cross-correlation accumulator.
struct LayerIO {
    int layer = 0;
    Tensor input_cols;   // [c_in(, unfolded) x s]
    Tensor output_grad;  // [c_out x s]
};

class MultiHeadNet {
public:
    MultiHeadNet() = default;
    MultiHeadNet(InputSpec input, std::vector<LayerSpec> trunk, uint64_t init_seed);

    // logits of head `task`. rec non-null makes the activations differentiable;
    // BnPhase::train uses batch statistics and updates the running stats.
    TensorPtr forward(const TensorPtr& x, int task, ops::BnPhase phase,
                      ComputationRecord* rec = nullptr, ForwardCapture* capture = nullptr);

    // trunk output features [trunk_out x s] without any head applied
    TensorPtr forward_trunk(const TensorPtr& x, ops::BnPhase phase, ComputationRecord* rec = nullptr,
                            ForwardCapture* capture = nullptr);

    void add_head(int task, int num_outputs);
    void add_head(int task, int num_outputs, uint64_t seed);
    bool has_head(int task) const { return heads_.count(task) > 0; }

    // X and dl/dZ for every weight layer under CE loss on (x, labels).
    // Sum reduction keeps columns batch-size independent, so accumulating
    // batch results equals a single pass over the concatenated batch.
    std::vector<LayerIO> capture_layer_io(const TensorPtr& x, const std::vector<int>& labels,
                                          int task, ops::BnPhase phase = ops::BnPhase::eval);

    std::vector<TrunkLayer>& trunk() { return trunk_; }
    const std::vector<TrunkLayer>& trunk() const { return trunk_; }
    std::map<int, Head>& heads() { return heads_; }
    const std::map<int, Head>& heads() const { return heads_; }
    Head& head(int task);
    const Head& head(int task) const;
    std::vector<int> task_roster() const;

    const InputSpec& input_spec() const { return input_; }
    int trunk_out_dim() const { return trunk_out_dim_; }
    uint64_t init_seed() const { return init_seed_; }

    // weight-layer indices in trunk order; the projector's layer list
    std::vector<int> weight_layer_indices() const;

    MultiHeadNet clone() const;

    void set_trunk_requires_grad(bool weights, bool biases, bool bn_affine);
    void set_head_requires_grad(int task, bool value);
    void set_all_requires_grad(bool value);
    void zero_all_grads();

    // every parameter tensor (trunk + heads), stable order
    std::vector<TensorPtr> all_params() const;

    void to_bytes(ByteWriter& w) const;
    static MultiHeadNet from_bytes(ByteReader& r);

    // hash of architecture + parameters + bn stats; checkpoint identity
    uint64_t param_hash() const;

private:
    void init_params();
    void validate_spec() const;

    InputSpec input_;
    std::vector<LayerSpec> specs_;
    std::vector<TrunkLayer> trunk_;
    std::map<int, Head> heads_;
    int trunk_out_dim_ = 0;
    uint64_t init_seed_ = 0;
};

bool same_architecture(const MultiHeadNet& a, const MultiHeadNet& b);
bool bitwise_equal_params(const MultiHeadNet& a, const MultiHeadNet& b);

// fraction of argmax(logits) == label, in percent
double accuracy_percent(MultiHeadNet& net, const TensorPtr& x, const std::vector<int>& labels,
                        int task);
double ce_loss(MultiHeadNet& net, const TensorPtr& x, const std::vector<int>& labels, int task);

// checkpoint container: magic, version, config hash, seed, net
inline constexpr const char* kCheckpointMagic = "S2MFCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    uint64_t config_hash = 0;
    uint64_t seed = 0;
    MultiHeadNet net;
};

void save_checkpoint(const std::string& path, const MultiHeadNet& net, uint64_t config_hash,
                     uint64_t seed);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace s2mf
