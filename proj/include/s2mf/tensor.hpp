#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "s2mf/errors.hpp"

namespace s2mf {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense 64-bit float tensor with an optional same-shape gradient buffer.
// Immutable-after-forward by convention; grad accumulation is the only
// mutation the backward pass performs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t numel() const { return values.size(); }
    bool is_scalar() const { return values.size() == 1; }

    // 2-d accessors; 1-d tensors count as single-column matrices
    int rows() const { return shape_.empty() ? 0 : shape_[0]; }
    int cols() const { return shape_.size() >= 2 ? shape_[1] : 1; }

    double* data() { return values.data(); }
    const double* data() const { return values.data(); }
    double& at(int r, int c) { return values[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return values[static_cast<size_t>(r) * cols() + c]; }

    bool has_grad() const { return !grad_values.empty(); }
    void ensure_grad();
    void zero_grad() { grad_values.assign(grad_values.size(), 0.0); }
    void drop_grad() { grad_values.clear(); }
    double* grad() { return grad_values.data(); }
    const double* grad() const { return grad_values.data(); }

    std::string shape_str() const;

    std::vector<double> values;
    std::vector<double> grad_values;  // empty = absent
    bool requires_grad = false;

private:
    std::vector<int> shape_;
};

TensorPtr make_tensor(std::vector<int> shape);
TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data);
TensorPtr make_leaf(std::vector<int> shape, bool requires_grad = true);
TensorPtr clone_tensor(const TensorPtr& t);  // values only, no grad

// One recorded primitive. `backward` reads output->grad and accumulates into
// the inputs' grads; it must not touch values.
struct TapeOp {
    const char* name;
    std::vector<TensorPtr> inputs;
    TensorPtr output;
    std::function<void()> backward;
};

// Replayable forward trace. Ops are appended in execution order, which is a
// topological order of the data flow; backward() walks it in reverse.
class ComputationRecord {
public:
    void record(const char* name, std::vector<TensorPtr> inputs, TensorPtr output,
                std::function<void()> backward);

    // Seeds loss->grad with 1 and accumulates d(loss)/d(tensor) into every
    // participating tensor. Grads add across multiple uses.
    void backward(const TensorPtr& loss);

    size_t size() const { return ops_.size(); }
    const TapeOp& op(size_t i) const { return ops_[i]; }
    void clear() { ops_.clear(); }

private:
    std::vector<TapeOp> ops_;
};

enum class Reduction { mean, sum };

namespace ops {

// All ops compute eagerly; when `rec` is non-null and some input requires
// grad, a backward closure is recorded and the output requires grad too.
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, ComputationRecord* rec);
TensorPtr add(const TensorPtr& a, const TensorPtr& b, ComputationRecord* rec);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b, ComputationRecord* rec);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b, ComputationRecord* rec);
TensorPtr scale(const TensorPtr& x, double alpha, ComputationRecord* rec);
TensorPtr relu(const TensorPtr& x, ComputationRecord* rec);
TensorPtr sum(const TensorPtr& x, ComputationRecord* rec);
// x[c x s] + b[c] broadcast across columns
TensorPtr add_bias_cols(const TensorPtr& x, const TensorPtr& b, ComputationRecord* rec);
// mean over columns per row: [c x s] -> [c]
TensorPtr rows_mean(const TensorPtr& x, ComputationRecord* rec);
TensorPtr sigmoid(const TensorPtr& x, ComputationRecord* rec);
TensorPtr one_minus(const TensorPtr& x, ComputationRecord* rec);
// scale row r of x by a[r]; a may be [rows], [1] (broadcast) or x-shaped
TensorPtr row_scale(const TensorPtr& x, const TensorPtr& a, ComputationRecord* rec);

TensorPtr softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels,
                                Reduction reduction, ComputationRecord* rec);
// KL(softmax(teacher) || softmax(student)) averaged/summed over columns.
// teacher is treated as data: no gradient flows into it.
TensorPtr kl_div_from_logits(const TensorPtr& student_logits, const TensorPtr& teacher_logits,
                             Reduction reduction, ComputationRecord* rec);

enum class BnPhase { train, eval };

// Per-row batch norm over columns of x[c x s]. train: batch statistics are
// used and running stats updated in place (EMA, momentum); eval: stored
// running stats are used and nothing is updated.
TensorPtr batch_norm_cols(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                          std::vector<double>& running_mean, std::vector<double>& running_var,
                          BnPhase phase, double momentum, double eps, ComputationRecord* rec);

// conv plumbing: unfold [n,c,h,w] into patch columns [c*kh*kw, n*oh*ow]
TensorPtr im2col(const TensorPtr& img, int kh, int kw, int stride, int pad, ComputationRecord* rec);
// [c, n*oh*ow] -> [n, c, oh, ow]; pure permutation
TensorPtr cols_to_image(const TensorPtr& cols, int n, int oh, int ow, ComputationRecord* rec);
// [n,c,h,w] -> [c*h*w, n]; pure permutation (flatten layer)
TensorPtr image_to_feature_cols(const TensorPtr& img, ComputationRecord* rec);

}  // namespace ops

bool all_finite(const Tensor& t);

}  // namespace s2mf
