#include "s2mf/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "s2mf/kernels.hpp"

namespace s2mf {

namespace {

size_t shape_product(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape");
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_to_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool any_requires_grad(std::initializer_list<const TensorPtr*> ins) {
    for (const TensorPtr* t : ins)
        if ((*t)->requires_grad) return true;
    return false;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    values.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)) {
    if (data.size() != shape_product(shape_))
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_str(shape_));
    values = std::move(data);
}

void Tensor::ensure_grad() {
    if (grad_values.size() != values.size()) grad_values.assign(values.size(), 0.0);
}

std::string Tensor::shape_str() const { return shape_to_str(shape_); }

TensorPtr make_tensor(std::vector<int> shape) { return std::make_shared<Tensor>(std::move(shape)); }

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

TensorPtr make_leaf(std::vector<int> shape, bool requires_grad) {
    auto t = make_tensor(std::move(shape));
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr clone_tensor(const TensorPtr& t) {
    auto out = make_tensor(t->shape(), t->values);
    out->requires_grad = t->requires_grad;
    return out;
}

void ComputationRecord::record(const char* name, std::vector<TensorPtr> inputs, TensorPtr output,
                               std::function<void()> backward) {
    ops_.push_back(TapeOp{name, std::move(inputs), std::move(output), std::move(backward)});
}

void ComputationRecord::backward(const TensorPtr& loss) {
    if (!loss->is_scalar())
        throw ContractError("backward: loss must be scalar, got shape " + loss->shape_str());
    bool reachable = false;
    for (const TapeOp& op : ops_)
        if (op.output == loss) {
            reachable = true;
            break;
        }
    if (!reachable) throw ContractError("backward: loss tensor was not produced by this record");
    loss->ensure_grad();
    loss->grad_values[0] += 1.0;
    for (size_t i = ops_.size(); i-- > 0;) {
        const TapeOp& op = ops_[i];
        if (!op.output->has_grad()) continue;  // branch not on any path to the loss
        op.backward();
    }
}

bool all_finite(const Tensor& t) {
    for (double v : t.values)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace ops {

namespace {

// Record helper: marks the output differentiable and stores the closure.
void maybe_record(ComputationRecord* rec, const char* name, std::vector<TensorPtr> inputs,
                  const TensorPtr& out, std::function<void()> bwd) {
    bool wants = false;
    if (rec)
        for (const TensorPtr& t : inputs)
            if (t->requires_grad) {
                wants = true;
                break;
            }
    if (!wants) return;
    out->requires_grad = true;
    rec->record(name, std::move(inputs), out, std::move(bwd));
}

void require_2d(const TensorPtr& t, const char* who) {
    if (t->ndim() != 2) throw ShapeError(std::string(who) + ": expected 2-d tensor, got " + t->shape_str());
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* who) {
    if (a->shape() != b->shape())
        throw ShapeError(std::string(who) + ": shape mismatch " + a->shape_str() + " vs " + b->shape_str());
}

}  // namespace

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, ComputationRecord* rec) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a->dim(1) != b->dim(0))
        throw ShapeError("matmul: inner dimensions do not match: " + a->shape_str() + " vs " +
                         b->shape_str());
    const int m = a->dim(0), k = a->dim(1), n = b->dim(1);
    auto out = make_tensor({m, n});
    kern::matmul_nn(a->data(), b->data(), out->data(), m, k, n, false);
    maybe_record(rec, "matmul", {a, b}, out, [a, b, out, m, k, n]() {
        if (a->requires_grad) {
            a->ensure_grad();
            kern::matmul_nt(out->grad(), b->data(), a->grad(), m, n, k, true);  // dA += dC * B^T
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kern::matmul_tn(a->data(), out->grad(), b->grad(), k, m, n, true);  // dB += A^T * dC
        }
    });
    return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b, ComputationRecord* rec) {
    check_same_shape(a, b, "add");
    auto out = make_tensor(a->shape());
    kern::add(a->data(), b->data(), out->data(), out->numel());
    maybe_record(rec, "add", {a, b}, out, [a, b, out]() {
        if (a->requires_grad) {
            a->ensure_grad();
            kern::axpy(1.0, out->grad(), a->grad(), out->numel());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kern::axpy(1.0, out->grad(), b->grad(), out->numel());
        }
    });
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b, ComputationRecord* rec) {
    check_same_shape(a, b, "sub");
    auto out = make_tensor(a->shape());
    kern::sub(a->data(), b->data(), out->data(), out->numel());
    maybe_record(rec, "sub", {a, b}, out, [a, b, out]() {
        if (a->requires_grad) {
            a->ensure_grad();
            kern::axpy(1.0, out->grad(), a->grad(), out->numel());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kern::axpy(-1.0, out->grad(), b->grad(), out->numel());
        }
    });
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b, ComputationRecord* rec) {
    check_same_shape(a, b, "mul");
    auto out = make_tensor(a->shape());
    kern::mul(a->data(), b->data(), out->data(), out->numel());
    maybe_record(rec, "mul", {a, b}, out, [a, b, out]() {
        const size_t n = out->numel();
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n; ++i) a->grad()[i] += out->grad()[i] * b->values[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < n; ++i) b->grad()[i] += out->grad()[i] * a->values[i];
        }
    });
    return out;
}

TensorPtr scale(const TensorPtr& x, double alpha, ComputationRecord* rec) {
    auto out = make_tensor(x->shape());
    kern::scale(x->data(), alpha, out->data(), out->numel());
    maybe_record(rec, "scale", {x}, out, [x, out, alpha]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        kern::axpy(alpha, out->grad(), x->grad(), out->numel());
    });
    return out;
}

TensorPtr relu(const TensorPtr& x, ComputationRecord* rec) {
    auto out = make_tensor(x->shape());
    kern::relu_fwd(x->data(), out->data(), out->numel());
    maybe_record(rec, "relu", {x}, out, [x, out]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        kern::relu_bwd(x->data(), out->grad(), x->grad(), out->numel());
    });
    return out;
}

TensorPtr sum(const TensorPtr& x, ComputationRecord* rec) {
    auto out = make_tensor({1});
    out->values[0] = kern::sum(x->data(), x->numel());
    maybe_record(rec, "sum", {x}, out, [x, out]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const double g = out->grad()[0];
        for (size_t i = 0; i < x->numel(); ++i) x->grad()[i] += g;
    });
    return out;
}

TensorPtr add_bias_cols(const TensorPtr& x, const TensorPtr& b, ComputationRecord* rec) {
    require_2d(x, "add_bias_cols");
    if (b->numel() != static_cast<size_t>(x->dim(0)))
        throw ShapeError("add_bias_cols: bias " + b->shape_str() + " does not match rows of " +
                         x->shape_str());
    const int c = x->dim(0), s = x->dim(1);
    auto out = make_tensor(x->shape());
    for (int i = 0; i < c; ++i) {
        const double bi = b->values[static_cast<size_t>(i)];
        const double* xr = x->data() + static_cast<size_t>(i) * s;
        double* orow = out->data() + static_cast<size_t>(i) * s;
        for (int j = 0; j < s; ++j) orow[j] = xr[j] + bi;
    }
    maybe_record(rec, "add_bias_cols", {x, b}, out, [x, b, out, c, s]() {
        if (x->requires_grad) {
            x->ensure_grad();
            kern::axpy(1.0, out->grad(), x->grad(), out->numel());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            std::vector<double> rs(static_cast<size_t>(c));
            kern::row_sum(out->grad(), c, s, rs.data());
            for (int i = 0; i < c; ++i) b->grad()[static_cast<size_t>(i)] += rs[static_cast<size_t>(i)];
        }
    });
    return out;
}

TensorPtr rows_mean(const TensorPtr& x, ComputationRecord* rec) {
    require_2d(x, "rows_mean");
    const int c = x->dim(0), s = x->dim(1);
    auto out = make_tensor({c});
    kern::row_sum(x->data(), c, s, out->data());
    for (int i = 0; i < c; ++i) out->values[static_cast<size_t>(i)] /= s;
    maybe_record(rec, "rows_mean", {x}, out, [x, out, c, s]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < c; ++i) {
            const double g = out->grad()[static_cast<size_t>(i)] / s;
            double* gr = x->grad() + static_cast<size_t>(i) * s;
            for (int j = 0; j < s; ++j) gr[j] += g;
        }
    });
    return out;
}

TensorPtr sigmoid(const TensorPtr& x, ComputationRecord* rec) {
    auto out = make_tensor(x->shape());
    for (size_t i = 0; i < x->numel(); ++i) {
        const double v = x->values[i];
        if (v >= 0.0) {
            out->values[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out->values[i] = e / (1.0 + e);
        }
    }
    maybe_record(rec, "sigmoid", {x}, out, [x, out]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->numel(); ++i) {
            const double y = out->values[i];
            x->grad()[i] += out->grad()[i] * y * (1.0 - y);
        }
    });
    return out;
}

TensorPtr one_minus(const TensorPtr& x, ComputationRecord* rec) {
    auto out = make_tensor(x->shape());
    for (size_t i = 0; i < x->numel(); ++i) out->values[i] = 1.0 - x->values[i];
    maybe_record(rec, "one_minus", {x}, out, [x, out]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        kern::axpy(-1.0, out->grad(), x->grad(), out->numel());
    });
    return out;
}

TensorPtr row_scale(const TensorPtr& x, const TensorPtr& a, ComputationRecord* rec) {
    const int r = x->rows(), c = x->cols();
    enum class Mode { per_row, scalar, elementwise } mode;
    if (a->numel() == static_cast<size_t>(r) && a->numel() != x->numel())
        mode = Mode::per_row;
    else if (a->numel() == 1)
        mode = Mode::scalar;
    else if (a->numel() == x->numel())
        mode = Mode::elementwise;
    else if (a->numel() == static_cast<size_t>(r))
        mode = Mode::per_row;
    else
        throw ShapeError("row_scale: scale " + a->shape_str() + " incompatible with " + x->shape_str());

    auto out = make_tensor(x->shape());
    switch (mode) {
        case Mode::per_row:
            for (int i = 0; i < r; ++i) {
                const double ai = a->values[static_cast<size_t>(i)];
                const double* xr = x->data() + static_cast<size_t>(i) * c;
                double* orow = out->data() + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) orow[j] = ai * xr[j];
            }
            break;
        case Mode::scalar:
            kern::scale(x->data(), a->values[0], out->data(), out->numel());
            break;
        case Mode::elementwise:
            kern::mul(x->data(), a->data(), out->data(), out->numel());
            break;
    }
    maybe_record(rec, "row_scale", {x, a}, out, [x, a, out, r, c, mode]() {
        if (x->requires_grad) {
            x->ensure_grad();
            switch (mode) {
                case Mode::per_row:
                    for (int i = 0; i < r; ++i) {
                        const double ai = a->values[static_cast<size_t>(i)];
                        const double* og = out->grad() + static_cast<size_t>(i) * c;
                        double* xg = x->grad() + static_cast<size_t>(i) * c;
                        for (int j = 0; j < c; ++j) xg[j] += ai * og[j];
                    }
                    break;
                case Mode::scalar:
                    kern::axpy(a->values[0], out->grad(), x->grad(), out->numel());
                    break;
                case Mode::elementwise:
                    for (size_t i = 0; i < out->numel(); ++i)
                        x->grad()[i] += out->grad()[i] * a->values[i];
                    break;
            }
        }
        if (a->requires_grad) {
            a->ensure_grad();
            switch (mode) {
                case Mode::per_row: {
                    std::vector<double> rs(static_cast<size_t>(r));
                    kern::row_sum_prod(out->grad(), x->data(), r, c, rs.data());
                    for (int i = 0; i < r; ++i) a->grad()[static_cast<size_t>(i)] += rs[static_cast<size_t>(i)];
                    break;
                }
                case Mode::scalar: {
                    double acc = 0.0;
                    for (size_t i = 0; i < out->numel(); ++i) acc += out->grad()[i] * x->values[i];
                    a->grad()[0] += acc;
                    break;
                }
                case Mode::elementwise:
                    for (size_t i = 0; i < out->numel(); ++i)
                        a->grad()[i] += out->grad()[i] * x->values[i];
                    break;
            }
        }
    });
    return out;
}

TensorPtr softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels,
                                Reduction reduction, ComputationRecord* rec) {
    require_2d(logits, "softmax_cross_entropy");
    const int c = logits->dim(0), s = logits->dim(1);
    if (static_cast<int>(labels.size()) != s)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(s) + " columns");
    for (int j = 0; j < s; ++j)
        if (labels[static_cast<size_t>(j)] < 0 || labels[static_cast<size_t>(j)] >= c)
            throw ContractError("softmax_cross_entropy: label out of range at column " +
                                std::to_string(j));

    auto probs = std::make_shared<std::vector<double>>(logits->numel());
    kern::col_softmax(logits->data(), probs->data(), c, s);
    const double norm = reduction == Reduction::mean ? 1.0 / s : 1.0;

    double total = 0.0;
    for (int j = 0; j < s; ++j) {
        double mx = logits->values[static_cast<size_t>(j)];
        for (int i = 1; i < c; ++i)
            mx = std::max(mx, logits->values[static_cast<size_t>(i) * s + j]);
        double denom = 0.0;
        for (int i = 0; i < c; ++i)
            denom += std::exp(logits->values[static_cast<size_t>(i) * s + j] - mx);
        const int y = labels[static_cast<size_t>(j)];
        total += mx + std::log(denom) - logits->values[static_cast<size_t>(y) * s + j];
    }
    auto out = make_tensor({1});
    out->values[0] = total * norm;

    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    maybe_record(rec, "softmax_cross_entropy", {logits}, out,
                 [logits, out, probs, labels_copy, c, s, norm]() {
                     if (!logits->requires_grad) return;
                     logits->ensure_grad();
                     const double g = out->grad()[0] * norm;
                     for (int j = 0; j < s; ++j) {
                         const int y = (*labels_copy)[static_cast<size_t>(j)];
                         for (int i = 0; i < c; ++i) {
                             double d = (*probs)[static_cast<size_t>(i) * s + j];
                             if (i == y) d -= 1.0;
                             logits->grad()[static_cast<size_t>(i) * s + j] += g * d;
                         }
                     }
                 });
    return out;
}

TensorPtr kl_div_from_logits(const TensorPtr& student_logits, const TensorPtr& teacher_logits,
                             Reduction reduction, ComputationRecord* rec) {
    check_same_shape(student_logits, teacher_logits, "kl_div_from_logits");
    require_2d(student_logits, "kl_div_from_logits");
    const int c = student_logits->dim(0), s = student_logits->dim(1);
    const double norm = reduction == Reduction::mean ? 1.0 / s : 1.0;

    auto ps = std::make_shared<std::vector<double>>(student_logits->numel());
    auto pt = std::make_shared<std::vector<double>>(teacher_logits->numel());
    kern::col_softmax(student_logits->data(), ps->data(), c, s);
    kern::col_softmax(teacher_logits->data(), pt->data(), c, s);

    // KL(p_t || p_s) per column via log-sum-exp stable log-probabilities
    double total = 0.0;
    for (int j = 0; j < s; ++j) {
        double mxs = student_logits->values[static_cast<size_t>(j)];
        double mxt = teacher_logits->values[static_cast<size_t>(j)];
        for (int i = 1; i < c; ++i) {
            mxs = std::max(mxs, student_logits->values[static_cast<size_t>(i) * s + j]);
            mxt = std::max(mxt, teacher_logits->values[static_cast<size_t>(i) * s + j]);
        }
        double dens = 0.0, dent = 0.0;
        for (int i = 0; i < c; ++i) {
            dens += std::exp(student_logits->values[static_cast<size_t>(i) * s + j] - mxs);
            dent += std::exp(teacher_logits->values[static_cast<size_t>(i) * s + j] - mxt);
        }
        const double lses = mxs + std::log(dens);
        const double lset = mxt + std::log(dent);
        for (int i = 0; i < c; ++i) {
            const double ptv = (*pt)[static_cast<size_t>(i) * s + j];
            if (ptv <= 0.0) continue;
            const double logpt = teacher_logits->values[static_cast<size_t>(i) * s + j] - lset;
            const double logps = student_logits->values[static_cast<size_t>(i) * s + j] - lses;
            total += ptv * (logpt - logps);
        }
    }
    auto out = make_tensor({1});
    out->values[0] = total * norm;

    // teacher logits are stored data; gradient flows only into the student
    maybe_record(rec, "kl_div_from_logits", {student_logits}, out,
                 [student_logits, out, ps, pt, norm]() {
                     if (!student_logits->requires_grad) return;
                     student_logits->ensure_grad();
                     const double g = out->grad()[0] * norm;
                     for (size_t i = 0; i < student_logits->numel(); ++i)
                         student_logits->grad()[i] += g * ((*ps)[i] - (*pt)[i]);
                 });
    return out;
}

TensorPtr batch_norm_cols(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                          std::vector<double>& running_mean, std::vector<double>& running_var,
                          BnPhase phase, double momentum, double eps, ComputationRecord* rec) {
    require_2d(x, "batch_norm_cols");
    const int c = x->dim(0), s = x->dim(1);
    if (gamma->numel() != static_cast<size_t>(c) || beta->numel() != static_cast<size_t>(c))
        throw ShapeError("batch_norm_cols: affine parameters do not match channel count");
    if (running_mean.size() != static_cast<size_t>(c) || running_var.size() != static_cast<size_t>(c))
        throw ContractError("batch_norm_cols: running stats missing or mis-sized");

    auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
    auto xhat = std::make_shared<std::vector<double>>(x->numel());

    if (phase == BnPhase::train) {
        std::vector<double> var(static_cast<size_t>(c));
        kern::row_mean_var(x->data(), c, s, mean->data(), var.data());
        for (int i = 0; i < c; ++i) {
            (*inv_std)[static_cast<size_t>(i)] = 1.0 / std::sqrt(var[static_cast<size_t>(i)] + eps);
            running_mean[static_cast<size_t>(i)] =
                (1.0 - momentum) * running_mean[static_cast<size_t>(i)] +
                momentum * (*mean)[static_cast<size_t>(i)];
            running_var[static_cast<size_t>(i)] =
                (1.0 - momentum) * running_var[static_cast<size_t>(i)] +
                momentum * var[static_cast<size_t>(i)];
        }
    } else {
        for (int i = 0; i < c; ++i) {
            (*mean)[static_cast<size_t>(i)] = running_mean[static_cast<size_t>(i)];
            (*inv_std)[static_cast<size_t>(i)] =
                1.0 / std::sqrt(running_var[static_cast<size_t>(i)] + eps);
        }
    }

    auto out = make_tensor(x->shape());
    for (int i = 0; i < c; ++i) {
        const double m = (*mean)[static_cast<size_t>(i)];
        const double is = (*inv_std)[static_cast<size_t>(i)];
        const double g = gamma->values[static_cast<size_t>(i)];
        const double b = beta->values[static_cast<size_t>(i)];
        const double* xr = x->data() + static_cast<size_t>(i) * s;
        double* xh = xhat->data() + static_cast<size_t>(i) * s;
        double* orow = out->data() + static_cast<size_t>(i) * s;
        for (int j = 0; j < s; ++j) {
            xh[j] = (xr[j] - m) * is;
            orow[j] = g * xh[j] + b;
        }
    }

    const bool train = phase == BnPhase::train;
    maybe_record(rec, "batch_norm_cols", {x, gamma, beta}, out,
                 [x, gamma, beta, out, xhat, inv_std, c, s, train]() {
                     std::vector<double> sum_dy(static_cast<size_t>(c));
                     std::vector<double> sum_dy_xhat(static_cast<size_t>(c));
                     kern::row_sum(out->grad(), c, s, sum_dy.data());
                     kern::row_sum_prod(out->grad(), xhat->data(), c, s, sum_dy_xhat.data());
                     if (gamma->requires_grad) {
                         gamma->ensure_grad();
                         for (int i = 0; i < c; ++i)
                             gamma->grad()[static_cast<size_t>(i)] += sum_dy_xhat[static_cast<size_t>(i)];
                     }
                     if (beta->requires_grad) {
                         beta->ensure_grad();
                         for (int i = 0; i < c; ++i)
                             beta->grad()[static_cast<size_t>(i)] += sum_dy[static_cast<size_t>(i)];
                     }
                     if (!x->requires_grad) return;
                     x->ensure_grad();
                     for (int i = 0; i < c; ++i) {
                         const double g = gamma->values[static_cast<size_t>(i)];
                         const double is = (*inv_std)[static_cast<size_t>(i)];
                         const double* og = out->grad() + static_cast<size_t>(i) * s;
                         const double* xh = xhat->data() + static_cast<size_t>(i) * s;
                         double* xg = x->grad() + static_cast<size_t>(i) * s;
                         if (train) {
                             const double mdy = sum_dy[static_cast<size_t>(i)] / s;
                             const double mdyx = sum_dy_xhat[static_cast<size_t>(i)] / s;
                             for (int j = 0; j < s; ++j)
                                 xg[j] += g * is * (og[j] - mdy - xh[j] * mdyx);
                         } else {
                             for (int j = 0; j < s; ++j) xg[j] += g * is * og[j];
                         }
                     }
                 });
    return out;
}

TensorPtr im2col(const TensorPtr& img, int kh, int kw, int stride, int pad, ComputationRecord* rec) {
    if (img->ndim() != 4) throw ShapeError("im2col: expected [n,c,h,w], got " + img->shape_str());
    const int n = img->dim(0), c = img->dim(1), h = img->dim(2), w = img->dim(3);
    const int oh = kern::conv_out_dim(h, kh, stride, pad);
    const int ow = kern::conv_out_dim(w, kw, stride, pad);
    if (oh <= 0 || ow <= 0)
        throw ShapeError("im2col: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " does not fit input " + img->shape_str());
    auto out = make_tensor({c * kh * kw, n * oh * ow});
    kern::im2col(img->data(), n, c, h, w, kh, kw, stride, pad, out->data());
    maybe_record(rec, "im2col", {img}, out, [img, out, n, c, h, w, kh, kw, stride, pad]() {
        if (!img->requires_grad) return;
        img->ensure_grad();
        kern::col2im_acc(out->grad(), n, c, h, w, kh, kw, stride, pad, img->grad());
    });
    return out;
}

TensorPtr cols_to_image(const TensorPtr& cols, int n, int oh, int ow, ComputationRecord* rec) {
    require_2d(cols, "cols_to_image");
    const int c = cols->dim(0);
    if (cols->dim(1) != n * oh * ow)
        throw ShapeError("cols_to_image: " + cols->shape_str() + " does not match n*oh*ow = " +
                         std::to_string(n * oh * ow));
    auto out = make_tensor({n, c, oh, ow});
    const size_t scols = static_cast<size_t>(n) * oh * ow;
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < c; ++i) {
            const double* src = cols->data() + static_cast<size_t>(i) * scols +
                                static_cast<size_t>(b) * oh * ow;
            double* dst = out->data() + (static_cast<size_t>(b) * c + i) * oh * ow;
            std::copy(src, src + static_cast<size_t>(oh) * ow, dst);
        }
    maybe_record(rec, "cols_to_image", {cols}, out, [cols, out, n, c, oh, ow]() {
        if (!cols->requires_grad) return;
        cols->ensure_grad();
        const size_t scols = static_cast<size_t>(n) * oh * ow;
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < c; ++i) {
                const double* src = out->grad() + (static_cast<size_t>(b) * c + i) * oh * ow;
                double* dst = cols->grad() + static_cast<size_t>(i) * scols +
                              static_cast<size_t>(b) * oh * ow;
                for (size_t p = 0; p < static_cast<size_t>(oh) * ow; ++p) dst[p] += src[p];
            }
    });
    return out;
}

TensorPtr image_to_feature_cols(const TensorPtr& img, ComputationRecord* rec) {
    if (img->ndim() != 4)
        throw ShapeError("image_to_feature_cols: expected [n,c,h,w], got " + img->shape_str());
    const int n = img->dim(0), c = img->dim(1), h = img->dim(2), w = img->dim(3);
    const int f = c * h * w;
    auto out = make_tensor({f, n});
    for (int b = 0; b < n; ++b) {
        const double* src = img->data() + static_cast<size_t>(b) * f;
        for (int i = 0; i < f; ++i) out->values[static_cast<size_t>(i) * n + b] = src[i];
    }
    maybe_record(rec, "image_to_feature_cols", {img}, out, [img, out, n, f]() {
        if (!img->requires_grad) return;
        img->ensure_grad();
        for (int b = 0; b < n; ++b) {
            double* dst = img->grad() + static_cast<size_t>(b) * f;
            for (int i = 0; i < f; ++i) dst[i] += out->grad()[static_cast<size_t>(i) * n + b];
        }
    });
    return out;
}

}  // namespace ops

}  // namespace s2mf
