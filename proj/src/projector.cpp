#include "s2mf/projector.hpp"

#include <algorithm>
#include <cmath>

#include "s2mf/kernels.hpp"

namespace s2mf {

namespace {
constexpr double kDegenerateSigma = 1e-12;
constexpr double kExactNullRel = 1e-10;
}  // namespace

std::string RankPolicy::describe() const {
    switch (kind) {
        case Kind::relative_threshold:
            return "relative_threshold(eps=" + std::to_string(epsilon) + ")";
        case Kind::cumulative_energy:
            return "cumulative_energy(rho=" + std::to_string(rho) + ")";
        case Kind::exact_null:
            return "exact_null";
    }
    return "?";
}

const LayerBasis* ProjectionBasis::find_layer(int trunk_index) const {
    for (const LayerBasis& lb : layers)
        if (lb.layer == trunk_index) return &lb;
    return nullptr;
}

CrossCorrAccumulator::CrossCorrAccumulator(ProjectorKind kind, const MultiHeadNet& net)
    : kind_(kind), layer_indices_(net.weight_layer_indices()) {
    mats_.reserve(layer_indices_.size());
    for (int li : layer_indices_) {
        const TrunkLayer& layer = net.trunk()[static_cast<size_t>(li)];
        const int c_in = layer.weight->dim(1);
        const int c_out = layer.weight->dim(0);
        mats_.emplace_back(kind == ProjectorKind::tpnsp ? std::vector<int>{c_in, c_out}
                                                        : std::vector<int>{c_in, c_in});
    }
}

void CrossCorrAccumulator::accumulate(const std::vector<LayerIO>& batch) {
    if (batch.size() != mats_.size())
        throw ShapeError("accumulate: expected " + std::to_string(mats_.size()) +
                         " layer i/o entries, got " + std::to_string(batch.size()));
    for (size_t i = 0; i < batch.size(); ++i) {
        const LayerIO& io = batch[i];
        if (io.layer != layer_indices_[i])
            throw ShapeError("accumulate: layer order mismatch at entry " + std::to_string(i));
        Tensor& m = mats_[i];
        const Tensor& x = io.input_cols;
        const Tensor& g = io.output_grad;
        if (x.dim(0) != m.dim(0))
            throw ShapeError("accumulate: input rows " + x.shape_str() +
                             " do not match accumulator " + m.shape_str());
        if (kind_ == ProjectorKind::tpnsp) {
            if (g.dim(0) != m.dim(1) || g.dim(1) != x.dim(1))
                throw ShapeError("accumulate: grad " + g.shape_str() + " does not match input " +
                                 x.shape_str());
            // M += X G^T
            kern::matmul_nt(x.data(), g.data(), m.data(), x.dim(0), x.dim(1), g.dim(0), true);
        } else {
            // M += X X^T
            kern::matmul_nt(x.data(), x.data(), m.data(), x.dim(0), x.dim(1), x.dim(0), true);
        }
        if (!all_finite(m)) throw NumericError("accumulate: non-finite accumulator");
    }
    ++batches_;
}

ProjectionBasis build_basis(const CrossCorrAccumulator& acc, const RankPolicy& policy) {
    if (acc.batches() == 0) throw ContractError("build_basis: no batches accumulated");
    ProjectionBasis basis;
    basis.kind = acc.kind();
    basis.policy = policy.describe();
    basis.layers.reserve(acc.num_layers());

    for (size_t i = 0; i < acc.num_layers(); ++i) {
        const Tensor& m = acc.layer_matrix(i);
        const int c_in = m.dim(0);
        LayerBasis lb;
        lb.layer = acc.layer_indices()[i];

        SvdResult dec = svd(m);
        const size_t mn = dec.singular_values.size();
        const double sigma_max = mn ? dec.singular_values[0] : 0.0;

        if (sigma_max < kDegenerateSigma) {
            // vanished gradient: no first-order stability constraint exists
            lb.u = Tensor({c_in, c_in});
            for (int r = 0; r < c_in; ++r) lb.u.at(r, r) = 1.0;
            lb.k = c_in;
            lb.retained_energy_ratio = 1.0;
            lb.identity_fallback = true;
            basis.layers.push_back(std::move(lb));
            continue;
        }

        // sigma padded with zeros for the c_in - mn left null directions
        std::vector<double> sigma(static_cast<size_t>(c_in), 0.0);
        std::copy(dec.singular_values.begin(), dec.singular_values.end(), sigma.begin());

        // descending order; cutoff = index of the first retained direction
        int cutoff = 0;
        switch (policy.kind) {
            case RankPolicy::Kind::relative_threshold: {
                const double thr = policy.epsilon * sigma_max;
                cutoff = c_in;
                for (int j = 0; j < c_in; ++j)
                    if (sigma[static_cast<size_t>(j)] <= thr) {
                        cutoff = j;
                        break;
                    }
                break;
            }
            case RankPolicy::Kind::cumulative_energy: {
                double total = 0.0;
                for (double s : sigma) total += s;
                double discarded = 0.0;
                cutoff = c_in;
                for (int j = 0; j < c_in; ++j) {
                    if (discarded >= policy.rho * total) {
                        cutoff = j;
                        break;
                    }
                    discarded += sigma[static_cast<size_t>(j)];
                }
                break;
            }
            case RankPolicy::Kind::exact_null: {
                const double thr = kExactNullRel * sigma_max;
                cutoff = c_in;
                for (int j = 0; j < c_in; ++j)
                    if (sigma[static_cast<size_t>(j)] <= thr) {
                        cutoff = j;
                        break;
                    }
                break;
            }
        }

        lb.k = c_in - cutoff;
        lb.u = Tensor({c_in, lb.k});
        for (int r = 0; r < c_in; ++r)
            for (int j = 0; j < lb.k; ++j) lb.u.at(r, j) = dec.left_vectors.at(r, cutoff + j);
        double total = 0.0, retained = 0.0;
        for (int j = 0; j < c_in; ++j) {
            total += sigma[static_cast<size_t>(j)];
            if (j >= cutoff) retained += sigma[static_cast<size_t>(j)];
        }
        lb.retained_energy_ratio = total > 0.0 ? retained / total : 1.0;
        basis.layers.push_back(std::move(lb));
    }
    return basis;
}

ProjectionBasis identity_basis(const MultiHeadNet& net) {
    ProjectionBasis basis;
    basis.kind = ProjectorKind::tpnsp;
    basis.policy = "identity";
    for (int li : net.weight_layer_indices()) {
        const TrunkLayer& layer = net.trunk()[static_cast<size_t>(li)];
        const int c_in = layer.weight->dim(1);
        LayerBasis lb;
        lb.layer = li;
        lb.k = c_in;
        lb.u = Tensor({c_in, c_in});
        for (int r = 0; r < c_in; ++r) lb.u.at(r, r) = 1.0;
        lb.retained_energy_ratio = 1.0;
        lb.identity_fallback = true;
        basis.layers.push_back(std::move(lb));
    }
    return basis;
}

Tensor project_layer_update(const Tensor& delta_w, const LayerBasis& basis) {
    const int c_out = delta_w.dim(0);
    const int c_in = delta_w.dim(1);
    if (basis.u.dim(0) != c_in)
        throw ShapeError("project_layer_update: delta " + delta_w.shape_str() +
                         " does not match basis rows " + std::to_string(basis.u.dim(0)));
    if (basis.k == 0) return Tensor({c_out, c_in});  // empty basis freezes the layer
    // (delta * U) * U^T
    Tensor du({c_out, basis.k});
    kern::matmul_nn(delta_w.data(), basis.u.data(), du.data(), c_out, c_in, basis.k, false);
    Tensor out({c_out, c_in});
    kern::matmul_nt(du.data(), basis.u.data(), out.data(), c_out, basis.k, c_in, false);
    return out;
}

void project_update(std::vector<std::pair<int, Tensor>>& deltas, const ProjectionBasis& basis) {
    for (auto& [layer, delta] : deltas) {
        const LayerBasis* lb = basis.find_layer(layer);
        if (!lb)
            throw ShapeError("project_update: no basis for trunk layer " + std::to_string(layer));
        delta = project_layer_update(delta, *lb);
    }
}

void save_basis(const std::string& path, const ProjectionBasis& basis, uint64_t config_hash,
                uint64_t seed) {
    ByteWriter w;
    for (const char* p = "S2MFBASI"; *p; ++p) w.u8(static_cast<uint8_t>(*p));
    w.u32(1);
    w.u64(config_hash);
    w.u64(seed);
    w.u8(basis.kind == ProjectorKind::tpnsp ? 0 : 1);
    w.str(basis.policy);
    w.u32(static_cast<uint32_t>(basis.layers.size()));
    for (const LayerBasis& lb : basis.layers) {
        w.i32(lb.layer);
        w.i32(lb.u.dim(0));
        w.i32(lb.k);
        w.f64(lb.retained_energy_ratio);
        w.u8(lb.identity_fallback ? 1 : 0);
        w.f64_vec(lb.u.values);
    }
    write_file(path, w.bytes());
}

ProjectionBasis load_basis(const std::string& path) {
    const auto bytes = read_file(path);
    ByteReader r(bytes);
    r.expect_magic("S2MFBASI");
    const uint32_t version = r.u32();
    if (version != 1)
        throw FormatError("unsupported basis version " + std::to_string(version), r.offset());
    r.u64();  // config hash
    r.u64();  // seed
    ProjectionBasis basis;
    basis.kind = r.u8() == 0 ? ProjectorKind::tpnsp : ProjectorKind::nsp;
    basis.policy = r.str();
    const uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        LayerBasis lb;
        lb.layer = r.i32();
        const int c_in = r.i32();
        lb.k = r.i32();
        lb.retained_energy_ratio = r.f64();
        lb.identity_fallback = r.u8() != 0;
        auto vals = r.f64_vec();
        if (vals.size() != static_cast<size_t>(c_in) * static_cast<size_t>(lb.k))
            throw FormatError("basis matrix size mismatch", r.offset());
        lb.u = Tensor({c_in, lb.k}, std::move(vals));
        basis.layers.push_back(std::move(lb));
    }
    return basis;
}

}  // namespace s2mf
