#include "s2mf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace s2mf {

AccMatrix::AccMatrix(int k) : k_(k) {
    if (k < 1) throw ContractError("AccMatrix: need at least one task");
    a_.assign(static_cast<size_t>(k) * k, 0.0);
    set_.assign(static_cast<size_t>(k) * k, false);
}

void AccMatrix::set(int after_task, int task, double acc_percent) {
    if (after_task < 0 || after_task >= k_ || task < 0 || task > after_task)
        throw ContractError("AccMatrix::set: entry (" + std::to_string(after_task) + "," +
                            std::to_string(task) + ") outside the lower triangle");
    if (acc_percent < 0.0 || acc_percent > 100.0)
        throw ContractError("AccMatrix::set: accuracy must be a percentage");
    a_[static_cast<size_t>(after_task) * k_ + task] = acc_percent;
    set_[static_cast<size_t>(after_task) * k_ + task] = true;
}

double AccMatrix::get(int after_task, int task) const {
    if (!is_set(after_task, task))
        throw ContractError("AccMatrix::get: entry (" + std::to_string(after_task) + "," +
                            std::to_string(task) + ") not filled");
    return a_[static_cast<size_t>(after_task) * k_ + task];
}

bool AccMatrix::is_set(int after_task, int task) const {
    if (after_task < 0 || after_task >= k_ || task < 0 || task >= k_) return false;
    return set_[static_cast<size_t>(after_task) * k_ + task];
}

bool AccMatrix::row_complete(int row) const {
    for (int t = 0; t <= row; ++t)
        if (!is_set(row, t)) return false;
    return true;
}

bool AccMatrix::diagonal_complete() const {
    for (int t = 0; t < k_; ++t)
        if (!is_set(t, t)) return false;
    return true;
}

double acc(const AccMatrix& m) {
    if (!m.row_complete(m.K() - 1)) throw ContractError("acc: final row incomplete");
    double total = 0.0;
    for (int t = 0; t < m.K(); ++t) total += m.get(m.K() - 1, t);
    return total / m.K();
}

double bwt(const AccMatrix& m) {
    if (m.K() < 2) throw ContractError("bwt: undefined for fewer than 2 tasks");
    if (!m.row_complete(m.K() - 1) || !m.diagonal_complete())
        throw ContractError("bwt: diagonal and final row must be complete");
    double total = 0.0;
    for (int t = 0; t < m.K() - 1; ++t) total += m.get(m.K() - 1, t) - m.get(t, t);
    return total / (m.K() - 1);
}

std::string AccMatrix::to_csv(uint64_t config_hash, uint64_t seed) const {
    std::ostringstream out;
    out << "# s2mf acc-matrix v1\n";
    char hash_buf[32];
    std::snprintf(hash_buf, sizeof hash_buf, "%016llx",
                  static_cast<unsigned long long>(config_hash));
    out << "# config_hash=" << hash_buf << " seed=" << seed << "\n";
    out << "after_task";
    for (int t = 0; t < k_; ++t) out << ",acc_task" << t;
    out << "\n";
    out.precision(17);
    for (int m = 0; m < k_; ++m) {
        out << m;
        for (int t = 0; t < k_; ++t) {
            out << ",";
            if (is_set(m, t)) out << a_[static_cast<size_t>(m) * k_ + t];
        }
        out << "\n";
    }
    return out.str();
}

AccMatrix AccMatrix::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    int k = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("after_task", 0) == 0) {
            k = static_cast<int>(std::count(line.begin(), line.end(), ','));
            continue;
        }
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        cells.resize(static_cast<size_t>(k) + 1);
        rows.push_back(std::move(cells));
    }
    if (k < 1) throw FormatError("acc-matrix csv: missing header", 0);
    AccMatrix m(k);
    for (const auto& cells : rows) {
        const int row = std::stoi(cells[0]);
        for (int t = 0; t <= row && t < k; ++t) {
            const std::string& v = cells[static_cast<size_t>(t) + 1];
            if (!v.empty()) m.set(row, t, std::stod(v));
        }
    }
    return m;
}

namespace {

std::vector<double> trunk_vector(const MultiHeadNet& net) {
    std::vector<double> v;
    for (const TrunkLayer& l : net.trunk()) {
        auto append = [&](const TensorPtr& t) {
            if (t) v.insert(v.end(), t->values.begin(), t->values.end());
        };
        append(l.weight);
        append(l.bias);
        append(l.gamma);
        append(l.beta);
    }
    return v;
}

void load_trunk_vector(MultiHeadNet& net, const std::vector<double>& v) {
    size_t pos = 0;
    for (TrunkLayer& l : net.trunk()) {
        auto take = [&](const TensorPtr& t) {
            if (!t) return;
            std::copy(v.begin() + static_cast<std::ptrdiff_t>(pos),
                      v.begin() + static_cast<std::ptrdiff_t>(pos + t->numel()),
                      t->values.begin());
            pos += t->numel();
        };
        take(l.weight);
        take(l.bias);
        take(l.gamma);
        take(l.beta);
    }
}

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        v[static_cast<size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    return v;
}

}  // namespace

LandscapeGrid landscape_slice(const MultiHeadNet& w_a, const MultiHeadNet& w_b,
                              const MultiHeadNet& w_c, const std::vector<EvalSet>& eval_sets,
                              const GridSpec& grid, char reference_anchor) {
    if (!same_architecture(w_a, w_b) || !same_architecture(w_a, w_c))
        throw ContractError("landscape_slice: anchors must share the architecture");
    if (grid.nx < 2 || grid.ny < 2) throw ContractError("landscape_slice: grid must be >= 2x2");

    const std::vector<double> va = trunk_vector(w_a);
    const std::vector<double> vb = trunk_vector(w_b);
    const std::vector<double> vc = trunk_vector(w_c);
    const size_t n = va.size();

    std::vector<double> e1(n), e2(n);
    for (size_t i = 0; i < n; ++i) e1[i] = vb[i] - va[i];
    double b_norm = 0.0;
    for (double x : e1) b_norm += x * x;
    b_norm = std::sqrt(b_norm);
    if (b_norm < 1e-12) throw ContractError("landscape_slice: w_b coincides with w_a");
    for (double& x : e1) x /= b_norm;

    double cx = 0.0;
    for (size_t i = 0; i < n; ++i) cx += (vc[i] - va[i]) * e1[i];
    for (size_t i = 0; i < n; ++i) e2[i] = vc[i] - va[i] - cx * e1[i];
    double cy = 0.0;
    for (double x : e2) cy += x * x;
    cy = std::sqrt(cy);
    const double scale = std::max(b_norm, std::abs(cx));
    if (cy < 1e-10 * std::max(1.0, scale))
        throw ContractError("landscape_slice: anchors are collinear, no plane is defined");
    for (double& x : e2) x /= cy;

    LandscapeGrid out;
    out.bx = b_norm;
    out.cx = cx;
    out.cy = cy;

    double x_lo = grid.x_lo, x_hi = grid.x_hi, y_lo = grid.y_lo, y_hi = grid.y_hi;
    if (!grid.has_extent()) {
        const double x_min = std::min({0.0, b_norm, cx});
        const double x_max = std::max({0.0, b_norm, cx});
        const double y_min = std::min(0.0, cy);
        const double y_max = std::max(0.0, cy);
        const double spread = std::max(x_max - x_min, y_max - y_min);
        x_lo = x_min - 0.25 * spread;
        x_hi = x_max + 0.25 * spread;
        y_lo = y_min - 0.25 * spread;
        y_hi = y_max + 0.25 * spread;
    }
    out.xs = linspace(x_lo, x_hi, grid.nx);
    out.ys = linspace(y_lo, y_hi, grid.ny);
    for (const EvalSet& s : eval_sets) out.tasks.push_back(s.task);

    const MultiHeadNet& ref = reference_anchor == 'a' ? w_a : (reference_anchor == 'b' ? w_b : w_c);
    MultiHeadNet probe = ref.clone();

    std::vector<double> point(n);
    for (double y : out.ys) {
        for (double x : out.xs) {
            for (size_t i = 0; i < n; ++i) point[i] = va[i] + x * e1[i] + y * e2[i];
            load_trunk_vector(probe, point);
            std::vector<double> row;
            row.reserve(eval_sets.size());
            for (const EvalSet& s : eval_sets) row.push_back(eval_loss(probe, s));
            out.losses.push_back(std::move(row));
        }
    }
    return out;
}

std::string LandscapeGrid::to_csv(uint64_t config_hash, uint64_t seed) const {
    std::ostringstream out;
    out << "# s2mf landscape v1\n";
    char hash_buf[32];
    std::snprintf(hash_buf, sizeof hash_buf, "%016llx",
                  static_cast<unsigned long long>(config_hash));
    out << "# config_hash=" << hash_buf << " seed=" << seed << "\n";
    out.precision(17);
    out << "# anchors: a=(0,0) b=(" << bx << ",0) c=(" << cx << "," << cy << ")\n";
    out << "x,y";
    for (int t : tasks) out << ",loss_task" << t;
    out << ",combined\n";
    size_t idx = 0;
    for (double y : ys) {
        for (double x : xs) {
            out << x << "," << y;
            double total = 0.0;
            for (double l : losses[idx]) {
                out << "," << l;
                total += l;
            }
            out << "," << total << "\n";
            ++idx;
        }
    }
    return out.str();
}

}  // namespace s2mf
