#pragma once

#include <string>
#include <vector>

#include "s2mf/fusion.hpp"
#include "s2mf/network.hpp"

namespace s2mf {

// K x K lower-triangular accuracy matrix (percent); entry (m, t) is task t's
// accuracy after finishing training task m, defined for t <= m.
class AccMatrix {
public:
    AccMatrix() = default;
    explicit AccMatrix(int k);

    int K() const { return k_; }
    void set(int after_task, int task, double acc_percent);
    double get(int after_task, int task) const;
    bool is_set(int after_task, int task) const;
    bool row_complete(int row) const;
    bool diagonal_complete() const;

    std::string to_csv(uint64_t config_hash, uint64_t seed) const;
    static AccMatrix from_csv(const std::string& text);

private:
    int k_ = 0;
    std::vector<double> a_;
    std::vector<bool> set_;
};

// mean of the final row (Eq.-style average accuracy)
double acc(const AccMatrix& m);

// mean of final-minus-just-learned accuracy over the first K-1 tasks;
// negative values measure forgetting
double bwt(const AccMatrix& m);

// 2-d plane slice through three parameter vectors: origin w_a, x axis along
// w_b - w_a, y axis along the component of w_c - w_a orthogonal to it, both
// axes normalized so plane coordinates are parameter-space lengths.
struct GridSpec {
    int nx = 11, ny = 11;
    // explicit extents; when all zero the grid covers the anchors with a
    // margin of 0.25 x the anchor spread on each side
    double x_lo = 0.0, x_hi = 0.0, y_lo = 0.0, y_hi = 0.0;
    bool has_extent() const { return x_lo != 0.0 || x_hi != 0.0 || y_lo != 0.0 || y_hi != 0.0; }
};

struct LandscapeGrid {
    std::vector<double> xs, ys;               // grid lines
    std::vector<int> tasks;
    // losses[iy * nx + ix][task]
    std::vector<std::vector<double>> losses;
    double bx = 0.0;        // w_b plane coordinates (bx, 0)
    double cx = 0.0, cy = 0.0;  // w_c plane coordinates
    std::string to_csv(uint64_t config_hash, uint64_t seed) const;
};

// Per-task losses over the plane grid. The trunk parameter vector (weights,
// biases, bn affine) spans the plane; heads and bn stats are taken from the
// reference anchor (default w_c, the most recently trained model, so every
// task head is meaningful). Collinear anchors are a contract error.
LandscapeGrid landscape_slice(const MultiHeadNet& w_a, const MultiHeadNet& w_b,
                              const MultiHeadNet& w_c, const std::vector<EvalSet>& eval_sets,
                              const GridSpec& grid, char reference_anchor = 'c');

}  // namespace s2mf
