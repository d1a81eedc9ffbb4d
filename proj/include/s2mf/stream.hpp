#pragma once

#include <string>
#include <vector>

#include "s2mf/network.hpp"
#include "s2mf/trainer.hpp"

namespace s2mf {

// one task of a continual stream: disjoint global class ids, train/test
// splits with head-local labels 0..classes-1
struct TaskData {
    std::vector<int> class_ids;
    TaskSplit train;
    TaskSplit test;
};

struct TaskStream {
    std::vector<TaskData> tasks;
    InputSpec input;
    double range_lo = 0.0;  // data normalization range, the dream clamp bounds
    double range_hi = 1.0;
    std::string source;
    uint64_t seed = 0;

    int k_tasks() const { return static_cast<int>(tasks.size()); }
};

struct SyntheticSpec {
    int k_tasks = 5;
    int classes_per_task = 2;
    int dim = 16;
    int n_per_class = 200;
    int test_per_class = 50;
    // class means sit on a sphere of class_radius around a per-task center of
    // task_center_radius; the ratio controls inter-task overlap
    double class_radius = 4.0;
    double task_center_radius = 2.0;
    uint64_t seed = 0;
};

// Gaussian class clusters, unit covariance, deterministic under seed.
// Disjoint class ids across tasks by construction.
TaskStream make_synthetic_stream(const SyntheticSpec& spec);
TaskStream make_synthetic_stream(int k_tasks, int classes_per_task, int dim, int n_per_class,
                                 uint64_t seed);

struct IngestSpec {
    std::string format;  // "idx" | "cifar-binary"
    // idx: single image + label file per split; cifar: record files per split
    std::vector<std::string> train_images;
    std::string train_labels;
    std::vector<std::string> test_images;
    std::string test_labels;
    int classes_per_task = 2;
    int max_train_per_class = 0;  // 0 keeps everything
    int max_test_per_class = 0;
};

// class-partitioned stream from dataset files; pixel data normalized to
// [0,1]. Malformed files raise FormatError with the byte offset.
TaskStream ingest(const IngestSpec& spec);

void save_stream(const std::string& path, const TaskStream& stream);
TaskStream load_stream(const std::string& path);

}  // namespace s2mf
