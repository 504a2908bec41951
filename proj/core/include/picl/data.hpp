#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "picl/rng.hpp"
#include "picl/tensor.hpp"

namespace picl {

// One in-context episode: grayscale target, binary mask, N_c context pairs.
struct TaskInstance {
    Tensor target_image;  // [R,R] in [0,1]
    Tensor target_mask;   // [R,R] binary
    std::vector<std::pair<Tensor, Tensor>> context;  // (image, label)
    int class_id = 0;
    int case_id = 0;
    int episode_id = 0;
};

const std::vector<std::string>& shape_class_names();  // disk,rectangle,triangle,ring,cross,ellipse
int shape_class_id(const std::string& name);

struct DatasetManifest {
    uint64_t seed = 0;
    int resolution = 64;
    int n_context = 3;
    double noise_sigma = 0.05;
    std::vector<std::string> train_classes = {"disk", "rectangle", "triangle", "ring"};
    std::vector<std::string> heldout_classes = {"cross", "ellipse"};
    int episodes_train = 512;
    int episodes_heldout = 128;
};

// True iff the mask has at least 30 foreground pixels.
bool coverage_filter(const std::vector<double>& mask);

struct PoolEntry {
    Tensor image;
    Tensor mask;
    int class_id = 0;
    int case_id = 0;
    int instance_id = 0;
};

// Renders one scene: a shape of the given class on a textured background with
// distractor shapes, sharing intensity statistics across a case id. Retries
// geometry until the coverage filter passes (at most 100 attempts).
PoolEntry render_instance(int class_id, int case_id, int instance_id, int resolution, double noise_sigma,
                          const std::vector<int>& distractor_classes, uint64_t seed);

// Same-case entries first, then same-class other-case, randomized within each
// tier; throws if fewer than n_context same-class entries exist.
std::vector<std::pair<Tensor, Tensor>> select_context(const std::vector<PoolEntry>& pool, int target_class,
                                                      int target_case, int target_instance, int n_context,
                                                      RngStream& rng);

TaskInstance generate_episode(const DatasetManifest& m, const std::string& split, int episode_id);

// Binary PGM (P5, maxval 255).
void write_pgm(const std::string& path, const Tensor& img);
Tensor read_pgm(const std::string& path);

void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

// Writes both splits plus the manifest under dir; regeneration from an equal
// manifest is bit-identical.
void write_dataset(const DatasetManifest& m, const std::string& dir);
std::vector<TaskInstance> load_split(const std::string& dir, const std::string& split);

}  // namespace picl
