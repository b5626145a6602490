#pragma once

// Dataset ingestion and splits. A DatasetSplit is immutable once built and
// safe to share across threads read-only.

#include "gcr/common.hpp"

#include <string>
#include <vector>

namespace gcr {

enum class Partition { base, novel, val };

struct ClassInfo {
    std::string name;
    Partition partition{Partition::base};
};

// Pixel tensor, CHW layout, values in [0, 1]. Synthetic vector datasets use
// 1x1xD so every downstream consumer is shape-agnostic.
struct Image {
    int channels{0};
    int height{0};
    int width{0};
    std::vector<float> pixels;

    int numel() const { return channels * height * width; }
    float at(int c, int y, int x) const { return pixels[(c * height + y) * width + x]; }
    float& at(int c, int y, int x) { return pixels[(c * height + y) * width + x]; }
};

// Quarter-turn counter-clockwise; four applications return the original.
Image rotate90(const Image& img);

struct LabeledSample {
    Image image;
    int class_index{-1};
    std::string sample_id;
};

struct DatasetSplit {
    std::vector<ClassInfo> classes;
    std::vector<LabeledSample> train;
    std::vector<LabeledSample> test;
    int n_few{0};

    // True class means, rows aligned with `classes`; synthetic datasets only
    // (empty otherwise). Enables the nearest-true-mean oracle.
    Mat class_means;

    int num_classes() const { return static_cast<int>(classes.size()); }
    int find_class(const std::string& name) const;
    std::vector<int> classes_of(Partition p) const;
    std::vector<std::vector<int>> train_by_class() const;
    std::vector<std::vector<int>> test_by_class() const;
};

enum class ImageProfile { omniglot, miniimagenet };

struct LoadOptions {
    int n_few{5};
    // Validation-partition classes are skipped unless folded in as novel
    // (hyperparameter-selection runs).
    bool val_as_novel{false};
};

// Directory layout: <root>/<class_name>/<image files>, manifest split.txt
// with lines `class_name<TAB>partition<TAB>train|test`. The omniglot profile
// resizes to 28x28 greyscale and materialises each 90-degree rotation as a
// distinct class; miniimagenet resizes to 84x84 RGB. Novel classes get their
// lexicographically first n_few images in train, the rest in test.
DatasetSplit load_image_dataset(const std::string& root_path, ImageProfile profile,
                                const LoadOptions& options = {});

// Redistributes a source split for the generalized setting: per base class
// `per_base_train` train + `per_class_test` test samples, per novel class
// `n_few` train + `per_class_test` test samples. Sampling is without
// replacement and reproducible from the seed.
DatasetSplit make_generalized_split(const DatasetSplit& source, int n_few, int per_base_train,
                                    int per_class_test, std::uint64_t rng_seed);

struct SyntheticSpec {
    int n_base{7};
    int n_novel{3};
    int dim{16};
    int samples_per_base{200};
    int n_few{5};
    int test_per_class{50};
    double class_separation{6.0};
    std::uint64_t rng_seed{0};
};

// Isotropic unit-variance Gaussian clusters with means drawn uniformly from
// [0, class_separation]^dim, stored as 1x1xdim images.
DatasetSplit make_synthetic_gaussian(const SyntheticSpec& spec);

// Portable container (HDF5) plus a JSON metadata sidecar at <path>.json.
void save_synthetic_dataset(const DatasetSplit& split, const std::string& path);
DatasetSplit load_synthetic_dataset(const std::string& path);

// Concatenates two splits over disjoint class sets (extension workflows);
// a shared class name is a contract error.
DatasetSplit merge_splits(const DatasetSplit& a, const DatasetSplit& b);

// Bayes-optimal reference for synthetic data: assign to the nearest true
// mean. `candidates` restricts the label space (empty = all classes).
int nearest_true_mean(const Mat& class_means, const std::vector<int>& candidates, const Image& x);
double nearest_true_mean_accuracy(const DatasetSplit& split);

Vec image_to_vec(const Image& img);

}  // namespace gcr
