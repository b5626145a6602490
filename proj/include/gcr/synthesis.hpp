#pragma once

// Two-step novel-class sample synthesis: image-level augmentation to a pool
// of k_t variants, then a random convex combination in feature space.

#include "gcr/common.hpp"
#include "gcr/data.hpp"

#include <memory>
#include <string>
#include <vector>

namespace gcr {

// Pluggable single-sample augmenter. Stateless apart from construction-time
// statistics; all randomness comes from the caller's rng.
class Augmenter {
  public:
    virtual ~Augmenter() = default;
    virtual std::string name() const = 0;
    virtual Image apply(const Image& img, Rng& rng) const = 0;
};

// Zero-pad by `pad` pixels and crop back at a random offset.
std::unique_ptr<Augmenter> make_random_crop(int pad = 2);
// Horizontal mirror.
std::unique_ptr<Augmenter> make_random_flip();
// Per-dimension Gaussian noise, std = jitter_std * per-dimension std of the
// base-class training samples. Stands in for learned hallucination; useful
// for vector-shaped data where crops/flips are meaningless.
std::unique_ptr<Augmenter> make_feature_jitter(Vec per_dim_std, double jitter_std);

// Per-dimension std over base-partition train samples, for feature_jitter.
Vec base_class_pixel_std(const DatasetSplit& split);

struct SynthesisConfig {
    int k_t{20};
    std::vector<std::string> augmenters{"random_crop", "random_flip"};
    double jitter_std{0.3};
};

// Instantiates the configured augmenters. `split` supplies the statistics
// feature_jitter needs; crop/flip reject 1x1 vector datasets at build time.
std::vector<std::unique_ptr<Augmenter>> build_augmenters(const SynthesisConfig& config,
                                                         const DatasetSplit& split);

// Step 1: grow `samples` (all one class) to exactly k_t items. The originals
// are always kept and lead the output; each variant applies a uniformly
// chosen enabled augmenter to a uniformly chosen original. With no augmenters
// the originals are cycled unchanged (ablations without S1).
std::vector<LabeledSample> augment_step1(const std::vector<LabeledSample>& samples, int k_t,
                                         const std::vector<std::unique_ptr<Augmenter>>& augmenters,
                                         Rng& rng);

struct ConvexDraw {
    int k_r{0};
    std::vector<int> selected_indices;  // distinct, into the k_t pool
    std::vector<double> weights;        // nonnegative, sum to 1
};

// k_hat ~ U(0, k_t], k_r = ceil(k_hat); k_r distinct indices without
// replacement; raw weights ~ U(0,1) normalised to sum 1.
ConvexDraw draw_convex(int k_t, Rng& rng);

// Step 2: weighted sum of the selected feature rows. `features` is k_t x d.
Vec synthesize(const Mat& features, const ConvexDraw& draw);

}  // namespace gcr
