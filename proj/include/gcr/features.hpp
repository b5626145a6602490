#pragma once

// Trainable feature extractor and its base-class pretraining.

#include "gcr/autodiff.hpp"
#include "gcr/data.hpp"
#include "gcr/nn.hpp"

#include <vector>

namespace gcr {

// conv4_28x28: four [3x3 conv, batchnorm, relu, 2x2 maxpool] blocks on
//   28x28x1 inputs -> 64-d features (with 64 filters).
// conv4_84x84: same stack on 84x84x3 -> 1600-d features.
// mlp: two fully-connected layers for vector data, output dim = input dim.
// identity: flattened input passthrough (fixtures).
enum class ExtractorProfile { conv4_28x28, conv4_84x84, mlp, identity };

struct ExtractorConfig {
    ExtractorProfile profile{ExtractorProfile::mlp};
    int input_dim{16};   // mlp/identity profiles
    int channels{64};    // conv filter count; small values for miniature tests
    int mlp_hidden{64};
};

class FeatureExtractor {
  public:
    FeatureExtractor() = default;
    explicit FeatureExtractor(const ExtractorConfig& config);

    void init(Rng& rng);

    const ExtractorConfig& config() const { return config_; }
    int feature_dim() const { return feature_dim_; }
    ImageShape input_shape() const { return input_shape_; }

    // Per-channel statistics used to normalise inputs before the network.
    // Identity extractors never normalise.
    void set_input_normalization(const Vec& mean, const Vec& stddev);
    void set_input_normalization_from(const DatasetSplit& split);
    const Vec& input_mean() const { return input_mean_; }
    const Vec& input_std() const { return input_std_; }

    // `batch` is n x (C*H*W); one feature row per input row, order preserved.
    Node* forward(Tape& t, const Mat& batch, bool train);

    // Eval-mode extraction without retaining a graph.
    Mat features(const Mat& batch) const;

    std::vector<Parameter*> parameters();
    std::vector<BatchNorm*> batchnorms();

  private:
    ExtractorConfig config_;
    ImageShape input_shape_;
    int feature_dim_{0};
    Vec input_mean_, input_std_;

    std::vector<Conv3x3Layer> convs_;
    std::vector<BatchNorm> bns_;
    Linear fc1_, fc2_;
};

// Rows are CHW-flattened images; shapes must all match.
Mat batch_matrix(const std::vector<const LabeledSample*>& samples);
Mat batch_matrix(const std::vector<LabeledSample>& samples, const std::vector<int>& indices);

struct PretrainConfig {
    int epochs{5};
    int batch_size{64};
    double lr{0.01};
    double momentum{0.9};
    std::uint64_t seed{0};
    // 0 = use every base-class training image each epoch; otherwise subsample
    // per class per epoch to bound runtime.
    int images_per_class{0};
};

struct PretrainResult {
    std::vector<double> epoch_losses;
    double final_loss{0.0};
};

// Supervised softmax classification over the base classes only; the
// temporary linear head is discarded. Sets the extractor's input
// normalisation from the base-class training data first.
PretrainResult pretrain_base_classifier(FeatureExtractor& extractor, const DatasetSplit& split,
                                        const PretrainConfig& config);

}  // namespace gcr
