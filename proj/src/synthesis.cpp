#include "gcr/synthesis.hpp"

#include <cmath>

namespace gcr {

namespace {

class RandomCrop final : public Augmenter {
  public:
    explicit RandomCrop(int pad) : pad_(pad) {}
    std::string name() const override { return "random_crop"; }
    Image apply(const Image& img, Rng& rng) const override {
        const int oy = rng.uniform_int(2 * pad_ + 1) - pad_;
        const int ox = rng.uniform_int(2 * pad_ + 1) - pad_;
        Image out = img;
        for (int c = 0; c < img.channels; ++c)
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x) {
                    const int sy = y + oy, sx = x + ox;
                    out.at(c, y, x) = (sy >= 0 && sy < img.height && sx >= 0 && sx < img.width)
                                          ? img.at(c, sy, sx)
                                          : 0.0f;
                }
        return out;
    }

  private:
    int pad_;
};

class RandomFlip final : public Augmenter {
  public:
    std::string name() const override { return "random_flip"; }
    Image apply(const Image& img, Rng& rng) const override {
        if (rng.uniform() < 0.5) return img;
        Image out = img;
        for (int c = 0; c < img.channels; ++c)
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    out.at(c, y, img.width - 1 - x) = img.at(c, y, x);
        return out;
    }
};

class FeatureJitter final : public Augmenter {
  public:
    FeatureJitter(Vec per_dim_std, double jitter_std)
        : per_dim_std_(std::move(per_dim_std)), jitter_std_(jitter_std) {}
    std::string name() const override { return "feature_jitter"; }
    Image apply(const Image& img, Rng& rng) const override {
        require<ContractError>(img.numel() == per_dim_std_.size(),
                               "feature_jitter: dimension mismatch");
        Image out = img;
        for (int i = 0; i < img.numel(); ++i)
            out.pixels[i] += static_cast<float>(rng.normal(0.0, jitter_std_ * per_dim_std_(i)));
        return out;
    }

  private:
    Vec per_dim_std_;
    double jitter_std_;
};

}  // namespace

std::unique_ptr<Augmenter> make_random_crop(int pad) { return std::make_unique<RandomCrop>(pad); }
std::unique_ptr<Augmenter> make_random_flip() { return std::make_unique<RandomFlip>(); }
std::unique_ptr<Augmenter> make_feature_jitter(Vec per_dim_std, double jitter_std) {
    return std::make_unique<FeatureJitter>(std::move(per_dim_std), jitter_std);
}

Vec base_class_pixel_std(const DatasetSplit& split) {
    // Novel-only splits (class extension) fall back to all available samples.
    const bool has_base = !split.classes_of(Partition::base).empty();
    int dim = -1;
    long count = 0;
    Vec sum, sum_sq;
    for (const auto& s : split.train) {
        if (has_base && split.classes[s.class_index].partition != Partition::base) continue;
        if (dim < 0) {
            dim = s.image.numel();
            sum = Vec::Zero(dim);
            sum_sq = Vec::Zero(dim);
        }
        require<ContractError>(s.image.numel() == dim, "base_class_pixel_std: ragged dims");
        for (int i = 0; i < dim; ++i) {
            const double v = s.image.pixels[i];
            sum(i) += v;
            sum_sq(i) += v * v;
        }
        ++count;
    }
    require<IntegrityError>(count > 0, "base_class_pixel_std: no base-class train samples");
    Vec std_dev(dim);
    for (int i = 0; i < dim; ++i) {
        const double mean = sum(i) / static_cast<double>(count);
        std_dev(i) = std::sqrt(std::max(0.0, sum_sq(i) / static_cast<double>(count) - mean * mean));
    }
    return std_dev;
}

std::vector<std::unique_ptr<Augmenter>> build_augmenters(const SynthesisConfig& config,
                                                         const DatasetSplit& split) {
    const bool vector_shaped =
        !split.train.empty() && split.train.front().image.height == 1 &&
        split.train.front().image.width == 1;
    std::vector<std::unique_ptr<Augmenter>> out;
    for (const auto& name : config.augmenters) {
        if (name == "random_crop") {
            require<ConfigError>(!vector_shaped, "random_crop needs spatial images");
            out.push_back(make_random_crop());
        } else if (name == "random_flip") {
            require<ConfigError>(!vector_shaped, "random_flip needs spatial images");
            out.push_back(make_random_flip());
        } else if (name == "feature_jitter") {
            out.push_back(make_feature_jitter(base_class_pixel_std(split), config.jitter_std));
        } else {
            throw ConfigError("unknown augmenter: " + name);
        }
    }
    return out;
}

std::vector<LabeledSample> augment_step1(const std::vector<LabeledSample>& samples, int k_t,
                                         const std::vector<std::unique_ptr<Augmenter>>& augmenters,
                                         Rng& rng) {
    require<ContractError>(!samples.empty(), "augment_step1: no samples");
    const int n = static_cast<int>(samples.size());
    require<ContractError>(k_t >= n, "augment_step1: k_t smaller than sample count");
    for (const auto& s : samples)
        require<ContractError>(s.class_index == samples.front().class_index,
                               "augment_step1: mixed classes");

    std::vector<LabeledSample> out = samples;
    out.reserve(k_t);
    int serial = 0;
    while (static_cast<int>(out.size()) < k_t) {
        const LabeledSample& src = samples[rng.uniform_int(n)];
        LabeledSample variant = src;
        if (!augmenters.empty()) {
            const auto& aug = augmenters[rng.uniform_int(static_cast<int>(augmenters.size()))];
            variant.image = aug->apply(src.image, rng);
            variant.sample_id = src.sample_id + "#" + aug->name() + std::to_string(serial);
        } else {
            // No augmenters enabled (ablations without S1): cycle originals.
            variant.sample_id = src.sample_id + "#dup" + std::to_string(serial);
        }
        ++serial;
        out.push_back(std::move(variant));
    }
    return out;
}

ConvexDraw draw_convex(int k_t, Rng& rng) {
    require<ContractError>(k_t >= 1, "draw_convex: k_t must be positive");
    ConvexDraw draw;
    // k_hat on (0, k_t] makes ceil land in {1, ..., k_t}.
    const double k_hat = rng.uniform_pos() * static_cast<double>(k_t);
    draw.k_r = static_cast<int>(std::ceil(k_hat));
    draw.selected_indices = rng.sample_indices(k_t, draw.k_r);
    draw.weights.resize(draw.k_r);
    double total = 0.0;
    for (double& w : draw.weights) {
        w = rng.uniform();
        total += w;
    }
    if (total <= 0.0) {
        for (double& w : draw.weights) w = 1.0 / static_cast<double>(draw.k_r);
    } else {
        for (double& w : draw.weights) w /= total;
    }
    return draw;
}

Vec synthesize(const Mat& features, const ConvexDraw& draw) {
    require<ContractError>(draw.k_r >= 1 &&
                               draw.k_r == static_cast<int>(draw.selected_indices.size()) &&
                               draw.k_r == static_cast<int>(draw.weights.size()),
                           "synthesize: malformed draw");
    Vec out = Vec::Zero(features.cols());
    for (int i = 0; i < draw.k_r; ++i) {
        const int idx = draw.selected_indices[i];
        require<ContractError>(idx >= 0 && idx < features.rows(),
                               "synthesize: index outside feature pool");
        out += draw.weights[i] * features.row(idx).transpose();
    }
    return out;
}

}  // namespace gcr
