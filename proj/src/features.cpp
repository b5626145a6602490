#include "gcr/features.hpp"

#include <cmath>

namespace gcr {

FeatureExtractor::FeatureExtractor(const ExtractorConfig& config) : config_(config) {
    switch (config.profile) {
        case ExtractorProfile::conv4_28x28:
            input_shape_ = {1, 28, 28};
            break;
        case ExtractorProfile::conv4_84x84:
            input_shape_ = {3, 84, 84};
            break;
        case ExtractorProfile::mlp:
        case ExtractorProfile::identity:
            input_shape_ = {config.input_dim, 1, 1};
            break;
    }

    if (config.profile == ExtractorProfile::conv4_28x28 ||
        config.profile == ExtractorProfile::conv4_84x84) {
        int ch = input_shape_.channels;
        int h = input_shape_.height, w = input_shape_.width;
        for (int block = 0; block < 4; ++block) {
            convs_.emplace_back("extractor.conv" + std::to_string(block), ch, config.channels);
            bns_.emplace_back("extractor.bn" + std::to_string(block), config.channels);
            ch = config.channels;
            h /= 2;
            w /= 2;
            require<ConfigError>(h >= 1 && w >= 1, "extractor: input too small for four pools");
        }
        feature_dim_ = config.channels * h * w;
    } else if (config.profile == ExtractorProfile::mlp) {
        fc1_.reset("extractor.fc1", config.input_dim, config.mlp_hidden);
        fc2_.reset("extractor.fc2", config.mlp_hidden, config.input_dim);
        feature_dim_ = config.input_dim;
    } else {
        feature_dim_ = config.input_dim;
    }

    input_mean_ = Vec::Zero(input_shape_.channels);
    input_std_ = Vec::Ones(input_shape_.channels);
}

void FeatureExtractor::init(Rng& rng) {
    for (auto& c : convs_) c.init_kaiming(rng);
    if (config_.profile == ExtractorProfile::mlp) {
        fc1_.init_kaiming(rng);
        fc2_.init_kaiming(rng);
    }
}

void FeatureExtractor::set_input_normalization(const Vec& mean, const Vec& stddev) {
    require<ContractError>(mean.size() == input_shape_.channels &&
                               stddev.size() == input_shape_.channels,
                           "extractor: normalization stats must be per channel");
    input_mean_ = mean;
    input_std_ = stddev;
    for (int c = 0; c < input_std_.size(); ++c)
        if (input_std_(c) <= 1e-8) input_std_(c) = 1.0;
}

void FeatureExtractor::set_input_normalization_from(const DatasetSplit& split) {
    if (config_.profile == ExtractorProfile::identity) return;
    const int C = input_shape_.channels;
    const int S = input_shape_.pixels();
    Vec sum = Vec::Zero(C), sum_sq = Vec::Zero(C);
    long count = 0;
    for (const auto& s : split.train) {
        if (split.classes[s.class_index].partition != Partition::base) continue;
        require<ContractError>(s.image.numel() == input_shape_.numel(),
                               "extractor: sample shape does not match profile");
        for (int c = 0; c < C; ++c)
            for (int p = 0; p < S; ++p) {
                const double v = s.image.pixels[c * S + p];
                sum(c) += v;
                sum_sq(c) += v * v;
            }
        ++count;
    }
    require<IntegrityError>(count > 0, "extractor: no base-class samples for normalization");
    Vec mean(C), stddev(C);
    const double denom = static_cast<double>(count) * S;
    for (int c = 0; c < C; ++c) {
        mean(c) = sum(c) / denom;
        stddev(c) = std::sqrt(std::max(0.0, sum_sq(c) / denom - mean(c) * mean(c)));
    }
    set_input_normalization(mean, stddev);
}

Node* FeatureExtractor::forward(Tape& t, const Mat& batch, bool train) {
    require<ContractError>(batch.rows() > 0, "extractor: empty batch");
    require<ContractError>(batch.cols() == input_shape_.numel(),
                           "extractor: batch shape does not match profile");

    if (config_.profile == ExtractorProfile::identity) return t.input(batch);

    Mat normalized = batch;
    const int S = input_shape_.pixels();
    for (int c = 0; c < input_shape_.channels; ++c) {
        normalized.middleCols(static_cast<Eigen::Index>(c) * S, S).array() -= input_mean_(c);
        normalized.middleCols(static_cast<Eigen::Index>(c) * S, S).array() /= input_std_(c);
    }
    Node* x = t.input(std::move(normalized));

    if (config_.profile == ExtractorProfile::mlp) {
        return fc2_.forward(t, relu(t, fc1_.forward(t, x)));
    }

    ImageShape shape = input_shape_;
    for (int block = 0; block < 4; ++block) {
        x = convs_[block].forward(t, x, shape);
        shape.channels = config_.channels;
        x = bns_[block].forward(t, x, shape.pixels(), train);
        x = relu(t, x);
        x = maxpool2x2(t, x, shape);
        shape.height /= 2;
        shape.width /= 2;
    }
    return x;
}

Mat FeatureExtractor::features(const Mat& batch) const {
    Tape t;
    // Eval mode never mutates running statistics, so const_cast is safe here.
    return const_cast<FeatureExtractor*>(this)->forward(t, batch, /*train=*/false)->value;
}

std::vector<Parameter*> FeatureExtractor::parameters() {
    std::vector<Parameter*> out;
    for (auto& c : convs_)
        for (Parameter* p : c.parameters()) out.push_back(p);
    for (auto& b : bns_)
        for (Parameter* p : b.parameters()) out.push_back(p);
    if (config_.profile == ExtractorProfile::mlp) {
        for (Parameter* p : fc1_.parameters()) out.push_back(p);
        for (Parameter* p : fc2_.parameters()) out.push_back(p);
    }
    return out;
}

std::vector<BatchNorm*> FeatureExtractor::batchnorms() {
    std::vector<BatchNorm*> out;
    for (auto& b : bns_) out.push_back(&b);
    return out;
}

Mat batch_matrix(const std::vector<const LabeledSample*>& samples) {
    require<ContractError>(!samples.empty(), "batch_matrix: empty batch");
    const int numel = samples.front()->image.numel();
    Mat m(static_cast<Eigen::Index>(samples.size()), numel);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        require<ContractError>(samples[i]->image.numel() == numel, "batch_matrix: ragged shapes");
        for (int j = 0; j < numel; ++j)
            m(static_cast<Eigen::Index>(i), j) = samples[i]->image.pixels[j];
    }
    return m;
}

Mat batch_matrix(const std::vector<LabeledSample>& samples, const std::vector<int>& indices) {
    std::vector<const LabeledSample*> ptrs;
    ptrs.reserve(indices.size());
    for (int i : indices) ptrs.push_back(&samples[i]);
    return batch_matrix(ptrs);
}

PretrainResult pretrain_base_classifier(FeatureExtractor& extractor, const DatasetSplit& split,
                                        const PretrainConfig& config) {
    // Head indices are dense over base classes in class order.
    std::vector<int> head_index(split.num_classes(), -1);
    std::vector<std::vector<int>> base_samples;
    {
        int next = 0;
        for (int c = 0; c < split.num_classes(); ++c)
            if (split.classes[c].partition == Partition::base) head_index[c] = next++;
        base_samples.resize(next);
    }
    require<ConfigError>(!base_samples.empty(), "pretrain: dataset has no base classes");
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        const int h = head_index[split.train[i].class_index];
        if (h >= 0) base_samples[h].push_back(static_cast<int>(i));
    }
    for (std::size_t h = 0; h < base_samples.size(); ++h)
        require<IntegrityError>(!base_samples[h].empty(),
                                "pretrain: base class without training samples");

    extractor.set_input_normalization_from(split);

    PretrainResult result;
    if (config.epochs <= 0) return result;

    Rng rng(config.seed);
    Linear head("pretrain.head", extractor.feature_dim(), static_cast<int>(base_samples.size()));
    head.init_kaiming(rng);

    std::vector<Parameter*> params = extractor.parameters();
    for (Parameter* p : head.parameters()) params.push_back(p);
    SgdMomentum sgd(config.lr, config.momentum);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Epoch sample list, optionally subsampled per class.
        std::vector<std::pair<int, int>> order;  // (train index, head label)
        for (std::size_t h = 0; h < base_samples.size(); ++h) {
            std::vector<int> ids = base_samples[h];
            if (config.images_per_class > 0 &&
                static_cast<int>(ids.size()) > config.images_per_class) {
                const auto pick =
                    rng.sample_indices(static_cast<int>(ids.size()), config.images_per_class);
                std::vector<int> subset;
                for (int k : pick) subset.push_back(ids[k]);
                ids = std::move(subset);
            }
            for (int id : ids) order.emplace_back(id, static_cast<int>(h));
        }
        rng.shuffle(order);

        double epoch_loss = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<int> ids;
            std::vector<int> targets;
            for (std::size_t i = start; i < end; ++i) {
                ids.push_back(order[i].first);
                targets.push_back(order[i].second);
            }
            Tape t;
            Node* f = extractor.forward(t, batch_matrix(split.train, ids), /*train=*/true);
            Node* logits = head.forward(t, f);
            Node* loss =
                scale(t, softmax_ce_rows(t, logits, targets), 1.0 / static_cast<double>(ids.size()));
            require<NumericalError>(std::isfinite(loss->value(0, 0)),
                                    "pretrain: non-finite loss");
            SgdMomentum::zero_grad(params);
            t.backward(loss);
            sgd.step(params);
            epoch_loss += loss->value(0, 0);
            ++batches;
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    }
    result.final_loss = result.epoch_losses.back();
    return result;
}

}  // namespace gcr
