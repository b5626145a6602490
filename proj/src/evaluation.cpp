#include "gcr/evaluation.hpp"

#include <cmath>

namespace gcr {

TestEpisode sample_test_episode(const DatasetSplit& split, const StandardEvalConfig& config,
                                Rng& rng) {
    const auto novel = split.classes_of(Partition::novel);
    require<ConfigError>(config.n_test <= static_cast<int>(novel.size()),
                         "standard eval: way count exceeds the novel class count");
    const auto train_by_class = split.train_by_class();
    const auto test_by_class = split.test_by_class();

    TestEpisode ep;
    const auto picked = rng.sample_indices(static_cast<int>(novel.size()), config.n_test);
    for (int k : picked) {
        ep.classes.push_back(novel[k]);
        ep.class_names.push_back(split.classes[novel[k]].name);
    }

    for (int pos = 0; pos < config.n_test; ++pos) {
        const int c = ep.classes[pos];
        require<IntegrityError>(!train_by_class[c].empty(),
                                "standard eval: class " + split.classes[c].name +
                                    " has no training shots");
        require<IntegrityError>(
            static_cast<int>(test_by_class[c].size()) >= config.n_q_test,
            "standard eval: class " + split.classes[c].name + " has " +
                std::to_string(test_by_class[c].size()) + " test samples, needs " +
                std::to_string(config.n_q_test));

        std::vector<const LabeledSample*> shots;
        for (int id : train_by_class[c]) shots.push_back(&split.train[id]);
        ep.support.push_back(std::move(shots));

        const auto pick =
            rng.sample_indices(static_cast<int>(test_by_class[c].size()), config.n_q_test);
        for (int j : pick) {
            ep.queries.push_back(&split.test[test_by_class[c][j]]);
            ep.query_targets.push_back(pos);
        }
    }
    return ep;
}

std::vector<int> predict_episode(Model& model, const TestEpisode& episode,
                                 const SynthesisConfig& synthesis,
                                 const std::vector<std::unique_ptr<Augmenter>>& augmenters,
                                 Rng& rng, bool hard_selection, double* registration_acc) {
    const int way = static_cast<int>(episode.classes.size());
    require<ContractError>(way > 0 && !episode.queries.empty(),
                           "predict_episode: empty episode");

    // Episodic representation per class, following the model's ablation path.
    Mat reps(way, model.extractor.feature_dim());
    for (int pos = 0; pos < way; ++pos) {
        const auto& shots = episode.support[pos];
        std::vector<LabeledSample> pool_storage;
        std::vector<const LabeledSample*> pool = shots;
        if (ablation_has_s1(model.ablation)) {
            std::vector<LabeledSample> originals;
            for (const auto* s : shots) originals.push_back(*s);
            const int k_t = std::max(synthesis.k_t, static_cast<int>(originals.size()));
            pool_storage = augment_step1(originals, k_t, augmenters, rng);
            pool.clear();
            for (const auto& s : pool_storage) pool.push_back(&s);
        }
        const Mat feats = model.extractor.features(batch_matrix(pool));
        if (ablation_has_s2(model.ablation)) {
            const ConvexDraw draw = draw_convex(static_cast<int>(pool.size()), rng);
            reps.row(pos) = synthesize(feats, draw).transpose();
        } else {
            reps.row(pos) = feats.colwise().mean();
        }
    }

    Mat references;
    if (ablation_has_r(model.ablation)) {
        std::vector<int> table_rows(way);
        for (int pos = 0; pos < way; ++pos) {
            table_rows[pos] = model.table.index_of(episode.class_names[pos]);
            require<ContractError>(table_rows[pos] >= 0, "predict_episode: class " +
                                                             episode.class_names[pos] +
                                                             " absent from the table");
        }
        auto [probs, scores] = similarity_batch(reps, model.table, model.registration);
        if (registration_acc) {
            int hits = 0;
            for (int pos = 0; pos < way; ++pos) {
                Eigen::Index best = 0;
                probs.row(pos).maxCoeff(&best);
                if (static_cast<int>(best) == table_rows[pos]) ++hits;
            }
            *registration_acc = static_cast<double>(hits) / way;
        }
        if (hard_selection) {
            references.resize(way, model.table.dim());
            for (int pos = 0; pos < way; ++pos) {
                Eigen::Index best = 0;
                probs.row(pos).maxCoeff(&best);
                references.row(pos) = model.table.values().row(best);
            }
        } else {
            references = probs * model.table.values();
        }
    } else {
        references = reps;
        if (registration_acc) *registration_acc = std::nan("");
    }

    // Raw-feature-space nearest reference.
    const Mat query_feats = model.extractor.features(batch_matrix(episode.queries));
    std::vector<int> predictions(episode.queries.size());
    for (Eigen::Index q = 0; q < query_feats.rows(); ++q) {
        int best = 0;
        double best_d = 0.0;
        for (int pos = 0; pos < way; ++pos) {
            const double d = (query_feats.row(q) - references.row(pos)).squaredNorm();
            if (pos == 0 || d < best_d) {
                best = pos;
                best_d = d;
            }
        }
        predictions[static_cast<std::size_t>(q)] = best;
    }
    return predictions;
}

StandardEvalResult accuracy_summary(std::vector<double> per_episode) {
    StandardEvalResult r;
    require<ContractError>(!per_episode.empty(), "accuracy_summary: no episodes");
    const double n = static_cast<double>(per_episode.size());
    double sum = 0.0;
    for (double a : per_episode) sum += a;
    r.mean_accuracy = sum / n;
    double sq = 0.0;
    for (double a : per_episode) sq += (a - r.mean_accuracy) * (a - r.mean_accuracy);
    r.std_accuracy = std::sqrt(sq / n);
    r.ci95 = 1.96 * r.std_accuracy / std::sqrt(n);
    r.per_episode = std::move(per_episode);
    return r;
}

StandardEvalResult evaluate_standard(Model& model, const DatasetSplit& split,
                                     const StandardEvalConfig& config,
                                     const SynthesisConfig& synthesis) {
    require<ConfigError>(config.episodes >= 1, "standard eval: need at least one episode");
    std::vector<std::unique_ptr<Augmenter>> augmenters;
    if (ablation_has_s1(model.ablation)) augmenters = build_augmenters(synthesis, split);

    const Rng root(config.rng_seed);
    std::vector<double> accuracy(config.episodes, 0.0);
    std::vector<double> reg_acc(config.episodes, 0.0);
    const bool has_r = ablation_has_r(model.ablation);

    // Episodes are independent; per-episode rng streams make the result
    // order-independent under parallel scheduling.
#pragma omp parallel for schedule(dynamic)
    for (int e = 0; e < config.episodes; ++e) {
        Rng rng = root.derive(static_cast<std::uint64_t>(e));
        TestEpisode ep = sample_test_episode(split, config, rng);
        double episode_reg = 0.0;
        const auto preds = predict_episode(model, ep, synthesis, augmenters, rng,
                                           config.hard_selection,
                                           has_r ? &episode_reg : nullptr);
        int correct = 0;
        for (std::size_t q = 0; q < preds.size(); ++q)
            if (preds[q] == ep.query_targets[q]) ++correct;
        accuracy[e] = static_cast<double>(correct) / static_cast<double>(preds.size());
        reg_acc[e] = episode_reg;
    }

    StandardEvalResult result = accuracy_summary(std::move(accuracy));
    if (has_r) {
        double sum = 0.0;
        for (double v : reg_acc) sum += v;
        result.registration_accuracy = sum / static_cast<double>(config.episodes);
    }
    return result;
}

int predict_generalized(Model& model, const Image& sample) {
    std::vector<const LabeledSample*> one;
    LabeledSample s;
    s.image = sample;
    one.push_back(&s);
    const Mat feat = model.extractor.features(batch_matrix(one));

    if (ablation_has_r(model.ablation)) {
        auto [probs, scores] = similarity_batch(feat, model.table, model.registration);
        Eigen::Index best = 0;
        probs.row(0).maxCoeff(&best);
        return static_cast<int>(best);
    }
    // Without a registration module the table rows are feature means; use
    // plain nearest-mean in raw feature space.
    int best = 0;
    double best_d = 0.0;
    for (int c = 0; c < model.table.size(); ++c) {
        const double d = (feat.row(0) - model.table.values().row(c)).squaredNorm();
        if (c == 0 || d < best_d) {
            best = c;
            best_d = d;
        }
    }
    return best;
}

GeneralizedMetrics evaluate_generalized(Model& model, const DatasetSplit& split) {
    require<ContractError>(!split.test.empty(), "generalized eval: empty test partition");

    // Resolve split classes onto table rows once.
    std::vector<int> table_row(split.num_classes());
    for (int c = 0; c < split.num_classes(); ++c) {
        table_row[c] = model.table.index_of(split.classes[c].name);
        require<ContractError>(table_row[c] >= 0, "generalized eval: class " +
                                                      split.classes[c].name +
                                                      " absent from the table");
    }

    GeneralizedMetrics m;
    m.per_class_total.assign(split.num_classes(), 0);
    m.per_class_correct.assign(split.num_classes(), 0);

    const bool has_r = ablation_has_r(model.ablation);
    const int chunk = 256;
    const long n = static_cast<long>(split.test.size());
    std::vector<int> predicted(n);
#pragma omp parallel for schedule(dynamic)
    for (long start = 0; start < n; start += chunk) {
        const long end = std::min(n, start + chunk);
        std::vector<const LabeledSample*> batch;
        for (long i = start; i < end; ++i) batch.push_back(&split.test[i]);
        const Mat feats = model.extractor.features(batch_matrix(batch));
        Mat probs;
        if (has_r) probs = similarity_batch(feats, model.table, model.registration).first;
        for (long i = start; i < end; ++i) {
            const Eigen::Index r = i - start;
            Eigen::Index best = 0;
            if (has_r) {
                probs.row(r).maxCoeff(&best);
            } else {
                double best_d = 0.0;
                for (int c = 0; c < model.table.size(); ++c) {
                    const double d =
                        (feats.row(r) - model.table.values().row(c)).squaredNorm();
                    if (c == 0 || d < best_d) {
                        best = c;
                        best_d = d;
                    }
                }
            }
            predicted[i] = static_cast<int>(best);
        }
    }

    long correct_base = 0, correct_novel = 0, total_base = 0, total_novel = 0;
    for (long i = 0; i < n; ++i) {
        const int true_class = split.test[i].class_index;
        const bool correct = predicted[i] == table_row[true_class];
        ++m.per_class_total[true_class];
        if (correct) ++m.per_class_correct[true_class];
        if (split.classes[true_class].partition == Partition::novel) {
            ++total_novel;
            if (correct) ++correct_novel;
        } else {
            ++total_base;
            if (correct) ++correct_base;
        }
    }
    m.acc_a = static_cast<double>(correct_base + correct_novel) / static_cast<double>(n);
    m.acc_b = total_base > 0 ? static_cast<double>(correct_base) / total_base : 0.0;
    m.acc_n = total_novel > 0 ? static_cast<double>(correct_novel) / total_novel : 0.0;
    return m;
}

}  // namespace gcr
