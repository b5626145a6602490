#include "gcr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace gcr {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::B: return "B";
        case Ablation::B_S1: return "B+S1";
        case Ablation::B_S1_S2: return "B+S1+S2";
        case Ablation::B_R: return "B+R";
        case Ablation::B_S1_R: return "B+S1+R";
        case Ablation::FULL: return "B+S1+S2+R";
    }
    return "?";
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "B") return Ablation::B;
    if (s == "B+S1") return Ablation::B_S1;
    if (s == "B+S1+S2") return Ablation::B_S1_S2;
    if (s == "B+R") return Ablation::B_R;
    if (s == "B+S1+R") return Ablation::B_S1_R;
    if (s == "B+S1+S2+R" || s == "FULL" || s == "full") return Ablation::FULL;
    throw ConfigError("unknown ablation variant: " + s);
}

Episode build_episode(const DatasetSplit& split, const TrainingConfig& config,
                      const std::vector<std::unique_ptr<Augmenter>>& augmenters, Rng& rng,
                      const std::vector<int>& class_to_table) {
    std::vector<int> candidates(split.num_classes());
    for (int c = 0; c < split.num_classes(); ++c) candidates[c] = c;
    require<ConfigError>(config.n_train <= static_cast<int>(candidates.size()),
                         "episode: n_train exceeds the number of available classes");
    require<ConfigError>(config.n_s >= 1 && config.n_q >= 1, "episode: n_s and n_q must be >= 1");

    const auto train_by_class = split.train_by_class();

    Episode ep;
    ep.n_s = config.n_s;
    ep.n_q = config.n_q;
    const auto picked = rng.sample_indices(static_cast<int>(candidates.size()), config.n_train);
    for (int k : picked) {
        const int cls = candidates[k];
        ep.classes.push_back(class_to_table.empty() ? cls : class_to_table[cls]);
    }

    const int per_class = config.n_s + config.n_q;
    for (int i = 0; i < config.n_train; ++i) {
        const int cls = candidates[picked[i]];
        const auto& ids = train_by_class[cls];
        const bool is_novel = split.classes[cls].partition == Partition::novel;

        if (!is_novel || static_cast<int>(ids.size()) >= per_class) {
            // Enough real samples: draw n_s + n_q distinct ones.
            require<IntegrityError>(static_cast<int>(ids.size()) >= per_class,
                                    "episode: class " + split.classes[cls].name + " has " +
                                        std::to_string(ids.size()) + " samples, needs " +
                                        std::to_string(per_class));
            const auto pick = rng.sample_indices(static_cast<int>(ids.size()), per_class);
            for (int j = 0; j < config.n_s; ++j) ep.support.push_back(split.train[ids[pick[j]]]);
            for (int j = config.n_s; j < per_class; ++j)
                ep.query.push_back(split.train[ids[pick[j]]]);
        } else {
            // Grow the shots to n_s + n_q, then split the pool disjointly.
            std::vector<LabeledSample> shots;
            for (int id : ids) shots.push_back(split.train[id]);
            auto pool = augment_step1(shots, per_class, augmenters, rng);
            std::vector<int> order(pool.size());
            for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
            rng.shuffle(order);
            for (int j = 0; j < config.n_s; ++j) ep.support.push_back(pool[order[j]]);
            for (int j = config.n_s; j < per_class; ++j) ep.query.push_back(pool[order[j]]);
        }

        const bool synthesized = ablation_has_s2(config.ablation) && is_novel;
        ep.draws.push_back(synthesized ? std::optional<ConvexDraw>(draw_convex(config.n_s, rng))
                                       : std::nullopt);
    }
    return ep;
}

std::vector<RowGroup> episodic_groups(const Episode& episode) {
    const int n_train = static_cast<int>(episode.classes.size());
    std::vector<RowGroup> groups(n_train);
    for (int i = 0; i < n_train; ++i) {
        const int base_row = i * episode.n_s;
        if (episode.draws[i].has_value()) {
            const ConvexDraw& d = *episode.draws[i];
            for (int k = 0; k < d.k_r; ++k) {
                groups[i].rows.push_back(base_row + d.selected_indices[k]);
                groups[i].weights.push_back(d.weights[k]);
            }
        } else {
            const double w = 1.0 / static_cast<double>(episode.n_s);
            for (int j = 0; j < episode.n_s; ++j) {
                groups[i].rows.push_back(base_row + j);
                groups[i].weights.push_back(w);
            }
        }
    }
    return groups;
}

Mat episodic_representations(const Mat& support_features, const Episode& episode) {
    const auto groups = episodic_groups(episode);
    Mat reps = Mat::Zero(static_cast<Eigen::Index>(groups.size()), support_features.cols());
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (std::size_t k = 0; k < groups[g].rows.size(); ++k)
            reps.row(static_cast<Eigen::Index>(g)) +=
                groups[g].weights[k] * support_features.row(groups[g].rows[k]);
    return reps;
}

double classification_loss(const Vec& query_feature, int true_index, const Mat& references) {
    require<ContractError>(true_index >= 0 && true_index < references.rows(),
                           "classification_loss: target outside reference set");
    require<ContractError>(query_feature.size() == references.cols(),
                           "classification_loss: dimension mismatch");
    Tape t;
    Node* d = pairwise_l2(t, t.input(query_feature.transpose()), t.input(references));
    return softmax_ce_rows(t, scale(t, d, -1.0), {true_index})->value(0, 0);
}

EpisodeGraph episode_loss_graph(Tape& t, Model& model, const Episode& episode, bool train) {
    const int n_train = static_cast<int>(episode.classes.size());
    require<ContractError>(n_train > 0, "episode_loss: empty episode");
    require<ContractError>(static_cast<int>(episode.support.size()) == n_train * episode.n_s &&
                               static_cast<int>(episode.query.size()) == n_train * episode.n_q,
                           "episode_loss: malformed episode");

    // One extractor pass over support followed by query rows.
    std::vector<const LabeledSample*> all;
    for (const auto& s : episode.support) all.push_back(&s);
    for (const auto& q : episode.query) all.push_back(&q);
    Node* feats = model.extractor.forward(t, batch_matrix(all), train);

    EpisodeGraph g;
    std::vector<int> support_rows(episode.support.size());
    for (std::size_t i = 0; i < episode.support.size(); ++i) support_rows[i] = static_cast<int>(i);
    g.support_features = gather_rows(t, feats, support_rows);
    g.episodic_reps = group_weighted_rows(t, g.support_features, episodic_groups(episode));

    if (ablation_has_r(model.ablation)) {
        RegistrationGraph rg =
            register_representations(t, g.episodic_reps, episode.classes, model.table,
                                     model.registration, train, /*want_selection=*/true);
        g.registration_loss = rg.loss;
        g.references = rg.selected;
    } else {
        g.references = g.episodic_reps;
    }

    std::vector<int> query_rows(episode.query.size());
    std::vector<int> query_targets(episode.query.size());
    for (int i = 0; i < n_train; ++i)
        for (int j = 0; j < episode.n_q; ++j) {
            const int r = i * episode.n_q + j;
            query_rows[r] = static_cast<int>(episode.support.size()) + r;
            query_targets[r] = i;
        }
    Node* query_features = gather_rows(t, feats, query_rows);
    Node* qd = pairwise_l2(t, query_features, g.references);
    g.classification_loss = softmax_ce_rows(t, scale(t, qd, -1.0), query_targets);

    g.total = g.registration_loss ? add(t, g.registration_loss, g.classification_loss)
                                  : g.classification_loss;
    return g;
}

EpisodeLoss episode_loss(Model& model, const Episode& episode, bool train) {
    Tape t;
    EpisodeGraph g = episode_loss_graph(t, model, episode, train);
    EpisodeLoss out;
    out.total = g.total->value(0, 0);
    out.classification = g.classification_loss->value(0, 0);
    out.registration = g.registration_loss ? g.registration_loss->value(0, 0) : 0.0;
    return out;
}

namespace {

// Chunked eval-mode extraction keeps peak memory flat on big classes.
Mat extract_features(FeatureExtractor& extractor, const std::vector<LabeledSample>& samples,
                     const std::vector<int>& indices) {
    const int chunk = 256;
    Mat out(static_cast<Eigen::Index>(indices.size()), extractor.feature_dim());
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const std::size_t end = std::min(indices.size(), start + chunk);
        std::vector<int> part(indices.begin() + static_cast<long>(start),
                              indices.begin() + static_cast<long>(end));
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
            extractor.features(batch_matrix(samples, part));
    }
    return out;
}

}  // namespace

GlobalTable init_global_representations(FeatureExtractor& extractor, const DatasetSplit& split) {
    const auto train_by_class = split.train_by_class();
    Mat reps(split.num_classes(), extractor.feature_dim());
    std::vector<std::string> names;
    for (int c = 0; c < split.num_classes(); ++c) {
        require<IntegrityError>(!train_by_class[c].empty(),
                                "global init: class " + split.classes[c].name +
                                    " has no training samples");
        const Mat feats = extract_features(extractor, split.train, train_by_class[c]);
        reps.row(c) = feats.colwise().mean();
        names.push_back(split.classes[c].name);
    }
    return GlobalTable(std::move(names), std::move(reps));
}

void refresh_table_from_features(Model& model, const DatasetSplit& split, Rng& rng) {
    const auto train_by_class = split.train_by_class();
    Mat& reps = model.table.parameter().value;
    std::vector<std::unique_ptr<Augmenter>> augmenters;
    SynthesisConfig synth;
    if (ablation_has_s1(model.ablation)) augmenters = build_augmenters(synth, split);

    for (int c = 0; c < split.num_classes(); ++c) {
        const int row = model.table.index_of(split.classes[c].name);
        require<ContractError>(row >= 0, "refresh: class " + split.classes[c].name +
                                             " missing from table");
        const bool is_novel = split.classes[c].partition == Partition::novel;
        if (!is_novel || !ablation_has_s1(model.ablation)) {
            const Mat feats = extract_features(model.extractor, split.train, train_by_class[c]);
            reps.row(row) = feats.colwise().mean();
            continue;
        }
        // Novel with S1: augment the shots to k_t, then mean or one synthesis.
        std::vector<LabeledSample> shots;
        for (int id : train_by_class[c]) shots.push_back(split.train[id]);
        const int k_t = std::max(synth.k_t, static_cast<int>(shots.size()));
        auto pool = augment_step1(shots, k_t, augmenters, rng);
        std::vector<const LabeledSample*> ptrs;
        for (const auto& s : pool) ptrs.push_back(&s);
        const Mat feats = model.extractor.features(batch_matrix(ptrs));
        if (ablation_has_s2(model.ablation)) {
            const ConvexDraw draw = draw_convex(k_t, rng);
            reps.row(row) = synthesize(feats, draw).transpose();
        } else {
            reps.row(row) = feats.colwise().mean();
        }
    }
}

namespace {

TrainResult run_training_loop(Model& model, const DatasetSplit& split,
                              const TrainingConfig& config, const TrainHooks& hooks,
                              const TrainState& resume,
                              const std::vector<Parameter*>& step_params,
                              const std::vector<int>& class_to_table, bool frozen_backbone,
                              Eigen::Index frozen_table_rows) {
    require<ConfigError>(config.total_episodes >= 0, "train: negative episode count");

    std::vector<std::unique_ptr<Augmenter>> augmenters;
    if (ablation_has_s1(config.ablation)) augmenters = build_augmenters(config.synthesis, split);

    Rng rng(config.rng_seed);
    long start_episode = 0;
    if (!resume.rng_state.empty()) {
        rng.restore(resume.rng_state);
        start_episode = resume.episode;
    }

    SgdMomentum sgd(config.optimizer.base_lr, config.optimizer.momentum);
    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();

    for (long episode = start_episode; episode < config.total_episodes; ++episode) {
        const double lr =
            config.optimizer.base_lr *
            std::pow(config.optimizer.lr_decay_factor,
                     static_cast<double>(episode / std::max(1, config.optimizer.lr_decay_every)));
        sgd.set_lr(lr);

        Episode ep = build_episode(split, config, augmenters, rng, class_to_table);

        Tape t;
        // Extension keeps batch-norm statistics and all backbone weights
        // frozen; gradients still flow through eval-mode layers.
        EpisodeGraph g = episode_loss_graph(t, model, ep, /*train=*/!frozen_backbone);

        EpisodeLogRow row;
        row.episode = episode;
        row.total_loss = g.total->value(0, 0);
        row.classification_loss = g.classification_loss->value(0, 0);
        row.registration_loss = g.registration_loss ? g.registration_loss->value(0, 0) : 0.0;
        row.lr = lr;

        if (!std::isfinite(row.total_loss)) {
            std::ostringstream msg;
            msg << "non-finite loss at episode " << episode << "; classes:";
            for (int c : ep.classes) msg << " " << model.table.name_of(c);
            msg << "; rng state: " << rng.serialize();
            throw NumericalError(msg.str());
        }

        SgdMomentum::zero_grad(step_params);
        t.backward(g.total);
        if (frozen_table_rows > 0)
            model.table.parameter().grad.topRows(frozen_table_rows).setZero();
        sgd.step(step_params);

        row.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.final_loss = row.total_loss;
        ++result.episodes_run;
        result.state.episode = episode + 1;
        result.state.rng_state = rng.serialize();

        if (hooks.on_episode) hooks.on_episode(row);
        if (hooks.on_checkpoint && config.checkpoint_every > 0 &&
            (episode + 1) % config.checkpoint_every == 0)
            hooks.on_checkpoint(result.state);
    }
    if (result.state.rng_state.empty()) {
        result.state.episode = start_episode;
        result.state.rng_state = rng.serialize();
    }
    return result;
}

}  // namespace

TrainResult train(Model& model, const DatasetSplit& split, const TrainingConfig& config,
                  const TrainHooks& hooks, const TrainState& resume) {
    require<ContractError>(model.ablation == config.ablation,
                           "train: model and config ablation disagree");
    std::vector<Parameter*> step_params = model.extractor.parameters();
    if (ablation_has_r(config.ablation)) {
        for (Parameter* p : model.registration.parameters()) step_params.push_back(p);
        step_params.push_back(&model.table.parameter());
    }
    return run_training_loop(model, split, config, hooks, resume, step_params, {},
                             /*frozen_backbone=*/false, /*frozen_table_rows=*/0);
}

TrainResult extend_new_classes(Model& model, const DatasetSplit& new_split,
                               const TrainingConfig& config, const TrainHooks& hooks) {
    const Eigen::Index old_rows = model.table.parameter().value.rows();

    // New entries initialise at their shot-feature means.
    const auto train_by_class = new_split.train_by_class();
    std::vector<std::string> names;
    Mat rows(new_split.num_classes(), model.extractor.feature_dim());
    std::vector<int> class_to_table(new_split.num_classes());
    for (int c = 0; c < new_split.num_classes(); ++c) {
        const auto& name = new_split.classes[c].name;
        require<ContractError>(model.table.index_of(name) < 0,
                               "extend: class id collision on " + name);
        require<IntegrityError>(!train_by_class[c].empty(),
                                "extend: class " + name + " has no shots");
        const Mat feats = extract_features(model.extractor, new_split.train, train_by_class[c]);
        rows.row(c) = feats.colwise().mean();
        names.push_back(name);
        class_to_table[c] = static_cast<int>(old_rows) + c;
    }
    model.table.append(names, rows);

    if (config.total_episodes == 0) {
        TrainResult r;
        r.state.episode = 0;
        r.state.rng_state = Rng(config.rng_seed).serialize();
        return r;
    }

    TrainingConfig ext_config = config;
    ext_config.ablation = model.ablation;
    require<ConfigError>(ext_config.n_train <= new_split.num_classes(),
                         "extend: n_train exceeds the number of new classes");
    return run_training_loop(model, new_split, ext_config, hooks, {},
                             {&model.table.parameter()}, class_to_table,
                             /*frozen_backbone=*/true, old_rows);
}

}  // namespace gcr
