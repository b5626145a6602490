#pragma once

// Episodic training end to end: episode construction, episodic
// representations, the registration + classification losses, joint
// optimisation, global-table initialisation, and frozen extension to new
// classes.

#include "gcr/model.hpp"
#include "gcr/synthesis.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gcr {

struct OptimizerConfig {
    double base_lr{0.001};
    double momentum{0.9};
    int lr_decay_every{3000};
    double lr_decay_factor{0.1};
};

struct TrainingConfig {
    int n_train{5};  // classes per episode
    int n_s{5};      // support samples per class
    int n_q{5};      // query samples per class
    SynthesisConfig synthesis;
    Ablation ablation{Ablation::FULL};
    OptimizerConfig optimizer;
    long total_episodes{10000};
    std::uint64_t rng_seed{0};
    int checkpoint_every{1000};
};

// One training unit. Support and query own their samples; novel-class items
// may be augmented copies. Samples are grouped per class: block i covers
// rows [i*n_s, (i+1)*n_s) of support and [i*n_q, (i+1)*n_q) of query.
// S2 draws are recorded at construction so the loss is a deterministic
// function of the episode.
struct Episode {
    std::vector<int> classes;  // table-row indices, size n_train
    std::vector<LabeledSample> support;
    std::vector<LabeledSample> query;
    int n_s{0};
    int n_q{0};
    std::vector<std::optional<ConvexDraw>> draws;  // per class position
};

// Uniform class sampling from the whole class set, without replacement and
// with no base/novel quota. Base classes draw n_s + n_q distinct samples;
// novel classes grow their n_few shots to n_s + n_q via step-1 augmentation
// (or plain duplication when S1 is disabled) and split them disjointly.
// `class_to_table` remaps split class indices to table rows (identity when
// empty), used when extending an existing table.
Episode build_episode(const DatasetSplit& split, const TrainingConfig& config,
                      const std::vector<std::unique_ptr<Augmenter>>& augmenters, Rng& rng,
                      const std::vector<int>& class_to_table = {});

// Per-class weights for collapsing support features to one representation
// per class: uniform means, or the recorded convex draw where one exists.
std::vector<RowGroup> episodic_groups(const Episode& episode);

// Plain (non-graph) episodic representations from precomputed support
// features, one row per episode class.
Mat episodic_representations(const Mat& support_features, const Episode& episode);

// Cross entropy of softmax over negated raw-space distances to the episode's
// class references. Standalone form of the query-classification term.
double classification_loss(const Vec& query_feature, int true_index, const Mat& references);

struct EpisodeGraph {
    Node* registration_loss{nullptr};    // null when the ablation skips R
    Node* classification_loss{nullptr};
    Node* total{nullptr};
    Node* support_features{nullptr};
    Node* episodic_reps{nullptr};
    Node* references{nullptr};  // soft-selected xi, or the reps without R
};

// The full per-episode loss. Support and query go through the extractor as
// one batch; with registration enabled the summed registration loss over
// episode classes joins the summed query cross entropy.
EpisodeGraph episode_loss_graph(Tape& t, Model& model, const Episode& episode, bool train);

struct EpisodeLoss {
    double total{0.0};
    double registration{0.0};
    double classification{0.0};
};

EpisodeLoss episode_loss(Model& model, const Episode& episode, bool train = false);

// g_c = mean extractor feature over every training sample of the class.
GlobalTable init_global_representations(FeatureExtractor& extractor, const DatasetSplit& split);

// Recompute table entries from the trained extractor along the ablation's
// representation path: base classes always mean features; novel classes mean
// (B), mean over the augmented pool (S1), or one synthesized sample (S1+S2).
// Models without registration use this before generalized evaluation.
void refresh_table_from_features(Model& model, const DatasetSplit& split, Rng& rng);

struct EpisodeLogRow {
    long episode{0};
    double registration_loss{0.0};
    double classification_loss{0.0};
    double total_loss{0.0};
    double lr{0.0};
    double wall_time_s{0.0};
};

struct TrainState {
    long episode{0};
    std::string rng_state;  // serialized; empty = fresh from config seed
};

struct TrainHooks {
    std::function<void(const EpisodeLogRow&)> on_episode;
    // Invoked every checkpoint_every episodes with the exact resume state.
    std::function<void(const TrainState&)> on_checkpoint;
};

struct TrainResult {
    long episodes_run{0};
    double final_loss{0.0};
    TrainState state;
};

// Momentum SGD over extractor, both embeddings, and the whole table, with
// stepwise learning-rate decay. Aborts with NumericalError (episode class
// list and rng state in the message) if the loss goes non-finite.
TrainResult train(Model& model, const DatasetSplit& split, const TrainingConfig& config,
                  const TrainHooks& hooks = {}, const TrainState& resume = {});

// Enlarges the table with the new split's classes (entries start at their
// shot-feature means) and trains episodes over the new classes only, with
// gradients applied solely to the new table rows. Everything pre-existing
// stays bit-identical.
TrainResult extend_new_classes(Model& model, const DatasetSplit& new_split,
                               const TrainingConfig& config, const TrainHooks& hooks = {});

}  // namespace gcr
