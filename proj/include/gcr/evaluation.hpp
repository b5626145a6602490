#pragma once

// Standard few-shot test protocol, generalized prediction over the joint
// label space, and the acc_a / acc_b / acc_n metrics.

#include "gcr/model.hpp"
#include "gcr/trainer.hpp"

#include <optional>
#include <vector>

namespace gcr {

struct StandardEvalConfig {
    int n_test{5};    // way
    int n_q_test{5};  // query images per class per episode
    int episodes{600};
    std::uint64_t rng_seed{0};
    // Replace soft selection with the argmax table entry (comparison runs).
    bool hard_selection{false};
};

// One test episode: classes are novel split indices, support is each class's
// training shots, queries come from the test split.
struct TestEpisode {
    std::vector<int> classes;
    std::vector<std::string> class_names;                    // joins episode to table rows
    std::vector<std::vector<const LabeledSample*>> support;  // per class position
    std::vector<const LabeledSample*> queries;               // n_q_test per class
    std::vector<int> query_targets;                          // positions into classes
};

TestEpisode sample_test_episode(const DatasetSplit& split, const StandardEvalConfig& config,
                                Rng& rng);

// Episodic representations from the support shots (same ablation path as
// training), registration + soft selection when the model has R, then
// raw-space nearest-reference assignment. Returns predicted positions into
// episode.classes; optionally reports the episode's registration accuracy.
std::vector<int> predict_episode(Model& model, const TestEpisode& episode,
                                 const SynthesisConfig& synthesis,
                                 const std::vector<std::unique_ptr<Augmenter>>& augmenters,
                                 Rng& rng, bool hard_selection = false,
                                 double* registration_acc = nullptr);

struct StandardEvalResult {
    double mean_accuracy{0.0};
    double std_accuracy{0.0};  // population std over episode accuracies
    double ci95{0.0};
    std::vector<double> per_episode;
    // Mean registration accuracy over eval-episode representations; absent
    // for models without a registration module in the loop.
    std::optional<double> registration_accuracy;
};

// Mean/std/ci95 aggregation used by evaluate_standard.
StandardEvalResult accuracy_summary(std::vector<double> per_episode);

// Independent episodes with per-episode rng streams derived from
// (seed, episode index); parallel and order-independent, reproducible.
StandardEvalResult evaluate_standard(Model& model, const DatasetSplit& split,
                                     const StandardEvalConfig& config,
                                     const SynthesisConfig& synthesis);

// Joint-label-space prediction for one sample: similarity argmax over the
// whole table for models with R, nearest raw-space table entry otherwise.
// Returns the table row.
int predict_generalized(Model& model, const Image& sample);

struct GeneralizedMetrics {
    double acc_a{0.0};
    double acc_b{0.0};
    double acc_n{0.0};
    std::vector<long> per_class_total;    // by split class index
    std::vector<long> per_class_correct;
};

// Classifies every test sample over all table classes.
GeneralizedMetrics evaluate_generalized(Model& model, const DatasetSplit& split);

}  // namespace gcr
