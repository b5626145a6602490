#pragma once

// Experiment configuration: a sectioned key=value file fully determines a
// run. Unknown sections or keys are rejected; the resolved configuration
// (defaults materialised) is written next to the outputs.

#include "gcr/data.hpp"
#include "gcr/evaluation.hpp"
#include "gcr/features.hpp"
#include "gcr/model.hpp"
#include "gcr/trainer.hpp"

#include <map>
#include <string>

namespace gcr {

enum class DatasetKind { synthetic, synthetic_file, omniglot, miniimagenet };

struct DatasetSection {
    DatasetKind kind{DatasetKind::synthetic};
    std::string root;  // image dataset root or synthetic container path
    int n_few{5};
    bool val_as_novel{false};
    SyntheticSpec synthetic;  // kind == synthetic
    // Optional generalized resample applied after loading.
    bool generalized{false};
    int per_base_train{500};
    int per_class_test{100};
    std::uint64_t seed{0};  // run seed; drives synthetic draws and resampling
};

struct ModelSection {
    int channels{64};
    int mlp_hidden{64};
    int embed_width{512};
};

struct EvalSection {
    int n_test{5};
    int n_q_test{5};
    int episodes{600};
    bool generalized{false};
    bool hard_selection{false};
    // Recompute table entries from trained features before generalized
    // evaluation: "auto" does it only for models without registration.
    std::string refresh_table{"auto"};
};

struct ExperimentConfig {
    DatasetSection dataset;
    ModelSection model;
    PretrainConfig pretrain;
    TrainingConfig training;   // [training] + [synthesis]
    EvalSection eval;
    std::string output_dir{"runs/out"};
    std::uint64_t seed{0};
    bool seed_set{false};
};

ExperimentConfig parse_experiment_config(const std::string& path);

// Materialised copy with every effective value; byte-stable for diffing.
std::string render_resolved_config(const ExperimentConfig& config);

// Dataset root override honoured by the loaders (set GCR_DATA_ROOT).
DatasetSplit load_dataset(const DatasetSection& section);

// Fresh model per the config: extractor profile follows the dataset kind.
Model build_model(const ExperimentConfig& config, const DatasetSplit& split, Rng& rng);

}  // namespace gcr
