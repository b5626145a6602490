#pragma once

// Model checkpoints: an HDF5 container keyed by parameter name (values,
// momentum buffers, batch-norm running statistics, rng state, episode
// counter) plus a JSON manifest sidecar at <path>.json recording the
// architecture, class order, and input normalisation.

#include "gcr/model.hpp"
#include "gcr/trainer.hpp"

#include <string>

namespace gcr {

struct CheckpointExtras {
    long episode{0};
    std::string rng_state;
};

void save_checkpoint(Model& model, const std::string& path,
                     const CheckpointExtras& extras = {});

Model load_checkpoint(const std::string& path, CheckpointExtras* extras = nullptr);

std::string to_string(ExtractorProfile profile);
ExtractorProfile extractor_profile_from_string(const std::string& s);

// FNV-1a over the raw table bytes; the extension workflow prints it before
// and after to make the freeze contract auditable.
std::string table_checksum(const GlobalTable& table);

}  // namespace gcr
