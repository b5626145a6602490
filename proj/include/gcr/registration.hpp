#pragma once

// Registration: embedding-space similarity between representations and the
// global class-representation table, the registration loss, and soft
// selection of global representations.

#include "gcr/autodiff.hpp"
#include "gcr/nn.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace gcr {

// One trainable vector per class, base and novel alike. Row order is fixed
// for the lifetime of a model; checkpoints carry the class-name manifest so
// tables stay joinable with dataset splits.
class GlobalTable {
  public:
    GlobalTable() = default;
    GlobalTable(std::vector<std::string> class_names, Mat initial);

    int size() const { return static_cast<int>(class_names_.size()); }
    int dim() const { return static_cast<int>(reps_.value.cols()); }
    int index_of(const std::string& name) const;
    const std::string& name_of(int index) const { return class_names_[index]; }
    const std::vector<std::string>& class_names() const { return class_names_; }

    const Mat& values() const { return reps_.value; }
    Parameter& parameter() { return reps_; }

    // Extension path: appends rows for new classes; name collisions are
    // contract errors. Gradient and momentum buffers restart at zero.
    void append(const std::vector<std::string>& names, const Mat& rows);

  private:
    std::vector<std::string> class_names_;
    std::unordered_map<std::string, int> index_;
    Parameter reps_;
};

struct RegistrationConfig {
    int embed_width{512};
    double init_std{0.01};  // zero-mean Gaussian init for the two embeddings
    // Bypass the embeddings entirely (theta = phi = identity); miniature
    // fixtures with hand-computable arithmetic.
    bool identity{false};
};

// The two embeddings: theta for sample/episodic representations, phi for
// global representations. Same architecture (fc + batchnorm + relu),
// independent weights.
class RegistrationModule {
  public:
    RegistrationModule() = default;
    RegistrationModule(int rep_dim, const RegistrationConfig& config);

    void init(Rng& rng);
    const RegistrationConfig& config() const { return config_; }
    int rep_dim() const { return rep_dim_; }

    Node* embed_reps(Tape& t, Node* reps, bool train);
    Node* embed_table(Tape& t, Node* table, bool train);

    // Similarity scores d(i, j) = -|theta(r_i) - phi(g_j)|_2, an m x N node.
    // During training phi sees the full table as one batch.
    Node* scores(Tape& t, Node* reps, Node* table, bool train);

    std::vector<Parameter*> parameters();
    std::vector<BatchNorm*> batchnorms();

  private:
    RegistrationConfig config_;
    int rep_dim_{0};
    Linear theta_fc_, phi_fc_;
    BatchNorm theta_bn_, phi_bn_;
};

// Probability vector over the table's fixed class order plus the pre-softmax
// scores (the negated embedded distances).
struct SimilarityVector {
    Vec probabilities;
    Vec distances;

    int argmax() const;
};

SimilarityVector similarity(const Vec& feature, GlobalTable& table, RegistrationModule& module,
                            bool train = false);

// Batched variant: each row of `reps` is one representation.
std::pair<Mat, Mat> similarity_batch(const Mat& reps, GlobalTable& table,
                                     RegistrationModule& module, bool train = false);

// Cross entropy of the similarity vector against the true class.
double registration_loss(const Vec& rep, int class_index, GlobalTable& table,
                         RegistrationModule& module, bool train = false);

// Soft selection: xi = sum_j V_j g_j, a convex combination of table rows.
Vec select_global(const SimilarityVector& v, const GlobalTable& table);

// Fraction of representations whose similarity argmax is their true class.
double registration_accuracy(const Mat& reps, const std::vector<int>& class_indices,
                             GlobalTable& table, RegistrationModule& module);

// Differentiable registration subgraph shared by the episodic loss.
struct RegistrationGraph {
    Node* scores{nullptr};         // m x N
    Node* probabilities{nullptr};  // m x N
    Node* loss{nullptr};           // 1 x 1 summed cross entropy
    Node* selected{nullptr};       // m x d soft-selected representations
};

RegistrationGraph register_representations(Tape& t, Node* reps,
                                           const std::vector<int>& class_indices,
                                           GlobalTable& table, RegistrationModule& module,
                                           bool train, bool want_selection);

}  // namespace gcr
