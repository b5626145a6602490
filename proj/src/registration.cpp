#include "gcr/registration.hpp"

#include <cmath>

namespace gcr {

GlobalTable::GlobalTable(std::vector<std::string> class_names, Mat initial)
    : class_names_(std::move(class_names)) {
    require<ContractError>(static_cast<Eigen::Index>(class_names_.size()) == initial.rows(),
                           "global table: one row per class required");
    for (std::size_t i = 0; i < class_names_.size(); ++i) {
        auto [it, inserted] = index_.emplace(class_names_[i], static_cast<int>(i));
        require<ContractError>(inserted, "global table: duplicate class " + class_names_[i]);
    }
    reps_.reset("table.reps", static_cast<int>(initial.rows()), static_cast<int>(initial.cols()));
    reps_.value = std::move(initial);
}

int GlobalTable::index_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

void GlobalTable::append(const std::vector<std::string>& names, const Mat& rows) {
    require<ContractError>(static_cast<Eigen::Index>(names.size()) == rows.rows(),
                           "global table: one row per new class required");
    require<ContractError>(rows.cols() == reps_.value.cols(),
                           "global table: dimension mismatch on append");
    for (const auto& name : names)
        require<ContractError>(index_.find(name) == index_.end(),
                               "global table: class id collision on " + name);

    Mat merged(reps_.value.rows() + rows.rows(), reps_.value.cols());
    merged.topRows(reps_.value.rows()) = reps_.value;
    merged.bottomRows(rows.rows()) = rows;
    for (std::size_t i = 0; i < names.size(); ++i) {
        index_.emplace(names[i], static_cast<int>(class_names_.size()));
        class_names_.push_back(names[i]);
    }
    reps_.reset("table.reps", static_cast<int>(merged.rows()), static_cast<int>(merged.cols()));
    reps_.value = std::move(merged);
}

RegistrationModule::RegistrationModule(int rep_dim, const RegistrationConfig& config)
    : config_(config), rep_dim_(rep_dim) {
    if (!config.identity) {
        theta_fc_.reset("registration.theta.fc", rep_dim, config.embed_width);
        theta_bn_.reset("registration.theta.bn", config.embed_width);
        phi_fc_.reset("registration.phi.fc", rep_dim, config.embed_width);
        phi_bn_.reset("registration.phi.bn", config.embed_width);
    }
}

void RegistrationModule::init(Rng& rng) {
    if (config_.identity) return;
    theta_fc_.init_gaussian(rng, config_.init_std);
    phi_fc_.init_gaussian(rng, config_.init_std);
}

Node* RegistrationModule::embed_reps(Tape& t, Node* reps, bool train) {
    if (config_.identity) return reps;
    return relu(t, theta_bn_.forward(t, theta_fc_.forward(t, reps), 1, train));
}

Node* RegistrationModule::embed_table(Tape& t, Node* table, bool train) {
    if (config_.identity) return table;
    return relu(t, phi_bn_.forward(t, phi_fc_.forward(t, table), 1, train));
}

Node* RegistrationModule::scores(Tape& t, Node* reps, Node* table, bool train) {
    require<ContractError>(reps->value.cols() == rep_dim_ || config_.identity,
                           "registration: representation dimension mismatch");
    require<ContractError>(reps->value.cols() == table->value.cols(),
                           "registration: table dimension mismatch");
    Node* d = pairwise_l2(t, embed_reps(t, reps, train), embed_table(t, table, train));
    return scale(t, d, -1.0);
}

std::vector<Parameter*> RegistrationModule::parameters() {
    if (config_.identity) return {};
    std::vector<Parameter*> out;
    for (Parameter* p : theta_fc_.parameters()) out.push_back(p);
    for (Parameter* p : theta_bn_.parameters()) out.push_back(p);
    for (Parameter* p : phi_fc_.parameters()) out.push_back(p);
    for (Parameter* p : phi_bn_.parameters()) out.push_back(p);
    return out;
}

std::vector<BatchNorm*> RegistrationModule::batchnorms() {
    if (config_.identity) return {};
    return {&theta_bn_, &phi_bn_};
}

int SimilarityVector::argmax() const {
    Eigen::Index best = 0;
    probabilities.maxCoeff(&best);
    return static_cast<int>(best);
}

RegistrationGraph register_representations(Tape& t, Node* reps,
                                           const std::vector<int>& class_indices,
                                           GlobalTable& table, RegistrationModule& module,
                                           bool train, bool want_selection) {
    for (int c : class_indices)
        require<ContractError>(c >= 0 && c < table.size(),
                               "registration: class index outside table");
    Node* table_node = t.leaf(table.parameter());
    RegistrationGraph g;
    g.scores = module.scores(t, reps, table_node, train);
    g.probabilities = softmax_rows(t, g.scores);
    if (!class_indices.empty()) g.loss = nll_rows(t, g.probabilities, class_indices);
    if (want_selection) g.selected = matmul(t, g.probabilities, table_node);
    return g;
}

std::pair<Mat, Mat> similarity_batch(const Mat& reps, GlobalTable& table,
                                     RegistrationModule& module, bool train) {
    Tape t;
    RegistrationGraph g = register_representations(t, t.input(reps), {}, table, module, train,
                                                   /*want_selection=*/false);
    return {g.probabilities->value, g.scores->value};
}

SimilarityVector similarity(const Vec& feature, GlobalTable& table, RegistrationModule& module,
                            bool train) {
    require<ContractError>(feature.size() == table.dim(), "similarity: dimension mismatch");
    auto [probs, scores] = similarity_batch(feature.transpose(), table, module, train);
    SimilarityVector v;
    v.probabilities = probs.row(0).transpose();
    v.distances = scores.row(0).transpose();
    return v;
}

double registration_loss(const Vec& rep, int class_index, GlobalTable& table,
                         RegistrationModule& module, bool train) {
    require<ContractError>(class_index >= 0 && class_index < table.size(),
                           "registration_loss: unknown class");
    Tape t;
    RegistrationGraph g = register_representations(t, t.input(rep.transpose()), {class_index},
                                                   table, module, train, false);
    return g.loss->value(0, 0);
}

Vec select_global(const SimilarityVector& v, const GlobalTable& table) {
    require<ContractError>(v.probabilities.size() == table.size(),
                           "select_global: similarity length must match table size");
    return table.values().transpose() * v.probabilities;
}

double registration_accuracy(const Mat& reps, const std::vector<int>& class_indices,
                             GlobalTable& table, RegistrationModule& module) {
    require<ContractError>(reps.rows() > 0, "registration_accuracy: empty input");
    require<ContractError>(static_cast<Eigen::Index>(class_indices.size()) == reps.rows(),
                           "registration_accuracy: label count mismatch");
    auto [probs, scores] = similarity_batch(reps, table, module, /*train=*/false);
    int correct = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index best = 0;
        probs.row(i).maxCoeff(&best);
        if (static_cast<int>(best) == class_indices[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probs.rows());
}

}  // namespace gcr
