#pragma once

// Reverse-mode automatic differentiation on a per-iteration tape.
//
// Every intermediate value is a dense matrix; batches put one sample per row
// and image tensors are flattened channel-major (CHW) per row. A Tape owns
// all nodes created during one loss evaluation; Tape::backward seeds the
// scalar root, sweeps the tape in reverse creation order, and flushes leaf
// gradients into their bound Parameters.

#include "gcr/common.hpp"

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

namespace gcr {

struct Parameter;

struct Node {
    Mat value;
    Mat grad;
    bool requires_grad{false};
    bool grad_ready{false};
    std::function<void()> backward;

    // Accumulation buffer, zero-initialised on first touch.
    Mat& grad_buf() {
        if (!grad_ready) {
            grad = Mat::Zero(value.rows(), value.cols());
            grad_ready = true;
        }
        return grad;
    }
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Constant input; gradients never flow into it.
    Node* input(Mat v);

    // Differentiable leaf without a Parameter binding (unit-test use).
    Node* variable(Mat v);

    // Leaf bound to a persistent Parameter. The value is copied in; after
    // backward() the accumulated gradient is added to param.grad. Repeated
    // calls with the same Parameter return the same node.
    Node* leaf(Parameter& param);

    // Generic op node; `parents` only matters for requires_grad propagation,
    // the backward closure captures whatever it needs.
    Node* make(Mat value, std::initializer_list<Node*> parents);

    // Reverse sweep from a 1x1 root. Call at most once per tape.
    void backward(Node* root);

    std::size_t size() const { return nodes_.size(); }

  private:
    std::vector<std::unique_ptr<Node>> nodes_;
    std::vector<std::pair<Parameter*, Node*>> bound_;
    std::unordered_map<const Parameter*, Node*> leaf_cache_;
    bool swept_{false};
};

// ---- shape metadata for image ops ----

struct ImageShape {
    int channels{1};
    int height{1};
    int width{1};
    int pixels() const { return height * width; }
    int numel() const { return channels * height * width; }
};

// ---- elementwise / linear algebra ----

Node* add(Tape& t, Node* a, Node* b);
Node* scale(Tape& t, Node* a, double s);
Node* matmul(Tape& t, Node* a, Node* b);
// y = x * W^T + b, x: n x in, W: out x in, b: 1 x out broadcast over rows.
Node* affine(Tape& t, Node* x, Node* W, Node* b);
Node* relu(Tape& t, Node* x);

// ---- convnet ops (x rows are CHW-flattened images) ----

// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
// W: out_ch x (in_ch*9), b: 1 x out_ch.
Node* conv3x3(Tape& t, Node* x, Node* W, Node* b, ImageShape in);

// 2x2 max-pool, stride 2, floor on odd sizes.
Node* maxpool2x2(Tape& t, Node* x, ImageShape in);

// Batch statistics over all rows and pixels per channel; x: n x (C*S) with S
// spatial positions per channel. Updates running stats in place as a forward
// side effect when train=true; eval normalises with the running stats.
Node* batchnorm(Tape& t, Node* x, Node* gamma, Node* beta, int spatial, bool train,
                Vec& running_mean, Vec& running_var, double momentum = 0.1,
                double eps = 1e-5);

// ---- grouping / reductions ----

// Row g of the output is sum_i weights[g][i] * x.row(groups[g][i]).
struct RowGroup {
    std::vector<int> rows;
    std::vector<double> weights;
};
Node* group_weighted_rows(Tape& t, Node* x, const std::vector<RowGroup>& groups);

Node* gather_rows(Tape& t, Node* x, const std::vector<int>& rows);

// ---- distances and losses ----

// D_ij = sqrt(|a_i - b_j|^2 + eps); the epsilon keeps the gradient finite at
// coincident points.
Node* pairwise_l2(Tape& t, Node* a, Node* b, double eps = 1e-12);

// Numerically stable row softmax.
Node* softmax_rows(Tape& t, Node* z);

// -sum_r log p[r, target_r] over a probabilities node (rows sum to 1).
Node* nll_rows(Tape& t, Node* p, const std::vector<int>& targets);

// Fused log-softmax cross entropy over logits, summed across rows.
Node* softmax_ce_rows(Tape& t, Node* z, const std::vector<int>& targets);

Node* sum_all(Tape& t, Node* x);

}  // namespace gcr
