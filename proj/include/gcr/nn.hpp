#pragma once

#include "gcr/autodiff.hpp"
#include "gcr/common.hpp"

#include <string>
#include <vector>

namespace gcr {

// Persistent trainable tensor. Gradients accumulate across Tape::backward
// calls until zero_grad(); `velocity` is the momentum-SGD buffer.
struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    Mat velocity;

    Parameter() = default;
    Parameter(std::string n, int rows, int cols) { reset(std::move(n), rows, cols); }

    void reset(std::string n, int rows, int cols) {
        name = std::move(n);
        value = Mat::Zero(rows, cols);
        grad = Mat::Zero(rows, cols);
        velocity = Mat::Zero(rows, cols);
    }
    void zero_grad() { grad.setZero(); }
    void fill_gaussian(Rng& rng, double stddev) {
        for (Eigen::Index i = 0; i < value.rows(); ++i)
            for (Eigen::Index j = 0; j < value.cols(); ++j) value(i, j) = rng.normal(0.0, stddev);
    }
};

// v <- mu*v + g;  p <- p - lr*v
class SgdMomentum {
  public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step(const std::vector<Parameter*>& params) {
        for (Parameter* p : params) {
            p->velocity = momentum_ * p->velocity + p->grad;
            p->value -= lr_ * p->velocity;
        }
    }
    static void zero_grad(const std::vector<Parameter*>& params) {
        for (Parameter* p : params) p->zero_grad();
    }

  private:
    double lr_;
    double momentum_;
};

struct Linear {
    Parameter W;  // out x in
    Parameter b;  // 1 x out

    Linear() = default;
    Linear(const std::string& name, int in, int out) { reset(name, in, out); }

    void reset(const std::string& name, int in, int out) {
        W.reset(name + ".W", out, in);
        b.reset(name + ".b", 1, out);
    }
    void init_kaiming(Rng& rng) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(W.value.cols()));
        W.fill_gaussian(rng, stddev);
        b.value.setZero();
    }
    void init_gaussian(Rng& rng, double stddev) {
        W.fill_gaussian(rng, stddev);
        b.value.setZero();
    }
    int in_dim() const { return static_cast<int>(W.value.cols()); }
    int out_dim() const { return static_cast<int>(W.value.rows()); }

    Node* forward(Tape& t, Node* x) { return affine(t, x, t.leaf(W), t.leaf(b)); }
    std::vector<Parameter*> parameters() { return {&W, &b}; }
};

struct BatchNorm {
    Parameter gamma;  // 1 x C
    Parameter beta;   // 1 x C
    Vec running_mean;
    Vec running_var;
    double momentum{0.1};

    BatchNorm() = default;
    BatchNorm(const std::string& name, int channels) { reset(name, channels); }

    void reset(const std::string& name, int channels) {
        gamma.reset(name + ".gamma", 1, channels);
        gamma.value.setOnes();
        beta.reset(name + ".beta", 1, channels);
        running_mean = Vec::Zero(channels);
        running_var = Vec::Ones(channels);
    }
    int channels() const { return static_cast<int>(gamma.value.cols()); }

    Node* forward(Tape& t, Node* x, int spatial, bool train) {
        return batchnorm(t, x, t.leaf(gamma), t.leaf(beta), spatial, train, running_mean,
                         running_var, momentum);
    }
    std::vector<Parameter*> parameters() { return {&gamma, &beta}; }
};

struct Conv3x3Layer {
    Parameter W;  // out_ch x (in_ch*9)
    Parameter b;  // 1 x out_ch

    Conv3x3Layer() = default;
    Conv3x3Layer(const std::string& name, int in_ch, int out_ch) { reset(name, in_ch, out_ch); }

    void reset(const std::string& name, int in_ch, int out_ch) {
        W.reset(name + ".W", out_ch, in_ch * 9);
        b.reset(name + ".b", 1, out_ch);
    }
    void init_kaiming(Rng& rng) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(W.value.cols()));
        W.fill_gaussian(rng, stddev);
        b.value.setZero();
    }
    int in_channels() const { return static_cast<int>(W.value.cols()) / 9; }
    int out_channels() const { return static_cast<int>(W.value.rows()); }

    Node* forward(Tape& t, Node* x, ImageShape in) {
        return conv3x3(t, x, t.leaf(W), t.leaf(b), in);
    }
    std::vector<Parameter*> parameters() { return {&W, &b}; }
};

}  // namespace gcr
