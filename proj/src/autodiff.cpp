#include "gcr/autodiff.hpp"

#include "gcr/nn.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gcr {

namespace {

bool any_grad(std::initializer_list<Node*> parents) {
    for (Node* p : parents)
        if (p && p->requires_grad) return true;
    return false;
}

}  // namespace

Node* Tape::input(Mat v) {
    auto node = std::make_unique<Node>();
    node->value = std::move(v);
    node->requires_grad = false;
    Node* raw = node.get();
    nodes_.push_back(std::move(node));
    return raw;
}

Node* Tape::variable(Mat v) {
    Node* n = input(std::move(v));
    n->requires_grad = true;
    return n;
}

Node* Tape::leaf(Parameter& param) {
    auto it = leaf_cache_.find(&param);
    if (it != leaf_cache_.end()) return it->second;
    Node* n = variable(param.value);
    bound_.emplace_back(&param, n);
    leaf_cache_.emplace(&param, n);
    return n;
}

Node* Tape::make(Mat value, std::initializer_list<Node*> parents) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->requires_grad = any_grad(parents);
    Node* raw = node.get();
    nodes_.push_back(std::move(node));
    return raw;
}

void Tape::backward(Node* root) {
    require<ContractError>(!swept_, "tape: backward called twice");
    require<ContractError>(root->value.rows() == 1 && root->value.cols() == 1,
                           "tape: backward root must be scalar");
    swept_ = true;
    root->grad_buf()(0, 0) = 1.0;

    // Nodes were appended in creation order, so reverse order is a valid
    // topological sweep. Nodes created after the root cannot feed it.
    bool seen_root = false;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node* n = it->get();
        if (!seen_root) {
            if (n == root) seen_root = true;
            else continue;
        }
        if (n->requires_grad && n->grad_ready && n->backward) n->backward();
    }
    for (auto& [param, node] : bound_) {
        if (node->grad_ready) param->grad += node->grad;
    }
}

// ---------------------------------------------------------------------------
// elementwise / linear algebra
// ---------------------------------------------------------------------------

Node* add(Tape& t, Node* a, Node* b) {
    require<ContractError>(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
                           "add: shape mismatch");
    Node* out = t.make(a->value + b->value, {a, b});
    out->backward = [a, b, out] {
        if (a->requires_grad) a->grad_buf() += out->grad;
        if (b->requires_grad) b->grad_buf() += out->grad;
    };
    return out;
}

Node* scale(Tape& t, Node* a, double s) {
    Node* out = t.make(a->value * s, {a});
    out->backward = [a, out, s] {
        if (a->requires_grad) a->grad_buf() += s * out->grad;
    };
    return out;
}

Node* matmul(Tape& t, Node* a, Node* b) {
    require<ContractError>(a->value.cols() == b->value.rows(), "matmul: inner dim mismatch");
    Node* out = t.make(a->value * b->value, {a, b});
    out->backward = [a, b, out] {
        if (a->requires_grad) a->grad_buf() += out->grad * b->value.transpose();
        if (b->requires_grad) b->grad_buf() += a->value.transpose() * out->grad;
    };
    return out;
}

Node* affine(Tape& t, Node* x, Node* W, Node* b) {
    require<ContractError>(x->value.cols() == W->value.cols(), "affine: input dim mismatch");
    require<ContractError>(b->value.rows() == 1 && b->value.cols() == W->value.rows(),
                           "affine: bias shape mismatch");
    Mat y = x->value * W->value.transpose();
    y.rowwise() += b->value.row(0);
    Node* out = t.make(std::move(y), {x, W, b});
    out->backward = [x, W, b, out] {
        if (x->requires_grad) x->grad_buf() += out->grad * W->value;
        if (W->requires_grad) W->grad_buf() += out->grad.transpose() * x->value;
        if (b->requires_grad) b->grad_buf().row(0) += out->grad.colwise().sum();
    };
    return out;
}

Node* relu(Tape& t, Node* x) {
    Node* out = t.make(x->value.cwiseMax(0.0), {x});
    out->backward = [x, out] {
        if (!x->requires_grad) return;
        Mat& gx = x->grad_buf();
        const Mat& v = x->value;
        const Mat& gy = out->grad;
        for (Eigen::Index i = 0; i < v.rows(); ++i)
            for (Eigen::Index j = 0; j < v.cols(); ++j)
                if (v(i, j) > 0.0) gx(i, j) += gy(i, j);
    };
    return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

// Patches for 3x3/pad1/stride1: column p of the result is the flattened
// receptive field of output pixel p, giving Y = W * patches.
void im2col3x3(const double* img, int C, int H, int W, Mat& patches) {
    const int S = H * W;
    patches.setZero();
    for (int c = 0; c < C; ++c) {
        const double* plane = img + c * S;
        for (int ky = -1; ky <= 1; ++ky) {
            for (int kx = -1; kx <= 1; ++kx) {
                const int row = c * 9 + (ky + 1) * 3 + (kx + 1);
                for (int y = 0; y < H; ++y) {
                    const int sy = y + ky;
                    if (sy < 0 || sy >= H) continue;
                    const int x0 = std::max(0, -kx);
                    const int x1 = std::min(W, W - kx);
                    for (int x = x0; x < x1; ++x)
                        patches(row, y * W + x) = plane[sy * W + x + kx];
                }
            }
        }
    }
}

void col2im3x3_add(const Mat& patches, int C, int H, int W, double* img) {
    const int S = H * W;
    for (int c = 0; c < C; ++c) {
        double* plane = img + c * S;
        for (int ky = -1; ky <= 1; ++ky) {
            for (int kx = -1; kx <= 1; ++kx) {
                const int row = c * 9 + (ky + 1) * 3 + (kx + 1);
                for (int y = 0; y < H; ++y) {
                    const int sy = y + ky;
                    if (sy < 0 || sy >= H) continue;
                    const int x0 = std::max(0, -kx);
                    const int x1 = std::min(W, W - kx);
                    for (int x = x0; x < x1; ++x)
                        plane[sy * W + x + kx] += patches(row, y * W + x);
                }
            }
        }
    }
}

}  // namespace

Node* conv3x3(Tape& t, Node* x, Node* W, Node* b, ImageShape in) {
    const int n = static_cast<int>(x->value.rows());
    const int S = in.pixels();
    require<ContractError>(x->value.cols() == in.numel(), "conv3x3: input shape mismatch");
    require<ContractError>(W->value.cols() == in.channels * 9, "conv3x3: weight shape mismatch");
    const int out_ch = static_cast<int>(W->value.rows());
    require<ContractError>(b->value.cols() == out_ch, "conv3x3: bias shape mismatch");

    Mat y(n, out_ch * S);
#pragma omp parallel
    {
        Mat patches(in.channels * 9, S);
#pragma omp for schedule(static)
        for (int i = 0; i < n; ++i) {
            im2col3x3(x->value.row(i).data(), in.channels, in.height, in.width, patches);
            Eigen::Map<Mat> yi(y.row(i).data(), out_ch, S);
            yi.noalias() = W->value * patches;
            yi.colwise() += b->value.row(0).transpose();
        }
    }

    Node* out = t.make(std::move(y), {x, W, b});
    out->backward = [x, W, b, out, in, n, S, out_ch] {
        const bool need_dx = x->requires_grad;
        const bool need_dw = W->requires_grad;
        if (need_dx) x->grad_buf();
        if (need_dw) {
            W->grad_buf();
            b->grad_buf();
        }
#ifdef _OPENMP
        const int max_threads = omp_get_max_threads();
#else
        const int max_threads = 1;
#endif
        std::vector<Mat> dW_acc(max_threads, Mat::Zero(out_ch, in.channels * 9));
        std::vector<Mat> db_acc(max_threads, Mat::Zero(1, out_ch));
#pragma omp parallel
        {
#ifdef _OPENMP
            const int tid = omp_get_thread_num();
#else
            const int tid = 0;
#endif
            Mat patches(in.channels * 9, S);
            Mat dpatches(in.channels * 9, S);
#pragma omp for schedule(static)
            for (int i = 0; i < n; ++i) {
                Eigen::Map<const Mat> gyi(out->grad.row(i).data(), out_ch, S);
                if (need_dw) {
                    im2col3x3(x->value.row(i).data(), in.channels, in.height, in.width, patches);
                    dW_acc[tid].noalias() += gyi * patches.transpose();
                    db_acc[tid].row(0).transpose() += gyi.rowwise().sum();
                }
                if (need_dx) {
                    dpatches.noalias() = W->value.transpose() * gyi;
                    col2im3x3_add(dpatches, in.channels, in.height, in.width,
                                  x->grad.row(i).data());
                }
            }
        }
        if (need_dw) {
            // Fixed-order reduction keeps repeated runs bit-identical.
            for (int tid = 0; tid < max_threads; ++tid) {
                W->grad += dW_acc[tid];
                b->grad += db_acc[tid];
            }
        }
    };
    return out;
}

Node* maxpool2x2(Tape& t, Node* x, ImageShape in) {
    const int n = static_cast<int>(x->value.rows());
    require<ContractError>(x->value.cols() == in.numel(), "maxpool2x2: input shape mismatch");
    const int oh = in.height / 2;
    const int ow = in.width / 2;
    require<ContractError>(oh >= 1 && ow >= 1, "maxpool2x2: input too small");
    const int out_cols = in.channels * oh * ow;

    Mat y(n, out_cols);
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n) * out_cols);
    for (int i = 0; i < n; ++i) {
        const double* img = x->value.row(i).data();
        for (int c = 0; c < in.channels; ++c) {
            const double* plane = img + c * in.pixels();
            for (int py = 0; py < oh; ++py) {
                for (int px = 0; px < ow; ++px) {
                    int best = (2 * py) * in.width + 2 * px;
                    double best_v = plane[best];
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const int idx = (2 * py + dy) * in.width + (2 * px + dx);
                            if (plane[idx] > best_v) {
                                best_v = plane[idx];
                                best = idx;
                            }
                        }
                    }
                    const int o = c * oh * ow + py * ow + px;
                    y(i, o) = best_v;
                    (*argmax)[static_cast<std::size_t>(i) * out_cols + o] =
                        c * in.pixels() + best;
                }
            }
        }
    }

    Node* out = t.make(std::move(y), {x});
    out->backward = [x, out, argmax, n, out_cols] {
        if (!x->requires_grad) return;
        Mat& gx = x->grad_buf();
        for (int i = 0; i < n; ++i)
            for (int o = 0; o < out_cols; ++o)
                gx(i, (*argmax)[static_cast<std::size_t>(i) * out_cols + o]) += out->grad(i, o);
    };
    return out;
}

// ---------------------------------------------------------------------------
// batch normalisation
// ---------------------------------------------------------------------------

Node* batchnorm(Tape& t, Node* x, Node* gamma, Node* beta, int spatial, bool train,
                Vec& running_mean, Vec& running_var, double momentum, double eps) {
    const int n = static_cast<int>(x->value.rows());
    const int C = static_cast<int>(gamma->value.cols());
    require<ContractError>(x->value.cols() == static_cast<Eigen::Index>(C) * spatial,
                           "batchnorm: channel/spatial mismatch");

    const double count = static_cast<double>(n) * spatial;
    Vec mean(C), var(C);
    if (train) {
        require<ContractError>(count >= 1, "batchnorm: empty batch");
        for (int c = 0; c < C; ++c) {
            double s = 0.0, s2 = 0.0;
            for (int i = 0; i < n; ++i) {
                const double* row = x->value.row(i).data() + c * spatial;
                for (int p = 0; p < spatial; ++p) {
                    s += row[p];
                    s2 += row[p] * row[p];
                }
            }
            mean(c) = s / count;
            var(c) = s2 / count - mean(c) * mean(c);
            if (var(c) < 0.0) var(c) = 0.0;  // guard fp cancellation
        }
        running_mean = (1.0 - momentum) * running_mean + momentum * mean;
        running_var = (1.0 - momentum) * running_var + momentum * var;
    } else {
        mean = running_mean;
        var = running_var;
    }

    Vec inv_std(C);
    for (int c = 0; c < C; ++c) inv_std(c) = 1.0 / std::sqrt(var(c) + eps);

    Mat xhat(n, x->value.cols());
    Mat y(n, x->value.cols());
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < C; ++c) {
            const double g = gamma->value(0, c);
            const double bt = beta->value(0, c);
            const double m = mean(c);
            const double is = inv_std(c);
            const double* xin = x->value.row(i).data() + c * spatial;
            double* xh = xhat.row(i).data() + c * spatial;
            double* yo = y.row(i).data() + c * spatial;
            for (int p = 0; p < spatial; ++p) {
                xh[p] = (xin[p] - m) * is;
                yo[p] = g * xh[p] + bt;
            }
        }
    }

    Node* out = t.make(std::move(y), {x, gamma, beta});
    auto xhat_keep = std::make_shared<Mat>(std::move(xhat));
    auto inv_keep = std::make_shared<Vec>(std::move(inv_std));
    out->backward = [x, gamma, beta, out, xhat_keep, inv_keep, n, C, spatial, train, count] {
        const Mat& gy = out->grad;
        const Mat& xh = *xhat_keep;
        // Per-channel reductions shared by all gradient terms.
        Vec sum_gy = Vec::Zero(C), sum_gy_xhat = Vec::Zero(C);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < C; ++c) {
                const double* gyr = gy.row(i).data() + c * spatial;
                const double* xhr = xh.row(i).data() + c * spatial;
                for (int p = 0; p < spatial; ++p) {
                    sum_gy(c) += gyr[p];
                    sum_gy_xhat(c) += gyr[p] * xhr[p];
                }
            }
        }
        if (gamma->requires_grad) {
            for (int c = 0; c < C; ++c) gamma->grad_buf()(0, c) += sum_gy_xhat(c);
        }
        if (beta->requires_grad) {
            for (int c = 0; c < C; ++c) beta->grad_buf()(0, c) += sum_gy(c);
        }
        if (!x->requires_grad) return;
        Mat& gx = x->grad_buf();
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < C; ++c) {
                const double g = gamma->value(0, c);
                const double is = (*inv_keep)(c);
                const double* gyr = gy.row(i).data() + c * spatial;
                const double* xhr = xh.row(i).data() + c * spatial;
                double* gxr = gx.row(i).data() + c * spatial;
                if (train) {
                    // Full backward through the batch statistics.
                    const double mg = sum_gy(c) / count;
                    const double mgx = sum_gy_xhat(c) / count;
                    for (int p = 0; p < spatial; ++p)
                        gxr[p] += g * is * (gyr[p] - mg - xhr[p] * mgx);
                } else {
                    for (int p = 0; p < spatial; ++p) gxr[p] += g * is * gyr[p];
                }
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// grouping / reductions
// ---------------------------------------------------------------------------

Node* group_weighted_rows(Tape& t, Node* x, const std::vector<RowGroup>& groups) {
    const int G = static_cast<int>(groups.size());
    require<ContractError>(G > 0, "group_weighted_rows: no groups");
    Mat y = Mat::Zero(G, x->value.cols());
    for (int g = 0; g < G; ++g) {
        const auto& grp = groups[g];
        require<ContractError>(grp.rows.size() == grp.weights.size() && !grp.rows.empty(),
                               "group_weighted_rows: malformed group");
        for (std::size_t k = 0; k < grp.rows.size(); ++k) {
            require<ContractError>(grp.rows[k] >= 0 && grp.rows[k] < x->value.rows(),
                                   "group_weighted_rows: row index out of range");
            y.row(g) += grp.weights[k] * x->value.row(grp.rows[k]);
        }
    }
    Node* out = t.make(std::move(y), {x});
    auto groups_keep = std::make_shared<std::vector<RowGroup>>(groups);
    out->backward = [x, out, groups_keep] {
        if (!x->requires_grad) return;
        Mat& gx = x->grad_buf();
        for (std::size_t g = 0; g < groups_keep->size(); ++g) {
            const auto& grp = (*groups_keep)[g];
            for (std::size_t k = 0; k < grp.rows.size(); ++k)
                gx.row(grp.rows[k]) += grp.weights[k] * out->grad.row(static_cast<int>(g));
        }
    };
    return out;
}

Node* gather_rows(Tape& t, Node* x, const std::vector<int>& rows) {
    Mat y(static_cast<int>(rows.size()), x->value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require<ContractError>(rows[i] >= 0 && rows[i] < x->value.rows(),
                               "gather_rows: index out of range");
        y.row(static_cast<int>(i)) = x->value.row(rows[i]);
    }
    Node* out = t.make(std::move(y), {x});
    auto rows_keep = std::make_shared<std::vector<int>>(rows);
    out->backward = [x, out, rows_keep] {
        if (!x->requires_grad) return;
        Mat& gx = x->grad_buf();
        for (std::size_t i = 0; i < rows_keep->size(); ++i)
            gx.row((*rows_keep)[i]) += out->grad.row(static_cast<int>(i));
    };
    return out;
}

// ---------------------------------------------------------------------------
// distances and losses
// ---------------------------------------------------------------------------

Node* pairwise_l2(Tape& t, Node* a, Node* b, double eps) {
    require<ContractError>(a->value.cols() == b->value.cols(), "pairwise_l2: dim mismatch");
    const int m = static_cast<int>(a->value.rows());
    const int k = static_cast<int>(b->value.rows());
    Mat d(m, k);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j)
            d(i, j) = std::sqrt((a->value.row(i) - b->value.row(j)).squaredNorm() + eps);
    Node* out = t.make(std::move(d), {a, b});
    out->backward = [a, b, out, m, k] {
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < k; ++j) {
                const double g = out->grad(i, j);
                if (g == 0.0) continue;
                const double scale = g / out->value(i, j);
                if (a->requires_grad)
                    a->grad_buf().row(i) += scale * (a->value.row(i) - b->value.row(j));
                if (b->requires_grad)
                    b->grad_buf().row(j) -= scale * (a->value.row(i) - b->value.row(j));
            }
        }
    };
    return out;
}

Node* softmax_rows(Tape& t, Node* z) {
    Mat p(z->value.rows(), z->value.cols());
    for (Eigen::Index i = 0; i < z->value.rows(); ++i) {
        const double zmax = z->value.row(i).maxCoeff();
        p.row(i) = (z->value.row(i).array() - zmax).exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    Node* out = t.make(std::move(p), {z});
    out->backward = [z, out] {
        if (!z->requires_grad) return;
        Mat& gz = z->grad_buf();
        for (Eigen::Index i = 0; i < out->value.rows(); ++i) {
            const double dot = out->grad.row(i).cwiseProduct(out->value.row(i)).sum();
            gz.row(i) += (out->value.row(i).array() * (out->grad.row(i).array() - dot)).matrix();
        }
    };
    return out;
}

Node* nll_rows(Tape& t, Node* p, const std::vector<int>& targets) {
    require<ContractError>(static_cast<Eigen::Index>(targets.size()) == p->value.rows(),
                           "nll_rows: target count mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        require<ContractError>(targets[i] >= 0 && targets[i] < p->value.cols(),
                               "nll_rows: target out of range");
        loss -= std::log(p->value(static_cast<Eigen::Index>(i), targets[i]));
    }
    Node* out = t.make(Mat::Constant(1, 1, loss), {p});
    auto targets_keep = std::make_shared<std::vector<int>>(targets);
    out->backward = [p, out, targets_keep] {
        if (!p->requires_grad) return;
        Mat& gp = p->grad_buf();
        const double g = out->grad(0, 0);
        for (std::size_t i = 0; i < targets_keep->size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            gp(r, (*targets_keep)[i]) -= g / p->value(r, (*targets_keep)[i]);
        }
    };
    return out;
}

Node* softmax_ce_rows(Tape& t, Node* z, const std::vector<int>& targets) {
    require<ContractError>(static_cast<Eigen::Index>(targets.size()) == z->value.rows(),
                           "softmax_ce_rows: target count mismatch");
    const Eigen::Index n = z->value.rows();
    Mat probs(n, z->value.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        require<ContractError>(targets[i] >= 0 && targets[i] < z->value.cols(),
                               "softmax_ce_rows: target out of range");
        const double zmax = z->value.row(i).maxCoeff();
        const Eigen::ArrayXd shifted = z->value.row(i).transpose().array() - zmax;
        const double lse = std::log(shifted.exp().sum());
        probs.row(i) = (shifted - lse).exp().matrix().transpose();
        loss += lse - shifted(targets[i]);
    }
    Node* out = t.make(Mat::Constant(1, 1, loss), {z});
    auto probs_keep = std::make_shared<Mat>(std::move(probs));
    auto targets_keep = std::make_shared<std::vector<int>>(targets);
    out->backward = [z, out, probs_keep, targets_keep] {
        if (!z->requires_grad) return;
        Mat& gz = z->grad_buf();
        const double g = out->grad(0, 0);
        gz += g * (*probs_keep);
        for (std::size_t i = 0; i < targets_keep->size(); ++i)
            gz(static_cast<Eigen::Index>(i), (*targets_keep)[i]) -= g;
    };
    return out;
}

Node* sum_all(Tape& t, Node* x) {
    Node* out = t.make(Mat::Constant(1, 1, x->value.sum()), {x});
    out->backward = [x, out] {
        if (x->requires_grad) x->grad_buf().array() += out->grad(0, 0);
    };
    return out;
}

}  // namespace gcr
