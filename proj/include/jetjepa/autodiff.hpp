// Reverse-mode autodiff on a dynamic tape of Mat-valued nodes. Forward calls
// append nodes in topological order; backward() replays them in reverse.
// Everything is double precision so gradients can be checked against central
// finite differences tightly.
#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "jetjepa/mat.hpp"

namespace jetjepa {

class Tape {
public:
    using Id = int;

    // --- leaves ---------------------------------------------------------

    // Non-differentiable constant.
    Id constant(Mat m) { return push(std::move(m), false, {}); }

    // Differentiable leaf tied to a named parameter. Gradients accumulate in
    // grad(id) and are harvested by name after backward().
    Id param(const std::string& name, const Mat& m) {
        Id id = push(m, true, {});
        nodes_[static_cast<size_t>(id)].param_name = name;
        return id;
    }

    // Differentiable leaf without a name (used by gradient tests on inputs).
    Id input(Mat m) { return push(std::move(m), true, {}); }

    // --- elementwise / linear algebra ------------------------------------

    Id add(Id a, Id b) {
        const Mat& A = val(a);
        const Mat& B = val(b);
        Mat out = A;
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += B.v[i];
        return push(std::move(out), grad_needed(a, b), [a, b](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            t.accumulate(a, g);
            t.accumulate(b, g);
        });
    }

    Id sub(Id a, Id b) {
        const Mat& A = val(a);
        const Mat& B = val(b);
        Mat out = A;
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= B.v[i];
        return push(std::move(out), grad_needed(a, b), [a, b](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            t.accumulate(a, g);
            if (t.requires_grad(b)) {
                Mat neg = g;
                for (auto& x : neg.v) x = -x;
                t.accumulate(b, neg);
            }
        });
    }

    Id scale(Id a, double s) {
        Mat out = val(a);
        for (auto& x : out.v) x *= s;
        return push(std::move(out), grad_needed(a), [a, s](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            Mat ga = g;
            for (auto& x : ga.v) x *= s;
            t.accumulate(a, ga);
        });
    }

    // x: n x k, w: out x k, b: 1 x out (optional). y = x w^T + 1 b^T.
    Id linear(Id x, Id w, Id b = -1) {
        const Mat& X = val(x);
        const Mat& W = val(w);
        Mat out(X.rows, W.rows);
        matmul_nt_acc(X, W, out);
        if (b >= 0) {
            const Mat& B = val(b);
            for (int i = 0; i < out.rows; ++i)
                for (int j = 0; j < out.cols; ++j) out(i, j) += B(0, j);
        }
        return push(std::move(out), grad_needed(x, w) || (b >= 0 && grad_needed(b)),
                    [x, w, b](Tape& t, Id self) {
                        const Mat& g = t.grad_ref(self);
                        if (t.requires_grad(x)) {
                            Mat gx(t.val(x).rows, t.val(x).cols);
                            matmul_acc(g, t.val(w), gx);
                            t.accumulate(x, gx);
                        }
                        if (t.requires_grad(w)) {
                            Mat gw(t.val(w).rows, t.val(w).cols);
                            matmul_tn_acc(g, t.val(x), gw);
                            t.accumulate(w, gw);
                        }
                        if (b >= 0 && t.requires_grad(b)) {
                            Mat gb(1, g.cols);
                            for (int i = 0; i < g.rows; ++i)
                                for (int j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
                            t.accumulate(b, gb);
                        }
                    });
    }

    Id matmul(Id a, Id b) {
        const Mat& A = val(a);
        const Mat& B = val(b);
        Mat out(A.rows, B.cols);
        matmul_acc(A, B, out);
        return push(std::move(out), grad_needed(a, b), [a, b](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            if (t.requires_grad(a)) {
                Mat ga(t.val(a).rows, t.val(a).cols);
                matmul_nt_acc(g, t.val(b), ga);
                t.accumulate(a, ga);
            }
            if (t.requires_grad(b)) {
                Mat gb(t.val(b).rows, t.val(b).cols);
                matmul_tn_acc(t.val(a), g, gb);
                t.accumulate(b, gb);
            }
        });
    }

    // a: n x k, b: m x k -> n x m (a b^T).
    Id matmul_nt(Id a, Id b) {
        const Mat& A = val(a);
        const Mat& B = val(b);
        Mat out(A.rows, B.rows);
        matmul_nt_acc(A, B, out);
        return push(std::move(out), grad_needed(a, b), [a, b](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            if (t.requires_grad(a)) {
                Mat ga(t.val(a).rows, t.val(a).cols);
                matmul_acc(g, t.val(b), ga);
                t.accumulate(a, ga);
            }
            if (t.requires_grad(b)) {
                Mat gb(t.val(b).rows, t.val(b).cols);
                matmul_tn_acc(g, t.val(a), gb);
                t.accumulate(b, gb);
            }
        });
    }

    Id gelu(Id a) {
        const Mat& A = val(a);
        Mat out = A;
        for (auto& x : out.v) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
        return push(std::move(out), grad_needed(a), [a](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            const Mat& X = t.val(a);
            Mat ga = g;
            for (size_t i = 0; i < ga.v.size(); ++i) {
                const double x = X.v[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga.v[i] *= cdf + x * pdf;
            }
            t.accumulate(a, ga);
        });
    }

    // Row-wise layer norm with learnable gamma, beta (1 x cols each).
    Id layernorm_rows(Id x, Id gamma, Id beta, double eps = 1e-5) {
        const Mat& X = val(x);
        const Mat& G = val(gamma);
        const Mat& B = val(beta);
        Mat out(X.rows, X.cols);
        Mat xhat(X.rows, X.cols);
        std::vector<double> inv_std(static_cast<size_t>(X.rows));
        for (int i = 0; i < X.rows; ++i) {
            double mean = 0.0;
            for (int j = 0; j < X.cols; ++j) mean += X(i, j);
            mean /= X.cols;
            double var = 0.0;
            for (int j = 0; j < X.cols; ++j) {
                const double d = X(i, j) - mean;
                var += d * d;
            }
            var /= X.cols;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(i)] = is;
            for (int j = 0; j < X.cols; ++j) {
                const double h = (X(i, j) - mean) * is;
                xhat(i, j) = h;
                out(i, j) = G(0, j) * h + B(0, j);
            }
        }
        auto xh = std::make_shared<Mat>(std::move(xhat));
        auto istd = std::make_shared<std::vector<double>>(std::move(inv_std));
        return push(std::move(out), grad_needed(x, gamma) || grad_needed(beta),
                    [x, gamma, beta, xh, istd](Tape& t, Id self) {
                        const Mat& g = t.grad_ref(self);
                        const Mat& G = t.val(gamma);
                        const int n = g.cols;
                        if (t.requires_grad(gamma)) {
                            Mat gg(1, n);
                            for (int i = 0; i < g.rows; ++i)
                                for (int j = 0; j < n; ++j) gg(0, j) += g(i, j) * (*xh)(i, j);
                            t.accumulate(gamma, gg);
                        }
                        if (t.requires_grad(beta)) {
                            Mat gb(1, n);
                            for (int i = 0; i < g.rows; ++i)
                                for (int j = 0; j < n; ++j) gb(0, j) += g(i, j);
                            t.accumulate(beta, gb);
                        }
                        if (t.requires_grad(x)) {
                            Mat gx(g.rows, n);
                            for (int i = 0; i < g.rows; ++i) {
                                double sum_gh = 0.0, sum_gh_xhat = 0.0;
                                for (int j = 0; j < n; ++j) {
                                    const double gh = g(i, j) * G(0, j);
                                    sum_gh += gh;
                                    sum_gh_xhat += gh * (*xh)(i, j);
                                }
                                const double is = (*istd)[static_cast<size_t>(i)];
                                for (int j = 0; j < n; ++j) {
                                    const double gh = g(i, j) * G(0, j);
                                    gx(i, j) = is * (gh - sum_gh / n - (*xh)(i, j) * sum_gh_xhat / n);
                                }
                            }
                            t.accumulate(x, gx);
                        }
                    });
    }

    Id softmax_rows(Id a) {
        const Mat& A = val(a);
        Mat out(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            double mx = A(i, 0);
            for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A(i, j));
            double sum = 0.0;
            for (int j = 0; j < A.cols; ++j) {
                const double e = std::exp(A(i, j) - mx);
                out(i, j) = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int j = 0; j < A.cols; ++j) out(i, j) *= inv;
        }
        return push(std::move(out), grad_needed(a), [a](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            const Mat& y = t.val(self);
            Mat ga(g.rows, g.cols);
            for (int i = 0; i < g.rows; ++i) {
                double gy = 0.0;
                for (int j = 0; j < g.cols; ++j) gy += g(i, j) * y(i, j);
                for (int j = 0; j < g.cols; ++j) ga(i, j) = y(i, j) * (g(i, j) - gy);
            }
            t.accumulate(a, ga);
        });
    }

    // --- shape ops --------------------------------------------------------

    Id slice_rows(Id a, int r0, int r1) {
        const Mat& A = val(a);
        Mat out(r1 - r0, A.cols);
        for (int i = r0; i < r1; ++i)
            for (int j = 0; j < A.cols; ++j) out(i - r0, j) = A(i, j);
        return push(std::move(out), grad_needed(a), [a, r0](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            Mat ga(t.val(a).rows, t.val(a).cols);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) ga(i + r0, j) = g(i, j);
            t.accumulate(a, ga);
        });
    }

    Id gather_rows(Id a, std::vector<int> idx) {
        const Mat& A = val(a);
        Mat out(static_cast<int>(idx.size()), A.cols);
        for (size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < A.cols; ++j) out(static_cast<int>(i), j) = A(idx[i], j);
        auto ids = std::make_shared<std::vector<int>>(std::move(idx));
        return push(std::move(out), grad_needed(a), [a, ids](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            Mat ga(t.val(a).rows, t.val(a).cols);
            for (size_t i = 0; i < ids->size(); ++i)
                for (int j = 0; j < g.cols; ++j) ga((*ids)[i], j) += g(static_cast<int>(i), j);
            t.accumulate(a, ga);
        });
    }

    Id concat_rows(Id a, Id b) {
        const Mat& A = val(a);
        const Mat& B = val(b);
        Mat out(A.rows + B.rows, A.cols);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) out(i, j) = A(i, j);
        for (int i = 0; i < B.rows; ++i)
            for (int j = 0; j < B.cols; ++j) out(A.rows + i, j) = B(i, j);
        const int arows = A.rows;
        return push(std::move(out), grad_needed(a, b), [a, b, arows](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            if (t.requires_grad(a)) {
                Mat ga(arows, g.cols);
                for (int i = 0; i < arows; ++i)
                    for (int j = 0; j < g.cols; ++j) ga(i, j) = g(i, j);
                t.accumulate(a, ga);
            }
            if (t.requires_grad(b)) {
                Mat gb(g.rows - arows, g.cols);
                for (int i = 0; i < gb.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gb(i, j) = g(arows + i, j);
                t.accumulate(b, gb);
            }
        });
    }

    Id slice_cols(Id a, int c0, int c1) {
        const Mat& A = val(a);
        Mat out(A.rows, c1 - c0);
        for (int i = 0; i < A.rows; ++i)
            for (int j = c0; j < c1; ++j) out(i, j - c0) = A(i, j);
        return push(std::move(out), grad_needed(a), [a, c0](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            Mat ga(t.val(a).rows, t.val(a).cols);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) ga(i, j + c0) = g(i, j);
            t.accumulate(a, ga);
        });
    }

    Id concat_cols(const std::vector<Id>& parts) {
        int total = 0;
        for (Id p : parts) total += val(p).cols;
        const int rows = val(parts[0]).rows;
        Mat out(rows, total);
        int off = 0;
        bool need = false;
        for (Id p : parts) {
            const Mat& P = val(p);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < P.cols; ++j) out(i, off + j) = P(i, j);
            off += P.cols;
            need = need || requires_grad(p);
        }
        auto ps = std::make_shared<std::vector<Id>>(parts);
        return push(std::move(out), need, [ps](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            int off = 0;
            for (Id p : *ps) {
                const int w = t.val(p).cols;
                if (t.requires_grad(p)) {
                    Mat gp(g.rows, w);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < w; ++j) gp(i, j) = g(i, off + j);
                    t.accumulate(p, gp);
                }
                off += w;
            }
        });
    }

    Id reshape(Id a, int r, int c) {
        Mat out = val(a);
        out.rows = r;
        out.cols = c;
        return push(std::move(out), grad_needed(a), [a](Tape& t, Id self) {
            Mat g = t.grad_ref(self);
            g.rows = t.val(a).rows;
            g.cols = t.val(a).cols;
            t.accumulate(a, g);
        });
    }

    // Repeat a 1 x m row n times.
    Id broadcast_row(Id a, int n) {
        const Mat& A = val(a);
        Mat out(n, A.cols);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < A.cols; ++j) out(i, j) = A(0, j);
        return push(std::move(out), grad_needed(a), [a](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            Mat ga(1, g.cols);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) ga(0, j) += g(i, j);
            t.accumulate(a, ga);
        });
    }

    // Zero-pad r rows and r columns at the top-left (register bias slots).
    Id pad_topleft(Id a, int r) {
        const Mat& A = val(a);
        Mat out(A.rows + r, A.cols + r);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) out(i + r, j + r) = A(i, j);
        return push(std::move(out), grad_needed(a), [a, r](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            Mat ga(t.val(a).rows, t.val(a).cols);
            for (int i = 0; i < ga.rows; ++i)
                for (int j = 0; j < ga.cols; ++j) ga(i, j) = g(i + r, j + r);
            t.accumulate(a, ga);
        });
    }

    // --- pooling / losses --------------------------------------------------

    Id max_pool_rows(Id a) {
        const Mat& A = val(a);
        Mat out(1, A.cols);
        std::vector<int> arg(static_cast<size_t>(A.cols), 0);
        for (int j = 0; j < A.cols; ++j) {
            double best = A(0, j);
            int bi = 0;
            for (int i = 1; i < A.rows; ++i) {
                if (A(i, j) > best) { // ties -> first row, deterministic
                    best = A(i, j);
                    bi = i;
                }
            }
            out(0, j) = best;
            arg[static_cast<size_t>(j)] = bi;
        }
        auto am = std::make_shared<std::vector<int>>(std::move(arg));
        return push(std::move(out), grad_needed(a), [a, am](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            Mat ga(t.val(a).rows, t.val(a).cols);
            for (int j = 0; j < g.cols; ++j) ga((*am)[static_cast<size_t>(j)], j) = g(0, j);
            t.accumulate(a, ga);
        });
    }

    Id mean_pool_rows(Id a) {
        const Mat& A = val(a);
        Mat out(1, A.cols);
        for (int j = 0; j < A.cols; ++j) {
            double s = 0.0;
            for (int i = 0; i < A.rows; ++i) s += A(i, j);
            out(0, j) = s / A.rows;
        }
        return push(std::move(out), grad_needed(a), [a](Tape& t, Id self) {
            const Mat& g = t.grad_ref(self);
            const int n = t.val(a).rows;
            Mat ga(n, g.cols);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < g.cols; ++j) ga(i, j) = g(0, j) / n;
            t.accumulate(a, ga);
        });
    }

    // Mean smooth-L1 between pred and a constant target, as a 1 x 1 node.
    Id smooth_l1_loss(Id pred, const Mat& target, double beta) {
        const Mat& P = val(pred);
        require(P.same_shape(target), "smooth_l1: shape mismatch");
        require(beta > 0.0, "smooth_l1: beta must be positive");
        const double n = static_cast<double>(P.v.size());
        double loss = 0.0;
        for (size_t i = 0; i < P.v.size(); ++i) {
            const double e = P.v[i] - target.v[i];
            const double ae = std::fabs(e);
            loss += ae < beta ? 0.5 * e * e / beta : ae - 0.5 * beta;
        }
        Mat out(1, 1);
        out(0, 0) = loss / n;
        auto tgt = std::make_shared<Mat>(target);
        return push(std::move(out), grad_needed(pred), [pred, tgt, beta, n](Tape& t, Id self) {
            const double g = t.grad_ref(self)(0, 0);
            const Mat& P = t.val(pred);
            Mat gp(P.rows, P.cols);
            for (size_t i = 0; i < P.v.size(); ++i) {
                const double e = P.v[i] - tgt->v[i];
                gp.v[i] = g * (std::fabs(e) < beta ? e / beta : (e > 0.0 ? 1.0 : -1.0)) / n;
            }
            t.accumulate(pred, gp);
        });
    }

    // Softmax cross entropy of a single-row logits node against a class label.
    Id softmax_xent(Id logits, int label) {
        const Mat& L = val(logits);
        double mx = L(0, 0);
        for (int j = 1; j < L.cols; ++j) mx = std::max(mx, L(0, j));
        double sum = 0.0;
        for (int j = 0; j < L.cols; ++j) sum += std::exp(L(0, j) - mx);
        Mat out(1, 1);
        out(0, 0) = std::log(sum) + mx - L(0, label);
        return push(std::move(out), grad_needed(logits), [logits, label](Tape& t, Id self) {
            const double g = t.grad_ref(self)(0, 0);
            const Mat& L = t.val(logits);
            double mx = L(0, 0);
            for (int j = 1; j < L.cols; ++j) mx = std::max(mx, L(0, j));
            double sum = 0.0;
            for (int j = 0; j < L.cols; ++j) sum += std::exp(L(0, j) - mx);
            Mat gl(1, L.cols);
            for (int j = 0; j < L.cols; ++j) {
                const double p = std::exp(L(0, j) - mx) / sum;
                gl(0, j) = g * (p - (j == label ? 1.0 : 0.0));
            }
            t.accumulate(logits, gl);
        });
    }

    // --- engine -------------------------------------------------------------

    const Mat& val(Id id) const { return nodes_[static_cast<size_t>(id)].value; }

    const Mat& grad(Id id) const { return nodes_[static_cast<size_t>(id)].grad; }

    bool requires_grad(Id id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    void backward(Id loss) {
        auto& ln = nodes_[static_cast<size_t>(loss)];
        require(ln.value.rows == 1 && ln.value.cols == 1, "backward: loss must be scalar");
        ensure_grad(loss);
        ln.grad(0, 0) = 1.0;
        for (int i = loss; i >= 0; --i) {
            auto& n = nodes_[static_cast<size_t>(i)];
            if (n.requires_grad && n.back && n.grad.rows > 0) n.back(*this, i);
        }
    }

    // Visit every named-parameter leaf that received gradient.
    void for_each_param_grad(const std::function<void(const std::string&, const Mat&)>& fn) const {
        for (const auto& n : nodes_) {
            if (!n.param_name.empty() && n.grad.rows > 0) fn(n.param_name, n.grad);
        }
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad; // lazily sized on first accumulation
        std::function<void(Tape&, Id)> back;
        bool requires_grad = false;
        std::string param_name;
    };

    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;

    Id push(Mat value, bool req, std::function<void(Tape&, Id)> back) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = req;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    bool grad_needed(Id a) const { return requires_grad(a); }
    bool grad_needed(Id a, Id b) const { return requires_grad(a) || requires_grad(b); }

    void ensure_grad(Id id) {
        auto& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.rows == 0) n.grad = Mat(n.value.rows, n.value.cols);
    }

    Mat& grad_ref(Id id) { return nodes_[static_cast<size_t>(id)].grad; }

    void accumulate(Id id, const Mat& g) {
        auto& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad) return;
        ensure_grad(id);
        for (size_t i = 0; i < g.v.size(); ++i) n.grad.v[i] += g.v[i];
    }

    std::vector<Node> nodes_;
};

} // namespace jetjepa
