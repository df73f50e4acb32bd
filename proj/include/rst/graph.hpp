#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rst/common.hpp"
#include "rst/linalg.hpp"

namespace rst {

struct NodeId {
    int v = -1;
    bool valid() const { return v >= 0; }
};

// One attention/coherence segment of a packed batch: rows [offset,
// offset+rows) belong to one document, of which the first attn_len take
// part in attention. Rows past attn_len are padding.
struct Span {
    int offset = 0;
    int rows = 0;
    int attn_len = 0;
};

// Reverse-mode autodiff over dense matrices. Nodes are appended in forward
// order, so walking them backwards is a topological sweep. Parameter leaves
// are deduplicated by address: reusing a weight across several forward
// passes (student on raw, kept and dropped inputs) accumulates into a
// single gradient.
template <typename Real>
class Graph {
public:
    using M = Mat<Real>;

    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    NodeId constant(M value) {
        return push(std::move(value), false);
    }

    // Trainable leaf; `p` must outlive the graph.
    NodeId param(const M* p) {
        auto it = param_nodes_.find(p);
        if (it != param_nodes_.end()) return NodeId{it->second};
        NodeId id = push(*p, recording_);
        nodes_[id.v].src = p;
        param_nodes_[p] = id.v;
        return id;
    }

    const M& value(NodeId id) const { return nodes_.at(id.v).val; }

    // Gradient of the last backward() w.r.t. a parameter; nullptr when the
    // parameter never entered the graph.
    const M* grad_of(const M* p) const {
        auto it = param_nodes_.find(p);
        if (it == param_nodes_.end()) return nullptr;
        const Node& n = nodes_[it->second];
        return n.grad.size() > 0 ? &n.grad : nullptr;
    }

    // ---- ops ----

    NodeId rows(NodeId table, std::vector<int> idx) {
        const M& t = val(table);
        M out(static_cast<int>(idx.size()), t.cols());
        for (int i = 0; i < out.rows(); ++i) {
            if (idx[i] < 0 || idx[i] >= t.rows())
                throw Error("row index out of range in gather");
            out.row(i) = t.row(idx[i]);
        }
        NodeId id = push(std::move(out), needs(table));
        if (grad_needed(id))
            set_back(id, [table, idx = std::move(idx)](Graph& g, int self) {
                M& dt = g.grad_ref(table);
                const M& dout = g.nodes_[self].grad;
                for (int i = 0; i < dout.rows(); ++i) dt.row(idx[i]) += dout.row(i);
            });
        return id;
    }

    NodeId matmul(NodeId a, NodeId b) {
        NodeId id = push(val(a) * val(b), needs(a) || needs(b));
        if (grad_needed(id))
            set_back(id, [a, b](Graph& g, int self) {
                const M& dout = g.nodes_[self].grad;
                if (g.needs(a)) g.grad_ref(a) += dout * g.val(b).transpose();
                if (g.needs(b)) g.grad_ref(b) += g.val(a).transpose() * dout;
            });
        return id;
    }

    NodeId add(NodeId a, NodeId b) {
        NodeId id = push(val(a) + val(b), needs(a) || needs(b));
        if (grad_needed(id))
            set_back(id, [a, b](Graph& g, int self) {
                const M& dout = g.nodes_[self].grad;
                if (g.needs(a)) g.grad_ref(a) += dout;
                if (g.needs(b)) g.grad_ref(b) += dout;
            });
        return id;
    }

    // Broadcast a 1xC bias over every row.
    NodeId add_row(NodeId a, NodeId bias) {
        const M& x = val(a);
        M out = x.rowwise() + val(bias).row(0);
        NodeId id = push(std::move(out), needs(a) || needs(bias));
        if (grad_needed(id))
            set_back(id, [a, bias](Graph& g, int self) {
                const M& dout = g.nodes_[self].grad;
                if (g.needs(a)) g.grad_ref(a) += dout;
                if (g.needs(bias)) g.grad_ref(bias).row(0) += dout.colwise().sum();
            });
        return id;
    }

    NodeId scale(NodeId a, Real s) {
        NodeId id = push(val(a) * s, needs(a));
        if (grad_needed(id))
            set_back(id, [a, s](Graph& g, int self) {
                g.grad_ref(a) += g.nodes_[self].grad * s;
            });
        return id;
    }

    // Elementwise product with a constant mask (inverted dropout).
    NodeId cmul(NodeId a, M mask) {
        NodeId id = push(val(a).cwiseProduct(mask), needs(a));
        if (grad_needed(id))
            set_back(id, [a, mask = std::move(mask)](Graph& g, int self) {
                g.grad_ref(a) += g.nodes_[self].grad.cwiseProduct(mask);
            });
        return id;
    }

    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, Real eps) {
        const M& in = val(x);
        const int R = static_cast<int>(in.rows()), C = static_cast<int>(in.cols());
        auto xhat = std::make_shared<M>(R, C);
        auto inv_std = std::make_shared<std::vector<Real>>(R);
        M out(R, C);
        const auto& g0 = val(gain).row(0);
        const auto& b0 = val(bias).row(0);
        for (int i = 0; i < R; ++i) {
            const Real mu = in.row(i).mean();
            const Real var = (in.row(i).array() - mu).square().mean();
            const Real is = Real(1) / std::sqrt(var + eps);
            (*inv_std)[i] = is;
            xhat->row(i) = (in.row(i).array() - mu) * is;
            out.row(i) = xhat->row(i).cwiseProduct(g0) + b0;
        }
        NodeId id = push(std::move(out), needs(x) || needs(gain) || needs(bias));
        if (grad_needed(id))
            set_back(id, [x, gain, bias, xhat, inv_std](Graph& g, int self) {
                const M& dout = g.nodes_[self].grad;
                const auto& gg = g.val(gain).row(0);
                if (g.needs(gain))
                    g.grad_ref(gain).row(0) += (dout.cwiseProduct(*xhat)).colwise().sum();
                if (g.needs(bias)) g.grad_ref(bias).row(0) += dout.colwise().sum();
                if (g.needs(x)) {
                    M& dx = g.grad_ref(x);
                    for (int i = 0; i < dout.rows(); ++i) {
                        Eigen::Matrix<Real, 1, Eigen::Dynamic> dy = dout.row(i).cwiseProduct(gg);
                        const Real m1 = dy.mean();
                        const Real m2 = dy.cwiseProduct(xhat->row(i)).mean();
                        dx.row(i) += ((dy.array() - m1) - xhat->row(i).array() * m2).matrix() *
                                     (*inv_std)[i];
                    }
                }
            });
        return id;
    }

    NodeId gelu(NodeId x) {
        const M& in = val(x);
        M out = in.unaryExpr([](Real v) {
            return Real(0.5) * v * (Real(1) + std::erf(v * Real(M_SQRT1_2)));
        });
        NodeId id = push(std::move(out), needs(x));
        if (grad_needed(id))
            set_back(id, [x](Graph& g, int self) {
                const M& in = g.val(x);
                const M& dout = g.nodes_[self].grad;
                M d = in.unaryExpr([](Real v) {
                    const Real phi = std::exp(Real(-0.5) * v * v) *
                                     Real(0.3989422804014327);  // 1/sqrt(2*pi)
                    return Real(0.5) * (Real(1) + std::erf(v * Real(M_SQRT1_2))) + v * phi;
                });
                g.grad_ref(x) += dout.cwiseProduct(d);
            });
        return id;
    }

    // Multi-head attention over a packed batch. q/k/v are [N x H]; each
    // span attends only within its own first attn_len rows, so padding can
    // never leak into the attended region. Output rows outside attn_len
    // are zero.
    NodeId attention(NodeId q, NodeId k, NodeId v, std::vector<Span> spans, int num_heads) {
        const M& Q = val(q);
        const M& K = val(k);
        const M& V = val(v);
        const int H = static_cast<int>(Q.cols());
        if (H % num_heads != 0) throw Error("hidden size not divisible by heads");
        const int hd = H / num_heads;
        const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(hd));
        M out = M::Zero(Q.rows(), H);
        auto soft = std::make_shared<std::vector<M>>();  // per (span, head)
        const bool keep = recording_ && (needs(q) || needs(k) || needs(v));
        if (keep) soft->reserve(spans.size() * static_cast<size_t>(num_heads));
        for (const Span& sp : spans) {
            for (int a = 0; a < num_heads; ++a) {
                auto Qb = Q.block(sp.offset, a * hd, sp.attn_len, hd);
                auto Kb = K.block(sp.offset, a * hd, sp.attn_len, hd);
                auto Vb = V.block(sp.offset, a * hd, sp.attn_len, hd);
                M s = (Qb * Kb.transpose()) * inv_sqrt;
                for (int i = 0; i < s.rows(); ++i) {
                    const Real mx = s.row(i).maxCoeff();
                    s.row(i) = (s.row(i).array() - mx).exp();
                    s.row(i) /= s.row(i).sum();
                }
                out.block(sp.offset, a * hd, sp.attn_len, hd) = s * Vb;
                if (keep) soft->push_back(std::move(s));
            }
        }
        NodeId id = push(std::move(out), needs(q) || needs(k) || needs(v));
        if (grad_needed(id))
            set_back(id, [q, k, v, spans = std::move(spans), num_heads, hd, inv_sqrt,
                          soft](Graph& g, int self) {
                const M& dout = g.nodes_[self].grad;
                const M& Q = g.val(q);
                const M& K = g.val(k);
                const M& V = g.val(v);
                M& dQ = g.grad_ref(q);
                M& dK = g.grad_ref(k);
                M& dV = g.grad_ref(v);
                size_t si = 0;
                for (const Span& sp : spans) {
                    for (int a = 0; a < num_heads; ++a) {
                        const M& S = (*soft)[si++];
                        auto Qb = Q.block(sp.offset, a * hd, sp.attn_len, hd);
                        auto Kb = K.block(sp.offset, a * hd, sp.attn_len, hd);
                        auto Vb = V.block(sp.offset, a * hd, sp.attn_len, hd);
                        auto dOb = dout.block(sp.offset, a * hd, sp.attn_len, hd);
                        dV.block(sp.offset, a * hd, sp.attn_len, hd) += S.transpose() * dOb;
                        M dS = dOb * Vb.transpose();
                        // softmax rows backward
                        for (int i = 0; i < dS.rows(); ++i) {
                            const Real dot = dS.row(i).cwiseProduct(S.row(i)).sum();
                            dS.row(i) =
                                (S.row(i).array() * (dS.row(i).array() - dot)).matrix();
                        }
                        dS *= inv_sqrt;
                        dQ.block(sp.offset, a * hd, sp.attn_len, hd) += dS * Kb;
                        dK.block(sp.offset, a * hd, sp.attn_len, hd) += dS.transpose() * Qb;
                    }
                }
            });
        return id;
    }

    NodeId softmax_rows(NodeId logits) {
        M p = softmax_value(val(logits));
        auto probs = std::make_shared<M>(p);
        NodeId id = push(std::move(p), needs(logits));
        if (grad_needed(id))
            set_back(id, [logits, probs](Graph& g, int self) {
                const M& dout = g.nodes_[self].grad;
                M& dz = g.grad_ref(logits);
                for (int i = 0; i < dout.rows(); ++i) {
                    const Real dot = dout.row(i).cwiseProduct(probs->row(i)).sum();
                    dz.row(i) +=
                        (probs->row(i).array() * (dout.row(i).array() - dot)).matrix();
                }
            });
        return id;
    }

    NodeId col(NodeId x, int j) {
        M out = val(x).col(j);
        NodeId id = push(std::move(out), needs(x));
        if (grad_needed(id))
            set_back(id, [x, j](Graph& g, int self) {
                g.grad_ref(x).col(j) += g.nodes_[self].grad;
            });
        return id;
    }

    // Weighted cross-entropy straight from logits:
    //   sum_i w_i * (-log softmax(z_i)[label_i])   -> 1x1
    NodeId cross_entropy(NodeId logits, std::vector<int> labels, std::vector<Real> weights) {
        const M& z = val(logits);
        if (static_cast<int>(labels.size()) != z.rows() || labels.size() != weights.size())
            throw Error("cross_entropy: labels/weights misaligned with logits");
        auto probs = std::make_shared<M>(softmax_value(z));
        Real total = 0;
        for (int i = 0; i < z.rows(); ++i) {
            if (labels[i] < 0 || labels[i] >= z.cols())
                throw Error("cross_entropy: label out of range");
            const Real mx = z.row(i).maxCoeff();
            const Real lse = mx + std::log((z.row(i).array() - mx).exp().sum());
            total += weights[i] * (lse - z(i, labels[i]));
        }
        M out(1, 1);
        out(0, 0) = total;
        NodeId id = push(std::move(out), needs(logits));
        if (grad_needed(id))
            set_back(id, [logits, labels = std::move(labels), weights = std::move(weights),
                          probs](Graph& g, int self) {
                const Real go = g.nodes_[self].grad(0, 0);
                M& dz = g.grad_ref(logits);
                for (int i = 0; i < dz.rows(); ++i) {
                    dz.row(i) += probs->row(i) * (weights[i] * go);
                    dz(i, labels[i]) -= weights[i] * go;
                }
            });
        return id;
    }

    // sum_i w_i * sum_k p_ik ln p_ik  (negative entropy of each row) -> 1x1
    NodeId neg_entropy(NodeId logits, std::vector<Real> weights) {
        const M& z = val(logits);
        if (static_cast<int>(weights.size()) != z.rows())
            throw Error("neg_entropy: weights misaligned with logits");
        auto probs = std::make_shared<M>(softmax_value(z));
        auto row_ne = std::make_shared<std::vector<Real>>(z.rows());
        Real total = 0;
        for (int i = 0; i < z.rows(); ++i) {
            Real s = 0;
            for (int j = 0; j < z.cols(); ++j) {
                const Real p = (*probs)(i, j);
                if (p > Real(0)) s += p * std::log(p);
            }
            (*row_ne)[i] = s;
            total += weights[i] * s;
        }
        M out(1, 1);
        out(0, 0) = total;
        NodeId id = push(std::move(out), needs(logits));
        if (grad_needed(id))
            set_back(id, [logits, weights = std::move(weights), probs, row_ne](Graph& g,
                                                                               int self) {
                const Real go = g.nodes_[self].grad(0, 0);
                M& dz = g.grad_ref(logits);
                for (int i = 0; i < dz.rows(); ++i) {
                    for (int j = 0; j < dz.cols(); ++j) {
                        const Real p = (*probs)(i, j);
                        if (p > Real(0))
                            dz(i, j) += go * weights[i] * p * (std::log(p) - (*row_ne)[i]);
                    }
                }
            });
        return id;
    }

    // Sparsity+continuity penalty over per-token probabilities (Nx1).
    // Per span: sparsity = sum_j p_j, continuity = sum_{j>=2} |p_j - p_{j-1}|;
    // each optionally divided by the span length, then averaged over spans.
    NodeId coherence(NodeId p, std::vector<Span> spans, Real coef_sparsity, Real coef_continuity,
                     bool length_normalized) {
        const M& x = val(p);
        if (x.cols() != 1) throw Error("coherence expects a column of probabilities");
        if (spans.empty()) throw Error("coherence: empty span set");
        for (const Span& sp : spans)
            if (sp.rows <= 0) throw Error("coherence: empty token sequence");
        Real total = 0;
        for (const Span& sp : spans) {
            Real sparsity = 0, continuity = 0;
            for (int j = 0; j < sp.rows; ++j) sparsity += x(sp.offset + j, 0);
            for (int j = 1; j < sp.rows; ++j)
                continuity += std::abs(x(sp.offset + j, 0) - x(sp.offset + j - 1, 0));
            const Real norm = length_normalized ? Real(1) / static_cast<Real>(sp.rows) : Real(1);
            total += (coef_sparsity * sparsity + coef_continuity * continuity) * norm;
        }
        total /= static_cast<Real>(spans.size());
        M out(1, 1);
        out(0, 0) = total;
        NodeId id = push(std::move(out), needs(p));
        if (grad_needed(id))
            set_back(id, [p, spans = std::move(spans), coef_sparsity, coef_continuity,
                          length_normalized](Graph& g, int self) {
                const Real go =
                    g.nodes_[self].grad(0, 0) / static_cast<Real>(spans.size());
                const M& x = g.val(p);
                M& dx = g.grad_ref(p);
                for (const Span& sp : spans) {
                    const Real norm =
                        length_normalized ? Real(1) / static_cast<Real>(sp.rows) : Real(1);
                    for (int j = 0; j < sp.rows; ++j)
                        dx(sp.offset + j, 0) += go * norm * coef_sparsity;
                    for (int j = 1; j < sp.rows; ++j) {
                        const Real d = x(sp.offset + j, 0) - x(sp.offset + j - 1, 0);
                        const Real s = d > Real(0) ? Real(1) : (d < Real(0) ? Real(-1) : Real(0));
                        dx(sp.offset + j, 0) += go * norm * coef_continuity * s;
                        dx(sp.offset + j - 1, 0) -= go * norm * coef_continuity * s;
                    }
                }
            });
        return id;
    }

    // Weighted sum of 1x1 nodes.
    NodeId weighted_sum(std::vector<NodeId> terms, std::vector<Real> coefs) {
        if (terms.size() != coefs.size()) throw Error("weighted_sum: size mismatch");
        Real total = 0;
        bool ng = false;
        for (size_t i = 0; i < terms.size(); ++i) {
            total += coefs[i] * val(terms[i])(0, 0);
            ng = ng || needs(terms[i]);
        }
        M out(1, 1);
        out(0, 0) = total;
        NodeId id = push(std::move(out), ng);
        if (grad_needed(id))
            set_back(id, [terms = std::move(terms), coefs = std::move(coefs)](Graph& g,
                                                                              int self) {
                const Real go = g.nodes_[self].grad(0, 0);
                for (size_t i = 0; i < terms.size(); ++i)
                    if (g.needs(terms[i])) g.grad_ref(terms[i])(0, 0) += coefs[i] * go;
            });
        return id;
    }

    void backward(NodeId root) {
        if (!recording_) throw Error("backward on a non-recording graph");
        const M& r = val(root);
        if (r.rows() != 1 || r.cols() != 1) throw Error("backward root must be a scalar");
        grad_ref(root)(0, 0) = Real(1);
        for (int i = root.v; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.back && n.grad.size() > 0) n.back(*this, i);
        }
    }

private:
    struct Node {
        M val;
        M grad;
        std::function<void(Graph&, int)> back;
        const M* src = nullptr;
        bool needs_grad = false;
    };

    NodeId push(M value, bool needs_grad) {
        Node n;
        n.val = std::move(value);
        n.needs_grad = recording_ && needs_grad;
        nodes_.push_back(std::move(n));
        return NodeId{static_cast<int>(nodes_.size()) - 1};
    }

    const M& val(NodeId id) const { return nodes_[id.v].val; }
    bool needs(NodeId id) const { return nodes_[id.v].needs_grad; }
    bool grad_needed(NodeId id) const { return recording_ && nodes_[id.v].needs_grad; }

    M& grad_ref(NodeId id) { return grad_ref_idx(id.v); }
    M& grad_ref_idx(int i) {
        Node& n = nodes_[i];
        if (n.grad.size() == 0) n.grad = M::Zero(n.val.rows(), n.val.cols());
        return n.grad;
    }

    void set_back(NodeId id, std::function<void(Graph&, int)> f) {
        nodes_[id.v].back = std::move(f);
    }

    static M softmax_value(const M& z) {
        M p(z.rows(), z.cols());
        for (int i = 0; i < z.rows(); ++i) {
            const Real mx = z.row(i).maxCoeff();
            p.row(i) = (z.row(i).array() - mx).exp();
            p.row(i) /= p.row(i).sum();
        }
        return p;
    }

    std::vector<Node> nodes_;
    std::unordered_map<const M*, int> param_nodes_;
    bool recording_;
};

}  // namespace rst
