// SPDX-License-Identifier: Apache-2.0
#include "slicelab/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "slicelab/error.hpp"
#include "slicelab/trainer.hpp"

namespace slicelab::autodiff {

Var Tape::constant(DenseMatrix value) {
    nodes_.push_back(Node{std::move(value), std::nullopt, {}, nullptr, nullptr, false});
    return Var{nodes_.size() - 1};
}

Var Tape::parameter(DenseMatrix value) {
    nodes_.push_back(Node{std::move(value), std::nullopt, {}, nullptr, nullptr, true});
    return Var{nodes_.size() - 1};
}

Var Tape::record(std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
    Node node{DenseMatrix(1, 1), std::nullopt, {}, std::move(forward), std::move(backward), false};
    for (Var v : inputs) {
        if (v.index >= nodes_.size()) throw ValidationError("tape: input refers to an unrecorded node");
        node.inputs.push_back(v.index);
        node.requires_grad = node.requires_grad || nodes_[v.index].requires_grad;
    }
    node.value = node.forward(input_values(node));
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

std::vector<const DenseMatrix*> Tape::input_values(const Node& node) const {
    std::vector<const DenseMatrix*> values;
    values.reserve(node.inputs.size());
    for (std::size_t i : node.inputs) values.push_back(&nodes_[i].value);
    return values;
}

const DenseMatrix& Tape::value(Var v) const { return nodes_.at(v.index).value; }

DenseMatrix Tape::grad(Var v) const {
    const Node& node = nodes_.at(v.index);
    if (node.grad) return *node.grad;
    return DenseMatrix(node.value.rows(), node.value.cols());
}

bool Tape::requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }

void Tape::accumulate(std::size_t index, const DenseMatrix& g) {
    Node& node = nodes_[index];
    if (node.grad) {
        auto dst = node.grad->data();
        auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    } else {
        node.grad = g;
    }
}

void Tape::backward(Var loss) {
    if (nodes_.empty() || loss.index >= nodes_.size()) {
        throw ValidationError("backward: no recorded forward pass");
    }
    const Node& root = nodes_[loss.index];
    if (!root.forward) throw ValidationError("backward: loss is a leaf, nothing was recorded");
    if (root.value.rows() != 1 || root.value.cols() != 1) {
        throw ValidationError("backward: loss must be a 1 x 1 scalar, got " + root.value.shape());
    }
    accumulate(loss.index, DenseMatrix(1, 1, 1.0));
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.grad || !node.backward || !node.requires_grad) continue;
        const auto in = input_values(node);
        std::vector<DenseMatrix> grads = node.backward(in, node.value, *node.grad);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            if (nodes_[node.inputs[k]].requires_grad) accumulate(node.inputs[k], grads[k]);
        }
    }
}

void Tape::zero_grad() {
    for (auto& node : nodes_) node.grad.reset();
}

void Tape::replay() {
    for (auto& node : nodes_) {
        if (node.forward) node.value = node.forward(input_values(node));
    }
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Tape& t, Var a, Var b) {
    return t.record(
        {a, b}, [](Tape::Inputs in) { return slicelab::matmul(*in[0], *in[1]); },
        [](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            return std::vector<DenseMatrix>{slicelab::matmul_transposed(g, *in[1]),
                                            slicelab::transposed_matmul(*in[0], g)};
        });
}

Var matmul_transposed(Tape& t, Var a, Var b) {
    return t.record(
        {a, b}, [](Tape::Inputs in) { return slicelab::matmul_transposed(*in[0], *in[1]); },
        [](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            return std::vector<DenseMatrix>{slicelab::matmul(g, *in[1]), slicelab::transposed_matmul(g, *in[0])};
        });
}

Var add(Tape& t, Var a, Var b) {
    return t.record(
        {a, b}, [](Tape::Inputs in) { return slicelab::add(*in[0], *in[1]); },
        [](Tape::Inputs, const DenseMatrix&, const DenseMatrix& g) { return std::vector<DenseMatrix>{g, g}; });
}

Var scale(Tape& t, Var a, double c) {
    return t.record(
        {a}, [c](Tape::Inputs in) { return slicelab::scale(*in[0], c); },
        [c](Tape::Inputs, const DenseMatrix&, const DenseMatrix& g) {
            return std::vector<DenseMatrix>{slicelab::scale(g, c)};
        });
}

Var hadamard(Tape& t, Var a, Var b) {
    return t.record(
        {a, b}, [](Tape::Inputs in) { return slicelab::hadamard(*in[0], *in[1]); },
        [](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            return std::vector<DenseMatrix>{slicelab::hadamard(g, *in[1]), slicelab::hadamard(g, *in[0])};
        });
}

Var silu(Tape& t, Var a) {
    return t.record(
        {a}, [](Tape::Inputs in) { return slicelab::silu(*in[0]); },
        [](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            DenseMatrix d = g;
            auto x = in[0]->data();
            auto dv = d.data();
            for (std::size_t i = 0; i < dv.size(); ++i) {
                const double s = sigmoid(x[i]);
                dv[i] *= s * (1.0 + x[i] * (1.0 - s));
            }
            return std::vector<DenseMatrix>{std::move(d)};
        });
}

Var slice_cols(Tape& t, Var a, std::size_t first, std::size_t count) {
    return t.record(
        {a}, [first, count](Tape::Inputs in) { return slicelab::slice_cols(*in[0], first, count); },
        [first](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            DenseMatrix d(in[0]->rows(), in[0]->cols());
            for (std::size_t i = 0; i < g.rows(); ++i) {
                const auto src = g.row(i);
                std::copy(src.begin(), src.end(), d.row(i).begin() + static_cast<std::ptrdiff_t>(first));
            }
            return std::vector<DenseMatrix>{std::move(d)};
        });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    return t.record(
        parts,
        [](Tape::Inputs in) {
            std::vector<DenseMatrix> copies;
            copies.reserve(in.size());
            for (const DenseMatrix* m : in) copies.push_back(*m);
            return slicelab::concat_cols(copies);
        },
        [](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            std::vector<DenseMatrix> grads;
            std::size_t offset = 0;
            for (const DenseMatrix* m : in) {
                grads.push_back(slicelab::slice_cols(g, offset, m->cols()));
                offset += m->cols();
            }
            return grads;
        });
}

Var causal_softmax(Tape& t, Var a) {
    return t.record(
        {a}, [](Tape::Inputs in) { return causal_row_softmax(*in[0]); },
        [](Tape::Inputs, const DenseMatrix& p, const DenseMatrix& g) {
            DenseMatrix d(p.rows(), p.cols());
            for (std::size_t i = 0; i < p.rows(); ++i) {
                const auto pr = p.row(i);
                const auto gr = g.row(i);
                double dot = 0.0;
                for (std::size_t j = 0; j < pr.size(); ++j) dot += pr[j] * gr[j];
                auto dr = d.row(i);
                for (std::size_t j = 0; j < pr.size(); ++j) dr[j] = pr[j] * (gr[j] - dot);
            }
            return std::vector<DenseMatrix>{std::move(d)};
        });
}

Var rmsnorm(Tape& t, Var e, Var w, std::size_t norm_dim) {
    return t.record(
        {e, w}, [norm_dim](Tape::Inputs in) { return rmsnorm_rows(*in[0], in[1]->row(0), norm_dim); },
        [norm_dim](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            const DenseMatrix& x = *in[0];
            const auto w = in[1]->row(0);
            const double n = static_cast<double>(norm_dim == 0 ? x.cols() : norm_dim);
            DenseMatrix dx(x.rows(), x.cols());
            DenseMatrix dw(1, x.cols());
            for (std::size_t i = 0; i < x.rows(); ++i) {
                const auto xr = x.row(i);
                const auto gr = g.row(i);
                double ss = 0.0;
                for (double v : xr) ss += v * v;
                const double r = std::sqrt(ss / n);
                double dot = 0.0;  // sum_j g_j w_j x_j
                for (std::size_t j = 0; j < xr.size(); ++j) {
                    dot += gr[j] * w[j] * xr[j];
                    dw(0, j) += gr[j] * xr[j] / r;
                }
                auto dxr = dx.row(i);
                const double coeff = dot / (n * r * r * r);
                for (std::size_t j = 0; j < xr.size(); ++j) dxr[j] = gr[j] * w[j] / r - xr[j] * coeff;
            }
            return std::vector<DenseMatrix>{std::move(dx), std::move(dw)};
        });
}

Var gather_rows(Tape& t, Var table, std::vector<TokenId> ids) {
    return t.record(
        {table}, [ids](Tape::Inputs in) { return embed_tokens(*in[0], ids); },
        [ids](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            DenseMatrix d(in[0]->rows(), in[0]->cols());
            for (std::size_t i = 0; i < ids.size(); ++i) {
                auto dst = d.row(ids[i]);
                const auto src = g.row(i);
                for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
            }
            return std::vector<DenseMatrix>{std::move(d)};
        });
}

Var cross_entropy(Tape& t, Var logits, std::vector<TokenId> targets) {
    return t.record(
        {logits},
        [targets](Tape::Inputs in) { return DenseMatrix(1, 1, cross_entropy_loss(*in[0], targets)); },
        [targets](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            DenseMatrix d = row_softmax(*in[0]);
            const double w = g(0, 0) / static_cast<double>(targets.size());
            for (std::size_t i = 0; i < targets.size(); ++i) {
                d(i, targets[i]) -= 1.0;
                for (double& v : d.row(i)) v *= w;
            }
            return std::vector<DenseMatrix>{std::move(d)};
        });
}

Var sum_all(Tape& t, Var a) {
    return t.record(
        {a},
        [](Tape::Inputs in) {
            double s = 0.0;
            for (double v : in[0]->data()) s += v;
            return DenseMatrix(1, 1, s);
        },
        [](Tape::Inputs in, const DenseMatrix&, const DenseMatrix& g) {
            return std::vector<DenseMatrix>{DenseMatrix(in[0]->rows(), in[0]->cols(), g(0, 0))};
        });
}

}  // namespace slicelab::autodiff
