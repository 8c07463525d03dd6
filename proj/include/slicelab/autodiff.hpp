// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over DenseMatrix values, restricted to the
// operations the transformer forward pass needs. Nodes are appended in
// evaluation order, so reverse index order is a valid topological order for
// the backward sweep.

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "slicelab/linalg.hpp"
#include "slicelab/transformer.hpp"

namespace slicelab::autodiff {

struct Var {
    std::size_t index;
};

class Tape {
public:
    using Inputs = std::span<const DenseMatrix* const>;
    using ForwardFn = std::function<DenseMatrix(Inputs)>;
    // Returns one gradient per input, in input order.
    using BackwardFn = std::function<std::vector<DenseMatrix>(Inputs, const DenseMatrix& out, const DenseMatrix& grad)>;

    Var constant(DenseMatrix value);
    Var parameter(DenseMatrix value);
    Var record(std::vector<Var> inputs, ForwardFn forward, BackwardFn backward);

    const DenseMatrix& value(Var v) const;
    /// Accumulated gradient; a zero matrix when nothing reached `v`.
    DenseMatrix grad(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards. `loss` must
    /// be a recorded 1 x 1 node.
    void backward(Var loss);
    void zero_grad();
    /// Re-evaluates every recorded node from its inputs in order.
    void replay();

private:
    struct Node {
        DenseMatrix value;
        std::optional<DenseMatrix> grad;
        std::vector<std::size_t> inputs;
        ForwardFn forward;
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::vector<const DenseMatrix*> input_values(const Node& node) const;
    void accumulate(std::size_t index, const DenseMatrix& g);

    std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);
Var matmul_transposed(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var hadamard(Tape& t, Var a, Var b);
Var silu(Tape& t, Var a);
Var slice_cols(Tape& t, Var a, std::size_t first, std::size_t count);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var causal_softmax(Tape& t, Var a);
/// `w` is a 1 x d row of norm weights.
Var rmsnorm(Tape& t, Var e, Var w, std::size_t norm_dim);
Var gather_rows(Tape& t, Var table, std::vector<TokenId> ids);
/// Mean next-token negative log-likelihood, 1 x 1.
Var cross_entropy(Tape& t, Var logits, std::vector<TokenId> targets);
Var sum_all(Tape& t, Var a);

}  // namespace slicelab::autodiff
