#pragma once

#include "quantformer/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace quantformer {

/// Handle to a node on a Tape.
struct Var {
    std::size_t id = 0;
};

class Gradients;

/// Records tensor-level primitives in evaluation order so that a reverse sweep
/// can replay them. Node ids are assigned in topological order.
///
/// Sequence-structured primitives (attention, pooling) treat their row
/// dimension as a stack of equally long sequences of `seq_len` rows each.
class Tape {
public:
    /// Differentiable input (model parameter or any value a gradient is wanted for).
    Var leaf(Tensor value);
    /// Input excluded from differentiation.
    Var constant(Tensor value);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    Var add(Var a, Var b);
    Var mul(Var a, Var b); // elementwise
    Var add_row(Var x, Var row); // x + broadcast(row), row is 1 x cols
    Var scale(Var x, double factor);
    Var matmul(Var a, Var b);
    Var relu(Var x);
    Var softmax_rows(Var x);
    Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
    /// Per-sequence softmax(q k^T / scale) v with no mask.
    Var attention(Var q, Var k, Var v, std::size_t seq_len, double scale);
    Var concat_cols(std::span<const Var> parts);
    Var segment_mean(Var x, std::size_t seq_len);
    Var segment_last(Var x, std::size_t seq_len);
    Var sum(Var x);
    /// (1/rows) * sum of squared differences; a 1 x 1 scalar.
    Var mse(Var prediction, Var target);

    /// Reverse sweep from a 1 x 1 node. The tape is not modified, so replaying
    /// is deterministic.
    Gradients backward(Var loss) const;

private:
    enum class Op : std::uint8_t {
        Leaf,
        Constant,
        Add,
        Mul,
        AddRow,
        Scale,
        MatMul,
        Relu,
        SoftmaxRows,
        LayerNorm,
        Attention,
        ConcatCols,
        SegmentMean,
        SegmentLast,
        Sum,
        Mse,
    };

    struct Node {
        Node(Op kind, Tensor v, std::vector<std::size_t> in)
            : op(kind), value(std::move(v)), inputs(std::move(in)) {}

        Op op;
        Tensor value;
        std::vector<std::size_t> inputs;
        bool requires_grad = false;
        double scalar = 0.0;
        std::size_t seq_len = 0;
        Tensor cache;      // softmax/attention probabilities, normalized inputs
        Tensor aux_cache;  // layer-norm inverse std per row
    };

    Var push(Node node);
    const Node& node(Var v) const;
    void backprop_node(std::size_t id, std::vector<std::optional<Tensor>>& grads) const;

    std::vector<Node> nodes_;
};

/// Result of a reverse sweep, addressable by the Var handles of the tape.
class Gradients {
public:
    /// Gradient w.r.t. `v`; a zero tensor of the right shape when `v` did not
    /// influence the loss.
    Tensor operator[](Var v) const;

private:
    friend class Tape;
    std::vector<std::optional<Tensor>> grads_;
    std::vector<std::array<std::size_t, 2>> shapes_;
};

} // namespace quantformer
