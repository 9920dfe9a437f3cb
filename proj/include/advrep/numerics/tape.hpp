#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <vector>

#include "advrep/numerics/tensor.hpp"

namespace advrep::nx {

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

enum class OpKind : std::uint8_t {
    Leaf,
    Constant,
    MatMul,
    MatMulBT,
    Add,
    Sub,
    AddRowBias,
    Mul,
    Scale,
    SoftmaxRows,
    LayerNorm,
    Gelu,
    GatherRows,
    Row,
    Dot,
    Sum,
    CrossEntropy,
    L2NormalizeRows,
    LogSumExpRows,
    ConcatCols,
};

/// Gradients keyed by leaf node id.
class GradientMap {
public:
    void set(std::size_t id, Tensor grad) { grads_[id] = std::move(grad); }
    const Tensor& at(Var leaf) const;
    const Tensor& at(std::size_t id) const;
    bool contains(Var leaf) const { return grads_.count(leaf.id) != 0; }
    std::size_t size() const { return grads_.size(); }

private:
    std::map<std::size_t, Tensor> grads_;
};

/// Records a forward computation over the fixed op set and replays it in
/// reverse. One tape per forward pass; not thread-safe.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable leaf that borrows `value`; the tensor must outlive the tape.
    Var leaf(const Tensor& value);
    /// Differentiable leaf owning its value.
    Var owned_leaf(Tensor value);
    /// Non-differentiable input.
    Var constant(Tensor value);
    Var constant_ref(const Tensor& value);

    const Tensor& value(Var v) const { return *nodes_.at(v.id).value; }
    std::size_t size() const { return nodes_.size(); }
    OpKind kind(Var v) const { return nodes_.at(v.id).op; }

    /// Reverse-mode gradients of the scalar `loss` with respect to `leaves`.
    GradientMap backward(Var loss, std::span<const Var> leaves) const;
    GradientMap backward(Var loss, std::initializer_list<Var> leaves) const {
        return backward(loss, std::span<const Var>(leaves.begin(), leaves.size()));
    }

private:
    struct Node {
        OpKind op = OpKind::Constant;
        std::size_t in[3] = {0, 0, 0};
        std::size_t n_in = 0;
        bool requires_grad = false;
        Tensor owned;
        const Tensor* value = nullptr;
        // Op-specific saved state.
        std::vector<std::size_t> indices;
        std::vector<double> saved;
        std::vector<double> saved2;
        double scalar = 0.0;
    };

    Var push(Node node);
    Node& node(std::size_t id) { return nodes_[id]; }
    void backward_node(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const;

    std::deque<Node> nodes_;

    friend Var matmul(Var, Var);
    friend Var matmul_bt(Var, Var);
    friend Var add(Var, Var);
    friend Var sub(Var, Var);
    friend Var add_row_bias(Var, Var);
    friend Var mul(Var, Var);
    friend Var scale(Var, double);
    friend Var softmax_rows(Var);
    friend Var layer_norm(Var, Var, Var, double);
    friend Var gelu(Var);
    friend Var gather_rows(Var, std::span<const std::size_t>);
    friend Var row(Var, std::size_t);
    friend Var dot(Var, Var);
    friend Var sum(Var);
    friend Var cross_entropy(Var, std::span<const std::size_t>, std::span<const int>);
    friend Var l2_normalize_rows(Var);
    friend Var logsumexp_rows(Var);
    friend Var concat_cols(Var, Var);
};

inline constexpr double kLayerNormEps = 1e-12;

/// a[m x k] * b[k x n]
Var matmul(Var a, Var b);
/// a[m x k] * transpose(b[n x k])
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a[m x n] plus b[n] added to every row; the only broadcast supported.
Var add_row_bias(Var a, Var bias);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var softmax_rows(Var t);
Var layer_norm(Var t, Var gain, Var bias, double eps = kLayerNormEps);
/// tanh-approximation GELU.
Var gelu(Var t);
/// Embedding lookup: rows of table[V x d] selected by ids.
Var gather_rows(Var table, std::span<const std::size_t> ids);
/// Row r of a matrix as a [1 x n] matrix.
Var row(Var t, std::size_t r);
Var dot(Var a, Var b);
Var sum(Var t);
/// Mean over rows with mask[i] != 0 of -log softmax(logits[i])[targets[i]].
Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const int> mask);
Var l2_normalize_rows(Var t);
/// [m x n] -> [m x 1], log(sum_j exp(t[i][j])) computed with max subtraction.
Var logsumexp_rows(Var t);
/// [m x p] beside [m x q] -> [m x (p + q)].
Var concat_cols(Var a, Var b);

// Plain-tensor forward helpers sharing the op kernels.
Tensor softmax_rows(const Tensor& t);
double gelu(double x);

}  // namespace advrep::nx
