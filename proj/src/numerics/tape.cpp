#include "advrep/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace advrep::nx {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

Tape* same_tape(Var a, Var b, const char* op) {
    if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
    return a.tape;
}

Tensor& grad_slot(std::vector<Tensor>& grads, std::size_t id, const Shape& shape) {
    if (grads[id].size() == 0) grads[id] = Tensor::zeros(shape);
    return grads[id];
}

void softmax_row(std::span<const double> in, std::span<double> out) {
    double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
        out[j] = std::exp(in[j] - mx);
        total += out[j];
    }
    for (double& v : out) v /= total;
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

const Tensor& GradientMap::at(Var leaf) const { return at(leaf.id); }

const Tensor& GradientMap::at(std::size_t id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) throw std::out_of_range("no gradient recorded for node " + std::to_string(id));
    return it->second;
}

Var Tape::push(Node n) {
    if (n.value == nullptr) {
        nodes_.push_back(std::move(n));
        nodes_.back().value = &nodes_.back().owned;
    } else {
        nodes_.push_back(std::move(n));
    }
    return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(const Tensor& value) {
    Node n;
    n.op = OpKind::Leaf;
    n.requires_grad = true;
    n.value = &value;
    return push(std::move(n));
}

Var Tape::owned_leaf(Tensor value) {
    Node n;
    n.op = OpKind::Leaf;
    n.requires_grad = true;
    n.owned = std::move(value);
    return push(std::move(n));
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = OpKind::Constant;
    n.owned = std::move(value);
    return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
    Node n;
    n.op = OpKind::Constant;
    n.value = &value;
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Forward ops

Var matmul(Var a, Var b) {
    Tape* tape = same_tape(a, b, "matmul");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_rank2(x, "matmul");
    require_rank2(y, "matmul");
    const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
    if (y.rows() != k) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_string(x.shape()) + " vs " +
                         shape_string(y.shape()));
    }
    Tensor out = Tensor::zeros({m, n});
    const double* xd = x.data();
    const double* yd = y.data();
    double* od = out.data();
    // Four output rows share each pass over a row of y. Every entry still
    // accumulates over p in order.
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* o0 = od + i * n;
        double* o1 = o0 + n;
        double* o2 = o1 + n;
        double* o3 = o2 + n;
        for (std::size_t p = 0; p < k; ++p) {
            const double s0 = xd[i * k + p], s1 = xd[(i + 1) * k + p], s2 = xd[(i + 2) * k + p],
                         s3 = xd[(i + 3) * k + p];
            const double* yr = yd + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = yr[j];
                o0[j] += s0 * v;
                o1[j] += s1 * v;
                o2[j] += s2 * v;
                o3[j] += s3 * v;
            }
        }
    }
    for (; i < m; ++i) {
        double* o = od + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = xd[i * k + p];
            const double* yr = yd + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += s * yr[j];
        }
    }
    Tape::Node node;
    node.op = OpKind::MatMul;
    node.in[0] = a.id;
    node.in[1] = b.id;
    node.n_in = 2;
    node.requires_grad = tape->node(a.id).requires_grad || tape->node(b.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

Var matmul_bt(Var a, Var b) {
    Tape* tape = same_tape(a, b, "matmul_bt");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_rank2(x, "matmul_bt");
    require_rank2(y, "matmul_bt");
    const std::size_t m = x.rows(), k = x.cols(), n = y.rows();
    if (y.cols() != k) {
        throw ShapeError("matmul_bt: inner dimensions disagree, " + shape_string(x.shape()) + " vs transpose of " +
                         shape_string(y.shape()));
    }
    Tensor out = Tensor::zeros({m, n});
    const double* yd = y.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* xr = x.data() + i * k;
        double* o = out.data() + i * n;
        // Four independent sums at a time; each one runs over p in order.
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* y0 = yd + j * k;
            const double* y1 = y0 + k;
            const double* y2 = y1 + k;
            const double* y3 = y2 + k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double v = xr[p];
                s0 += v * y0[p];
                s1 += v * y1[p];
                s2 += v * y2[p];
                s3 += v * y3[p];
            }
            o[j] = s0;
            o[j + 1] = s1;
            o[j + 2] = s2;
            o[j + 3] = s3;
        }
        for (; j < n; ++j) {
            const double* yr = yd + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += xr[p] * yr[p];
            o[j] = s;
        }
    }
    Tape::Node node;
    node.op = OpKind::MatMulBT;
    node.in[0] = a.id;
    node.in[1] = b.id;
    node.n_in = 2;
    node.requires_grad = tape->node(a.id).requires_grad || tape->node(b.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

namespace {

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

}  // namespace

Var add(Var a, Var b) {
    Tape* tape = same_tape(a, b, "add");
    require_same_shape(a.value(), b.value(), "add");
    Tape::Node node;
    node.op = OpKind::Add;
    node.in[0] = a.id;
    node.in[1] = b.id;
    node.n_in = 2;
    node.requires_grad = tape->node(a.id).requires_grad || tape->node(b.id).requires_grad;
    node.owned = zip(a.value(), b.value(), [](double x, double y) { return x + y; });
    return tape->push(std::move(node));
}

Var sub(Var a, Var b) {
    Tape* tape = same_tape(a, b, "sub");
    require_same_shape(a.value(), b.value(), "sub");
    Tape::Node node;
    node.op = OpKind::Sub;
    node.in[0] = a.id;
    node.in[1] = b.id;
    node.n_in = 2;
    node.requires_grad = tape->node(a.id).requires_grad || tape->node(b.id).requires_grad;
    node.owned = zip(a.value(), b.value(), [](double x, double y) { return x - y; });
    return tape->push(std::move(node));
}

Var add_row_bias(Var a, Var bias) {
    Tape* tape = same_tape(a, bias, "add_row_bias");
    const Tensor& x = a.value();
    const Tensor& b = bias.value();
    require_rank2(x, "add_row_bias");
    if (b.rank() != 1 || b.size() != x.cols()) {
        throw ShapeError("add_row_bias: bias " + shape_string(b.shape()) + " does not match rows of " +
                         shape_string(x.shape()));
    }
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) += b[j];
    }
    Tape::Node node;
    node.op = OpKind::AddRowBias;
    node.in[0] = a.id;
    node.in[1] = bias.id;
    node.n_in = 2;
    node.requires_grad = tape->node(a.id).requires_grad || tape->node(bias.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

Var mul(Var a, Var b) {
    Tape* tape = same_tape(a, b, "mul");
    require_same_shape(a.value(), b.value(), "mul");
    Tape::Node node;
    node.op = OpKind::Mul;
    node.in[0] = a.id;
    node.in[1] = b.id;
    node.n_in = 2;
    node.requires_grad = tape->node(a.id).requires_grad || tape->node(b.id).requires_grad;
    node.owned = zip(a.value(), b.value(), [](double x, double y) { return x * y; });
    return tape->push(std::move(node));
}

Var scale(Var a, double factor) {
    Tape* tape = a.tape;
    Tensor out = a.value();
    for (double& v : out.values()) v *= factor;
    Tape::Node node;
    node.op = OpKind::Scale;
    node.in[0] = a.id;
    node.n_in = 1;
    node.scalar = factor;
    node.requires_grad = tape->node(a.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

Tensor softmax_rows(const Tensor& t) {
    require_rank2(t, "softmax_rows");
    Tensor out = Tensor::zeros(t.shape());
    for (std::size_t i = 0; i < t.rows(); ++i) softmax_row(t.row(i), out.row(i));
    return out;
}

Var softmax_rows(Var t) {
    Tape* tape = t.tape;
    Tape::Node node;
    node.op = OpKind::SoftmaxRows;
    node.in[0] = t.id;
    node.n_in = 1;
    node.requires_grad = tape->node(t.id).requires_grad;
    node.owned = softmax_rows(t.value());
    return tape->push(std::move(node));
}

Var layer_norm(Var t, Var gain, Var bias, double eps) {
    Tape* tape = same_tape(t, gain, "layer_norm");
    same_tape(t, bias, "layer_norm");
    const Tensor& x = t.value();
    const Tensor& g = gain.value();
    const Tensor& b = bias.value();
    require_rank2(x, "layer_norm");
    const std::size_t m = x.rows(), d = x.cols();
    if (d < 2) throw ShapeError("layer_norm: rows need at least 2 entries, got " + shape_string(x.shape()));
    if (g.rank() != 1 || g.size() != d || b.rank() != 1 || b.size() != d) {
        throw ShapeError("layer_norm: gain " + shape_string(g.shape()) + " / bias " + shape_string(b.shape()) +
                         " do not match " + shape_string(x.shape()));
    }
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> xhat(x.size());
    std::vector<double> rstd(m);
    for (std::size_t i = 0; i < m; ++i) {
        auto r = x.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        rstd[i] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (r[j] - mean) * inv;
            xhat[i * d + j] = h;
            out.at(i, j) = g[j] * h + b[j];
        }
    }
    Tape::Node node;
    node.op = OpKind::LayerNorm;
    node.in[0] = t.id;
    node.in[1] = gain.id;
    node.in[2] = bias.id;
    node.n_in = 3;
    node.scalar = eps;
    node.saved = std::move(xhat);
    node.saved2 = std::move(rstd);
    node.requires_grad = tape->node(t.id).requires_grad || tape->node(gain.id).requires_grad ||
                         tape->node(bias.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

Var gelu(Var t) {
    Tape* tape = t.tape;
    Tensor out = t.value();
    for (double& v : out.values()) v = gelu(v);
    Tape::Node node;
    node.op = OpKind::Gelu;
    node.in[0] = t.id;
    node.n_in = 1;
    node.requires_grad = tape->node(t.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
    Tape* tape = table.tape;
    const Tensor& e = table.value();
    require_rank2(e, "gather_rows");
    if (ids.empty()) throw ShapeError("gather_rows: empty id list");
    const std::size_t d = e.cols();
    Tensor out = Tensor::zeros({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= e.rows()) {
            throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                                    std::to_string(e.rows()) + " rows");
        }
        std::copy_n(e.data() + ids[i] * d, d, out.data() + i * d);
    }
    Tape::Node node;
    node.op = OpKind::GatherRows;
    node.in[0] = table.id;
    node.n_in = 1;
    node.indices.assign(ids.begin(), ids.end());
    node.requires_grad = tape->node(table.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

Var row(Var t, std::size_t r) {
    Tape* tape = t.tape;
    const Tensor& x = t.value();
    require_rank2(x, "row");
    if (r >= x.rows()) throw std::out_of_range("row: index " + std::to_string(r) + " of " + shape_string(x.shape()));
    auto src = x.row(r);
    Tape::Node node;
    node.op = OpKind::Row;
    node.in[0] = t.id;
    node.n_in = 1;
    node.indices = {r};
    node.requires_grad = tape->node(t.id).requires_grad;
    node.owned = Tensor({1, x.cols()}, std::vector<double>(src.begin(), src.end()));
    return tape->push(std::move(node));
}

Var dot(Var a, Var b) {
    Tape* tape = same_tape(a, b, "dot");
    require_same_shape(a.value(), b.value(), "dot");
    Tape::Node node;
    node.op = OpKind::Dot;
    node.in[0] = a.id;
    node.in[1] = b.id;
    node.n_in = 2;
    node.requires_grad = tape->node(a.id).requires_grad || tape->node(b.id).requires_grad;
    node.owned = Tensor::scalar(nx::dot(a.value().values(), b.value().values()));
    return tape->push(std::move(node));
}

Var sum(Var t) {
    Tape* tape = t.tape;
    double s = 0.0;
    for (double v : t.value().values()) s += v;
    Tape::Node node;
    node.op = OpKind::Sum;
    node.in[0] = t.id;
    node.n_in = 1;
    node.requires_grad = tape->node(t.id).requires_grad;
    node.owned = Tensor::scalar(s);
    return tape->push(std::move(node));
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const int> mask) {
    Tape* tape = logits.tape;
    const Tensor& x = logits.value();
    require_rank2(x, "cross_entropy");
    const std::size_t m = x.rows(), n = x.cols();
    if (targets.size() != m || mask.size() != m) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                         std::to_string(mask.size()) + " mask entries for logits " + shape_string(x.shape()));
    }
    std::vector<double> probs(x.size(), 0.0);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (!mask[i]) continue;
        if (targets[i] >= n) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " outside " +
                                    std::to_string(n) + " classes");
        }
        auto r = x.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double z = 0.0;
        for (double v : r) z += std::exp(v - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(r[j] - log_z);
        total += log_z - r[targets[i]];
        ++count;
    }
    if (count == 0) throw std::invalid_argument("cross_entropy: no positions to score");
    Tape::Node node;
    node.op = OpKind::CrossEntropy;
    node.in[0] = logits.id;
    node.n_in = 1;
    node.indices.assign(targets.begin(), targets.end());
    node.saved = std::move(probs);
    node.saved2.assign(mask.begin(), mask.end());
    node.scalar = static_cast<double>(count);
    node.requires_grad = tape->node(logits.id).requires_grad;
    node.owned = Tensor::scalar(total / static_cast<double>(count));
    return tape->push(std::move(node));
}

Var l2_normalize_rows(Var t) {
    Tape* tape = t.tape;
    const Tensor& x = t.value();
    require_rank2(x, "l2_normalize_rows");
    Tensor out = x;
    std::vector<double> norms(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double nrm = frobenius_norm(x.row(i));
        if (nrm == 0.0) throw std::domain_error("l2_normalize_rows: zero-norm row " + std::to_string(i));
        norms[i] = nrm;
        for (double& v : out.row(i)) v /= nrm;
    }
    Tape::Node node;
    node.op = OpKind::L2NormalizeRows;
    node.in[0] = t.id;
    node.n_in = 1;
    node.saved = std::move(norms);
    node.requires_grad = tape->node(t.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

Var logsumexp_rows(Var t) {
    Tape* tape = t.tape;
    const Tensor& x = t.value();
    require_rank2(x, "logsumexp_rows");
    Tensor out = Tensor::zeros({x.rows(), 1});
    std::vector<double> weights(x.size());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double z = 0.0;
        for (double v : r) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        out[i] = lse;
        for (std::size_t j = 0; j < r.size(); ++j) weights[i * x.cols() + j] = std::exp(r[j] - lse);
    }
    Tape::Node node;
    node.op = OpKind::LogSumExpRows;
    node.in[0] = t.id;
    node.n_in = 1;
    node.saved = std::move(weights);
    node.requires_grad = tape->node(t.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

Var concat_cols(Var a, Var b) {
    Tape* tape = same_tape(a, b, "concat_cols");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_rank2(x, "concat_cols");
    require_rank2(y, "concat_cols");
    if (x.rows() != y.rows()) {
        throw ShapeError("concat_cols: row counts differ, " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
    }
    const std::size_t p = x.cols(), q = y.cols();
    Tensor out = Tensor::zeros({x.rows(), p + q});
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::copy_n(x.data() + i * p, p, out.data() + i * (p + q));
        std::copy_n(y.data() + i * q, q, out.data() + i * (p + q) + p);
    }
    Tape::Node node;
    node.op = OpKind::ConcatCols;
    node.in[0] = a.id;
    node.in[1] = b.id;
    node.n_in = 2;
    node.requires_grad = tape->node(a.id).requires_grad || tape->node(b.id).requires_grad;
    node.owned = std::move(out);
    return tape->push(std::move(node));
}

// ---------------------------------------------------------------------------
// Reverse pass

GradientMap Tape::backward(Var loss, std::span<const Var> leaves) const {
    if (loss.tape != this) throw std::invalid_argument("backward: loss node belongs to another tape");
    if (loss.id >= nodes_.size()) throw std::out_of_range("backward: loss node not on tape");
    if (nodes_[loss.id].value->size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got " + shape_string(nodes_[loss.id].value->shape()));
    }
    for (Var l : leaves) {
        if (l.tape != this || l.id >= nodes_.size() || nodes_[l.id].op != OpKind::Leaf) {
            throw std::invalid_argument("backward: requested leaf " + std::to_string(l.id) + " is not a leaf on this tape");
        }
    }

    std::vector<Tensor> grads(loss.id + 1);
    grads[loss.id] = Tensor::filled(nodes_[loss.id].value->shape(), 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (!n.requires_grad || grads[id].size() == 0 || n.n_in == 0) continue;
        backward_node(n, grads[id], grads);
    }

    GradientMap out;
    for (Var l : leaves) {
        if (l.id < grads.size() && grads[l.id].size() != 0) {
            out.set(l.id, grads[l.id]);
        } else {
            out.set(l.id, Tensor::zeros(nodes_[l.id].value->shape()));
        }
    }
    return out;
}

void Tape::backward_node(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const {
    auto wants = [&](std::size_t k) { return nodes_[n.in[k]].requires_grad; };
    auto input = [&](std::size_t k) -> const Tensor& { return *nodes_[n.in[k]].value; };
    auto slot = [&](std::size_t k) -> Tensor& { return grad_slot(grads, n.in[k], input(k).shape()); };

    switch (n.op) {
        case OpKind::Leaf:
        case OpKind::Constant:
            return;
        case OpKind::MatMul: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            const std::size_t m = a.rows(), k = a.cols(), cols = b.cols();
            if (wants(0)) {
                Tensor& ga = slot(0);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* gr = g.data() + i * cols;
                    double* out = ga.data() + i * k;
                    std::size_t p = 0;
                    for (; p + 4 <= k; p += 4) {
                        const double* b0 = b.data() + p * cols;
                        const double* b1 = b0 + cols;
                        const double* b2 = b1 + cols;
                        const double* b3 = b2 + cols;
                        double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) {
                            const double v = gr[j];
                            s0 += v * b0[j];
                            s1 += v * b1[j];
                            s2 += v * b2[j];
                            s3 += v * b3[j];
                        }
                        out[p] += s0;
                        out[p + 1] += s1;
                        out[p + 2] += s2;
                        out[p + 3] += s3;
                    }
                    for (; p < k; ++p) {
                        const double* br = b.data() + p * cols;
                        double s = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) s += gr[j] * br[j];
                        out[p] += s;
                    }
                }
            }
            if (wants(1)) {
                Tensor& gb = slot(1);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* gr = g.data() + i * cols;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double s = a.data()[i * k + p];
                        if (s == 0.0) continue;
                        double* out = gb.data() + p * cols;
                        for (std::size_t j = 0; j < cols; ++j) out[j] += s * gr[j];
                    }
                }
            }
            return;
        }
        case OpKind::MatMulBT: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            const std::size_t m = a.rows(), k = a.cols(), cols = b.rows();
            if (wants(0)) {
                Tensor& ga = slot(0);
                for (std::size_t i = 0; i < m; ++i) {
                    double* out = ga.data() + i * k;
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double s = g.data()[i * cols + j];
                        if (s == 0.0) continue;
                        const double* br = b.data() + j * k;
                        for (std::size_t p = 0; p < k; ++p) out[p] += s * br[p];
                    }
                }
            }
            if (wants(1)) {
                Tensor& gb = slot(1);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* ar = a.data() + i * k;
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double s = g.data()[i * cols + j];
                        if (s == 0.0) continue;
                        double* out = gb.data() + j * k;
                        for (std::size_t p = 0; p < k; ++p) out[p] += s * ar[p];
                    }
                }
            }
            return;
        }
        case OpKind::Add:
        case OpKind::Sub: {
            if (wants(0)) {
                Tensor& ga = slot(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (wants(1)) {
                Tensor& gb = slot(1);
                const double sign = n.op == OpKind::Add ? 1.0 : -1.0;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
            }
            return;
        }
        case OpKind::AddRowBias: {
            if (wants(0)) {
                Tensor& ga = slot(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (wants(1)) {
                Tensor& gb = slot(1);
                const std::size_t cols = gb.size();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
            }
            return;
        }
        case OpKind::Mul: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            if (wants(0)) {
                Tensor& ga = slot(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
            }
            if (wants(1)) {
                Tensor& gb = slot(1);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
            }
            return;
        }
        case OpKind::Scale: {
            Tensor& ga = slot(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
            return;
        }
        case OpKind::SoftmaxRows: {
            const Tensor& y = *n.value;
            Tensor& ga = slot(0);
            for (std::size_t i = 0; i < y.rows(); ++i) {
                auto yr = y.row(i);
                auto gr = g.row(i);
                const double s = nx::dot(yr, gr);
                auto out = ga.row(i);
                for (std::size_t j = 0; j < yr.size(); ++j) out[j] += yr[j] * (gr[j] - s);
            }
            return;
        }
        case OpKind::LayerNorm: {
            const Tensor& gain = input(1);
            const std::size_t m = g.rows(), d = g.cols();
            const auto& xhat = n.saved;
            const auto& rstd = n.saved2;
            if (wants(0)) {
                Tensor& gx = slot(0);
                std::vector<double> gh(d);
                for (std::size_t i = 0; i < m; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        gh[j] = g.at(i, j) * gain[j];
                        s1 += gh[j];
                        s2 += gh[j] * xhat[i * d + j];
                    }
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        gx.at(i, j) += rstd[i] * (gh[j] - inv_d * s1 - xhat[i * d + j] * inv_d * s2);
                    }
                }
            }
            if (wants(1)) {
                Tensor& gg = slot(1);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < d; ++j) gg[j] += g.at(i, j) * xhat[i * d + j];
                }
            }
            if (n.n_in > 2 && wants(2)) {
                Tensor& gb = slot(2);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
                }
            }
            return;
        }
        case OpKind::Gelu: {
            const Tensor& x = input(0);
            Tensor& gx = slot(0);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double v = x[i];
                const double u = kGeluC * (v + kGeluA * v * v * v);
                const double th = std::tanh(u);
                const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
            }
            return;
        }
        case OpKind::GatherRows: {
            Tensor& ge = slot(0);
            const std::size_t d = g.cols();
            for (std::size_t i = 0; i < n.indices.size(); ++i) {
                double* out = ge.data() + n.indices[i] * d;
                const double* gr = g.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) out[j] += gr[j];
            }
            return;
        }
        case OpKind::Row: {
            Tensor& gx = slot(0);
            auto out = gx.row(n.indices[0]);
            for (std::size_t j = 0; j < out.size(); ++j) out[j] += g[j];
            return;
        }
        case OpKind::Dot: {
            const double s = g[0];
            if (wants(0)) {
                Tensor& ga = slot(0);
                const Tensor& b = input(1);
                for (std::size_t i = 0; i < b.size(); ++i) ga[i] += s * b[i];
            }
            if (wants(1)) {
                Tensor& gb = slot(1);
                const Tensor& a = input(0);
                for (std::size_t i = 0; i < a.size(); ++i) gb[i] += s * a[i];
            }
            return;
        }
        case OpKind::Sum: {
            Tensor& gx = slot(0);
            for (double& v : gx.values()) v += g[0];
            return;
        }
        case OpKind::CrossEntropy: {
            Tensor& gx = slot(0);
            const std::size_t cols = gx.cols();
            const double s = g[0] / n.scalar;
            for (std::size_t i = 0; i < gx.rows(); ++i) {
                if (n.saved2[i] == 0.0) continue;
                for (std::size_t j = 0; j < cols; ++j) gx.at(i, j) += s * n.saved[i * cols + j];
                gx.at(i, n.indices[i]) -= s;
            }
            return;
        }
        case OpKind::L2NormalizeRows: {
            const Tensor& y = *n.value;
            Tensor& gx = slot(0);
            for (std::size_t i = 0; i < y.rows(); ++i) {
                auto yr = y.row(i);
                auto gr = g.row(i);
                const double s = nx::dot(yr, gr);
                auto out = gx.row(i);
                for (std::size_t j = 0; j < yr.size(); ++j) out[j] += (gr[j] - yr[j] * s) / n.saved[i];
            }
            return;
        }
        case OpKind::LogSumExpRows: {
            Tensor& gx = slot(0);
            const std::size_t cols = gx.cols();
            for (std::size_t i = 0; i < gx.rows(); ++i) {
                for (std::size_t j = 0; j < cols; ++j) gx.at(i, j) += g[i] * n.saved[i * cols + j];
            }
            return;
        }
        case OpKind::ConcatCols: {
            const std::size_t p = input(0).cols(), q = input(1).cols();
            for (std::size_t i = 0; i < g.rows(); ++i) {
                if (wants(0)) {
                    double* out = slot(0).data() + i * p;
                    for (std::size_t j = 0; j < p; ++j) out[j] += g.data()[i * (p + q) + j];
                }
                if (wants(1)) {
                    double* out = slot(1).data() + i * q;
                    for (std::size_t j = 0; j < q; ++j) out[j] += g.data()[i * (p + q) + p + j];
                }
            }
            return;
        }
    }
}

}  // namespace advrep::nx
