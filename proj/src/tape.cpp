#include "quantformer/tape.hpp"

#include "quantformer/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace quantformer {

namespace {

std::string shape_str(const Tensor& t) {
    return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                            shape_str(b));
    }
}

void require_sequences(const Tensor& x, std::size_t seq_len, const char* op) {
    if (seq_len == 0 || x.rows() % seq_len != 0) {
        throw ContractError(std::string(op) + ": " + std::to_string(x.rows()) +
                            " rows are not a whole number of sequences of length " +
                            std::to_string(seq_len));
    }
}

void accumulate(std::optional<Tensor>& slot, Tensor g) {
    if (slot) {
        *slot += g;
    } else {
        slot = std::move(g);
    }
}

Tensor softmax_backward(const Tensor& probs, const Tensor& grad_out) {
    Tensor dx(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto p = probs.row(r);
        const auto g = grad_out.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * g[c];
        auto d = dx.row(r);
        for (std::size_t c = 0; c < p.size(); ++c) d[c] = p[c] * (g[c] - dot);
    }
    return dx;
}

void softmax_row_inplace(std::span<double> row) {
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
        v = std::exp(v - peak);
        total += v;
    }
    for (double& v : row) v /= total;
}

} // namespace

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.id >= nodes_.size()) throw ContractError("Var does not belong to this tape");
    return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::leaf(Tensor value) {
    Node n(Op::Leaf, std::move(value), {});
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::constant(Tensor value) { return push(Node(Op::Constant, std::move(value), {})); }

Var Tape::add(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require_same_shape(x, y, "add");
    Tensor out = x;
    out += y;
    Node n(Op::Add, std::move(out), {a.id, b.id});
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require_same_shape(x, y, "mul");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    Node n(Op::Mul, std::move(out), {a.id, b.id});
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

Var Tape::add_row(Var x, Var row) {
    const Tensor& m = value(x);
    const Tensor& b = value(row);
    if (b.rows() != 1 || b.cols() != m.cols()) {
        throw ContractError("add_row: bias " + shape_str(b) + " incompatible with " + shape_str(m));
    }
    Tensor out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto o = out.row(r);
        for (std::size_t c = 0; c < o.size(); ++c) o[c] += b[c];
    }
    Node n(Op::AddRow, std::move(out), {x.id, row.id});
    n.requires_grad = requires_grad(x) || requires_grad(row);
    return push(std::move(n));
}

Var Tape::scale(Var x, double factor) {
    Tensor out = value(x);
    for (double& v : out.values()) v *= factor;
    Node n(Op::Scale, std::move(out), {x.id});
    n.requires_grad = requires_grad(x);
    n.scalar = factor;
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    Node n(Op::MatMul, quantformer::matmul(value(a), value(b)), {a.id, b.id});
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

Var Tape::relu(Var x) {
    Tensor out = value(x);
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    Node n(Op::Relu, std::move(out), {x.id});
    n.requires_grad = requires_grad(x);
    return push(std::move(n));
}

Var Tape::softmax_rows(Var x) {
    Tensor out = value(x);
    if (out.cols() == 0) throw ContractError("softmax_rows: zero columns");
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_row_inplace(out.row(r));
    Node n(Op::SoftmaxRows, std::move(out), {x.id});
    n.requires_grad = requires_grad(x);
    return push(std::move(n));
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    const Tensor& in = value(x);
    const Tensor& g = value(gain);
    const Tensor& b = value(bias);
    if (g.rows() != 1 || g.cols() != in.cols() || !g.same_shape(b)) {
        throw ContractError("layer_norm_rows: gain/bias must be 1x" + std::to_string(in.cols()));
    }
    const std::size_t cols = in.cols();
    Tensor normalized(in.rows(), cols);
    Tensor inv_std(in.rows(), 1);
    Tensor out(in.rows(), cols);
    for (std::size_t r = 0; r < in.rows(); ++r) {
        const auto row = in.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std(r, 0) = is;
        for (std::size_t c = 0; c < cols; ++c) {
            normalized(r, c) = (row[c] - mean) * is;
            out(r, c) = normalized(r, c) * g[c] + b[c];
        }
    }
    Node n(Op::LayerNorm, std::move(out), {x.id, gain.id, bias.id});
    n.requires_grad = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
    n.cache = std::move(normalized);
    n.aux_cache = std::move(inv_std);
    return push(std::move(n));
}

Var Tape::attention(Var q, Var k, Var v, std::size_t seq_len, double scale) {
    const Tensor& Q = value(q);
    const Tensor& K = value(k);
    const Tensor& V = value(v);
    require_same_shape(Q, K, "attention(q,k)");
    if (V.rows() != Q.rows()) throw ContractError("attention: value rows differ from query rows");
    require_sequences(Q, seq_len, "attention");
    if (!(scale > 0.0)) throw ContractError("attention: scale must be positive");

    const std::size_t n_seq = Q.rows() / seq_len;
    const std::size_t dk = Q.cols();
    const std::size_t dv = V.cols();
    Tensor probs(Q.rows(), seq_len);
    Tensor out(Q.rows(), dv);
    for (std::size_t s = 0; s < n_seq; ++s) {
        const std::size_t base = s * seq_len;
        for (std::size_t i = 0; i < seq_len; ++i) {
            auto p = probs.row(base + i);
            const auto qi = Q.row(base + i);
            for (std::size_t j = 0; j < seq_len; ++j) {
                const auto kj = K.row(base + j);
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) acc += qi[c] * kj[c];
                p[j] = acc / scale;
            }
            softmax_row_inplace(p);
            auto o = out.row(base + i);
            for (std::size_t j = 0; j < seq_len; ++j) {
                const auto vj = V.row(base + j);
                for (std::size_t c = 0; c < dv; ++c) o[c] += p[j] * vj[c];
            }
        }
    }
    Node n(Op::Attention, std::move(out), {q.id, k.id, v.id});
    n.requires_grad = requires_grad(q) || requires_grad(k) || requires_grad(v);
    n.scalar = scale;
    n.seq_len = seq_len;
    n.cache = std::move(probs);
    return push(std::move(n));
}

Var Tape::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t rows = value(parts.front()).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
        if (value(p).rows() != rows) throw ContractError("concat_cols: row count mismatch");
        cols += value(p).cols();
    }
    Tensor out(rows, cols);
    Node n(Op::ConcatCols, Tensor{}, {});
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& t = value(p);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(t.row(r).begin(), t.row(r).end(), out.row(r).begin() + offset);
        }
        offset += t.cols();
        n.inputs.push_back(p.id);
        n.requires_grad = n.requires_grad || requires_grad(p);
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Tape::segment_mean(Var x, std::size_t seq_len) {
    const Tensor& in = value(x);
    require_sequences(in, seq_len, "segment_mean");
    const std::size_t n_seq = in.rows() / seq_len;
    Tensor out(n_seq, in.cols());
    for (std::size_t s = 0; s < n_seq; ++s) {
        auto o = out.row(s);
        for (std::size_t i = 0; i < seq_len; ++i) {
            const auto r = in.row(s * seq_len + i);
            for (std::size_t c = 0; c < o.size(); ++c) o[c] += r[c];
        }
        for (double& v : o) v /= static_cast<double>(seq_len);
    }
    Node n(Op::SegmentMean, std::move(out), {x.id});
    n.requires_grad = requires_grad(x);
    n.seq_len = seq_len;
    return push(std::move(n));
}

Var Tape::segment_last(Var x, std::size_t seq_len) {
    const Tensor& in = value(x);
    require_sequences(in, seq_len, "segment_last");
    const std::size_t n_seq = in.rows() / seq_len;
    Tensor out(n_seq, in.cols());
    for (std::size_t s = 0; s < n_seq; ++s) {
        const auto r = in.row(s * seq_len + seq_len - 1);
        std::copy(r.begin(), r.end(), out.row(s).begin());
    }
    Node n(Op::SegmentLast, std::move(out), {x.id});
    n.requires_grad = requires_grad(x);
    n.seq_len = seq_len;
    return push(std::move(n));
}

Var Tape::sum(Var x) {
    double total = 0.0;
    for (double v : value(x).values()) total += v;
    Node n(Op::Sum, Tensor(1, 1, total), {x.id});
    n.requires_grad = requires_grad(x);
    return push(std::move(n));
}

Var Tape::mse(Var prediction, Var target) {
    const Tensor& p = value(prediction);
    const Tensor& y = value(target);
    require_same_shape(p, y, "mse");
    if (p.rows() == 0) throw ContractError("mse: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - y[i]) * (p[i] - y[i]);
    Node n(Op::Mse, Tensor(1, 1, total / static_cast<double>(p.rows())),
           {prediction.id, target.id});
    n.requires_grad = requires_grad(prediction) || requires_grad(target);
    return push(std::move(n));
}

Gradients Tape::backward(Var loss) const {
    const Tensor& lv = value(loss);
    if (lv.size() != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(lv));
    }
    std::vector<std::optional<Tensor>> grads(nodes_.size());
    grads[loss.id] = Tensor(1, 1, 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        if (!grads[id] || !nodes_[id].requires_grad) continue;
        if (nodes_[id].op == Op::Leaf) continue;
        backprop_node(id, grads);
        grads[id].reset();
    }
    Gradients out;
    out.grads_ = std::move(grads);
    out.shapes_.reserve(nodes_.size());
    for (const auto& n : nodes_) out.shapes_.push_back(n.value.shape());
    return out;
}

void Tape::backprop_node(std::size_t id, std::vector<std::optional<Tensor>>& grads) const {
    const Node& n = nodes_[id];
    const Tensor& g = *grads[id];
    auto wants = [&](std::size_t input) { return nodes_[input].requires_grad; };

    switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
        break;
    case Op::Add:
        for (std::size_t in : n.inputs) {
            if (wants(in)) accumulate(grads[in], g);
        }
        break;
    case Op::Mul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        if (wants(n.inputs[0])) {
            Tensor d = g;
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= b[i];
            accumulate(grads[n.inputs[0]], std::move(d));
        }
        if (wants(n.inputs[1])) {
            Tensor d = g;
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= a[i];
            accumulate(grads[n.inputs[1]], std::move(d));
        }
        break;
    }
    case Op::AddRow: {
        if (wants(n.inputs[0])) accumulate(grads[n.inputs[0]], g);
        if (wants(n.inputs[1])) {
            Tensor d(1, g.cols());
            for (std::size_t r = 0; r < g.rows(); ++r) {
                const auto gr = g.row(r);
                for (std::size_t c = 0; c < gr.size(); ++c) d[c] += gr[c];
            }
            accumulate(grads[n.inputs[1]], std::move(d));
        }
        break;
    }
    case Op::Scale: {
        Tensor d = g;
        for (double& v : d.values()) v *= n.scalar;
        accumulate(grads[n.inputs[0]], std::move(d));
        break;
    }
    case Op::MatMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        if (wants(n.inputs[0])) accumulate(grads[n.inputs[0]], matmul_a_bt(g, b));
        if (wants(n.inputs[1])) accumulate(grads[n.inputs[1]], matmul_at_b(a, g));
        break;
    }
    case Op::Relu: {
        const Tensor& in = nodes_[n.inputs[0]].value;
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (!(in[i] > 0.0)) d[i] = 0.0;
        }
        accumulate(grads[n.inputs[0]], std::move(d));
        break;
    }
    case Op::SoftmaxRows:
        accumulate(grads[n.inputs[0]], softmax_backward(n.value, g));
        break;
    case Op::LayerNorm: {
        const Tensor& xhat = n.cache;
        const Tensor& inv_std = n.aux_cache;
        const Tensor& gain = nodes_[n.inputs[1]].value;
        const std::size_t cols = xhat.cols();
        if (wants(n.inputs[0])) {
            Tensor dx(xhat.rows(), cols);
            std::vector<double> dxhat(cols);
            for (std::size_t r = 0; r < xhat.rows(); ++r) {
                double mean_d = 0.0;
                double mean_dx = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    dxhat[c] = g(r, c) * gain[c];
                    mean_d += dxhat[c];
                    mean_dx += dxhat[c] * xhat(r, c);
                }
                mean_d /= static_cast<double>(cols);
                mean_dx /= static_cast<double>(cols);
                for (std::size_t c = 0; c < cols; ++c) {
                    dx(r, c) = inv_std(r, 0) * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
                }
            }
            accumulate(grads[n.inputs[0]], std::move(dx));
        }
        if (wants(n.inputs[1])) {
            Tensor dg(1, cols);
            for (std::size_t r = 0; r < xhat.rows(); ++r) {
                for (std::size_t c = 0; c < cols; ++c) dg[c] += g(r, c) * xhat(r, c);
            }
            accumulate(grads[n.inputs[1]], std::move(dg));
        }
        if (wants(n.inputs[2])) {
            Tensor db(1, cols);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < cols; ++c) db[c] += g(r, c);
            }
            accumulate(grads[n.inputs[2]], std::move(db));
        }
        break;
    }
    case Op::Attention: {
        const Tensor& Q = nodes_[n.inputs[0]].value;
        const Tensor& K = nodes_[n.inputs[1]].value;
        const Tensor& V = nodes_[n.inputs[2]].value;
        const Tensor& P = n.cache;
        const std::size_t L = n.seq_len;
        const std::size_t n_seq = Q.rows() / L;
        const std::size_t dk = Q.cols();
        const std::size_t dv = V.cols();
        Tensor dQ(Q.rows(), dk);
        Tensor dK(K.rows(), dk);
        Tensor dV(V.rows(), dv);
        std::vector<double> dS(L * L);
        for (std::size_t s = 0; s < n_seq; ++s) {
            const std::size_t base = s * L;
            for (std::size_t i = 0; i < L; ++i) {
                const auto go = g.row(base + i);
                const auto p = P.row(base + i);
                // dV += P^T dO ; dP = dO V^T
                double dot = 0.0;
                for (std::size_t j = 0; j < L; ++j) {
                    const auto vj = V.row(base + j);
                    auto dvj = dV.row(base + j);
                    double dp = 0.0;
                    for (std::size_t c = 0; c < dv; ++c) {
                        dvj[c] += p[j] * go[c];
                        dp += go[c] * vj[c];
                    }
                    dS[i * L + j] = dp;
                    dot += p[j] * dp;
                }
                for (std::size_t j = 0; j < L; ++j) {
                    dS[i * L + j] = p[j] * (dS[i * L + j] - dot) / n.scalar;
                }
            }
            for (std::size_t i = 0; i < L; ++i) {
                auto dqi = dQ.row(base + i);
                const auto qi = Q.row(base + i);
                for (std::size_t j = 0; j < L; ++j) {
                    const double w = dS[i * L + j];
                    const auto kj = K.row(base + j);
                    auto dkj = dK.row(base + j);
                    for (std::size_t c = 0; c < dk; ++c) {
                        dqi[c] += w * kj[c];
                        dkj[c] += w * qi[c];
                    }
                }
            }
        }
        if (wants(n.inputs[0])) accumulate(grads[n.inputs[0]], std::move(dQ));
        if (wants(n.inputs[1])) accumulate(grads[n.inputs[1]], std::move(dK));
        if (wants(n.inputs[2])) accumulate(grads[n.inputs[2]], std::move(dV));
        break;
    }
    case Op::ConcatCols: {
        std::size_t offset = 0;
        for (std::size_t in : n.inputs) {
            const std::size_t w = nodes_[in].value.cols();
            if (wants(in)) {
                Tensor d(g.rows(), w);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    const auto gr = g.row(r);
                    std::copy(gr.begin() + offset, gr.begin() + offset + w, d.row(r).begin());
                }
                accumulate(grads[in], std::move(d));
            }
            offset += w;
        }
        break;
    }
    case Op::SegmentMean: {
        const Tensor& in = nodes_[n.inputs[0]].value;
        Tensor d(in.rows(), in.cols());
        const double inv = 1.0 / static_cast<double>(n.seq_len);
        for (std::size_t r = 0; r < in.rows(); ++r) {
            const auto gr = g.row(r / n.seq_len);
            auto dr = d.row(r);
            for (std::size_t c = 0; c < dr.size(); ++c) dr[c] = gr[c] * inv;
        }
        accumulate(grads[n.inputs[0]], std::move(d));
        break;
    }
    case Op::SegmentLast: {
        const Tensor& in = nodes_[n.inputs[0]].value;
        Tensor d(in.rows(), in.cols());
        for (std::size_t s = 0; s < g.rows(); ++s) {
            const auto gr = g.row(s);
            std::copy(gr.begin(), gr.end(), d.row(s * n.seq_len + n.seq_len - 1).begin());
        }
        accumulate(grads[n.inputs[0]], std::move(d));
        break;
    }
    case Op::Sum: {
        const Tensor& in = nodes_[n.inputs[0]].value;
        accumulate(grads[n.inputs[0]], Tensor(in.rows(), in.cols(), g[0]));
        break;
    }
    case Op::Mse: {
        const Tensor& p = nodes_[n.inputs[0]].value;
        const Tensor& y = nodes_[n.inputs[1]].value;
        const double factor = 2.0 * g[0] / static_cast<double>(p.rows());
        Tensor d(p.rows(), p.cols());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = factor * (p[i] - y[i]);
        if (wants(n.inputs[1])) {
            Tensor dy = d;
            for (double& v : dy.values()) v = -v;
            accumulate(grads[n.inputs[1]], std::move(dy));
        }
        if (wants(n.inputs[0])) accumulate(grads[n.inputs[0]], std::move(d));
        break;
    }
    }
}

Tensor Gradients::operator[](Var v) const {
    if (v.id >= shapes_.size()) throw ContractError("Var does not belong to this gradient set");
    if (grads_[v.id]) return *grads_[v.id];
    return Tensor(shapes_[v.id][0], shapes_[v.id][1]);
}

} // namespace quantformer
