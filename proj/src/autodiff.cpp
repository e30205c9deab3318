#include "hatemtl/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace hatemtl::ad {

Var Tape::constant(Matrix value) {
    Node n;
    n.own = std::move(value);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

Var Tape::param(const Matrix& value, Matrix* grad) {
    Node n;
    n.external = &value;
    n.sink = grad;
    n.needs_grad = grad != nullptr;
    if (grad && (grad->rows() != value.rows() || grad->cols() != value.cols())) {
        throw std::invalid_argument("Tape::param: gradient shape mismatch");
    }
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    Node n;
    n.own = std::move(value);
    for (Var v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
    Node n;
    n.own = std::move(value);
    for (Var v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.own;
}

Matrix& Tape::grad_storage(Var v) {
    Node& n = nodes_[v.id];
    n.has_grad = true;
    if (n.sink) return *n.sink;
    if (n.grad.size() == 0 && value(v).size() != 0) {
        n.grad = Matrix::Zero(value(v).rows(), value(v).cols());
    }
    return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
    if (!nodes_[v.id].needs_grad) return;
    grad_storage(v) += g;
}

void Tape::backward(Var loss) {
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw std::invalid_argument("backward: loss must be 1x1");
    if (!nodes_[loss.id].needs_grad) return;
    grad_storage(loss)(0, 0) += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || !n.has_grad) continue;
        n.backward(*this, n.grad, value(Var{i}));
    }
}

Var matmul(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) * t.value(b);
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(a)) t.grad_storage(a).noalias() += g * t.value(b).transpose();
        if (t.needs_grad(b)) t.grad_storage(b).noalias() += t.value(a).transpose() * g;
    });
}

Var matmul_bt(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) * t.value(b).transpose();
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(a)) t.grad_storage(a).noalias() += g * t.value(b);
        if (t.needs_grad(b)) t.grad_storage(b).noalias() += g.transpose() * t.value(a);
    });
}

Var add(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) + t.value(b);
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) - t.value(b);
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(a, g);
        if (t.needs_grad(b)) t.grad_storage(b) -= g;
    });
}

Var hadamard(Tape& t, Var a, Var b) {
    Matrix out = t.value(a).cwiseProduct(t.value(b));
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(a)) t.grad_storage(a) += g.cwiseProduct(t.value(b));
        if (t.needs_grad(b)) t.grad_storage(b) += g.cwiseProduct(t.value(a));
    });
}

Var add_row(Tape& t, Var a, Var row) {
    const Matrix& r = t.value(row);
    if (r.rows() != 1 || r.cols() != t.value(a).cols()) {
        throw std::invalid_argument("add_row: shape mismatch");
    }
    Matrix out = t.value(a).rowwise() + r.row(0);
    return t.record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(a, g);
        if (t.needs_grad(row)) t.grad_storage(row) += g.colwise().sum();
    });
}

Var scale(Tape& t, Var a, double s) {
    Matrix out = t.value(a) * s;
    return t.record(std::move(out), {a}, [a, s](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(a)) t.grad_storage(a) += g * s;
    });
}

Var relu(Tape& t, Var a) {
    Matrix out = t.value(a).cwiseMax(0.0);
    return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
        t.grad_storage(a) += (y.array() > 0.0).select(g, 0.0);
    });
}

Var sigmoid(Tape& t, Var a) {
    Matrix out = (1.0 + (-t.value(a).array()).exp()).inverse().matrix();
    return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
        t.grad_storage(a).array() += g.array() * y.array() * (1.0 - y.array());
    });
}

Var tanh(Tape& t, Var a) {
    Matrix out = t.value(a).array().tanh().matrix();
    return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
        t.grad_storage(a).array() += g.array() * (1.0 - y.array().square());
    });
}

Matrix softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

Var softmax_rows(Tape& t, Var a) {
    Matrix out = softmax(t.value(a));
    return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
        const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        t.grad_storage(a).array() += y.array() * (g.colwise() - dot).array();
    });
}

Var layer_norm(Tape& t, Var a, Var gain, Var bias, double eps) {
    const Matrix& x = t.value(a);
    const Eigen::Index d = x.cols();
    const Eigen::VectorXd mean = x.rowwise().mean();
    Matrix centered = x.colwise() - mean;
    const Eigen::VectorXd inv_std =
        ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt();
    Matrix xhat = centered.array().colwise() * inv_std.array();
    Matrix out = (xhat.array().rowwise() * t.value(gain).row(0).array()).matrix();
    out.rowwise() += t.value(bias).row(0);
    return t.record(std::move(out), {a, gain, bias},
                    [a, gain, bias, xhat = std::move(xhat), inv_std](Tape& t, const Matrix& g,
                                                                    const Matrix&) {
                        if (t.needs_grad(gain)) {
                            t.grad_storage(gain) += g.cwiseProduct(xhat).colwise().sum();
                        }
                        if (t.needs_grad(bias)) t.grad_storage(bias) += g.colwise().sum();
                        if (!t.needs_grad(a)) return;
                        const Matrix dxhat = g.array().rowwise() * t.value(gain).row(0).array();
                        const Eigen::VectorXd m1 = dxhat.rowwise().mean();
                        const Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
                        Matrix dx = dxhat.colwise() - m1;
                        dx -= (xhat.array().colwise() * m2.array()).matrix();
                        t.grad_storage(a) += (dx.array().colwise() * inv_std.array()).matrix();
                    });
}

Var gather_rows(Tape& t, Var table, std::vector<int> ids) {
    const Matrix& tab = t.value(table);
    Matrix out(static_cast<Eigen::Index>(ids.size()), tab.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tab.rows()) throw std::out_of_range("gather_rows: id out of range");
        out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
    }
    return t.record(std::move(out), {table},
                    [table, ids = std::move(ids)](Tape& t, const Matrix& g, const Matrix&) {
                        Matrix& dt = t.grad_storage(table);
                        for (std::size_t i = 0; i < ids.size(); ++i) {
                            dt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
                        }
                    });
}

Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
    Matrix out = t.value(a).middleRows(start, count);
    return t.record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
        t.grad_storage(a).middleRows(start, count) += g;
    });
}

Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
    Matrix out = t.value(a).middleCols(start, count);
    return t.record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
        t.grad_storage(a).middleCols(start, count) += g;
    });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: nothing to concatenate");
    Eigen::Index rows = 0;
    const Eigen::Index cols = t.value(parts[0]).cols();
    for (Var p : parts) {
        if (t.value(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += t.value(p).rows();
    }
    Matrix out(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
        out.middleRows(r, t.value(p).rows()) = t.value(p);
        r += t.value(p).rows();
    }
    return t.record(std::move(out), parts, [parts](Tape& t, const Matrix& g, const Matrix&) {
        Eigen::Index r = 0;
        for (Var p : parts) {
            const Eigen::Index n = t.value(p).rows();
            if (t.needs_grad(p)) t.grad_storage(p) += g.middleRows(r, n);
            r += n;
        }
    });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: nothing to concatenate");
    Eigen::Index cols = 0;
    const Eigen::Index rows = t.value(parts[0]).rows();
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += t.value(p).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        out.middleCols(c, t.value(p).cols()) = t.value(p);
        c += t.value(p).cols();
    }
    return t.record(std::move(out), parts, [parts](Tape& t, const Matrix& g, const Matrix&) {
        Eigen::Index c = 0;
        for (Var p : parts) {
            const Eigen::Index n = t.value(p).cols();
            if (t.needs_grad(p)) t.grad_storage(p) += g.middleCols(c, n);
            c += n;
        }
    });
}

Var unfold_rows(Tape& t, Var a, Eigen::Index width) {
    const Matrix& x = t.value(a);
    const Eigen::Index d = x.cols();
    const Eigen::Index windows = x.rows() - width + 1;
    if (width < 1 || windows < 1) throw std::invalid_argument("unfold_rows: window wider than input");
    Matrix out(windows, width * d);
    for (Eigen::Index i = 0; i < windows; ++i) {
        for (Eigen::Index j = 0; j < width; ++j) out.block(i, j * d, 1, d) = x.row(i + j);
    }
    return t.record(std::move(out), {a}, [a, width, d, windows](Tape& t, const Matrix& g, const Matrix&) {
        Matrix& dx = t.grad_storage(a);
        for (Eigen::Index i = 0; i < windows; ++i) {
            for (Eigen::Index j = 0; j < width; ++j) dx.row(i + j) += g.block(i, j * d, 1, d);
        }
    });
}

Var mean_rows(Tape& t, Var a) {
    const Eigen::Index n = t.value(a).rows();
    if (n == 0) throw std::invalid_argument("mean_rows: empty input");
    Matrix out = t.value(a).colwise().mean();
    return t.record(std::move(out), {a}, [a, n](Tape& t, const Matrix& g, const Matrix&) {
        t.grad_storage(a).rowwise() += g.row(0) / static_cast<double>(n);
    });
}

Var max_rows(Tape& t, Var a) {
    const Matrix& x = t.value(a);
    if (x.rows() == 0) throw std::invalid_argument("max_rows: empty input");
    Matrix out(1, x.cols());
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < x.rows(); ++r) {
            if (x(r, c) > x(best, c)) best = r;
        }
        arg[static_cast<std::size_t>(c)] = best;
        out(0, c) = x(best, c);
    }
    return t.record(std::move(out), {a}, [a, arg = std::move(arg)](Tape& t, const Matrix& g, const Matrix&) {
        Matrix& dx = t.grad_storage(a);
        for (std::size_t c = 0; c < arg.size(); ++c) {
            dx(arg[c], static_cast<Eigen::Index>(c)) += g(0, static_cast<Eigen::Index>(c));
        }
    });
}

Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels) {
    const Matrix& z = t.value(logits);
    if (static_cast<std::size_t>(z.rows()) != labels.size() || labels.empty()) {
        throw std::invalid_argument("softmax_cross_entropy: batch size mismatch");
    }
    Matrix probs = softmax(z);
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (labels[i] < 0 || labels[i] >= z.cols()) {
            throw std::out_of_range("softmax_cross_entropy: label out of range");
        }
        const double m = z.row(r).maxCoeff();
        const double lse = m + std::log((z.row(r).array() - m).exp().sum());
        loss += lse - z(r, labels[i]);
    }
    const double n = static_cast<double>(labels.size());
    Matrix out(1, 1);
    out(0, 0) = loss / n;
    return t.record(std::move(out), {logits},
                    [logits, labels, probs = std::move(probs), n](Tape& t, const Matrix& g,
                                                                   const Matrix&) {
                        Matrix d = probs;
                        for (std::size_t i = 0; i < labels.size(); ++i) {
                            d(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
                        }
                        t.grad_storage(logits) += d * (g(0, 0) / n);
                    });
}

}  // namespace hatemtl::ad
