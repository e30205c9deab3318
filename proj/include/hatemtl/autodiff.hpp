#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace hatemtl::ad {

using Matrix = Eigen::MatrixXd;

/// Handle to a node on a Tape.
struct Var {
    std::size_t id = 0;
};

/// Reverse-mode tape over dense matrices. Nodes are appended in evaluation order and
/// `backward` walks them in reverse. Parameters are bound by pointer: their values
/// are read in place and their gradients accumulate straight into the caller's
/// gradient matrix.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

    Var constant(Matrix value);
    /// `grad` may be null for a frozen parameter. `value` must outlive the tape.
    Var param(const Matrix& value, Matrix* grad);

    /// Appends a computed node. `backward` runs only when some input needs a gradient.
    Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
    Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

    const Matrix& value(Var v) const;
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

    /// Adds `g` into the gradient of `v` (no-op when `v` needs none).
    void accumulate(Var v, const Matrix& g);
    /// Mutable gradient storage for `v`, zero-initialized on first access.
    Matrix& grad_storage(Var v);

    /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and back-propagates.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix own;
        const Matrix* external = nullptr;
        Matrix grad;
        Matrix* sink = nullptr;
        bool needs_grad = false;
        bool has_grad = false;
        Backward backward;
    };

    std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);
/// a * b^T
Var matmul_bt(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var hadamard(Tape& t, Var a, Var b);
/// Adds a 1 x c row vector to every row of a.
Var add_row(Tape& t, Var a, Var row);
Var scale(Tape& t, Var a, double s);
Var relu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var softmax_rows(Tape& t, Var a);
/// Row-wise layer normalization with 1 x c gain and bias.
Var layer_norm(Tape& t, Var a, Var gain, Var bias, double eps = 1e-5);
/// Rows of `table` selected by `ids`.
Var gather_rows(Tape& t, Var table, std::vector<int> ids);
Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
/// Sliding windows: row i of the result is rows i..i+width-1 of `a` laid side by side.
Var unfold_rows(Tape& t, Var a, Eigen::Index width);
Var mean_rows(Tape& t, Var a);
/// Column-wise max over rows (first maximum wins ties).
Var max_rows(Tape& t, Var a);
/// Mean categorical cross-entropy of row-wise softmax(logits) against class labels.
Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels);

/// Numerically stable row-wise softmax.
Matrix softmax(const Matrix& logits);

}  // namespace hatemtl::ad
