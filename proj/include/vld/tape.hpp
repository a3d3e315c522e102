#pragma once

#include <vector>

#include "vld/tensor.hpp"

namespace vld {

// Handle to a node on a Tape.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over a fixed primitive set. Nodes are recorded in
// topological order (inputs always precede their consumers). Reductions
// (dot products, softmax sums, norms, means) accumulate in 64-bit.
//
// A Tape is built and differentiated single-threaded; distinct tapes are
// independent and may run in parallel.
class Tape {
public:
    Value leaf(Tensor v);       // differentiable input (parameter)
    Value constant(Tensor v);   // non-differentiable input

    // C[m x n] = A[m x k] * B[k x n]
    Value matmul(Value a, Value b);
    // C[m x n] = A[m x k] * B[n x k]^T
    Value matmul_nt(Value a, Value b);
    Value add(Value a, Value b);            // same shape
    Value add_bias(Value a, Value bias);    // [m x n] + [n], row broadcast
    Value scale(Value a, float s);
    Value tanh(Value a);
    Value gelu(Value a);                    // exact erf form
    Value log(Value a);
    Value exp(Value a);
    Value hadamard(Value a, Value b);

    Value softmax_rows(Value a);            // max-subtracted, row sums = 1
    Value log_softmax_rows(Value a);        // stable for logits of any scale
    // Normalizes over the last dimension; gain/bias are rank-1 [last_dim].
    Value layer_norm(Value x, Value gain, Value bias, float eps = 1e-5f);

    // Row lookup into a [rows x d] table; id -1 yields a zero row.
    Value embedding(Value table, const std::vector<int>& ids);

    Value concat_rows(const std::vector<Value>& parts);
    Value concat_cols(const std::vector<Value>& parts);
    Value slice_cols(Value a, int start, int width);
    Value pick_row(Value a, int row);       // -> [1 x d]
    // Mean over rows with keep[i] == true -> [1 x d].
    Value masked_mean_rows(Value a, const std::vector<bool>& keep);

    // C[i][j] = cos(a_i, b_j); throws on a zero-norm row.
    Value cosine_matrix(Value a, Value b);

    Value sum_all(Value a);                 // -> [1]
    Value mean_all(Value a);                // -> [1]

    // Mean binary cross-entropy of sigmoid(logits) against constant labels,
    // computed in the numerically stable logits form.
    Value sigmoid_bce_mean(Value logits, Tensor labels);
    // Bidirectional hardest-negative hinge over a cosine matrix; row i and
    // column j anchors, ties broken toward the lowest index.
    Value triplet_hardest_mean(Value cosmat, float margin);

    const Tensor& value(Value v) const;
    const Tensor& grad(Value v) const;      // valid after backward
    bool has_grad(Value v) const;

    // Root must be scalar (size 1); seeds with 1. Throws ContractError on a
    // non-scalar root.
    void backward(Value root);
    // Seeded variant used to stitch per-item tapes to a shared loss tape.
    void backward(Value root, const Tensor& seed);

    int node_count() const { return static_cast<int>(nodes_.size()); }

private:
    enum class Op {
        Leaf, Constant, MatMul, MatMulNT, Add, AddBias, Scale, Tanh, Gelu,
        Log, Exp, Hadamard, SoftmaxRows, LogSoftmaxRows, LayerNorm, Embedding,
        ConcatRows, ConcatCols, SliceCols, PickRow, MaskedMeanRows,
        CosineMatrix, SumAll, MeanAll, SigmoidBceMean, TripletHardestMean,
    };

    struct Node {
        Op op;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;            // allocated on demand during backward
        bool requires_grad = false;
        float f0 = 0.0f;        // scale factor / eps / margin
        std::vector<int> ints;  // embedding ids, slice offsets, picked row
        std::vector<uint8_t> mask;
        Tensor aux;             // bce labels
    };

    Value push(Node n);
    const Node& node(Value v) const;
    Tensor& grad_buffer(int id);
    void accumulate(int id, const Tensor& g);
    void backward_node(int id);
    void check(Value v) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

} // namespace vld
