#include "vld/tape.hpp"

#include <cmath>
#include <cstddef>

#include "vld/errors.hpp"

namespace vld {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr double kInvSqrt2 = 0.7071067811865476;

double row_max(const float* row, int n) {
    double m = row[0];
    for (int i = 1; i < n; ++i) m = std::max(m, static_cast<double>(row[i]));
    return m;
}

// m x k times k x n, 64-bit accumulation.
void mm(const float* a, const float* b, float* c, int m, int k, int n) {
    std::vector<double> acc(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) acc[static_cast<size_t>(j)] = 0.0;
        const float* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const float* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * brow[j];
        }
        float* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
    }
}

// m x k times (n x k)^T -> m x n
void mm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const float* brow = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * brow[p];
            c[static_cast<size_t>(i) * n + j] = static_cast<float>(acc);
        }
    }
}

// (m x k)^T times m x n -> k x n
void mm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
    std::vector<double> acc(static_cast<size_t>(k) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * k;
        const float* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            double* accrow = acc.data() + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) accrow[j] += av * brow[j];
        }
    }
    for (size_t i = 0; i < acc.size(); ++i) c[i] += static_cast<float>(acc[i]);
}

void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ContractError(std::string(what) + " expects a rank-2 tensor, got " + t.shape_str());
    }
}

} // namespace

Value Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Value v) const {
    check(v);
    return nodes_[static_cast<size_t>(v.id)];
}

void Tape::check(Value v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw ContractError("value handle does not belong to this tape");
    }
}

Value Tape::leaf(Tensor v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.requires_grad = true;
    return push(std::move(n));
}

Value Tape::constant(Tensor v) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(v);
    n.requires_grad = false;
    return push(std::move(n));
}

Value Tape::matmul(Value a, Value b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    require_rank2(A, "matmul");
    require_rank2(B, "matmul");
    if (A.cols() != B.rows()) {
        throw ContractError("matmul dimension mismatch: " + A.shape_str() + " x " + B.shape_str());
    }
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a.id, b.id};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor({A.rows(), B.cols()});
    mm(A.data(), B.data(), n.value.data(), A.rows(), A.cols(), B.cols());
    return push(std::move(n));
}

Value Tape::matmul_nt(Value a, Value b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    require_rank2(A, "matmul_nt");
    require_rank2(B, "matmul_nt");
    if (A.cols() != B.cols()) {
        throw ContractError("matmul_nt dimension mismatch: " + A.shape_str() + " x " +
                            B.shape_str() + "^T");
    }
    Node n;
    n.op = Op::MatMulNT;
    n.inputs = {a.id, b.id};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor({A.rows(), B.rows()});
    mm_nt(A.data(), B.data(), n.value.data(), A.rows(), A.cols(), B.rows());
    return push(std::move(n));
}

Value Tape::add(Value a, Value b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (!A.same_shape(B)) {
        throw ContractError("add shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
    }
    Node n;
    n.op = Op::Add;
    n.inputs = {a.id, b.id};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = A;
    for (int i = 0; i < B.size(); ++i) n.value.at(i) += B.at(i);
    return push(std::move(n));
}

Value Tape::add_bias(Value a, Value bias) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(bias).value;
    require_rank2(A, "add_bias");
    if (B.rank() != 1 || B.dim(0) != A.cols()) {
        throw ContractError("add_bias shape mismatch: " + A.shape_str() + " + " + B.shape_str());
    }
    Node n;
    n.op = Op::AddBias;
    n.inputs = {a.id, bias.id};
    n.requires_grad = node(a).requires_grad || node(bias).requires_grad;
    n.value = A;
    for (int i = 0; i < A.rows(); ++i) {
        for (int j = 0; j < A.cols(); ++j) n.value.at(i, j) += B.at(j);
    }
    return push(std::move(n));
}

Value Tape::scale(Value a, float s) {
    Node n;
    n.op = Op::Scale;
    n.inputs = {a.id};
    n.f0 = s;
    n.requires_grad = node(a).requires_grad;
    n.value = node(a).value;
    for (int i = 0; i < n.value.size(); ++i) n.value.at(i) *= s;
    return push(std::move(n));
}

Value Tape::tanh(Value a) {
    Node n;
    n.op = Op::Tanh;
    n.inputs = {a.id};
    n.requires_grad = node(a).requires_grad;
    n.value = node(a).value;
    for (int i = 0; i < n.value.size(); ++i) n.value.at(i) = std::tanh(n.value.at(i));
    return push(std::move(n));
}

Value Tape::gelu(Value a) {
    Node n;
    n.op = Op::Gelu;
    n.inputs = {a.id};
    n.requires_grad = node(a).requires_grad;
    n.value = node(a).value;
    for (int i = 0; i < n.value.size(); ++i) {
        const double x = n.value.at(i);
        n.value.at(i) = static_cast<float>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
    }
    return push(std::move(n));
}

Value Tape::log(Value a) {
    Node n;
    n.op = Op::Log;
    n.inputs = {a.id};
    n.requires_grad = node(a).requires_grad;
    n.value = node(a).value;
    for (int i = 0; i < n.value.size(); ++i) n.value.at(i) = std::log(n.value.at(i));
    return push(std::move(n));
}

Value Tape::exp(Value a) {
    Node n;
    n.op = Op::Exp;
    n.inputs = {a.id};
    n.requires_grad = node(a).requires_grad;
    n.value = node(a).value;
    for (int i = 0; i < n.value.size(); ++i) n.value.at(i) = std::exp(n.value.at(i));
    return push(std::move(n));
}

Value Tape::hadamard(Value a, Value b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (!A.same_shape(B)) {
        throw ContractError("hadamard shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
    }
    Node n;
    n.op = Op::Hadamard;
    n.inputs = {a.id, b.id};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = A;
    for (int i = 0; i < B.size(); ++i) n.value.at(i) *= B.at(i);
    return push(std::move(n));
}

Value Tape::softmax_rows(Value a) {
    const Tensor& A = node(a).value;
    require_rank2(A, "softmax_rows");
    Node n;
    n.op = Op::SoftmaxRows;
    n.inputs = {a.id};
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor({A.rows(), A.cols()});
    for (int i = 0; i < A.rows(); ++i) {
        const float* in = A.data() + static_cast<size_t>(i) * A.cols();
        float* out = n.value.data() + static_cast<size_t>(i) * A.cols();
        const double m = row_max(in, A.cols());
        double sum = 0.0;
        for (int j = 0; j < A.cols(); ++j) {
            const double e = std::exp(static_cast<double>(in[j]) - m);
            out[j] = static_cast<float>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < A.cols(); ++j) out[j] = static_cast<float>(out[j] * inv);
    }
    return push(std::move(n));
}

Value Tape::log_softmax_rows(Value a) {
    const Tensor& A = node(a).value;
    require_rank2(A, "log_softmax_rows");
    Node n;
    n.op = Op::LogSoftmaxRows;
    n.inputs = {a.id};
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor({A.rows(), A.cols()});
    for (int i = 0; i < A.rows(); ++i) {
        const float* in = A.data() + static_cast<size_t>(i) * A.cols();
        float* out = n.value.data() + static_cast<size_t>(i) * A.cols();
        const double m = row_max(in, A.cols());
        double sum = 0.0;
        for (int j = 0; j < A.cols(); ++j) sum += std::exp(static_cast<double>(in[j]) - m);
        const double lse = m + std::log(sum);
        for (int j = 0; j < A.cols(); ++j) {
            out[j] = static_cast<float>(static_cast<double>(in[j]) - lse);
        }
    }
    return push(std::move(n));
}

Value Tape::layer_norm(Value x, Value gain, Value bias, float eps) {
    const Tensor& X = node(x).value;
    const Tensor& G = node(gain).value;
    const Tensor& B = node(bias).value;
    const int d = X.dim(X.rank() - 1);
    if (G.rank() != 1 || B.rank() != 1 || G.dim(0) != d || B.dim(0) != d) {
        throw ContractError("layer_norm gain/bias must be rank-1 [" + std::to_string(d) +
                            "], got " + G.shape_str() + " and " + B.shape_str());
    }
    Node n;
    n.op = Op::LayerNorm;
    n.inputs = {x.id, gain.id, bias.id};
    n.f0 = eps;
    n.requires_grad =
        node(x).requires_grad || node(gain).requires_grad || node(bias).requires_grad;
    n.value = Tensor(X.shape());
    const int rows = X.size() / d;
    for (int i = 0; i < rows; ++i) {
        const float* in = X.data() + static_cast<size_t>(i) * d;
        float* out = n.value.data() + static_cast<size_t>(i) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += in[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = in[j] - mean;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) {
            const double xh = (in[j] - mean) * inv;
            out[j] = static_cast<float>(xh * G.at(j) + B.at(j));
        }
    }
    return push(std::move(n));
}

Value Tape::embedding(Value table, const std::vector<int>& ids) {
    const Tensor& T = node(table).value;
    require_rank2(T, "embedding");
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < -1 || ids[i] >= T.rows()) {
            throw ContractError("embedding id " + std::to_string(ids[i]) + " at slot " +
                                std::to_string(i) + " out of range for table " + T.shape_str());
        }
    }
    Node n;
    n.op = Op::Embedding;
    n.inputs = {table.id};
    n.ints = ids;
    n.requires_grad = node(table).requires_grad;
    n.value = Tensor({static_cast<int>(ids.size()), T.cols()});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0) continue;
        const float* src = T.data() + static_cast<size_t>(ids[i]) * T.cols();
        float* dst = n.value.data() + i * static_cast<size_t>(T.cols());
        for (int j = 0; j < T.cols(); ++j) dst[j] = src[j];
    }
    return push(std::move(n));
}

Value Tape::concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw ContractError("concat_rows needs at least one part");
    int rows = 0;
    const int cols = node(parts[0]).value.cols();
    bool rg = false;
    for (Value p : parts) {
        const Tensor& t = node(p).value;
        require_rank2(t, "concat_rows");
        if (t.cols() != cols) {
            throw ContractError("concat_rows column mismatch: " + t.shape_str() + " vs [" +
                                std::to_string(cols) + "]");
        }
        rows += t.rows();
        rg = rg || node(p).requires_grad;
    }
    Node n;
    n.op = Op::ConcatRows;
    for (Value p : parts) n.inputs.push_back(p.id);
    n.requires_grad = rg;
    n.value = Tensor({rows, cols});
    int r = 0;
    for (Value p : parts) {
        const Tensor& t = node(p).value;
        for (int i = 0; i < t.rows(); ++i, ++r) {
            for (int j = 0; j < cols; ++j) n.value.at(r, j) = t.at(i, j);
        }
    }
    return push(std::move(n));
}

Value Tape::concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw ContractError("concat_cols needs at least one part");
    const int rows = node(parts[0]).value.rows();
    int cols = 0;
    bool rg = false;
    for (Value p : parts) {
        const Tensor& t = node(p).value;
        require_rank2(t, "concat_cols");
        if (t.rows() != rows) {
            throw ContractError("concat_cols row mismatch: " + t.shape_str() + " vs [" +
                                std::to_string(rows) + " rows]");
        }
        cols += t.cols();
        rg = rg || node(p).requires_grad;
    }
    Node n;
    n.op = Op::ConcatCols;
    for (Value p : parts) n.inputs.push_back(p.id);
    n.requires_grad = rg;
    n.value = Tensor({rows, cols});
    int c0 = 0;
    for (Value p : parts) {
        const Tensor& t = node(p).value;
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < t.cols(); ++j) n.value.at(i, c0 + j) = t.at(i, j);
        }
        c0 += t.cols();
    }
    return push(std::move(n));
}

Value Tape::slice_cols(Value a, int start, int width) {
    const Tensor& A = node(a).value;
    require_rank2(A, "slice_cols");
    if (start < 0 || width <= 0 || start + width > A.cols()) {
        throw ContractError("slice_cols [" + std::to_string(start) + "," +
                            std::to_string(start + width) + ") out of range for " + A.shape_str());
    }
    Node n;
    n.op = Op::SliceCols;
    n.inputs = {a.id};
    n.ints = {start, width};
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor({A.rows(), width});
    for (int i = 0; i < A.rows(); ++i) {
        for (int j = 0; j < width; ++j) n.value.at(i, j) = A.at(i, start + j);
    }
    return push(std::move(n));
}

Value Tape::pick_row(Value a, int row) {
    const Tensor& A = node(a).value;
    require_rank2(A, "pick_row");
    if (row < 0 || row >= A.rows()) {
        throw ContractError("pick_row " + std::to_string(row) + " out of range for " +
                            A.shape_str());
    }
    Node n;
    n.op = Op::PickRow;
    n.inputs = {a.id};
    n.ints = {row};
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor({1, A.cols()});
    for (int j = 0; j < A.cols(); ++j) n.value.at(0, j) = A.at(row, j);
    return push(std::move(n));
}

Value Tape::masked_mean_rows(Value a, const std::vector<bool>& keep) {
    const Tensor& A = node(a).value;
    require_rank2(A, "masked_mean_rows");
    if (static_cast<int>(keep.size()) != A.rows()) {
        throw ContractError("masked_mean_rows mask length " + std::to_string(keep.size()) +
                            " vs " + A.shape_str());
    }
    int cnt = 0;
    for (bool k : keep) cnt += k ? 1 : 0;
    if (cnt == 0) throw ContractError("masked_mean_rows: empty mask");
    Node n;
    n.op = Op::MaskedMeanRows;
    n.inputs = {a.id};
    n.mask.assign(keep.size(), 0);
    for (size_t i = 0; i < keep.size(); ++i) n.mask[i] = keep[i] ? 1 : 0;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor({1, A.cols()});
    std::vector<double> acc(static_cast<size_t>(A.cols()), 0.0);
    for (int i = 0; i < A.rows(); ++i) {
        if (!keep[static_cast<size_t>(i)]) continue;
        for (int j = 0; j < A.cols(); ++j) acc[static_cast<size_t>(j)] += A.at(i, j);
    }
    for (int j = 0; j < A.cols(); ++j) {
        n.value.at(0, j) = static_cast<float>(acc[static_cast<size_t>(j)] / cnt);
    }
    return push(std::move(n));
}

Value Tape::cosine_matrix(Value a, Value b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    require_rank2(A, "cosine_matrix");
    require_rank2(B, "cosine_matrix");
    if (A.cols() != B.cols()) {
        throw ContractError("cosine_matrix dimension mismatch: " + A.shape_str() + " vs " +
                            B.shape_str());
    }
    auto norms = [](const Tensor& t, const char* side) {
        std::vector<double> out(static_cast<size_t>(t.rows()));
        for (int i = 0; i < t.rows(); ++i) {
            double s = 0.0;
            for (int j = 0; j < t.cols(); ++j) {
                const double v = t.at(i, j);
                s += v * v;
            }
            if (s < 1e-24) {
                throw ContractError(std::string("cosine_matrix: zero-norm row ") +
                                    std::to_string(i) + " on " + side + " side");
            }
            out[static_cast<size_t>(i)] = std::sqrt(s);
        }
        return out;
    };
    const std::vector<double> na = norms(A, "left");
    const std::vector<double> nb = norms(B, "right");
    Node n;
    n.op = Op::CosineMatrix;
    n.inputs = {a.id, b.id};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor({A.rows(), B.rows()});
    for (int i = 0; i < A.rows(); ++i) {
        for (int j = 0; j < B.rows(); ++j) {
            double dot = 0.0;
            for (int p = 0; p < A.cols(); ++p) {
                dot += static_cast<double>(A.at(i, p)) * B.at(j, p);
            }
            n.value.at(i, j) =
                static_cast<float>(dot / (na[static_cast<size_t>(i)] * nb[static_cast<size_t>(j)]));
        }
    }
    return push(std::move(n));
}

Value Tape::sum_all(Value a) {
    Node n;
    n.op = Op::SumAll;
    n.inputs = {a.id};
    n.requires_grad = node(a).requires_grad;
    double s = 0.0;
    const Tensor& A = node(a).value;
    for (int i = 0; i < A.size(); ++i) s += A.at(i);
    n.value = Tensor::scalar(static_cast<float>(s));
    return push(std::move(n));
}

Value Tape::mean_all(Value a) {
    Node n;
    n.op = Op::MeanAll;
    n.inputs = {a.id};
    n.requires_grad = node(a).requires_grad;
    double s = 0.0;
    const Tensor& A = node(a).value;
    for (int i = 0; i < A.size(); ++i) s += A.at(i);
    n.value = Tensor::scalar(static_cast<float>(s / A.size()));
    return push(std::move(n));
}

Value Tape::sigmoid_bce_mean(Value logits, Tensor labels) {
    const Tensor& Z = node(logits).value;
    if (!Z.same_shape(labels)) {
        throw ContractError("sigmoid_bce_mean shape mismatch: " + Z.shape_str() + " vs " +
                            labels.shape_str());
    }
    Node n;
    n.op = Op::SigmoidBceMean;
    n.inputs = {logits.id};
    n.requires_grad = node(logits).requires_grad;
    n.aux = std::move(labels);
    double s = 0.0;
    for (int i = 0; i < Z.size(); ++i) {
        const double z = Z.at(i);
        const double y = n.aux.at(i);
        // max(z,0) - z*y + log(1 + exp(-|z|))
        s += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    n.value = Tensor::scalar(static_cast<float>(s / Z.size()));
    return push(std::move(n));
}

Value Tape::triplet_hardest_mean(Value cosmat, float margin) {
    const Tensor& C = node(cosmat).value;
    require_rank2(C, "triplet_hardest_mean");
    if (C.rows() != C.cols()) {
        throw ContractError("triplet_hardest_mean expects a square matrix, got " + C.shape_str());
    }
    const int N = C.rows();
    if (N < 2) throw ContractError("triplet_hardest_mean needs at least 2 pairs");
    Node n;
    n.op = Op::TripletHardestMean;
    n.inputs = {cosmat.id};
    n.f0 = margin;
    n.requires_grad = node(cosmat).requires_grad;
    // ints: per-row hardest j, then per-column hardest i (used by backward)
    n.ints.assign(static_cast<size_t>(2 * N), -1);
    double total = 0.0;
    for (int i = 0; i < N; ++i) {
        int jstar = -1;
        double best = 0.0;
        for (int j = 0; j < N; ++j) {
            if (j == i) continue;
            if (jstar < 0 || C.at(i, j) > best) {
                best = C.at(i, j);
                jstar = j;
            }
        }
        n.ints[static_cast<size_t>(i)] = jstar;
        total += std::max(0.0, static_cast<double>(margin) - C.at(i, i) + C.at(i, jstar));
    }
    for (int j = 0; j < N; ++j) {
        int istar = -1;
        double best = 0.0;
        for (int i = 0; i < N; ++i) {
            if (i == j) continue;
            if (istar < 0 || C.at(i, j) > best) {
                best = C.at(i, j);
                istar = i;
            }
        }
        n.ints[static_cast<size_t>(N + j)] = istar;
        total += std::max(0.0, static_cast<double>(margin) - C.at(j, j) + C.at(istar, j));
    }
    n.value = Tensor::scalar(static_cast<float>(total / (2 * N)));
    return push(std::move(n));
}

const Tensor& Tape::value(Value v) const { return node(v).value; }

bool Tape::has_grad(Value v) const { return !node(v).grad.empty(); }

const Tensor& Tape::grad(Value v) const {
    const Node& n = node(v);
    if (n.grad.empty()) throw ContractError("no gradient recorded for this value");
    return n.grad;
}

Tensor& Tape::grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
    Tensor& dst = grad_buffer(id);
    for (int i = 0; i < g.size(); ++i) dst.at(i) += g.at(i);
}

void Tape::backward(Value root) {
    if (node(root).value.size() != 1) {
        throw ContractError("backward root must be scalar, got " + node(root).value.shape_str());
    }
    backward(root, Tensor::scalar(1.0f));
}

void Tape::backward(Value root, const Tensor& seed) {
    check(root);
    if (backward_done_) throw ContractError("backward may run once per tape");
    backward_done_ = true;
    Node& r = nodes_[static_cast<size_t>(root.id)];
    if (!seed.same_shape(r.value)) {
        throw ContractError("backward seed shape " + seed.shape_str() + " does not match root " +
                            r.value.shape_str());
    }
    if (!r.requires_grad) return;
    accumulate(root.id, seed);
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || n.grad.empty()) continue;
        backward_node(id);
    }
}

void Tape::backward_node(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor& g = n.grad;
    auto in = [&](int k) -> Node& { return nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(k)])]; };
    auto wants = [&](int k) { return in(k).requires_grad; };
    auto gbuf = [&](int k) -> Tensor& { return grad_buffer(n.inputs[static_cast<size_t>(k)]); };

    switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
        break;
    case Op::MatMul: {
        const Tensor& A = in(0).value;
        const Tensor& B = in(1).value;
        if (wants(0)) {
            // dA += dC * B^T
            Tensor da({A.rows(), A.cols()});
            mm_nt(g.data(), B.data(), da.data(), g.rows(), g.cols(), B.rows());
            accumulate(n.inputs[0], da);
        }
        if (wants(1)) {
            // dB += A^T * dC
            mm_tn(A.data(), g.data(), gbuf(1).data(), A.rows(), A.cols(), g.cols());
        }
        break;
    }
    case Op::MatMulNT: {
        const Tensor& A = in(0).value;
        const Tensor& B = in(1).value;
        if (wants(0)) {
            // dA += dC * B
            Tensor da({A.rows(), A.cols()});
            mm(g.data(), B.data(), da.data(), g.rows(), g.cols(), B.cols());
            accumulate(n.inputs[0], da);
        }
        if (wants(1)) {
            // dB += dC^T * A
            mm_tn(g.data(), A.data(), gbuf(1).data(), g.rows(), g.cols(), A.cols());
        }
        break;
    }
    case Op::Add:
        if (wants(0)) accumulate(n.inputs[0], g);
        if (wants(1)) accumulate(n.inputs[1], g);
        break;
    case Op::AddBias: {
        if (wants(0)) accumulate(n.inputs[0], g);
        if (wants(1)) {
            Tensor& db = gbuf(1);
            for (int j = 0; j < g.cols(); ++j) {
                double s = 0.0;
                for (int i = 0; i < g.rows(); ++i) s += g.at(i, j);
                db.at(j) += static_cast<float>(s);
            }
        }
        break;
    }
    case Op::Scale: {
        if (wants(0)) {
            Tensor da = g;
            for (int i = 0; i < da.size(); ++i) da.at(i) *= n.f0;
            accumulate(n.inputs[0], da);
        }
        break;
    }
    case Op::Tanh: {
        if (wants(0)) {
            Tensor da = g;
            for (int i = 0; i < da.size(); ++i) {
                const float y = n.value.at(i);
                da.at(i) *= 1.0f - y * y;
            }
            accumulate(n.inputs[0], da);
        }
        break;
    }
    case Op::Gelu: {
        if (wants(0)) {
            const Tensor& X = in(0).value;
            Tensor da = g;
            for (int i = 0; i < da.size(); ++i) {
                const double x = X.at(i);
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                da.at(i) *= static_cast<float>(cdf + x * pdf);
            }
            accumulate(n.inputs[0], da);
        }
        break;
    }
    case Op::Log: {
        if (wants(0)) {
            const Tensor& X = in(0).value;
            Tensor da = g;
            for (int i = 0; i < da.size(); ++i) da.at(i) /= X.at(i);
            accumulate(n.inputs[0], da);
        }
        break;
    }
    case Op::Exp: {
        if (wants(0)) {
            Tensor da = g;
            for (int i = 0; i < da.size(); ++i) da.at(i) *= n.value.at(i);
            accumulate(n.inputs[0], da);
        }
        break;
    }
    case Op::Hadamard: {
        if (wants(0)) {
            Tensor da = g;
            const Tensor& B = in(1).value;
            for (int i = 0; i < da.size(); ++i) da.at(i) *= B.at(i);
            accumulate(n.inputs[0], da);
        }
        if (wants(1)) {
            Tensor db = g;
            const Tensor& A = in(0).value;
            for (int i = 0; i < db.size(); ++i) db.at(i) *= A.at(i);
            accumulate(n.inputs[1], db);
        }
        break;
    }
    case Op::SoftmaxRows: {
        if (wants(0)) {
            Tensor da({g.rows(), g.cols()});
            for (int i = 0; i < g.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < g.cols(); ++j) {
                    dot += static_cast<double>(g.at(i, j)) * n.value.at(i, j);
                }
                for (int j = 0; j < g.cols(); ++j) {
                    da.at(i, j) = static_cast<float>(
                        n.value.at(i, j) * (static_cast<double>(g.at(i, j)) - dot));
                }
            }
            accumulate(n.inputs[0], da);
        }
        break;
    }
    case Op::LogSoftmaxRows: {
        if (wants(0)) {
            Tensor da({g.rows(), g.cols()});
            for (int i = 0; i < g.rows(); ++i) {
                double gsum = 0.0;
                for (int j = 0; j < g.cols(); ++j) gsum += g.at(i, j);
                for (int j = 0; j < g.cols(); ++j) {
                    const double p = std::exp(static_cast<double>(n.value.at(i, j)));
                    da.at(i, j) = static_cast<float>(g.at(i, j) - p * gsum);
                }
            }
            accumulate(n.inputs[0], da);
        }
        break;
    }
    case Op::LayerNorm: {
        const Tensor& X = in(0).value;
        const Tensor& G = in(1).value;
        const int d = X.dim(X.rank() - 1);
        const int rows = X.size() / d;
        const double eps = n.f0;
        Tensor dx(X.shape());
        Tensor dgain({d});
        Tensor dbias({d});
        for (int i = 0; i < rows; ++i) {
            const float* xr = X.data() + static_cast<size_t>(i) * d;
            const float* gr = g.data() + static_cast<size_t>(i) * d;
            double mean = 0.0;
            for (int j = 0; j < d; ++j) mean += xr[j];
            mean /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                const double c = xr[j] - mean;
                var += c * c;
            }
            var /= d;
            const double inv = 1.0 / std::sqrt(var + eps);
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            std::vector<double> xh(static_cast<size_t>(d)), dxh(static_cast<size_t>(d));
            for (int j = 0; j < d; ++j) {
                xh[static_cast<size_t>(j)] = (xr[j] - mean) * inv;
                dxh[static_cast<size_t>(j)] = static_cast<double>(gr[j]) * G.at(j);
                mean_dxh += dxh[static_cast<size_t>(j)];
                mean_dxh_xh += dxh[static_cast<size_t>(j)] * xh[static_cast<size_t>(j)];
            }
            mean_dxh /= d;
            mean_dxh_xh /= d;
            float* dxr = dx.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                dxr[j] = static_cast<float>(
                    inv * (dxh[static_cast<size_t>(j)] - mean_dxh -
                           xh[static_cast<size_t>(j)] * mean_dxh_xh));
                dgain.at(j) += static_cast<float>(gr[j] * xh[static_cast<size_t>(j)]);
                dbias.at(j) += gr[j];
            }
        }
        if (wants(0)) accumulate(n.inputs[0], dx);
        if (wants(1)) accumulate(n.inputs[1], dgain);
        if (wants(2)) accumulate(n.inputs[2], dbias);
        break;
    }
    case Op::Embedding: {
        if (wants(0)) {
            Tensor& dt = gbuf(0);
            const int cols = dt.cols();
            for (size_t i = 0; i < n.ints.size(); ++i) {
                const int id_ = n.ints[i];
                if (id_ < 0) continue;
                for (int j = 0; j < cols; ++j) {
                    dt.at(id_, j) += g.at(static_cast<int>(i), j);
                }
            }
        }
        break;
    }
    case Op::ConcatRows: {
        int r = 0;
        for (size_t k = 0; k < n.inputs.size(); ++k) {
            const Tensor& part = nodes_[static_cast<size_t>(n.inputs[k])].value;
            if (nodes_[static_cast<size_t>(n.inputs[k])].requires_grad) {
                Tensor dp({part.rows(), part.cols()});
                for (int i = 0; i < part.rows(); ++i) {
                    for (int j = 0; j < part.cols(); ++j) dp.at(i, j) = g.at(r + i, j);
                }
                accumulate(n.inputs[k], dp);
            }
            r += part.rows();
        }
        break;
    }
    case Op::ConcatCols: {
        int c0 = 0;
        for (size_t k = 0; k < n.inputs.size(); ++k) {
            const Tensor& part = nodes_[static_cast<size_t>(n.inputs[k])].value;
            if (nodes_[static_cast<size_t>(n.inputs[k])].requires_grad) {
                Tensor dp({part.rows(), part.cols()});
                for (int i = 0; i < part.rows(); ++i) {
                    for (int j = 0; j < part.cols(); ++j) dp.at(i, j) = g.at(i, c0 + j);
                }
                accumulate(n.inputs[k], dp);
            }
            c0 += part.cols();
        }
        break;
    }
    case Op::SliceCols: {
        if (wants(0)) {
            Tensor& da = gbuf(0);
            const int start = n.ints[0];
            const int width = n.ints[1];
            for (int i = 0; i < g.rows(); ++i) {
                for (int j = 0; j < width; ++j) da.at(i, start + j) += g.at(i, j);
            }
        }
        break;
    }
    case Op::PickRow: {
        if (wants(0)) {
            Tensor& da = gbuf(0);
            const int r = n.ints[0];
            for (int j = 0; j < g.cols(); ++j) da.at(r, j) += g.at(0, j);
        }
        break;
    }
    case Op::MaskedMeanRows: {
        if (wants(0)) {
            Tensor& da = gbuf(0);
            int cnt = 0;
            for (uint8_t m : n.mask) cnt += m;
            const float inv = 1.0f / static_cast<float>(cnt);
            for (int i = 0; i < da.rows(); ++i) {
                if (!n.mask[static_cast<size_t>(i)]) continue;
                for (int j = 0; j < da.cols(); ++j) da.at(i, j) += g.at(0, j) * inv;
            }
        }
        break;
    }
    case Op::CosineMatrix: {
        const Tensor& A = in(0).value;
        const Tensor& B = in(1).value;
        const int d = A.cols();
        std::vector<double> na(static_cast<size_t>(A.rows())), nb(static_cast<size_t>(B.rows()));
        for (int i = 0; i < A.rows(); ++i) {
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += static_cast<double>(A.at(i, j)) * A.at(i, j);
            na[static_cast<size_t>(i)] = std::sqrt(s);
        }
        for (int i = 0; i < B.rows(); ++i) {
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += static_cast<double>(B.at(i, j)) * B.at(i, j);
            nb[static_cast<size_t>(i)] = std::sqrt(s);
        }
        Tensor da({A.rows(), d});
        Tensor db({B.rows(), d});
        for (int i = 0; i < A.rows(); ++i) {
            for (int j = 0; j < B.rows(); ++j) {
                const double gij = g.at(i, j);
                if (gij == 0.0) continue;
                const double c = n.value.at(i, j);
                const double inv_ab = 1.0 / (na[static_cast<size_t>(i)] * nb[static_cast<size_t>(j)]);
                const double inv_aa = 1.0 / (na[static_cast<size_t>(i)] * na[static_cast<size_t>(i)]);
                const double inv_bb = 1.0 / (nb[static_cast<size_t>(j)] * nb[static_cast<size_t>(j)]);
                for (int p = 0; p < d; ++p) {
                    da.at(i, p) += static_cast<float>(gij * (B.at(j, p) * inv_ab - c * A.at(i, p) * inv_aa));
                    db.at(j, p) += static_cast<float>(gij * (A.at(i, p) * inv_ab - c * B.at(j, p) * inv_bb));
                }
            }
        }
        if (wants(0)) accumulate(n.inputs[0], da);
        if (wants(1)) accumulate(n.inputs[1], db);
        break;
    }
    case Op::SumAll: {
        if (wants(0)) {
            const float gs = g.at(0);
            Tensor& da = gbuf(0);
            for (int i = 0; i < da.size(); ++i) da.at(i) += gs;
        }
        break;
    }
    case Op::MeanAll: {
        if (wants(0)) {
            Tensor& da = gbuf(0);
            const float gs = g.at(0) / static_cast<float>(da.size());
            for (int i = 0; i < da.size(); ++i) da.at(i) += gs;
        }
        break;
    }
    case Op::SigmoidBceMean: {
        if (wants(0)) {
            const Tensor& Z = in(0).value;
            Tensor dz(Z.shape());
            const double gs = g.at(0) / Z.size();
            for (int i = 0; i < Z.size(); ++i) {
                const double z = Z.at(i);
                const double sig = 1.0 / (1.0 + std::exp(-z));
                dz.at(i) = static_cast<float>(gs * (sig - n.aux.at(i)));
            }
            accumulate(n.inputs[0], dz);
        }
        break;
    }
    case Op::TripletHardestMean: {
        if (wants(0)) {
            const Tensor& C = in(0).value;
            const int N = C.rows();
            Tensor dc({N, N});
            const float gs = g.at(0) / static_cast<float>(2 * N);
            for (int i = 0; i < N; ++i) {
                const int jstar = n.ints[static_cast<size_t>(i)];
                if (n.f0 - C.at(i, i) + C.at(i, jstar) > 0.0f) {
                    dc.at(i, i) -= gs;
                    dc.at(i, jstar) += gs;
                }
            }
            for (int j = 0; j < N; ++j) {
                const int istar = n.ints[static_cast<size_t>(N + j)];
                if (n.f0 - C.at(j, j) + C.at(istar, j) > 0.0f) {
                    dc.at(j, j) -= gs;
                    dc.at(istar, j) += gs;
                }
            }
            accumulate(n.inputs[0], dc);
        }
        break;
    }
    }
}

} // namespace vld
