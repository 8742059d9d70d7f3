#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace fsban {

using Shape = std::vector<std::size_t>;
using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

// Dense row-major tensor of 64-bit floats with value semantics. A tensor may
// additionally carry a handle onto the active Tape, in which case operations
// consuming it are recorded for reverse-mode differentiation. Tensors without
// a handle are plain immutable values.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);                       // shape {n}
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  // Matrix accessors; valid for rank-2 tensors (rank-1 counts as one row).
  std::size_t rows() const;
  std::size_t cols() const;

  double value() const;  // scalar extraction; throws unless size() == 1
  double at(std::size_t i) const { return data_[i]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  NodeId node() const { return node_; }
  bool on_tape() const { return node_ != kNoNode; }
  Tensor detached() const;

 private:
  friend class Tape;
  friend class Gradients;

  Shape shape_;
  std::vector<double> data_;
  NodeId node_ = kNoNode;
  std::uint64_t tape_serial_ = 0;
};

class Gradients;

// Reverse-mode tape. Nodes are appended in topological order as operations
// execute; backward() visits each node exactly once in reverse and is allowed
// once per tape. A tape is meant to live for a single training step.
//
// Activation is scoped and thread-local: constructing a Tape makes it the
// active tape on this thread, destruction restores the previous one.
class Tape {
 public:
  // Accumulates d(loss)/d(input_k) into input_grads[k] given d(loss)/d(output).
  // Entries are null for inputs that are not on the tape.
  using BackwardFn = std::function<void(const Tensor& upstream, std::span<Tensor* const> input_grads)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf and returns a copy of `value` linked to this tape.
  Tensor watch(const Tensor& value);

  // Runs the reverse sweep from a scalar loss recorded on this tape and
  // consumes the tape. Throws if the loss is non-scalar, detached, or the
  // tape was already consumed.
  Gradients backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

  static Tape* active();

  // Records `result` as the output of `op` if a tape is active and at least
  // one input is linked to it; otherwise returns `result` untouched. Validates
  // that the result is finite either way. Op implementations funnel through
  // here so every op output is checked at one boundary.
  static Tensor record_if_active(const char* op, std::initializer_list<const Tensor*> inputs,
                                 Tensor result, BackwardFn fn);

 private:
  struct Node {
    const char* op;
    std::vector<NodeId> inputs;  // kNoNode marks constant (off-tape) operands
    Shape shape;
    BackwardFn backward;         // empty for leaves
  };

  Tensor record(const char* op, std::initializer_list<const Tensor*> inputs, Tensor result,
                BackwardFn fn);

  std::vector<Node> nodes_;
  std::vector<bool> is_leaf_;
  std::uint64_t serial_ = 0;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

// Result of Tape::backward. Gradients are retained for every watched leaf;
// leaves unreachable from the loss get zero gradients.
class Gradients {
 public:
  const Tensor& wrt(const Tensor& watched) const;
  bool contains(const Tensor& watched) const;

 private:
  friend class Tape;
  std::vector<Tensor> by_node_;
  std::vector<bool> is_leaf_;
  std::uint64_t tape_serial_ = 0;
};

// Forward operations. Each checks shape preconditions, records itself on the
// active tape when differentiable inputs are present, and rejects non-finite
// outputs. add/sub/mul_elementwise accept equal shapes or one scalar operand;
// there is no other implicit broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_elementwise(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // requires strictly positive inputs
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor concat(const Tensor& a, const Tensor& b, int axis);  // 0 = rows, 1 = cols

// Row-wise softmax of z / tau, computed with max subtraction. tau must be > 0.
// Rank-1 input is treated as a single row.
Tensor softmax_rows(const Tensor& z, double tau);

// D[i][j] = squared euclidean distance between row i of a and row j of b.
Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b);

// C[i][j] = cosine similarity between row i of a and row j of b. Rows with
// near-zero norm are rejected (cosine undefined).
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// Adds a row vector to every row of a matrix (explicit bias op).
Tensor add_bias(const Tensor& m, const Tensor& bias);

// Mean over consecutive groups of `group` rows; rows() must divide evenly.
Tensor mean_pool_rows(const Tensor& m, std::size_t group);

// Sum over consecutive groups of `group` columns; cols() must divide evenly.
Tensor sum_pool_cols(const Tensor& m, std::size_t group);

// Each row repeated `times` consecutively / whole matrix stacked `times` over.
Tensor repeat_rows(const Tensor& m, std::size_t times);
Tensor tile_rows(const Tensor& m, std::size_t times);

Tensor reshape(const Tensor& x, Shape shape);

}  // namespace fsban
