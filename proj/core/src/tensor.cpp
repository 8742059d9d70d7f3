#include "fsban/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>

namespace fsban {
namespace {

std::size_t shape_product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

void check_finite(std::span<const double> data, const char* where) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(where) + ": non-finite value");
    }
  }
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

std::vector<double> copy_of(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

void accumulate(Tensor* dst, std::span<const double> src) {
  if (!dst) return;
  double* d = dst->data().data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += src[i];
}

void matmul_kernel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

thread_local Tape* t_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_serial{1};

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " does not match " +
                                std::to_string(data_.size()) + " elements");
  }
  check_finite(data_, "Tensor");
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_product(shape);
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_.assign(n, 0.0);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  if (!std::isfinite(value)) throw std::runtime_error("Tensor::full: non-finite value");
  const std::size_t n = shape_product(shape);
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_.assign(n, value);
  return t;
}

Tensor Tensor::scalar(double value) { return full(Shape{}, value); }

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  switch (shape_.size()) {
    case 0: return 1;
    case 1: return 1;
    case 2: return shape_[0];
    default: throw std::invalid_argument("Tensor::rows: rank > 2");
  }
}

std::size_t Tensor::cols() const {
  switch (shape_.size()) {
    case 0: return 1;
    case 1: return shape_[0];
    case 2: return shape_[1];
    default: throw std::invalid_argument("Tensor::cols: rank > 2");
  }
}

double Tensor::value() const {
  if (data_.size() != 1) {
    throw std::invalid_argument("Tensor::value: tensor is not scalar, shape " + shape_str(shape_));
  }
  return data_[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_ = kNoNode;
  t.tape_serial_ = 0;
  return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() : serial_(g_tape_serial.fetch_add(1)), previous_(t_active_tape) {
  t_active_tape = this;
}

Tape::~Tape() { t_active_tape = previous_; }

Tape* Tape::active() { return t_active_tape; }

Tensor Tape::watch(const Tensor& value) {
  Tensor t = value.detached();
  t.node_ = static_cast<NodeId>(nodes_.size());
  t.tape_serial_ = serial_;
  nodes_.push_back(Node{"leaf", {}, t.shape_, nullptr});
  is_leaf_.push_back(true);
  return t;
}

Tensor Tape::record(const char* op, std::initializer_list<const Tensor*> inputs, Tensor result,
                    BackwardFn fn) {
  Node node;
  node.op = op;
  node.shape = result.shape_;
  node.backward = std::move(fn);
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    node.inputs.push_back(in->tape_serial_ == serial_ ? in->node_ : kNoNode);
  }
  result.node_ = static_cast<NodeId>(nodes_.size());
  result.tape_serial_ = serial_;
  nodes_.push_back(std::move(node));
  is_leaf_.push_back(false);
  return result;
}

Tensor Tape::record_if_active(const char* op, std::initializer_list<const Tensor*> inputs,
                              Tensor result, BackwardFn fn) {
  check_finite(result.data(), op);
  Tape* tape = t_active_tape;
  if (tape == nullptr) return result;
  bool any_on_tape = false;
  for (const Tensor* in : inputs) {
    if (in->node_ == kNoNode) continue;
    if (in->tape_serial_ != tape->serial_) {
      throw std::runtime_error(std::string(op) +
                               ": input belongs to a different tape; detach it first");
    }
    any_on_tape = true;
  }
  if (!any_on_tape) return result;
  return tape->record(op, inputs, std::move(result), std::move(fn));
}

Gradients Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::runtime_error("Tape::backward: tape already consumed");
  if (!loss.is_scalar()) throw std::invalid_argument("Tape::backward: loss must be scalar");
  if (loss.node_ == kNoNode || loss.tape_serial_ != serial_) {
    throw std::invalid_argument("Tape::backward: loss is detached from this tape");
  }
  consumed_ = true;

  std::vector<Tensor> adjoint(nodes_.size());
  std::vector<char> seeded(nodes_.size(), 0);
  adjoint[loss.node_] = Tensor::full(nodes_[loss.node_].shape, 1.0);
  seeded[loss.node_] = 1;

  for (NodeId id = loss.node_; id >= 0; --id) {
    if (!seeded[id] || !nodes_[id].backward) continue;
    const Node& node = nodes_[id];
    std::vector<Tensor*> slots(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const NodeId in = node.inputs[k];
      if (in == kNoNode) continue;
      if (!seeded[in]) {
        adjoint[in] = Tensor::zeros(nodes_[in].shape);
        seeded[in] = 1;
      }
      slots[k] = &adjoint[in];
    }
    node.backward(adjoint[id], slots);
  }

  Gradients grads;
  grads.tape_serial_ = serial_;
  grads.is_leaf_ = is_leaf_;
  grads.by_node_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!is_leaf_[i]) continue;
    grads.by_node_[i] = seeded[i] ? std::move(adjoint[i]) : Tensor::zeros(nodes_[i].shape);
  }
  return grads;
}

const Tensor& Gradients::wrt(const Tensor& watched) const {
  if (watched.node() == kNoNode || watched.tape_serial_ != tape_serial_ ||
      static_cast<std::size_t>(watched.node()) >= by_node_.size() || !is_leaf_[watched.node()]) {
    throw std::invalid_argument("Gradients::wrt: tensor is not a watched leaf of this tape");
  }
  return by_node_[watched.node()];
}

bool Gradients::contains(const Tensor& watched) const {
  return watched.node() != kNoNode && watched.tape_serial_ == tape_serial_ &&
         static_cast<std::size_t>(watched.node()) < by_node_.size() && is_leaf_[watched.node()];
}

// ---------------------------------------------------------------------------
// Elementwise binary ops (equal shapes or one scalar operand)
// ---------------------------------------------------------------------------

namespace {

enum class Broadcast { None, ScalarLeft, ScalarRight };

Broadcast binary_mode(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (a.is_scalar()) return Broadcast::ScalarLeft;
  if (b.is_scalar()) return Broadcast::ScalarRight;
  shape_error(op, a, b);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast mode = binary_mode("add", a, b);
  const Tensor& big = (mode == Broadcast::ScalarLeft) ? b : a;
  std::vector<double> out(big.size());
  if (mode == Broadcast::None) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  } else {
    const double s = (mode == Broadcast::ScalarLeft) ? a.value() : b.value();
    const Tensor& t = (mode == Broadcast::ScalarLeft) ? b : a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.at(i) + s;
  }
  return Tape::record_if_active(
      "add", {&a, &b}, Tensor(big.shape(), std::move(out)),
      [mode](const Tensor& g, std::span<Tensor* const> gi) {
        auto side = [&](std::size_t slot, bool scalar) {
          if (!gi[slot]) return;
          if (scalar) {
            double s = 0.0;
            for (double v : g.data()) s += v;
            gi[slot]->data()[0] += s;
          } else {
            accumulate(gi[slot], g.data());
          }
        };
        side(0, mode == Broadcast::ScalarLeft);
        side(1, mode == Broadcast::ScalarRight);
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast mode = binary_mode("sub", a, b);
  const Tensor& big = (mode == Broadcast::ScalarLeft) ? b : a;
  std::vector<double> out(big.size());
  if (mode == Broadcast::None) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  } else if (mode == Broadcast::ScalarLeft) {
    const double s = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s - b.at(i);
  } else {
    const double s = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - s;
  }
  return Tape::record_if_active(
      "sub", {&a, &b}, Tensor(big.shape(), std::move(out)),
      [mode](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) {
          if (mode == Broadcast::ScalarLeft) {
            double s = 0.0;
            for (double v : g.data()) s += v;
            gi[0]->data()[0] += s;
          } else {
            accumulate(gi[0], g.data());
          }
        }
        if (gi[1]) {
          if (mode == Broadcast::ScalarRight) {
            double s = 0.0;
            for (double v : g.data()) s += v;
            gi[1]->data()[0] -= s;
          } else {
            double* d = gi[1]->data().data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g.at(i);
          }
        }
      });
}

Tensor mul_elementwise(const Tensor& a, const Tensor& b) {
  const Broadcast mode = binary_mode("mul_elementwise", a, b);
  const Tensor& big = (mode == Broadcast::ScalarLeft) ? b : a;
  std::vector<double> out(big.size());
  if (mode == Broadcast::None) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  } else {
    const double s = (mode == Broadcast::ScalarLeft) ? a.value() : b.value();
    const Tensor& t = (mode == Broadcast::ScalarLeft) ? b : a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.at(i) * s;
  }
  return Tape::record_if_active(
      "mul_elementwise", {&a, &b}, Tensor(big.shape(), std::move(out)),
      [mode, av = copy_of(a), bv = copy_of(b)](const Tensor& g, std::span<Tensor* const> gi) {
        auto side = [&](std::size_t slot, const std::vector<double>& other, bool scalar,
                        bool other_scalar) {
          if (!gi[slot]) return;
          double* d = gi[slot]->data().data();
          if (scalar) {
            double s = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) s += g.at(i) * other[i];
            d[0] += s;
          } else if (other_scalar) {
            const double o = other[0];
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g.at(i) * o;
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g.at(i) * other[i];
          }
        };
        side(0, bv, mode == Broadcast::ScalarLeft, mode == Broadcast::ScalarRight);
        side(1, av, mode == Broadcast::ScalarRight, mode == Broadcast::ScalarLeft);
      });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() > 2 || b.rank() > 2) throw std::invalid_argument("matmul: rank > 2");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (k != b.rows()) shape_error("matmul", a, b);
  std::vector<double> out(m * n, 0.0);
  matmul_kernel(a.data().data(), b.data().data(), out.data(), m, k, n);
  return Tape::record_if_active(
      "matmul", {&a, &b}, Tensor(Shape{m, n}, std::move(out)),
      [m, k, n, av = copy_of(a), bv = copy_of(b)](const Tensor& g, std::span<Tensor* const> gi) {
        const double* gd = g.data().data();
        if (gi[0]) {
          // dA[i][p] += sum_j g[i][j] * B[p][j]
          double* da = gi[0]->data().data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              const double* grow = gd + i * n;
              const double* brow = bv.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
              da[i * k + p] += s;
            }
          }
        }
        if (gi[1]) {
          // dB[p][j] += sum_i A[i][p] * g[i][j]
          double* db = gi[1]->data().data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = av.data() + i * k;
            const double* grow = gd + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double apv = arow[p];
              double* drow = db + p * n;
              for (std::size_t j = 0; j < n; ++j) drow[j] += apv * grow[j];
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) > 0.0 ? x.at(i) : 0.0;
  return Tape::record_if_active(
      "relu", {&x}, Tensor(x.shape(), std::move(out)),
      [xv = copy_of(x)](const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        double* d = gi[0]->data().data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (xv[i] > 0.0) d[i] += g.at(i);
        }
      });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.at(i));
  Tensor result(x.shape(), std::move(out));
  return Tape::record_if_active(
      "exp", {&x}, result,
      [ov = copy_of(result)](const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        double* d = gi[0]->data().data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g.at(i) * ov[i];
      });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x.at(i) > 0.0)) throw std::invalid_argument("log: input must be strictly positive");
    out[i] = std::log(x.at(i));
  }
  return Tape::record_if_active(
      "log", {&x}, Tensor(x.shape(), std::move(out)),
      [xv = copy_of(x)](const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        double* d = gi[0]->data().data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g.at(i) / xv[i];
      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tape::record_if_active("sum", {&x}, Tensor::scalar(s),
                                [](const Tensor& g, std::span<Tensor* const> gi) {
                                  if (!gi[0]) return;
                                  const double gv = g.value();
                                  for (double& v : gi[0]->data()) v += gv;
                                });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  return Tape::record_if_active("mean", {&x}, Tensor::scalar(s * inv),
                                [inv](const Tensor& g, std::span<Tensor* const> gi) {
                                  if (!gi[0]) return;
                                  const double gv = g.value() * inv;
                                  for (double& v : gi[0]->data()) v += gv;
                                });
}

Tensor scale(const Tensor& x, double factor) {
  if (!std::isfinite(factor)) throw std::runtime_error("scale: non-finite factor");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * factor;
  return Tape::record_if_active("scale", {&x}, Tensor(x.shape(), std::move(out)),
                                [factor](const Tensor& g, std::span<Tensor* const> gi) {
                                  if (!gi[0]) return;
                                  double* d = gi[0]->data().data();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    d[i] += g.at(i) * factor;
                                });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  if (a.rank() > 2 || b.rank() > 2) throw std::invalid_argument("concat: rank > 2");
  const std::size_t ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  Shape out_shape;
  std::vector<double> out;
  if (axis == 0) {
    if (ca != cb) shape_error("concat", a, b);
    out_shape = {ra + rb, ca};
    out.reserve((ra + rb) * ca);
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
  } else {
    if (ra != rb) shape_error("concat", a, b);
    out.resize(ra * (ca + cb));
    for (std::size_t i = 0; i < ra; ++i) {
      for (std::size_t j = 0; j < ca; ++j) out[i * (ca + cb) + j] = a.at(i, j);
      for (std::size_t j = 0; j < cb; ++j) out[i * (ca + cb) + ca + j] = b.at(i, j);
    }
    out_shape = (a.rank() <= 1 && b.rank() <= 1) ? Shape{ca + cb} : Shape{ra, ca + cb};
  }
  return Tape::record_if_active(
      "concat", {&a, &b}, Tensor(std::move(out_shape), std::move(out)),
      [axis, ra, ca, cb](const Tensor& g, std::span<Tensor* const> gi) {
        if (axis == 0) {
          if (gi[0]) {
            double* d = gi[0]->data().data();
            for (std::size_t i = 0; i < ra * ca; ++i) d[i] += g.at(i);
          }
          if (gi[1]) {
            double* d = gi[1]->data().data();
            const std::size_t off = ra * ca;
            for (std::size_t i = 0; i < g.size() - off; ++i) d[i] += g.at(off + i);
          }
        } else {
          const std::size_t cw = ca + cb;
          if (gi[0]) {
            double* d = gi[0]->data().data();
            for (std::size_t i = 0; i < ra; ++i)
              for (std::size_t j = 0; j < ca; ++j) d[i * ca + j] += g.at(i * cw + j);
          }
          if (gi[1]) {
            double* d = gi[1]->data().data();
            for (std::size_t i = 0; i < ra; ++i)
              for (std::size_t j = 0; j < cb; ++j) d[i * cb + j] += g.at(i * cw + ca + j);
          }
        }
      });
}

Tensor softmax_rows(const Tensor& z, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("softmax_rows: tau must be > 0");
  }
  if (z.rank() > 2) throw std::invalid_argument("softmax_rows: rank > 2");
  const std::size_t r = z.rows(), c = z.cols();
  if (c == 0) throw std::invalid_argument("softmax_rows: empty rows");
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* zr = z.data().data() + i * c;
    double zmax = zr[0];
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, zr[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp((zr[j] - zmax) / tau);
      total += out[i * c + j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= inv;
  }
  Tensor result(z.shape(), std::move(out));
  return Tape::record_if_active(
      "softmax_rows", {&z}, result,
      [r, c, tau, pv = copy_of(result)](const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        double* d = gi[0]->data().data();
        for (std::size_t i = 0; i < r; ++i) {
          const double* p = pv.data() + i * c;
          const double* gr = g.data().data() + i * c;
          double gp = 0.0;
          for (std::size_t j = 0; j < c; ++j) gp += gr[j] * p[j];
          for (std::size_t j = 0; j < c; ++j) d[i * c + j] += p[j] * (gr[j] - gp) / tau;
        }
      });
}

Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
  if (a.rank() > 2 || b.rank() > 2) throw std::invalid_argument("pairwise_sq_dist: rank > 2");
  if (a.cols() != b.cols()) shape_error("pairwise_sq_dist", a, b);
  const std::size_t m = a.rows(), n = b.rows(), d = a.cols();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a.data().data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b.data().data() + j * d;
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = ar[t] - br[t];
        s += diff * diff;
      }
      out[i * n + j] = s;
    }
  }
  return Tape::record_if_active(
      "pairwise_sq_dist", {&a, &b}, Tensor(Shape{m, n}, std::move(out)),
      [m, n, d, av = copy_of(a), bv = copy_of(b)](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* ar = av.data() + i * d;
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g.at(i * n + j);
            if (gij == 0.0) continue;
            const double* br = bv.data() + j * d;
            for (std::size_t t = 0; t < d; ++t) {
              const double diff2 = 2.0 * (ar[t] - br[t]) * gij;
              if (gi[0]) gi[0]->data()[i * d + t] += diff2;
              if (gi[1]) gi[1]->data()[j * d + t] -= diff2;
            }
          }
        }
      });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.rank() > 2 || b.rank() > 2) throw std::invalid_argument("cosine_similarity: rank > 2");
  if (a.cols() != b.cols()) shape_error("cosine_similarity", a, b);
  const std::size_t m = a.rows(), n = b.rows(), d = a.cols();
  constexpr double kMinNorm = 1e-12;
  std::vector<double> na(m), nb(n);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += a.at(i, t) * a.at(i, t);
    na[i] = std::sqrt(s);
    if (na[i] < kMinNorm) {
      throw std::runtime_error("cosine_similarity: row with near-zero norm, cosine undefined");
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += b.at(j, t) * b.at(j, t);
    nb[j] = std::sqrt(s);
    if (nb[j] < kMinNorm) {
      throw std::runtime_error("cosine_similarity: row with near-zero norm, cosine undefined");
    }
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += a.at(i, t) * b.at(j, t);
      out[i * n + j] = dot / (na[i] * nb[j]);
    }
  }
  Tensor result(Shape{m, n}, std::move(out));
  return Tape::record_if_active(
      "cosine_similarity", {&a, &b}, result,
      [m, n, d, av = copy_of(a), bv = copy_of(b), na = std::move(na), nb = std::move(nb),
       cv = copy_of(result)](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g.at(i * n + j);
            if (gij == 0.0) continue;
            const double c = cv[i * n + j];
            const double inv = 1.0 / (na[i] * nb[j]);
            for (std::size_t t = 0; t < d; ++t) {
              const double ai = av[i * d + t], bj = bv[j * d + t];
              if (gi[0]) gi[0]->data()[i * d + t] += gij * (bj * inv - c * ai / (na[i] * na[i]));
              if (gi[1]) gi[1]->data()[j * d + t] += gij * (ai * inv - c * bj / (nb[j] * nb[j]));
            }
          }
        }
      });
}

Tensor add_bias(const Tensor& m, const Tensor& bias) {
  if (m.rank() != 2) throw std::invalid_argument("add_bias: matrix required");
  if (bias.rows() != 1 || bias.cols() != m.cols()) shape_error("add_bias", m, bias);
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.at(i, j) + bias.at(j);
  return Tape::record_if_active(
      "add_bias", {&m, &bias}, Tensor(Shape{r, c}, std::move(out)),
      [r, c](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) accumulate(gi[0], g.data());
        if (gi[1]) {
          double* d = gi[1]->data().data();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) d[j] += g.at(i * c + j);
        }
      });
}

Tensor mean_pool_rows(const Tensor& m, std::size_t group) {
  if (m.rank() != 2) throw std::invalid_argument("mean_pool_rows: matrix required");
  if (group == 0 || m.rows() % group != 0) {
    throw std::invalid_argument("mean_pool_rows: group must evenly divide row count");
  }
  const std::size_t r = m.rows(), c = m.cols(), out_rows = r / group;
  const double inv = 1.0 / static_cast<double>(group);
  std::vector<double> out(out_rows * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t o = i / group;
    for (std::size_t j = 0; j < c; ++j) out[o * c + j] += m.at(i, j) * inv;
  }
  return Tape::record_if_active(
      "mean_pool_rows", {&m}, Tensor(Shape{out_rows, c}, std::move(out)),
      [r, c, group, inv](const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        double* d = gi[0]->data().data();
        for (std::size_t i = 0; i < r; ++i) {
          const std::size_t o = i / group;
          for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g.at(o * c + j) * inv;
        }
      });
}

Tensor sum_pool_cols(const Tensor& m, std::size_t group) {
  if (m.rank() != 2) throw std::invalid_argument("sum_pool_cols: matrix required");
  if (group == 0 || m.cols() % group != 0) {
    throw std::invalid_argument("sum_pool_cols: group must evenly divide column count");
  }
  const std::size_t r = m.rows(), c = m.cols(), out_cols = c / group;
  std::vector<double> out(r * out_cols, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * out_cols + j / group] += m.at(i, j);
  return Tape::record_if_active(
      "sum_pool_cols", {&m}, Tensor(Shape{r, out_cols}, std::move(out)),
      [r, c, group, out_cols](const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        double* d = gi[0]->data().data();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g.at(i * out_cols + j / group);
      });
}

Tensor repeat_rows(const Tensor& m, std::size_t times) {
  if (m.rank() != 2) throw std::invalid_argument("repeat_rows: matrix required");
  if (times == 0) throw std::invalid_argument("repeat_rows: times must be > 0");
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * times * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t t = 0; t < times; ++t)
      std::memcpy(out.data() + (i * times + t) * c, m.data().data() + i * c, c * sizeof(double));
  return Tape::record_if_active(
      "repeat_rows", {&m}, Tensor(Shape{r * times, c}, std::move(out)),
      [r, c, times](const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        double* d = gi[0]->data().data();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t t = 0; t < times; ++t)
            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g.at((i * times + t) * c + j);
      });
}

Tensor tile_rows(const Tensor& m, std::size_t times) {
  if (m.rank() != 2) throw std::invalid_argument("tile_rows: matrix required");
  if (times == 0) throw std::invalid_argument("tile_rows: times must be > 0");
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * times * c);
  for (std::size_t t = 0; t < times; ++t)
    std::memcpy(out.data() + t * r * c, m.data().data(), r * c * sizeof(double));
  return Tape::record_if_active(
      "tile_rows", {&m}, Tensor(Shape{r * times, c}, std::move(out)),
      [r, c, times](const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        double* d = gi[0]->data().data();
        for (std::size_t t = 0; t < times; ++t)
          for (std::size_t i = 0; i < r * c; ++i) d[i] += g.at(t * r * c + i);
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_product(shape) != x.size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  return Tape::record_if_active(
      "reshape", {&x}, Tensor(std::move(shape), copy_of(x)),
      [](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) accumulate(gi[0], g.data());
      });
}

}  // namespace fsban
