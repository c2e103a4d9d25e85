#include "tabbench/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tabbench {

using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMajorMat>;
using MapConstMat = Eigen::Map<const RowMajorMat>;

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

static void check_finite(const std::vector<double>& v, const char* where) {
  for (double x : v) {
    if (!std::isfinite(x)) throw ValueError(std::string(where) + ": non-finite value");
  }
}

static std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(count), fill);
  n->requires_grad = requires_grad;
  if (!std::isfinite(fill)) throw ValueError("Tensor::full: non-finite fill");
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  check_finite(data, "from_data");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar_of(double v, bool requires_grad) {
  return from_data({}, {v}, requires_grad);
}

Tensor Tensor::from_matrix(const Matrix& m, bool requires_grad) {
  return from_data({static_cast<int64_t>(m.rows), static_cast<int64_t>(m.cols)}, m.v,
                   requires_grad);
}

Tensor Tensor::xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng, Shape shape) {
  if (shape.empty()) shape = {fan_in, fan_out};
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  int64_t count = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(count));
  for (auto& x : data) x = rng.uniform(-limit, limit);
  return from_data(std::move(shape), std::move(data), true);
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) throw Error("gradient not populated; run Tape::backward first");
  return node_->grad;
}

double Tensor::scalar() const {
  if (numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Matrix Tensor::to_matrix() const {
  if (rank() != 2) throw ShapeError("to_matrix requires rank 2, got " + shape_str(shape()));
  Matrix m(static_cast<size_t>(dim(0)), static_cast<size_t>(dim(1)));
  m.v = node_->value;
  return m;
}

Tensor Tensor::detached_copy(bool requires_grad) const {
  return from_data(shape(), node_->value, requires_grad);
}

// ---- Tape ----

static thread_local Tape* g_active_tape = nullptr;

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

Tensor make_op_output(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                      const char* name, std::function<void(TensorNode&)> backward) {
  if (shape_numel(shape) != static_cast<int64_t>(value.size()))
    throw ShapeError(std::string(name) + ": internal shape/value mismatch");
  check_finite(value, name);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (const auto& t : inputs) node->requires_grad = node->requires_grad || t.requires_grad();
  Tensor out(node);
  if (node->requires_grad) {
    if (Tape* tape = Tape::active()) {
      Tape::OpRecord rec;
      rec.output = node;
      rec.name = name;
      rec.backward_fn = std::move(backward);
      rec.inputs.reserve(inputs.size());
      for (const auto& t : inputs) rec.inputs.push_back(t.node());
      tape->ops_.push_back(std::move(rec));
    }
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw Error("backward called twice on one tape");
  if (ops_.empty()) throw Error("backward on an empty tape");
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss");
  consumed_ = true;

  // d(loss)/d(x) semantics: grads involved in this tape start from zero.
  bool loss_on_tape = false;
  for (auto& op : ops_) {
    op.output->grad.assign(op.output->value.size(), 0.0);
    if (op.output == loss.node()) loss_on_tape = true;
    for (auto& in : op.inputs) in->grad.assign(in->value.size(), 0.0);
  }
  if (!loss_on_tape) throw Error("loss was not produced through this tape");

  loss.node()->grad[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward_fn(*it->output);
}

// ---- op helpers ----

static void require_same_shape(const Tensor& a, const Tensor& b, const char* name) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node(), bn = b.node();
  return make_op_output(a.shape(), std::move(out), {a, b}, "add", [an, bn](TensorNode& o) {
    for (size_t i = 0; i < o.grad.size(); ++i) {
      an->grad[i] += o.grad[i];
      bn->grad[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node(), bn = b.node();
  return make_op_output(a.shape(), std::move(out), {a, b}, "sub", [an, bn](TensorNode& o) {
    for (size_t i = 0; i < o.grad.size(); ++i) {
      an->grad[i] += o.grad[i];
      bn->grad[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto an = a.node(), bn = b.node();
  return make_op_output(a.shape(), std::move(out), {a, b}, "mul", [an, bn](TensorNode& o) {
    for (size_t i = 0; i < o.grad.size(); ++i) {
      an->grad[i] += o.grad[i] * bn->value[i];
      bn->grad[i] += o.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw ValueError("scale: non-finite factor");
  std::vector<double> out(a.values());
  for (auto& x : out) x *= c;
  auto an = a.node();
  return make_op_output(a.shape(), std::move(out), {a}, "scale", [an, c](TensorNode& o) {
    for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += c * o.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw ValueError("add_scalar: non-finite addend");
  std::vector<double> out(a.values());
  for (auto& x : out) x += c;
  auto an = a.node();
  return make_op_output(a.shape(), std::move(out), {a}, "add_scalar", [an](TensorNode& o) {
    for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (v.rank() != 1 || a.rank() < 1 || a.shape().back() != v.dim(0))
    throw ShapeError("add_rowvec: " + shape_str(a.shape()) + " + " + shape_str(v.shape()));
  size_t k = static_cast<size_t>(v.dim(0));
  std::vector<double> out(a.values());
  const auto& vv = v.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += vv[i % k];
  auto an = a.node(), vn = v.node();
  return make_op_output(a.shape(), std::move(out), {a, v}, "add_rowvec",
                        [an, vn, k](TensorNode& o) {
                          for (size_t i = 0; i < o.grad.size(); ++i) {
                            an->grad[i] += o.grad[i];
                            vn->grad[i % k] += o.grad[i];
                          }
                        });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  {
    MapConstMat A(a.values().data(), m, k), B(b.values().data(), k, n);
    MapMat C(out.data(), m, n);
    C.noalias() = A * B;
  }
  auto an = a.node(), bn = b.node();
  return make_op_output({m, n}, std::move(out), {a, b}, "matmul",
                        [an, bn, m, k, n](TensorNode& o) {
                          MapConstMat G(o.grad.data(), m, n);
                          MapConstMat A(an->value.data(), m, k), B(bn->value.data(), k, n);
                          MapMat dA(an->grad.data(), m, k), dB(bn->grad.data(), k, n);
                          dA.noalias() += G * B.transpose();
                          dB.noalias() += A.transpose() * G;
                        });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(static_cast<size_t>(bs * m * n));
  for (int64_t i = 0; i < bs; ++i) {
    MapConstMat A(a.values().data() + i * m * k, m, k), B(b.values().data() + i * k * n, k, n);
    MapMat C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  auto an = a.node(), bn = b.node();
  return make_op_output({bs, m, n}, std::move(out), {a, b}, "bmm",
                        [an, bn, bs, m, k, n](TensorNode& o) {
                          for (int64_t i = 0; i < bs; ++i) {
                            MapConstMat G(o.grad.data() + i * m * n, m, n);
                            MapConstMat A(an->value.data() + i * m * k, m, k);
                            MapConstMat B(bn->value.data() + i * k * n, k, n);
                            MapMat dA(an->grad.data() + i * m * k, m, k);
                            MapMat dB(bn->grad.data() + i * k * n, k, n);
                            dA.noalias() += G * B.transpose();
                            dB.noalias() += A.transpose() * G;
                          }
                        });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: rank 2 required, got " + shape_str(a.shape()));
  return transpose_last2(a);
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3)
    throw ShapeError("transpose_last2: rank 2 or 3 required, got " + shape_str(a.shape()));
  int64_t bs = a.rank() == 3 ? a.dim(0) : 1;
  int64_t m = a.dim(a.rank() == 3 ? 1 : 0), n = a.dim(a.rank() == 3 ? 2 : 1);
  std::vector<double> out(a.values().size());
  for (int64_t b = 0; b < bs; ++b) {
    const double* src = a.values().data() + b * m * n;
    double* dst = out.data() + b * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  auto an = a.node();
  return make_op_output(std::move(shape), std::move(out), {a}, "transpose_last2",
                        [an, bs, m, n](TensorNode& o) {
                          for (int64_t b = 0; b < bs; ++b) {
                            const double* g = o.grad.data() + b * m * n;
                            double* dst = an->grad.data() + b * m * n;
                            for (int64_t j = 0; j < n; ++j)
                              for (int64_t i = 0; i < m; ++i) dst[i * n + j] += g[j * m + i];
                          }
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto an = a.node();
  return make_op_output(std::move(shape), a.values(), {a}, "reshape", [an](TensorNode& o) {
    for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int64_t>(first.size()))
    throw ShapeError("concat: bad axis");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int64_t>(first.size()))
      throw ShapeError("concat: rank mismatch");
    for (size_t d = 0; d < first.size(); ++d)
      if (static_cast<int64_t>(d) != axis && p.shape()[d] != first[d])
        throw ShapeError("concat: extent mismatch off the concat axis");
    shape[axis] += p.shape()[axis];
  }
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= first[d];
  for (size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<double> out(static_cast<size_t>(shape_numel(shape)));
  int64_t out_block = shape[axis] * inner;
  int64_t woff = 0;
  std::vector<int64_t> blocks;
  for (const auto& p : parts) {
    int64_t block = p.shape()[axis] * inner;
    blocks.push_back(block);
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(p.values().data() + o * block, block, out.data() + o * out_block + woff);
    woff += block;
  }
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op_output(std::move(shape), std::move(out), parts, "concat",
                        [nodes, blocks, outer, out_block](TensorNode& o) {
                          int64_t off = 0;
                          for (size_t p = 0; p < nodes.size(); ++p) {
                            int64_t block = blocks[p];
                            for (int64_t ou = 0; ou < outer; ++ou) {
                              const double* g = o.grad.data() + ou * out_block + off;
                              double* dst = nodes[p]->grad.data() + ou * block;
                              for (int64_t i = 0; i < block; ++i) dst[i] += g[i];
                            }
                            off += block;
                          }
                        });
}

Tensor slice(const Tensor& a, const std::vector<int64_t>& offsets,
             const std::vector<int64_t>& extents) {
  const Shape& s = a.shape();
  if (offsets.size() != s.size() || extents.size() != s.size())
    throw ShapeError("slice: offsets/extents rank mismatch");
  for (size_t d = 0; d < s.size(); ++d) {
    if (offsets[d] < 0 || extents[d] <= 0 || offsets[d] + extents[d] > s[d])
      throw ShapeError("slice: window out of range on axis " + std::to_string(d));
  }
  Shape shape(extents.begin(), extents.end());
  auto in_strides = row_major_strides(s);
  int64_t count = shape_numel(shape);
  std::vector<double> out(static_cast<size_t>(count));
  size_t rank = s.size();
  std::vector<int64_t> idx(rank, 0);
  for (int64_t flat = 0; flat < count; ++flat) {
    int64_t src = 0;
    for (size_t d = 0; d < rank; ++d) src += (offsets[d] + idx[d]) * in_strides[d];
    out[static_cast<size_t>(flat)] = a.values()[static_cast<size_t>(src)];
    for (int64_t d = static_cast<int64_t>(rank) - 1; d >= 0; --d) {
      if (++idx[d] < extents[d]) break;
      idx[d] = 0;
    }
  }
  auto an = a.node();
  return make_op_output(std::move(shape), std::move(out), {a}, "slice",
                        [an, offsets, extents, in_strides, rank](TensorNode& o) {
                          std::vector<int64_t> ix(rank, 0);
                          for (size_t flat = 0; flat < o.grad.size(); ++flat) {
                            int64_t src = 0;
                            for (size_t d = 0; d < rank; ++d)
                              src += (offsets[d] + ix[d]) * in_strides[d];
                            an->grad[static_cast<size_t>(src)] += o.grad[flat];
                            for (int64_t d = static_cast<int64_t>(rank) - 1; d >= 0; --d) {
                              if (++ix[d] < extents[d]) break;
                              ix[d] = 0;
                            }
                          }
                        });
}

Tensor split_heads(const Tensor& a, int64_t heads) {
  if (a.rank() != 3) throw ShapeError("split_heads: rank 3 required");
  int64_t n = a.dim(0), t = a.dim(1), k = a.dim(2);
  if (heads <= 0 || k % heads != 0) throw ShapeError("split_heads: k not divisible by heads");
  int64_t hd = k / heads;
  std::vector<double> out(a.values().size());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t tt = 0; tt < t; ++tt)
        for (int64_t j = 0; j < hd; ++j)
          out[((i * heads + h) * t + tt) * hd + j] = a.values()[(i * t + tt) * k + h * hd + j];
  auto an = a.node();
  return make_op_output({n * heads, t, hd}, std::move(out), {a}, "split_heads",
                        [an, n, t, k, heads, hd](TensorNode& o) {
                          for (int64_t i = 0; i < n; ++i)
                            for (int64_t h = 0; h < heads; ++h)
                              for (int64_t tt = 0; tt < t; ++tt)
                                for (int64_t j = 0; j < hd; ++j)
                                  an->grad[(i * t + tt) * k + h * hd + j] +=
                                      o.grad[((i * heads + h) * t + tt) * hd + j];
                        });
}

Tensor merge_heads(const Tensor& a, int64_t heads) {
  if (a.rank() != 3) throw ShapeError("merge_heads: rank 3 required");
  int64_t nh = a.dim(0), t = a.dim(1), hd = a.dim(2);
  if (heads <= 0 || nh % heads != 0) throw ShapeError("merge_heads: batch not divisible by heads");
  int64_t n = nh / heads, k = heads * hd;
  std::vector<double> out(a.values().size());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t tt = 0; tt < t; ++tt)
        for (int64_t j = 0; j < hd; ++j)
          out[(i * t + tt) * k + h * hd + j] = a.values()[((i * heads + h) * t + tt) * hd + j];
  auto an = a.node();
  return make_op_output({n, t, k}, std::move(out), {a}, "merge_heads",
                        [an, n, t, k, heads, hd](TensorNode& o) {
                          for (int64_t i = 0; i < n; ++i)
                            for (int64_t h = 0; h < heads; ++h)
                              for (int64_t tt = 0; tt < t; ++tt)
                                for (int64_t j = 0; j < hd; ++j)
                                  an->grad[((i * heads + h) * t + tt) * hd + j] +=
                                      o.grad[(i * t + tt) * k + h * hd + j];
                        });
}

// ---- nonlinearities ----

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& x : out) x = x > 0.0 ? x : 0.0;
  auto an = a.node();
  return make_op_output(a.shape(), std::move(out), {a}, "relu", [an](TensorNode& o) {
    for (size_t i = 0; i < o.grad.size(); ++i)
      if (an->value[i] > 0.0) an->grad[i] += o.grad[i];
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& x : out) x = std::exp(x);
  auto an = a.node();
  return make_op_output(a.shape(), std::move(out), {a}, "exp", [an](TensorNode& o) {
    for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * o.value[i];
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& x : out) {
    if (x <= 0.0) throw ValueError("log: non-positive input");
    x = std::log(x);
  }
  auto an = a.node();
  return make_op_output(a.shape(), std::move(out), {a}, "log", [an](TensorNode& o) {
    for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] / an->value[i];
  });
}

Tensor softmax_last(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("softmax_last: rank >= 1 required");
  int64_t k = a.shape().back();
  int64_t groups = a.numel() / k;
  std::vector<double> out(a.values().size());
  for (int64_t g = 0; g < groups; ++g) {
    const double* src = a.values().data() + g * k;
    double* dst = out.data() + g * k;
    double mx = src[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, src[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      dst[j] = std::exp(src[j] - mx);
      sum += dst[j];
    }
    for (int64_t j = 0; j < k; ++j) dst[j] /= sum;
  }
  auto an = a.node();
  return make_op_output(a.shape(), std::move(out), {a}, "softmax_last",
                        [an, groups, k](TensorNode& o) {
                          for (int64_t g = 0; g < groups; ++g) {
                            const double* y = o.value.data() + g * k;
                            const double* gr = o.grad.data() + g * k;
                            double dot = 0.0;
                            for (int64_t j = 0; j < k; ++j) dot += gr[j] * y[j];
                            double* dst = an->grad.data() + g * k;
                            for (int64_t j = 0; j < k; ++j) dst[j] += y[j] * (gr[j] - dot);
                          }
                        });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  if (a.rank() < 1) throw ShapeError("layer_norm: rank >= 1 required");
  int64_t k = a.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != k || bias.rank() != 1 || bias.dim(0) != k)
    throw ShapeError("layer_norm: gain/bias must have shape (" + std::to_string(k) + ")");
  int64_t groups = a.numel() / k;
  std::vector<double> out(a.values().size());
  std::vector<double> xhat(a.values().size());
  std::vector<double> rstd(static_cast<size_t>(groups));
  for (int64_t g = 0; g < groups; ++g) {
    const double* src = a.values().data() + g * k;
    double mu = 0.0;
    for (int64_t j = 0; j < k; ++j) mu += src[j];
    mu /= static_cast<double>(k);
    double var = 0.0;
    for (int64_t j = 0; j < k; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(k);
    double r = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<size_t>(g)] = r;
    for (int64_t j = 0; j < k; ++j) {
      double xh = (src[j] - mu) * r;
      xhat[g * k + j] = xh;
      out[g * k + j] = xh * gain.values()[static_cast<size_t>(j)] +
                       bias.values()[static_cast<size_t>(j)];
    }
  }
  auto an = a.node(), gn = gain.node(), bn = bias.node();
  return make_op_output(
      a.shape(), std::move(out), {a, gain, bias}, "layer_norm",
      [an, gn, bn, groups, k, xhat = std::move(xhat), rstd = std::move(rstd)](TensorNode& o) {
        for (int64_t g = 0; g < groups; ++g) {
          const double* gr = o.grad.data() + g * k;
          const double* xh = xhat.data() + g * k;
          double r = rstd[static_cast<size_t>(g)];
          double mean_gh = 0.0, mean_ghx = 0.0;
          for (int64_t j = 0; j < k; ++j) {
            double gh = gr[j] * gn->value[static_cast<size_t>(j)];
            mean_gh += gh;
            mean_ghx += gh * xh[j];
            gn->grad[static_cast<size_t>(j)] += gr[j] * xh[j];
            bn->grad[static_cast<size_t>(j)] += gr[j];
          }
          mean_gh /= static_cast<double>(k);
          mean_ghx /= static_cast<double>(k);
          double* dst = an->grad.data() + g * k;
          for (int64_t j = 0; j < k; ++j) {
            double gh = gr[j] * gn->value[static_cast<size_t>(j)];
            dst[j] += r * (gh - mean_gh - xh[j] * mean_ghx);
          }
        }
      });
}

// ---- reductions ----

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  auto an = a.node();
  return make_op_output({}, {s}, {a}, "sum_all", [an](TensorNode& o) {
    for (auto& g : an->grad) g += o.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  double inv = 1.0 / static_cast<double>(a.numel());
  auto an = a.node();
  return make_op_output({}, {s * inv}, {a}, "mean_all", [an, inv](TensorNode& o) {
    for (auto& g : an->grad) g += o.grad[0] * inv;
  });
}

Tensor sum_last_axis(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("sum_last_axis: rank >= 1 required");
  int64_t k = a.shape().back();
  int64_t groups = a.numel() / k;
  std::vector<double> out(static_cast<size_t>(groups), 0.0);
  for (int64_t g = 0; g < groups; ++g)
    for (int64_t j = 0; j < k; ++j) out[static_cast<size_t>(g)] += a.values()[g * k + j];
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  if (shape.empty()) shape = {};
  auto an = a.node();
  return make_op_output(std::move(shape), std::move(out), {a}, "sum_last_axis",
                        [an, groups, k](TensorNode& o) {
                          for (int64_t g = 0; g < groups; ++g)
                            for (int64_t j = 0; j < k; ++j)
                              an->grad[g * k + j] += o.grad[static_cast<size_t>(g)];
                        });
}

Tensor l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x * x;
  double norm = std::sqrt(s);
  auto an = a.node();
  return make_op_output({}, {norm}, {a}, "l2_norm", [an, norm](TensorNode& o) {
    double denom = std::max(norm, 1e-12);
    for (size_t i = 0; i < an->grad.size(); ++i)
      an->grad[i] += o.grad[0] * an->value[i] / denom;
  });
}

Tensor l2_normalize_rows(const Tensor& a, double eps, int* clamped) {
  if (a.rank() != 2) throw ShapeError("l2_normalize_rows: rank 2 required");
  int64_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out(a.values().size());
  std::vector<double> denom(static_cast<size_t>(n));
  std::vector<char> is_clamped(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    const double* src = a.values().data() + i * d;
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += src[j] * src[j];
    double norm = std::sqrt(s);
    double dn = norm;
    if (norm <= eps) {
      dn = eps;
      is_clamped[static_cast<size_t>(i)] = 1;
      if (clamped) ++*clamped;
    }
    denom[static_cast<size_t>(i)] = dn;
    for (int64_t j = 0; j < d; ++j) out[i * d + j] = src[j] / dn;
  }
  auto an = a.node();
  return make_op_output(a.shape(), std::move(out), {a}, "l2_normalize_rows",
                        [an, n, d, denom = std::move(denom),
                         is_clamped = std::move(is_clamped)](TensorNode& o) {
                          for (int64_t i = 0; i < n; ++i) {
                            const double* g = o.grad.data() + i * d;
                            const double* y = o.value.data() + i * d;
                            double* dst = an->grad.data() + i * d;
                            double dn = denom[static_cast<size_t>(i)];
                            if (is_clamped[static_cast<size_t>(i)]) {
                              for (int64_t j = 0; j < d; ++j) dst[j] += g[j] / dn;
                            } else {
                              double dot = 0.0;
                              for (int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
                              for (int64_t j = 0; j < d; ++j)
                                dst[j] += (g[j] - y[j] * dot) / dn;
                            }
                          }
                        });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps, int* clamped) {
  require_same_shape(a, b, "cosine_similarity");
  Tensor na = l2_normalize_rows(a, eps, clamped);
  Tensor nb = l2_normalize_rows(b, eps, clamped);
  return sum_last_axis(mul(na, nb));
}

// ---- losses ----

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  double s = 0.0;
  const auto& p = pred.values();
  const auto& t = target.values();
  for (size_t i = 0; i < p.size(); ++i) {
    double d = p[i] - t[i];
    s += d * d;
  }
  double inv = 1.0 / static_cast<double>(pred.numel());
  auto pn = pred.node(), tn = target.node();
  return make_op_output({}, {s * inv}, {pred, target}, "mse_loss", [pn, tn, inv](TensorNode& o) {
    for (size_t i = 0; i < pn->value.size(); ++i) {
      double d = 2.0 * (pn->value[i] - tn->value[i]) * inv * o.grad[0];
      pn->grad[i] += d;
      tn->grad[i] -= d;
    }
  });
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_logits: logits must be (n,C)");
  int64_t n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy_logits: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= c) throw ValueError("cross_entropy_logits: label out of class range");
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* z = logits.values().data() + i * c;
    double mx = z[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
    total += mx + std::log(sum) - z[labels[static_cast<size_t>(i)]];
  }
  double inv = 1.0 / static_cast<double>(n);
  auto ln = logits.node();
  return make_op_output({}, {total * inv}, {logits}, "cross_entropy_logits",
                        [ln, labels, n, c, inv](TensorNode& o) {
                          for (int64_t i = 0; i < n; ++i) {
                            const double* z = ln->value.data() + i * c;
                            double mx = z[0];
                            for (int64_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
                            double sum = 0.0;
                            for (int64_t j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
                            double* dst = ln->grad.data() + i * c;
                            double w = o.grad[0] * inv;
                            for (int64_t j = 0; j < c; ++j) {
                              double p = std::exp(z[j] - mx) / sum;
                              dst[j] += w * (p - (labels[static_cast<size_t>(i)] == j ? 1.0 : 0.0));
                            }
                          }
                        });
}

}  // namespace tabbench
