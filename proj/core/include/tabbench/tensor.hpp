#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tabbench/errors.hpp"
#include "tabbench/matrix.hpp"
#include "tabbench/rng.hpp"

namespace tabbench {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward populates it
  bool requires_grad = false;
};

// Handle to a dense double-precision array. Values are immutable once an op
// has produced them; gradient buffers are filled by Tape::backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar_of(double v, bool requires_grad = false);
  static Tensor from_matrix(const Matrix& m, bool requires_grad = false);
  // Xavier-uniform init over fan_in/fan_out, the default for weight matrices.
  static Tensor xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng, Shape shape = {});

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const { return node_->value; }
  const std::vector<double>& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  double scalar() const;

  // Leaf-only in-place access, used by optimizers and initialization.
  std::vector<double>& mutable_values() { return node_->value; }
  void clear_grad() { node_->grad.clear(); }

  Matrix to_matrix() const;
  Tensor detached_copy(bool requires_grad = false) const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
  friend Tensor make_op_output(Shape shape, std::vector<double> value,
                               const std::vector<Tensor>& inputs, const char* name,
                               std::function<void(TensorNode&)> backward);
};

// Reverse-mode tape. Constructing one makes it the active tape for the
// current thread (ops with requires_grad inputs record onto it); destruction
// restores the previous tape. One tape per trial thread.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)=1 and walks recorded ops in reverse creation order,
  // accumulating into .grad of every requires_grad tensor. Errors if loss is
  // not scalar, the tape is empty, or backward already ran on this tape.
  void backward(const Tensor& loss);

  size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* active();

 private:
  struct OpRecord {
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> output;
    std::function<void(TensorNode&)> backward_fn;  // reads output grad, accumulates into inputs
    const char* name;
  };
  std::vector<OpRecord> ops_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;

  friend Tensor make_op_output(Shape shape, std::vector<double> value,
                               const std::vector<Tensor>& inputs, const char* name,
                               std::function<void(TensorNode&)> backward);
};

// ---- primitive ops ----
// Every op validates shapes, checks the produced values are finite, and
// records itself on the active tape when any input requires grad.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// (..., k) + (k): bias-style broadcast over the last axis
Tensor add_rowvec(const Tensor& a, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);   // (m,k) x (k,n)
Tensor bmm(const Tensor& a, const Tensor& b);      // (B,m,k) x (B,k,n)
Tensor transpose(const Tensor& a);                 // 2-d
Tensor transpose_last2(const Tensor& a);           // swaps the last two axes of a 2-d/3-d tensor
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
// offsets/extents per axis, rank must match
Tensor slice(const Tensor& a, const std::vector<int64_t>& offsets,
             const std::vector<int64_t>& extents);
// (n,T,H*hd) -> (n*H,T,hd) and back; pure index permutations used by MHSA
Tensor split_heads(const Tensor& a, int64_t heads);
Tensor merge_heads(const Tensor& a, int64_t heads);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softmax_last(const Tensor& a);  // max-shifted, rows sum to 1
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_last_axis(const Tensor& a);
Tensor l2_norm(const Tensor& a);  // scalar Euclidean norm of all elements

// Rows scaled to unit norm; rows with norm <= eps are divided by eps instead
// and counted into *clamped when provided.
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12, int* clamped = nullptr);
// Row-wise cosine similarity of two (n,d) tensors -> (n)
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-12,
                         int* clamped = nullptr);

Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Mean over rows of [logsumexp(logits_i) - logits_i[label_i]]
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels);

}  // namespace tabbench
