#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrr/rng.hpp"

namespace dualrr {

// Additive logit mask: large enough that exp(x + kMaskSentinel) underflows to
// exactly 0.0 after max-subtraction, small enough to stay finite everywhere.
inline constexpr double kMaskSentinel = -1e9;

// Bad inputs from the outside world (flags, config files, malformed logs).
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Internal contract violations: shape mismatches, non-finite values, NaN loss.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major f64 matrix with a lazily allocated gradient buffer.
// Handles share state; ops create fresh tensors and never mutate inputs
// (gradient accumulation and optimizer updates are the two exceptions,
// both confined to well-defined points of the step).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor full(std::size_t rows, std::size_t cols, double v);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> v);
  static Tensor row(std::vector<double> v);
  static Tensor scalar(double v);
  // Trainable leaf with elements ~ uniform(-range, range).
  static Tensor param(std::size_t rows, std::size_t cols, Rng& rng, double range);

  bool defined() const { return impl_ != nullptr; }
  std::size_t rows() const { return impl_->rows; }
  std::size_t cols() const { return impl_->cols; }
  std::size_t size() const { return impl_->v.size(); }

  double* data() { return impl_->v.data(); }
  const double* data() const { return impl_->v.data(); }
  const std::vector<double>& values() const { return impl_->v; }

  double at(std::size_t r, std::size_t c) const;
  double item() const;  // 1x1 only

  bool requires_grad() const { return impl_->rg; }
  void set_requires_grad(bool rg) { impl_->rg = rg; }

  // Gradient buffer, allocated (zeroed) on first touch. Tensors are shared
  // handles, so gradient state is mutable through a const handle (the copies
  // captured inside backward closures).
  double* grad() const;
  bool has_grad() const { return !impl_->g.empty(); }
  const std::vector<double>& grad_values() const { return impl_->g; }
  void zero_grad() const { impl_->g.clear(); }

  // Value copy detached from the graph.
  Tensor detach() const;

  bool same_impl(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  struct Impl {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;
    std::vector<double> g;
    bool rg = false;
  };
  std::shared_ptr<Impl> impl_;
  static Tensor make(std::size_t rows, std::size_t cols);
  friend class Tape;
};

// Reverse-mode tape: ops executed while a Tape is active append their backward
// closure; backward() seeds d(loss)=1 and runs the closures in reverse, so each
// node is visited exactly once. Rebuilt every step, never reused.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // RAII activation; nesting restores the previous tape on exit.
  class Scope {
   public:
    explicit Scope(Tape& t);
    ~Scope();

   private:
    Tape* prev_;
  };

  static Tape* active();

  void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }
  std::size_t size() const { return nodes_.size(); }

  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
};

// ---- primitive ops (forward eager, backward recorded when a tape is active) ----

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // v is [1,cols]
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log_elem(const Tensor& x);
Tensor exp_elem(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain_offset,
                       const Tensor& bias, double eps = 1e-5);
// mask is row-major over x's elements; true entries are replaced by `value`
// and pass no gradient.
Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& mask,
                   double value);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t n);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t n);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor pick(const Tensor& x, std::size_t r, std::size_t c);       // -> 1x1
Tensor pick_cols(const Tensor& x, const std::vector<std::size_t>& cols);  // -> [rows,1]
Tensor sum_all(const Tensor& x);   // -> 1x1
Tensor mean_all(const Tensor& x);  // -> 1x1
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);  // log(1 + e^x), overflow-safe

// Max relative error between tape gradients and central differences:
//   max_i |analytic_i - cd_i| / max(1e-5, |cd_i|)
// The floor is the smallest magnitude a central difference can resolve with
// margin at the default eps; smaller gradients are compared at zero scale.
// f must return a 1x1 tensor built from ops above. `coords` empty means all.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-5, const std::vector<std::size_t>& coords = {});

}  // namespace dualrr
