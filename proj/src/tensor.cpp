#include "dualrr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dualrr/kernels.hpp"

namespace dualrr {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

// Every op funnels its output through this: NaN/Inf anywhere is a hard error
// naming the op, per the numerics contract (the -1e9 mask sentinel is finite
// on purpose and passes).
void ensure_finite(const char* op, const Tensor& t) {
  const double* p = t.data();
  const std::size_t n = t.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw Error(std::string("op '") + op + "': non-finite output at (" +
                  std::to_string(i / t.cols()) + "," + std::to_string(i % t.cols()) +
                  ") of " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
    }
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(std::string("op '") + op + "': shape mismatch " + shape_str(a) +
                " vs " + shape_str(b));
}

bool should_record(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

// ---------- Tensor ----------

Tensor Tensor::make(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw Error("tensor: zero dimension");
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->rows = rows;
  t.impl_->cols = cols;
  t.impl_->v.assign(rows * cols, 0.0);
  return t;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return make(rows, cols); }

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v) {
  Tensor t = make(rows, cols);
  std::fill(t.impl_->v.begin(), t.impl_->v.end(), v);
  return t;
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> v) {
  if (v.size() != rows * cols) throw Error("tensor: data size does not match shape");
  Tensor t = make(rows, cols);
  t.impl_->v = std::move(v);
  return t;
}

Tensor Tensor::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return from(1, n, std::move(v));
}

Tensor Tensor::scalar(double v) { return from(1, 1, {v}); }

Tensor Tensor::param(std::size_t rows, std::size_t cols, Rng& rng, double range) {
  Tensor t = make(rows, cols);
  for (double& x : t.impl_->v) x = rng.uniform(-range, range);
  t.impl_->rg = true;
  return t;
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) throw Error("tensor: index out of range");
  return impl_->v[r * cols() + c];
}

double Tensor::item() const {
  if (size() != 1) throw Error("tensor: item() on non-scalar " + shape_str(*this));
  return impl_->v[0];
}

double* Tensor::grad() const {
  if (impl_->g.empty()) impl_->g.assign(impl_->v.size(), 0.0);
  return impl_->g.data();
}

Tensor Tensor::detach() const {
  Tensor t = make(rows(), cols());
  t.impl_->v = impl_->v;
  return t;
}

// ---------- Tape ----------

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw Error("backward: loss must be 1x1");
  if (!loss.requires_grad())
    throw Error("backward: loss is not connected to this tape");
  loss.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

// ---------- op helpers ----------

namespace {

// Output tensors of recorded ops require grad so downstream ops keep recording.
Tensor finish(const char* op, Tensor out, bool recorded) {
  ensure_finite(op, out);
  if (recorded) out.set_requires_grad(true);
  return out;
}

}  // namespace

// ---------- ops ----------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw Error("op 'matmul': inner dims " + shape_str(a) + " vs " + shape_str(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros(m, n);
  kernels::active().gemm_nn(a.data(), b.data(), out.data(), m, k, n, false);
  const bool rec = should_record({&a, &b});
  if (rec) {
    Tape::active()->record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      if (a.requires_grad())
        kernels::active().gemm_nt(g, b.data(), a.grad(), m, n, k, true);
      if (b.requires_grad())
        kernels::active().gemm_tn(a.data(), g, b.grad(), k, m, n, true);
    });
  }
  return finish("matmul", out, rec);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw Error("op 'matmul_nt': inner dims " + shape_str(a) + " vs " + shape_str(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros(m, n);
  kernels::active().gemm_nt(a.data(), b.data(), out.data(), m, k, n, false);
  const bool rec = should_record({&a, &b});
  if (rec) {
    Tape::active()->record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      if (a.requires_grad())
        kernels::active().gemm_nn(g, b.data(), a.grad(), m, n, k, true);
      if (b.requires_grad())
        kernels::active().gemm_tn(g, a.data(), b.grad(), n, m, k, true);
    });
  }
  return finish("matmul_nt", out, rec);
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  kernels::active().add(a.data(), b.data(), out.data(), a.size());
  const bool rec = should_record({&a, &b});
  if (rec) {
    Tape::active()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      if (a.requires_grad()) kernels::active().axpy(1.0, g, a.grad(), a.size());
      if (b.requires_grad()) kernels::active().axpy(1.0, g, b.grad(), b.size());
    });
  }
  return finish("add", out, rec);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] - pb[i];
  const bool rec = should_record({&a, &b});
  if (rec) {
    Tape::active()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      if (a.requires_grad()) kernels::active().axpy(1.0, g, a.grad(), a.size());
      if (b.requires_grad()) kernels::active().axpy(-1.0, g, b.grad(), b.size());
    });
  }
  return finish("sub", out, rec);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  kernels::active().mul(a.data(), b.data(), out.data(), a.size());
  const bool rec = should_record({&a, &b});
  if (rec) {
    Tape::active()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      const std::size_t n = a.size();
      if (a.requires_grad()) {
        double* ga = a.grad();
        const double* pb = b.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad();
        const double* pa = a.data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return finish("mul", out, rec);
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  kernels::active().scale(c, x.data(), out.data(), x.size());
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out, c]() mutable {
      if (!out.has_grad()) return;
      kernels::active().axpy(c, out.grad(), x.grad(), x.size());
    });
  }
  return finish("scale", out, rec);
}

Tensor add_scalar(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] + c;
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      kernels::active().axpy(1.0, out.grad(), x.grad(), x.size());
    });
  }
  return finish("add_scalar", out, rec);
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (v.rows() != 1 || v.cols() != x.cols())
    throw Error("op 'add_rowvec': want [1," + std::to_string(x.cols()) + "], got " +
                shape_str(v));
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r)
    kernels::active().add(x.data() + r * n, v.data(), out.data() + r * n, n);
  const bool rec = should_record({&x, &v});
  if (rec) {
    Tape::active()->record([x, v, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      const std::size_t n = x.cols();
      if (x.requires_grad()) kernels::active().axpy(1.0, g, x.grad(), x.size());
      if (v.requires_grad()) {
        double* gv = v.grad();
        for (std::size_t r = 0; r < x.rows(); ++r)
          kernels::active().axpy(1.0, g + r * n, gv, n);
      }
    });
  }
  return finish("add_rowvec", out, rec);
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i)
    po[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * kInvSqrt2));
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      const double* px = x.data();
      double* gx = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(px[i] * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * px[i] * px[i]);
        gx[i] += g[i] * (cdf + px[i] * pdf);
      }
    });
  }
  return finish("gelu", out, rec);
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      const double* px = x.data();
      double* gx = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i)
        if (px[i] > 0.0) gx[i] += g[i];
    });
  }
  return finish("relu", out, rec);
}

Tensor log_elem(const Tensor& x) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = std::log(px[i]);
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      const double* px = x.data();
      double* gx = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] / px[i];
    });
  }
  return finish("log", out, rec);
}

Tensor exp_elem(const Tensor& x) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = std::exp(px[i]);
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      const double* po = out.data();
      double* gx = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * po[i];
    });
  }
  return finish("exp", out, rec);
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = stable_sigmoid(px[i]);
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      const double* po = out.data();
      double* gx = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i)
        gx[i] += g[i] * po[i] * (1.0 - po[i]);
    });
  }
  return finish("sigmoid", out, rec);
}

Tensor softplus(const Tensor& x) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = stable_softplus(px[i]);
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      const double* px = x.data();
      double* gx = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i)
        gx[i] += g[i] * stable_sigmoid(px[i]);
    });
  }
  return finish("softplus", out, rec);
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* px = x.data() + r * n;
    double* po = out.data() + r * n;
    const double mx = kernels::active().vmax(px, n);
    for (std::size_t i = 0; i < n; ++i) po[i] = std::exp(px[i] - mx);
    const double s = kernels::active().sum(po, n);
    kernels::active().scale(1.0 / s, po, po, n);
  }
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const std::size_t n = x.cols();
      double* gx = x.grad();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double* g = out.grad() + r * n;
        const double* y = out.data() + r * n;
        const double gy = kernels::active().dot(g, y, n);
        for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += y[i] * (g[i] - gy);
      }
    });
  }
  return finish("softmax", out, rec);
}

Tensor log_softmax_rows(const Tensor& x) {
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const std::size_t n = x.cols();
  std::vector<double> tmp(n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* px = x.data() + r * n;
    double* po = out.data() + r * n;
    const double mx = kernels::active().vmax(px, n);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = std::exp(px[i] - mx);
    const double lse = mx + std::log(kernels::active().sum(tmp.data(), n));
    for (std::size_t i = 0; i < n; ++i) po[i] = px[i] - lse;
  }
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const std::size_t n = x.cols();
      double* gx = x.grad();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double* g = out.grad() + r * n;
        const double* lo = out.data() + r * n;
        const double sg = kernels::active().sum(g, n);
        for (std::size_t i = 0; i < n; ++i)
          gx[r * n + i] += g[i] - std::exp(lo[i]) * sg;
      }
    });
  }
  return finish("log_softmax", out, rec);
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain_offset,
                       const Tensor& bias, double eps) {
  // Effective gain is (1 + gain_offset): stored parameters can then share the
  // global uniform(-0.05, 0.05) init while the transform starts near identity.
  if (gain_offset.rows() != 1 || gain_offset.cols() != x.cols() ||
      bias.rows() != 1 || bias.cols() != x.cols())
    throw Error("op 'layer_norm': affine params must be [1," +
                std::to_string(x.cols()) + "]");
  const std::size_t n = x.cols();
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  Tensor xhat = Tensor::zeros(x.rows(), x.cols());  // cached for backward
  std::vector<double> inv_std(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* px = x.data() + r * n;
    double* ph = xhat.data() + r * n;
    double* po = out.data() + r * n;
    const double mu = kernels::active().sum(px, n) / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = px[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    const double* pg = gain_offset.data();
    const double* pb = bias.data();
    for (std::size_t i = 0; i < n; ++i) {
      ph[i] = (px[i] - mu) * inv;
      po[i] = ph[i] * (1.0 + pg[i]) + pb[i];
    }
  }
  const bool rec = should_record({&x, &gain_offset, &bias});
  if (rec) {
    Tape::active()->record([x, gain_offset, bias, out, xhat,
                            inv_std = std::move(inv_std)]() mutable {
      if (!out.has_grad()) return;
      const std::size_t n = x.cols();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double* g = out.grad() + r * n;
        const double* ph = xhat.data() + r * n;
        if (gain_offset.requires_grad()) {
          double* gg = gain_offset.grad();
          for (std::size_t i = 0; i < n; ++i) gg[i] += g[i] * ph[i];
        }
        if (bias.requires_grad()) {
          double* gb = bias.grad();
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
        if (x.requires_grad()) {
          const double* pg = gain_offset.data();
          double* gx = x.grad() + r * n;
          double mean_gh = 0.0, mean_ghx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double gh = g[i] * (1.0 + pg[i]);
            mean_gh += gh;
            mean_ghx += gh * ph[i];
          }
          mean_gh /= static_cast<double>(n);
          mean_ghx /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const double gh = g[i] * (1.0 + pg[i]);
            gx[i] += (gh - mean_gh - ph[i] * mean_ghx) * inv_std[r];
          }
        }
      }
    });
  }
  return finish("layer_norm", out, rec);
}

Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& mask,
                   double value) {
  if (mask.size() != x.size())
    throw Error("op 'masked_fill': mask size " + std::to_string(mask.size()) +
                " vs tensor " + shape_str(x));
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = mask[i] ? value : px[i];
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out, mask]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad();
      double* gx = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i)
        if (!mask[i]) gx[i] += g[i];
    });
  }
  return finish("masked_fill", out, rec);
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw Error("op 'gather_rows': empty index list");
  for (std::size_t r : idx)
    if (r >= x.rows())
      throw Error("op 'gather_rows': index " + std::to_string(r) + " out of " +
                  std::to_string(x.rows()) + " rows");
  const std::size_t n = x.cols();
  Tensor out = Tensor::zeros(idx.size(), n);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.data() + idx[i] * n, n, out.data() + i * n);
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out, idx]() mutable {
      if (!out.has_grad()) return;
      double* gx = x.grad();
      const std::size_t n = x.cols();
      for (std::size_t i = 0; i < idx.size(); ++i)
        kernels::active().axpy(1.0, out.grad() + i * n, gx + idx[i] * n, n);
    });
  }
  return finish("gather_rows", out, rec);
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t n) {
  if (r0 + n > x.rows()) throw Error("op 'slice_rows': range out of bounds");
  Tensor out = Tensor::zeros(n, x.cols());
  std::copy_n(x.data() + r0 * x.cols(), n * x.cols(), out.data());
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out, r0]() mutable {
      if (!out.has_grad()) return;
      kernels::active().axpy(1.0, out.grad(), x.grad() + r0 * x.cols(), out.size());
    });
  }
  return finish("slice_rows", out, rec);
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t n) {
  if (c0 + n > x.cols()) throw Error("op 'slice_cols': range out of bounds");
  Tensor out = Tensor::zeros(x.rows(), n);
  for (std::size_t r = 0; r < x.rows(); ++r)
    std::copy_n(x.data() + r * x.cols() + c0, n, out.data() + r * n);
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out, c0, n]() mutable {
      if (!out.has_grad()) return;
      double* gx = x.grad();
      for (std::size_t r = 0; r < x.rows(); ++r)
        kernels::active().axpy(1.0, out.grad() + r * n, gx + r * x.cols() + c0, n);
    });
  }
  return finish("slice_cols", out, rec);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("op 'concat_rows': no parts");
  const std::size_t n = parts[0].cols();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != n) throw Error("op 'concat_rows': column mismatch");
    rows += p.rows();
  }
  Tensor out = Tensor::zeros(rows, n);
  std::size_t r = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.data(), p.size(), out.data() + r * n);
    r += p.rows();
  }
  bool rec = false;
  if (Tape::active())
    for (const Tensor& p : parts)
      if (p.requires_grad()) rec = true;
  if (rec) {
    Tape::active()->record([parts, out]() mutable {
      if (!out.has_grad()) return;
      std::size_t r = 0;
      for (const Tensor& p : parts) {
        if (p.requires_grad())
          kernels::active().axpy(1.0, out.grad() + r * p.cols(), p.grad(), p.size());
        r += p.rows();
      }
    });
  }
  return finish("concat_rows", out, rec);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("op 'concat_cols': no parts");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) throw Error("op 'concat_cols': row mismatch");
    cols += p.cols();
  }
  Tensor out = Tensor::zeros(rows, cols);
  std::size_t c = 0;
  for (const Tensor& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data() + r * p.cols(), p.cols(), out.data() + r * cols + c);
    c += p.cols();
  }
  bool rec = false;
  if (Tape::active())
    for (const Tensor& p : parts)
      if (p.requires_grad()) rec = true;
  if (rec) {
    Tape::active()->record([parts, out, rows, cols]() mutable {
      if (!out.has_grad()) return;
      std::size_t c = 0;
      for (const Tensor& p : parts) {
        if (p.requires_grad()) {
          double* gp = p.grad();
          for (std::size_t r = 0; r < rows; ++r)
            kernels::active().axpy(1.0, out.grad() + r * cols + c,
                                   gp + r * p.cols(), p.cols());
        }
        c += p.cols();
      }
    });
  }
  return finish("concat_cols", out, rec);
}

Tensor pick(const Tensor& x, std::size_t r, std::size_t c) {
  if (r >= x.rows() || c >= x.cols()) throw Error("op 'pick': index out of range");
  Tensor out = Tensor::scalar(x.at(r, c));
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out, r, c]() mutable {
      if (!out.has_grad()) return;
      x.grad()[r * x.cols() + c] += out.grad()[0];
    });
  }
  return finish("pick", out, rec);
}

Tensor pick_cols(const Tensor& x, const std::vector<std::size_t>& cols) {
  if (cols.size() != x.rows())
    throw Error("op 'pick_cols': need one column per row");
  for (std::size_t c : cols)
    if (c >= x.cols()) throw Error("op 'pick_cols': column out of range");
  Tensor out = Tensor::zeros(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    out.data()[r] = x.data()[r * x.cols() + cols[r]];
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out, cols]() mutable {
      if (!out.has_grad()) return;
      double* gx = x.grad();
      for (std::size_t r = 0; r < x.rows(); ++r)
        gx[r * x.cols() + cols[r]] += out.grad()[r];
    });
  }
  return finish("pick_cols", out, rec);
}

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::scalar(kernels::active().sum(x.data(), x.size()));
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      double* gx = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
    });
  }
  return finish("sum_all", out, rec);
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor out = Tensor::scalar(kernels::active().sum(x.data(), x.size()) * inv);
  const bool rec = should_record({&x});
  if (rec) {
    Tape::active()->record([x, out, inv]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0] * inv;
      double* gx = x.grad();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
    });
  }
  return finish("mean_all", out, rec);
}

// ---------- grad_check ----------

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps, const std::vector<std::size_t>& coords) {
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = f(x);
    if (loss.size() != 1) throw Error("grad_check: f must return a 1x1 tensor");
    tape.backward(loss);
    analytic.assign(x.grad(), x.grad() + x.size());
  }
  std::vector<std::size_t> cs = coords;
  if (cs.empty()) {
    cs.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) cs[i] = i;
  }
  double worst = 0.0;
  for (std::size_t c : cs) {
    if (c >= x.size()) throw Error("grad_check: coordinate out of range");
    const double orig = x.data()[c];
    x.data()[c] = orig + eps;
    const double f1 = f(x).item();
    x.data()[c] = orig - eps;
    const double f2 = f(x).item();
    x.data()[c] = orig;
    const double cd = (f1 - f2) / (2.0 * eps);
    // Central differences cannot resolve gradients much below
    // ulp(|f|) / (2*eps) — cancellation noise alone reaches ~1e-10 for a
    // loss of order one at the default eps.  The 1e-5 floor treats anything
    // smaller as zero-scale (e.g. directions a softmax makes exactly
    // invariant) instead of dividing noise by noise.
    const double rel = std::abs(analytic[c] - cd) / std::max(1e-5, std::abs(cd));
    worst = std::max(worst, rel);
  }
  x.zero_grad();
  return worst;
}

}  // namespace dualrr
