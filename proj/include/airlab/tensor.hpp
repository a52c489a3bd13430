#ifndef AIRLAB_TENSOR_HPP_
#define AIRLAB_TENSOR_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "airlab/rng.hpp"

namespace airlab {

// ---------------------------------------------------------------------------
// Tape-based reverse-mode autodiff over dense row-major tensors.
//
// Tensors are cheap handles sharing storage; every differentiable op records
// a node holding its parents and a backprop closure. backward() walks the
// recorded graph in exact reverse topological order. Templated on the scalar
// type: float for training/attack runs, double for finite-difference checks.
// ---------------------------------------------------------------------------

template <typename T>
struct TensorT;

template <typename T>
struct NodeT {
  std::vector<TensorT<T>> parents;
  std::function<void(const TensorT<T>&)> backprop;
  bool done = false;  // set once backward has traversed this node
};

inline bool& autograd_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph recording in a scope (candidate evaluation, decoding, FD
// probes).
struct NoGradGuard {
  NoGradGuard() : prev_(autograd_enabled()) { autograd_enabled() = false; }
  ~NoGradGuard() { autograd_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // lazily allocated, shape == value shape
  bool requires_grad = false;
  std::shared_ptr<NodeT<T>> node;

  TensorT() = default;

  // Tensors that require grad allocate it eagerly: handles copy freely and
  // must keep sharing the same gradient buffer.
  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    TensorT t;
    const int64_t n = shape_numel(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(static_cast<size_t>(n), T(0));
    t.requires_grad = requires_grad;
    if (requires_grad) t.ensure_grad();
    return t;
  }

  static TensorT from_data(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
    const int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size())) {
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    }
    TensorT t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.ensure_grad();
    return t;
  }

  static TensorT scalar(double v, bool requires_grad = false) {
    return from_data({1}, {static_cast<T>(v)}, requires_grad);
  }

  static TensorT randn(std::vector<int> shape, Rng& rng, double std_dev, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (T& v : *t.data) v = static_cast<T>(rng.normal() * std_dev);
    return t;
  }

  int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  bool defined() const { return static_cast<bool>(data); }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }

  void ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<T>>(data->size(), T(0));
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }

  // Deep copy of the values; grad and graph are not carried over.
  TensorT clone(bool requires_grad_copy = false) const {
    TensorT t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(*data);
    t.requires_grad = requires_grad_copy;
    if (requires_grad_copy) t.ensure_grad();
    return t;
  }

  T item() const {
    if (numel() != 1) throw std::runtime_error("tensor: item() on non-scalar " + shape_str(shape));
    return (*data)[0];
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<EMat<T>> as_matrix(TensorT<T>& t) {
  return Eigen::Map<EMat<T>>(t.ptr(), t.dim(0), t.dim(1));
}

template <typename T>
Eigen::Map<const EMat<T>> as_matrix(const TensorT<T>& t) {
  return Eigen::Map<const EMat<T>>(t.ptr(), t.dim(0), t.dim(1));
}

template <typename T>
Eigen::Map<EMat<T>> grad_matrix(TensorT<T>& t) {
  t.ensure_grad();
  return Eigen::Map<EMat<T>>(t.grad->data(), t.dim(0), t.dim(1));
}

template <typename T>
Eigen::Map<const EMat<T>> grad_matrix_const(const TensorT<T>& t) {
  return Eigen::Map<const EMat<T>>(t.grad->data(), t.dim(0), t.dim(1));
}

template <typename T>
bool want_grad(const TensorT<T>& t) {
  return autograd_enabled() && t.requires_grad;
}

template <typename T>
void require_2d(const TensorT<T>& t, const char* op) {
  if (t.ndim() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape));
  }
}

template <typename T>
void attach(TensorT<T>& out, std::vector<TensorT<T>> parents,
            std::function<void(const TensorT<T>&)> backprop) {
  bool any = false;
  for (const auto& p : parents) any = any || want_grad(p);
  if (!any) return;
  out.requires_grad = true;
  out.ensure_grad();
  out.node = std::make_shared<NodeT<T>>();
  out.node->parents = std::move(parents);
  out.node->backprop = std::move(backprop);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

// Elementwise sum. b may either match a's shape exactly or be a 1-D vector
// broadcast over a's rows.
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  const bool same = a.shape == b.shape;
  const bool row_bcast = !same && a.ndim() == 2 && b.ndim() == 1 && b.dim(0) == a.dim(1);
  if (!same && !row_bcast) {
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  const int64_t n = a.numel();
  if (same) {
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  } else {
    const int cols = a.dim(1);
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % cols];
  }
  detail::attach<T>(out, {a, b}, [same](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    auto& pb_t = o.node->parents[1];
    const std::vector<T>& og = *o.grad;
    if (pa_t.requires_grad) {
      pa_t.ensure_grad();
      std::vector<T>& ga = *pa_t.grad;
      for (size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
    }
    if (pb_t.requires_grad) {
      pb_t.ensure_grad();
      std::vector<T>& gb = *pb_t.grad;
      if (same) {
        for (size_t i = 0; i < og.size(); ++i) gb[i] += og[i];
      } else {
        const size_t cols = gb.size();
        for (size_t i = 0; i < og.size(); ++i) gb[i % cols] += og[i];
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape) {
    throw std::invalid_argument("sub: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i];
  detail::attach<T>(out, {a, b}, [](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    auto& pb_t = o.node->parents[1];
    const std::vector<T>& og = *o.grad;
    if (pa_t.requires_grad) {
      pa_t.ensure_grad();
      for (size_t i = 0; i < og.size(); ++i) (*pa_t.grad)[i] += og[i];
    }
    if (pb_t.requires_grad) {
      pb_t.ensure_grad();
      for (size_t i = 0; i < og.size(); ++i) (*pb_t.grad)[i] -= og[i];
    }
  });
  return out;
}

// Hadamard product.
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape) {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  detail::attach<T>(out, {a, b}, [](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    auto& pb_t = o.node->parents[1];
    const std::vector<T>& og = *o.grad;
    if (pa_t.requires_grad) {
      pa_t.ensure_grad();
      for (size_t i = 0; i < og.size(); ++i) (*pa_t.grad)[i] += og[i] * (*pb_t.data)[i];
    }
    if (pb_t.requires_grad) {
      pb_t.ensure_grad();
      for (size_t i = 0; i < og.size(); ++i) (*pb_t.grad)[i] += og[i] * (*pa_t.data)[i];
    }
  });
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, double c) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T cv = static_cast<T>(c);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * cv;
  detail::attach<T>(out, {a}, [cv](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    if (!pa_t.requires_grad) return;
    pa_t.ensure_grad();
    const std::vector<T>& og = *o.grad;
    for (size_t i = 0; i < og.size(); ++i) (*pa_t.grad)[i] += og[i] * cv;
  });
  return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, double c) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T cv = static_cast<T>(c);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + cv;
  detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    if (!pa_t.requires_grad) return;
    pa_t.ensure_grad();
    const std::vector<T>& og = *o.grad;
    for (size_t i = 0; i < og.size(); ++i) (*pa_t.grad)[i] += og[i];
  });
  return out;
}

// C = A @ B with A:[m,k], B:[k,n].
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  TensorT<T> out = TensorT<T>::zeros({a.dim(0), b.dim(1)});
  detail::as_matrix(out).noalias() = detail::as_matrix(a) * detail::as_matrix(b);
  detail::attach<T>(out, {a, b}, [](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    auto& pb_t = o.node->parents[1];
    auto og = detail::grad_matrix_const(o);
    if (pa_t.requires_grad) {
      detail::grad_matrix(pa_t).noalias() += og * detail::as_matrix(pb_t).transpose();
    }
    if (pb_t.requires_grad) {
      detail::grad_matrix(pb_t).noalias() += detail::as_matrix(pa_t).transpose() * og;
    }
  });
  return out;
}

// C = A @ B^T with A:[m,k], B:[n,k]. Used for attention scores without
// materializing transposed keys.
template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("matmul_nt: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  TensorT<T> out = TensorT<T>::zeros({a.dim(0), b.dim(0)});
  detail::as_matrix(out).noalias() = detail::as_matrix(a) * detail::as_matrix(b).transpose();
  detail::attach<T>(out, {a, b}, [](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    auto& pb_t = o.node->parents[1];
    auto og = detail::grad_matrix_const(o);
    if (pa_t.requires_grad) {
      detail::grad_matrix(pa_t).noalias() += og * detail::as_matrix(pb_t);
    }
    if (pb_t.requires_grad) {
      detail::grad_matrix(pb_t).noalias() += og.transpose() * detail::as_matrix(pa_t);
    }
  });
  return out;
}

// Row gather: out[i] = table[ids[i]]. Backward scatter-adds into the table,
// which is how both the token embedding and the privilege tables learn.
template <typename T>
TensorT<T> embedding_rows(const TensorT<T>& table, const std::vector<int>& ids) {
  detail::require_2d(table, "embedding");
  const int rows = table.dim(0);
  const int cols = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= rows) {
      throw std::out_of_range("embedding: index " + std::to_string(id) + " out of range [0," +
                              std::to_string(rows) + ")");
    }
  }
  TensorT<T> out = TensorT<T>::zeros({static_cast<int>(ids.size()), cols});
  for (size_t i = 0; i < ids.size(); ++i) {
    const T* src = table.ptr() + static_cast<size_t>(ids[i]) * cols;
    std::copy(src, src + cols, out.ptr() + i * cols);
  }
  detail::attach<T>(out, {table}, [ids, cols](const TensorT<T>& o) {
    auto& pt = o.node->parents[0];
    if (!pt.requires_grad) return;
    pt.ensure_grad();
    const std::vector<T>& og = *o.grad;
    std::vector<T>& gt = *pt.grad;
    for (size_t i = 0; i < ids.size(); ++i) {
      T* dst = gt.data() + static_cast<size_t>(ids[i]) * cols;
      const T* src = og.data() + i * cols;
      for (int c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
  return out;
}

// Numerically stable row softmax (max-subtracted).
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& a) {
  detail::require_2d(a, "softmax");
  const int m = a.dim(0), n = a.dim(1);
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  for (int i = 0; i < m; ++i) {
    const T* row = a.ptr() + static_cast<size_t>(i) * n;
    T* orow = out.ptr() + static_cast<size_t>(i) * n;
    T mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
  detail::attach<T>(out, {a}, [m, n](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    if (!pa_t.requires_grad) return;
    pa_t.ensure_grad();
    for (int i = 0; i < m; ++i) {
      const T* s = o.ptr() + static_cast<size_t>(i) * n;
      const T* g = o.grad->data() + static_cast<size_t>(i) * n;
      T* d = pa_t.grad->data() + static_cast<size_t>(i) * n;
      T dot = 0;
      for (int j = 0; j < n; ++j) dot += g[j] * s[j];
      for (int j = 0; j < n; ++j) d[j] += s[j] * (g[j] - dot);
    }
  });
  return out;
}

// Sets entries above the diagonal to -inf so a following row softmax only
// attends to positions <= the query position. Square input.
template <typename T>
TensorT<T> causal_mask_fill(const TensorT<T>& a) {
  detail::require_2d(a, "causal_mask_fill");
  if (a.dim(0) != a.dim(1)) {
    throw std::invalid_argument("causal_mask_fill: expected square scores, got " + shape_str(a.shape));
  }
  const int n = a.dim(0);
  TensorT<T> out = a.clone();
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (int i = 0; i < n; ++i) {
    T* row = out.ptr() + static_cast<size_t>(i) * n;
    for (int j = i + 1; j < n; ++j) row[j] = neg_inf;
  }
  detail::attach<T>(out, {a}, [n](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    if (!pa_t.requires_grad) return;
    pa_t.ensure_grad();
    for (int i = 0; i < n; ++i) {
      const T* g = o.grad->data() + static_cast<size_t>(i) * n;
      T* d = pa_t.grad->data() + static_cast<size_t>(i) * n;
      for (int j = 0; j <= i; ++j) d[j] += g[j];
    }
  });
  return out;
}

// Root-mean-square normalization with a learned per-channel gain.
template <typename T>
TensorT<T> rmsnorm_rows(const TensorT<T>& a, const TensorT<T>& weight, double eps = 1e-5) {
  detail::require_2d(a, "rmsnorm");
  if (weight.ndim() != 1 || weight.dim(0) != a.dim(1)) {
    throw std::invalid_argument("rmsnorm: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(weight.shape));
  }
  const int m = a.dim(0), n = a.dim(1);
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  for (int i = 0; i < m; ++i) {
    const T* row = a.ptr() + static_cast<size_t>(i) * n;
    T* orow = out.ptr() + static_cast<size_t>(i) * n;
    double ms = 0;
    for (int j = 0; j < n; ++j) ms += static_cast<double>(row[j]) * row[j];
    const T r = static_cast<T>(1.0 / std::sqrt(ms / n + eps));
    for (int j = 0; j < n; ++j) orow[j] = row[j] * r * weight.ptr()[j];
  }
  detail::attach<T>(out, {a, weight}, [m, n, eps](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    auto& pw_t = o.node->parents[1];
    for (int i = 0; i < m; ++i) {
      const T* row = pa_t.ptr() + static_cast<size_t>(i) * n;
      const T* g = o.grad->data() + static_cast<size_t>(i) * n;
      double ms = 0;
      for (int j = 0; j < n; ++j) ms += static_cast<double>(row[j]) * row[j];
      const double r = 1.0 / std::sqrt(ms / n + eps);
      if (pw_t.requires_grad) {
        pw_t.ensure_grad();
        for (int j = 0; j < n; ++j) {
          (*pw_t.grad)[j] += static_cast<T>(g[j] * row[j] * r);
        }
      }
      if (pa_t.requires_grad) {
        pa_t.ensure_grad();
        const T* w = pw_t.ptr();
        double dot = 0;  // sum_j g_j * w_j * x_j
        for (int j = 0; j < n; ++j) dot += static_cast<double>(g[j]) * w[j] * row[j];
        const double coef = r * r * r * dot / n;
        T* d = pa_t.grad->data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          d[j] += static_cast<T>(r * g[j] * w[j] - coef * row[j]);
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    const T x = a.ptr()[i];
    out.ptr()[i] = x / (T(1) + std::exp(-x));
  }
  detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    if (!pa_t.requires_grad) return;
    pa_t.ensure_grad();
    const std::vector<T>& og = *o.grad;
    for (size_t i = 0; i < og.size(); ++i) {
      const T x = (*pa_t.data)[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      (*pa_t.grad)[i] += og[i] * s * (T(1) + x * (T(1) - s));
    }
  });
  return out;
}

// log(1 + e^x), stable for large |x|.
template <typename T>
TensorT<T> softplus(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    const T x = a.ptr()[i];
    out.ptr()[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
  }
  detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    if (!pa_t.requires_grad) return;
    pa_t.ensure_grad();
    const std::vector<T>& og = *o.grad;
    for (size_t i = 0; i < og.size(); ++i) {
      const T x = (*pa_t.data)[i];
      (*pa_t.grad)[i] += og[i] / (T(1) + std::exp(-x));
    }
  });
  return out;
}

// Rotary position encoding over one head: row index is the position, adjacent
// column pairs are rotated by pos * base^(-2a/head_dim). Backward rotates the
// gradient by the opposite angle.
template <typename T>
TensorT<T> rope_rows(const TensorT<T>& a, double base = 10000.0) {
  detail::require_2d(a, "rope");
  const int t_len = a.dim(0);
  const int hd = a.dim(1);
  if (hd % 2 != 0) {
    throw std::invalid_argument("rope: head dim must be even, got " + shape_str(a.shape));
  }
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  for (int pos = 0; pos < t_len; ++pos) {
    const T* row = a.ptr() + static_cast<size_t>(pos) * hd;
    T* orow = out.ptr() + static_cast<size_t>(pos) * hd;
    for (int p = 0; p < hd / 2; ++p) {
      const double theta = pos * std::pow(base, -2.0 * p / hd);
      const T c = static_cast<T>(std::cos(theta));
      const T s = static_cast<T>(std::sin(theta));
      const T x0 = row[2 * p], x1 = row[2 * p + 1];
      orow[2 * p] = x0 * c - x1 * s;
      orow[2 * p + 1] = x0 * s + x1 * c;
    }
  }
  detail::attach<T>(out, {a}, [t_len, hd, base](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    if (!pa_t.requires_grad) return;
    pa_t.ensure_grad();
    for (int pos = 0; pos < t_len; ++pos) {
      const T* g = o.grad->data() + static_cast<size_t>(pos) * hd;
      T* d = pa_t.grad->data() + static_cast<size_t>(pos) * hd;
      for (int p = 0; p < hd / 2; ++p) {
        const double theta = pos * std::pow(base, -2.0 * p / hd);
        const T c = static_cast<T>(std::cos(theta));
        const T s = static_cast<T>(std::sin(theta));
        d[2 * p] += g[2 * p] * c + g[2 * p + 1] * s;
        d[2 * p + 1] += -g[2 * p] * s + g[2 * p + 1] * c;
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> slice_cols(const TensorT<T>& a, int offset, int length) {
  detail::require_2d(a, "slice_cols");
  const int m = a.dim(0), n = a.dim(1);
  if (offset < 0 || length <= 0 || offset + length > n) {
    throw std::invalid_argument("slice_cols: invalid slice [" + std::to_string(offset) + "," +
                                std::to_string(offset + length) + ") of " + shape_str(a.shape));
  }
  TensorT<T> out = TensorT<T>::zeros({m, length});
  for (int i = 0; i < m; ++i) {
    const T* src = a.ptr() + static_cast<size_t>(i) * n + offset;
    std::copy(src, src + length, out.ptr() + static_cast<size_t>(i) * length);
  }
  detail::attach<T>(out, {a}, [m, n, offset, length](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    if (!pa_t.requires_grad) return;
    pa_t.ensure_grad();
    for (int i = 0; i < m; ++i) {
      const T* g = o.grad->data() + static_cast<size_t>(i) * length;
      T* d = pa_t.grad->data() + static_cast<size_t>(i) * n + offset;
      for (int j = 0; j < length; ++j) d[j] += g[j];
    }
  });
  return out;
}

template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.dim(0) != m) {
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(parts[0].shape) + " vs " +
                                  shape_str(p.shape));
    }
    total += p.dim(1);
  }
  TensorT<T> out = TensorT<T>::zeros({m, total});
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i) {
      std::copy(p.ptr() + static_cast<size_t>(i) * w, p.ptr() + static_cast<size_t>(i) * w + w,
                out.ptr() + static_cast<size_t>(i) * total + off);
    }
    off += w;
  }
  std::vector<int> widths;
  for (const auto& p : parts) widths.push_back(p.dim(1));
  detail::attach<T>(out, parts, [m, total, widths](const TensorT<T>& o) {
    int off2 = 0;
    for (size_t k = 0; k < widths.size(); ++k) {
      auto& p = o.node->parents[k];
      const int w = widths[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (int i = 0; i < m; ++i) {
          const T* g = o.grad->data() + static_cast<size_t>(i) * total + off2;
          T* d = p.grad->data() + static_cast<size_t>(i) * w;
          for (int j = 0; j < w; ++j) d[j] += g[j];
        }
      }
      off2 += w;
    }
  });
  return out;
}

enum class Reduction { Mean, Sum };

// Fused masked cross-entropy over logit rows (log-sum-exp form). Mean
// averages over masked rows only; rows with mask false contribute nothing
// and receive zero gradient.
template <typename T>
TensorT<T> cross_entropy_rows(const TensorT<T>& logits, const std::vector<int>& targets,
                              const std::vector<uint8_t>& mask, Reduction reduction) {
  detail::require_2d(logits, "cross_entropy");
  const int m = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != m || static_cast<int>(mask.size()) != m) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                                std::to_string(mask.size()) + " mask entries for " + shape_str(logits.shape));
  }
  int64_t count = 0;
  for (int i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || targets[i] >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " out of range [0," +
                              std::to_string(v) + ")");
    }
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: empty mask");
  const double w = reduction == Reduction::Mean ? 1.0 / static_cast<double>(count) : 1.0;
  double total = 0;
  for (int i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    const T* row = logits.ptr() + static_cast<size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0;
    for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    total += (mx + std::log(sum) - row[targets[i]]) * w;
  }
  TensorT<T> out = TensorT<T>::scalar(total);
  detail::attach<T>(out, {logits}, [m, v, targets, mask, w](const TensorT<T>& o) {
    auto& pl = o.node->parents[0];
    if (!pl.requires_grad) return;
    pl.ensure_grad();
    const T g = (*o.grad)[0];
    for (int i = 0; i < m; ++i) {
      if (!mask[i]) continue;
      const T* row = pl.ptr() + static_cast<size_t>(i) * v;
      T* d = pl.grad->data() + static_cast<size_t>(i) * v;
      double mx = row[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
      double sum = 0;
      for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
      for (int j = 0; j < v; ++j) {
        const double p = std::exp(row[j] - mx) / sum;
        d[j] += static_cast<T>((p - (j == targets[i] ? 1.0 : 0.0)) * w * g);
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> cross_entropy_rows(const TensorT<T>& logits, const std::vector<int>& targets,
                              Reduction reduction = Reduction::Mean) {
  return cross_entropy_rows(logits, targets, std::vector<uint8_t>(targets.size(), 1), reduction);
}

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
  double total = 0;
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) total += a.ptr()[i];
  TensorT<T> out = TensorT<T>::scalar(total);
  detail::attach<T>(out, {a}, [](const TensorT<T>& o) {
    auto& pa_t = o.node->parents[0];
    if (!pa_t.requires_grad) return;
    pa_t.ensure_grad();
    const T g = (*o.grad)[0];
    for (T& d : *pa_t.grad) d += g;
  });
  return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

// Runs reverse-mode accumulation from a scalar root. The recorded graph is
// single-use: traversing any node a second time without a fresh forward
// throws.
template <typename T>
void backward(TensorT<T>& root) {
  if (root.numel() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " + shape_str(root.shape));
  }
  if (!root.node) {
    if (root.requires_grad) {
      root.ensure_grad();
      (*root.grad)[0] += T(1);
    }
    return;
  }
  // Iterative post-order DFS collecting tensors that carry nodes.
  std::vector<TensorT<T>> topo;
  std::unordered_set<const NodeT<T>*> visited;
  struct Frame {
    TensorT<T> t;
    size_t next_child = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root});
  visited.insert(root.node.get());
  while (!stack.empty()) {
    // Index, not reference: push_back below may reallocate the stack.
    const size_t fi = stack.size() - 1;
    NodeT<T>* node = stack[fi].t.node.get();
    if (node->done) {
      throw std::runtime_error("backward: graph already consumed; run a new forward");
    }
    bool descended = false;
    while (stack[fi].next_child < node->parents.size()) {
      const TensorT<T>& child = node->parents[stack[fi].next_child++];
      if (child.node && !visited.count(child.node.get())) {
        visited.insert(child.node.get());
        stack.push_back({child});
        descended = true;
        break;
      }
    }
    if (!descended) {
      topo.push_back(stack[fi].t);
      stack.pop_back();
    }
  }
  for (auto& t : topo) t.ensure_grad();
  root.ensure_grad();
  (*root.grad)[0] += T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    it->node->backprop(*it);
    it->node->done = true;
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Compares the analytic gradient of a scalar-valued function against central
// finite differences. Returns max over coordinates of
// |analytic - central| / max(1, |central|).
template <typename T>
double grad_check(const std::function<TensorT<T>(const TensorT<T>&)>& f, const TensorT<T>& x, double eps) {
  if (!(eps > 0.0) || eps > 1e-2) {
    throw std::invalid_argument("grad_check: eps must be in (0, 1e-2], got " + std::to_string(eps));
  }
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (!std::isfinite(static_cast<double>(x.ptr()[i]))) {
      throw std::invalid_argument("grad_check: non-finite input");
    }
  }
  TensorT<T> probe = x.clone(/*requires_grad=*/true);
  TensorT<T> loss = f(probe);
  if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw std::runtime_error("grad_check: non-finite f(x)");
  }
  backward(loss);
  std::vector<double> analytic(static_cast<size_t>(x.numel()), 0.0);
  if (probe.grad) {
    for (size_t i = 0; i < analytic.size(); ++i) analytic[i] = static_cast<double>((*probe.grad)[i]);
  }

  double max_err = 0;
  TensorT<T> pert = x.clone(false);
  NoGradGuard no_grad;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T orig = pert.ptr()[i];
    pert.ptr()[i] = orig + static_cast<T>(eps);
    const double fp = static_cast<double>(f(pert).item());
    pert.ptr()[i] = orig - static_cast<T>(eps);
    const double fm = static_cast<double>(f(pert).item());
    pert.ptr()[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("grad_check: non-finite f(x) under perturbation");
    }
    const double central = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[static_cast<size_t>(i)] - central) / std::max(1.0, std::abs(central));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace airlab

#endif  // AIRLAB_TENSOR_HPP_
