// SPDX-License-Identifier: Apache-2.0
#include "mvp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mvp::core {

std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename T>
Tensor2D<T>::Tensor2D(std::size_t rows, std::size_t cols, std::vector<T> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    fail(ErrorCode::shape_mismatch, "tensor of shape " + shape_string(rows_, cols_) +
                                        " given " + std::to_string(values_.size()) +
                                        " values");
  }
}

template <typename T>
Tensor2D<T> Tensor2D<T>::from_rows(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<T> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorCode::shape_mismatch, "ragged rows in from_rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor2D(r, c, std::move(values));
}

template <typename T>
void Tensor2D<T>::fill(T v) {
  std::fill(values_.begin(), values_.end(), v);
}

template <typename T>
std::size_t Tensor2D<T>::first_non_finite() const noexcept {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) return i;
  }
  return values_.size();
}

namespace {

constexpr double kGeluC = 0.7978845608;  // sqrt(2/pi), truncated as documented
constexpr double kGeluA = 0.044715;

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::shape_mismatch, what);
}

}  // namespace

template <typename T>
T gelu_value(T x) noexcept {
  const T c = static_cast<T>(kGeluC);
  const T a = static_cast<T>(kGeluA);
  const T inner = c * (x + a * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_derivative(T x) noexcept {
  const T c = static_cast<T>(kGeluC);
  const T a = static_cast<T>(kGeluA);
  const T inner = c * (x + a * x * x * x);
  const T th = std::tanh(inner);
  const T sech2 = T(1) - th * th;
  return T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * c * (T(1) + T(3) * a * x * x);
}

template float gelu_value<float>(float) noexcept;
template double gelu_value<double>(double) noexcept;
template float gelu_derivative<float>(float) noexcept;
template double gelu_derivative<double>(double) noexcept;

// ---------------------------------------------------------------------------
// Graph

template <typename T>
typename Graph<T>::Var Graph<T>::push(Tensor2D<T> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
typename Graph<T>::Var Graph<T>::input(Tensor2D<T> value) {
  return push(std::move(value));
}

template <typename T>
typename Graph<T>::Var Graph<T>::input_ref(const Tensor2D<T>& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
typename Graph<T>::Var Graph<T>::param(const Parameter<T>& p) {
  Var v = input_ref(p.value);
  params_.emplace_back(&p, v.index);
  return v;
}

template <typename T>
const Tensor2D<T>& Graph<T>::value(Var v) const {
  return node(v).value();
}

template <typename T>
const Tensor2D<T>& Graph<T>::grad(Var v) const {
  if (!backward_done_) fail(ErrorCode::invalid_argument, "grad() requested before backward()");
  return node(v).grad;
}

template <typename T>
T Graph<T>::scalar(Var v) const {
  const auto& t = value(v);
  if (t.size() != 1) fail(ErrorCode::shape_mismatch, "scalar() on " + shape_string(t.rows(), t.cols()));
  return t[0];
}

template <typename T>
Tensor2D<T>& Graph<T>::grad_mut(Var v) {
  return nodes_[v.index].grad;
}

template <typename T>
typename Graph<T>::Var Graph<T>::affine(Var x, Var w, Var b) {
  const auto& X = value(x);
  const auto& W = value(w);
  const auto& B = value(b);
  require(X.cols() == W.rows(), "affine: input " + shape_string(X.rows(), X.cols()) +
                                    " does not match weight " + shape_string(W.rows(), W.cols()));
  require(B.rows() == 1 && B.cols() == W.cols(),
          "affine: bias " + shape_string(B.rows(), B.cols()) + " does not match output width " +
              std::to_string(W.cols()));
  const std::size_t n = X.rows(), k = X.cols(), m = W.cols();
  Tensor2D<T> out(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    T* o = out.data() + r * m;
    std::copy(B.data(), B.data() + m, o);
    const T* xr = X.data() + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const T xi = xr[i];
      if (xi == T(0)) continue;
      const T* wr = W.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += xi * wr[j];
    }
  }
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, x, w, b, y, n, k, m] {
      const auto& G = node(y).grad;
      const auto& X = value(x);
      const auto& W = value(w);
      auto& gx = grad_mut(x);
      auto& gw = grad_mut(w);
      auto& gb = grad_mut(b);
      for (std::size_t r = 0; r < n; ++r) {
        const T* g = G.data() + r * m;
        const T* xr = X.data() + r * k;
        T* gxr = gx.data() + r * k;
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[j];
        for (std::size_t i = 0; i < k; ++i) {
          const T* wr = W.data() + i * m;
          T* gwr = gw.data() + i * m;
          const T xi = xr[i];
          T acc = 0;
          for (std::size_t j = 0; j < m; ++j) {
            acc += g[j] * wr[j];
            gwr[j] += xi * g[j];
          }
          gxr[i] += acc;
        }
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::gelu(Var x) {
  const auto& X = value(x);
  Tensor2D<T> out(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = gelu_value(X[i]);
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, x, y] {
      const auto& G = node(y).grad;
      const auto& X = value(x);
      auto& gx = grad_mut(x);
      for (std::size_t i = 0; i < X.size(); ++i) gx[i] += G[i] * gelu_derivative(X[i]);
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::slice_cols(Var x, std::size_t begin, std::size_t end) {
  const auto& X = value(x);
  require(begin <= end && end <= X.cols(), "slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  Tensor2D<T> out(X.rows(), w);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    std::copy_n(X.data() + r * X.cols() + begin, w, out.data() + r * w);
  }
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, x, y, begin, w] {
      const auto& G = node(y).grad;
      auto& gx = grad_mut(x);
      const std::size_t cols = gx.cols();
      for (std::size_t r = 0; r < G.rows(); ++r) {
        for (std::size_t j = 0; j < w; ++j) gx[r * cols + begin + j] += G[r * w + j];
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::pair_concat(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  const std::size_t M = A.rows(), K = B.rows(), da = A.cols(), db = B.cols();
  Tensor2D<T> out(M * K, da + db);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      T* o = out.data() + (i * K + j) * (da + db);
      std::copy_n(A.data() + i * da, da, o);
      std::copy_n(B.data() + j * db, db, o + da);
    }
  }
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, a, b, y, M, K, da, db] {
      const auto& G = node(y).grad;
      auto& ga = grad_mut(a);
      auto& gb = grad_mut(b);
      for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
          const T* g = G.data() + (i * K + j) * (da + db);
          T* gar = ga.data() + i * da;
          T* gbr = gb.data() + j * db;
          for (std::size_t c = 0; c < da; ++c) gar[c] += g[c];
          for (std::size_t c = 0; c < db; ++c) gbr[c] += g[da + c];
        }
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::repeat_rows(Var a, std::size_t repeats) {
  const auto& A = value(a);
  const std::size_t M = A.rows(), d = A.cols();
  Tensor2D<T> out(M * repeats, d);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < repeats; ++j) {
      std::copy_n(A.data() + i * d, d, out.data() + (i * repeats + j) * d);
    }
  }
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, a, y, M, d, repeats] {
      const auto& G = node(y).grad;
      auto& ga = grad_mut(a);
      for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < repeats; ++j) {
          const T* g = G.data() + (i * repeats + j) * d;
          for (std::size_t c = 0; c < d; ++c) ga[i * d + c] += g[c];
        }
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::normalize_rows(Var x) {
  const auto& X = value(x);
  const std::size_t n = X.rows(), d = X.cols();
  Tensor2D<T> out(n, d);
  std::vector<T> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    T ss = 0;
    for (std::size_t c = 0; c < d; ++c) ss += X(r, c) * X(r, c);
    const T norm = std::sqrt(ss);
    if (!(norm > T(0)) || !std::isfinite(norm)) {
      fail(ErrorCode::non_finite, "normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    norms[r] = norm;
    for (std::size_t c = 0; c < d; ++c) out(r, c) = X(r, c) / norm;
  }
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, x, y, n, d, norms = std::move(norms)] {
      const auto& G = node(y).grad;
      const auto& Y = value(y);
      auto& gx = grad_mut(x);
      for (std::size_t r = 0; r < n; ++r) {
        T dot = 0;
        for (std::size_t c = 0; c < d; ++c) dot += Y(r, c) * G(r, c);
        for (std::size_t c = 0; c < d; ++c) gx(r, c) += (G(r, c) - Y(r, c) * dot) / norms[r];
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::matmul_nt(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require(A.cols() == B.cols(), "matmul_nt: inner dims " + std::to_string(A.cols()) + " vs " +
                                    std::to_string(B.cols()));
  const std::size_t n = A.rows(), m = B.rows(), k = A.cols();
  Tensor2D<T> out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const T* ar = A.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const T* br = B.data() + j * k;
      T acc = 0;
      for (std::size_t c = 0; c < k; ++c) acc += ar[c] * br[c];
      out(i, j) = acc;
    }
  }
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, a, b, y, n, m, k] {
      const auto& G = node(y).grad;
      const auto& A = value(a);
      const auto& B = value(b);
      auto& ga = grad_mut(a);
      auto& gb = grad_mut(b);
      for (std::size_t i = 0; i < n; ++i) {
        const T* ar = A.data() + i * k;
        T* gar = ga.data() + i * k;
        for (std::size_t j = 0; j < m; ++j) {
          const T g = G(i, j);
          if (g == T(0)) continue;
          const T* br = B.data() + j * k;
          T* gbr = gb.data() + j * k;
          for (std::size_t c = 0; c < k; ++c) {
            gar[c] += g * br[c];
            gbr[c] += g * ar[c];
          }
        }
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::scale(Var x, T factor) {
  const auto& X = value(x);
  Tensor2D<T> out(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * factor;
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, x, y, factor] {
      const auto& G = node(y).grad;
      auto& gx = grad_mut(x);
      for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i] * factor;
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::reshape(Var x, std::size_t rows, std::size_t cols) {
  const auto& X = value(x);
  require(rows * cols == X.size(), "reshape: " + shape_string(X.rows(), X.cols()) + " to " +
                                       shape_string(rows, cols));
  std::vector<T> v(X.values().begin(), X.values().end());
  Var y = push(Tensor2D<T>(rows, cols, std::move(v)));
  if (requires_grad_) {
    node(y).backward = [this, x, y] {
      const auto& G = node(y).grad;
      auto& gx = grad_mut(x);
      for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i];
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require(A.same_shape(B), "add: shapes " + shape_string(A.rows(), A.cols()) + " and " +
                               shape_string(B.rows(), B.cols()));
  Tensor2D<T> out(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, a, b, y] {
      const auto& G = node(y).grad;
      auto& ga = grad_mut(a);
      auto& gb = grad_mut(b);
      for (std::size_t i = 0; i < G.size(); ++i) {
        ga[i] += G[i];
        gb[i] += G[i];
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::combine(Var a, T ca, Var b, T cb) {
  const T va = scalar(a);
  const T vb = scalar(b);
  Var y = push(Tensor2D<T>::scalar(ca * va + cb * vb));
  if (requires_grad_) {
    node(y).backward = [this, a, b, y, ca, cb] {
      const T g = node(y).grad[0];
      grad_mut(a)[0] += ca * g;
      grad_mut(b)[0] += cb * g;
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::sum(Var x) {
  const auto& X = value(x);
  T acc = 0;
  for (std::size_t i = 0; i < X.size(); ++i) acc += X[i];
  Var y = push(Tensor2D<T>::scalar(acc));
  if (requires_grad_) {
    node(y).backward = [this, x, y] {
      const T g = node(y).grad[0];
      auto& gx = grad_mut(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::reparameterize(Var mu, Var logvar, const Tensor2D<T>& eps,
                                                T variance_scale) {
  const auto& MU = value(mu);
  const auto& LV = value(logvar);
  require(MU.same_shape(LV) && MU.same_shape(eps),
          "reparameterize: mu " + shape_string(MU.rows(), MU.cols()) + ", logvar " +
              shape_string(LV.rows(), LV.cols()) + ", eps " + shape_string(eps.rows(), eps.cols()));
  Tensor2D<T> out(MU.rows(), MU.cols());
  for (std::size_t i = 0; i < MU.size(); ++i) {
    out[i] = MU[i] + variance_scale * std::exp(T(0.5) * LV[i]) * eps[i];
  }
  Var y = push(std::move(out));
  if (requires_grad_) {
    node(y).backward = [this, mu, logvar, y, eps, variance_scale] {
      const auto& G = node(y).grad;
      const auto& LV = value(logvar);
      auto& gmu = grad_mut(mu);
      auto& glv = grad_mut(logvar);
      for (std::size_t i = 0; i < G.size(); ++i) {
        gmu[i] += G[i];
        glv[i] += G[i] * variance_scale * T(0.5) * std::exp(T(0.5) * LV[i]) * eps[i];
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::softmax_cross_entropy(Var logits,
                                                       std::span<const std::size_t> labels,
                                                       Reduction reduction) {
  const auto& L = value(logits);
  const std::size_t n = L.rows(), k = L.cols();
  require(labels.size() == n, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(n) + " rows");
  Tensor2D<T> probs(n, k);
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= k) {
      fail(ErrorCode::out_of_range, "label " + std::to_string(labels[r]) + " out of range for " +
                                        std::to_string(k) + " classes");
    }
    const T* row = L.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    const T log_z = std::log(z) + mx;
    for (std::size_t c = 0; c < k; ++c) probs(r, c) = std::exp(row[c] - log_z);
    total += log_z - row[labels[r]];
  }
  const T denom = reduction == Reduction::mean && n > 0 ? static_cast<T>(n) : T(1);
  Var y = push(Tensor2D<T>::scalar(total / denom));
  if (requires_grad_) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    node(y).backward = [this, logits, y, probs = std::move(probs), lab = std::move(lab), denom, n,
                        k] {
      const T g = node(y).grad[0] / denom;
      auto& gl = grad_mut(logits);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
          const T onehot = c == lab[r] ? T(1) : T(0);
          gl(r, c) += g * (probs(r, c) - onehot);
        }
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::squared_error(Var target, Var pred) {
  const auto& A = value(target);
  const auto& B = value(pred);
  require(A.same_shape(B), "squared_error: shapes " + shape_string(A.rows(), A.cols()) + " and " +
                               shape_string(B.rows(), B.cols()));
  T acc = 0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    const T d = A[i] - B[i];
    acc += d * d;
  }
  Var y = push(Tensor2D<T>::scalar(acc));
  if (requires_grad_) {
    node(y).backward = [this, target, pred, y] {
      const T g = node(y).grad[0];
      const auto& A = value(target);
      const auto& B = value(pred);
      auto& ga = grad_mut(target);
      auto& gb = grad_mut(pred);
      for (std::size_t i = 0; i < A.size(); ++i) {
        const T d = T(2) * (A[i] - B[i]) * g;
        ga[i] += d;
        gb[i] -= d;
      }
    };
  }
  return y;
}

template <typename T>
typename Graph<T>::Var Graph<T>::gaussian_kl(Var mu, Var logvar) {
  const auto& MU = value(mu);
  const auto& LV = value(logvar);
  require(MU.same_shape(LV), "gaussian_kl: mu/logvar shape mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < MU.size(); ++i) {
    acc += T(1) + LV[i] - MU[i] * MU[i] - std::exp(LV[i]);
  }
  Var y = push(Tensor2D<T>::scalar(T(-0.5) * acc));
  if (requires_grad_) {
    node(y).backward = [this, mu, logvar, y] {
      const T g = node(y).grad[0];
      const auto& MU = value(mu);
      const auto& LV = value(logvar);
      auto& gmu = grad_mut(mu);
      auto& glv = grad_mut(logvar);
      for (std::size_t i = 0; i < MU.size(); ++i) {
        gmu[i] += g * MU[i];
        glv[i] += g * T(-0.5) * (T(1) - std::exp(LV[i]));
      }
    };
  }
  return y;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (!requires_grad_) fail(ErrorCode::invalid_argument, "backward() on a graph without gradients");
  if (value(loss).size() != 1) fail(ErrorCode::shape_mismatch, "backward() requires a 1x1 loss");
  for (auto& n : nodes_) {
    const auto& v = n.value();
    n.grad = Tensor2D<T>(v.rows(), v.cols());
  }
  nodes_[loss.index].grad[0] = T(1);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward();
  }
  backward_done_ = true;
}

template <typename T>
void Graph<T>::accumulate_into(std::span<Parameter<T>* const> params) const {
  if (!backward_done_) fail(ErrorCode::invalid_argument, "accumulate_into() before backward()");
  for (Parameter<T>* p : params) {
    for (const auto& [bound, index] : params_) {
      if (bound != p) continue;
      const auto& g = nodes_[index].grad;
      for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
  }
}

template class Tensor2D<float>;
template class Tensor2D<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace mvp::core
