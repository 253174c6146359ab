#include "uit/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace uit {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what) {
  if (!all_finite(t)) {
    throw std::runtime_error(what + ": non-finite value in tensor of shape " +
                             shape_to_string(t.shape()));
  }
}

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.cols() != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_to_string(a.shape()) + " and " +
                                shape_to_string(b.shape()));
  }
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  Shape out_shape = a.shape();
  out_shape.back() = n;
  BasicTensor<T> c(std::move(out_shape));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  // i-k-j order keeps the inner loop contiguous in both b and c.
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <typename T>
MatmulGrads<T> matmul_backward(const BasicTensor<T>& a, const BasicTensor<T>& b,
                               const BasicTensor<T>& dc) {
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  if (dc.rows() != m || dc.cols() != n) {
    throw std::invalid_argument("matmul_backward: upstream gradient shape " +
                                shape_to_string(dc.shape()) + " does not match " +
                                shape_to_string(a.shape()) + " x " +
                                shape_to_string(b.shape()));
  }
  MatmulGrads<T> g{BasicTensor<T>(a.shape()), BasicTensor<T>(b.shape())};
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  const T* pd = dc.data().data();
  T* pda = g.da.data().data();
  T* pdb = g.db.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* drow = pd + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = pb + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
      pda[i * k + p] = acc;
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    const T* drow = pd + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      T* dbrow = pdb + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * drow[j];
    }
  }
  return g;
}

template <typename T>
void add_bias_inplace(BasicTensor<T>& x, const BasicTensor<T>& bias) {
  if (bias.size() != x.cols()) {
    throw std::invalid_argument("add_bias: bias " + shape_to_string(bias.shape()) +
                                " does not fit " + shape_to_string(x.shape()));
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

template <typename T>
BasicTensor<T> bias_backward(const BasicTensor<T>& dy) {
  BasicTensor<T> db({dy.cols()});
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    auto row = dy.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
  }
  return db;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto out = y.row(r);
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : in) mx = std::max(mx, v);
    T sum = 0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += out[c];
    }
    const T inv = T(1) / sum;
    for (T& v : out) v *= inv;
  }
  return y;
}

template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& y,
                                     const BasicTensor<T>& dy) {
  require_same_shape(y.shape(), dy.shape(), "softmax_rows_backward");
  BasicTensor<T> dx(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto yr = y.row(r);
    auto gr = dy.row(r);
    auto out = dx.row(r);
    T dot = 0;
    for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
    for (std::size_t c = 0; c < yr.size(); ++c) out[c] = yr[c] * (gr[c] - dot);
  }
  return dx;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta) {
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw std::invalid_argument("layer_norm: affine parameters " +
                                shape_to_string(gamma.shape()) + "/" +
                                shape_to_string(beta.shape()) + " do not fit " +
                                shape_to_string(x.shape()));
  }
  BasicTensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto out = y.row(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean /= T(d);
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var /= T(d);
    const T inv_std = T(1) / std::sqrt(var + T(kLayerNormEps));
    for (std::size_t c = 0; c < d; ++c) {
      out[c] = (in[c] - mean) * inv_std * gamma[c] + beta[c];
    }
  }
  return y;
}

template <typename T>
LayerNormGrads<T> layer_norm_backward(const BasicTensor<T>& x,
                                      const BasicTensor<T>& gamma,
                                      const BasicTensor<T>& dy) {
  require_same_shape(x.shape(), dy.shape(), "layer_norm_backward");
  const std::size_t d = x.cols();
  LayerNormGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>({d}),
                      BasicTensor<T>({d})};
  std::vector<T> xhat(d);
  std::vector<T> dxhat(d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto gr = dy.row(r);
    auto out = g.dx.row(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean /= T(d);
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var /= T(d);
    const T inv_std = T(1) / std::sqrt(var + T(kLayerNormEps));
    T sum_dxhat = 0;
    T sum_dxhat_xhat = 0;
    for (std::size_t c = 0; c < d; ++c) {
      xhat[c] = (in[c] - mean) * inv_std;
      dxhat[c] = gr[c] * gamma[c];
      g.dgamma[c] += gr[c] * xhat[c];
      g.dbeta[c] += gr[c];
      sum_dxhat += dxhat[c];
      sum_dxhat_xhat += dxhat[c] * xhat[c];
    }
    for (std::size_t c = 0; c < d; ++c) {
      out[c] = inv_std / T(d) *
               (T(d) * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat);
    }
  }
  return g;
}

std::string to_string(Activation a) {
  return a == Activation::kReLU ? "relu" : "gelu";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kReLU;
  if (name == "gelu") return Activation::kGeLU;
  throw std::invalid_argument("unknown activation '" + name +
                              "' (expected relu or gelu)");
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  require_same_shape(x.shape(), dy.shape(), "relu_backward");
  BasicTensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
  return dx;
}

namespace {

template <typename T>
T normal_cdf(T x) {
  return T(0.5) * std::erfc(-x / std::numbers::sqrt2_v<T>);
}

template <typename T>
T normal_pdf(T x) {
  return std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> /
         std::numbers::sqrt2_v<T>;
}

}  // namespace

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * normal_cdf(x[i]);
  return y;
}

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  require_same_shape(x.shape(), dy.shape(), "gelu_backward");
  BasicTensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx[i] = dy[i] * (normal_cdf(x[i]) + x[i] * normal_pdf(x[i]));
  }
  return dx;
}

template <typename T>
BasicTensor<T> activate(Activation a, const BasicTensor<T>& x) {
  return a == Activation::kReLU ? relu(x) : gelu(x);
}

template <typename T>
BasicTensor<T> activate_backward(Activation a, const BasicTensor<T>& x,
                                 const BasicTensor<T>& dy) {
  return a == Activation::kReLU ? relu_backward(x, dy) : gelu_backward(x, dy);
}

template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

namespace {

template <typename T>
void check_bce_inputs(const BasicTensor<T>& logits, const BasicTensor<T>& targets) {
  require_same_shape(logits.shape(), targets.shape(), "bce_with_logits");
  if (logits.empty()) throw std::invalid_argument("bce_with_logits: empty input");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!(targets[i] >= T(0) && targets[i] <= T(1))) {
      throw std::invalid_argument("bce_with_logits: target " +
                                  std::to_string(targets[i]) + " at index " +
                                  std::to_string(i) + " outside [0,1]");
    }
  }
}

}  // namespace

template <typename T>
T bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& targets) {
  check_bce_inputs(logits, targets);
  T total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const T z = logits[i];
    total += std::max(z, T(0)) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return total / T(logits.size());
}

template <typename T>
BasicTensor<T> bce_with_logits_backward(const BasicTensor<T>& logits,
                                        const BasicTensor<T>& targets) {
  check_bce_inputs(logits, targets);
  BasicTensor<T> dz(logits.shape());
  const T scale = T(1) / T(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    dz[i] = (sigmoid(logits[i]) - targets[i]) * scale;
  }
  return dz;
}

#define UIT_INSTANTIATE_TENSOR_OPS(T)                                          \
  template bool all_finite(const BasicTensor<T>&);                             \
  template void require_finite(const BasicTensor<T>&, const std::string&);     \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&); \
  template MatmulGrads<T> matmul_backward(                                     \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template void add_bias_inplace(BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> bias_backward(const BasicTensor<T>&);                \
  template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                 \
  template BasicTensor<T> softmax_rows_backward(const BasicTensor<T>&,         \
                                                const BasicTensor<T>&);        \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&,                    \
                                     const BasicTensor<T>&,                    \
                                     const BasicTensor<T>&);                   \
  template LayerNormGrads<T> layer_norm_backward(                              \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> relu(const BasicTensor<T>&);                         \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&);                \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                         \
  template BasicTensor<T> gelu_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&);                \
  template BasicTensor<T> activate(Activation, const BasicTensor<T>&);         \
  template BasicTensor<T> activate_backward(Activation, const BasicTensor<T>&, \
                                            const BasicTensor<T>&);            \
  template T bce_with_logits(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> bce_with_logits_backward(const BasicTensor<T>&,      \
                                                   const BasicTensor<T>&);     \
  template T sigmoid(T);

UIT_INSTANTIATE_TENSOR_OPS(float)
UIT_INSTANTIATE_TENSOR_OPS(double)

#undef UIT_INSTANTIATE_TENSOR_OPS

}  // namespace uit
