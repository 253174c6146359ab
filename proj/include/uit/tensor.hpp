// Dense row-major tensors and the handful of kernels the UiT model needs.
//
// Every differentiable kernel comes as a forward function plus a matching
// `*_backward` that takes the upstream gradient and returns input gradients.
// Kernels are templates over the scalar type; `float` is the inference type
// and `double` is used for finite-difference gradient checks.

#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace uit {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw std::invalid_argument("tensor: shape " + shape_to_string(shape_) +
                                  " does not match " +
                                  std::to_string(data_.size()) + " values");
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  // Matrix view: last axis is columns, everything before it folds into rows.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const {
    const std::size_t c = cols();
    return c == 0 ? 0 : data_.size() / c;
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// A value and its accumulated gradient.
template <typename T>
struct DualTensor {
  BasicTensor<T> value;
  BasicTensor<T> grad;

  DualTensor() = default;
  explicit DualTensor(BasicTensor<T> v)
      : value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(T(0)); }
};

// Throws if any value is NaN or infinite; `what` names the tensor.
template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what);

template <typename T>
bool all_finite(const BasicTensor<T>& t);

// ---- matmul ----------------------------------------------------------------

// c[m,n] = a[m,k] * b[k,n]. Leading axes of `a` fold into m.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
struct MatmulGrads {
  BasicTensor<T> da;
  BasicTensor<T> db;
};

// dA = dC * B^T, dB = A^T * dC.
template <typename T>
MatmulGrads<T> matmul_backward(const BasicTensor<T>& a, const BasicTensor<T>& b,
                               const BasicTensor<T>& dc);

// x[r, :] += bias for every row.
template <typename T>
void add_bias_inplace(BasicTensor<T>& x, const BasicTensor<T>& bias);

// Column sums of dy; the gradient of a broadcast bias.
template <typename T>
BasicTensor<T> bias_backward(const BasicTensor<T>& dy);

// ---- softmax ---------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);

// Takes the softmax output y, not its input.
template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& y,
                                     const BasicTensor<T>& dy);

// ---- layer norm ------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta);

template <typename T>
struct LayerNormGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dgamma;
  BasicTensor<T> dbeta;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const BasicTensor<T>& x,
                                      const BasicTensor<T>& gamma,
                                      const BasicTensor<T>& dy);

// ---- activations -----------------------------------------------------------

enum class Activation { kReLU, kGeLU };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy);

// Exact form x * Phi(x), Phi the standard normal CDF.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy);

template <typename T>
BasicTensor<T> activate(Activation a, const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> activate_backward(Activation a, const BasicTensor<T>& x,
                                 const BasicTensor<T>& dy);

// ---- loss ------------------------------------------------------------------

// Mean binary cross entropy over all entries, stable logits form.
template <typename T>
T bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& targets);

// Gradient of the mean loss: (sigmoid(z) - y) / numel.
template <typename T>
BasicTensor<T> bce_with_logits_backward(const BasicTensor<T>& logits,
                                        const BasicTensor<T>& targets);

template <typename T>
T sigmoid(T z);

}  // namespace uit
