// Copyright 2026 The t5tts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

namespace t5tts::ad {

/// Storage starts on a SIMD boundary so vectorized kernels round the same way
/// regardless of where the allocator placed the buffer.
template <typename Scalar>
using AlignedVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

using Shape = std::vector<std::int64_t>;

/// Raised when operand shapes do not satisfy an op's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major tensor. Every dimension is >= 1.
template <typename Scalar>
class BasicTensor {
 public:
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0));
  BasicTensor(Shape shape, const std::vector<Scalar>& data);
  BasicTensor(Shape shape, AlignedVector<Scalar> data);

  static BasicTensor scalar(Scalar v) { return BasicTensor({1}, std::vector<Scalar>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  /// Negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  AlignedVector<Scalar>& storage() { return data_; }
  const AlignedVector<Scalar>& storage() const { return data_; }

  Scalar& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// View as a (numel / last_dim) x last_dim matrix.
  MatrixMap matrix() {
    return MatrixMap(data_.data(), numel() / shape_.back(), shape_.back());
  }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(data_.data(), numel() / shape_.back(), shape_.back());
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }
  BasicTensor reshaped(Shape s) const;

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, AlignedVector<Other>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  AlignedVector<Scalar> data_;
};

template <typename Scalar>
struct Node {
  BasicTensor<Scalar> value;
  BasicTensor<Scalar> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }
  BasicTensor<Scalar>& grad_buffer() {
    if (grad.empty()) grad = BasicTensor<Scalar>(value.shape(), Scalar(0));
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
template <typename Scalar>
class BasicVar {
 public:
  using scalar_type = Scalar;
  using TensorType = BasicTensor<Scalar>;

  BasicVar() = default;
  explicit BasicVar(std::shared_ptr<Node<Scalar>> n) : node_(std::move(n)) {}

  const TensorType& value() const { return node_->value; }
  TensorType& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Accumulated gradient; empty if backward never reached this node.
  const TensorType& grad() const { return node_->grad; }
  void zero_grad() {
    if (node_) node_->grad = TensorType();
  }
  Scalar item() const;

  const std::shared_ptr<Node<Scalar>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;
using Var = BasicVar<float>;
using VarD = BasicVar<double>;

template <typename Scalar>
BasicVar<Scalar> leaf(BasicTensor<Scalar> t, bool requires_grad = true);
template <typename Scalar>
BasicVar<Scalar> constant(BasicTensor<Scalar> t) {
  return leaf(std::move(t), false);
}

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Primitives. Broadcasting in add/sub/mul: rhs shape must equal lhs shape or
// be a suffix of it.
template <typename S> BasicVar<S> matmul(const BasicVar<S>& a, const BasicVar<S>& b);
template <typename S> BasicVar<S> add(const BasicVar<S>& a, const BasicVar<S>& b);
template <typename S> BasicVar<S> sub(const BasicVar<S>& a, const BasicVar<S>& b);
template <typename S> BasicVar<S> mul(const BasicVar<S>& a, const BasicVar<S>& b);
template <typename S> BasicVar<S> scale(const BasicVar<S>& a, std::type_identity_t<S> c);
template <typename S> BasicVar<S> exp(const BasicVar<S>& a);
template <typename S> BasicVar<S> log(const BasicVar<S>& a);
template <typename S> BasicVar<S> softmax_lastdim(const BasicVar<S>& a);
template <typename S> BasicVar<S> logsumexp_lastdim(const BasicVar<S>& a);
template <typename S>
BasicVar<S> layer_norm_lastdim(const BasicVar<S>& x, const BasicVar<S>& gain,
                               const BasicVar<S>& bias,
                               std::type_identity_t<S> eps = S(1e-5));
/// Gathers rows of a [V, d] table; output shape is index_shape + [d].
template <typename S>
BasicVar<S> embedding_gather(const BasicVar<S>& table, std::span<const std::int32_t> ids,
                             Shape index_shape);
template <typename S>
BasicVar<S> slice(const BasicVar<S>& a, int axis, std::int64_t start, std::int64_t length);
template <typename S> BasicVar<S> concat(const std::vector<BasicVar<S>>& parts, int axis);
template <typename S> BasicVar<S> transpose_last_two(const BasicVar<S>& a);
/// Entries where mask != 0 are replaced by value; mask has the shape of a.
template <typename S>
BasicVar<S> masked_fill(const BasicVar<S>& a, const std::vector<std::uint8_t>& mask,
                        std::type_identity_t<S> value);
template <typename S> BasicVar<S> reduce_sum(const BasicVar<S>& a);
template <typename S> BasicVar<S> reduce_mean(const BasicVar<S>& a);
template <typename S> BasicVar<S> relu(const BasicVar<S>& a);
/// tanh approximation.
template <typename S> BasicVar<S> gelu(const BasicVar<S>& a);
template <typename S> BasicVar<S> reshape(const BasicVar<S>& a, Shape s);
/// Inverted dropout; identity when p == 0.
template <typename S> BasicVar<S> dropout(const BasicVar<S>& a, float p, std::mt19937_64& rng);
/// Mean over rows with target >= 0 of -log softmax(logits)[target].
/// logits: [..., V]; one target per logits row, -1 = ignored.
template <typename S>
BasicVar<S> softmax_cross_entropy(const BasicVar<S>& logits, std::span<const std::int32_t> targets);

/// Registers a custom op. backward receives the output node and must
/// accumulate into the gradient buffers of inputs that require grad.
template <typename S>
BasicVar<S> make_op(const char* name, BasicTensor<S> value, std::vector<BasicVar<S>> inputs,
                    std::function<void(Node<S>&)> backward);

/// Reverse sweep from a scalar. Leaf gradients accumulate across calls.
template <typename S> void backward(const BasicVar<S>& loss);

}  // namespace t5tts::ad
