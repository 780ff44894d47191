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

#include "t5tts/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace t5tts::ad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

std::int64_t prod(const Shape& s, std::size_t begin, std::size_t end) {
  std::int64_t p = 1;
  for (std::size_t i = begin; i < end; ++i) p *= s[i];
  return p;
}

int norm_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  return a;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void check_dims(const Shape& s) {
  for (auto d : s) {
    if (d < 1) throw DimensionError("tensor: non-positive dimension in " + shape_str(s));
  }
}

template <typename S>
using Map = Eigen::Map<RowMatrix<S>>;
template <typename S>
using CMap = Eigen::Map<const RowMatrix<S>>;

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) { return prod(s, 0, s.size()); }

// ---------------------------------------------------------------------------
// Tensor

template <typename S>
BasicTensor<S>::BasicTensor(Shape shape, S fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

template <typename S>
BasicTensor<S>::BasicTensor(Shape shape, const std::vector<S>& data)
    : BasicTensor(std::move(shape), AlignedVector<S>(data.begin(), data.end())) {}

template <typename S>
BasicTensor<S>::BasicTensor(Shape shape, AlignedVector<S> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw DimensionError("tensor: shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

template <typename S>
std::int64_t BasicTensor<S>::dim(int axis) const {
  return shape_[static_cast<std::size_t>(norm_axis(axis, rank(), "dim"))];
}

template <typename S>
BasicTensor<S> BasicTensor<S>::reshaped(Shape s) const {
  if (shape_numel(s) != numel()) shape_error("reshape", shape_, s);
  return BasicTensor(std::move(s), data_);
}

// ---------------------------------------------------------------------------
// Graph bookkeeping

template <typename S>
S BasicVar<S>::item() const {
  if (value().numel() != 1) {
    throw DimensionError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return value()[0];
}

template <typename S>
BasicVar<S> leaf(BasicTensor<S> t, bool requires_grad) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(t);
  n->requires_grad = requires_grad;
  n->id = g_next_id++;
  return BasicVar<S>(std::move(n));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename S>
BasicVar<S> make_op(const char* name, BasicTensor<S> value, std::vector<BasicVar<S>> inputs,
                    std::function<void(Node<S>&)> backward) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->op = name;
  n->id = g_next_id++;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const BasicVar<S>& v) { return v.requires_grad(); });
  if (any && g_grad_enabled) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& v : inputs) n->inputs.push_back(v.node());
    n->backward_fn = std::move(backward);
  }
  return BasicVar<S>(std::move(n));
}

template <typename S>
void backward(const BasicVar<S>& loss) {
  if (loss.value().numel() != 1) {
    throw std::logic_error("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node<S>*> order;
  std::vector<Node<S>*> stack{loss.node().get()};
  std::unordered_set<Node<S>*> seen;
  while (!stack.empty()) {
    Node<S>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in.get());
    }
  }
  // Creation order is a topological order.
  std::sort(order.begin(), order.end(), [](Node<S>* a, Node<S>* b) { return a->id > b->id; });
  for (Node<S>* n : order) {
    if (!n->is_leaf()) n->grad = BasicTensor<S>();
  }
  loss.node()->grad_buffer()[0] += S(1);
  for (Node<S>* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Primitives

template <typename S>
BasicVar<S> matmul(const BasicVar<S>& a, const BasicVar<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) shape_error("matmul", sa, sb);
  const auto n = sa[sa.size() - 2];
  const auto k = sa.back();
  const auto p = sb.back();
  if (sb[sb.size() - 2] != k) shape_error("matmul", sa, sb);
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(p);
  BasicTensor<S> out(out_shape);

  if (sb.size() == 2) {
    const auto rows = a.value().numel() / k;
    Map<S>(out.data(), rows, p).noalias() =
        CMap<S>(a.value().data(), rows, k) * CMap<S>(b.value().data(), k, p);
    return make_op<S>("matmul", std::move(out), {a, b}, [rows, k, p](Node<S>& self) {
      auto& an = *self.inputs[0];
      auto& bn = *self.inputs[1];
      CMap<S> g(self.grad.data(), rows, p);
      if (an.requires_grad) {
        Map<S>(an.grad_buffer().data(), rows, k).noalias() +=
            g * CMap<S>(bn.value.data(), k, p).transpose();
      }
      if (bn.requires_grad) {
        Map<S>(bn.grad_buffer().data(), k, p).noalias() +=
            CMap<S>(an.value.data(), rows, k).transpose() * g;
      }
    });
  }

  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
    shape_error("matmul", sa, sb);
  }
  const auto batch = prod(sa, 0, sa.size() - 2);
  for (std::int64_t i = 0; i < batch; ++i) {
    Map<S>(out.data() + i * n * p, n, p).noalias() =
        CMap<S>(a.value().data() + i * n * k, n, k) * CMap<S>(b.value().data() + i * k * p, k, p);
  }
  return make_op<S>("matmul", std::move(out), {a, b}, [batch, n, k, p](Node<S>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    for (std::int64_t i = 0; i < batch; ++i) {
      CMap<S> g(self.grad.data() + i * n * p, n, p);
      if (an.requires_grad) {
        Map<S>(an.grad_buffer().data() + i * n * k, n, k).noalias() +=
            g * CMap<S>(bn.value.data() + i * k * p, k, p).transpose();
      }
      if (bn.requires_grad) {
        Map<S>(bn.grad_buffer().data() + i * k * p, k, p).noalias() +=
            CMap<S>(an.value.data() + i * n * k, n, k).transpose() * g;
      }
    }
  });
}

namespace {

template <typename S, typename Fwd, typename BwdA, typename BwdB>
BasicVar<S> broadcast_binary(const char* name, const BasicVar<S>& a, const BasicVar<S>& b, Fwd fwd,
                             BwdA da, BwdB db) {
  if (!is_suffix(a.shape(), b.shape())) shape_error(name, a.shape(), b.shape());
  const auto inner = b.value().numel();
  const auto outer = a.value().numel() / inner;
  BasicTensor<S> out(a.shape());
  const S* x = a.value().data();
  const S* y = b.value().data();
  S* o = out.data();
  for (std::int64_t i = 0; i < outer; ++i) {
    for (std::int64_t j = 0; j < inner; ++j) o[i * inner + j] = fwd(x[i * inner + j], y[j]);
  }
  return make_op<S>(name, std::move(out), {a, b}, [outer, inner, da, db](Node<S>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    const S* g = self.grad.data();
    const S* x = an.value.data();
    const S* y = bn.value.data();
    if (an.requires_grad) {
      S* ga = an.grad_buffer().data();
      for (std::int64_t i = 0; i < outer; ++i) {
        for (std::int64_t j = 0; j < inner; ++j) {
          ga[i * inner + j] += g[i * inner + j] * da(x[i * inner + j], y[j]);
        }
      }
    }
    if (bn.requires_grad) {
      S* gb = bn.grad_buffer().data();
      for (std::int64_t i = 0; i < outer; ++i) {
        for (std::int64_t j = 0; j < inner; ++j) {
          gb[j] += g[i * inner + j] * db(x[i * inner + j], y[j]);
        }
      }
    }
  });
}

template <typename S, typename Fwd, typename Deriv>
BasicVar<S> unary(const char* name, const BasicVar<S>& a, Fwd fwd, Deriv deriv) {
  BasicTensor<S> out(a.shape());
  const S* x = a.value().data();
  S* o = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) o[i] = fwd(x[i]);
  return make_op<S>(name, std::move(out), {a}, [deriv](Node<S>& self) {
    auto& an = *self.inputs[0];
    S* ga = an.grad_buffer().data();
    const S* g = self.grad.data();
    const S* x = an.value.data();
    const S* y = self.value.data();
    for (std::int64_t i = 0; i < self.value.numel(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

template <typename S>
BasicVar<S> add(const BasicVar<S>& a, const BasicVar<S>& b) {
  return broadcast_binary(
      "add", a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <typename S>
BasicVar<S> sub(const BasicVar<S>& a, const BasicVar<S>& b) {
  return broadcast_binary(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <typename S>
BasicVar<S> mul(const BasicVar<S>& a, const BasicVar<S>& b) {
  return broadcast_binary(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

template <typename S>
BasicVar<S> scale(const BasicVar<S>& a, std::type_identity_t<S> c) {
  return unary(
      "scale", a, [c](S x) { return c * x; }, [c](S, S) { return c; });
}

template <typename S>
BasicVar<S> exp(const BasicVar<S>& a) {
  return unary(
      "exp", a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
BasicVar<S> log(const BasicVar<S>& a) {
  return unary(
      "log", a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
BasicVar<S> relu(const BasicVar<S>& a) {
  return unary(
      "relu", a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
BasicVar<S> gelu(const BasicVar<S>& a) {
  constexpr S c = S(0.7978845608028654);  // sqrt(2 / pi)
  constexpr S k = S(0.044715);
  return unary(
      "gelu", a, [](S x) { return S(0.5) * x * (S(1) + std::tanh(c * (x + k * x * x * x))); },
      [](S x, S) {
        const S t = std::tanh(c * (x + k * x * x * x));
        return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * c * (S(1) + S(3) * k * x * x);
      });
}

template <typename S>
BasicVar<S> softmax_lastdim(const BasicVar<S>& a) {
  BasicTensor<S> out(a.shape());
  auto x = a.value().matrix();
  auto y = out.matrix();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mx = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  return make_op<S>("softmax_lastdim", std::move(out), {a}, [](Node<S>& self) {
    auto& an = *self.inputs[0];
    auto y = std::as_const(self.value).matrix();
    auto g = std::as_const(self.grad).matrix();
    auto ga = an.grad_buffer().matrix();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const S dot = g.row(r).dot(y.row(r));
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

template <typename S>
BasicVar<S> logsumexp_lastdim(const BasicVar<S>& a) {
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  BasicTensor<S> out(out_shape);
  auto x = a.value().matrix();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mx = x.row(r).maxCoeff();
    out[r] = mx + std::log((x.row(r).array() - mx).exp().sum());
  }
  return make_op<S>("logsumexp_lastdim", std::move(out), {a}, [](Node<S>& self) {
    auto& an = *self.inputs[0];
    auto x = std::as_const(an.value).matrix();
    auto ga = an.grad_buffer().matrix();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      ga.row(r).array() += self.grad[r] * (x.row(r).array() - self.value[r]).exp();
    }
  });
}

template <typename S>
BasicVar<S> layer_norm_lastdim(const BasicVar<S>& x, const BasicVar<S>& gain,
                               const BasicVar<S>& bias, std::type_identity_t<S> eps) {
  using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
  const auto d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    shape_error("layer_norm_lastdim", x.shape(), gain.shape());
  }
  BasicTensor<S> out(x.shape());
  auto xm = x.value().matrix();
  const auto rows = xm.rows();
  auto xhat = std::make_shared<BasicTensor<S>>(x.shape());
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
  auto xh = xhat->matrix();
  auto y = out.matrix();
  Eigen::Map<const RowVec> gv(gain.value().data(), d);
  Eigen::Map<const RowVec> bv(bias.value().data(), d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = xm.row(r).mean();
    const S var = (xm.row(r).array() - mean).square().mean();
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    xh.row(r) = (xm.row(r).array() - mean) * is;
    y.row(r) = xh.row(r).cwiseProduct(gv) + bv;
  }
  return make_op<S>("layer_norm_lastdim", std::move(out), {x, gain, bias},
                    [xhat, inv_std, d](Node<S>& self) {
                      auto& xn = *self.inputs[0];
                      auto& gn = *self.inputs[1];
                      auto& bn = *self.inputs[2];
                      auto g = std::as_const(self.grad).matrix();
                      auto xh = std::as_const(*xhat).matrix();
                      if (gn.requires_grad) {
                        Eigen::Map<RowVec> gg(gn.grad_buffer().data(), d);
                        gg += g.cwiseProduct(xh).colwise().sum();
                      }
                      if (bn.requires_grad) {
                        Eigen::Map<RowVec> gb(bn.grad_buffer().data(), d);
                        gb += g.colwise().sum();
                      }
                      if (xn.requires_grad) {
                        Eigen::Map<const RowVec> gv(gn.value.data(), d);
                        auto gx = xn.grad_buffer().matrix();
                        for (Eigen::Index r = 0; r < g.rows(); ++r) {
                          RowVec gy = g.row(r).cwiseProduct(gv);
                          const S m1 = gy.mean();
                          const S m2 = gy.cwiseProduct(xh.row(r)).mean();
                          gx.row(r).array() += (*inv_std)[static_cast<std::size_t>(r)] *
                                               (gy.array() - m1 - xh.row(r).array() * m2);
                        }
                      }
                    });
}

template <typename S>
BasicVar<S> embedding_gather(const BasicVar<S>& table, std::span<const std::int32_t> ids,
                             Shape index_shape) {
  if (table.shape().size() != 2) shape_error("embedding_gather", table.shape(), index_shape);
  if (shape_numel(index_shape) != static_cast<std::int64_t>(ids.size())) {
    throw DimensionError("embedding_gather: index shape " + shape_str(index_shape) + " holds " +
                         std::to_string(shape_numel(index_shape)) + " ids, got " +
                         std::to_string(ids.size()));
  }
  const auto vocab = table.shape()[0];
  Shape out_shape = index_shape;
  out_shape.push_back(table.shape()[1]);
  BasicTensor<S> out(out_shape);
  auto tm = table.value().matrix();
  auto om = out.matrix();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw std::out_of_range("embedding_gather: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(vocab) + " rows");
    }
    om.row(static_cast<Eigen::Index>(i)) = tm.row(ids[i]);
  }
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return make_op<S>("embedding_gather", std::move(out), {table},
                    [idx = std::move(idx)](Node<S>& self) {
                      auto gt = self.inputs[0]->grad_buffer().matrix();
                      auto g = std::as_const(self.grad).matrix();
                      for (std::size_t i = 0; i < idx.size(); ++i) {
                        gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                      }
                    });
}

template <typename S>
BasicVar<S> slice(const BasicVar<S>& a, int axis, std::int64_t start, std::int64_t length) {
  const Shape& s = a.shape();
  const int ax = norm_axis(axis, static_cast<int>(s.size()), "slice");
  const auto full = s[static_cast<std::size_t>(ax)];
  if (start < 0 || length < 1 || start + length > full) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis of size " +
                         std::to_string(full) + " in " + shape_str(s));
  }
  const auto outer = prod(s, 0, static_cast<std::size_t>(ax));
  const auto inner = prod(s, static_cast<std::size_t>(ax) + 1, s.size());
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(ax)] = length;
  BasicTensor<S> out(out_shape);
  const S* x = a.value().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(x + (o * full + start) * inner, length * inner, out.data() + o * length * inner);
  }
  return make_op<S>("slice", std::move(out), {a}, [outer, inner, full, start, length](Node<S>& self) {
    S* ga = self.inputs[0]->grad_buffer().data();
    const S* g = self.grad.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      S* dst = ga + (o * full + start) * inner;
      const S* src = g + o * length * inner;
      for (std::int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename S>
BasicVar<S> concat(const std::vector<BasicVar<S>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const int ax = norm_axis(axis, static_cast<int>(s0.size()), "concat");
  std::vector<std::int64_t> widths;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_error("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != ax && s[i] != s0[i]) shape_error("concat", s0, s);
    }
    widths.push_back(s[static_cast<std::size_t>(ax)]);
    total += widths.back();
  }
  const auto outer = prod(s0, 0, static_cast<std::size_t>(ax));
  const auto inner = prod(s0, static_cast<std::size_t>(ax) + 1, s0.size());
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(ax)] = total;
  BasicTensor<S> out(out_shape);
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const S* x = parts[k].value().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(x + o * widths[k] * inner, widths[k] * inner,
                  out.data() + (o * total + offset) * inner);
    }
    offset += widths[k];
  }
  return make_op<S>("concat", std::move(out), parts, [outer, inner, total, widths](Node<S>& self) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& in = *self.inputs[k];
      if (in.requires_grad) {
        S* gi = in.grad_buffer().data();
        for (std::int64_t o = 0; o < outer; ++o) {
          const S* src = self.grad.data() + (o * total + off) * inner;
          S* dst = gi + o * widths[k] * inner;
          for (std::int64_t i = 0; i < widths[k] * inner; ++i) dst[i] += src[i];
        }
      }
      off += widths[k];
    }
  });
}

template <typename S>
BasicVar<S> transpose_last_two(const BasicVar<S>& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw DimensionError("transpose_last_two: rank < 2 in " + shape_str(s));
  const auto r = s[s.size() - 2];
  const auto c = s.back();
  const auto batch = prod(s, 0, s.size() - 2);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  BasicTensor<S> out(out_shape);
  for (std::int64_t b = 0; b < batch; ++b) {
    Map<S>(out.data() + b * r * c, c, r) = CMap<S>(a.value().data() + b * r * c, r, c).transpose();
  }
  return make_op<S>("transpose_last_two", std::move(out), {a}, [batch, r, c](Node<S>& self) {
    S* ga = self.inputs[0]->grad_buffer().data();
    for (std::int64_t b = 0; b < batch; ++b) {
      Map<S>(ga + b * r * c, r, c) += CMap<S>(self.grad.data() + b * r * c, c, r).transpose();
    }
  });
}

template <typename S>
BasicVar<S> masked_fill(const BasicVar<S>& a, const std::vector<std::uint8_t>& mask,
                        std::type_identity_t<S> value) {
  if (static_cast<std::int64_t>(mask.size()) != a.value().numel()) {
    throw DimensionError("masked_fill: mask of " + std::to_string(mask.size()) +
                         " entries for tensor " + shape_str(a.shape()));
  }
  BasicTensor<S> out = a.value();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out[static_cast<std::int64_t>(i)] = value;
  }
  return make_op<S>("masked_fill", std::move(out), {a}, [mask](Node<S>& self) {
    S* ga = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) ga[i] += self.grad[static_cast<std::int64_t>(i)];
    }
  });
}

template <typename S>
BasicVar<S> reduce_sum(const BasicVar<S>& a) {
  double acc = 0.0;
  for (S v : a.value().values()) acc += static_cast<double>(v);
  return make_op<S>("reduce_sum", BasicTensor<S>::scalar(static_cast<S>(acc)), {a}, [](Node<S>& self) {
    const S g = self.grad[0];
    for (S& v : self.inputs[0]->grad_buffer().values()) v += g;
  });
}

template <typename S>
BasicVar<S> reduce_mean(const BasicVar<S>& a) {
  const auto n = a.value().numel();
  double acc = 0.0;
  for (S v : a.value().values()) acc += static_cast<double>(v);
  return make_op<S>("reduce_mean", BasicTensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n))),
                    {a}, [n](Node<S>& self) {
                      const S g = self.grad[0] / static_cast<S>(n);
                      for (S& v : self.inputs[0]->grad_buffer().values()) v += g;
                    });
}

template <typename S>
BasicVar<S> reshape(const BasicVar<S>& a, Shape s) {
  BasicTensor<S> out = a.value().reshaped(std::move(s));
  return make_op<S>("reshape", std::move(out), {a}, [](Node<S>& self) {
    S* ga = self.inputs[0]->grad_buffer().data();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) ga[i] += self.grad[i];
  });
}

template <typename S>
BasicVar<S> dropout(const BasicVar<S>& a, float p, std::mt19937_64& rng) {
  if (p <= 0.0f) return a;
  BasicTensor<S> mask(a.shape());
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const S kept = S(1) / (S(1) - S(p));
  for (S& m : mask.values()) m = keep(rng) ? kept : S(0);
  return mul(a, constant(std::move(mask)));
}

template <typename S>
BasicVar<S> softmax_cross_entropy(const BasicVar<S>& logits, std::span<const std::int32_t> targets) {
  auto x = logits.value().matrix();
  const auto rows = x.rows();
  const auto vocab = x.cols();
  if (static_cast<std::int64_t>(targets.size()) != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  std::int64_t count = 0;
  double total = 0.0;
  auto probs = std::make_shared<BasicTensor<S>>(Shape{rows, vocab});
  auto pm = probs->matrix();
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto t = targets[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    if (t >= vocab) {
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(t) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
    const S mx = x.row(r).maxCoeff();
    pm.row(r) = (x.row(r).array() - mx).exp();
    const S z = pm.row(r).sum();
    pm.row(r) /= z;
    total += static_cast<double>(mx + std::log(z) - x(r, t));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("softmax_cross_entropy: every target is ignored");
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  const S loss = static_cast<S>(total / static_cast<double>(count));
  return make_op<S>("softmax_cross_entropy", BasicTensor<S>::scalar(loss), {logits},
                    [probs, tg = std::move(tg), count](Node<S>& self) {
                      const S g = self.grad[0] / static_cast<S>(count);
                      auto gl = self.inputs[0]->grad_buffer().matrix();
                      auto pm = std::as_const(*probs).matrix();
                      for (Eigen::Index r = 0; r < gl.rows(); ++r) {
                        const auto t = tg[static_cast<std::size_t>(r)];
                        if (t < 0) continue;
                        gl.row(r) += g * pm.row(r);
                        gl(r, t) -= g;
                      }
                    });
}

#define T5TTS_INSTANTIATE(S)                                                                       \
  template class BasicTensor<S>;                                                                   \
  template S BasicVar<S>::item() const;                                                            \
  template BasicVar<S> leaf(BasicTensor<S>, bool);                                                 \
  template BasicVar<S> make_op(const char*, BasicTensor<S>, std::vector<BasicVar<S>>,              \
                               std::function<void(Node<S>&)>);                                     \
  template void backward(const BasicVar<S>&);                                                      \
  template BasicVar<S> matmul(const BasicVar<S>&, const BasicVar<S>&);                             \
  template BasicVar<S> add(const BasicVar<S>&, const BasicVar<S>&);                                \
  template BasicVar<S> sub(const BasicVar<S>&, const BasicVar<S>&);                                \
  template BasicVar<S> mul(const BasicVar<S>&, const BasicVar<S>&);                                \
  template BasicVar<S> scale(const BasicVar<S>&, std::type_identity_t<S>);                         \
  template BasicVar<S> exp(const BasicVar<S>&);                                                    \
  template BasicVar<S> log(const BasicVar<S>&);                                                    \
  template BasicVar<S> relu(const BasicVar<S>&);                                                   \
  template BasicVar<S> gelu(const BasicVar<S>&);                                                   \
  template BasicVar<S> softmax_lastdim(const BasicVar<S>&);                                        \
  template BasicVar<S> logsumexp_lastdim(const BasicVar<S>&);                                      \
  template BasicVar<S> layer_norm_lastdim(const BasicVar<S>&, const BasicVar<S>&,                  \
                                          const BasicVar<S>&, std::type_identity_t<S>);            \
  template BasicVar<S> embedding_gather(const BasicVar<S>&, std::span<const std::int32_t>, Shape); \
  template BasicVar<S> slice(const BasicVar<S>&, int, std::int64_t, std::int64_t);                 \
  template BasicVar<S> concat(const std::vector<BasicVar<S>>&, int);                               \
  template BasicVar<S> transpose_last_two(const BasicVar<S>&);                                     \
  template BasicVar<S> masked_fill(const BasicVar<S>&, const std::vector<std::uint8_t>&,           \
                                   std::type_identity_t<S>);                                       \
  template BasicVar<S> reduce_sum(const BasicVar<S>&);                                             \
  template BasicVar<S> reduce_mean(const BasicVar<S>&);                                            \
  template BasicVar<S> reshape(const BasicVar<S>&, Shape);                                         \
  template BasicVar<S> dropout(const BasicVar<S>&, float, std::mt19937_64&);                       \
  template BasicVar<S> softmax_cross_entropy(const BasicVar<S>&, std::span<const std::int32_t>);

T5TTS_INSTANTIATE(float)
T5TTS_INSTANTIATE(double)

#undef T5TTS_INSTANTIATE

}  // namespace t5tts::ad
