/*
 * Copyright 2026 The Rangeplace Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rangeplace {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

template <typename Scalar>
struct Node {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Vector value;
  Vector grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this->grad into the parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) grad = Vector::Zero(value.size());
    grad += g;
  }
};

}  // namespace detail

/// Dense row-major n-d array with reverse-mode differentiation.
///
/// Copies share storage and graph position (handle semantics); clone() makes
/// an independent leaf. Scalar = double is the test mode, float production.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Node = detail::Node<Scalar>;

  Tensor() = default;

  Tensor(Shape shape, Vector values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
    }
    if (shape.empty()) shape = {1};
    if (static_cast<std::size_t>(values.size()) != numel(shape)) {
      throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                  " does not match shape " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, const std::vector<Scalar>& values, bool requires_grad = false)
      : Tensor(std::move(shape),
               Eigen::Map<const Vector>(values.data(),
                                        static_cast<Eigen::Index>(values.size())),
               requires_grad) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = static_cast<Eigen::Index>(numel(shape));
    return Tensor(std::move(shape), Vector::Zero(n), requires_grad);
  }

  static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
    const auto n = static_cast<Eigen::Index>(numel(shape));
    return Tensor(std::move(shape), Vector::Constant(n, value), requires_grad);
  }

  static Tensor scalar(Scalar value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return static_cast<std::size_t>(node_->value.size()); }

  const Vector& values() const { return node_->value; }

  // Only leaves may be mutated; interior values are owned by the graph.
  Vector& mutable_values() {
    if (!node_->is_leaf()) {
      throw std::logic_error("mutable_values() on a non-leaf tensor");
    }
    return node_->value;
  }

  Scalar at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw std::invalid_argument("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= node_->shape[axis]) throw std::out_of_range("tensor index");
      flat = flat * node_->shape[axis] + i;
      ++axis;
    }
    return node_->value[static_cast<Eigen::Index>(flat)];
  }

  Scalar item() const {
    if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) {
    if (!node_->is_leaf()) throw std::logic_error("set_requires_grad on non-leaf");
    node_->requires_grad = flag;
  }

  bool has_grad() const { return node_->grad.size() != 0; }
  const Vector& grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() { node_->grad.resize(0); }

  /// Detached deep copy.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), values(), requires_grad);
  }

  template <typename Other>
  Tensor<Other> cast(bool requires_grad = false) const {
    return Tensor<Other>(shape(), values().template cast<Other>().eval(),
                         requires_grad);
  }

  /// Reverse pass from a scalar loss. Leaf grads accumulate across calls.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (size() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                to_string(shape()));
  }
  if (!requires_grad()) return;

  // Post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.resize(0);
  }
  node_->accumulate(Vector::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || n->grad.size() == 0) continue;
    n->backward(*n);
  }
}

namespace detail {

template <typename Scalar, typename Fn>
Tensor<Scalar> make_result(Shape shape,
                           typename Tensor<Scalar>::Vector value,
                           std::initializer_list<const Tensor<Scalar>*> inputs,
                           Fn&& backward) {
  Tensor<Scalar> out(std::move(shape), std::move(value));
  bool needs_grad = false;
  for (const auto* t : inputs) needs_grad = needs_grad || t->requires_grad();
  if (needs_grad) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto* t : inputs) node.parents.push_back(t->node());
    node.backward = std::forward<Fn>(backward);
  }
  return out;
}

// View of a tensor as [outer, n, inner] around one axis.
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;

  AxisView(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
      throw std::invalid_argument("axis " + std::to_string(axis) +
                                  " out of range for shape " + to_string(shape));
    }
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  }

  Eigen::Index at(std::size_t o, std::size_t i, std::size_t in) const {
    return static_cast<Eigen::Index>((o * n + i) * inner + in);
  }
};

inline std::ptrdiff_t wrap(std::ptrdiff_t i, std::ptrdiff_t n) {
  const std::ptrdiff_t r = i % n;
  return r < 0 ? r + n : r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw std::invalid_argument("cannot reshape " + to_string(x.shape()) + " to " +
                                to_string(shape));
  }
  return detail::make_result<Scalar>(std::move(shape), x.values(), {&x},
                                     [](auto& self) {
                                       self.parents[0]->accumulate(self.grad);
                                     });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose expects a matrix");
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(x.dim(0));
  const auto cols = static_cast<Eigen::Index>(x.dim(1));
  typename Tensor<Scalar>::Vector out(x.size());
  Eigen::Map<RowMajor>(out.data(), cols, rows) =
      Eigen::Map<const RowMajor>(x.values().data(), rows, cols).transpose();
  return detail::make_result<Scalar>({x.dim(1), x.dim(0)}, std::move(out), {&x},
                                     [rows, cols](auto& self) {
                                       typename Tensor<Scalar>::Vector g(self.grad.size());
                                       Eigen::Map<RowMajor>(g.data(), rows, cols) =
                                           Eigen::Map<const RowMajor>(self.grad.data(), cols, rows)
                                               .transpose();
                                       self.parents[0]->accumulate(g);
                                     });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw std::invalid_argument("concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size()) throw std::invalid_argument("concat rank mismatch");
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d != axis && p.dim(d) != shape[d]) {
        throw std::invalid_argument("concat shape mismatch: " + to_string(p.shape()));
      }
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  const detail::AxisView view(shape, axis);
  typename Tensor<Scalar>::Vector out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const detail::AxisView pv(p.shape(), axis);
    for (std::size_t o = 0; o < pv.outer; ++o) {
      out.segment(view.at(o, offset, 0), static_cast<Eigen::Index>(pv.n * pv.inner)) =
          p.values().segment(pv.at(o, 0, 0), static_cast<Eigen::Index>(pv.n * pv.inner));
    }
    offset += p.dim(axis);
  }

  auto result = Tensor<Scalar>(shape, std::move(out));
  bool needs_grad = false;
  for (const auto& p : parts) needs_grad = needs_grad || p.requires_grad();
  if (needs_grad) {
    auto& node = *result.node();
    node.requires_grad = true;
    std::vector<Shape> shapes;
    for (const auto& p : parts) {
      node.parents.push_back(p.node());
      shapes.push_back(p.shape());
    }
    node.backward = [view, offsets, shapes, axis](auto& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& parent = *self.parents[k];
        if (!parent.requires_grad) continue;
        const detail::AxisView pv(shapes[k], axis);
        typename Tensor<Scalar>::Vector g(numel(shapes[k]));
        for (std::size_t o = 0; o < pv.outer; ++o) {
          g.segment(pv.at(o, 0, 0), static_cast<Eigen::Index>(pv.n * pv.inner)) =
              self.grad.segment(view.at(o, offsets[k], 0),
                                static_cast<Eigen::Index>(pv.n * pv.inner));
        }
        parent.accumulate(g);
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Vector out = x.values().cwiseMax(Scalar(0));
  return detail::make_result<Scalar>(x.shape(), std::move(out), {&x}, [](auto& self) {
    const auto& in = self.parents[0]->value;
    self.parents[0]->accumulate(
        (in.array() > Scalar(0)).select(self.grad, Scalar(0)).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Vector out =
      x.values().unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
  return detail::make_result<Scalar>(x.shape(), out, {&x}, [out](auto& self) {
    self.parents[0]->accumulate(
        (self.grad.array() * out.array() * (Scalar(1) - out.array())).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> abs(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Vector out = x.values().cwiseAbs();
  return detail::make_result<Scalar>(x.shape(), std::move(out), {&x}, [](auto& self) {
    // Subgradient 0 at the kink.
    const auto sign = self.parents[0]->value.array().sign();
    self.parents[0]->accumulate((self.grad.array() * sign).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Vector out = x.values().array().square().matrix();
  return detail::make_result<Scalar>(x.shape(), std::move(out), {&x}, [](auto& self) {
    self.parents[0]->accumulate(
        (Scalar(2) * self.grad.array() * self.parents[0]->value.array()).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  typename Tensor<Scalar>::Vector out = x.values() * factor;
  return detail::make_result<Scalar>(x.shape(), std::move(out), {&x},
                                     [factor](auto& self) {
                                       self.parents[0]->accumulate(self.grad * factor);
                                     });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar offset) {
  typename Tensor<Scalar>::Vector out = x.values().array() + offset;
  return detail::make_result<Scalar>(x.shape(), std::move(out), {&x}, [](auto& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

// ---------------------------------------------------------------------------
// Broadcasting binary ops. Operands must share rank; each axis must match or
// be 1 on one side. This covers the per-channel and per-column re-weighting.

namespace detail {

struct Broadcast {
  Shape shape;
  std::vector<std::size_t> stride_a, stride_b;

  Broadcast(const Shape& a, const Shape& b) {
    if (a.size() != b.size()) {
      throw std::invalid_argument("broadcast rank mismatch " + to_string(a) + " vs " +
                                  to_string(b));
    }
    const std::size_t r = a.size();
    shape.resize(r);
    stride_a.assign(r, 0);
    stride_b.assign(r, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t d = r; d-- > 0;) {
      if (a[d] != b[d] && a[d] != 1 && b[d] != 1) {
        throw std::invalid_argument("cannot broadcast " + to_string(a) + " with " +
                                    to_string(b));
      }
      shape[d] = std::max(a[d], b[d]);
      stride_a[d] = a[d] == 1 ? 0 : sa;
      stride_b[d] = b[d] == 1 ? 0 : sb;
      sa *= a[d];
      sb *= b[d];
    }
  }

  // Calls fn(out_index, a_index, b_index) over every output element.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const std::size_t r = shape.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    const std::size_t total = numel(shape);
    for (std::size_t o = 0; o < total; ++o) {
      fn(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ia),
         static_cast<Eigen::Index>(ib));
      for (std::size_t d = r; d-- > 0;) {
        ia += stride_a[d];
        ib += stride_b[d];
        if (++idx[d] < shape[d]) break;
        ia -= stride_a[d] * shape[d];
        ib -= stride_b[d] * shape[d];
        idx[d] = 0;
      }
    }
  }
};

template <typename Scalar, typename Op, typename DA, typename DB>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Op op, DA da,
                      DB db) {
  const Broadcast bc(a.shape(), b.shape());
  typename Tensor<Scalar>::Vector out(numel(bc.shape));
  const auto& va = a.values();
  const auto& vb = b.values();
  bc.for_each([&](auto o, auto ia, auto ib) { out[o] = op(va[ia], vb[ib]); });
  return make_result<Scalar>(bc.shape, std::move(out), {&a, &b}, [bc, da, db](auto& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    typename Tensor<Scalar>::Vector ga, gb;
    if (pa.requires_grad) ga = Tensor<Scalar>::Vector::Zero(pa.value.size());
    if (pb.requires_grad) gb = Tensor<Scalar>::Vector::Zero(pb.value.size());
    bc.for_each([&](auto o, auto ia, auto ib) {
      const Scalar g = self.grad[o];
      if (pa.requires_grad) ga[ia] += da(g, pa.value[ia], pb.value[ib]);
      if (pb.requires_grad) gb[ib] += db(g, pa.value[ia], pb.value[ib]);
    });
    if (pa.requires_grad) pa.accumulate(ga);
    if (pb.requires_grad) pb.accumulate(gb);
  });
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(
      a, b, [](Scalar x, Scalar y) { return x + y; },
      [](Scalar g, Scalar, Scalar) { return g; }, [](Scalar g, Scalar, Scalar) { return g; });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(
      a, b, [](Scalar x, Scalar y) { return x - y; },
      [](Scalar g, Scalar, Scalar) { return g; }, [](Scalar g, Scalar, Scalar) { return -g; });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(
      a, b, [](Scalar x, Scalar y) { return x * y; },
      [](Scalar g, Scalar, Scalar y) { return g * y; },
      [](Scalar g, Scalar x, Scalar) { return g * x; });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Vector out(1);
  out[0] = x.values().sum();
  const auto n = static_cast<Eigen::Index>(x.size());
  return detail::make_result<Scalar>({1}, std::move(out), {&x}, [n](auto& self) {
    self.parents[0]->accumulate(Tensor<Scalar>::Vector::Constant(n, self.grad[0]));
  });
}

enum class PoolKind { kMean, kMax };

template <typename Scalar>
Tensor<Scalar> pool(const Tensor<Scalar>& x, PoolKind kind, std::size_t axis) {
  const detail::AxisView v(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  typename Tensor<Scalar>::Vector out(static_cast<Eigen::Index>(v.outer * v.inner));
  std::vector<std::size_t> argmax;
  if (kind == PoolKind::kMax) argmax.resize(v.outer * v.inner);
  const auto& in = x.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < v.inner; ++k) {
      const auto oi = static_cast<Eigen::Index>(o * v.inner + k);
      if (kind == PoolKind::kMean) {
        Scalar acc = 0;
        for (std::size_t i = 0; i < v.n; ++i) acc += in[v.at(o, i, k)];
        out[oi] = acc / static_cast<Scalar>(v.n);
      } else {
        std::size_t best = 0;
        for (std::size_t i = 1; i < v.n; ++i) {
          if (in[v.at(o, i, k)] > in[v.at(o, best, k)]) best = i;
        }
        argmax[static_cast<std::size_t>(oi)] = best;
        out[oi] = in[v.at(o, best, k)];
      }
    }
  }
  return detail::make_result<Scalar>(
      std::move(shape), std::move(out), {&x}, [v, kind, argmax](auto& self) {
        typename Tensor<Scalar>::Vector g =
            Tensor<Scalar>::Vector::Zero(static_cast<Eigen::Index>(v.outer * v.n * v.inner));
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t k = 0; k < v.inner; ++k) {
            const std::size_t oi = o * v.inner + k;
            const Scalar go = self.grad[static_cast<Eigen::Index>(oi)];
            if (kind == PoolKind::kMean) {
              for (std::size_t i = 0; i < v.n; ++i) {
                g[v.at(o, i, k)] += go / static_cast<Scalar>(v.n);
              }
            } else {
              g[v.at(o, argmax[oi], k)] += go;
            }
          }
        }
        self.parents[0]->accumulate(g);
      });
}

/// Pools over several axes; each listed axis is removed from the shape.
template <typename Scalar>
Tensor<Scalar> pool(const Tensor<Scalar>& x, PoolKind kind, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end(), std::greater<>());
  if (std::adjacent_find(axes.begin(), axes.end()) != axes.end()) {
    throw std::invalid_argument("pool axes must be distinct");
  }
  Tensor<Scalar> out = x;
  for (std::size_t axis : axes) out = pool(out, kind, axis);
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, std::size_t axis) {
  const detail::AxisView v(x.shape(), axis);
  typename Tensor<Scalar>::Vector out(x.size());
  const auto& in = x.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < v.inner; ++k) {
      Scalar peak = in[v.at(o, 0, k)];
      for (std::size_t i = 1; i < v.n; ++i) peak = std::max(peak, in[v.at(o, i, k)]);
      Scalar total = 0;
      for (std::size_t i = 0; i < v.n; ++i) {
        const Scalar e = std::exp(in[v.at(o, i, k)] - peak);
        out[v.at(o, i, k)] = e;
        total += e;
      }
      for (std::size_t i = 0; i < v.n; ++i) out[v.at(o, i, k)] /= total;
    }
  }
  return detail::make_result<Scalar>(x.shape(), out, {&x}, [v, out](auto& self) {
    typename Tensor<Scalar>::Vector g(out.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t k = 0; k < v.inner; ++k) {
        Scalar dot = 0;
        for (std::size_t i = 0; i < v.n; ++i) {
          dot += self.grad[v.at(o, i, k)] * out[v.at(o, i, k)];
        }
        for (std::size_t i = 0; i < v.n; ++i) {
          const auto e = v.at(o, i, k);
          g[e] = out[e] * (self.grad[e] - dot);
        }
      }
    }
    self.parents[0]->accumulate(g);
  });
}

enum class ZeroSlice { kThrow, kKeep };

/// Scales every slice along `axis` to unit Euclidean norm. An all-zero slice
/// throws, or passes through as zeros (with zero gradient) under kKeep.
template <typename Scalar>
Tensor<Scalar> l2norm(const Tensor<Scalar>& x, std::size_t axis,
                      ZeroSlice zero = ZeroSlice::kThrow) {
  const detail::AxisView v(x.shape(), axis);
  typename Tensor<Scalar>::Vector out(x.size());
  std::vector<Scalar> norms(v.outer * v.inner);
  const auto& in = x.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < v.inner; ++k) {
      Scalar sq = 0;
      for (std::size_t i = 0; i < v.n; ++i) sq += in[v.at(o, i, k)] * in[v.at(o, i, k)];
      const Scalar norm = std::sqrt(sq);
      norms[o * v.inner + k] = norm;
      if (norm == Scalar(0)) {
        if (zero == ZeroSlice::kThrow) {
          throw std::domain_error("l2norm of an all-zero slice (degenerate direction)");
        }
        for (std::size_t i = 0; i < v.n; ++i) out[v.at(o, i, k)] = Scalar(0);
        continue;
      }
      for (std::size_t i = 0; i < v.n; ++i) out[v.at(o, i, k)] = in[v.at(o, i, k)] / norm;
    }
  }
  return detail::make_result<Scalar>(x.shape(), out, {&x}, [v, out, norms](auto& self) {
    typename Tensor<Scalar>::Vector g(out.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t k = 0; k < v.inner; ++k) {
        Scalar dot = 0;
        for (std::size_t i = 0; i < v.n; ++i) {
          dot += self.grad[v.at(o, i, k)] * out[v.at(o, i, k)];
        }
        const Scalar norm = norms[o * v.inner + k];
        for (std::size_t i = 0; i < v.n; ++i) {
          const auto e = v.at(o, i, k);
          g[e] = norm == Scalar(0) ? Scalar(0) : (self.grad[e] - out[e] * dot) / norm;
        }
      }
    }
    self.parents[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul shape mismatch " + to_string(a.shape()) + " x " +
                                to_string(b.shape()));
  }
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  typename Tensor<Scalar>::Vector out(m * n);
  Eigen::Map<RowMajor>(out.data(), m, n).noalias() =
      Eigen::Map<const RowMajor>(a.values().data(), m, k) *
      Eigen::Map<const RowMajor>(b.values().data(), k, n);
  return detail::make_result<Scalar>(
      {a.dim(0), b.dim(1)}, std::move(out), {&a, &b}, [m, k, n](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        Eigen::Map<const RowMajor> g(self.grad.data(), m, n);
        if (pa.requires_grad) {
          typename Tensor<Scalar>::Vector ga(m * k);
          Eigen::Map<RowMajor>(ga.data(), m, k).noalias() =
              g * Eigen::Map<const RowMajor>(pb.value.data(), k, n).transpose();
          pa.accumulate(ga);
        }
        if (pb.requires_grad) {
          typename Tensor<Scalar>::Vector gb(k * n);
          Eigen::Map<RowMajor>(gb.data(), k, n).noalias() =
              Eigen::Map<const RowMajor>(pa.value.data(), m, k).transpose() * g;
          pb.accumulate(gb);
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution

enum class HorizontalPadding { kZero, kCircular };

/// Padding for conv2d. Vertical padding is always zero rows (top and bottom);
/// the horizontal total `width` splits into left = floor(width/2) and
/// right = width - left, either zero-filled or wrapped around the ring.
struct PadMode {
  std::size_t vertical = 0;
  HorizontalPadding horizontal = HorizontalPadding::kZero;
  std::size_t width = 0;

  static PadMode zero(std::size_t vertical, std::size_t width) {
    return {vertical, HorizontalPadding::kZero, width};
  }
  static PadMode circular(std::size_t vertical, std::size_t width) {
    return {vertical, HorizontalPadding::kCircular, width};
  }

  std::size_t left() const { return width / 2; }
  std::size_t right() const { return width - left(); }
};

struct Stride2d {
  std::size_t rows = 1;
  std::size_t cols = 1;
};

namespace detail {

// Gather table for the im2col matrix: entry (r, c) holds the flat input index
// feeding patch row r (channel, kernel row, kernel col) at output position c,
// or -1 for a zero pad. Circular columns are taken modulo W, so a shifted
// input permutes the table's columns and nothing else.
struct Im2Col {
  std::size_t rows = 0, cols = 0;
  std::size_t out_h = 0, out_w = 0;
  std::vector<std::ptrdiff_t> index;

  Im2Col(std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
         std::size_t kw, Stride2d stride, const PadMode& pad) {
    const std::size_t padded_h = height + 2 * pad.vertical;
    const std::size_t padded_w = width + pad.width;
    out_h = (padded_h - kh) / stride.rows + 1;
    out_w = (padded_w - kw) / stride.cols + 1;
    rows = channels * kh * kw;
    cols = out_h * out_w;
    index.resize(rows * cols);
    const auto h = static_cast<std::ptrdiff_t>(height);
    const auto w = static_cast<std::ptrdiff_t>(width);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const std::size_t r = (c * kh + ki) * kw + kj;
          for (std::size_t oi = 0; oi < out_h; ++oi) {
            const auto row = static_cast<std::ptrdiff_t>(oi * stride.rows + ki) -
                             static_cast<std::ptrdiff_t>(pad.vertical);
            for (std::size_t oj = 0; oj < out_w; ++oj) {
              auto col = static_cast<std::ptrdiff_t>(oj * stride.cols + kj) -
                         static_cast<std::ptrdiff_t>(pad.left());
              std::ptrdiff_t flat = -1;
              if (row >= 0 && row < h) {
                if (pad.horizontal == HorizontalPadding::kCircular) col = wrap(col, w);
                if (col >= 0 && col < w) {
                  flat = (static_cast<std::ptrdiff_t>(c) * h + row) * w + col;
                }
              }
              index[r * cols + oi * out_w + oj] = flat;
            }
          }
        }
      }
    }
  }
};

// Tables depend only on the geometry, so each thread keeps the ones it has built.
inline std::shared_ptr<const Im2Col> im2col_table(std::size_t channels, std::size_t height,
                                                  std::size_t width, std::size_t kh,
                                                  std::size_t kw, Stride2d stride,
                                                  const PadMode& pad) {
  using Key = std::array<std::size_t, 10>;
  thread_local std::map<Key, std::shared_ptr<const Im2Col>> cache;
  const Key key{channels, height, width, kh, kw, stride.rows, stride.cols, pad.vertical,
                static_cast<std::size_t>(pad.horizontal), pad.width};
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  if (cache.size() >= 64) cache.clear();
  auto table = std::make_shared<const Im2Col>(channels, height, width, kh, kw, stride, pad);
  cache.emplace(key, table);
  return table;
}

// out[o, j] = sum_r k[o, r] * patches[r, j], accumulated in ascending r with
// the same instruction sequence for every column j. Output positions that see
// the same operands therefore get bit-identical values.
template <typename Scalar>
void ordered_product(const Scalar* __restrict k, const Scalar* __restrict patches,
                     Scalar* __restrict out, std::size_t c_out, std::size_t rows,
                     std::size_t cols) {
  std::fill(out, out + c_out * cols, Scalar(0));
  std::size_t o = 0;
  for (; o + 4 <= c_out; o += 4) {
    Scalar* d0 = out + o * cols;
    Scalar* d1 = d0 + cols;
    Scalar* d2 = d1 + cols;
    Scalar* d3 = d2 + cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const Scalar a0 = k[o * rows + r], a1 = k[(o + 1) * rows + r];
      const Scalar a2 = k[(o + 2) * rows + r], a3 = k[(o + 3) * rows + r];
      const Scalar* src = patches + r * cols;
      for (std::size_t j = 0; j < cols; ++j) {
        const Scalar x = src[j];
        d0[j] += a0 * x;
        d1[j] += a1 * x;
        d2[j] += a2 * x;
        d3[j] += a3 * x;
      }
    }
  }
  for (; o < c_out; ++o) {
    Scalar* d = out + o * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const Scalar a = k[o * rows + r];
      const Scalar* src = patches + r * cols;
      for (std::size_t j = 0; j < cols; ++j) d[j] += a * src[j];
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation of input [C_in,H,W] with kernel [C_out,C_in,K_h,K_w],
/// plus an optional bias [C_out]. Returns [C_out,H',W'].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, Stride2d stride, const PadMode& pad) {
  if (input.rank() != 3 || kernel.rank() != 4) {
    throw std::invalid_argument("conv2d expects input [C,H,W] and kernel [O,C,Kh,Kw], got " +
                                to_string(input.shape()) + " and " + to_string(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(0)) {
    throw std::invalid_argument("conv2d channel mismatch: input has " +
                                std::to_string(input.dim(0)) + " channels, kernel expects " +
                                std::to_string(kernel.dim(1)));
  }
  if (stride.rows == 0 || stride.cols == 0) {
    throw std::invalid_argument("conv2d stride must be positive");
  }
  const std::size_t c_out = kernel.dim(0);
  const std::size_t kh = kernel.dim(2);
  const std::size_t kw = kernel.dim(3);
  if (kh > input.dim(1) + 2 * pad.vertical || kw > input.dim(2) + pad.width) {
    throw std::invalid_argument("conv2d kernel " + to_string(kernel.shape()) +
                                " larger than padded input " + to_string(input.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw std::invalid_argument("conv2d bias must have shape [C_out]");
  }

  auto table = detail::im2col_table(input.dim(0), input.dim(1), input.dim(2), kh, kw, stride,
                                    pad);
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(table->rows);
  const auto cols = static_cast<Eigen::Index>(table->cols);
  RowMajor patches(rows, cols);
  const auto& in = input.values();
  {
    Scalar* dst = patches.data();
    for (std::ptrdiff_t flat : table->index) *dst++ = flat < 0 ? Scalar(0) : in[flat];
  }

  typename Tensor<Scalar>::Vector out(static_cast<Eigen::Index>(c_out) * cols);
  detail::ordered_product(kernel.values().data(), patches.data(), out.data(),
                          static_cast<std::size_t>(c_out), table->rows, table->cols);
  Eigen::Map<RowMajor> out_mat(out.data(), static_cast<Eigen::Index>(c_out), cols);
  if (bias.defined()) out_mat.colwise() += bias.values();

  Shape shape{c_out, table->out_h, table->out_w};
  auto backward = [table, patches = std::move(patches), c_out, rows, cols](auto& self) {
    auto& px = *self.parents[0];
    auto& pk = *self.parents[1];
    Eigen::Map<const RowMajor> g(self.grad.data(), static_cast<Eigen::Index>(c_out), cols);
    if (pk.requires_grad) {
      typename Tensor<Scalar>::Vector gk(static_cast<Eigen::Index>(c_out) * rows);
      Eigen::Map<RowMajor>(gk.data(), static_cast<Eigen::Index>(c_out), rows).noalias() =
          g * patches.transpose();
      pk.accumulate(gk);
    }
    if (px.requires_grad) {
      RowMajor gpatch(rows, cols);
      gpatch.noalias() =
          Eigen::Map<const RowMajor>(pk.value.data(), static_cast<Eigen::Index>(c_out), rows)
              .transpose() *
          g;
      typename Tensor<Scalar>::Vector gx = Tensor<Scalar>::Vector::Zero(px.value.size());
      const Scalar* src = gpatch.data();
      for (std::ptrdiff_t flat : table->index) {
        if (flat >= 0) gx[flat] += *src;
        ++src;
      }
      px.accumulate(gx);
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      self.parents[2]->accumulate(g.rowwise().sum());
    }
  };
  if (bias.defined()) {
    return detail::make_result<Scalar>(std::move(shape), std::move(out),
                                       {&input, &kernel, &bias}, std::move(backward));
  }
  return detail::make_result<Scalar>(std::move(shape), std::move(out), {&input, &kernel},
                                     std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      Stride2d stride, const PadMode& pad) {
  return conv2d(input, kernel, Tensor<Scalar>(), stride, pad);
}

/// Length-preserving 1-D convolution of input [1,C] with kernel [1,1,k]
/// (k odd) and an optional scalar bias [1].
template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, HorizontalPadding padding) {
  if (input.rank() != 2 || input.dim(0) != 1) {
    throw std::invalid_argument("conv1d expects input [1,C], got " + to_string(input.shape()));
  }
  if (kernel.rank() != 3 || kernel.dim(0) != 1 || kernel.dim(1) != 1) {
    throw std::invalid_argument("conv1d expects kernel [1,1,k], got " +
                                to_string(kernel.shape()));
  }
  const std::size_t k = kernel.dim(2);
  if (k % 2 == 0) throw std::invalid_argument("conv1d kernel size must be odd");
  const std::size_t c = input.dim(1);
  const PadMode pad{0, padding, k - 1};
  auto out = conv2d(reshape(input, {1, 1, c}), reshape(kernel, {1, 1, 1, k}), bias,
                    Stride2d{1, 1}, pad);
  return reshape(out, {1, c});
}

template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      HorizontalPadding padding) {
  return conv1d(input, kernel, Tensor<Scalar>(), padding);
}

}  // namespace rangeplace
