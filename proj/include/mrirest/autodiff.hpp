#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mrirest/errors.hpp"
#include "mrirest/tensor.hpp"

namespace mrirest {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
struct BackwardContext {
  std::span<const Tensor<T>* const> in;
  const Tensor<T>& out;
  const Tensor<T>& grad_out;
  // Null where the corresponding input does not require a gradient.
  std::span<Tensor<T>* const> grad_in;
};

template <typename T>
using BackwardFn = std::function<void(const BackwardContext<T>&)>;

template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

// Named trainable tensors. Iteration order is lexicographic by name.
template <typename T>
class ParameterStore {
 public:
  void add(const std::string& name, Tensor<T> value) {
    if (!tensors_.emplace(name, std::move(value)).second) {
      throw ContractError("duplicate parameter name '" + name + "'");
    }
  }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor<T>& get(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
  }
  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, t] : tensors_) out.add(name, t.template cast<U>());
    return out;
  }

 private:
  std::map<std::string, Tensor<T>> tensors_;
};

// Linear record of operations. Nodes are appended in evaluation order, so
// every node's inputs precede it and a reverse sweep is a valid topological
// order for the adjoint pass. Not thread-safe: one tape per thread.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}, nullptr, {}); }
  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, {}, nullptr, {}); }

  // Binds a named parameter. Binding the same name twice returns the same node.
  Var<T> parameter(const std::string& name, const Tensor<T>& value) {
    if (auto it = params_.find(name); it != params_.end()) return Var<T>(this, it->second);
    Var<T> v = push(value, true, {}, nullptr, name);
    params_.emplace(name, v.id());
    return v;
  }

  Var<T> record(Tensor<T> out, std::initializer_list<Var<T>> inputs, BackwardFn<T> fn) {
    return record(std::move(out), std::vector<Var<T>>(inputs), std::move(fn));
  }
  Var<T> record(Tensor<T> out, const std::vector<Var<T>>& inputs, BackwardFn<T> fn) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    bool needs = false;
    for (const auto& v : inputs) {
      if (&v.tape() != this) throw ContractError("operands recorded on different tapes");
      ids.push_back(v.id());
      needs = needs || nodes_[v.id()]->requires_grad;
    }
    return push(std::move(out), needs, std::move(ids), needs ? std::move(fn) : nullptr, {});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id)->value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id)->requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the last backward() target with respect to node `id`;
  // zeros when the node is unreachable.
  Tensor<T> grad(std::size_t id) const {
    const auto& n = *nodes_.at(id);
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }
  Tensor<T> grad(const Var<T>& v) const { return grad(v.id()); }

  void backward(const Var<T>& loss) {
    if (&loss.tape() != this) throw ContractError("loss recorded on a different tape");
    if (loss.value().size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
    }
    for (auto& n : nodes_) n->grad = Tensor<T>();
    nodes_[loss.id()]->grad = Tensor<T>(loss.shape(), T{1});

    std::vector<const Tensor<T>*> in;
    std::vector<Tensor<T>*> gin;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& node = *nodes_[id];
      if (!node.backward || node.grad.empty()) continue;
      in.clear();
      gin.clear();
      for (std::size_t input : node.inputs) {
        Node& src = *nodes_[input];
        in.push_back(&src.value);
        if (src.requires_grad) {
          if (src.grad.empty()) src.grad = Tensor<T>(src.value.shape());
          gin.push_back(&src.grad);
        } else {
          gin.push_back(nullptr);
        }
      }
      node.backward(BackwardContext<T>{in, node.value, node.grad, gin});
      // Interior gradients are no longer needed once propagated.
      if (!node.inputs.empty()) node.grad = Tensor<T>();
    }
  }

  // Gradient for every parameter in `store`; parameters never bound or not
  // reachable from the loss receive zeros.
  GradientMap<T> gradients(const ParameterStore<T>& store) const {
    GradientMap<T> out;
    for (const auto& [name, value] : store) {
      auto it = params_.find(name);
      out.emplace(name, it == params_.end() ? Tensor<T>(value.shape()) : grad(it->second));
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn<T> backward;
    std::string name;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, std::vector<std::size_t> inputs, BackwardFn<T> fn,
              std::string name) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->inputs = std::move(inputs);
    node->backward = std::move(fn);
    node->name = std::move(name);
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  std::map<std::string, std::size_t> params_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// Hierarchical view of a ParameterStore bound to a tape; `scope["weight"]`
// binds "<prefix>weight".
template <typename T>
class ParamScope {
 public:
  ParamScope(Tape<T>& tape, const ParameterStore<T>& store, std::string prefix = {})
      : tape_(&tape), store_(&store), prefix_(std::move(prefix)) {}

  ParamScope sub(std::string_view name) const {
    return ParamScope(*tape_, *store_, prefix_ + std::string(name) + ".");
  }
  Var<T> operator[](std::string_view leaf) const {
    std::string name = prefix_ + std::string(leaf);
    return tape_->parameter(name, store_->get(name));
  }
  bool has(std::string_view leaf) const { return store_->contains(prefix_ + std::string(leaf)); }
  Tape<T>& tape() const { return *tape_; }
  const std::string& prefix() const { return prefix_; }

 private:
  Tape<T>* tape_;
  const ParameterStore<T>* store_;
  std::string prefix_;
};

namespace ad {

enum class BinaryOp { add, sub, mul };

// Numpy-style broadcasting: shapes align at trailing axes and an extent of 1 stretches.
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T>
Var<T> elementwise_binary(const Var<T>& a, const Var<T>& b, BinaryOp op);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) { return elementwise_binary(a, b, BinaryOp::add); }
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) { return elementwise_binary(a, b, BinaryOp::sub); }
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) { return elementwise_binary(a, b, BinaryOp::mul); }

template <typename T>
Var<T> scale(const Var<T>& a, T factor);
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);
template <typename T>
Var<T> abs(const Var<T>& a);
template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);

// Zero-padded "same" cross-correlation. x: [N,Cin,H,W], w: [Cout,Cin/groups,kH,kW].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, int groups = 1);

// Normalizes over the channel axis at every (n, y, x), then applies gamma/beta per channel.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-6));

template <typename T>
std::pair<Var<T>, Var<T>> split_channels(const Var<T>& x);
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// Depth-to-space: [N, C*r*r, H, W] -> [N, C, H*r, W*r].
template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int factor);
// Space-to-depth: [N, C, H, W] -> [N, C*r*r, H/r, W/r].
template <typename T>
Var<T> pixel_unshuffle(const Var<T>& x, int factor);

// Softmax over consecutive blocks of `taps` channels: [N, G*taps, H, W].
template <typename T>
Var<T> softmax_taps(const Var<T>& w, int groups, int taps);

// Grouped dynamic convolution. x: [N,C,H,W]; w: [N, G*k*k, H, W] holds one
// k x k kernel per group and position; channel c uses group c / (C/G).
template <typename T>
Var<T> dynamic_aggregate(const Var<T>& x, const Var<T>& w, int groups, int kernel);

// Complex layout conversions: [H,W,2] <-> [1,2,H,W].
template <typename T>
Var<T> complex_to_channels(const Var<T>& z);
template <typename T>
Var<T> channels_to_complex(const Var<T>& x);
// |z| over an interleaved [...,2] tensor; the subgradient at z = 0 is zero.
template <typename T>
Var<T> complex_abs(const Var<T>& z);

// Mean absolute error; the subgradient at exact ties is zero.
template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target);

}  // namespace ad
}  // namespace mrirest
