#pragma once

// Reverse-mode autodiff tape. One ambient tape per scalar type per thread;
// ops append nodes in creation order, so node ids are already a topological
// order and backward() is a single descending scan from the loss node.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bunet/tensor.hpp"

namespace bunet {

namespace detail {
// Nesting depth of NoGradGuard scopes. Shared across scalar types so a single
// guard disables recording on every tape.
inline thread_local int no_grad_depth = 0;
}  // namespace detail

// Disables tape recording for its lifetime (evaluation / finite-difference
// probes). Nestable.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
class Tape {
 public:
  // Receives the accumulated output gradient and adds each input's
  // contribution into grad_of(input id).
  using BackwardFn = std::function<void(Tape&, const std::vector<S>&)>;

  struct Node {
    const char* op;                         // op name, for diagnostics
    std::vector<int> inputs;                // differentiable input node ids
    std::int64_t numel = 0;                 // output element count
    std::shared_ptr<std::vector<S>> grad;   // lazily allocated by backward
    BackwardFn backward;                    // null for leaves
  };

  static Tape& active() {
    thread_local Tape tape;
    return tape;
  }

  bool recording() const { return detail::no_grad_depth == 0; }
  std::uint64_t epoch() const { return epoch_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[id]; }

  // Registers a requires_grad tensor as a leaf (no-op if already registered
  // this epoch). The leaf's gradient buffer is shared with the tape node, so
  // backward() writes are visible through the tensor.
  int ensure_leaf(Tensor<S>& t) {
    auto& st = t.state();
    if (st.node >= 0 && st.epoch == epoch_) return st.node;
    if (!st.grad)
      st.grad = std::make_shared<std::vector<S>>(t.numel(), S(0));
    else
      st.grad->assign(t.numel(), S(0));
    Node n;
    n.op = "leaf";
    n.numel = t.numel();
    n.grad = st.grad;
    nodes_.push_back(std::move(n));
    st.node = static_cast<int>(nodes_.size()) - 1;
    st.epoch = epoch_;
    consumed_ = false;
    return st.node;
  }

  int add_node(const char* op, std::vector<int> inputs, std::int64_t numel, BackwardFn fn) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.numel = numel;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    consumed_ = false;  // fresh forward work re-arms backward
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Gradient buffer of a node, allocated zeroed on first touch. Lazy
  // allocation doubles as the reachability test in backward().
  std::vector<S>& grad_of(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad) n.grad = std::make_shared<std::vector<S>>(n.numel, S(0));
    return *n.grad;
  }

  // Reverse accumulation from the given root node. Node creation order is a
  // topological order, so one descending pass suffices; nodes backward()
  // never reached keep a null gradient buffer and are skipped.
  void run_backward(int root) {
    if (consumed_)
      fail("backward: tape already consumed; run a fresh forward pass before calling backward again");
    if (root < 0 || root >= static_cast<int>(nodes_.size()))
      fail("backward: root tensor is not on the tape (was it computed under NoGradGuard?)");
    grad_of(root).assign(nodes_[root].numel, S(0));
    (*nodes_[root].grad)[0] = S(1);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.grad || !n.backward) continue;
      n.backward(*this, *n.grad);
      n.grad.reset();  // intermediate gradient is fully propagated; free it
    }
    consumed_ = true;
  }

  // Discards all recorded nodes and invalidates every node id handed out so
  // far (tensors keep their values, they just drop off the tape).
  void reset() {
    nodes_.clear();
    ++epoch_;
    consumed_ = false;
  }

 private:
  std::vector<Node> nodes_;
  std::uint64_t epoch_ = 1;
  bool consumed_ = false;
};

// True when `t` carries a live autograd identity on the current tape epoch.
template <typename S>
bool on_tape(const Tensor<S>& t) {
  const auto& st = t.state();
  return st.node >= 0 && st.epoch == Tape<S>::active().epoch();
}

namespace detail {

// Wires `out` to the tape as the result of `op` over `ins`, if recording and
// at least one input participates in differentiation. `make_backward` receives
// the resolved node id per input (-1 where an input does not participate) and
// returns the node's backward closure.
template <typename S, typename F>
void wire(Tensor<S>& out, const char* op, std::initializer_list<Tensor<S>*> ins,
          F&& make_backward) {
  Tape<S>& tape = Tape<S>::active();
  if (!tape.recording()) return;
  std::vector<int> ids;
  ids.reserve(ins.size());
  bool any = false;
  for (Tensor<S>* in : ins) {
    int id = -1;
    if (in && in->valid()) {
      if (on_tape(*in))
        id = in->state().node;
      else if (in->requires_grad())
        id = tape.ensure_leaf(*in);
    }
    ids.push_back(id);
    any = any || id >= 0;
  }
  if (!any) return;
  std::vector<int> edge_ids;
  for (int id : ids)
    if (id >= 0) edge_ids.push_back(id);
  auto fn = make_backward(ids);
  out.state().node = tape.add_node(op, std::move(edge_ids), out.numel(), std::move(fn));
  out.state().epoch = tape.epoch();
  out.state().requires_grad = true;
}

}  // namespace detail

// Seeds d(root)/d(root) = 1 and propagates gradients back to every reachable
// leaf. The root must be scalar. A second call without new forward work is an
// error; gradients of a shared input accumulate across all of its uses.
template <typename S>
void backward(Tensor<S>& root) {
  if (root.numel() != 1)
    fail("backward: root must be a scalar, got shape " + root.shape().str());
  if (!on_tape(root))
    fail("backward: root tensor is not on the tape (was it computed under NoGradGuard?)");
  Tape<S>::active().run_backward(root.state().node);
}

}  // namespace bunet
