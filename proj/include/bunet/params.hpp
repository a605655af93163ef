#pragma once

// Named parameter registry. Every layer registers its tensors here under a
// dotted hierarchical name ("dec2.fuse.conv.weight"); the optimizer,
// checkpoint writer and tests all address parameters by that name. Entries
// carry two flags: learnable (receives gradients and optimizer updates; false
// for batch-norm running statistics) and decay (participates in weight decay;
// true for convolution weights and batch-norm gains, false for biases and
// batch-norm shifts).
//
// Initialization draws each parameter from its own SplitMix64 stream seeded by
// global_seed ^ FNV1a(name), so the values a parameter receives depend only on
// the seed and its own name — toggling unrelated modules on or off cannot
// shift them.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "bunet/rng.hpp"
#include "bunet/tensor.hpp"

namespace bunet {

template <typename S>
struct ParamEntry {
  std::string name;
  Tensor<S> tensor;  // aliases the owning layer's tensor (shared storage)
  bool learnable = true;
  bool decay = true;
};

template <typename S>
class ModuleParams {
 public:
  Tensor<S>& add(const std::string& name, Tensor<S> t, bool learnable, bool decay) {
    if (index_.count(name)) fail("ModuleParams: duplicate parameter name '" + name + "'");
    if (learnable) t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back(ParamEntry<S>{name, std::move(t), learnable, decay});
    return entries_.back().tensor;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail("ModuleParams: no parameter named '" + name + "'");
    return entries_[it->second].tensor;
  }

  const std::vector<ParamEntry<S>>& entries() const { return entries_; }
  std::vector<ParamEntry<S>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Total scalar count of learnable parameters.
  std::int64_t learnable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.learnable) n += e.tensor.numel();
    return n;
  }

 private:
  std::vector<ParamEntry<S>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Kaiming-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in), drawn
// from the parameter's own name-derived stream.
template <typename S>
Tensor<S> kaiming_uniform(const Shape& shape, std::int64_t fan_in, std::uint64_t seed,
                          const std::string& name) {
  if (fan_in <= 0) fail("kaiming_uniform: fan_in must be positive");
  SplitMix64 rng(stream_seed(seed, name));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<S> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace bunet
