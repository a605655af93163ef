#pragma once

// Forward-pass FLOP accounting. Ops report their cost to a thread-local
// counter while a FlopScope is alive; counting a model therefore exercises the
// exact code path that inference runs, instead of re-deriving shapes.
//
// Convention: convolutions count 2 * k_elems * (Cin/groups) FLOPs per output
// element (multiply + add) plus one add per output element when biased;
// batch norm counts 2 per element (scale + shift); activations count 1 per
// element. Pooling, upsampling and pure data movement are not counted.

#include <cstdint>

namespace bunet {

namespace detail {
struct FlopCounter {
  bool active = false;
  std::uint64_t flops = 0;
};
inline thread_local FlopCounter flop_counter;
}  // namespace detail

inline void count_flops(std::uint64_t n) {
  if (detail::flop_counter.active) detail::flop_counter.flops += n;
}

class FlopScope {
 public:
  FlopScope() {
    detail::flop_counter.active = true;
    detail::flop_counter.flops = 0;
  }
  ~FlopScope() { detail::flop_counter.active = false; }
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

  std::uint64_t flops() const { return detail::flop_counter.flops; }
};

}  // namespace bunet
