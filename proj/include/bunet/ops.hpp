#pragma once

// Elementwise, activation, reshape and reduction ops. Every op validates its
// input shapes, computes the forward result into a fresh buffer, and — when
// the ambient tape is recording and an input participates in differentiation —
// registers a backward closure that accumulates into the inputs' gradients.
// Gradients always accumulate (+=), so a tensor feeding several consumers
// receives the sum of all downstream contributions.
//
// Broadcasting is deliberately minimal: binary ops accept equal shapes or one
// scalar operand, nothing else. Channel broadcasts needed by the attention
// blocks are explicit ops (broadcast_channels, scale_channels).

#include <cmath>
#include <string>
#include <vector>

#include "bunet/flops.hpp"
#include "bunet/tape.hpp"
#include "bunet/tensor.hpp"

namespace bunet {

namespace detail {

template <typename S>
void require_valid(const char* op, const Tensor<S>& t, const char* role) {
  if (!t.valid()) fail(std::string(op) + ": " + role + " tensor has no storage");
}

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    fail(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <typename S>
Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> grad_map(Tape<S>& tape, int id) {
  auto& g = tape.grad_of(id);
  return {g.data(), static_cast<Eigen::Index>(g.size())};
}

template <typename S>
Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> cmap(const std::vector<S>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

// Sequential (coefficient-order) sum. Eigen's vectorized redux splits scalar
// and packet lanes by buffer alignment, so its low bits follow the allocation
// address; gradients and loss scalars must not.
template <typename Derived>
typename Derived::Scalar seq_sum(const Eigen::DenseBase<Derived>& e) {
  typename Derived::Scalar acc{};
  for (Eigen::Index i = 0; i < e.size(); ++i) acc += e.derived().coeff(i);
  return acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary elementwise: add / mul / div. Equal shapes, or one scalar operand.
// ---------------------------------------------------------------------------

namespace detail {

enum class BinKind { Add, Mul, Div };

template <typename S>
Tensor<S> binary_op(const char* name, BinKind kind, const Tensor<S>& a, const Tensor<S>& b) {
  require_valid(name, a, "left");
  require_valid(name, b, "right");
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!a_scalar && !b_scalar) require_same_shape(name, a, b);
  const Shape out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();

  Tensor<S> out(out_shape);
  auto oa = out.array();
  if (!a_scalar && !b_scalar) {
    switch (kind) {
      case BinKind::Add: oa = a.array() + b.array(); break;
      case BinKind::Mul: oa = a.array() * b.array(); break;
      case BinKind::Div: oa = a.array() / b.array(); break;
    }
  } else if (b_scalar && !a_scalar) {
    const S bv = b.item();
    switch (kind) {
      case BinKind::Add: oa = a.array() + bv; break;
      case BinKind::Mul: oa = a.array() * bv; break;
      case BinKind::Div: oa = a.array() / bv; break;
    }
  } else if (a_scalar && !b_scalar) {
    const S av = a.item();
    switch (kind) {
      case BinKind::Add: oa = av + b.array(); break;
      case BinKind::Mul: oa = av * b.array(); break;
      case BinKind::Div: oa = av / b.array(); break;
    }
  } else {
    switch (kind) {
      case BinKind::Add: oa(0) = a.item() + b.item(); break;
      case BinKind::Mul: oa(0) = a.item() * b.item(); break;
      case BinKind::Div: oa(0) = a.item() / b.item(); break;
    }
  }

  Tensor<S> ta = a, tb = b;
  auto abuf = a.buffer();
  auto bbuf = b.buffer();
  detail::wire(out, name, {&ta, &tb}, [=](const std::vector<int>& ids) ->
                                          typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      auto gm = cmap(g);
      if (ids[0] >= 0) {
        auto ga = grad_map(tape, ids[0]);
        switch (kind) {
          case BinKind::Add:
            if (a_scalar && !b_scalar) ga(0) += seq_sum(gm);
            else ga += gm;
            break;
          case BinKind::Mul:
            if (a_scalar && !b_scalar) ga(0) += seq_sum(gm * cmap(*bbuf));
            else if (b_scalar && !a_scalar) ga += gm * (*bbuf)[0];
            else ga += gm * cmap(*bbuf);
            break;
          case BinKind::Div:
            if (a_scalar && !b_scalar) ga(0) += seq_sum(gm / cmap(*bbuf));
            else if (b_scalar && !a_scalar) ga += gm / (*bbuf)[0];
            else ga += gm / cmap(*bbuf);
            break;
        }
      }
      if (ids[1] >= 0) {
        auto gb = grad_map(tape, ids[1]);
        switch (kind) {
          case BinKind::Add:
            if (b_scalar && !a_scalar) gb(0) += seq_sum(gm);
            else gb += gm;
            break;
          case BinKind::Mul:
            if (b_scalar && !a_scalar) gb(0) += seq_sum(gm * cmap(*abuf));
            else if (a_scalar && !b_scalar) gb += gm * (*abuf)[0];
            else gb += gm * cmap(*abuf);
            break;
          case BinKind::Div: {
            // d(a/b)/db = -a / b^2
            if (b_scalar && !a_scalar) {
              const S bv = (*bbuf)[0];
              gb(0) += -seq_sum(gm * cmap(*abuf)) / (bv * bv);
            } else if (a_scalar && !b_scalar) {
              const S av = (*abuf)[0];
              gb += -gm * av / (cmap(*bbuf) * cmap(*bbuf));
            } else {
              gb += -gm * cmap(*abuf) / (cmap(*bbuf) * cmap(*bbuf));
            }
            break;
          }
        }
      }
    };
  });
  return out;
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op("add", detail::BinKind::Add, a, b);
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op("mul", detail::BinKind::Mul, a, b);
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op("div", detail::BinKind::Div, a, b);
}

// out = a * x + b with compile-time-constant-like coefficients (not tracked).
template <typename S>
Tensor<S> affine(const Tensor<S>& x, double a, double b) {
  detail::require_valid("affine", x, "input");
  Tensor<S> out(x.shape());
  out.array() = x.array() * static_cast<S>(a) + static_cast<S>(b);
  Tensor<S> tx = x;
  detail::wire(out, "affine", {&tx}, [=](const std::vector<int>& ids) ->
                                         typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] >= 0) detail::grad_map(tape, ids[0]) += detail::cmap(g) * static_cast<S>(a);
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise activations and transcendentals
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  detail::require_valid("relu", x, "input");
  Tensor<S> out(x.shape());
  out.array() = x.array().max(S(0));
  count_flops(static_cast<std::uint64_t>(x.numel()));
  Tensor<S> tx = x;
  auto xbuf = x.buffer();
  detail::wire(out, "relu", {&tx}, [=](const std::vector<int>& ids) ->
                                       typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] < 0) return;
      auto gx = detail::grad_map(tape, ids[0]);
      gx += detail::cmap(g) * (detail::cmap(*xbuf) > S(0)).template cast<S>();
    };
  });
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  detail::require_valid("sigmoid", x, "input");
  Tensor<S> out(x.shape());
  // Scalar loop on purpose: vectorized transcendentals round packet and
  // peeled lanes differently, and the peel split follows the buffer address —
  // which would make results depend on where the allocator placed the data.
  {
    const S* xs = x.data();
    S* os = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) os[i] = S(1) / (S(1) + std::exp(-xs[i]));
  }
  count_flops(static_cast<std::uint64_t>(x.numel()));
  Tensor<S> tx = x;
  auto obuf = out.buffer();
  detail::wire(out, "sigmoid", {&tx}, [=](const std::vector<int>& ids) ->
                                          typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] < 0) return;
      auto o = detail::cmap(*obuf);
      detail::grad_map(tape, ids[0]) += detail::cmap(g) * o * (S(1) - o);
    };
  });
  return out;
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  detail::require_valid("log", x, "input");
  Tensor<S> out(x.shape());
  {
    const S* xs = x.data();  // scalar loop: see sigmoid
    S* os = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) os[i] = std::log(xs[i]);
  }
  Tensor<S> tx = x;
  auto xbuf = x.buffer();
  detail::wire(out, "log", {&tx}, [=](const std::vector<int>& ids) ->
                                      typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] >= 0) detail::grad_map(tape, ids[0]) += detail::cmap(g) / detail::cmap(*xbuf);
    };
  });
  return out;
}

// Clamp to [lo, hi]; the gradient passes through where lo <= x <= hi and is
// zero where the output saturated.
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, double lo, double hi) {
  detail::require_valid("clamp", x, "input");
  if (!(lo <= hi)) fail("clamp: lo must not exceed hi");
  Tensor<S> out(x.shape());
  out.array() = x.array().max(static_cast<S>(lo)).min(static_cast<S>(hi));
  Tensor<S> tx = x;
  auto xbuf = x.buffer();
  detail::wire(out, "clamp", {&tx}, [=](const std::vector<int>& ids) ->
                                        typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] < 0) return;
      auto xv = detail::cmap(*xbuf);
      auto pass = (xv >= static_cast<S>(lo) && xv <= static_cast<S>(hi)).template cast<S>();
      detail::grad_map(tape, ids[0]) += detail::cmap(g) * pass;
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  detail::require_valid("sum", x, "input");
  Tensor<S> out = Tensor<S>::scalar(detail::seq_sum(x.array()));
  Tensor<S> tx = x;
  detail::wire(out, "sum", {&tx}, [=](const std::vector<int>& ids) ->
                                      typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] >= 0) detail::grad_map(tape, ids[0]) += g[0];
    };
  });
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return affine(sum(x), 1.0 / static_cast<double>(x.numel()), 0.0);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

// View with a new shape over the same element order. The result owns a fresh
// buffer (copy) so downstream in-place-free invariants stay trivial.
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, const Shape& shape) {
  detail::require_valid("reshape", x, "input");
  if (shape.numel() != x.numel())
    fail("reshape: cannot view " + x.shape().str() + " as " + shape.str());
  Tensor<S> out = Tensor<S>::of(shape, x.vec());
  Tensor<S> tx = x;
  detail::wire(out, "reshape", {&tx}, [=](const std::vector<int>& ids) ->
                                          typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] >= 0) detail::grad_map(tape, ids[0]) += detail::cmap(g);
    };
  });
  return out;
}

// Concatenate rank-4 tensors along the channel axis.
template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) fail("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.rank != 4) fail("concat_channels: inputs must be rank 4, got " + s0.str());
  int total_c = 0;
  for (const Tensor<S>& p : parts) {
    detail::require_valid("concat_channels", p, "input");
    const Shape& s = p.shape();
    if (s.rank != 4 || s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w())
      fail("concat_channels: incompatible input shapes " + s0.str() + " vs " + s.str());
    total_c += s.c();
  }
  const int N = s0.n(), H = s0.h(), W = s0.w();
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  Tensor<S> out(Shape::nchw(N, total_c, H, W));
  S* od = out.data();
  for (int n = 0; n < N; ++n) {
    std::int64_t coff = 0;
    for (const Tensor<S>& p : parts) {
      const int pc = p.shape().c();
      const S* pd = p.data() + static_cast<std::int64_t>(n) * pc * plane;
      std::copy(pd, pd + static_cast<std::int64_t>(pc) * plane,
                od + (static_cast<std::int64_t>(n) * total_c + coff) * plane);
      coff += pc;
    }
  }

  // Wire manually: the input count is dynamic.
  Tape<S>& tape = Tape<S>::active();
  if (!tape.recording()) return out;
  std::vector<int> ids(parts.size(), -1);
  std::vector<int> edges;
  bool any = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    Tensor<S> p = parts[i];
    if (on_tape(p))
      ids[i] = p.state().node;
    else if (p.requires_grad())
      ids[i] = tape.ensure_leaf(p);
    if (ids[i] >= 0) {
      edges.push_back(ids[i]);
      any = true;
    }
  }
  if (!any) return out;
  std::vector<int> chans;
  for (const Tensor<S>& p : parts) chans.push_back(p.shape().c());
  auto fn = [=](Tape<S>& t, const std::vector<S>& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0) continue;
      std::int64_t coff = 0;
      for (std::size_t j = 0; j < i; ++j) coff += chans[j];
      auto& gp = t.grad_of(ids[i]);
      const std::int64_t pc = chans[i];
      for (int n = 0; n < N; ++n) {
        const S* gsrc = g.data() + (static_cast<std::int64_t>(n) * total_c + coff) * plane;
        S* gdst = gp.data() + static_cast<std::int64_t>(n) * pc * plane;
        for (std::int64_t k = 0; k < pc * plane; ++k) gdst[k] += gsrc[k];
      }
    }
  };
  out.state().node = tape.add_node("concat_channels", std::move(edges), out.numel(), std::move(fn));
  out.state().epoch = tape.epoch();
  out.state().requires_grad = true;
  return out;
}

// Split along the channel axis into parts of the given sizes (must sum to C).
template <typename S>
std::vector<Tensor<S>> split_channels(const Tensor<S>& x, const std::vector<int>& sizes) {
  detail::require_valid("split_channels", x, "input");
  if (x.rank() != 4) fail("split_channels: input must be rank 4, got " + x.shape().str());
  int total = 0;
  for (int s : sizes) {
    if (s <= 0) fail("split_channels: part sizes must be positive");
    total += s;
  }
  if (total != x.shape().c())
    fail("split_channels: part sizes sum to " + std::to_string(total) + " but input has C=" +
         std::to_string(x.shape().c()));
  const int N = x.shape().n(), C = x.shape().c(), H = x.shape().h(), W = x.shape().w();
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;

  std::vector<Tensor<S>> parts;
  int coff = 0;
  for (int pc : sizes) {
    Tensor<S> p(Shape::nchw(N, pc, H, W));
    for (int n = 0; n < N; ++n) {
      const S* src = x.data() + (static_cast<std::int64_t>(n) * C + coff) * plane;
      std::copy(src, src + static_cast<std::int64_t>(pc) * plane,
                p.data() + static_cast<std::int64_t>(n) * pc * plane);
    }
    Tensor<S> tx = x;
    const int off_now = coff;
    detail::wire(p, "split_channels", {&tx}, [=](const std::vector<int>& ids) ->
                                                 typename Tape<S>::BackwardFn {
      return [=](Tape<S>& tape, const std::vector<S>& g) {
        if (ids[0] < 0) return;
        auto& gx = tape.grad_of(ids[0]);
        for (int n = 0; n < N; ++n) {
          S* dst = gx.data() + (static_cast<std::int64_t>(n) * C + off_now) * plane;
          const S* src = g.data() + static_cast<std::int64_t>(n) * pc * plane;
          for (std::int64_t k = 0; k < static_cast<std::int64_t>(pc) * plane; ++k)
            dst[k] += src[k];
        }
      };
    });
    parts.push_back(std::move(p));
    coff += pc;
  }
  return parts;
}

// Repeat a single-channel map across C channels: (N,1,H,W) -> (N,C,H,W).
template <typename S>
Tensor<S> broadcast_channels(const Tensor<S>& x, int channels) {
  detail::require_valid("broadcast_channels", x, "input");
  if (x.rank() != 4 || x.shape().c() != 1)
    fail("broadcast_channels: input must be (N,1,H,W), got " + x.shape().str());
  if (channels <= 0) fail("broadcast_channels: channel count must be positive");
  const int N = x.shape().n(), H = x.shape().h(), W = x.shape().w();
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  Tensor<S> out(Shape::nchw(N, channels, H, W));
  for (int n = 0; n < N; ++n) {
    const S* src = x.data() + n * plane;
    for (int c = 0; c < channels; ++c)
      std::copy(src, src + plane,
                out.data() + (static_cast<std::int64_t>(n) * channels + c) * plane);
  }
  Tensor<S> tx = x;
  detail::wire(out, "broadcast_channels", {&tx}, [=](const std::vector<int>& ids) ->
                                                     typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] < 0) return;
      auto& gx = tape.grad_of(ids[0]);
      for (int n = 0; n < N; ++n) {
        S* dst = gx.data() + n * plane;
        for (int c = 0; c < channels; ++c) {
          const S* src = g.data() + (static_cast<std::int64_t>(n) * channels + c) * plane;
          for (std::int64_t k = 0; k < plane; ++k) dst[k] += src[k];
        }
      }
    };
  });
  return out;
}

// Multiply each (n, c) spatial plane of x by the scalar s[n, c].
// x: (N,C,H,W), s: (N,C). Differentiable in both arguments.
template <typename S>
Tensor<S> scale_channels(const Tensor<S>& x, const Tensor<S>& s) {
  detail::require_valid("scale_channels", x, "input");
  detail::require_valid("scale_channels", s, "scale");
  if (x.rank() != 4) fail("scale_channels: input must be rank 4, got " + x.shape().str());
  if (s.rank() != 2 || s.shape()[0] != x.shape().n() || s.shape()[1] != x.shape().c())
    fail("scale_channels: scale must be (N,C)=" + Shape{x.shape().n(), x.shape().c()}.str() +
         ", got " + s.shape().str());
  const int N = x.shape().n(), C = x.shape().c(), H = x.shape().h(), W = x.shape().w();
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  Tensor<S> out(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
      const S sv = s.data()[n * C + c];
      for (std::int64_t k = 0; k < plane; ++k) out.data()[off + k] = x.data()[off + k] * sv;
    }
  Tensor<S> tx = x, ts = s;
  auto xbuf = x.buffer();
  auto sbuf = s.buffer();
  detail::wire(out, "scale_channels", {&tx, &ts}, [=](const std::vector<int>& ids) ->
                                                      typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] >= 0) {
        auto& gx = tape.grad_of(ids[0]);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
            const S sv = (*sbuf)[n * C + c];
            for (std::int64_t k = 0; k < plane; ++k) gx[off + k] += g[off + k] * sv;
          }
      }
      if (ids[1] >= 0) {
        auto& gs = tape.grad_of(ids[1]);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
            S acc = S(0);
            for (std::int64_t k = 0; k < plane; ++k) acc += g[off + k] * (*xbuf)[off + k];
            gs[n * C + c] += acc;
          }
      }
    };
  });
  return out;
}

}  // namespace bunet
