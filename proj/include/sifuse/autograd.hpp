#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sifuse/tensor.hpp"

namespace sifuse {

// Reverse-mode tape. A Var wraps a shared node; ops link result nodes to
// their parents only while grad mode is on and some input is connected to a
// grad-requiring leaf, so inference runs record nothing.
struct VarNode {
  Tensor val;
  Tensor grad;  // allocated on first use, same shape as val
  bool requires_grad = false;
  bool on_tape = false;
  std::vector<std::shared_ptr<VarNode>> parents;
  std::function<void(VarNode&)> backprop;

  void ensure_grad() {
    if (grad.empty()) grad = Tensor(val.c, val.h, val.w);
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor t, bool requires_grad = false)
      : node(std::make_shared<VarNode>()) {
    node->val = std::move(t);
    node->requires_grad = requires_grad;
  }

  bool defined() const { return node != nullptr; }
  const Tensor& val() const { return node->val; }
  Tensor& value() { return node->val; }
  Tensor& grad() {
    node->ensure_grad();
    return node->grad;
  }
  bool requires_grad() const { return node && node->requires_grad; }
  int c() const { return node->val.c; }
  int h() const { return node->val.h; }
  int w() const { return node->val.w; }

  void zero_grad() {
    if (node && !node->grad.empty()) node->grad.fill(0.0);
  }

  std::shared_ptr<VarNode> node;
};

inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}

struct NoGrad {
  bool prev;
  NoGrad() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGrad() { grad_mode() = prev; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

namespace detail {

inline bool connected(const Var& x) {
  return x.node && (x.node->requires_grad || x.node->on_tape);
}

template <typename... Vs>
inline bool tape_active(const Vs&... xs) {
  return grad_mode() && (connected(xs) || ...);
}

inline Var make_result(Tensor val, std::vector<Var> parents,
                       std::function<void(VarNode&)> bp, bool active) {
  Var out(std::move(val));
  if (active) {
    out.node->on_tape = true;
    out.node->parents.reserve(parents.size());
    for (auto& p : parents) out.node->parents.push_back(p.node);
    out.node->backprop = std::move(bp);
  }
  return out;
}

}  // namespace detail

// Runs backprop from a scalar root through every taped node.
inline void backward(const Var& root) {
  if (!root.defined()) throw ParamError("backward: undefined root");
  if (root.val().size() != 1)
    throw ParamError("backward: root must be a scalar");
  if (!root.node->on_tape && !root.node->requires_grad) return;

  // Iterative post-order topological sort.
  std::vector<VarNode*> order;
  std::unordered_set<VarNode*> seen;
  std::vector<std::pair<VarNode*, size_t>> stack;
  stack.push_back({root.node.get(), 0});
  seen.insert(root.node.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      VarNode* p = n->parents[i++].get();
      if (p->on_tape && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node->ensure_grad();
  root.node->grad.v[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VarNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops and reductions.
// ---------------------------------------------------------------------------

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.val().same_shape(b.val()))
    throw ParamError(std::string(op) + ": shape mismatch");
}

inline Var constant(Tensor t) { return Var(std::move(t), false); }

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.val();
  out += b.val();
  return detail::make_result(
      std::move(out), {a, b},
      [a, b](VarNode& n) mutable {
        if (detail::connected(a)) {
          a.node->ensure_grad();
          for (size_t i = 0; i < n.grad.v.size(); ++i)
            a.node->grad.v[i] += n.grad.v[i];
        }
        if (detail::connected(b)) {
          b.node->ensure_grad();
          for (size_t i = 0; i < n.grad.v.size(); ++i)
            b.node->grad.v[i] += n.grad.v[i];
        }
      },
      detail::tape_active(a, b));
}

inline Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.val();
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.val().v[i];
  return detail::make_result(
      std::move(out), {a, b},
      [a, b](VarNode& n) mutable {
        if (detail::connected(a)) {
          a.node->ensure_grad();
          for (size_t i = 0; i < n.grad.v.size(); ++i)
            a.node->grad.v[i] += n.grad.v[i];
        }
        if (detail::connected(b)) {
          b.node->ensure_grad();
          for (size_t i = 0; i < n.grad.v.size(); ++i)
            b.node->grad.v[i] -= n.grad.v[i];
        }
      },
      detail::tape_active(a, b));
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.val();
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.val().v[i];
  return detail::make_result(
      std::move(out), {a, b},
      [a, b](VarNode& n) mutable {
        if (detail::connected(a)) {
          a.node->ensure_grad();
          for (size_t i = 0; i < n.grad.v.size(); ++i)
            a.node->grad.v[i] += n.grad.v[i] * b.val().v[i];
        }
        if (detail::connected(b)) {
          b.node->ensure_grad();
          for (size_t i = 0; i < n.grad.v.size(); ++i)
            b.node->grad.v[i] += n.grad.v[i] * a.val().v[i];
        }
      },
      detail::tape_active(a, b));
}

inline Var mul_scalar(const Var& a, real s) {
  Tensor out = a.val();
  out *= s;
  return detail::make_result(
      std::move(out), {a},
      [a, s](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i)
          a.node->grad.v[i] += n.grad.v[i] * s;
      },
      detail::tape_active(a));
}

inline Var add_scalar(const Var& a, real s) {
  Tensor out = a.val();
  for (auto& x : out.v) x += s;
  return detail::make_result(
      std::move(out), {a},
      [a](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i)
          a.node->grad.v[i] += n.grad.v[i];
      },
      detail::tape_active(a));
}

// s*a + t*b, the workhorse of the closed-form diffusion algebra.
inline Var axpby(real s, const Var& a, real t, const Var& b) {
  check_same_shape(a, b, "axpby");
  Tensor out(a.c(), a.h(), a.w());
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = s * a.val().v[i] + t * b.val().v[i];
  return detail::make_result(
      std::move(out), {a, b},
      [a, b, s, t](VarNode& n) mutable {
        if (detail::connected(a)) {
          a.node->ensure_grad();
          for (size_t i = 0; i < n.grad.v.size(); ++i)
            a.node->grad.v[i] += n.grad.v[i] * s;
        }
        if (detail::connected(b)) {
          b.node->ensure_grad();
          for (size_t i = 0; i < n.grad.v.size(); ++i)
            b.node->grad.v[i] += n.grad.v[i] * t;
        }
      },
      detail::tape_active(a, b));
}

// 1 - a
inline Var one_minus(const Var& a) {
  Tensor out = a.val();
  for (auto& x : out.v) x = 1.0 - x;
  return detail::make_result(
      std::move(out), {a},
      [a](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i)
          a.node->grad.v[i] -= n.grad.v[i];
      },
      detail::tape_active(a));
}

// Elementwise multiply by a constant grid (e.g. a binary mask).
inline Var mul_const(const Var& a, const Tensor& m) {
  if (!a.val().same_shape(m)) throw ParamError("mul_const: shape mismatch");
  Tensor out = a.val();
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= m.v[i];
  return detail::make_result(
      std::move(out), {a},
      [a, m](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i)
          a.node->grad.v[i] += n.grad.v[i] * m.v[i];
      },
      detail::tape_active(a));
}

// min(a, s); at a == s the subgradient is routed to a.
inline Var minimum_scalar(const Var& a, real s) {
  Tensor out = a.val();
  for (auto& x : out.v) x = std::min(x, s);
  return detail::make_result(
      std::move(out), {a},
      [a, s](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i)
          if (a.val().v[i] <= s) a.node->grad.v[i] += n.grad.v[i];
      },
      detail::tape_active(a));
}

// Elementwise max; ties route the gradient to a.
inline Var maximum(const Var& a, const Var& b) {
  check_same_shape(a, b, "maximum");
  Tensor out(a.c(), a.h(), a.w());
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = std::max(a.val().v[i], b.val().v[i]);
  return detail::make_result(
      std::move(out), {a, b},
      [a, b](VarNode& n) mutable {
        for (size_t i = 0; i < n.grad.v.size(); ++i) {
          bool take_a = a.val().v[i] >= b.val().v[i];
          if (take_a && detail::connected(a)) {
            a.node->ensure_grad();
            a.node->grad.v[i] += n.grad.v[i];
          } else if (!take_a && detail::connected(b)) {
            b.node->ensure_grad();
            b.node->grad.v[i] += n.grad.v[i];
          }
        }
      },
      detail::tape_active(a, b));
}

inline Var abs_v(const Var& a) {
  Tensor out = a.val();
  for (auto& x : out.v) x = std::abs(x);
  return detail::make_result(
      std::move(out), {a},
      [a](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i) {
          real x = a.val().v[i];
          real sg = (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
          a.node->grad.v[i] += n.grad.v[i] * sg;
        }
      },
      detail::tape_active(a));
}

inline Var relu(const Var& a) {
  Tensor out = a.val();
  for (auto& x : out.v) x = std::max(x, 0.0);
  return detail::make_result(
      std::move(out), {a},
      [a](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i)
          if (a.val().v[i] > 0.0) a.node->grad.v[i] += n.grad.v[i];
      },
      detail::tape_active(a));
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.val();
  for (auto& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
  Tensor saved = out;
  return detail::make_result(
      std::move(out), {a},
      [a, saved](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i) {
          real s = saved.v[i];
          a.node->grad.v[i] += n.grad.v[i] * s * (1.0 - s);
        }
      },
      detail::tape_active(a));
}

inline Var silu(const Var& a) {
  Tensor out = a.val();
  for (auto& x : out.v) x = x / (1.0 + std::exp(-x));
  return detail::make_result(
      std::move(out), {a},
      [a](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i) {
          real x = a.val().v[i];
          real s = 1.0 / (1.0 + std::exp(-x));
          a.node->grad.v[i] += n.grad.v[i] * (s + x * s * (1.0 - s));
        }
      },
      detail::tape_active(a));
}

inline Var mean_all(const Var& a) {
  real inv = 1.0 / real(a.val().size());
  real s = 0.0;
  for (real x : a.val().v) s += x;
  Tensor out(1, 1, 1);
  out.v[0] = s * inv;
  return detail::make_result(
      std::move(out), {a},
      [a, inv](VarNode& n) mutable {
        a.node->ensure_grad();
        real g = n.grad.v[0] * inv;
        for (auto& x : a.node->grad.v) x += g;
      },
      detail::tape_active(a));
}

inline Var sum_all(const Var& a) {
  real s = 0.0;
  for (real x : a.val().v) s += x;
  Tensor out(1, 1, 1);
  out.v[0] = s;
  return detail::make_result(
      std::move(out), {a},
      [a](VarNode& n) mutable {
        a.node->ensure_grad();
        real g = n.grad.v[0];
        for (auto& x : a.node->grad.v) x += g;
      },
      detail::tape_active(a));
}

inline Var concat_c(const std::vector<Var>& xs) {
  if (xs.empty()) throw ParamError("concat_c: no inputs");
  int h = xs[0].h(), w = xs[0].w(), ctot = 0;
  for (const auto& x : xs) {
    if (x.h() != h || x.w() != w)
      throw ParamError("concat_c: spatial shape mismatch");
    ctot += x.c();
  }
  Tensor out(ctot, h, w);
  size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.val().v.begin(), x.val().v.end(), out.v.begin() + off);
    off += x.val().size();
  }
  bool active = false;
  for (const auto& x : xs) active = active || detail::connected(x);
  active = active && grad_mode();
  return detail::make_result(
      std::move(out), xs,
      [xs](VarNode& n) mutable {
        size_t off = 0;
        for (auto& x : xs) {
          size_t len = x.val().size();
          if (detail::connected(x)) {
            x.node->ensure_grad();
            for (size_t i = 0; i < len; ++i)
              x.node->grad.v[i] += n.grad.v[off + i];
          }
          off += len;
        }
      },
      active);
}

inline Var slice_c(const Var& a, int c0, int c1) {
  if (c0 < 0 || c1 > a.c() || c0 >= c1) throw ParamError("slice_c: bad range");
  Tensor out(c1 - c0, a.h(), a.w());
  size_t plane = size_t(a.h()) * a.w();
  std::copy(a.val().v.begin() + c0 * plane, a.val().v.begin() + c1 * plane,
            out.v.begin());
  return detail::make_result(
      std::move(out), {a},
      [a, c0, plane](VarNode& n) mutable {
        a.node->ensure_grad();
        for (size_t i = 0; i < n.grad.v.size(); ++i)
          a.node->grad.v[c0 * plane + i] += n.grad.v[i];
      },
      detail::tape_active(a));
}

// Numeric finite-difference gradient of f at x, used by gradient-check tests.
template <typename F>
inline Tensor finite_difference(F f, Tensor x, real eps = 1e-6) {
  Tensor g(x.c, x.h, x.w);
  for (size_t i = 0; i < x.v.size(); ++i) {
    real keep = x.v[i];
    x.v[i] = keep + eps;
    real fp = f(x);
    x.v[i] = keep - eps;
    real fm = f(x);
    x.v[i] = keep;
    g.v[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

}  // namespace sifuse
