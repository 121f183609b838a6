#pragma once

#include <cmath>
#include <vector>

#include "sifuse/autograd.hpp"
#include "sifuse/tensor.hpp"

namespace sifuse {

// Variance schedule tables. Timesteps are 1-indexed: betas[t-1] belongs to
// timestep t, and alpha_bar(0) == 1 so boundary formulas stay closed-form.
struct NoiseSchedule {
  int t_train = 0;
  std::vector<real> betas;
  std::vector<real> alphas;
  std::vector<real> alpha_bars;

  real beta(int t) const {
    check_t(t);
    return betas[t - 1];
  }
  real alpha(int t) const {
    check_t(t);
    return alphas[t - 1];
  }
  real alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_t(t);
    return alpha_bars[t - 1];
  }

  void check_t(int t) const {
    if (t < 1 || t > t_train)
      throw ParamError("NoiseSchedule: timestep out of range [1, T]");
  }

  void validate() const {
    if (t_train < 1 || int(betas.size()) != t_train ||
        int(alphas.size()) != t_train || int(alpha_bars.size()) != t_train)
      throw ContractError("NoiseSchedule: inconsistent table sizes");
    real prev_beta = 0.0, prev_bar = 1.0;
    for (int i = 0; i < t_train; ++i) {
      if (!(betas[i] > 0.0 && betas[i] < 1.0))
        throw ContractError("NoiseSchedule: beta out of (0,1)");
      if (betas[i] < prev_beta)
        throw ContractError("NoiseSchedule: betas must be non-decreasing");
      if (alphas[i] != 1.0 - betas[i])
        throw ContractError("NoiseSchedule: alpha != 1 - beta");
      if (!(alpha_bars[i] < prev_bar))
        throw ContractError("NoiseSchedule: alpha_bars must strictly decrease");
      prev_beta = betas[i];
      prev_bar = alpha_bars[i];
    }
    if (!(alpha_bars[t_train - 1] > 0.0))
      throw ContractError("NoiseSchedule: alpha_bar(T) must stay positive");
  }
};

// Linear beta ramp from beta_min to beta_max over T steps.
inline NoiseSchedule build_schedule(int t_train, real beta_min, real beta_max) {
  if (t_train < 1) throw ParamError("build_schedule: T must be >= 1");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
    throw ParamError("build_schedule: need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.t_train = t_train;
  s.betas.resize(t_train);
  s.alphas.resize(t_train);
  s.alpha_bars.resize(t_train);
  real bar = 1.0;
  for (int i = 0; i < t_train; ++i) {
    real frac = t_train == 1 ? 0.0 : real(i) / real(t_train - 1);
    s.betas[i] = beta_min + (beta_max - beta_min) * frac;
    s.alphas[i] = 1.0 - s.betas[i];
    bar *= s.alphas[i];
    s.alpha_bars[i] = bar;
  }
  s.validate();
  return s;
}

// Inference plan: strictly decreasing timestep indices, both endpoints
// anchored (first = T, last = 1 when n_steps > 1).
struct TimestepPlan {
  std::vector<int> steps;

  size_t size() const { return steps.size(); }
  int operator[](size_t i) const { return steps[i]; }
  // Timestep the chain moves to after position i (0 past the final step).
  int next_after(size_t i) const {
    return i + 1 < steps.size() ? steps[i + 1] : 0;
  }
};

inline TimestepPlan subsample_timesteps(int t_train, int n_steps) {
  if (n_steps < 1) throw ParamError("subsample_timesteps: n_steps must be >= 1");
  if (n_steps > t_train)
    throw ParamError("subsample_timesteps: n_steps exceeds T");
  TimestepPlan plan;
  plan.steps.resize(n_steps);
  if (n_steps == 1) {
    plan.steps[0] = t_train;
    return plan;
  }
  for (int i = 0; i < n_steps; ++i) {
    real x = real(t_train) +
             (real(1) - real(t_train)) * real(i) / real(n_steps - 1);
    plan.steps[i] = int(std::lround(x));
  }
  // Uniform spacing >= 1 guarantees strict decrease after rounding.
  for (int i = 1; i < n_steps; ++i)
    if (plan.steps[i] >= plan.steps[i - 1])
      throw ContractError("subsample_timesteps: plan not strictly decreasing");
  return plan;
}

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
inline Tensor forward_sample(const Tensor& z0, int t, const Tensor& eps,
                             const NoiseSchedule& s) {
  if (!z0.same_shape(eps)) throw ParamError("forward_sample: shape mismatch");
  real ab = s.alpha_bar(t);
  real c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
  Tensor out(z0.c, z0.h, z0.w);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = c0 * z0.v[i] + c1 * eps.v[i];
  return out;
}

// Single-step deterministic estimate of the initial latent:
// (z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
inline Tensor estimate_x0(const Tensor& z_t, const Tensor& eps, int t,
                          const NoiseSchedule& s) {
  if (!z_t.same_shape(eps)) throw ParamError("estimate_x0: shape mismatch");
  real ab = s.alpha_bar(t);
  if (!(ab > 0.0)) throw ParamError("estimate_x0: alpha_bar must be positive");
  real c1 = std::sqrt(1.0 - ab), inv0 = 1.0 / std::sqrt(ab);
  Tensor out(z_t.c, z_t.h, z_t.w);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = (z_t.v[i] - c1 * eps.v[i]) * inv0;
  return out;
}

// Deterministic reverse transition to t_next:
// z_{t_next} = sqrt(abar_{t_next}) x0_hat + sqrt(1 - abar_{t_next}) eps
inline Tensor ddim_step(const Tensor& x0_hat, const Tensor& eps, int t_next,
                        const NoiseSchedule& s) {
  if (!x0_hat.same_shape(eps)) throw ParamError("ddim_step: shape mismatch");
  real ab = s.alpha_bar(t_next);
  real c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
  Tensor out(x0_hat.c, x0_hat.h, x0_hat.w);
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = c0 * x0_hat.v[i] + c1 * eps.v[i];
  return out;
}

// Var twins for the gradient-carrying fusion path.
inline Var estimate_x0(const Var& z_t, const Var& eps, int t,
                       const NoiseSchedule& s) {
  real ab = s.alpha_bar(t);
  if (!(ab > 0.0)) throw ParamError("estimate_x0: alpha_bar must be positive");
  real inv0 = 1.0 / std::sqrt(ab);
  return axpby(inv0, z_t, -std::sqrt(1.0 - ab) * inv0, eps);
}

inline Var ddim_step(const Var& x0_hat, const Var& eps, int t_next,
                     const NoiseSchedule& s) {
  real ab = s.alpha_bar(t_next);
  return axpby(std::sqrt(ab), x0_hat, std::sqrt(1.0 - ab), eps);
}

}  // namespace sifuse
