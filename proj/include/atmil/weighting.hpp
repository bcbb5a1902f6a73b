#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "atmil/errors.hpp"
#include "atmil/params.hpp"

namespace atmil {

// Combines the main-task and auxiliary-task gradients over the shared
// parameter partition: g_combined = main_scale * g_main + w_used * g_aux.
// Head gradients are not touched here; each head is trained by its own loss
// alone. All strategies sit behind combine(); the adaptive one descends the
// squared distance between the main gradient and the w-scaled auxiliary
// gradient, so w tracks how much of the main direction the auxiliary task
// can explain.

enum class Strategy { none, uniform, wl, gradnorm, adaloss, cossim, olaux, atmil };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::none: return "none";
    case Strategy::uniform: return "uniform";
    case Strategy::wl: return "wl";
    case Strategy::gradnorm: return "gradnorm";
    case Strategy::adaloss: return "adaloss";
    case Strategy::cossim: return "cossim";
    case Strategy::olaux: return "olaux";
    case Strategy::atmil: return "atmil";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  for (Strategy st : {Strategy::none, Strategy::uniform, Strategy::wl, Strategy::gradnorm,
                      Strategy::adaloss, Strategy::cossim, Strategy::olaux, Strategy::atmil})
    if (s == strategy_name(st)) return st;
  throw ConfigError("unknown strategy '" + s + "'");
}

struct StrategyConfig {
  Strategy strategy = Strategy::atmil;
  double beta = 0.05;      // task-weight learning rate
  double gamma = 0.5;      // epoch decay base for wl
  double w_init = 1.0;
  double w_max = 10.0;
  double ema_decay = 0.9;

  void validate() const {
    if (beta <= 0.0) throw ConfigError("beta must be positive");
    if (gamma <= 0.0 || gamma >= 1.0) throw ConfigError("gamma must be in (0,1)");
    if (w_max <= 0.0) throw ConfigError("w_max must be positive");
    if (w_init < 0.0 || w_init > w_max) throw ConfigError("w_init must be in [0, w_max]");
    if (ema_decay < 0.0 || ema_decay >= 1.0) throw ConfigError("ema_decay must be in [0,1)");
  }
};

struct TaskWeightState {
  double w = 1.0;
  long step = 0;
  long epoch = 0;
  double ema_aux_loss = 0.0;
  double ema_ratio = 0.0;

  static TaskWeightState init(const StrategyConfig& cfg) {
    cfg.validate();
    TaskWeightState s;
    s.w = cfg.w_init;
    return s;
  }
};

struct CombineInput {
  const GradVector* g_main = nullptr;
  const GradVector* g_aux = nullptr;
  double loss_main = 0.0;
  double loss_aux = 0.0;
  long epoch = 0;
};

struct CombineDiagnostics {
  double dot = 0.0;
  double norm_main = 0.0;
  double norm_aux = 0.0;
  double cosine = 0.0;
  bool clamped = false;
};

struct CombineOutput {
  GradVector g_combined;
  double w_used = 0.0;
  double main_scale = 1.0;
  CombineDiagnostics diag;
};

namespace detail {
inline double clamp_w(double w, double w_max, bool& clamped) {
  double c = std::clamp(w, 0.0, w_max);
  if (c != w) clamped = true;
  return c;
}
}  // namespace detail

/// One gradient-descent step on || g_main - w * g_aux ||^2 in w:
/// d/dw = -2 g_aux . (g_main - w g_aux), so w += 2 beta (dot - w ||g_aux||^2).
/// The fixed point is dot / ||g_aux||^2; a zero auxiliary gradient leaves w
/// unchanged.
inline double update_w_adaptive(double w, double dot_main_aux, double aux_norm_sq, double beta) {
  return w + 2.0 * beta * (dot_main_aux - w * aux_norm_sq);
}

/// Epoch-indexed annealing: main weight 1 - gamma^epoch, aux weight
/// gamma^epoch. Training starts auxiliary-heavy and hands over to the main
/// task as epochs accumulate.
inline std::pair<double, double> update_w_wl(long epoch, const StrategyConfig& cfg) {
  double aux = std::pow(cfg.gamma, static_cast<double>(epoch));
  return {1.0 - aux, aux};
}

/// Balances gradient magnitudes: EMA of ||g_main|| / ||g_aux||.
inline double update_w_gradnorm(double norm_main, double norm_aux, TaskWeightState& state,
                                const StrategyConfig& cfg, bool& clamped) {
  if (norm_aux == 0.0) return state.w;  // nothing to balance against
  double target = norm_main / (norm_aux + 1e-12);
  state.ema_ratio = cfg.ema_decay * state.ema_ratio + (1.0 - cfg.ema_decay) * target;
  return detail::clamp_w(state.ema_ratio, cfg.w_max, clamped);
}

/// Chain-rule weight of log(L_aux + eps): w = 1 / (ema(L_aux) + eps).
inline double update_w_adaloss(double loss_aux, TaskWeightState& state, const StrategyConfig& cfg,
                               bool& clamped) {
  state.ema_aux_loss = cfg.ema_decay * state.ema_aux_loss + (1.0 - cfg.ema_decay) * loss_aux;
  return detail::clamp_w(1.0 / (state.ema_aux_loss + 1e-8), cfg.w_max, clamped);
}

/// Hard gate on gradient agreement: contribute fully iff cosine > 0.
/// Zero-norm gradients count as disagreement.
inline double update_w_cossim(double cosine) { return cosine > 0.0 ? 1.0 : 0.0; }

/// Per-step ascent on the normalized inner product of the task gradients.
inline double update_w_olaux(double dot, double norm_main, double norm_aux,
                             TaskWeightState& state, const StrategyConfig& cfg, bool& clamped) {
  double normalized = dot / (norm_main * norm_aux + 1e-12);
  return detail::clamp_w(state.w + cfg.beta * normalized, cfg.w_max, clamped);
}

inline CombineOutput combine(const CombineInput& input, TaskWeightState& state,
                             const StrategyConfig& cfg) {
  cfg.validate();
  if (!input.g_main || !input.g_aux) throw UsageError("combine: missing gradient inputs");
  require_same_layout(*input.g_main, *input.g_aux, "combine");
  if (!all_finite(input.g_main->values) || !all_finite(input.g_aux->values))
    throw NumericError("combine: non-finite gradient");
  if (!std::isfinite(input.loss_main) || !std::isfinite(input.loss_aux))
    throw NumericError("combine: non-finite loss");

  CombineOutput out;
  out.diag.dot = grad_dot(*input.g_main, *input.g_aux);
  out.diag.norm_main = grad_norm(*input.g_main);
  out.diag.norm_aux = grad_norm(*input.g_aux);
  out.diag.cosine = (out.diag.norm_main > 0.0 && out.diag.norm_aux > 0.0)
                        ? out.diag.dot / (out.diag.norm_main * out.diag.norm_aux)
                        : 0.0;

  state.epoch = input.epoch;
  // Stateful strategies update w first and combine with the fresh value.
  switch (cfg.strategy) {
    case Strategy::none:
      out.w_used = 0.0;
      break;
    case Strategy::uniform:
      out.w_used = 1.0;
      break;
    case Strategy::wl: {
      auto [main_scale, aux_w] = update_w_wl(input.epoch, cfg);
      out.main_scale = main_scale;
      out.w_used = aux_w;
      break;
    }
    case Strategy::gradnorm:
      state.w = update_w_gradnorm(out.diag.norm_main, out.diag.norm_aux, state, cfg,
                                  out.diag.clamped);
      out.w_used = state.w;
      break;
    case Strategy::adaloss:
      state.w = update_w_adaloss(input.loss_aux, state, cfg, out.diag.clamped);
      out.w_used = state.w;
      break;
    case Strategy::cossim:
      out.w_used = update_w_cossim(out.diag.cosine);
      break;
    case Strategy::olaux:
      state.w = update_w_olaux(out.diag.dot, out.diag.norm_main, out.diag.norm_aux, state, cfg,
                               out.diag.clamped);
      out.w_used = state.w;
      break;
    case Strategy::atmil: {
      double aux_sq = out.diag.norm_aux * out.diag.norm_aux;
      state.w = detail::clamp_w(update_w_adaptive(state.w, out.diag.dot, aux_sq, cfg.beta),
                                cfg.w_max, out.diag.clamped);
      out.w_used = state.w;
      break;
    }
  }
  ++state.step;

  out.g_combined.layout = input.g_main->layout;
  out.g_combined.values.resize(input.g_main->values.size());
  const double ms = out.main_scale, wa = out.w_used;
  for (size_t i = 0; i < out.g_combined.values.size(); ++i)
    out.g_combined.values[i] = ms * input.g_main->values[i] + wa * input.g_aux->values[i];
  return out;
}

}  // namespace atmil
