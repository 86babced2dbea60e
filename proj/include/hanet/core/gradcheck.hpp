#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hanet/core/autograd.hpp"

namespace hanet::core {

struct GradcheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Relative errors use max(|analytic|, |numeric|, denominator_floor) so
  // entries with vanishing gradient are judged on absolute error.
  double denominator_floor = 1e-5;
  // When positive, an entry that fails and whose one-sided slopes
  // (f(t+e)-f(t))/e and (f(t)-f(t-e))/e differ by at least
  // kink_ratio * |analytic - numeric| is treated as straddling a
  // non-differentiable point (relu, max) and excluded from max_rel_error.
  // A kink inside the stencil makes the slopes differ by twice the central
  // error; a wrong gradient on a smooth function leaves them close.
  // The check still fails when more than max_kink_fraction of all entries
  // are excluded.
  double kink_ratio = 0.0;
  double max_kink_fraction = 0.01;
};

struct GradcheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t kinks = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
  bool finite = true;
  bool passed = false;
  std::string diagnostic;
};

using NamedVar = std::pair<std::string, Var>;

/// Compares reverse-mode gradients of the scalar `loss_fn` with central
/// finite differences (f(t+e) - f(t-e)) / 2e for every entry of every
/// listed leaf. `loss_fn` must rebuild its graph from the current leaf
/// values and be deterministic.
GradcheckReport gradcheck(const std::function<Var()>& loss_fn, const std::vector<NamedVar>& params,
                          const GradcheckOptions& opts = {});

std::string format_report(const GradcheckReport& report);

}  // namespace hanet::core
