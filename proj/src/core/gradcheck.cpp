#include "hanet/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "hanet/core/errors.hpp"

namespace hanet::core {
namespace {

double scalar_of(const Var& v) {
  if (v.value().size() != 1) throw ShapeError("gradcheck: loss must be a scalar");
  return v.value()[0];
}

}  // namespace

GradcheckReport gradcheck(const std::function<Var()>& loss_fn, const std::vector<NamedVar>& params,
                          const GradcheckOptions& opts) {
  if (!(opts.epsilon > 0.0)) throw ConfigError("gradcheck: epsilon must be positive");
  GradcheckReport report;

  for (const auto& [name, p] : params) {
    Var(p).zero_grad();
  }
  Var loss = loss_fn();
  const double base = scalar_of(loss);
  if (!std::isfinite(base)) {
    report.finite = false;
    report.diagnostic = "loss is not finite at the unperturbed point";
    return report;
  }
  backward(loss);

  for (const auto& [name, p] : params) {
    Var param = p;
    GradcheckEntry entry{name, param.value().size(), 0.0, 0.0, 0};
    const Tensor analytic = param.has_grad() ? param.grad() : Tensor::zeros_like(param.value());
    Tensor& theta = param.mutable_value();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + opts.epsilon;
      const double up = scalar_of(loss_fn());
      theta[i] = saved - opts.epsilon;
      const double down = scalar_of(loss_fn());
      theta[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.finite = false;
        report.diagnostic = "loss is not finite when perturbing " + name + "[" + std::to_string(i) + "]";
        report.entries.push_back(entry);
        return report;
      }
      const double numeric = (up - down) / (2.0 * opts.epsilon);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opts.denominator_floor});
      const double rel = abs_err / denom;
      ++report.checked;
      if (opts.kink_ratio > 0.0 && rel >= opts.tolerance) {
        const double right = (up - base) / opts.epsilon;
        const double left = (base - down) / opts.epsilon;
        if (std::abs(right - left) >= opts.kink_ratio * abs_err) {
          ++entry.kinks;
          continue;
        }
      }
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.kinks += entry.kinks;
    report.entries.push_back(entry);
  }
  const bool kinks_ok =
      static_cast<double>(report.kinks) <= opts.max_kink_fraction * static_cast<double>(report.checked);
  report.passed = report.finite && report.max_rel_error < opts.tolerance && kinks_ok;
  if (!report.passed && report.diagnostic.empty()) {
    std::ostringstream os;
    if (report.max_rel_error >= opts.tolerance) {
      os << "max relative error " << report.max_rel_error << " exceeds tolerance " << opts.tolerance;
    } else {
      os << report.kinks << " of " << report.checked << " entries disagree one-sided (non-smooth or epsilon too large)";
    }
    report.diagnostic = os.str();
  }
  return report;
}

std::string format_report(const GradcheckReport& report) {
  std::ostringstream os;
  char line[256];
  for (const auto& e : report.entries) {
    std::snprintf(line, sizeof line, "  %-28s n=%-6zu max_rel=%.3e max_abs=%.3e%s\n", e.name.c_str(), e.count,
                  e.max_rel_error, e.max_abs_error, e.kinks ? (" kinks=" + std::to_string(e.kinks)).c_str() : "");
    os << line;
  }
  std::snprintf(line, sizeof line, "  overall max_rel=%.3e %s\n", report.max_rel_error,
                report.passed ? "PASS" : "FAIL");
  os << line;
  if (!report.diagnostic.empty()) os << "  " << report.diagnostic << "\n";
  return os.str();
}

}  // namespace hanet::core
