#pragma once

#include <string>
#include <vector>

#include "hanet/attention.hpp"
#include "hanet/core/gradcheck.hpp"

namespace hanet::verify {

struct CaseResult {
  std::string label;  // human-readable configuration
  core::GradcheckReport report;
};

struct SuiteResult {
  std::vector<CaseResult> cases;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Random HANet configurations (C_l in {4,8,16}, r in {2,4}, H_hat in
// {2,4,8}, every positional-encoding mode), each checked through
// forward + weighted-sum loss with respect to both inputs and all parameters.
SuiteResult hanet_suite(std::uint64_t seed, std::size_t count, const core::GradcheckOptions& opts);

// Tiny toy segmentation model with HANet at all five layers, cross-entropy loss.
SuiteResult model_suite(std::uint64_t seed, const core::GradcheckOptions& opts);

std::string format_suite(const std::string& title, const SuiteResult& suite, double tolerance);

}  // namespace hanet::verify
