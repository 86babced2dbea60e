#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hanet::cli {

// Exit codes.
constexpr int kOk = 0;
constexpr int kInvalid = 1;    // bad arguments, configuration or data
constexpr int kNumerical = 2;  // divergence or failed gradient check

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hanet::cli
