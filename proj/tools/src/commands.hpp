#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ctf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

// Entry point shared by the executable and the integration tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctf::cli
