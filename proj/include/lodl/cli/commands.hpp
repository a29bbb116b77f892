#pragma once

#include <ostream>
#include <stdexcept>
#include <string>

namespace lodl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitStage = 2;

/// A pipeline stage failed; what() is "<stage>: <reason>".
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& reason) : std::runtime_error(stage + ": " + reason) {}
};

/// Parses argv, merges the config file with flags, prints the resolved config
/// and runs one subcommand. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lodl::cli
