#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace grf::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kValidationFailure = 1,
  kUsageError = 2,
  kIoError = 3,
};

// Written next to every artifact a command produces.
struct RunManifest {
  std::string command;
  std::string config_path;  // empty when the built-in defaults were used
  unsigned long long seed = 0;
  std::string precision;
  std::vector<std::string> outputs;
  std::string version = kToolVersion;
};

std::string manifest_json(const RunManifest& m);

// Full command-line entry point; argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace grf::cli
