#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace relclass::cli {

// Settings shared by every subcommand; flags override the config file.
struct RunConfig {
  std::filesystem::path config;
  std::filesystem::path embeddings;
  std::filesystem::path levin;
  std::filesystem::path out;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::size_t min_lemma_count = 5;
  std::string log_level = "warn";
};

enum ExitCode : int { kSuccess = 0, kInternalError = 1, kUsageError = 2 };

// Runs one command line (args exclude the program name). Primary output
// goes to --out when given, else to `out`; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace relclass::cli
