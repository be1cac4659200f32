#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace dbal::cli {

/// Stable process exit codes.
enum ExitCode : int { kSuccess = 0, kRuntimeFailure = 1, kConfigFailure = 2 };

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "DBAL_OUTPUT_ROOT";

struct CommonOptions {
    std::filesystem::path config;
    std::filesystem::path out;  // empty: config [output] dir, then $DBAL_OUTPUT_ROOT, then ./runs
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
};

int cmd_run(const CommonOptions& options, std::ostream& log, std::ostream& err);
int cmd_compare(const CommonOptions& options, const std::vector<std::string>& functions,
                std::ostream& log, std::ostream& err);

enum class AblationAxis { query_size, direction };

int cmd_ablate(const CommonOptions& options, AblationAxis axis,
               const std::vector<std::size_t>& query_sizes, const std::vector<std::string>& functions,
               std::ostream& log, std::ostream& err);
int cmd_report(const std::filesystem::path& run_dir, std::ostream& log, std::ostream& err);
int cmd_defaults(std::ostream& out);

struct SynthOptions {
    std::filesystem::path out;
    std::optional<std::filesystem::path> config;
    std::optional<std::uint64_t> seed;
};
int cmd_synth(const SynthOptions& options, std::ostream& log, std::ostream& err);

/// Full command-line entry point (argv parsing included).
int main(int argc, char** argv);

}  // namespace dbal::cli
