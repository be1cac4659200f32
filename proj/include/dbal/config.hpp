#pragma once

// Experiment configuration files: INI-style sections [data], [model],
// [training], [loop], [acquisition], [output]. Unknown keys are rejected and
// rng_seed is mandatory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbal/data.hpp"
#include "dbal/loop.hpp"

namespace dbal {

struct DataConfig {
    std::string source = "synthetic";  // synthetic | manifest
    std::filesystem::path manifest;
    std::vector<std::string> class_names{"negative", "positive"};
    double crop_fraction = 0.875;
    double flip_probability = 0.5;
    /// Carved out of the training rows when the manifest has no eval rows.
    std::size_t eval_size = 200;
    bool stratified_eval = true;
    double synthetic_difficulty = 0.5;
    std::vector<std::size_t> synthetic_train{560, 140};
    std::vector<std::size_t> synthetic_eval{160, 40};
    std::vector<std::size_t> synthetic_test{280, 70};
    std::optional<std::uint64_t> synthetic_seed;  // defaults to loop.rng_seed
};

struct OutputConfig {
    std::filesystem::path dir;  // empty: --out, then $DBAL_OUTPUT_ROOT, then ./runs
    std::string name = "experiment";
    bool checkpoints = true;
};

struct ExperimentConfig {
    DataConfig data;
    LoopConfig loop;
    OutputConfig output;
};

/// Every field-level problem found while reading a config file.
class ConfigFileError : public std::runtime_error {
public:
    explicit ConfigFileError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

/// Default configuration (rng_seed left at 0 and unset).
ExperimentConfig default_config();

/// Parses and validates. `seed_override` satisfies the rng_seed requirement.
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig parse_config(const std::string& text,
                              std::optional<std::uint64_t> seed_override = std::nullopt);

/// Round-trippable text; `with_seed` false comments the rng_seed line out.
std::string render_config(const ExperimentConfig& config, bool with_seed = true);

/// Synthetic or manifest-backed splits as configured.
DatasetSplits load_splits(const ExperimentConfig& config);

SyntheticSpec synthetic_spec(const ExperimentConfig& config);

}  // namespace dbal
