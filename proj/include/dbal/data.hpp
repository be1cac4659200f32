#pragma once

// Dataset ingestion, preprocessing and augmentation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dbal/rng.hpp"
#include "dbal/tensor.hpp"

namespace dbal {

enum class Split { train, eval, test };

std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view name);

struct ManifestRow {
    std::string id;
    std::string path;  // relative paths resolve against the manifest directory
    int label = 0;
    Split split = Split::train;

    friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

struct DatasetManifest {
    std::vector<ManifestRow> rows;
    std::vector<std::string> class_names;
    std::filesystem::path base_dir;

    std::size_t num_classes() const { return class_names.size(); }
    /// Per-class counts for one split.
    std::vector<std::size_t> histogram(Split split) const;
    std::size_t split_size(Split split) const;

    friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
        return a.rows == b.rows && a.class_names == b.class_names;
    }
};

/// Reads a CSV with header id,path,label,split. Labels are either class indices
/// or entries of `class_names`. Every problem found (duplicate ids, unknown
/// labels or splits, missing files) is collected into one LoadError.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              const std::vector<std::string>& class_names,
                              bool verify_files = true);

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Default names "class0", "class1", ...
std::vector<std::string> default_class_names(std::size_t num_classes);

// ---- raw headered tensor files -------------------------------------------
//
// Layout (little-endian):
//   bytes 0..3   magic "DBTN"
//   byte  4      format version (1)
//   byte  5      dtype tag: 1 = float64, 2 = uint8
//   byte  6      rank r
//   byte  7      reserved (0)
//   r x uint64   dimensions
//   payload      product(dims) elements, row-major
//
// A uint8 file of shape [H,W,3] is an RGB raster (scaled by 1/255 on load);
// a float64 file of shape [3,H,W] is an already-scaled image.

enum class RawDtype : std::uint8_t { float64 = 1, uint8 = 2 };

void write_raw_tensor(const std::filesystem::path& path, const Tensor& tensor,
                      RawDtype dtype = RawDtype::float64);
Tensor read_raw_tensor(const std::filesystem::path& path);
RawDtype raw_tensor_dtype(const std::filesystem::path& path);

/// Decoded interleaved RGB bytes.
struct RgbImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // height * width * 3
};

/// [3,H,W] channel-first tensor with values in [0,1].
Tensor rgb_to_tensor(const RgbImage& image);

/// Decodes .png, .jpg/.jpeg (when built with the codecs) and .dbt raw tensors
/// into a [3,H,W] tensor scaled to [0,1]. Throws LoadError naming the path.
Tensor load_image(const std::filesystem::path& path);
bool image_codecs_available();

// ---- preprocessing ---------------------------------------------------------

struct NormStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

struct PreprocessConfig {
    std::size_t target_size = 32;
    double crop_fraction = 0.875;
    double flip_probability = 0.5;
    NormStats stats;

    void validate() const;
};

enum class PreprocessMode { train, eval };

/// Bilinear resize with half-pixel centers. [C,H,W] -> [C,out_h,out_w]
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);
/// Central square-ish window covering `fraction` of each side.
Tensor center_crop(const Tensor& image, double fraction);
Tensor horizontal_flip(const Tensor& image);
Tensor standardize(const Tensor& image, const NormStats& stats);

/// Mean and population std per channel over a set of [3,H,W] images.
NormStats compute_norm_stats(const std::vector<Tensor>& images);

/// eval: resize to S then standardize. train: additionally center crop then
/// resize back to S and flip with the configured probability (one draw).
Tensor preprocess(const Tensor& image, const PreprocessConfig& config, PreprocessMode mode,
                  Rng& rng);

// ---- in-memory datasets ----------------------------------------------------

struct Example {
    std::string id;
    Tensor image;  // [3,H,W] in [0,1]
    int label = 0;
};

struct DatasetSplits {
    std::vector<Example> train;
    std::vector<Example> eval;
    std::vector<Example> test;
    std::size_t num_classes = 2;
};

/// Decodes every manifest image, optionally resizing each to a square side
/// right after decoding so full-resolution rasters are never all resident.
DatasetSplits load_dataset(const DatasetManifest& manifest,
                           std::optional<std::size_t> resize_to = std::nullopt);

/// Random train/eval partition of `examples`; stratified keeps class ratios.
std::pair<std::vector<Example>, std::vector<Example>> split_train_eval(
    std::vector<Example> examples, std::size_t eval_size, bool stratified, std::size_t num_classes,
    Rng& rng);

// ---- synthetic data --------------------------------------------------------

struct SyntheticSpec {
    std::size_t image_size = 32;
    /// Pixel noise std is 0.25 * difficulty; 0 renders noise-free patterns.
    double difficulty = 0.5;
    /// Per-class counts for each split; all three must have the same length C >= 2.
    std::vector<std::size_t> train_counts{350, 350};
    std::vector<std::size_t> eval_counts{100, 100};
    std::vector<std::size_t> test_counts{175, 175};
    std::uint64_t seed = 0;
};

struct SyntheticDataset {
    DatasetManifest manifest;
    DatasetSplits splits;
};

/// Class-conditional textured blobs on a noisy background. Each class has four
/// subtypes with long-tailed frequencies (70/15/10/5%); the (class, subtype)
/// pair sets the stripe orientation and colour tint of the blob. Difficulty
/// scales the pixel noise.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Splits n into counts proportional to `ratios` (largest remainder).
std::vector<std::size_t> proportional_counts(std::size_t n, const std::vector<double>& ratios);

/// Writes each image as a .dbt file under `dir` and a manifest.csv pointing at them.
std::filesystem::path write_dataset(const SyntheticDataset& dataset,
                                    const std::filesystem::path& dir);

}  // namespace dbal
