#include "dbal/data.hpp"

#include <algorithm>
#include <boost/tokenizer.hpp>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "dbal/errors.hpp"

namespace dbal {
namespace {

constexpr char kRawMagic[4] = {'D', 'B', 'T', 'N'};
constexpr std::uint8_t kRawVersion = 1;

std::vector<std::string> split_csv_line(const std::string& line) {
    using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
    Tokenizer tokens(line);
    std::vector<std::string> fields(tokens.begin(), tokens.end());
    for (auto& f : fields) {
        const auto first = f.find_first_not_of(" \t\r");
        const auto last = f.find_last_not_of(" \t\r");
        f = first == std::string::npos ? std::string() : f.substr(first, last - first + 1);
    }
    return fields;
}

std::optional<int> parse_label(const std::string& text, const std::vector<std::string>& names) {
    const auto named = std::find(names.begin(), names.end(), text);
    if (named != names.end()) return static_cast<int>(named - names.begin());
    try {
        std::size_t used = 0;
        const int value = std::stoi(text, &used);
        if (used == text.size() && value >= 0 && static_cast<std::size_t>(value) < names.size()) {
            return value;
        }
    } catch (const std::exception&) {
    }
    return std::nullopt;
}

}  // namespace

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::eval: return "eval";
        case Split::test: return "test";
    }
    return "?";
}

std::optional<Split> parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "eval" || name == "val" || name == "validation") return Split::eval;
    if (name == "test") return Split::test;
    return std::nullopt;
}

std::vector<std::size_t> DatasetManifest::histogram(Split split) const {
    std::vector<std::size_t> counts(num_classes(), 0);
    for (const auto& row : rows) {
        if (row.split == split) counts.at(static_cast<std::size_t>(row.label)) += 1;
    }
    return counts;
}

std::size_t DatasetManifest::split_size(Split split) const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.split == split; }));
}

std::vector<std::string> default_class_names(std::size_t num_classes) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < num_classes; ++i) names.push_back("class" + std::to_string(i));
    return names;
}

DatasetManifest load_manifest(const std::filesystem::path& path,
                              const std::vector<std::string>& class_names, bool verify_files) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open manifest " + path.string());
    DatasetManifest manifest;
    manifest.class_names = class_names;
    manifest.base_dir = path.parent_path();

    std::string line;
    if (!std::getline(in, line)) throw LoadError("manifest " + path.string() + " is empty");
    const auto header = split_csv_line(line);
    if (header != std::vector<std::string>{"id", "path", "label", "split"}) {
        throw LoadError("manifest " + path.string() + ": header must be id,path,label,split");
    }

    std::vector<std::string> problems;
    std::set<std::string> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "line " + std::to_string(line_no);
        std::vector<std::string> fields;
        try {
            fields = split_csv_line(line);
        } catch (const std::exception& e) {
            problems.push_back(where + ": malformed CSV (" + e.what() + ")");
            continue;
        }
        if (fields.size() != 4) {
            problems.push_back(where + ": expected 4 fields, got " + std::to_string(fields.size()));
            continue;
        }
        ManifestRow row;
        row.id = fields[0];
        row.path = fields[1];
        if (row.id.empty()) problems.push_back(where + ": empty id");
        if (!seen.insert(row.id).second) problems.push_back(where + ": duplicate id '" + row.id + "'");
        const auto label = parse_label(fields[2], class_names);
        if (!label) {
            problems.push_back(where + ": unknown label '" + fields[2] + "' for id '" + row.id + "'");
        }
        const auto split = parse_split(fields[3]);
        if (!split) problems.push_back(where + ": unknown split '" + fields[3] + "'");
        if (verify_files) {
            const auto full = manifest.base_dir / row.path;
            if (!std::filesystem::exists(full)) {
                problems.push_back(where + ": missing file " + full.string());
            }
        }
        row.label = label.value_or(0);
        row.split = split.value_or(Split::train);
        manifest.rows.push_back(std::move(row));
    }
    if (!problems.empty()) {
        std::ostringstream msg;
        msg << "manifest " << path.string() << " has " << problems.size() << " problem(s):";
        for (const auto& p : problems) msg << "\n  " << p;
        throw LoadError(msg.str());
    }
    return manifest;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw LoadError("cannot write manifest " + path.string());
    out << "id,path,label,split\n";
    for (const auto& row : manifest.rows) {
        out << row.id << ',' << row.path << ',' << row.label << ',' << to_string(row.split) << '\n';
    }
}

// ---- raw tensors -------------------------------------------------------------

void write_raw_tensor(const std::filesystem::path& path, const Tensor& tensor, RawDtype dtype) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write tensor file " + path.string());
    out.write(kRawMagic, 4);
    const char header[4] = {static_cast<char>(kRawVersion), static_cast<char>(dtype),
                            static_cast<char>(tensor.rank()), 0};
    out.write(header, 4);
    for (std::size_t d : tensor.shape()) detail::write_u64(out, d);
    if (dtype == RawDtype::float64) {
        for (double v : tensor.values()) detail::write_f64(out, v);
    } else {
        for (double v : tensor.values()) {
            const double clamped = std::clamp(std::round(v), 0.0, 255.0);
            out.put(static_cast<char>(static_cast<std::uint8_t>(clamped)));
        }
    }
    if (!out) throw LoadError("failed writing tensor file " + path.string());
}

namespace {

struct RawHeader {
    RawDtype dtype;
    Tensor::Shape shape;
};

RawHeader read_raw_header(std::istream& in, const std::string& what) {
    char magic[4];
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kRawMagic)) {
        throw LoadError(what + ": bad magic");
    }
    unsigned char header[4];
    if (!in.read(reinterpret_cast<char*>(header), 4)) throw LoadError(what + ": truncated header");
    if (header[0] != kRawVersion) {
        throw LoadError(what + ": unsupported version " + std::to_string(header[0]));
    }
    if (header[1] != 1 && header[1] != 2) {
        throw LoadError(what + ": unknown dtype tag " + std::to_string(header[1]));
    }
    RawHeader h{static_cast<RawDtype>(header[1]), Tensor::Shape(header[2])};
    for (auto& d : h.shape) d = detail::read_u64(in, what);
    return h;
}

}  // namespace

Tensor read_raw_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open tensor file " + path.string());
    const std::string what = "tensor file " + path.string();
    const RawHeader h = read_raw_header(in, what);
    Tensor t(h.shape);
    if (h.dtype == RawDtype::float64) {
        for (double& v : t.values()) v = detail::read_f64(in, what);
    } else {
        std::vector<unsigned char> bytes(t.size());
        if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
            throw LoadError(what + ": truncated payload");
        }
        for (std::size_t i = 0; i < bytes.size(); ++i) t[i] = bytes[i];
    }
    return t;
}

RawDtype raw_tensor_dtype(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open tensor file " + path.string());
    return read_raw_header(in, "tensor file " + path.string()).dtype;
}

Tensor rgb_to_tensor(const RgbImage& image) {
    if (image.pixels.size() != image.height * image.width * 3) {
        throw LoadError("RGB buffer size does not match " + std::to_string(image.height) + "x" +
                        std::to_string(image.width));
    }
    Tensor t({3, image.height, image.width});
    const std::size_t plane = image.height * image.width;
    for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < 3; ++c) t[c * plane + p] = image.pixels[p * 3 + c] / 255.0;
    }
    return t;
}

// ---- preprocessing -------------------------------------------------------------

void PreprocessConfig::validate() const {
    if (target_size == 0) throw ConfigError("target_size must be positive");
    if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) {
        throw ConfigError("crop_fraction must lie in (0, 1], got " + std::to_string(crop_fraction));
    }
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
        throw ConfigError("flip_probability must lie in [0, 1], got " +
                          std::to_string(flip_probability));
    }
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
    if (image.rank() != 3) throw ConfigError("resize expects [C,H,W], got " + shape_string(image.shape()));
    const std::size_t channels = image.dim(0), in_h = image.dim(1), in_w = image.dim(2);
    if (in_h == out_h && in_w == out_w) return image;
    if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) {
        throw ConfigError("resize with an empty extent");
    }
    struct Tap {
        std::size_t lo, hi;
        double frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> result(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t i = 0; i < out; ++i) {
            double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const auto lo = static_cast<std::size_t>(std::floor(src));
            result[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
        }
        return result;
    };
    const auto ys = taps(in_h, out_h);
    const auto xs = taps(in_w, out_w);
    Tensor out({channels, out_h, out_w});
    for (std::size_t c = 0; c < channels; ++c) {
        const double* src = image.data() + c * in_h * in_w;
        double* dst = out.data() + c * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const Tap& ty = ys[y];
            const double* r0 = src + ty.lo * in_w;
            const double* r1 = src + ty.hi * in_w;
            for (std::size_t x = 0; x < out_w; ++x) {
                const Tap& tx = xs[x];
                const double top = r0[tx.lo] * (1.0 - tx.frac) + r0[tx.hi] * tx.frac;
                const double bottom = r1[tx.lo] * (1.0 - tx.frac) + r1[tx.hi] * tx.frac;
                dst[y * out_w + x] = top * (1.0 - ty.frac) + bottom * ty.frac;
            }
        }
    }
    return out;
}

Tensor center_crop(const Tensor& image, double fraction) {
    if (image.rank() != 3) throw ConfigError("crop expects [C,H,W], got " + shape_string(image.shape()));
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ConfigError("crop fraction must lie in (0, 1], got " + std::to_string(fraction));
    }
    const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
    const auto side = [&](std::size_t n) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))));
    };
    const std::size_t ch = side(h), cw = side(w);
    if (ch == h && cw == w) return image;
    const std::size_t top = (h - ch) / 2, left = (w - cw) / 2;
    Tensor out({channels, ch, cw});
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < ch; ++y) {
            const double* src = image.data() + (c * h + top + y) * w + left;
            std::copy_n(src, cw, out.data() + (c * ch + y) * cw);
        }
    }
    return out;
}

Tensor horizontal_flip(const Tensor& image) {
    if (image.rank() != 3) throw ConfigError("flip expects [C,H,W], got " + shape_string(image.shape()));
    Tensor out(image.shape());
    const std::size_t rows = image.dim(0) * image.dim(1), w = image.dim(2);
    for (std::size_t r = 0; r < rows; ++r) {
        std::reverse_copy(image.data() + r * w, image.data() + (r + 1) * w, out.data() + r * w);
    }
    return out;
}

Tensor standardize(const Tensor& image, const NormStats& stats) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ConfigError("standardize expects [3,H,W], got " + shape_string(image.shape()));
    }
    Tensor out(image.shape());
    const std::size_t plane = image.dim(1) * image.dim(2);
    for (std::size_t c = 0; c < 3; ++c) {
        const double inv = 1.0 / stats.stddev[c];
        for (std::size_t i = 0; i < plane; ++i) {
            out[c * plane + i] = (image[c * plane + i] - stats.mean[c]) * inv;
        }
    }
    return out;
}

NormStats compute_norm_stats(const std::vector<Tensor>& images) {
    NormStats stats;
    std::array<double, 3> sum{}, sum_sq{};
    std::array<double, 3> count{};
    for (const auto& img : images) {
        if (img.rank() != 3 || img.dim(0) != 3) {
            throw ConfigError("normalization statistics expect [3,H,W] images");
        }
        const std::size_t plane = img.dim(1) * img.dim(2);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < plane; ++i) sum[c] += img[c * plane + i];
            count[c] += static_cast<double>(plane);
        }
    }
    if (count[0] == 0.0) throw ConfigError("normalization statistics over no images");
    for (std::size_t c = 0; c < 3; ++c) stats.mean[c] = sum[c] / count[c];
    // second pass for a numerically clean variance
    for (const auto& img : images) {
        const std::size_t plane = img.dim(1) * img.dim(2);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = img[c * plane + i] - stats.mean[c];
                sum_sq[c] += d * d;
            }
        }
    }
    for (std::size_t c = 0; c < 3; ++c) {
        const double sd = std::sqrt(sum_sq[c] / count[c]);
        stats.stddev[c] = sd > 1e-12 ? sd : 1.0;
    }
    return stats;
}

Tensor preprocess(const Tensor& image, const PreprocessConfig& config, PreprocessMode mode,
                  Rng& rng) {
    const std::size_t s = config.target_size;
    Tensor out = resize_bilinear(image, s, s);
    if (mode == PreprocessMode::train) {
        if (config.crop_fraction < 1.0) {
            out = resize_bilinear(center_crop(out, config.crop_fraction), s, s);
        }
        if (uniform01(rng) < config.flip_probability) out = horizontal_flip(out);
    }
    return standardize(out, config.stats);
}

// ---- datasets --------------------------------------------------------------------

DatasetSplits load_dataset(const DatasetManifest& manifest, std::optional<std::size_t> resize_to) {
    DatasetSplits splits;
    splits.num_classes = manifest.num_classes();
    std::vector<std::string> problems;
    for (const auto& row : manifest.rows) {
        Example ex{row.id, {}, row.label};
        try {
            ex.image = load_image(manifest.base_dir / row.path);
            if (resize_to) ex.image = resize_bilinear(ex.image, *resize_to, *resize_to);
        } catch (const LoadError& e) {
            problems.push_back(e.what());
            continue;
        }
        switch (row.split) {
            case Split::train: splits.train.push_back(std::move(ex)); break;
            case Split::eval: splits.eval.push_back(std::move(ex)); break;
            case Split::test: splits.test.push_back(std::move(ex)); break;
        }
    }
    if (!problems.empty()) {
        std::ostringstream msg;
        msg << problems.size() << " image(s) failed to load:";
        for (const auto& p : problems) msg << "\n  " << p;
        throw LoadError(msg.str());
    }
    return splits;
}

std::vector<std::size_t> proportional_counts(std::size_t n, const std::vector<double>& ratios) {
    const double total = std::accumulate(ratios.begin(), ratios.end(), 0.0);
    if (ratios.empty() || !(total > 0.0)) throw ConfigError("proportions must have a positive sum");
    std::vector<std::size_t> counts(ratios.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double exact = static_cast<double>(n) * ratios[i] / total;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) counts[remainders[i % remainders.size()].second] += 1;
    return counts;
}

std::pair<std::vector<Example>, std::vector<Example>> split_train_eval(
    std::vector<Example> examples, std::size_t eval_size, bool stratified, std::size_t num_classes,
    Rng& rng) {
    if (eval_size > examples.size()) {
        throw ConfigError("eval split of " + std::to_string(eval_size) + " exceeds " +
                          std::to_string(examples.size()) + " examples");
    }
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    std::vector<bool> to_eval(examples.size(), false);
    if (stratified) {
        std::vector<std::vector<std::size_t>> by_class(num_classes);
        for (std::size_t i : order) by_class.at(static_cast<std::size_t>(examples[i].label)).push_back(i);
        std::vector<double> ratios;
        for (const auto& members : by_class) ratios.push_back(static_cast<double>(members.size()));
        const auto quota = proportional_counts(eval_size, ratios);
        for (std::size_t c = 0; c < num_classes; ++c) {
            for (std::size_t j = 0; j < quota[c]; ++j) to_eval[by_class[c][j]] = true;
        }
    } else {
        for (std::size_t j = 0; j < eval_size; ++j) to_eval[order[j]] = true;
    }
    std::pair<std::vector<Example>, std::vector<Example>> result;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        (to_eval[i] ? result.second : result.first).push_back(std::move(examples[i]));
    }
    return result;
}

std::filesystem::path write_dataset(const SyntheticDataset& dataset,
                                    const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    DatasetManifest manifest = dataset.manifest;
    manifest.base_dir = dir;
    std::map<std::string, const Tensor*> images;
    for (const auto* split : {&dataset.splits.train, &dataset.splits.eval, &dataset.splits.test}) {
        for (const auto& ex : *split) images[ex.id] = &ex.image;
    }
    for (auto& row : manifest.rows) {
        row.path = "images/" + row.id + ".dbt";
        write_raw_tensor(dir / row.path, *images.at(row.id));
    }
    const auto path = dir / "manifest.csv";
    save_manifest(path, manifest);
    return path;
}

}  // namespace dbal
