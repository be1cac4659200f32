#include "dbal/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dbal/errors.hpp"

namespace dbal {
namespace {

namespace pt = boost::property_tree;

std::string join_sizes(const std::vector<std::size_t>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(values[i]);
    }
    return out;
}

std::string join_strings(const std::vector<std::string>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += values[i];
    }
    return out;
}

std::string format_double(double v) {
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
    return std::string(buf, end);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        const auto last = item.find_last_not_of(" \t");
        if (first != std::string::npos) items.push_back(item.substr(first, last - first + 1));
    }
    return items;
}

// Reads typed values out of one section, recording problems instead of throwing.
class SectionReader {
public:
    SectionReader(const pt::ptree& root, std::string section, std::vector<std::string>& problems)
        : section_(std::move(section)), problems_(problems) {
        if (auto child = root.get_child_optional(section_)) tree_ = &*child;
    }

    bool has(const std::string& key) {
        consumed_.insert(key);
        return tree_ && tree_->get_child_optional(pt::ptree::path_type(key, '\0'));
    }

    std::string raw(const std::string& key) {
        return tree_->get_child(pt::ptree::path_type(key, '\0')).data();
    }

    void read(const std::string& key, std::size_t& out) {
        if (!has(key)) return;
        const std::string text = raw(key);
        std::size_t value = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc() || ptr != text.data() + text.size()) {
            fail(key, "expected a non-negative integer, got '" + text + "'");
        } else {
            out = value;
        }
    }

    void read(const std::string& key, std::uint64_t& out, bool& present) {
        present = has(key);
        if (!present) return;
        const std::string text = raw(key);
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
        if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
            fail(key, "expected an unsigned integer, got '" + text + "'");
            present = false;
        }
    }

    void read(const std::string& key, double& out) {
        if (!has(key)) return;
        const std::string text = raw(key);
        try {
            std::size_t used = 0;
            out = std::stod(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
        } catch (const std::exception&) {
            fail(key, "expected a number, got '" + text + "'");
        }
    }

    void read(const std::string& key, bool& out) {
        if (!has(key)) return;
        const std::string text = raw(key);
        if (text == "true" || text == "1" || text == "yes") out = true;
        else if (text == "false" || text == "0" || text == "no") out = false;
        else fail(key, "expected true/false, got '" + text + "'");
    }

    void read(const std::string& key, std::string& out) {
        if (has(key)) out = raw(key);
    }

    void read(const std::string& key, std::vector<std::size_t>& out) {
        if (!has(key)) return;
        std::vector<std::size_t> values;
        for (const auto& item : split_list(raw(key))) {
            std::size_t v = 0;
            auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
            if (ec != std::errc() || ptr != item.data() + item.size()) {
                fail(key, "expected a comma-separated list of integers, got '" + raw(key) + "'");
                return;
            }
            values.push_back(v);
        }
        out = std::move(values);
    }

    void fail(const std::string& key, const std::string& why) {
        problems_.push_back("[" + section_ + "] " + key + ": " + why);
    }

    void reject_unknown() {
        if (!tree_) return;
        for (const auto& [key, value] : *tree_) {
            if (!consumed_.count(key)) fail(key, "unknown key");
        }
    }

private:
    std::string section_;
    std::vector<std::string>& problems_;
    const pt::ptree* tree_ = nullptr;
    std::set<std::string> consumed_;
};

const std::set<std::string> kSections{"data", "model", "training", "loop", "acquisition", "output"};

}  // namespace

ConfigFileError::ConfigFileError(std::vector<std::string> problems)
    : std::runtime_error([&] {
          std::string msg = "invalid configuration:";
          for (const auto& p : problems) msg += "\n  " + p;
          return msg;
      }()),
      problems_(std::move(problems)) {}

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.loop.preprocess.target_size = c.loop.architecture.image_size;
    c.loop.preprocess.crop_fraction = c.data.crop_fraction;
    c.loop.preprocess.flip_probability = c.data.flip_probability;
    return c;
}

ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed_override) {
    pt::ptree root;
    std::istringstream in(text);
    try {
        pt::read_ini(in, root);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigFileError({std::string("syntax error: ") + e.message() + " (line " +
                               std::to_string(e.line()) + ")"});
    }

    std::vector<std::string> problems;
    for (const auto& [name, child] : root) {
        if (!kSections.count(name)) {
            problems.push_back(child.empty() ? "top-level key '" + name + "' outside any section"
                                             : "unknown section [" + name + "]");
        }
    }

    ExperimentConfig c = default_config();
    {
        SectionReader r(root, "data", problems);
        r.read("source", c.data.source);
        std::string manifest;
        r.read("manifest", manifest);
        if (!manifest.empty()) c.data.manifest = manifest;
        if (r.has("class_names")) c.data.class_names = split_list(r.raw("class_names"));
        r.read("image_size", c.loop.architecture.image_size);
        r.read("crop_fraction", c.data.crop_fraction);
        r.read("flip_probability", c.data.flip_probability);
        r.read("eval_size", c.data.eval_size);
        r.read("stratified_eval", c.data.stratified_eval);
        r.read("synthetic_difficulty", c.data.synthetic_difficulty);
        r.read("synthetic_train", c.data.synthetic_train);
        r.read("synthetic_eval", c.data.synthetic_eval);
        r.read("synthetic_test", c.data.synthetic_test);
        std::uint64_t seed = 0;
        bool present = false;
        r.read("synthetic_seed", seed, present);
        if (present) c.data.synthetic_seed = seed;
        if (c.data.source != "synthetic" && c.data.source != "manifest") {
            r.fail("source", "expected 'synthetic' or 'manifest', got '" + c.data.source + "'");
        }
        if (c.data.source == "manifest" && c.data.manifest.empty()) {
            r.fail("manifest", "required when source = manifest");
        }
        r.reject_unknown();
    }
    {
        SectionReader r(root, "model", problems);
        auto& a = c.loop.architecture;
        r.read("in_channels", a.in_channels);
        r.read("num_filters", a.num_filters);
        r.read("kernel_size", a.kernel_size);
        r.read("pool_size", a.pool_size);
        r.read("dense_size", a.dense_size);
        r.read("num_classes", a.num_classes);
        r.read("dropout1", a.dropout1);
        r.read("dropout2", a.dropout2);
        r.reject_unknown();
    }
    {
        SectionReader r(root, "training", problems);
        auto& t = c.loop.training;
        r.read("epochs_per_round", t.epochs_per_round);
        r.read("batch_size", t.batch_size);
        r.read("learning_rate", t.adam.learning_rate);
        r.read("beta1", t.adam.beta1);
        r.read("beta2", t.adam.beta2);
        r.read("epsilon", t.adam.epsilon);
        r.read("decay_dropout_p", t.decay_dropout_p);
        r.read("length_scale_sq", t.length_scale_sq);
        std::string mode(to_string(t.retrain_mode));
        r.read("retrain_mode", mode);
        if (auto m = parse_retrain_mode(mode)) t.retrain_mode = *m;
        else r.fail("retrain_mode", "expected from_scratch or continue, got '" + mode + "'");
        r.read("eval_batch_size", c.loop.eval_batch_size);
        r.reject_unknown();
    }
    bool seed_present = false;
    {
        SectionReader r(root, "loop", problems);
        if (r.has("seed_composition")) {
            const std::string text = r.raw("seed_composition");
            if (text == "stratified") {
                c.loop.seed.per_class.clear();
            } else {
                r.read("seed_composition", c.loop.seed.per_class);
            }
        }
        r.read("seed_size", c.loop.seed.seed_size);
        r.read("query_size", c.loop.query_size);
        r.read("rounds", c.loop.rounds);
        std::string direction(to_string(c.loop.direction));
        r.read("direction", direction);
        if (auto d = parse_selection_direction(direction)) c.loop.direction = *d;
        else r.fail("direction", "expected most_uncertain or least_uncertain, got '" + direction + "'");
        r.read("rng_seed", c.loop.rng_seed, seed_present);
        r.reject_unknown();
    }
    {
        SectionReader r(root, "acquisition", problems);
        std::string fn = function_label(c.loop.function);
        r.read("function", fn);
        if (fn == "none") c.loop.function = std::nullopt;
        else if (auto f = parse_acquisition_function(fn)) c.loop.function = *f;
        else r.fail("function", "expected bald, max_entropy, mean_std, random or none, got '" + fn + "'");
        r.read("mc_passes", c.loop.mc_passes);
        r.reject_unknown();
    }
    {
        SectionReader r(root, "output", problems);
        std::string dir;
        r.read("dir", dir);
        if (!dir.empty()) c.output.dir = dir;
        r.read("name", c.output.name);
        r.read("checkpoints", c.output.checkpoints);
        if (c.output.name.empty()) r.fail("name", "must not be empty");
        r.reject_unknown();
    }

    if (seed_override) {
        c.loop.rng_seed = *seed_override;
    } else if (!seed_present) {
        problems.push_back("[loop] rng_seed: required (no default)");
    }

    c.loop.preprocess.target_size = c.loop.architecture.image_size;
    c.loop.preprocess.crop_fraction = c.data.crop_fraction;
    c.loop.preprocess.flip_probability = c.data.flip_probability;
    if (c.data.class_names.size() != c.loop.architecture.num_classes) {
        problems.push_back("[data] class_names: lists " + std::to_string(c.data.class_names.size()) +
                           " names for " + std::to_string(c.loop.architecture.num_classes) + " classes");
    }
    if (c.data.source == "synthetic") {
        const std::size_t classes = c.loop.architecture.num_classes;
        for (const auto& [key, counts] : {std::pair{"synthetic_train", &c.data.synthetic_train},
                                          std::pair{"synthetic_eval", &c.data.synthetic_eval},
                                          std::pair{"synthetic_test", &c.data.synthetic_test}}) {
            if (counts->size() != classes) {
                problems.push_back(std::string("[data] ") + key + ": needs one count per class (" +
                                   std::to_string(classes) + ")");
            }
        }
    }
    if (problems.empty()) {
        try {
            c.loop.validate();
        } catch (const ConfigError& e) {
            problems.push_back(e.what());
        }
    }
    if (!problems.empty()) throw ConfigFileError(std::move(problems));
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
    std::ifstream in(path);
    if (!in) throw ConfigFileError({"cannot read config file " + path.string()});
    std::ostringstream text;
    text << in.rdbuf();
    ExperimentConfig c = parse_config(text.str(), seed_override);
    if (c.data.manifest.is_relative() && !c.data.manifest.empty()) {
        c.data.manifest = std::filesystem::absolute(path.parent_path() / c.data.manifest).lexically_normal();
    }
    return c;
}

std::string render_config(const ExperimentConfig& c, bool with_seed) {
    const auto& a = c.loop.architecture;
    const auto& t = c.loop.training;
    std::ostringstream out;
    out << "[data]\n"
        << "source = " << c.data.source << "\n";
    if (!c.data.manifest.empty()) out << "manifest = " << c.data.manifest.string() << "\n";
    out << "class_names = " << join_strings(c.data.class_names) << "\n"
        << "image_size = " << a.image_size << "\n"
        << "crop_fraction = " << format_double(c.data.crop_fraction) << "\n"
        << "flip_probability = " << format_double(c.data.flip_probability) << "\n"
        << "eval_size = " << c.data.eval_size << "\n"
        << "stratified_eval = " << (c.data.stratified_eval ? "true" : "false") << "\n"
        << "synthetic_difficulty = " << format_double(c.data.synthetic_difficulty) << "\n"
        << "synthetic_train = " << join_sizes(c.data.synthetic_train) << "\n"
        << "synthetic_eval = " << join_sizes(c.data.synthetic_eval) << "\n"
        << "synthetic_test = " << join_sizes(c.data.synthetic_test) << "\n";
    if (c.data.synthetic_seed) out << "synthetic_seed = " << *c.data.synthetic_seed << "\n";
    out << "\n[model]\n"
        << "in_channels = " << a.in_channels << "\n"
        << "num_filters = " << a.num_filters << "\n"
        << "kernel_size = " << a.kernel_size << "\n"
        << "pool_size = " << a.pool_size << "\n"
        << "dense_size = " << a.dense_size << "\n"
        << "num_classes = " << a.num_classes << "\n"
        << "dropout1 = " << format_double(a.dropout1) << "\n"
        << "dropout2 = " << format_double(a.dropout2) << "\n"
        << "\n[training]\n"
        << "epochs_per_round = " << t.epochs_per_round << "\n"
        << "batch_size = " << t.batch_size << "\n"
        << "learning_rate = " << format_double(t.adam.learning_rate) << "\n"
        << "beta1 = " << format_double(t.adam.beta1) << "\n"
        << "beta2 = " << format_double(t.adam.beta2) << "\n"
        << "epsilon = " << format_double(t.adam.epsilon) << "\n"
        << "decay_dropout_p = " << format_double(t.decay_dropout_p) << "\n"
        << "length_scale_sq = " << format_double(t.length_scale_sq) << "\n"
        << "retrain_mode = " << to_string(t.retrain_mode) << "\n"
        << "eval_batch_size = " << c.loop.eval_batch_size << "\n"
        << "\n[loop]\n"
        << "seed_composition = "
        << (c.loop.seed.stratified() ? std::string("stratified") : join_sizes(c.loop.seed.per_class)) << "\n"
        << "seed_size = " << c.loop.seed.seed_size << "\n"
        << "query_size = " << c.loop.query_size << "\n"
        << "rounds = " << c.loop.rounds << "\n"
        << "direction = " << to_string(c.loop.direction) << "\n";
    if (with_seed) out << "rng_seed = " << c.loop.rng_seed << "\n";
    else out << "; rng_seed is required and has no default\n; rng_seed = 0\n";
    out << "\n[acquisition]\n"
        << "function = " << function_label(c.loop.function) << "\n"
        << "mc_passes = " << c.loop.mc_passes << "\n"
        << "\n[output]\n";
    if (!c.output.dir.empty()) out << "dir = " << c.output.dir.string() << "\n";
    out << "name = " << c.output.name << "\n"
        << "checkpoints = " << (c.output.checkpoints ? "true" : "false") << "\n";
    return out.str();
}

SyntheticSpec synthetic_spec(const ExperimentConfig& c) {
    SyntheticSpec spec;
    spec.image_size = c.loop.architecture.image_size;
    spec.difficulty = c.data.synthetic_difficulty;
    spec.train_counts = c.data.synthetic_train;
    spec.eval_counts = c.data.synthetic_eval;
    spec.test_counts = c.data.synthetic_test;
    spec.seed = c.data.synthetic_seed.value_or(c.loop.rng_seed);
    return spec;
}

DatasetSplits load_splits(const ExperimentConfig& c) {
    if (c.data.source == "synthetic") return generate_synthetic(synthetic_spec(c)).splits;
    const DatasetManifest manifest = load_manifest(c.data.manifest, c.data.class_names);
    DatasetSplits splits = load_dataset(manifest, c.loop.architecture.image_size);
    if (splits.eval.empty() && c.data.eval_size > 0) {
        Rng rng = derive_rng({c.loop.rng_seed, 0xE7A1});
        auto [train, eval] = split_train_eval(std::move(splits.train), c.data.eval_size,
                                              c.data.stratified_eval, splits.num_classes, rng);
        splits.train = std::move(train);
        splits.eval = std::move(eval);
    }
    return splits;
}

}  // namespace dbal
