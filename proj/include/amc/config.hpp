#pragma once

// Flat `key = value` run configuration. One table of keys drives parsing,
// overrides and the help listing, so every key has exactly one default.

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "amc/bench.hpp"
#include "amc/binary_io.hpp"
#include "amc/dataset.hpp"
#include "amc/model.hpp"
#include "amc/signal.hpp"
#include "amc/trainer.hpp"

namespace amc {

struct RunConfig {
    ModelConfig model{};
    TrainConfig train{};
    SynthConfig synth{};
    SplitSpec split{};
    BenchConfig bench{};
    std::uint64_t seed = 0;
    std::size_t n_per_class = 200;  // frames per (class, snr)
    int snr_lo = -6;
    int snr_hi = 18;
    std::vector<std::string> classes;  // empty: all classes
    std::size_t latency_warmup = 10;
    std::size_t latency_iterations = 100;

    // Propagates the shared seed and SNR range into the module configs.
    void sync() {
        train.seed = seed;
        split.seed = seed;
        bench.seed = seed;
        synth.snr_grid.clear();
        for (int s = snr_lo; s <= snr_hi; s += 2) synth.snr_grid.push_back(s);
    }

    void validate() const {
        require(snr_lo <= snr_hi, ErrorKind::usage,
                "snr_lo " + std::to_string(snr_lo) + " exceeds snr_hi " + std::to_string(snr_hi));
        require(n_per_class >= 1, ErrorKind::usage, "n_per_class must be >= 1");
        require(latency_warmup >= 1 && latency_iterations >= 1, ErrorKind::usage,
                "latency_warmup and latency_iterations must be >= 1");
        for (const auto& c : classes) {
            const bool known = std::find(kClassNames.begin(), kClassNames.end(), c) != kClassNames.end();
            require(known, ErrorKind::usage, "unknown class '" + c + "'");
        }
        model.validate();
        train.validate();
        synth.validate();
        split.validate();
        bench.validate();
    }
};

struct ConfigKey {
    std::string name;
    std::string help;
    std::string reference;  // published value where one exists
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
inline T parse_number(std::string_view key, std::string_view v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && ptr == v.data() + v.size() && !v.empty(), ErrorKind::usage,
            "bad value '" + std::string(v) + "' for " + std::string(key));
    return out;
}

template <>
inline double parse_number<double>(std::string_view key, std::string_view v) {
    const std::string s(v);
    char* end = nullptr;
    const double out = std::strtod(s.c_str(), &end);
    require(!s.empty() && end == s.c_str() + s.size(), ErrorKind::usage,
            "bad value '" + s + "' for " + std::string(key));
    return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorKind::usage, "bad value '" + std::string(v) + "' for " + std::string(key) + " (true|false)");
}

inline std::vector<std::string> split_list(std::string_view v) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= v.size()) {
        const auto comma = v.find(',', start);
        const auto item = trim(v.substr(start, comma == std::string_view::npos ? v.size() - start : comma - start));
        if (!item.empty()) out.emplace_back(item);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // Shortest representation that still round-trips.
    for (int p = 1; p <= 17; ++p) {
        char t[40];
        std::snprintf(t, sizeof t, "%.*g", p, v);
        if (std::strtod(t, nullptr) == v) return t;
    }
    return buf;
}

template <class T>
inline ConfigKey size_key(const std::string& name, std::string help, std::string ref, T RunConfig::*outer,
                          std::size_t T::*field) {
    return {name, std::move(help), std::move(ref),
            [outer, field](const RunConfig& c) { return std::to_string(c.*outer.*field); },
            [outer, field, name](RunConfig& c, std::string_view v) {
                c.*outer.*field = parse_number<std::size_t>(name, v);
            }};
}

template <class T>
inline ConfigKey double_key(const std::string& name, std::string help, std::string ref, T RunConfig::*outer,
                            double T::*field) {
    return {name, std::move(help), std::move(ref),
            [outer, field](const RunConfig& c) { return fmt_double(c.*outer.*field); },
            [outer, field, name](RunConfig& c, std::string_view v) {
                c.*outer.*field = parse_number<double>(name, v);
            }};
}

}  // namespace detail

inline std::string join(const std::vector<std::string>& v, const char* sep = ",") {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
    return out;
}

inline const std::vector<ConfigKey>& config_keys() {
    using namespace detail;
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        using R = RunConfig;
        // Model.
        k.push_back(size_key("T", "frame length in samples", "128", &R::model, &ModelConfig::T));
        k.push_back(size_key("d_model", "embedding width", "64", &R::model, &ModelConfig::d_model));
        k.push_back(size_key("conv1_filters", "first convolution channels", "32", &R::model, &ModelConfig::conv1_filters));
        k.push_back(size_key("conv1_kernel", "first convolution kernel (odd)", "7", &R::model, &ModelConfig::conv1_kernel));
        k.push_back(size_key("conv2_kernel", "second convolution kernel (odd)", "5", &R::model, &ModelConfig::conv2_kernel));
        k.push_back(size_key("conv2_stride", "second convolution stride", "2", &R::model, &ModelConfig::conv2_stride));
        k.push_back(size_key("n_layers", "transformer layers", "2", &R::model, &ModelConfig::n_layers));
        k.push_back(size_key("ffn_dim", "feed-forward width", "256", &R::model, &ModelConfig::ffn_dim));
        k.push_back(size_key("classifier_hidden", "classifier hidden width", "", &R::model,
                             &ModelConfig::classifier_hidden));
        k.push_back(double_key("dropout", "dropout after attention and feed-forward", "0.1", &R::model,
                               &ModelConfig::dropout));
        k.push_back({"heads", "attention heads", "4",
                     [](const R& c) { return std::to_string(c.model.attention.heads); },
                     [](R& c, std::string_view v) { c.model.attention.heads = parse_number<std::size_t>("heads", v); }});
        k.push_back({"window", "sparse attention window w (even)", "8",
                     [](const R& c) { return std::to_string(c.model.attention.window); },
                     [](R& c, std::string_view v) { c.model.attention.window = parse_number<std::size_t>("window", v); }});
        k.push_back({"attn_dropout", "dropout on attention weights", "",
                     [](const R& c) { return fmt_double(c.model.attention.attn_dropout); },
                     [](R& c, std::string_view v) { c.model.attention.attn_dropout = parse_number<double>("attn_dropout", v); }});
        k.push_back({"variant", "attention variant: baseline|causal|sparse", "",
                     [](const R& c) { return std::string(variant_name(c.model.attention.variant)); },
                     [](R& c, std::string_view v) {
                         auto p = parse_variant(v);
                         require(p.has_value(), ErrorKind::usage,
                                 "unknown variant '" + std::string(v) + "' (valid: baseline, causal, sparse)");
                         c.model.attention.variant = *p;
                     }});
        // Training.
        k.push_back(double_key("lr0", "initial learning rate", "0.001", &R::train, &TrainConfig::lr0));
        k.push_back(double_key("weight_decay", "AdamW decoupled weight decay", "0.0001", &R::train,
                               &TrainConfig::weight_decay));
        k.push_back(double_key("beta1", "AdamW first-moment decay", "", &R::train, &TrainConfig::beta1));
        k.push_back(double_key("beta2", "AdamW second-moment decay", "", &R::train, &TrainConfig::beta2));
        k.push_back(double_key("eps", "AdamW epsilon", "", &R::train, &TrainConfig::eps));
        k.push_back(size_key("batch_size", "mini-batch size", "", &R::train, &TrainConfig::batch_size));
        k.push_back(size_key("max_epochs", "epoch cap and cosine period", "", &R::train, &TrainConfig::max_epochs));
        k.push_back(size_key("patience", "early-stopping patience in epochs", "15", &R::train, &TrainConfig::patience));
        k.push_back({"augment", "Gaussian-noise augmentation on/off", "",
                     [](const R& c) { return std::string(c.train.augment ? "true" : "false"); },
                     [](R& c, std::string_view v) { c.train.augment = parse_bool("augment", v); }});
        k.push_back({"aug_probability", "per-frame augmentation probability", "0.3",
                     [](const R& c) { return fmt_double(c.train.augmentation.probability); },
                     [](R& c, std::string_view v) {
                         c.train.augmentation.probability = parse_number<double>("aug_probability", v);
                     }});
        k.push_back({"aug_std", "augmentation noise std", "0.02",
                     [](const R& c) { return fmt_double(c.train.augmentation.noise_std); },
                     [](R& c, std::string_view v) { c.train.augmentation.noise_std = parse_number<double>("aug_std", v); }});
        // Data.
        k.push_back({"seed", "seed for generation, split, initialization and training", "",
                     [](const R& c) { return std::to_string(c.seed); },
                     [](R& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); }});
        k.push_back({"n_per_class", "generated frames per (class, snr)", "1000",
                     [](const R& c) { return std::to_string(c.n_per_class); },
                     [](R& c, std::string_view v) { c.n_per_class = parse_number<std::size_t>("n_per_class", v); }});
        k.push_back({"snr_lo", "lowest SNR in dB (generation grid and training filter)", "-6",
                     [](const R& c) { return std::to_string(c.snr_lo); },
                     [](R& c, std::string_view v) { c.snr_lo = parse_number<int>("snr_lo", v); }});
        k.push_back({"snr_hi", "highest SNR in dB (generation grid and training filter)", "18",
                     [](const R& c) { return std::to_string(c.snr_hi); },
                     [](R& c, std::string_view v) { c.snr_hi = parse_number<int>("snr_hi", v); }});
        k.push_back({"classes", "comma-separated class subset, or 'all'", "all",
                     [](const R& c) { return c.classes.empty() ? std::string("all") : join(c.classes); },
                     [](R& c, std::string_view v) {
                         c.classes = v == "all" ? std::vector<std::string>{} : split_list(v);
                     }});
        k.push_back({"samples_per_symbol", "synthesis oversampling", "",
                     [](const R& c) { return std::to_string(c.synth.samples_per_symbol); },
                     [](R& c, std::string_view v) {
                         c.synth.samples_per_symbol = parse_number<std::size_t>("samples_per_symbol", v);
                     }});
        k.push_back({"rolloff", "root-raised-cosine roll-off", "",
                     [](const R& c) { return fmt_double(c.synth.rolloff); },
                     [](R& c, std::string_view v) { c.synth.rolloff = parse_number<double>("rolloff", v); }});
        k.push_back({"max_cfo", "carrier offset bound in cycles/sample", "",
                     [](const R& c) { return fmt_double(c.synth.max_cfo); },
                     [](R& c, std::string_view v) { c.synth.max_cfo = parse_number<double>("max_cfo", v); }});
        k.push_back({"split_train", "training fraction", "0.6", [](const R& c) { return fmt_double(c.split.train); },
                     [](R& c, std::string_view v) { c.split.train = parse_number<double>("split_train", v); }});
        k.push_back({"split_val", "validation fraction", "0.2", [](const R& c) { return fmt_double(c.split.val); },
                     [](R& c, std::string_view v) { c.split.val = parse_number<double>("split_val", v); }});
        k.push_back({"split_test", "test fraction", "0.2", [](const R& c) { return fmt_double(c.split.test); },
                     [](R& c, std::string_view v) { c.split.test = parse_number<double>("split_test", v); }});
        // Benchmark.
        k.push_back({"bench_lengths", "attention benchmark sequence lengths", "",
                     [](const R& c) {
                         std::vector<std::string> s;
                         for (auto L : c.bench.lengths) s.push_back(std::to_string(L));
                         return join(s);
                     },
                     [](R& c, std::string_view v) {
                         c.bench.lengths.clear();
                         for (const auto& s : split_list(v))
                             c.bench.lengths.push_back(parse_number<std::size_t>("bench_lengths", s));
                     }});
        k.push_back({"bench_warmup", "benchmark warmup calls", "",
                     [](const R& c) { return std::to_string(c.bench.warmup); },
                     [](R& c, std::string_view v) { c.bench.warmup = parse_number<std::size_t>("bench_warmup", v); }});
        k.push_back({"bench_iterations", "benchmark measured calls", "",
                     [](const R& c) { return std::to_string(c.bench.iterations); },
                     [](R& c, std::string_view v) {
                         c.bench.iterations = parse_number<std::size_t>("bench_iterations", v);
                     }});
        k.push_back({"latency_warmup", "warmup forwards before report latency", "",
                     [](const R& c) { return std::to_string(c.latency_warmup); },
                     [](R& c, std::string_view v) { c.latency_warmup = parse_number<std::size_t>("latency_warmup", v); }});
        k.push_back({"latency_iterations", "batch-1 forwards timed for report latency", "",
                     [](const R& c) { return std::to_string(c.latency_iterations); },
                     [](R& c, std::string_view v) {
                         c.latency_iterations = parse_number<std::size_t>("latency_iterations", v);
                     }});
        return k;
    }();
    return keys;
}

inline const ConfigKey& find_key(std::string_view name) {
    for (const auto& k : config_keys())
        if (k.name == name) return k;
    fail(ErrorKind::usage, "unknown config key '" + std::string(name) + "'");
}

// Applies one `key = value` (or `key=value`) assignment.
inline void apply_assignment(RunConfig& cfg, std::string_view line, const std::string& where) {
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorKind::usage, where + ": expected 'key = value', got '" +
                                                                 std::string(line) + "'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    try {
        find_key(key).set(cfg, value);
    } catch (const Error& e) {
        fail(ErrorKind::usage, where + ": " + e.what());
    }
}

inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source) {
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        apply_assignment(cfg, line, source + ":" + std::to_string(line_no));
    }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    const auto bytes = io::read_file(path);
    apply_config_text(cfg, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

inline std::string dump_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
    return out;
}

inline std::string config_help() {
    const RunConfig defaults;
    std::string out = "Config keys (key = value lines, '#' comments; --set key=value overrides):\n";
    char buf[256];
    for (const auto& k : config_keys()) {
        const std::string ref = k.reference.empty() ? "" : "  [reference: " + k.reference + "]";
        std::snprintf(buf, sizeof buf, "  %-20s default %-14s %s%s\n", k.name.c_str(), k.get(defaults).c_str(),
                      k.help.c_str(), ref.c_str());
        out += buf;
    }
    return out;
}

}  // namespace amc
