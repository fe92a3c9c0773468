// Command-line entry point: generate, train, eval, bench.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "amc/bench.hpp"
#include "amc/checkpoint.hpp"
#include "amc/config.hpp"
#include "amc/evaluation.hpp"
#include "amc/heap.hpp"
#include "amc/trainer.hpp"

namespace fs = std::filesystem;
using namespace amc;

namespace {

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::usage:
        case ErrorKind::parameter: return 2;
        case ErrorKind::io: return 3;
        case ErrorKind::dimension:
        case ErrorKind::label: return 5;
        default: return 4;
    }
}

struct ConfigOptions {
    std::string file;
    std::vector<std::string> sets;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", file, "key = value config file");
        cmd->add_option("--set", sets, "override one config key (key=value), repeatable");
    }

    // File first, then --set, then dedicated flags applied by the caller.
    RunConfig load() const {
        RunConfig cfg;
        if (!file.empty()) apply_config_file(cfg, file);
        for (const auto& s : sets) apply_assignment(cfg, s, "--set");
        return cfg;
    }
};

void finalize(RunConfig& cfg) {
    cfg.sync();
    cfg.validate();
}

// Keeps frames of the named classes and relabels them in that order.
Dataset select_classes(const Dataset& d, const std::vector<std::string>& names) {
    if (names.empty()) return d;
    std::vector<int> remap(d.class_names.size(), -1);
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto it = std::find(d.class_names.begin(), d.class_names.end(), names[i]);
        require(it != d.class_names.end(), ErrorKind::dimension,
                "class '" + names[i] + "' is not in the dataset (has " + join(d.class_names, ", ") + ")");
        remap[static_cast<std::size_t>(it - d.class_names.begin())] = static_cast<int>(i);
    }
    Dataset out;
    out.class_names = names;
    out.T = d.T;
    for (const auto& f : d.frames) {
        const int l = remap[static_cast<std::size_t>(f.label)];
        if (l < 0) continue;
        IQFrame g = f;
        g.label = l;
        out.frames.push_back(std::move(g));
    }
    return out;
}

std::vector<IQFrame> snr_window(const std::vector<IQFrame>& frames, const RunConfig& cfg) {
    auto kept = filter_snr(frames, cfg.snr_lo, cfg.snr_hi);
    require(!kept.empty(), ErrorKind::data,
            "no frames left after SNR filter [" + std::to_string(cfg.snr_lo) + ", " + std::to_string(cfg.snr_hi) +
                "] dB");
    return kept;
}

void print_histogram(const Dataset& d) {
    std::map<int, std::size_t> per_class;
    for (const auto& f : d.frames) ++per_class[f.label];
    std::printf("frames %zu\n", d.frames.size());
    for (std::size_t c = 0; c < d.class_names.size(); ++c)
        std::printf("  %-8s %zu\n", d.class_names[c].c_str(), per_class[static_cast<int>(c)]);
}

EvalReport timed_report(const ModelParams& p, const Inputs& test, const std::vector<std::string>& names,
                        const RunConfig& cfg) {
    EvalReport r = evaluate(p, test, names);
    const auto lat = bench_model(p, cfg.latency_warmup, cfg.latency_iterations, cfg.seed);
    r.mean_latency_us = lat.mean_us;
    r.latency_std_us = lat.std_us;
    r.warnings = timer_warnings();
    return r;
}

void write_reports(const EvalReport& r, const std::string& prefix) {
    emit_report({r}, prefix + ".txt", ReportFormat::text);
    emit_report({r}, prefix + ".csv", ReportFormat::csv);
    emit_report({r}, prefix + ".jsonl", ReportFormat::jsonl);
}

int cmd_generate(const RunConfig& cfg, const std::string& out) {
    SynthConfig sc = cfg.synth;
    sc.T = cfg.model.T;
    auto frames = gen_dataset(cfg.n_per_class, sc, cfg.seed, cfg.classes);
    std::vector<std::string> names = cfg.classes;
    if (names.empty()) names.assign(kClassNames.begin(), kClassNames.end());
    Dataset d = make_dataset(std::move(frames), names, sc.T);
    write_dataset(out, d);
    print_histogram(d);
    return 0;
}

int cmd_train(RunConfig cfg, const std::string& data, const std::string& out_dir) {
    Dataset d = select_classes(read_dataset(data), cfg.classes);
    require(d.T == cfg.model.T, ErrorKind::dimension,
            "data frames are [2, " + std::to_string(d.T) + "] but the model expects [2, " +
                std::to_string(cfg.model.T) + "]");
    const auto split = stratified_split(snr_window(d.frames, cfg), cfg.split);
    cfg.model.n_classes = d.class_names.size();
    const Inputs tr = prepare_inputs(split.train, d.T), va = prepare_inputs(split.val, d.T),
                 te = prepare_inputs(split.test, d.T);
    std::printf("variant %s classes %zu train %zu val %zu test %zu params %zu\n",
                std::string(variant_name(cfg.model.attention.variant)).c_str(), d.class_names.size(), tr.size(),
                va.size(), te.size(), param_count(cfg.model));

    fs::create_directories(out_dir);
    io::write_text(out_dir + "/config.txt", dump_config(cfg));
    write_dataset(out_dir + "/test.amcd", make_dataset(split.test, d.class_names, d.T));

    auto res = train(cfg.model, cfg.train, tr, va, [](const EpochRecord& r) {
        std::printf("epoch %3zu  loss %.6f  val_acc %.4f  lr %.3e\n", r.epoch, r.train_loss, r.val_acc, r.lr);
        std::fflush(stdout);
        return true;
    });
    save_checkpoint(out_dir + "/best.amck", res.best, d.class_names);
    save_checkpoint(out_dir + "/last.amck", res.last, d.class_names);
    io::write_text(out_dir + "/history.csv", history_csv(res.history));

    const EvalReport r = timed_report(res.best, te, d.class_names, cfg);
    write_reports(r, out_dir + "/report");
    std::printf("best epoch %zu val_acc %.4f test_acc %.4f macro_f1 %.4f\n", res.best_epoch, res.best_val_acc,
                r.accuracy, r.macro_f1_mean);
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& data, const std::string& out) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    Dataset d = select_classes(read_dataset(data), cfg.classes);
    const ModelConfig& mc = ck.params.config;
    require(d.T == mc.T, ErrorKind::dimension,
            "checkpoint expects input [2, " + std::to_string(mc.T) + "] but data frames are [2, " +
                std::to_string(d.T) + "]");
    require(d.class_names == ck.class_names, ErrorKind::dimension,
            "checkpoint expects " + std::to_string(ck.class_names.size()) + " classes [" + join(ck.class_names, ", ") +
                "] but data has " + std::to_string(d.class_names.size()) + " [" + join(d.class_names, ", ") + "]");
    const Inputs te = prepare_inputs(snr_window(d.frames, cfg), d.T);
    const EvalReport r = timed_report(ck.params, te, ck.class_names, cfg);
    if (!out.empty()) write_reports(r, out);
    std::fputs(render_text({r}).c_str(), stdout);
    return 0;
}

std::vector<std::size_t> parse_lengths(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& item : detail::split_list(s)) {
        const auto L = detail::parse_number<std::size_t>("--lengths", item);
        require(L >= 1, ErrorKind::usage, "--lengths entries must be >= 1");
        out.push_back(L);
    }
    require(!out.empty(), ErrorKind::usage, "--lengths is empty");
    return out;
}

int cmd_bench(RunConfig cfg, const std::vector<std::string>& variant_names, const std::string& lengths,
              const std::vector<std::string>& kernel_names, const std::string& out) {
    if (!lengths.empty()) cfg.bench.lengths = parse_lengths(lengths);
    cfg.bench.validate();
    std::vector<AttentionVariant> variants;
    for (const auto& v : variant_names) {
        auto p = parse_variant(v);
        require(p.has_value(), ErrorKind::usage, "unknown variant '" + v + "' (valid: baseline, causal, sparse)");
        variants.push_back(*p);
    }
    if (variants.empty()) variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
    std::vector<BenchKernel> kernels;
    for (const auto& k : kernel_names) {
        auto p = parse_kernel(k);
        require(p.has_value(), ErrorKind::usage, "unknown kernel '" + k + "' (valid: dense, specialized)");
        kernels.push_back(*p);
    }
    if (kernels.empty()) kernels = {BenchKernel::dense, BenchKernel::specialized};
    const auto r = bench_attention(variants, kernels, cfg.bench, cfg.model.attention_config());
    for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    const std::string csv = bench_csv(r);
    if (out.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        io::write_text(out, csv);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    keep_heap_resident();
    CLI::App app{"CNN-Transformer modulation classifier with baseline, causal and sparse attention"};
    app.footer(config_help() +
               "\nExit codes: 0 ok, 2 usage, 3 I/O, 4 runtime/data/divergence, 5 shape or class mismatch.");
    app.require_subcommand(1);

    ConfigOptions gen_cfg, train_cfg, eval_cfg, bench_cfg;
    std::string gen_out, train_data, train_out, eval_ckpt, eval_data, eval_out, bench_lengths, bench_out;
    std::optional<std::size_t> n_per_class;
    std::optional<int> snr_lo, snr_hi;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> classes, train_variant;
    std::vector<std::string> bench_variants, bench_kernels;
    std::optional<std::size_t> bench_warmup, bench_iters;

    auto* gen = app.add_subcommand("generate", "synthesize a labelled I/Q dataset (AMCD file)");
    gen->add_option("--out", gen_out, "output dataset path")->required();
    gen->add_option("--n-per-class", n_per_class, "frames per (class, snr)");
    gen->add_option("--snr-lo", snr_lo, "lowest SNR in dB");
    gen->add_option("--snr-hi", snr_hi, "highest SNR in dB");
    gen->add_option("--seed", seed, "generation seed");
    gen->add_option("--classes", classes, "comma-separated class subset");
    gen_cfg.add_to(gen);

    auto* tr = app.add_subcommand("train", "split, train, checkpoint and report");
    tr->add_option("--data", train_data, "dataset path")->required();
    tr->add_option("--out-dir", train_out, "output directory")->required();
    tr->add_option("--variant", train_variant, "baseline|causal|sparse");
    tr->add_option("--seed", seed, "seed for split, initialization and training");
    tr->add_option("--classes", classes, "comma-separated class subset");
    train_cfg.add_to(tr);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    ev->add_option("--data", eval_data, "dataset path")->required();
    ev->add_option("--out", eval_out, "report prefix; writes .txt, .csv and .jsonl");
    ev->add_option("--classes", classes, "comma-separated class subset");
    eval_cfg.add_to(ev);

    auto* be = app.add_subcommand("bench", "attention-block latency per variant, kernel and length (CSV)");
    be->add_option("--variant", bench_variants, "variants to run (default: all)");
    be->add_option("--lengths", bench_lengths, "comma-separated sequence lengths");
    be->add_option("--kernel", bench_kernels, "dense|specialized (default: both)");
    be->add_option("--warmup", bench_warmup, "warmup calls");
    be->add_option("--iterations", bench_iters, "measured calls");
    be->add_option("--seed", seed, "weight and input seed");
    be->add_option("--out", bench_out, "CSV path (default: stdout)");
    bench_cfg.add_to(be);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        auto flags = [&](RunConfig& c) {
            if (n_per_class) c.n_per_class = *n_per_class;
            if (snr_lo) c.snr_lo = *snr_lo;
            if (snr_hi) c.snr_hi = *snr_hi;
            if (seed) c.seed = *seed;
            if (classes) find_key("classes").set(c, *classes);
            if (train_variant) find_key("variant").set(c, *train_variant);
            if (bench_warmup) c.bench.warmup = *bench_warmup;
            if (bench_iters) c.bench.iterations = *bench_iters;
            finalize(c);
        };
        if (gen->parsed()) {
            RunConfig c = gen_cfg.load();
            flags(c);
            return cmd_generate(c, gen_out);
        }
        if (tr->parsed()) {
            RunConfig c = train_cfg.load();
            flags(c);
            return cmd_train(c, train_data, train_out);
        }
        if (ev->parsed()) {
            RunConfig c = eval_cfg.load();
            flags(c);
            return cmd_eval(c, eval_ckpt, eval_data, eval_out);
        }
        if (be->parsed()) {
            RunConfig c = bench_cfg.load();
            if (!bench_lengths.empty()) c.bench.lengths = parse_lengths(bench_lengths);
            flags(c);
            return cmd_bench(c, bench_variants, "", bench_kernels, bench_out);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
