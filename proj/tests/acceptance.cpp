// Acceptance run: one PASS/FAIL line per criterion; exit status 1 on any FAIL.
// Usage: acceptance <amc binary> <smoke config>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "amc/bench.hpp"
#include "amc/evaluation.hpp"
#include "amc/heap.hpp"
#include "amc/trainer.hpp"
#include "attention_properties.hpp"
#include "gradient_suite.hpp"
#include "kernel_oracle.hpp"

namespace fs = std::filesystem;
using namespace amc;

namespace {

struct Outcome {
    enum { pass, fail, skip } status;
    std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::fail ? "FAIL" : "SKIP";
    if (o.status == Outcome::fail) ++failures;
    std::printf("%s %s: %s [%.1fs]\n", tag, name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
}

Outcome verdict(bool ok, const std::string& detail) { return {ok ? Outcome::pass : Outcome::fail, detail}; }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run(const std::string& cmd) {
    const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = testing::run_gradient_suite(20);
    const double secs = elapsed_since(t0);
    return verdict(r.op_max_rel_err < 1e-4 && r.model_max_rel_err < 1e-3 && secs < 120,
                   fmt("20 seeds, %zu derivatives; op max rel err %.2e (< 1e-4), model %.2e (< 1e-3)", r.checks,
                       r.op_max_rel_err, r.model_max_rel_err) +
                       (r.op_max_rel_err >= 1e-4 ? "; worst op " + r.worst_op : "") +
                       (r.model_max_rel_err >= 1e-3 ? "; worst model " + r.worst_model : ""));
}

Outcome mask_properties() {
    const testing::PropertyResult rs[] = {testing::causal_invariance(50, 11), testing::sparse_locality(50, 12),
                                          testing::sparse_wide_equals_baseline(50, 13),
                                          testing::length_one_agreement(50, 14)};
    const char* names[] = {"causal invariance", "sparse locality", "wide sparse = baseline", "L=1 agreement"};
    bool ok = true;
    std::string detail;
    for (int i = 0; i < 4; ++i) {
        ok = ok && rs[i].ok;
        detail += fmt("%s%s %d trials max dev %.1e", i ? "; " : "", names[i], rs[i].trials, rs[i].worst);
        if (!rs[i].ok) detail += " (" + rs[i].detail + ")";
    }
    return verdict(ok, detail);
}

Outcome kernel_oracles() {
    const double banded = testing::kernel_oracle_error(AttentionVariant::sparse, 100, 21);
    const double causal = testing::kernel_oracle_error(AttentionVariant::causal, 100, 22);
    return verdict(banded <= 1e-9 && causal <= 1e-9,
                   fmt("100 instances each; banded max |diff| %.2e, triangular %.2e (<= 1e-9)", banded, causal));
}

Outcome complexity_scaling() {
    const std::vector<std::size_t> lengths{128, 256, 512, 1024, 2048};
    const std::size_t warmup = 1, iters = 100;
    auto measure = [&](AttentionVariant v, BenchKernel k, std::size_t L) {
        AttentionConfig ac;
        ac.variant = v;
        AttentionBlock block(ac, 0);
        return bench_attention_block(block, L, k, warmup, iters, 0).mean_us;
    };
    std::vector<double> xs, dense, banded;
    for (auto L : lengths) {
        xs.push_back(static_cast<double>(L));
        dense.push_back(measure(AttentionVariant::baseline, BenchKernel::dense, L));
        banded.push_back(measure(AttentionVariant::sparse, BenchKernel::specialized, L));
    }
    const double s_dense = loglog_slope(xs, dense), s_banded = loglog_slope(xs, banded);
    // Ratios at L=512 from interleaved rounds, best round per kernel, to damp drift in machine load.
    double d512 = dense[2], b512 = banded[2], c512 = measure(AttentionVariant::causal, BenchKernel::specialized, 512);
    for (int round = 0; round < 4; ++round) {
        d512 = std::min(d512, measure(AttentionVariant::baseline, BenchKernel::dense, 512));
        b512 = std::min(b512, measure(AttentionVariant::sparse, BenchKernel::specialized, 512));
        c512 = std::min(c512, measure(AttentionVariant::causal, BenchKernel::specialized, 512));
    }
    const double r_sparse = b512 / d512, r_causal = c512 / d512;
    return verdict(s_dense >= 1.6 && s_banded <= 1.3 && r_sparse <= 0.5 && r_causal <= 0.75,
                   fmt("slope dense %.2f (>= 1.6), banded %.2f (<= 1.3); at L=512 sparse/dense %.3f (<= 0.5), "
                       "causal/dense %.3f (<= 0.75); dense L=512 %.0f us",
                       s_dense, s_banded, r_sparse, r_causal, d512));
}

Outcome parameter_count() {
    constexpr std::size_t kFrozen = 120683;
    const ModelConfig mc;
    const std::size_t formula = param_count(mc), enumerated = init_params(mc, 0).count();
    return verdict(formula == kFrozen && enumerated == kFrozen && formula >= 100000 && formula <= 125000,
                   fmt("default config %zu trainable scalars (enumerated %zu), frozen %zu, window [100000, 125000]",
                       formula, enumerated, kFrozen));
}

Outcome training_smoke() {
    const std::vector<std::string> names{"BPSK", "PAM4", "GFSK", "QPSK"};
    SynthConfig sc;
    sc.snr_grid = {18};
    const auto frames = gen_dataset(500, sc, 1, names);
    SplitSpec spec;
    spec.seed = 1;
    const auto split = stratified_split(frames, spec);
    const ModelConfig mc = [] {
        ModelConfig c;
        c.n_classes = 4;
        return c;
    }();
    const Inputs tr = prepare_inputs(split.train, mc.T), va = prepare_inputs(split.val, mc.T);
    TrainConfig tc;
    tc.seed = 1;
    // Stop once the target is met; the 30-epoch budget caps the run otherwise.
    auto stop = [](const EpochRecord& r) { return r.val_acc < 0.9 && r.epoch < 30; };
    const auto a = train(mc, tc, tr, va, stop);
    const auto b = train(mc, tc, tr, va, stop);
    const bool deterministic = history_csv(a.history) == history_csv(b.history);
    const bool reached = a.best_val_acc >= 0.9 && a.best_epoch <= 30;

    // Initial loss on the 11-class configuration.
    SynthConfig all;
    all.snr_grid = {18};
    const auto f11 = gen_dataset(4, all, 2);
    const Inputs in11 = prepare_inputs(f11, mc.T);
    TrainConfig t1;
    t1.max_epochs = 1;
    t1.batch_size = in11.size();
    const double loss0 = train(ModelConfig{}, t1, in11, in11).initial_loss;
    const bool loss_ok = std::abs(loss0 - std::log(11.0)) <= 0.2;
    return verdict(reached && deterministic && loss_ok,
                   fmt("4 classes at 18 dB, 2000 frames: val acc %.4f at epoch %zu (>= 0.9 within 30); rerun "
                       "history %s; 11-class initial loss %.4f (ln 11 = %.4f, tol 0.2)",
                       a.best_val_acc, a.best_epoch, deterministic ? "identical" : "DIFFERS", loss0,
                       std::log(11.0)));
}

Outcome full_run(const std::string& amc) {
    const char* flag = std::getenv("AMC_FULL");
    if (!flag || std::string(flag) != "1") {
        return {Outcome::skip, "optional long run (11 classes, -6..18 dB, 200 frames per class and SNR, three "
                               "variants); set AMC_FULL=1 to run"};
    }
    const fs::path dir = fs::temp_directory_path() / "amc_acceptance_full";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string data = (dir / "full.amcd").string();
    if (run(amc + " generate --seed 1 --n-per-class 200 --out " + data) != 0) return {Outcome::fail, "generate failed"};
    std::vector<EvalReport> reports;
    for (const char* v : {"baseline", "causal", "sparse"}) {
        const fs::path out = dir / v;
        if (run(amc + " train --seed 1 --variant " + v + " --data " + data + " --out-dir " + out.string()) != 0)
            return {Outcome::fail, std::string("train failed for ") + v};
        reports.push_back(parse_jsonl(slurp(out / "report.jsonl")).at(0));
    }
    emit_report(reports, (dir / "summary.txt").string(), ReportFormat::text);
    emit_report(reports, (dir / "summary.csv").string(), ReportFormat::csv);
    const double base = reports[0].accuracy, causal = reports[1].accuracy, sparse = reports[2].accuracy;
    return verdict(base >= sparse - 0.05, fmt("test acc baseline %.4f, causal %.4f, sparse %.4f; baseline >= sparse "
                                              "- 0.05; summary in %s",
                                              base, causal, sparse, dir.string().c_str()));
}

Outcome cli_determinism(const std::string& amc, const std::string& smoke_cfg) {
    const fs::path dir = fs::temp_directory_path() / "amc_acceptance_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string data = (dir / "smoke.amcd").string();
    const std::string base = amc + " train --config " + smoke_cfg + " --data " + data + " --out-dir ";
    if (run(amc + " generate --config " + smoke_cfg + " --out " + data) != 0) return {Outcome::fail, "generate failed"};
    if (run(base + (dir / "a").string()) != 0 || run(base + (dir / "b").string()) != 0)
        return {Outcome::fail, "train failed"};
    const std::string ha = slurp(dir / "a" / "history.csv"), hb = slurp(dir / "b" / "history.csv");
    std::size_t epochs = 0;
    for (char c : ha) epochs += c == '\n';
    return verdict(!ha.empty() && ha == hb,
                   fmt("two `amc train` runs with seed 1: history.csv %s (%zu bytes, %zu epochs)",
                       ha == hb ? "byte-identical" : "DIFFERS", ha.size(), epochs ? epochs - 1 : 0));
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: %s <amc binary> <smoke config>\n", argv[0]);
        return 2;
    }
    keep_heap_resident();
    const std::string amc = argv[1], smoke_cfg = argv[2];
    criterion("gradient suite", gradient_suite);
    criterion("mask properties", mask_properties);
    criterion("kernel oracles", kernel_oracles);
    criterion("complexity scaling", complexity_scaling);
    criterion("parameter count", parameter_count);
    criterion("training smoke", training_smoke);
    criterion("full synthetic run", [&] { return full_run(amc); });
    criterion("determinism", [&] { return cli_determinism(amc, smoke_cfg); });
    std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
