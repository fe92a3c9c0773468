#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "amc/evaluation.hpp"

#ifndef AMC_GOLDEN_DIR
#error "AMC_GOLDEN_DIR must point at tests/golden"
#endif

namespace amc {
namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Counts true/false positives directly from the pairs.
std::vector<double> reference_f1(const std::vector<int>& pred, const std::vector<int>& labels, int k) {
    std::vector<double> out;
    for (int c = 0; c < k; ++c) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == c && labels[i] == c) tp += 1;
            if (pred[i] == c && labels[i] != c) fp += 1;
            if (pred[i] != c && labels[i] == c) fn += 1;
        }
        out.push_back(tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn));
    }
    return out;
}

EvalReport known_report(const std::string& variant, double shift) {
    EvalReport r;
    r.variant = variant;
    r.class_names = {"BPSK", "QPSK", "GFSK"};
    r.n_test = 12;
    r.accuracy = 0.75;
    r.per_class_f1 = {0.5 + shift, 0.75, 1.0};
    r.macro_f1_mean = 0.75 + shift / 3;
    r.macro_f1_std = 0.125;
    r.confusion = {{2, 2, 0}, {1, 3, 0}, {0, 0, 4}};
    r.param_count = 120683;
    r.mean_latency_us = 1234.5;
    r.latency_std_us = 6.25;
    return r;
}

TEST(Metrics, PerfectPredictor) {
    std::vector<int> y{0, 1, 2, 2, 1, 0, 0};
    auto r = metrics_from_predictions(y, y, {"a", "b", "c"});
    EXPECT_EQ(r.accuracy, 1.0);
    for (double f : r.per_class_f1) EXPECT_EQ(f, 1.0);
    EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{3, 0, 0}, {0, 2, 0}, {0, 0, 2}}));
    EXPECT_EQ(r.macro_f1_std, 0.0);
}

TEST(Metrics, ConstantPredictorOnBalancedPair) {
    auto r = metrics_from_predictions({0, 0, 0, 0}, {0, 1, 0, 1}, {"a", "b"});
    EXPECT_EQ(r.accuracy, 0.5);
    EXPECT_DOUBLE_EQ(r.per_class_f1[0], 2.0 / 3.0);
    EXPECT_EQ(r.per_class_f1[1], 0.0);
    EXPECT_DOUBLE_EQ(r.macro_f1_mean, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.macro_f1_std, 1.0 / 3.0);
}

TEST(Metrics, MatchesIndependentReference) {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 200;
        std::vector<int> pred(n), labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng() % 3);
            pred[i] = rng() % 4 == 0 ? labels[i] : static_cast<int>(rng() % 3);
        }
        auto r = metrics_from_predictions(pred, labels, {"a", "b", "c"});
        const auto ref = reference_f1(pred, labels, 3);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.per_class_f1[c], ref[c], 1e-15);
        std::size_t hits = 0, total = 0;
        for (std::size_t i = 0; i < n; ++i) hits += pred[i] == labels[i];
        for (std::size_t c = 0; c < 3; ++c) {
            const auto support = std::count(labels.begin(), labels.end(), int(c));
            std::size_t row = 0;
            for (auto v : r.confusion[c]) row += v;
            EXPECT_EQ(row, std::size_t(support));
            total += row;
            EXPECT_GE(r.per_class_f1[c], 0.0);
            EXPECT_LE(r.per_class_f1[c], 1.0);
        }
        EXPECT_EQ(total, n);
        EXPECT_EQ(r.accuracy, double(hits) / double(n));
    }
}

TEST(Metrics, Errors) {
    try {
        metrics_from_predictions({}, {}, {"a"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::data);
    }
    EXPECT_THROW(metrics_from_predictions({0}, {0, 1}, {"a", "b"}), Error);
    EXPECT_THROW(metrics_from_predictions({2}, {0}, {"a", "b"}), Error);
}

TEST(Metrics, EvaluateModel) {
    ModelConfig mc;
    mc.n_classes = 4;
    const auto p = init_params(mc, 2);
    SynthConfig sc;
    sc.snr_grid = {10};
    auto frames = gen_dataset(3, sc, 5, {"BPSK", "QPSK", "PAM4", "GFSK"});
    auto in = prepare_inputs(frames, mc.T);
    auto r = evaluate(p, in, {"BPSK", "QPSK", "PAM4", "GFSK"});
    EXPECT_EQ(r.n_test, 12u);
    EXPECT_EQ(r.param_count, p.count());
    EXPECT_EQ(r.variant, "baseline");
    EXPECT_EQ(r.accuracy, accuracy(predict(p, in), in.labels));
    Inputs empty;
    empty.T = mc.T;
    EXPECT_THROW(evaluate(p, empty, {"a", "b", "c", "d"}), Error);
    EXPECT_THROW(evaluate(p, in, {"a"}), Error);
}

TEST(Report, GoldenFiles) {
    const std::vector<EvalReport> rs{known_report("baseline", 0.0), known_report("sparse", 0.125)};
    EXPECT_EQ(render_text(rs), slurp(std::string(AMC_GOLDEN_DIR) + "/report.txt"));
    EXPECT_EQ(render_csv(rs), slurp(std::string(AMC_GOLDEN_DIR) + "/report.csv"));
    EXPECT_EQ(render_text(rs), render_text(rs));
}

TEST(Report, JsonLinesRoundTrip) {
    Rng rng(3);
    std::vector<int> pred(97), labels(97);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = int(rng() % 5);
        labels[i] = int(rng() % 5);
    }
    auto r = metrics_from_predictions(pred, labels, {"a", "b", "c", "d", "e"});
    r.variant = "causal";
    r.mean_latency_us = 1.0 / 3.0;
    r.warnings = {"timer coarse"};
    auto s = known_report("baseline", 0.0);
    auto back = parse_jsonl(render_jsonl({r, s}));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0], r);
    EXPECT_EQ(back[1], s);
    EXPECT_THROW(parse_jsonl("{\"variant\": 1}\n"), Error);
    EXPECT_THROW(parse_jsonl("not json\n"), Error);
}

TEST(Report, TextMacroMatchesColumnMean) {
    Rng rng(4);
    std::vector<int> pred(500), labels(500);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        labels[i] = int(rng() % 11);
        pred[i] = rng() % 2 ? labels[i] : int(rng() % 11);
    }
    std::vector<std::string> names(kClassNames.begin(), kClassNames.end());
    auto r = metrics_from_predictions(pred, labels, names);
    r.variant = "baseline";
    const std::string text = render_text({r});
    std::istringstream in(text);
    std::string line;
    double sum = 0, macro = -1;
    int rows = 0;
    bool in_table = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string first;
        ls >> first;
        if (first == "baseline" && macro < 0) {
            double acc;
            ls >> acc >> macro;
        }
        if (line == "Per-class F1") in_table = true;
        if (in_table && std::find(names.begin(), names.end(), first) != names.end()) {
            double f;
            ls >> f;
            sum += f;
            ++rows;
        }
        if (in_table && line.empty()) in_table = false;
    }
    ASSERT_EQ(rows, 11);
    EXPECT_NEAR(macro, sum / 11, 1e-9);
}

TEST(Report, UnwritablePathIsIoError) {
    try {
        emit_report({known_report("baseline", 0)}, "/nonexistent-dir/x.csv", ReportFormat::csv);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
    EXPECT_EQ(*parse_report_format("json-lines"), ReportFormat::jsonl);
    EXPECT_FALSE(parse_report_format("xml"));
}

}  // namespace
}  // namespace amc
