#pragma once

// Accuracy, per-class F1, confusion matrix and report rendering.
//
// CSV layout (frozen):
//   modulation,<variant>,<variant>,...      one column per report
//   <class name>,<f1>,<f1>,...              one row per class
//   accuracy,...  macro_f1_mean,...  macro_f1_std,...  params,...
//   latency_us_mean,...  latency_us_std,...  n_test,...
//
// JSON lines: one object per report with the EvalReport field names.

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "amc/binary_io.hpp"
#include "amc/error.hpp"
#include "amc/inference.hpp"
#include "json.hpp"

namespace amc {

struct EvalReport {
    std::string variant;
    std::vector<std::string> class_names;
    std::size_t n_test = 0;
    double accuracy = 0;
    std::vector<double> per_class_f1;
    double macro_f1_mean = 0;
    double macro_f1_std = 0;  // population std over classes
    std::vector<std::vector<std::size_t>> confusion;  // rows true, cols predicted
    std::size_t param_count = 0;
    double mean_latency_us = 0;
    double latency_std_us = 0;
    std::vector<std::string> warnings;

    bool operator==(const EvalReport&) const = default;
};

// Metrics of a prediction vector; F1 is 0 for a class with no predictions
// or no support.
inline EvalReport metrics_from_predictions(const std::vector<int>& pred, const std::vector<int>& labels,
                                           const std::vector<std::string>& class_names) {
    require(!labels.empty(), ErrorKind::data, "cannot evaluate an empty test set");
    require(pred.size() == labels.size(), ErrorKind::dimension, "prediction and label counts differ");
    const std::size_t k = class_names.size();
    EvalReport r;
    r.class_names = class_names;
    r.n_test = labels.size();
    r.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k && pred[i] >= 0 &&
                    static_cast<std::size_t>(pred[i]) < k,
                ErrorKind::label, "label or prediction out of range at index " + std::to_string(i));
        ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred[i])];
    }
    std::size_t trace = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += r.confusion[c][j];
            col += r.confusion[j][c];
        }
        const double tp = static_cast<double>(r.confusion[c][c]);
        trace += r.confusion[c][c];
        const double p = col ? tp / static_cast<double>(col) : 0.0;
        const double rec = row ? tp / static_cast<double>(row) : 0.0;
        r.per_class_f1.push_back(p + rec > 0 ? 2 * p * rec / (p + rec) : 0.0);
    }
    r.accuracy = static_cast<double>(trace) / static_cast<double>(labels.size());
    double mean = 0;
    for (double f : r.per_class_f1) mean += f;
    mean /= static_cast<double>(k);
    double var = 0;
    for (double f : r.per_class_f1) var += (f - mean) * (f - mean);
    r.macro_f1_mean = mean;
    r.macro_f1_std = std::sqrt(var / static_cast<double>(k));
    return r;
}

inline EvalReport evaluate(const ModelParams& params, const Inputs& test, const std::vector<std::string>& class_names) {
    require(test.size() > 0, ErrorKind::data, "cannot evaluate an empty test set");
    require(class_names.size() == params.config.n_classes, ErrorKind::dimension,
            "model has " + std::to_string(params.config.n_classes) + " outputs but " +
                std::to_string(class_names.size()) + " class names were given");
    EvalReport r = metrics_from_predictions(predict(params, test), test.labels, class_names);
    r.variant = std::string(variant_name(params.config.attention.variant));
    r.param_count = params.count();
    return r;
}

enum class ReportFormat { text, csv, jsonl };

inline std::optional<ReportFormat> parse_report_format(std::string_view s) {
    if (s == "text") return ReportFormat::text;
    if (s == "csv") return ReportFormat::csv;
    if (s == "jsonl" || s == "json-lines") return ReportFormat::jsonl;
    return std::nullopt;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline void require_same_classes(const std::vector<EvalReport>& reports) {
    require(!reports.empty(), ErrorKind::data, "no reports to render");
    for (const auto& r : reports) {
        require(r.class_names == reports[0].class_names && r.per_class_f1.size() == r.class_names.size(),
                ErrorKind::data, "reports disagree on the class table");
    }
}

}  // namespace detail

inline std::string render_text(const std::vector<EvalReport>& reports) {
    detail::require_same_classes(reports);
    std::ostringstream o;
    o << "Summary\n";
    o << "variant      accuracy  macro_f1 mean +- std          params  latency_us mean +- std\n";
    for (const auto& r : reports) {
        char line[256];
        std::snprintf(line, sizeof line, "%-12s %.6f  %.10f +- %.10f  %8zu  %.3f +- %.3f\n", r.variant.c_str(),
                      r.accuracy, r.macro_f1_mean, r.macro_f1_std, r.param_count, r.mean_latency_us,
                      r.latency_std_us);
        o << line;
    }
    o << "\nPer-class F1\n";
    char cell[64];
    std::snprintf(cell, sizeof cell, "%-10s", "class");
    o << cell;
    for (const auto& r : reports) {
        std::snprintf(cell, sizeof cell, " %14s", r.variant.c_str());
        o << cell;
    }
    o << "\n";
    for (std::size_t c = 0; c < reports[0].class_names.size(); ++c) {
        std::snprintf(cell, sizeof cell, "%-10s", reports[0].class_names[c].c_str());
        o << cell;
        for (const auto& r : reports) o << " " << detail::fmt("%14.10f", r.per_class_f1[c]);
        o << "\n";
    }
    for (const auto& r : reports) {
        o << "\nConfusion (" << r.variant << ", rows true, cols predicted, n=" << r.n_test << ")\n";
        for (std::size_t i = 0; i < r.confusion.size(); ++i) {
            std::snprintf(cell, sizeof cell, "%-10s", r.class_names[i].c_str());
            o << cell;
            for (auto v : r.confusion[i]) {
                std::snprintf(cell, sizeof cell, " %6zu", v);
                o << cell;
            }
            o << "\n";
        }
        for (const auto& w : r.warnings) o << "warning: " << w << "\n";
    }
    return o.str();
}

inline std::string render_csv(const std::vector<EvalReport>& reports) {
    detail::require_same_classes(reports);
    std::ostringstream o;
    o << "modulation";
    for (const auto& r : reports) o << "," << r.variant;
    o << "\n";
    for (std::size_t c = 0; c < reports[0].class_names.size(); ++c) {
        o << reports[0].class_names[c];
        for (const auto& r : reports) o << "," << detail::fmt("%.10f", r.per_class_f1[c]);
        o << "\n";
    }
    auto row = [&](const char* name, auto get, const char* f) {
        o << name;
        for (const auto& r : reports) o << "," << detail::fmt(f, static_cast<double>(get(r)));
        o << "\n";
    };
    row("accuracy", [](const EvalReport& r) { return r.accuracy; }, "%.10f");
    row("macro_f1_mean", [](const EvalReport& r) { return r.macro_f1_mean; }, "%.10f");
    row("macro_f1_std", [](const EvalReport& r) { return r.macro_f1_std; }, "%.10f");
    row("params", [](const EvalReport& r) { return r.param_count; }, "%.0f");
    row("latency_us_mean", [](const EvalReport& r) { return r.mean_latency_us; }, "%.3f");
    row("latency_us_std", [](const EvalReport& r) { return r.latency_std_us; }, "%.3f");
    row("n_test", [](const EvalReport& r) { return r.n_test; }, "%.0f");
    return o.str();
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["variant"] = r.variant;
    j["class_names"] = r.class_names;
    j["n_test"] = r.n_test;
    j["accuracy"] = r.accuracy;
    j["per_class_f1"] = r.per_class_f1;
    j["macro_f1_mean"] = r.macro_f1_mean;
    j["macro_f1_std"] = r.macro_f1_std;
    j["confusion"] = r.confusion;
    j["param_count"] = r.param_count;
    j["mean_latency_us"] = r.mean_latency_us;
    j["latency_std_us"] = r.latency_std_us;
    j["warnings"] = r.warnings;
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        j.at("variant").get_to(r.variant);
        j.at("class_names").get_to(r.class_names);
        j.at("n_test").get_to(r.n_test);
        j.at("accuracy").get_to(r.accuracy);
        j.at("per_class_f1").get_to(r.per_class_f1);
        j.at("macro_f1_mean").get_to(r.macro_f1_mean);
        j.at("macro_f1_std").get_to(r.macro_f1_std);
        j.at("confusion").get_to(r.confusion);
        j.at("param_count").get_to(r.param_count);
        j.at("mean_latency_us").get_to(r.mean_latency_us);
        j.at("latency_std_us").get_to(r.latency_std_us);
        j.at("warnings").get_to(r.warnings);
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, std::string("malformed report record: ") + e.what());
    }
}

inline std::string render_jsonl(const std::vector<EvalReport>& reports) {
    std::string out;
    for (const auto& r : reports) out += report_to_json(r).dump() + "\n";
    return out;
}

inline std::vector<EvalReport> parse_jsonl(const std::string& text) {
    std::vector<EvalReport> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorKind::io, std::string("report line is not JSON: ") + e.what());
        }
        out.push_back(report_from_json(j));
    }
    return out;
}

inline std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format) {
    switch (format) {
        case ReportFormat::text: return render_text(reports);
        case ReportFormat::csv: return render_csv(reports);
        case ReportFormat::jsonl: return render_jsonl(reports);
    }
    return {};
}

inline void emit_report(const std::vector<EvalReport>& reports, const std::string& path, ReportFormat format) {
    io::write_text(path, render_report(reports, format));
}

}  // namespace amc
