#pragma once

// Normalized model inputs and batched eval-mode prediction.

#include <span>
#include <vector>

#include "amc/dataset.hpp"
#include "amc/model.hpp"

namespace amc {

// Frames normalized once, stored contiguously as [N, 2, T].
struct Inputs {
    std::size_t T = 0;
    std::vector<double> values;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * 2 * T, 2 * T}; }
};

inline Inputs prepare_inputs(const std::vector<IQFrame>& frames, std::size_t T) {
    Inputs in;
    in.T = T;
    in.values.reserve(frames.size() * 2 * T);
    for (const auto& f : frames) {
        require(f.iq.size() == 2 * T, ErrorKind::dimension,
                "frame of " + std::to_string(f.iq.size()) + " values, expected " + std::to_string(2 * T));
        const auto v = normalize_instance(std::span<const float>(f.iq));
        in.values.insert(in.values.end(), v.begin(), v.end());
        in.labels.push_back(f.label);
    }
    return in;
}

inline Tensor batch_tensor(const Inputs& in, std::span<const std::size_t> idx) {
    std::vector<double> x;
    x.reserve(idx.size() * 2 * in.T);
    for (auto i : idx) {
        const auto r = in.row(i);
        x.insert(x.end(), r.begin(), r.end());
    }
    return Tensor({idx.size(), 2, in.T}, std::move(x));
}

inline std::vector<int> predict(const ModelParams& params, const Inputs& in, std::size_t batch = 256) {
    NoGradGuard guard;
    std::vector<int> out;
    out.reserve(in.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < in.size(); start += batch) {
        idx.clear();
        for (std::size_t i = start; i < std::min(in.size(), start + batch); ++i) idx.push_back(i);
        const auto p = argmax_rows(forward_eval(params, batch_tensor(in, idx)));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
    require(!labels.empty() && pred.size() == labels.size(), ErrorKind::data,
            "accuracy needs equal-length, non-empty prediction and label vectors");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace amc
