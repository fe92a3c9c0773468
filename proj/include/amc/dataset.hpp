#pragma once

// AMCD dataset container, per-instance normalization, augmentation,
// SNR filtering and stratified splitting.
//
// AMCD layout, little-endian:
//   "AMCD"  u32 version (=1)  u64 n_frames  u32 T  u32 n_classes
//   per class: u32 byte length + UTF-8 name
//   per frame: u16 label, i16 snr_db, 2*T f32 (I row then Q row)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amc/binary_io.hpp"
#include "amc/error.hpp"
#include "amc/random.hpp"
#include "amc/signal.hpp"

namespace amc {

inline constexpr char kDatasetMagic[] = "AMCD";
inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
    std::vector<std::string> class_names;
    std::size_t T = 0;
    std::vector<IQFrame> frames;

    std::size_t n_classes() const { return class_names.size(); }

    void validate() const {
        require(!class_names.empty(), ErrorKind::data, "dataset has no classes");
        for (std::size_t i = 0; i < frames.size(); ++i) {
            require(frames[i].iq.size() == 2 * T, ErrorKind::dimension,
                    "frame " + std::to_string(i) + " has " + std::to_string(frames[i].iq.size()) +
                        " values, expected " + std::to_string(2 * T));
            require(frames[i].label >= 0 && static_cast<std::size_t>(frames[i].label) < class_names.size(),
                    ErrorKind::label, "frame " + std::to_string(i) + " label out of range");
        }
    }
};

inline Dataset make_dataset(std::vector<IQFrame> frames, std::vector<std::string> class_names, std::size_t T) {
    Dataset d{std::move(class_names), T, std::move(frames)};
    d.validate();
    return d;
}

inline std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
    d.validate();
    io::ByteWriter w;
    w.put_bytes(std::string_view(kDatasetMagic, 4));
    w.put_u32(kDatasetVersion);
    w.put_u64(d.frames.size());
    w.put_u32(static_cast<std::uint32_t>(d.T));
    w.put_u32(static_cast<std::uint32_t>(d.class_names.size()));
    for (const auto& n : d.class_names) w.put_string(n);
    for (const auto& f : d.frames) {
        require(f.snr_db >= INT16_MIN && f.snr_db <= INT16_MAX, ErrorKind::data, "snr does not fit in i16");
        w.put_u16(static_cast<std::uint16_t>(f.label));
        w.put_i16(static_cast<std::int16_t>(f.snr_db));
        for (float v : f.iq) w.put_f32(v);
    }
    return w.bytes();
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& path = "dataset") {
    io::ByteReader r(bytes, path);
    if (r.get_bytes(4) != std::string_view(kDatasetMagic, 4)) {
        fail(ErrorKind::io, path + ": not an AMCD dataset (bad magic)");
    }
    const std::uint32_t version = r.get_u32();
    if (version != kDatasetVersion) {
        fail(ErrorKind::io, path + ": unsupported dataset version " + std::to_string(version));
    }
    const std::uint64_t n = r.get_u64();
    Dataset d;
    d.T = r.get_u32();
    const std::uint32_t k = r.get_u32();
    if (d.T == 0 || k == 0) {
        fail(ErrorKind::io, path + ": header has T=" + std::to_string(d.T) + ", n_classes=" + std::to_string(k));
    }
    for (std::uint32_t i = 0; i < k; ++i) d.class_names.push_back(r.get_string());
    const std::uint64_t frame_bytes = 4 + 8 * static_cast<std::uint64_t>(d.T);
    if (r.remaining() != n * frame_bytes) {
        fail(ErrorKind::io, path + ": header promises " + std::to_string(n) + " frames (" +
                                std::to_string(n * frame_bytes) + " bytes), file holds " +
                                std::to_string(r.remaining()) + " bytes");
    }
    d.frames.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        IQFrame& f = d.frames[i];
        f.label = r.get_u16();
        f.snr_db = r.get_i16();
        if (static_cast<std::uint32_t>(f.label) >= k) {
            fail(ErrorKind::io, path + ": frame " + std::to_string(i) + " has label " + std::to_string(f.label) +
                                    " >= n_classes " + std::to_string(k));
        }
        f.iq.resize(2 * d.T);
        for (float& v : f.iq) v = r.get_f32();
    }
    return d;
}

inline void write_dataset(const std::string& path, const Dataset& d) { io::write_file(path, encode_dataset(d)); }

inline Dataset read_dataset(const std::string& path) { return decode_dataset(io::read_file(path), path); }

// Keeps frames with lo <= snr <= hi, preserving order.
inline std::vector<IQFrame> filter_snr(const std::vector<IQFrame>& frames, int lo_db, int hi_db) {
    require(lo_db <= hi_db, ErrorKind::parameter,
            "snr filter bounds reversed: [" + std::to_string(lo_db) + ", " + std::to_string(hi_db) + "]");
    std::vector<IQFrame> out;
    std::copy_if(frames.begin(), frames.end(), std::back_inserter(out),
                 [&](const IQFrame& f) { return f.snr_db >= lo_db && f.snr_db <= hi_db; });
    return out;
}

struct SplitSpec {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
    std::uint64_t seed = 0;

    void validate() const {
        require(train >= 0 && val >= 0 && test >= 0, ErrorKind::parameter, "split fractions must be non-negative");
        require(std::abs(train + val + test - 1.0) <= 1e-9, ErrorKind::parameter, "split fractions must sum to 1");
    }
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

inline constexpr std::size_t kMinStratumSize = 5;

// Largest-remainder allocation of n items over the given fractions.
inline std::array<std::size_t, 3> allocate_counts(std::size_t n, const std::array<double, 3>& frac) {
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = frac[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[i] = exact - static_cast<double>(counts[i]);
        used += counts[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (std::size_t j = 0; used < n; ++j, ++used) ++counts[order[j % 3]];
    return counts;
}

// Partitions frame indices within every (label, snr) stratum. Each split's
// index list is sorted ascending.
inline SplitIndices stratified_split_indices(const std::vector<IQFrame>& frames, const SplitSpec& spec) {
    spec.validate();
    std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < frames.size(); ++i) strata[{frames[i].label, frames[i].snr_db}].push_back(i);
    SplitIndices out;
    for (auto& [key, idx] : strata) {
        if (idx.size() < kMinStratumSize) {
            fail(ErrorKind::data, "stratum (label " + std::to_string(key.first) + ", snr " +
                                      std::to_string(key.second) + " dB) has " + std::to_string(idx.size()) +
                                      " frames; at least " + std::to_string(kMinStratumSize) + " are needed");
        }
        Rng rng = derive_rng(spec.seed, {static_cast<std::uint64_t>(key.first),
                                         static_cast<std::uint64_t>(static_cast<std::int64_t>(key.second))});
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto c = allocate_counts(idx.size(), {spec.train, spec.val, spec.test});
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + c[0]);
        out.val.insert(out.val.end(), idx.begin() + c[0], idx.begin() + c[0] + c[1]);
        out.test.insert(out.test.end(), idx.begin() + c[0] + c[1], idx.end());
    }
    for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
    return out;
}

struct SplitFrames {
    std::vector<IQFrame> train, val, test;
};

inline SplitFrames stratified_split(const std::vector<IQFrame>& frames, const SplitSpec& spec) {
    const auto idx = stratified_split_indices(frames, spec);
    auto take = [&](const std::vector<std::size_t>& ix) {
        std::vector<IQFrame> v;
        v.reserve(ix.size());
        for (auto i : ix) v.push_back(frames[i]);
        return v;
    };
    return {take(idx.train), take(idx.val), take(idx.test)};
}

inline constexpr double kNormalizeEps = 1e-8;

// Zero mean, unit population std over all values jointly; constant input
// maps to zeros.
inline std::vector<double> normalize_instance(std::span<const double> x) {
    require(x.size() > 1, ErrorKind::data, "normalization needs more than one value");
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    const double sd = std::max(std::sqrt(var / n), kNormalizeEps);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / sd;
    return out;
}

inline std::vector<double> normalize_instance(std::span<const float> x) {
    std::vector<double> d(x.begin(), x.end());
    return normalize_instance(std::span<const double>(d));
}

inline IQFrame normalize_instance(const IQFrame& f) {
    IQFrame out = f;
    const auto v = normalize_instance(std::span<const float>(f.iq));
    std::transform(v.begin(), v.end(), out.iq.begin(), [](double d) { return static_cast<float>(d); });
    return out;
}

struct AugmentConfig {
    double probability = 0.3;
    double noise_std = 0.02;
};

// Train-time Gaussian noise injection; returns whether noise was added.
inline bool augment(std::span<double> x, Rng& rng, const AugmentConfig& cfg = {}) {
    std::bernoulli_distribution coin(cfg.probability);
    if (!coin(rng)) return false;
    std::normal_distribution<double> nd(0.0, cfg.noise_std);
    for (double& v : x) v += nd(rng);
    return true;
}

}  // namespace amc
