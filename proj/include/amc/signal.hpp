#pragma once

// Synthetic I/Q frames for the eleven modulation classes.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "amc/error.hpp"
#include "amc/random.hpp"

namespace amc {

using cdouble = std::complex<double>;

// Label order is fixed (alphabetical); label i <-> kClassNames[i].
inline constexpr std::array<std::string_view, 11> kClassNames = {
    "8PSK", "AM-DSB", "AM-SSB", "BPSK", "CPFSK", "GFSK", "PAM4", "QAM16", "QAM64", "QPSK", "WBFM"};

inline constexpr std::size_t kNumClasses = kClassNames.size();

inline int class_index(std::string_view name) {
    for (std::size_t i = 0; i < kNumClasses; ++i)
        if (kClassNames[i] == name) return static_cast<int>(i);
    std::string known;
    for (auto n : kClassNames) known += (known.empty() ? "" : ", ") + std::string(n);
    fail(ErrorKind::label, "unknown modulation class '" + std::string(name) + "' (expected one of " + known + ")");
}

inline std::string_view class_name(int label) {
    require(label >= 0 && static_cast<std::size_t>(label) < kNumClasses, ErrorKind::label,
            "class index " + std::to_string(label) + " out of range");
    return kClassNames[static_cast<std::size_t>(label)];
}

inline std::vector<int> default_snr_grid() {
    std::vector<int> g;
    for (int s = -6; s <= 18; s += 2) g.push_back(s);
    return g;
}

struct SynthConfig {
    std::size_t T = 128;
    std::size_t samples_per_symbol = 8;
    double rolloff = 0.35;
    std::size_t span_symbols = 6;
    double max_cfo = 0.01;  // cycles/sample, drawn uniformly in [-max_cfo, max_cfo]
    bool random_phase = true;
    std::vector<int> snr_grid = default_snr_grid();

    void validate() const {
        require(T >= 2, ErrorKind::parameter, "frame length T must be >= 2");
        require(samples_per_symbol >= 2, ErrorKind::parameter, "samples_per_symbol must be >= 2");
        require(rolloff > 0.0 && rolloff < 1.0, ErrorKind::parameter, "rolloff must be in (0, 1)");
        require(span_symbols >= 2 && span_symbols % 2 == 0, ErrorKind::parameter,
                "pulse span must be an even number of symbols");
        require(max_cfo >= 0.0 && max_cfo < 0.5, ErrorKind::parameter, "max_cfo must be in [0, 0.5)");
        require(!snr_grid.empty(), ErrorKind::parameter, "snr grid is empty");
    }
};

struct IQFrame {
    std::vector<float> iq;  // [2, T]: row 0 in-phase, row 1 quadrature
    int label = 0;
    int snr_db = 0;

    std::size_t length() const { return iq.size() / 2; }
};

// Unit-average-power constellation of a digital class; empty for others.
inline std::vector<cdouble> constellation(int label) {
    std::vector<cdouble> pts;
    const std::string_view name = class_name(label);
    auto grid = [&](int m, double scale) {
        for (int i = -(m - 1); i <= m - 1; i += 2)
            for (int q = -(m - 1); q <= m - 1; q += 2) pts.emplace_back(i / scale, q / scale);
    };
    if (name == "BPSK") {
        pts = {{-1, 0}, {1, 0}};
    } else if (name == "QPSK") {
        for (int k = 0; k < 4; ++k) pts.push_back(std::polar(1.0, std::numbers::pi / 4 + k * std::numbers::pi / 2));
    } else if (name == "8PSK") {
        for (int k = 0; k < 8; ++k) pts.push_back(std::polar(1.0, k * std::numbers::pi / 4));
    } else if (name == "PAM4") {
        for (int a : {-3, -1, 1, 3}) pts.emplace_back(a / std::sqrt(5.0), 0.0);
    } else if (name == "QAM16") {
        grid(4, std::sqrt(10.0));
    } else if (name == "QAM64") {
        grid(8, std::sqrt(42.0));
    }
    return pts;
}

// Unit-energy root-raised-cosine taps, length span * sps + 1, centered.
inline std::vector<double> rrc_taps(std::size_t sps, double beta, std::size_t span) {
    const std::size_t half = span * sps / 2;
    const double pi = std::numbers::pi;
    std::vector<double> h(2 * half + 1);
    double energy = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double t = (static_cast<double>(i) - static_cast<double>(half)) / static_cast<double>(sps);
        double v;
        if (t == 0.0) {
            v = 1.0 - beta + 4.0 * beta / pi;
        } else if (std::abs(std::abs(t) - 1.0 / (4.0 * beta)) < 1e-9) {
            v = beta / std::sqrt(2.0) *
                ((1 + 2 / pi) * std::sin(pi / (4 * beta)) + (1 - 2 / pi) * std::cos(pi / (4 * beta)));
        } else {
            v = (std::sin(pi * t * (1 - beta)) + 4 * beta * t * std::cos(pi * t * (1 + beta))) /
                (pi * t * (1 - (4 * beta * t) * (4 * beta * t)));
        }
        h[i] = v;
        energy += v * v;
    }
    for (double& v : h) v /= std::sqrt(energy);
    return h;
}

namespace detail {

// Pulse-shaped symbol stream; sample n = k * sps is the center of symbol k.
inline std::vector<cdouble> shaped_symbols(const std::vector<cdouble>& pts, const SynthConfig& cfg, Rng& rng) {
    const auto g = rrc_taps(cfg.samples_per_symbol, cfg.rolloff, cfg.span_symbols);
    const long sps = static_cast<long>(cfg.samples_per_symbol);
    const long half = static_cast<long>(g.size() / 2);
    const long T = static_cast<long>(cfg.T);
    const long k_lo = -((half + sps - 1) / sps), k_hi = (T - 1 + half) / sps;
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    std::vector<cdouble> out(cfg.T);
    for (long k = k_lo; k <= k_hi; ++k) {
        const cdouble s = pts[pick(rng)];
        for (long n = std::max(0L, k * sps - half); n <= std::min(T - 1, k * sps + half); ++n) {
            out[static_cast<std::size_t>(n)] += s * g[static_cast<std::size_t>(n - k * sps + half)];
        }
    }
    return out;
}

// Continuous-phase binary FSK, modulation index 0.5. bt > 0 enables the
// Gaussian frequency pre-filter.
inline std::vector<cdouble> fsk(const SynthConfig& cfg, double bt, Rng& rng) {
    const std::size_t sps = cfg.samples_per_symbol;
    const double h = 0.5;
    std::vector<double> gauss{1.0};
    if (bt > 0) {
        const double sigma = std::sqrt(std::log(2.0)) / (2 * std::numbers::pi * bt) * static_cast<double>(sps);
        const std::size_t half = 2 * sps;
        gauss.assign(2 * half + 1, 0.0);
        double s = 0;
        for (std::size_t i = 0; i < gauss.size(); ++i) {
            const double t = static_cast<double>(i) - static_cast<double>(half);
            gauss[i] = std::exp(-t * t / (2 * sigma * sigma));
            s += gauss[i];
        }
        for (double& v : gauss) v /= s;
    }
    // Lead-in long enough for the filter transient to end before the frame.
    const std::size_t lead = gauss.size();
    const std::size_t total = lead + cfg.T;
    std::bernoulli_distribution bit(0.5);
    std::vector<double> rect(total + gauss.size());
    for (std::size_t n = 0; n < rect.size(); n += sps) {
        const double a = bit(rng) ? 1.0 : -1.0;
        for (std::size_t j = n; j < std::min(n + sps, rect.size()); ++j) rect[j] = a;
    }
    std::uniform_real_distribution<double> ph(0.0, 2 * std::numbers::pi);
    double phase = ph(rng);
    std::vector<cdouble> out(cfg.T);
    for (std::size_t n = 0; n < total; ++n) {
        double f = 0;
        for (std::size_t j = 0; j < gauss.size(); ++j) f += gauss[j] * rect[n + j];
        phase += std::numbers::pi * h * f / static_cast<double>(sps);
        if (n >= lead) out[n - lead] = std::polar(1.0, phase);
    }
    return out;
}

// Audio-like message: three random tones below 0.1 cycles/sample, |m| <= 1.
// Returns the analytic form; the real message is its real part.
inline std::vector<cdouble> tone_message(std::size_t T, Rng& rng) {
    std::uniform_real_distribution<double> freq(0.005, 0.1), amp(0.3, 1.0), ph(0.0, 2 * std::numbers::pi);
    std::array<double, 3> f{}, a{}, p{};
    double norm = 0;
    for (int i = 0; i < 3; ++i) {
        f[i] = freq(rng);
        a[i] = amp(rng);
        p[i] = ph(rng);
        norm += a[i];
    }
    std::vector<cdouble> m(T);
    for (std::size_t n = 0; n < T; ++n)
        for (int i = 0; i < 3; ++i) m[n] += std::polar(a[i] / norm, 2 * std::numbers::pi * f[i] * n + p[i]);
    return m;
}

}  // namespace detail

// Noise-free baseband waveform of length cfg.T, including carrier frequency
// and phase offsets, before power normalization.
inline std::vector<cdouble> synthesize_clean(int label, const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::string_view name = class_name(label);
    std::vector<cdouble> x;
    if (auto pts = constellation(label); !pts.empty()) {
        x = detail::shaped_symbols(pts, cfg, rng);
    } else if (name == "CPFSK") {
        x = detail::fsk(cfg, 0.0, rng);
    } else if (name == "GFSK") {
        x = detail::fsk(cfg, 0.35, rng);
    } else {
        auto m = detail::tone_message(cfg.T, rng);
        x.resize(cfg.T);
        if (name == "AM-DSB") {
            for (std::size_t n = 0; n < cfg.T; ++n) x[n] = 1.0 + 0.5 * m[n].real();
        } else if (name == "AM-SSB") {
            x = m;
        } else {  // WBFM, peak deviation 0.08 cycles/sample
            double phase = 0;
            for (std::size_t n = 0; n < cfg.T; ++n) {
                phase += 2 * std::numbers::pi * 0.08 * m[n].real();
                x[n] = std::polar(1.0, phase);
            }
        }
    }
    std::uniform_real_distribution<double> cfo(-cfg.max_cfo, cfg.max_cfo), ph(0.0, 2 * std::numbers::pi);
    const double f = cfg.max_cfo > 0 ? cfo(rng) : 0.0;
    const double phi = cfg.random_phase ? ph(rng) : 0.0;
    if (f != 0.0 || phi != 0.0) {
        for (std::size_t n = 0; n < x.size(); ++n) x[n] *= std::polar(1.0, 2 * std::numbers::pi * f * n + phi);
    }
    return x;
}

inline double mean_power(const std::vector<cdouble>& x) {
    double p = 0;
    for (const auto& v : x) p += std::norm(v);
    return p / static_cast<double>(x.size());
}

// Adds complex white Gaussian noise with power mean_power(x) / 10^(snr/10),
// split equally between I and Q.
inline std::vector<cdouble> add_awgn(const std::vector<cdouble>& x, double snr_db, Rng& rng) {
    const double noise_power = mean_power(x) / std::pow(10.0, snr_db / 10.0);
    std::normal_distribution<double> nd(0.0, std::sqrt(noise_power / 2));
    std::vector<cdouble> y(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
        const double re = nd(rng);
        y[n] = x[n] + cdouble(re, nd(rng));
    }
    return y;
}

inline IQFrame to_frame(const std::vector<cdouble>& x, int label, int snr_db) {
    IQFrame f;
    f.label = label;
    f.snr_db = snr_db;
    f.iq.resize(2 * x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
        f.iq[n] = static_cast<float>(x[n].real());
        f.iq[x.size() + n] = static_cast<float>(x[n].imag());
    }
    return f;
}

// One frame at unit signal power plus AWGN at snr_db.
inline IQFrame gen_frame(int label, int snr_db, const SynthConfig& cfg, Rng& rng) {
    require(std::find(cfg.snr_grid.begin(), cfg.snr_grid.end(), snr_db) != cfg.snr_grid.end(), ErrorKind::parameter,
            "snr " + std::to_string(snr_db) + " dB is not on the configured grid");
    auto x = synthesize_clean(label, cfg, rng);
    const double p = mean_power(x);
    for (auto& v : x) v /= std::sqrt(p);
    return to_frame(add_awgn(x, snr_db, rng), label, snr_db);
}

inline IQFrame gen_frame(std::string_view name, int snr_db, const SynthConfig& cfg, Rng& rng) {
    return gen_frame(class_index(name), snr_db, cfg, rng);
}

// n frames for every (class, snr) pair, classes in the given order; frame
// labels are positions in `classes`. Each frame draws from its own stream
// keyed by (seed, class, snr, index).
inline std::vector<IQFrame> gen_dataset(std::size_t n, const SynthConfig& cfg, std::uint64_t seed,
                                        const std::vector<std::string>& classes = {}) {
    require(n >= 1, ErrorKind::parameter, "frames per class and snr must be >= 1");
    cfg.validate();
    std::vector<int> global;
    if (classes.empty()) {
        for (std::size_t i = 0; i < kNumClasses; ++i) global.push_back(static_cast<int>(i));
    } else {
        for (const auto& c : classes) global.push_back(class_index(c));
    }
    std::vector<IQFrame> out;
    out.reserve(n * global.size() * cfg.snr_grid.size());
    for (std::size_t c = 0; c < global.size(); ++c) {
        for (int snr : cfg.snr_grid) {
            for (std::size_t i = 0; i < n; ++i) {
                Rng rng = derive_rng(seed, {static_cast<std::uint64_t>(global[c]),
                                            static_cast<std::uint64_t>(static_cast<std::int64_t>(snr)), i});
                IQFrame f = gen_frame(global[c], snr, cfg, rng);
                f.label = static_cast<int>(c);
                out.push_back(std::move(f));
            }
        }
    }
    return out;
}

}  // namespace amc
