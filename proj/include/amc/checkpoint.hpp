#pragma once

// AMCK model checkpoint, all fields little-endian:
//
//   "AMCK"  u32 version (=1)
//   config: u32 T, d_model, conv1_filters, conv1_kernel, conv2_kernel,
//           conv2_stride, n_layers, ffn_dim, n_classes, classifier_hidden
//           f64 dropout
//           u32 variant (0 baseline, 1 causal, 2 sparse), heads, window
//           f64 attn_dropout
//   u32 class count, then per class: u32 byte length + UTF-8 name
//   u32 record count, then per record:
//           u32 name length + name, u32 rank, u32 dims[rank], f64 values
//
// Records are the trainable tensors in ModelParams::for_each_parameter
// order, followed by bn1.running_mean, bn1.running_var, bn2.running_mean,
// bn2.running_var.

#include <string>
#include <vector>

#include "amc/binary_io.hpp"
#include "amc/model.hpp"

namespace amc {

inline constexpr char kCheckpointMagic[] = "AMCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams params;
    std::vector<std::string> class_names;
};

namespace detail {

inline void put_record(io::ByteWriter& w, const std::string& name, const Shape& shape, std::span<const double> v) {
    w.put_string(name);
    w.put_u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.put_u32(static_cast<std::uint32_t>(d));
    for (double x : v) w.put_f64(x);
}

inline std::vector<double> get_record(io::ByteReader& r, const std::string& want_name, const Shape& want_shape,
                                      const std::string& path) {
    const std::string name = r.get_string();
    const std::uint32_t rank = r.get_u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.get_u32();
    if (name != want_name || shape != want_shape) {
        fail(ErrorKind::io, path + ": expected tensor " + want_name + " " + shape_str(want_shape) + ", found " + name +
                                " " + shape_str(shape));
    }
    std::vector<double> v(shape_numel(shape));
    r.need(v.size() * 8);
    for (double& x : v) x = r.get_f64();
    return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params,
                                                   const std::vector<std::string>& class_names) {
    const ModelConfig& c = params.config;
    const AttentionConfig a = c.attention_config();
    io::ByteWriter w;
    w.put_bytes(std::string_view(kCheckpointMagic, 4));
    w.put_u32(kCheckpointVersion);
    for (std::size_t v : {c.T, c.d_model, c.conv1_filters, c.conv1_kernel, c.conv2_kernel, c.conv2_stride, c.n_layers,
                          c.ffn_dim, c.n_classes, c.classifier_hidden}) {
        w.put_u32(static_cast<std::uint32_t>(v));
    }
    w.put_f64(c.dropout);
    w.put_u32(static_cast<std::uint32_t>(a.variant));
    w.put_u32(static_cast<std::uint32_t>(a.heads));
    w.put_u32(static_cast<std::uint32_t>(a.window));
    w.put_f64(a.attn_dropout);
    w.put_u32(static_cast<std::uint32_t>(class_names.size()));
    for (const auto& n : class_names) w.put_string(n);

    std::uint32_t records = 4;
    params.for_each_parameter([&](const std::string&, const Tensor&, bool) { ++records; });
    w.put_u32(records);
    params.for_each_parameter([&](const std::string& name, const Tensor& t, bool) {
        detail::put_record(w, name, t.shape(), t.data());
    });
    for (auto [name, bn] : {std::pair{"bn1", &params.conv1.bn}, {"bn2", &params.conv2.bn}}) {
        const Shape s{bn->running_mean.size()};
        detail::put_record(w, std::string(name) + ".running_mean", s, bn->running_mean);
        detail::put_record(w, std::string(name) + ".running_var", s, bn->running_var);
    }
    return w.bytes();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& path = "checkpoint") {
    io::ByteReader r(bytes, path);
    if (r.get_bytes(4) != std::string_view(kCheckpointMagic, 4)) {
        fail(ErrorKind::io, path + ": not an AMCK checkpoint (bad magic)");
    }
    const std::uint32_t version = r.get_u32();
    if (version != kCheckpointVersion) {
        fail(ErrorKind::io, path + ": unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig c;
    for (std::size_t* f : {&c.T, &c.d_model, &c.conv1_filters, &c.conv1_kernel, &c.conv2_kernel, &c.conv2_stride,
                           &c.n_layers, &c.ffn_dim, &c.n_classes, &c.classifier_hidden}) {
        *f = r.get_u32();
    }
    c.dropout = r.get_f64();
    const std::uint32_t variant = r.get_u32();
    if (variant > 2) {
        fail(ErrorKind::io, path + ": unknown attention variant code " + std::to_string(variant));
    }
    c.attention.variant = static_cast<AttentionVariant>(variant);
    c.attention.heads = r.get_u32();
    c.attention.window = r.get_u32();
    c.attention.attn_dropout = r.get_f64();
    c.attention.d_model = c.d_model;
    try {
        c.validate();
    } catch (const Error& e) {
        fail(ErrorKind::io, path + ": invalid model config: " + e.what());
    }

    Checkpoint ck;
    const std::uint32_t n_names = r.get_u32();
    for (std::uint32_t i = 0; i < n_names; ++i) ck.class_names.push_back(r.get_string());

    // Shapes come from a freshly built parameter set for this config.
    ck.params = init_params(c, 0);
    std::uint32_t expected = 4;
    ck.params.for_each_parameter([&](const std::string&, const Tensor&, bool) { ++expected; });
    const std::uint32_t records = r.get_u32();
    if (records != expected) {
        fail(ErrorKind::io, path + ": expected " + std::to_string(expected) + " tensor records, found " +
                                std::to_string(records));
    }
    ck.params.for_each_parameter([&](const std::string& name, Tensor& t, bool) {
        t = Tensor(t.shape(), detail::get_record(r, name, t.shape(), path), true);
    });
    for (auto [name, bn] : {std::pair{"bn1", &ck.params.conv1.bn}, {"bn2", &ck.params.conv2.bn}}) {
        const Shape s{bn->running_mean.size()};
        bn->running_mean = detail::get_record(r, std::string(name) + ".running_mean", s, path);
        bn->running_var = detail::get_record(r, std::string(name) + ".running_var", s, path);
    }
    if (r.remaining() != 0) {
        fail(ErrorKind::io, path + ": " + std::to_string(r.remaining()) + " trailing bytes");
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const std::vector<std::string>& class_names) {
    io::write_file(path, encode_checkpoint(params, class_names));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path), path); }

}  // namespace amc
