#pragma once

// Finite-difference sweep over every differentiable op and the tiny model,
// shared by the unit and acceptance suites.

#include <functional>
#include <string>
#include <vector>

#include "amc/model.hpp"
#include "gradcheck.hpp"

namespace amc::testing {

struct SuiteResult {
    double op_max_rel_err = 0;
    double model_max_rel_err = 0;
    std::size_t checks = 0;
    std::string worst_op;
    std::string worst_model;
};

struct OpCase {
    std::string name;
    std::function<GradCheckResult(Rng&)> run;
};

inline ModelConfig tiny_model_config(AttentionVariant variant) {
    ModelConfig c;
    c.T = 16;
    c.d_model = 8;
    c.conv1_filters = 4;
    c.n_layers = 1;
    c.ffn_dim = 16;
    c.n_classes = 3;
    c.classifier_hidden = 8;
    c.attention.heads = 2;
    c.attention.window = 2;
    c.attention.variant = variant;
    return c;
}

// Values kept at least 0.1 away from the relu kink.
inline Tensor randn_off_zero(Shape shape, Rng& rng) {
    Tensor t = randn(std::move(shape), rng);
    for (double& x : t.mutable_data()) x += x >= 0 ? 0.1 : -0.1;
    return t;
}

inline std::vector<OpCase> op_cases() {
    std::vector<OpCase> c;
    auto unary = [](const char* name, std::function<Tensor(const Tensor&)> f, Shape shape) {
        return OpCase{name, [f, shape](Rng& rng) {
                          Tensor x = randn_off_zero(shape, rng);
                          Tensor r = randn(f(x).shape(), rng, false);
                          return grad_check({x}, [&] { return projected(f(x), r); });
                      }};
    };
    c.push_back(unary("relu", [](const Tensor& x) { return relu(x); }, {3, 7}));
    c.push_back(unary("gelu", [](const Tensor& x) { return gelu(x); }, {3, 7}));
    c.push_back(unary("scale", [](const Tensor& x) { return scale(x, -1.7); }, {4, 3}));
    c.push_back(unary("transpose", [](const Tensor& x) { return transpose_last2(x); }, {2, 3, 4}));
    c.push_back(unary("mean_axis", [](const Tensor& x) { return mean_axis(x, 1); }, {2, 5, 3}));
    c.push_back(unary("softmax", [](const Tensor& x) { return softmax_lastdim(x); }, {2, 3, 5}));
    c.push_back(unary("masked_softmax",
                      [](const Tensor& x) {
                          return softmax_lastdim(add(x, build_mask(AttentionVariant::causal, 5).additive()));
                      },
                      {2, 5, 5}));
    c.push_back(unary("dropout",
                      [](const Tensor& x) {
                          Rng drop(11);
                          return dropout(x, 0.3, Mode::train, drop);
                      },
                      {4, 6}));
    c.push_back({"matmul", [](Rng& rng) {
                     Tensor a = randn({2, 3, 4}, rng), b = randn({4, 5}, rng), r = randn({2, 3, 5}, rng, false);
                     return grad_check({a, b}, [&] { return projected(matmul(a, b), r); });
                 }});
    c.push_back({"matmul_batched", [](Rng& rng) {
                     Tensor a = randn({2, 3, 4}, rng), b = randn({2, 4, 2}, rng), r = randn({2, 3, 2}, rng, false);
                     return grad_check({a, b}, [&] { return projected(matmul(a, b), r); });
                 }});
    c.push_back({"add_broadcast", [](Rng& rng) {
                     Tensor a = randn({2, 3, 4}, rng), b = randn({4}, rng), r = randn({2, 3, 4}, rng, false);
                     return grad_check({a, b}, [&] { return projected(add(a, b), r); });
                 }});
    c.push_back({"mul", [](Rng& rng) {
                     Tensor a = randn({3, 4}, rng), b = randn({3, 4}, rng), r = randn({3, 4}, rng, false);
                     return grad_check({a, b}, [&] { return projected(mul(a, b), r); });
                 }});
    c.push_back({"sum", [](Rng& rng) {
                     Tensor a = randn({3, 4}, rng);
                     return grad_check({a}, [&] { return scale(sum(a), 0.7); });
                 }});
    c.push_back({"concat", [](Rng& rng) {
                     Tensor a = randn({2, 3, 2}, rng), b = randn({2, 3, 3}, rng), r = randn({2, 3, 5}, rng, false);
                     return grad_check({a, b}, [&] { return projected(concat_lastdim({a, b}), r); });
                 }});
    c.push_back({"linear", [](Rng& rng) {
                     Tensor x = randn({2, 3, 4}, rng), w = randn({4, 5}, rng), b = randn({5}, rng),
                            r = randn({2, 3, 5}, rng, false);
                     return grad_check({x, w, b}, [&] { return projected(linear(x, w, b), r); });
                 }});
    c.push_back({"conv1d", [](Rng& rng) {
                     Tensor x = randn({2, 2, 16}, rng), w = randn({3, 2, 5}, rng), b = randn({3}, rng),
                            r = randn({2, 3, 8}, rng, false);
                     return grad_check({x, w, b}, [&] { return projected(conv1d(x, w, b, 2, 2), r); });
                 }});
    c.push_back({"batchnorm_train", [](Rng& rng) {
                     Tensor x = randn({3, 2, 5}, rng), g = randn({2}, rng), b = randn({2}, rng),
                            r = randn({3, 2, 5}, rng, false);
                     return grad_check({x, g, b}, [&] {
                         BatchNormState st(2);
                         return projected(batchnorm1d(x, g, b, st, Mode::train), r);
                     });
                 }});
    c.push_back({"batchnorm_eval", [](Rng& rng) {
                     Tensor x = randn({2, 2, 4}, rng), g = randn({2}, rng), b = randn({2}, rng),
                            r = randn({2, 2, 4}, rng, false);
                     BatchNormState st(2);
                     st.running_mean = {0.3, -0.2};
                     st.running_var = {1.5, 0.7};
                     return grad_check({x, g, b}, [&] { return projected(batchnorm1d(x, g, b, st, Mode::eval), r); });
                 }});
    c.push_back({"layernorm", [](Rng& rng) {
                     Tensor x = randn({2, 3, 6}, rng), g = randn({6}, rng), b = randn({6}, rng),
                            r = randn({2, 3, 6}, rng, false);
                     return grad_check({x, g, b}, [&] { return projected(layernorm(x, g, b), r); });
                 }});
    c.push_back({"cross_entropy", [](Rng& rng) {
                     Tensor x = randn({4, 5}, rng);
                     std::vector<int> labels{0, 4, 2, 2};
                     return grad_check({x}, [&] { return cross_entropy(x, labels); });
                 }});
    for (auto v : kAllVariants) {
        c.push_back({"attention_" + std::string(variant_name(v)), [v](Rng& rng) {
                         AttentionConfig cfg;
                         cfg.variant = v;
                         cfg.d_model = 4;
                         cfg.heads = 2;
                         cfg.window = 2;
                         auto p = init_attention(cfg, rng);
                         Tensor h = randn({2, 5, 4}, rng), r = randn({2, 5, 4}, rng, false);
                         std::vector<Tensor> inputs{h, p.wo, p.bo};
                         for (auto& head : p.heads)
                             for (auto* t : {&head.wq, &head.bq, &head.wk, &head.bk, &head.wv, &head.bv}) {
                                 *t = randn(t->shape(), rng);
                                 inputs.push_back(*t);
                             }
                         return grad_check(inputs, [&] {
                             Rng drop(5);
                             return projected(multi_head_attention(h, p, cfg, Mode::train, drop), r);
                         });
                     }});
    }
    return c;
}

inline GradCheckResult model_grad_check(AttentionVariant variant, std::uint64_t seed) {
    const ModelConfig cfg = tiny_model_config(variant);
    auto p = init_params(cfg, seed);
    Rng rng = derive_rng(seed, {0x4744});
    // Perturbed norm scales and biases so every gradient path is exercised.
    std::normal_distribution<double> nd(0.0, 0.3);
    p.for_each_parameter([&](const std::string&, Tensor& t, bool decays) {
        if (!decays)
            for (double& x : t.mutable_data()) x += nd(rng);
    });
    Tensor x = randn({2, 2, cfg.T}, rng, false);
    std::vector<int> labels{static_cast<int>(rng() % 3), static_cast<int>(rng() % 3)};
    return grad_check(p.tensors(), [&] {
        Rng drop(seed);
        ModelParams local = p;
        local.conv1.bn = BatchNormState(cfg.conv1_filters);
        local.conv2.bn = BatchNormState(cfg.d_model);
        return cross_entropy(forward(local, x, Mode::train, drop), labels);
    });
}

inline SuiteResult run_gradient_suite(int seeds) {
    SuiteResult s;
    const auto cases = op_cases();
    for (int seed = 0; seed < seeds; ++seed) {
        for (const auto& oc : cases) {
            Rng rng = derive_rng(static_cast<std::uint64_t>(seed), {0x4f50});
            auto r = oc.run(rng);
            s.checks += r.checked;
            if (r.max_rel_err >= s.op_max_rel_err) {
                s.op_max_rel_err = r.max_rel_err;
                s.worst_op = oc.name + " seed " + std::to_string(seed) + " " + r.worst;
            }
        }
        for (auto v : kAllVariants) {
            auto r = model_grad_check(v, static_cast<std::uint64_t>(seed));
            s.checks += r.checked;
            if (r.max_rel_err >= s.model_max_rel_err) {
                s.model_max_rel_err = r.max_rel_err;
                s.worst_model = std::string(variant_name(v)) + " seed " + std::to_string(seed) + " " + r.worst;
            }
        }
    }
    return s;
}

}  // namespace amc::testing
