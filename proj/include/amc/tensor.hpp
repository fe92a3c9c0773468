#pragma once

// Dense f64 tensors with reverse-mode differentiation.
//
// Every op that sees at least one input with requires_grad() records a node
// carrying a monotonically increasing sequence number. backward() gathers the
// nodes reachable from the loss and replays them in descending sequence
// order, i.e. the exact reverse of recording order. A node is released once
// it has been replayed, so a second backward() over the same graph fails.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "amc/error.hpp"

namespace amc {

using Shape = std::vector<std::size_t>;

enum class Mode { train, eval };

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct TensorImpl;

struct Node {
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Receives d(loss)/d(output); accumulates into the inputs' buffers.
    std::function<void(const std::vector<double>&)> backward;
    std::vector<double> grad_out;
    bool consumed = false;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;
    std::shared_ptr<Node> node;
};

inline std::uint64_t next_seq() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

// Accumulation target for the gradient flowing into `impl`, or nullptr when
// no gradient is needed there.
inline double* grad_target(TensorImpl& impl) {
    if (impl.node) {
        if (impl.node->consumed) {
            return nullptr;
        }
        if (impl.node->grad_out.empty()) {
            impl.node->grad_out.assign(impl.data.size(), 0.0);
        }
        return impl.node->grad_out.data();
    }
    if (impl.requires_grad) {
        if (impl.grad.empty()) {
            impl.grad.assign(impl.data.size(), 0.0);
        }
        return impl.grad.data();
    }
    return nullptr;
}

}  // namespace detail

class Tensor;

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class Tensor {
   public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        if (shape_numel(shape) != data.size()) {
            fail(ErrorKind::dimension, "tensor data length " + std::to_string(data.size()) +
                                           " does not match shape " + shape_str(shape));
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> data(shape_numel(shape), 0.0);
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> data(shape_numel(shape), value);
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({}, {value}, requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(impl_); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    // Negative indices count from the back.
    std::size_t dim(int i) const {
        const int r = static_cast<int>(rank());
        const int k = i < 0 ? r + i : i;
        if (k < 0 || k >= r) {
            fail(ErrorKind::dimension, "dim index " + std::to_string(i) + " out of range for " +
                                           shape_str(shape()));
        }
        return impl_->shape[static_cast<std::size_t>(k)];
    }

    std::span<const double> data() const { return impl_->data; }
    std::span<double> mutable_data() { return impl_->data; }
    const std::vector<double>& values() const { return impl_->data; }

    double item() const {
        if (numel() != 1) {
            fail(ErrorKind::dimension, "item() on tensor of shape " + shape_str(shape()));
        }
        return impl_->data[0];
    }

    double operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad || static_cast<bool>(impl_->node); }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
    bool is_leaf() const { return !impl_->node; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Zeros when no gradient has been accumulated yet.
    std::vector<double> grad() const {
        return impl_->grad.empty() ? std::vector<double>(numel(), 0.0) : impl_->grad;
    }
    std::span<const double> grad_view() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    bool all_finite() const {
        return std::all_of(impl_->data.begin(), impl_->data.end(),
                           [](double v) { return std::isfinite(v); });
    }

    // Deep copy without graph history; keeps the requires_grad flag.
    Tensor clone() const { return Tensor(shape(), impl_->data, impl_->requires_grad); }
    Tensor detach() const { return Tensor(shape(), impl_->data, false); }

    bool same_object(const Tensor& other) const { return impl_ == other.impl_; }

    detail::TensorImpl& impl() const { return *impl_; }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

   private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

using BackwardFn = std::function<void(const std::vector<double>&)>;

// Builds an op result and, when recording is on and any input needs a
// gradient, attaches the backward closure as a new graph node.
inline Tensor make_result(Shape shape, std::vector<double> data,
                          std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!grad_enabled()) {
        return out;
    }
    bool needs = false;
    for (const Tensor* t : inputs) {
        needs = needs || t->requires_grad();
    }
    if (!needs) {
        return out;
    }
    auto node = std::make_shared<Node>();
    node->seq = next_seq();
    for (const Tensor* t : inputs) {
        node->inputs.push_back(t->impl_ptr());
    }
    node->backward = std::move(backward);
    out.impl().node = std::move(node);
    return out;
}

inline Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                          BackwardFn backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!grad_enabled()) {
        return out;
    }
    const bool needs =
        std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!needs) {
        return out;
    }
    auto node = std::make_shared<Node>();
    node->seq = next_seq();
    for (const Tensor& t : inputs) {
        node->inputs.push_back(t.impl_ptr());
    }
    node->backward = std::move(backward);
    out.impl().node = std::move(node);
    return out;
}

}  // namespace detail

// Populates .grad() of every requires_grad leaf reachable from `loss`.
// Gradients accumulate across calls until zero_grad().
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        fail(ErrorKind::graph, "backward() needs a scalar loss, got shape " +
                                   (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
    }
    auto& root_impl = loss.impl();
    if (!root_impl.node) {
        if (!root_impl.requires_grad) {
            fail(ErrorKind::graph, "backward() on a tensor with no recorded graph");
        }
        if (root_impl.grad.empty()) {
            root_impl.grad.assign(1, 0.0);
        }
        root_impl.grad[0] += 1.0;
        return;
    }
    if (root_impl.node->consumed) {
        fail(ErrorKind::graph, "graph already consumed by a previous backward()");
    }

    // Shared ownership keeps every node alive while upstream nodes release
    // their inputs during the replay.
    std::vector<std::shared_ptr<detail::Node>> order;
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::shared_ptr<detail::Node>> stack{root_impl.node};
    seen.insert(root_impl.node.get());
    while (!stack.empty()) {
        auto n = std::move(stack.back());
        stack.pop_back();
        for (const auto& in : n->inputs) {
            const auto& child = in->node;
            if (child && !child->consumed && seen.insert(child.get()).second) {
                stack.push_back(child);
            }
        }
        order.push_back(std::move(n));
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a->seq > b->seq; });

    root_impl.node->grad_out.assign(1, 1.0);
    for (const auto& n : order) {
        if (!n->grad_out.empty()) {
            n->backward(n->grad_out);
        }
        n->consumed = true;
        n->backward = nullptr;
        n->grad_out.clear();
        n->grad_out.shrink_to_fit();
        n->inputs.clear();
    }
}

}  // namespace amc
