/**
 * @file   tensor.hpp
 * @brief  Dense NCHW tensor with reverse-mode automatic differentiation.
 *
 * A Tensor is a shared handle: copies alias the same storage and the same
 * gradient slot, which is what the autograd engine needs to accumulate into
 * parameters that are used more than once. Use clone() for a deep copy.
 *
 * Every differentiable primitive records one Node on the calling thread's
 * Tape. backward() and grad() walk the reachable nodes in reverse recording
 * order. Backward functions are themselves written with recorded primitives,
 * so with create_graph = true the gradient is again differentiable (used by
 * the gradient penalty).
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace gwai {

using Shape = std::vector<std::size_t>;

/// Invalid shapes or arguments handed to a tensor operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Bad configuration, bad file contents, or a violated precondition that
/// the caller can fix.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::size_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <class T> class Tensor;

namespace detail {

template <class T> struct TensorImpl;

/// One recorded primitive application.
template <class T>
struct Node {
    using BackwardFn = std::function<std::vector<Tensor<T>>(const Tensor<T>&)>;

    std::uint64_t seq = 0;
    std::string_view name;
    /// Inputs in argument order; entries that do not need a gradient are
    /// left undefined so they are skipped by the engine.
    std::vector<Tensor<T>> inputs;
    /// Maps the gradient of the output to one gradient per input.
    BackwardFn backward;
    /// Output this node produced; non-owning (the output owns the node).
    const TensorImpl<T>* output = nullptr;

    void release() {
        backward = nullptr;
        inputs.clear();
    }
};

template <class T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::shared_ptr<TensorImpl<T>> grad;
    std::shared_ptr<Node<T>> grad_fn;
};

}  // namespace detail

/// Per-thread recording state. Distinct threads record on distinct tapes.
class Tape {
public:
    static Tape& current() {
        thread_local Tape tape;
        return tape;
    }

    bool enabled() const { return enabled_; }
    void set_enabled(bool on) { enabled_ = on; }
    std::uint64_t next_seq() { return ++seq_; }
    std::uint64_t recorded() const { return seq_; }

    void track(std::weak_ptr<void> node, std::function<void()> release) {
        live_.push_back({std::move(node), std::move(release)});
        if (live_.size() > 4096 && live_.size() > 2 * last_pruned_) prune();
    }

    /// Releases saved values of every node still alive on this tape.
    void clear() {
        for (auto& e : live_)
            if (!e.node.expired()) e.release();
        live_.clear();
        last_pruned_ = 0;
    }

    void prune() {
        std::erase_if(live_, [](const Entry& e) { return e.node.expired(); });
        last_pruned_ = live_.size();
    }

    std::size_t live_nodes() {
        prune();
        return live_.size();
    }

private:
    struct Entry {
        std::weak_ptr<void> node;
        std::function<void()> release;
    };
    bool enabled_ = true;
    std::uint64_t seq_ = 0;
    std::vector<Entry> live_;
    std::size_t last_pruned_ = 0;
};

/// Disables recording for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(Tape::current().enabled()) { Tape::current().set_enabled(false); }
    ~NoGradGuard() { Tape::current().set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class GradModeGuard {
public:
    explicit GradModeGuard(bool on) : prev_(Tape::current().enabled()) { Tape::current().set_enabled(on); }
    ~GradModeGuard() { Tape::current().set_enabled(prev_); }
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

private:
    bool prev_;
};

template <class T>
class Tensor {
public:
    using value_type = T;
    using Impl = detail::TensorImpl<T>;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<Impl>()) {
        impl_->data.assign(numel_of(shape), fill);
        impl_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<Impl>()) {
        if (numel_of(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
    static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }
    static Tensor scalar(T v) { return Tensor(Shape{}, v); }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    /// Direct write access. Only valid on tensors that are not part of a
    /// live graph (fresh outputs, parameters between optimizer steps).
    std::span<T> mutable_data() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }
    T operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        impl_->requires_grad = on;
        return *this;
    }
    bool is_leaf() const { return !impl_->grad_fn; }

    bool has_grad() const { return impl_->grad != nullptr; }
    Tensor grad() const { return Tensor(impl_->grad); }
    void zero_grad() { impl_->grad.reset(); }

    Tensor clone() const {
        auto t = Tensor(impl_->shape, impl_->data);
        return t;
    }
    /// Same values, cut from the graph.
    Tensor detach() const { return clone(); }

    const std::shared_ptr<detail::Node<T>>& grad_fn() const { return impl_->grad_fn; }
    const Impl* impl() const { return impl_.get(); }

    /// Adds g into this tensor's gradient slot, outside of any graph.
    void accumulate_grad(const Tensor& g) {
        if (g.shape() != shape())
            throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match " +
                             shape_str(shape()));
        if (!impl_->grad) {
            impl_->grad = std::make_shared<Impl>();
            impl_->grad->shape = impl_->shape;
            impl_->grad->data = g.impl_->data;
            return;
        }
        auto& dst = impl_->grad->data;
        const auto& src = g.impl_->data;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    /// Attaches a recorded node to a freshly produced output. No-op when
    /// recording is disabled or no input needs a gradient.
    void attach(std::string_view name, std::vector<Tensor> inputs,
                typename detail::Node<T>::BackwardFn backward) {
        auto& tape = Tape::current();
        if (!tape.enabled()) return;
        bool any = false;
        for (auto& in : inputs) {
            if (in.defined() && in.requires_grad()) any = true;
            else in = Tensor();
        }
        if (!any) return;
        auto node = std::make_shared<detail::Node<T>>();
        node->seq = tape.next_seq();
        node->name = name;
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
        node->output = impl_.get();
        impl_->requires_grad = true;
        impl_->grad_fn = node;
        std::weak_ptr<detail::Node<T>> weak = node;
        tape.track(weak, [weak] {
            if (auto n = weak.lock()) n->release();
        });
    }

private:
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<Impl> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

namespace detail {

template <class T>
struct Engine {
    using NodePtr = std::shared_ptr<Node<T>>;

    /// Runs reverse accumulation from `root` seeded with `seed`.
    /// Returns gradients keyed by tensor identity for every tensor that
    /// received one.
    static std::unordered_map<const TensorImpl<T>*, Tensor<T>> run(const Tensor<T>& root, const Tensor<T>& seed,
                                                                   bool create_graph, bool retain_graph,
                                                                   std::vector<Tensor<T>>* leaves) {
        std::unordered_map<const TensorImpl<T>*, Tensor<T>> grads;
        grads.emplace(root.impl(), seed);
        if (!root.grad_fn()) {
            if (leaves) leaves->push_back(root);
            return grads;
        }

        std::vector<NodePtr> order;
        std::unordered_set<const Node<T>*> seen;
        std::vector<NodePtr> stack{root.grad_fn()};
        seen.insert(root.grad_fn().get());
        while (!stack.empty()) {
            auto n = stack.back();
            stack.pop_back();
            if (!n->backward)
                throw std::logic_error("backward through a released graph node '" + std::string(n->name) +
                                       "' (tape already consumed)");
            order.push_back(n);
            for (const auto& in : n->inputs) {
                if (!in.defined()) continue;
                if (const auto& fn = in.grad_fn()) {
                    if (seen.insert(fn.get()).second) stack.push_back(fn);
                } else if (leaves) {
                    leaves->push_back(in);
                }
            }
        }
        std::sort(order.begin(), order.end(), [](const NodePtr& a, const NodePtr& b) { return a->seq > b->seq; });

        GradModeGuard mode(create_graph);
        for (const auto& n : order) {
            auto it = grads.find(n->output);
            if (it == grads.end()) continue;
            Tensor<T> gout = it->second;
            auto gins = n->backward(gout);
            for (std::size_t i = 0; i < n->inputs.size(); ++i) {
                const auto& in = n->inputs[i];
                if (!in.defined() || i >= gins.size() || !gins[i].defined()) continue;
                if (gins[i].shape() != in.shape())
                    throw std::logic_error("backward of '" + std::string(n->name) + "' produced gradient " +
                                           shape_str(gins[i].shape()) + " for input " + shape_str(in.shape()));
                auto [slot, fresh] = grads.try_emplace(in.impl(), gins[i]);
                if (!fresh) slot->second = accumulate(slot->second, gins[i], create_graph);
            }
            if (!retain_graph) n->release();
        }
        return grads;
    }

    static Tensor<T> accumulate(const Tensor<T>& a, const Tensor<T>& b, bool create_graph) {
        if (create_graph) return add(a, b);
        // Backward functions may hand the same tensor to several inputs, so
        // never accumulate in place.
        auto out = a.clone();
        auto dst = out.mutable_data();
        auto src = b.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        return out;
    }
};

}  // namespace detail

/// Accumulates d(loss)/d(leaf) into the grad slot of every leaf that
/// requires a gradient. The tape segment reachable from loss is consumed.
template <class T>
void backward(const Tensor<T>& loss, bool retain_graph = false) {
    if (loss.numel() != 1 || loss.rank() > 1)
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw ValidationError("backward() on a tensor that does not require grad");
    std::vector<Tensor<T>> leaves;
    auto grads = detail::Engine<T>::run(loss, Tensor<T>(loss.shape(), T(1)), false, retain_graph, &leaves);
    std::unordered_set<const detail::TensorImpl<T>*> done;
    for (auto& leaf : leaves) {
        if (!done.insert(leaf.impl()).second) continue;
        auto it = grads.find(leaf.impl());
        if (it != grads.end()) leaf.accumulate_grad(it->second);
    }
    Tape::current().prune();
}

/// Gradients of `output` with respect to `inputs`, returned instead of
/// accumulated. Inputs with no path from output get a zero tensor.
/// With create_graph the results carry their own graph.
template <class T>
std::vector<Tensor<T>> grad(const Tensor<T>& output, const std::vector<Tensor<T>>& inputs, bool create_graph = false,
                            Tensor<T> grad_output = {}) {
    if (!grad_output.defined()) {
        if (output.numel() != 1)
            throw ShapeError("grad() of a non-scalar output needs an explicit grad_output");
        grad_output = Tensor<T>(output.shape(), T(1));
    }
    std::vector<Tensor<T>> result;
    if (!output.requires_grad()) {
        for (const auto& in : inputs) result.push_back(Tensor<T>::zeros(in.shape()));
        return result;
    }
    auto grads = detail::Engine<T>::run(output, grad_output, create_graph, create_graph, nullptr);
    for (const auto& in : inputs) {
        auto it = grads.find(in.impl());
        result.push_back(it == grads.end() ? Tensor<T>::zeros(in.shape()) : it->second);
    }
    return result;
}

}  // namespace gwai
