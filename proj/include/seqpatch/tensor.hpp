#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "seqpatch/errors.hpp"

namespace seqpatch {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major buffer with a shape. Plain value type, no graph.
template <typename T>
class Array {
public:
    Array() = default;
    explicit Array(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Array(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (shape_size(shape_) != data_.size())
            throw ShapeError("Array: shape " + shape_str(shape_) + " does not match "
                             + std::to_string(data_.size()) + " elements");
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t ndim() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty() && shape_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Array reshaped(Shape shape) const
    {
        if (shape_size(shape) != data_.size())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
        return Array(std::move(shape), data_);
    }

    template <typename U>
    Array<U> cast() const
    {
        std::vector<U> out(data_.begin(), data_.end());
        return Array<U>(shape_, std::move(out));
    }

    bool operator==(const Array&) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

namespace detail {

inline bool& grad_enabled_flag()
{
    thread_local bool enabled = true;
    return enabled;
}

template <typename T>
struct Node {
    Array<T> value;
    Array<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Array<T>& grad_buffer()
    {
        if (grad.size() != value.size() || grad.shape() != value.shape())
            grad = Array<T>(value.shape());
        return grad;
    }
};

} // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Handle to a node of the differentiable computation graph. Copies share the node.
template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;
    using BackwardFn = std::function<void(Node&)>;

    Tensor() = default;
    explicit Tensor(Array<T> value, bool requires_grad = false) : node_(std::make_shared<Node>())
    {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false)
    {
        return Tensor(Array<T>(std::move(shape)), requires_grad);
    }

    /// Builds an op result. Inputs and the backward closure are kept only when
    /// recording is on and at least one input needs a gradient.
    static Tensor make_result(Array<T> value, std::vector<Tensor> inputs, BackwardFn backward)
    {
        Tensor out(std::move(value));
        if (!grad_enabled())
            return out;
        bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (!any)
            return out;
        out.node_->requires_grad = true;
        out.node_->inputs.reserve(inputs.size());
        for (auto& in : inputs)
            out.node_->inputs.push_back(in.node_);
        out.node_->backward = std::move(backward);
        return out;
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Array<T>& value() const { return node_->value; }
    /// Direct write access, for optimizers and initialization only.
    Array<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    std::size_t ndim() const { return node_->value.ndim(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

    bool has_grad() const
    {
        return node_->grad.shape() == node_->value.shape() && node_->grad.size() == node_->value.size();
    }
    const Array<T>& grad() const { return node_->grad; }
    Array<T>& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad = Array<T>(); }

    /// Reverse-mode sweep from this tensor. Non-scalar roots are seeded with ones.
    void backward() const
    {
        if (!requires_grad())
            throw std::logic_error("backward() on a tensor that does not require grad");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        // Iterative post-order DFS; each node is emitted once.
        std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                Node* child = node->inputs[next++].get();
                if (child && child->requires_grad && seen.insert(child).second)
                    stack.emplace_back(child, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        node_->grad_buffer().fill(T(1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            n->grad_buffer();
            if (n->backward)
                n->backward(*n);
        }
    }

    static Array<T>& grad_of(const std::shared_ptr<Node>& n) { return n->grad_buffer(); }

private:
    std::shared_ptr<Node> node_;
};

} // namespace seqpatch
