#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fidrank/errors.hpp"
#include "fidrank/numerics/tensor.hpp"

namespace fidrank {

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() noexcept : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() noexcept { return detail::grad_enabled; }

/// One operation record in the graph. Parents are owned so that a loss keeps its
/// whole graph alive; backward_fn must not capture the node itself.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& grad_buffer()
    {
        if (!has_grad) {
            grad = Tensor<T>(value.shape(), T{0});
            has_grad = true;
        }
        return grad;
    }
};

/// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;

    /// Leaf variable. Parameters pass requires_grad = true.
    static Var leaf(Tensor<T> value, bool requires_grad = false)
    {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(value);
        node->requires_grad = requires_grad;
        return Var(std::move(node));
    }

    static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

    /// Result of an operation. Records parents and backward only when recording is on
    /// and some parent needs a gradient.
    static Var from_op(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> backward_fn)
    {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(value);
        if (detail::grad_enabled) {
            for (const Var& p : parents) {
                if (p.requires_grad()) {
                    node->requires_grad = true;
                    break;
                }
            }
        }
        if (node->requires_grad) {
            node->parents.reserve(parents.size());
            for (Var& p : parents) {
                node->parents.push_back(std::move(p.node_));
            }
            node->backward_fn = std::move(backward_fn);
        }
        return Var(std::move(node));
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

    /// Accumulated gradient; zeros when nothing has flowed back yet.
    Tensor<T> grad() const { return node_->has_grad ? node_->grad : Tensor<T>(value().shape(), T{0}); }
    bool has_grad() const noexcept { return node_ && node_->has_grad; }
    void zero_grad() { node_->has_grad = false; }

    Node<T>& node() const { return *node_; }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode pass from a scalar loss. Every reachable node that requires a
/// gradient receives its full accumulated gradient; leaves keep theirs.
template <typename T>
void backward(const Var<T>& loss)
{
    if (!loss.defined() || loss.value().size() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(&loss.node(), 0);
    visited.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* node : order) {
        if (!node->parents.empty()) {
            node->has_grad = false;
        }
    }
    loss.node().grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && node->has_grad) {
            node->backward_fn(*node);
        }
    }
}

}  // namespace fidrank
