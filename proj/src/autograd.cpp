#include "msa2/autograd.hpp"

#include <unordered_set>

namespace msa2 {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor::zeros_like(value);
    if (grad.shape() != value.shape()) grad = Tensor::zeros_like(value);
    return grad;
}

void Node::accumulate(const Tensor& g) {
    if (grad.empty())
        grad = g;
    else
        grad.add_(g);
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var Var::from_node(std::shared_ptr<Node> node) {
    Var v;
    v.node_ = std::move(node);
    return v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Var::from_node(std::move(node));
}

void backward(const Var& root) {
    if (!root.requires_grad()) return;
    if (root.value().numel() != 1) throw ShapeError("backward() expects a scalar root");

    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad = Tensor(root.value().shape(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
    for (Node* node : order) {
        if (node->backward) {
            node->backward = nullptr;
            node->inputs.clear();
            node->grad = Tensor();
        }
    }
}

}  // namespace msa2
