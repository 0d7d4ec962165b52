#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "msa2/tensor.hpp"

namespace msa2 {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this->grad and accumulates into inputs' grads.
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
    void accumulate(const Tensor& g);
};

// Handle to a value in the computation graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int i) const { return node_->value.dim(i); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad_buffer() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad = Tensor(); }

    bool defined() const { return static_cast<bool>(node_); }
    const std::shared_ptr<Node>& node() const { return node_; }

    static Var from_node(std::shared_ptr<Node> node);

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds the result node of an op. If no input needs a gradient (or grad
// mode is off) the backward closure is dropped and the result is a leaf.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Reverse-mode sweep from a scalar. Intermediate nodes are released
// afterwards; leaf gradients accumulate.
void backward(const Var& root);

}  // namespace msa2
