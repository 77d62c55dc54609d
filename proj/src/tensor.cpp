#include "stower/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace stower {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw UsageError("tensor shape extents must be positive, got " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

static std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<float> data, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::make_shared<std::vector<float>>(std::move(data));
    node->requires_grad = requires_grad;
    return node;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return wrap(new_node(std::move(shape), std::vector<float>(n, 0.0f), requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return wrap(new_node(std::move(shape), std::vector<float>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw UsageError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    return wrap(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return wrap(new_node(Shape{}, std::vector<float>{value}, requires_grad));
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        data[i] = static_cast<float>(rng.normal()) * stddev;
    }
    return wrap(new_node(std::move(shape), std::move(data), requires_grad));
}

int Tensor::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw UsageError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
    }
    return node_->shape[static_cast<std::size_t>(axis)];
}

std::span<const float> Tensor::grad() const {
    if (node_->grad.empty()) {
        throw UsageError("tensor has no gradient buffer (requires_grad not set or backward not run)");
    }
    return {node_->grad.data(), node_->grad.size()};
}

std::span<float> Tensor::grad_mut() {
    ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
}

void Tensor::ensure_grad() {
    if (node_->grad.size() != size()) node_->grad.assign(size(), 0.0f);
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (size() != 1) throw UsageError("item() requires a single-element tensor, shape is " + shape_str(shape()));
    return (*node_->values)[0];
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->values = node_->values;  // aliased, not copied
    node->requires_grad = false;
    return wrap(std::move(node));
}

Tensor Tensor::wrap(std::shared_ptr<TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor make_op_result(Shape shape, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
    bool needs_grad = false;
    for (const Tensor& p : parents) {
        if (p.requires_grad()) {
            needs_grad = true;
            break;
        }
    }
    Tensor out = Tensor::zeros(std::move(shape), needs_grad);
    if (needs_grad) {
        out.node()->parents = std::move(parents);
        out.node()->backward = std::move(backward_fn);
    }
    return out;
}

namespace {

void topo_collect(TensorNode* node, std::vector<TensorNode*>& order) {
    // iterative DFS; deep graphs (char LM unrolls) would overflow the stack
    struct Frame {
        TensorNode* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node, 0});
    node->visit_mark = 1;
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            TensorNode* parent = top.node->parents[top.next_parent].node();
            ++top.next_parent;
            if (parent->visit_mark == 0 && parent->requires_grad) {
                parent->visit_mark = 1;
                stack.push_back({parent, 0});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
}

} // namespace

void backward(const Tensor& loss) {
    if (!loss.defined()) throw UsageError("backward: undefined tensor");
    if (loss.size() != 1) {
        throw UsageError("backward requires a scalar loss, shape is " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    std::vector<TensorNode*> order;
    topo_collect(loss.node(), order);

    loss.node()->grad.assign(1, 1.0f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward && !node->grad.empty()) {
            for (Tensor& p : node->parents) {
                if (p.requires_grad()) p.ensure_grad();
            }
            node->backward(*node);
        }
    }
    for (TensorNode* node : order) node->visit_mark = 0;
}

} // namespace stower
