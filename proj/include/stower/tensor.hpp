#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stower/errors.hpp"
#include "stower/rng.hpp"

namespace stower {

/// Row-major extents. Rank 0 denotes a scalar (one element).
using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

/// One vertex of the reverse-mode graph. Values are shared so detached
/// views can alias the forward buffer without copying.
struct TensorNode {
    Shape shape;
    std::shared_ptr<std::vector<float>> values;
    std::vector<float> grad;    // sized on demand, only when requires_grad
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(TensorNode&)> backward;
    int visit_mark = 0;         // scratch for topological sort
};

/// Dense f32 tensor handle with value semantics over a shared graph node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    /// Gaussian init, draws consumed in row-major element order.
    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int axis) const;
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::size_t size() const { return node_->values->size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<float> data() { return {node_->values->data(), node_->values->size()}; }
    std::span<const float> data() const { return {node_->values->data(), node_->values->size()}; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const float> grad() const;
    std::span<float> grad_mut();
    void ensure_grad();
    void zero_grad();

    /// Scalar read; throws unless the tensor has exactly one element.
    float item() const;

    /// Stop-gradient: same values (aliased), no parents, no grad flow.
    Tensor detach() const;

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<TensorNode> node);

private:
    std::shared_ptr<TensorNode> node_;
};

/// Creates a node whose requires_grad is the OR of its parents'; parents
/// and the backward closure are attached only when gradients can flow.
Tensor make_op_result(Shape shape, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward);

/// Reverse-mode sweep from a scalar loss. Non-scalar input is a usage error.
void backward(const Tensor& loss);

} // namespace stower
