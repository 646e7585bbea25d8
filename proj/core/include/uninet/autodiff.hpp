#ifndef UNINET_AUTODIFF_HPP
#define UNINET_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <vector>

#include "uninet/tensor.hpp"

namespace uninet::ad {

class Node;
using Value = std::shared_ptr<Node>;

// One value in the computation graph. Gradients are accumulated, never
// overwritten, so parameter nodes can live across many graphs and collect
// contributions from a whole batch before an optimizer step.
class Node {
public:
    Tensor val;
    Tensor grad;  // empty until first touched
    bool requires_grad = false;
    std::vector<Value> parents;
    std::function<void(Node&)> backward_op;

    void ensure_grad() {
        if (grad.empty()) grad = Tensor(val.shape());
    }
    bool grad_ready() const { return !grad.empty(); }
    void zero_grad() {
        if (!grad.empty()) grad.fill(0.0);
    }
};

Value leaf(Tensor v, bool requires_grad);
Value constant(Tensor v);

// Per-forward tape. Nodes are recorded in creation order; backward walks the
// tape in reverse and only visits nodes whose gradient was touched.
class Graph {
public:
    Value track(Tensor val, std::vector<Value> parents, std::function<void(Node&)> bw);
    void backward(const Value& root);
    size_t node_count() const { return tape_.size(); }

private:
    std::vector<Value> tape_;
};

// --- tensor ops (HWC feature maps) ---

// x {h,w,ic}, weight {oc,kh,kw,ic}, bias {oc}; zero padding
Value conv2d(Graph& g, const Value& x, const Value& w, const Value& b, int stride, int pad);
Value relu(Graph& g, const Value& x);
Value sigmoid(Graph& g, const Value& x);
Value softplus(Graph& g, const Value& x);
// exp(x) * k, used for stride-scaled nonnegative box distances
Value exp_mul(Graph& g, const Value& x, double k);
Value add(Graph& g, const Value& a, const Value& b);
Value concat_c(Graph& g, const std::vector<Value>& xs);
Value resize_bilinear(Graph& g, const Value& x, int out_h, int out_w);

// --- scalar ops (shape {1}) ---

Value sum_all(Graph& g, const Value& x);
Value s_add(Graph& g, const Value& a, const Value& b);
Value s_scale(Graph& g, const Value& a, double k);

// plain-math counterparts used outside graphs
double sigmoid_val(double x);
double softplus_val(double x);

}  // namespace uninet::ad

#endif
