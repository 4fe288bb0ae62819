#ifndef MBCE_TAPE_HPP
#define MBCE_TAPE_HPP

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "mbce/tensor.hpp"

namespace mbce::ad {

class Tape;

// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

enum class OpKind : uint8_t {
    leaf,
    add,
    sub,
    mul,
    scale,
    matmul,
    transpose2d,
    add_row_bias,
    add_chan_bias,
    relu,
    leaky_relu,
    softmax_last,
    layer_norm,
    group_norm,
    conv2d,
    conv_transpose2d,
    max_pool2d,
    global_avg_pool,
    concat,
    slice_cols,
    reshape,
    pad2d,
    crop2d,
    sum_all,
};

struct Node {
    OpKind op = OpKind::leaf;
    int in0 = -1, in1 = -1, in2 = -1;
    Tensor value;
    Tensor grad; // allocated on demand during backward
    bool needs_grad = false;
    // per-op integer/double attributes
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    double a0 = 0.0;
    std::vector<int> aux;     // e.g. argmax indices for max_pool2d
    std::vector<double> auxd; // e.g. normalization statistics
};

// Records forward primitives and replays them in reverse for gradients.
// Nodes live in a deque so value/grad references stay valid as the graph
// grows. Single-threaded per tape; run independent tapes concurrently for
// batches.
class Tape {
public:
    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;
    size_t node_count() const { return nodes_.size(); }

    // Populates gradients of every needs_grad node reachable from loss.
    void backward(Var loss);

    friend Var add(Var a, Var b);
    friend Var sub(Var a, Var b);
    friend Var mul(Var a, Var b);
    friend Var scale(Var a, double s);
    friend Var matmul(Var a, Var b);
    friend Var transpose2d(Var a);
    friend Var add_row_bias(Var x, Var b);
    friend Var add_chan_bias(Var x, Var b);
    friend Var relu(Var x);
    friend Var leaky_relu(Var x, double alpha);
    friend Var softmax_last(Var x);
    friend Var layer_norm(Var x, Var gamma, Var beta, double eps);
    friend Var group_norm(Var x, Var gamma, Var beta, int groups, double eps);
    friend Var conv2d(Var x, Var w, int stride, int pad);
    friend Var conv_transpose2d(Var x, Var w, int stride, int pad, int out_pad);
    friend Var max_pool2d(Var x);
    friend Var global_avg_pool(Var x);
    friend Var concat(Var a, Var b, int axis);
    friend Var slice_cols(Var x, int c0, int c1);
    friend Var reshape(Var x, std::vector<int> shape);
    friend Var pad2d_to(Var x, int h, int w);
    friend Var crop2d_to(Var x, int h, int w);
    friend Var sum_all(Var x);

private:
    std::deque<Node> nodes_;
    int push(Node n);
    Tensor& grad_buf(int id);
    void backward_node(int id);
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
Var transpose2d(Var a);
Var add_row_bias(Var x, Var b);
Var add_chan_bias(Var x, Var b);
Var relu(Var x);
Var leaky_relu(Var x, double alpha);
Var softmax_last(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5);
Var conv2d(Var x, Var w, int stride, int pad);
Var conv_transpose2d(Var x, Var w, int stride, int pad, int out_pad);
Var max_pool2d(Var x);
Var global_avg_pool(Var x);
Var concat(Var a, Var b, int axis);
Var slice_cols(Var x, int c0, int c1);
Var reshape(Var x, std::vector<int> shape);
Var pad2d_to(Var x, int h, int w);
Var crop2d_to(Var x, int h, int w);
Var sum_all(Var x);

// Analytic-vs-central-difference comparison for a scalar-valued graph
// builder. The builder must be deterministic; it is invoked twice up front
// and the forward values compared bit-for-bit.
struct GradcheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    int worst_input = -1;
    int64_t worst_element = -1;
    int64_t checked = 0;
};

using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

GradcheckReport gradcheck(const GraphBuilder& fn, const std::vector<Tensor>& inputs, double eps,
                          double tol);

} // namespace mbce::ad

#endif
