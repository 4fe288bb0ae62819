#include "mbce/tape.hpp"

#include <algorithm>
#include <cmath>

#include "mbce/parallel.hpp"

namespace mbce::ad {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw ShapeMismatch(msg);
}

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw ShapeMismatch("operands live on different tapes");
}

} // namespace

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = OpKind::leaf;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    return {this, push(std::move(n))};
}

const Tensor& Tape::value(Var v) const { return nodes_[size_t(v.id)].value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = nodes_[size_t(v.id)];
    if (n.grad.data.empty()) throw DisconnectedLoss("no gradient recorded for this node");
    return n.grad;
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

// ---------------------------------------------------------------------------
// forward ops
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.tape->value(a);
    const Tensor& bv = b.tape->value(b);
    require(av.same_shape(bv), "add: shape mismatch");
    Node n;
    n.op = OpKind::add;
    n.in0 = a.id;
    n.in1 = b.id;
    n.value = av;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += bv.data[i];
    return {a.tape, a.tape->push(std::move(n))};
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.tape->value(a);
    const Tensor& bv = b.tape->value(b);
    require(av.same_shape(bv), "sub: shape mismatch");
    Node n;
    n.op = OpKind::sub;
    n.in0 = a.id;
    n.in1 = b.id;
    n.value = av;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= bv.data[i];
    return {a.tape, a.tape->push(std::move(n))};
}

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.tape->value(a);
    const Tensor& bv = b.tape->value(b);
    require(av.same_shape(bv), "mul: shape mismatch");
    Node n;
    n.op = OpKind::mul;
    n.in0 = a.id;
    n.in1 = b.id;
    n.value = av;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= bv.data[i];
    return {a.tape, a.tape->push(std::move(n))};
}

Var scale(Var a, double s) {
    Node n;
    n.op = OpKind::scale;
    n.in0 = a.id;
    n.a0 = s;
    n.value = a.tape->value(a);
    for (double& v : n.value.data) v *= s;
    return {a.tape, a.tape->push(std::move(n))};
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.tape->value(a);
    const Tensor& bv = b.tape->value(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), "matmul: bad shapes");
    const int m = av.dim(0), k = av.dim(1), p = bv.dim(1);
    Node n;
    n.op = OpKind::matmul;
    n.in0 = a.id;
    n.in1 = b.id;
    n.value = Tensor::zeros({m, p});
    for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
            const double aik = av.data[size_t(i) * k + kk];
            if (aik == 0.0) continue;
            const double* brow = &bv.data[size_t(kk) * p];
            double* crow = &n.value.data[size_t(i) * p];
            for (int j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    return {a.tape, a.tape->push(std::move(n))};
}

Var transpose2d(Var a) {
    const Tensor& av = a.tape->value(a);
    require(av.rank() == 2, "transpose2d: rank != 2");
    const int m = av.dim(0), p = av.dim(1);
    Node n;
    n.op = OpKind::transpose2d;
    n.in0 = a.id;
    n.value = Tensor::zeros({p, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) n.value.data[size_t(j) * m + i] = av.data[size_t(i) * p + j];
    return {a.tape, a.tape->push(std::move(n))};
}

Var add_row_bias(Var x, Var b) {
    check_same_tape(x, b);
    const Tensor& xv = x.tape->value(x);
    const Tensor& bv = b.tape->value(b);
    require(bv.rank() == 1 && xv.rank() >= 1 && xv.shape.back() == bv.dim(0),
            "add_row_bias: bias length must match last axis");
    const int d = bv.dim(0);
    Node n;
    n.op = OpKind::add_row_bias;
    n.in0 = x.id;
    n.in1 = b.id;
    n.value = xv;
    const size_t rows = xv.data.size() / size_t(d);
    for (size_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) n.value.data[r * size_t(d) + size_t(j)] += bv.data[size_t(j)];
    return {x.tape, x.tape->push(std::move(n))};
}

Var add_chan_bias(Var x, Var b) {
    check_same_tape(x, b);
    const Tensor& xv = x.tape->value(x);
    const Tensor& bv = b.tape->value(b);
    require(xv.rank() == 3 && bv.rank() == 1 && xv.dim(0) == bv.dim(0),
            "add_chan_bias: expects [C,H,W] and [C]");
    Node n;
    n.op = OpKind::add_chan_bias;
    n.in0 = x.id;
    n.in1 = b.id;
    n.value = xv;
    const size_t hw = size_t(xv.dim(1)) * xv.dim(2);
    for (int c = 0; c < xv.dim(0); ++c)
        for (size_t i = 0; i < hw; ++i) n.value.data[size_t(c) * hw + i] += bv.data[size_t(c)];
    return {x.tape, x.tape->push(std::move(n))};
}

Var relu(Var x) {
    Node n;
    n.op = OpKind::relu;
    n.in0 = x.id;
    n.value = x.tape->value(x);
    for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
    return {x.tape, x.tape->push(std::move(n))};
}

Var leaky_relu(Var x, double alpha) {
    Node n;
    n.op = OpKind::leaky_relu;
    n.in0 = x.id;
    n.a0 = alpha;
    n.value = x.tape->value(x);
    for (double& v : n.value.data) v = v > 0.0 ? v : alpha * v;
    return {x.tape, x.tape->push(std::move(n))};
}

Var softmax_last(Var x) {
    const Tensor& xv = x.tape->value(x);
    require(xv.rank() >= 1 && xv.shape.back() >= 1, "softmax_last: empty axis");
    const int d = xv.shape.back();
    Node n;
    n.op = OpKind::softmax_last;
    n.in0 = x.id;
    n.value = xv;
    const size_t rows = xv.data.size() / size_t(d);
    for (size_t r = 0; r < rows; ++r) {
        double* row = &n.value.data[r * size_t(d)];
        double mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < d; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < d; ++j) row[j] /= sum;
    }
    return {x.tape, x.tape->push(std::move(n))};
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    check_same_tape(x, gamma);
    check_same_tape(x, beta);
    const Tensor& xv = x.tape->value(x);
    const Tensor& gv = x.tape->value(gamma);
    const Tensor& bv = x.tape->value(beta);
    const int d = xv.shape.back();
    require(gv.rank() == 1 && gv.dim(0) == d && bv.rank() == 1 && bv.dim(0) == d,
            "layer_norm: affine params must match last axis");
    Node n;
    n.op = OpKind::layer_norm;
    n.in0 = x.id;
    n.in1 = gamma.id;
    n.in2 = beta.id;
    n.a0 = eps;
    n.value = xv;
    const size_t rows = xv.data.size() / size_t(d);
    n.auxd.resize(rows * 2);
    for (size_t r = 0; r < rows; ++r) {
        double* row = &n.value.data[r * size_t(d)];
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= d;
        const double invstd = 1.0 / std::sqrt(var + eps);
        n.auxd[r * 2] = mean;
        n.auxd[r * 2 + 1] = invstd;
        for (int j = 0; j < d; ++j)
            row[j] = (row[j] - mean) * invstd * gv.data[size_t(j)] + bv.data[size_t(j)];
    }
    return {x.tape, x.tape->push(std::move(n))};
}

Var group_norm(Var x, Var gamma, Var beta, int groups, double eps) {
    check_same_tape(x, gamma);
    check_same_tape(x, beta);
    const Tensor& xv = x.tape->value(x);
    const Tensor& gv = x.tape->value(gamma);
    const Tensor& bv = x.tape->value(beta);
    require(xv.rank() == 3, "group_norm: expects [C,H,W]");
    const int c = xv.dim(0);
    require(groups >= 1 && c % groups == 0, "group_norm: C must divide by groups");
    require(gv.rank() == 1 && gv.dim(0) == c && bv.rank() == 1 && bv.dim(0) == c,
            "group_norm: affine params must be [C]");
    const size_t hw = size_t(xv.dim(1)) * xv.dim(2);
    const int cg = c / groups;
    const size_t m = size_t(cg) * hw;

    Node n;
    n.op = OpKind::group_norm;
    n.in0 = x.id;
    n.in1 = gamma.id;
    n.in2 = beta.id;
    n.i0 = groups;
    n.a0 = eps;
    n.value = xv;
    n.auxd.resize(size_t(groups) * 2);
    for (int g = 0; g < groups; ++g) {
        double* base = &n.value.data[size_t(g) * m];
        double mean = 0.0;
        for (size_t i = 0; i < m; ++i) mean += base[i];
        mean /= double(m);
        double var = 0.0;
        for (size_t i = 0; i < m; ++i) var += (base[i] - mean) * (base[i] - mean);
        var /= double(m);
        const double invstd = 1.0 / std::sqrt(var + eps);
        n.auxd[size_t(g) * 2] = mean;
        n.auxd[size_t(g) * 2 + 1] = invstd;
        for (int cc = 0; cc < cg; ++cc) {
            const int ch = g * cg + cc;
            double* row = base + size_t(cc) * hw;
            const double ga = gv.data[size_t(ch)];
            const double be = bv.data[size_t(ch)];
            for (size_t i = 0; i < hw; ++i) row[i] = (row[i] - mean) * invstd * ga + be;
        }
    }
    return {x.tape, x.tape->push(std::move(n))};
}

Var conv2d(Var x, Var w, int stride, int pad) {
    check_same_tape(x, w);
    const Tensor& xv = x.tape->value(x);
    const Tensor& wv = x.tape->value(w);
    require(xv.rank() == 3 && wv.rank() == 4 && wv.dim(1) == xv.dim(0),
            "conv2d: expects x[Ci,H,W], w[Co,Ci,kh,kw]");
    const int ci = xv.dim(0), h = xv.dim(1), win = xv.dim(2);
    const int co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
    require(ho >= 1 && wo >= 1, "conv2d: output would be empty");

    Node n;
    n.op = OpKind::conv2d;
    n.in0 = x.id;
    n.in1 = w.id;
    n.i0 = stride;
    n.i1 = pad;
    n.value = Tensor::zeros({co, ho, wo});
    for (int oc = 0; oc < co; ++oc)
        for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const double wgt = wv.data[((size_t(oc) * ci + ic) * kh + ky) * kw + kx];
                    if (wgt == 0.0) continue;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = &xv.data[(size_t(ic) * h + iy) * win];
                        double* yrow = &n.value.data[(size_t(oc) * ho + oy) * wo];
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= win) continue;
                            yrow[ox] += wgt * xrow[ix];
                        }
                    }
                }
    return {x.tape, x.tape->push(std::move(n))};
}

Var conv_transpose2d(Var x, Var w, int stride, int pad, int out_pad) {
    check_same_tape(x, w);
    const Tensor& xv = x.tape->value(x);
    const Tensor& wv = x.tape->value(w);
    require(xv.rank() == 3 && wv.rank() == 4 && wv.dim(0) == xv.dim(0),
            "conv_transpose2d: expects x[Ci,H,W], w[Ci,Co,kh,kw]");
    const int ci = xv.dim(0), h = xv.dim(1), win = xv.dim(2);
    const int co = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
    const int ho = (h - 1) * stride - 2 * pad + kh + out_pad;
    const int wo = (win - 1) * stride - 2 * pad + kw + out_pad;
    require(ho >= 1 && wo >= 1, "conv_transpose2d: output would be empty");

    Node n;
    n.op = OpKind::conv_transpose2d;
    n.in0 = x.id;
    n.in1 = w.id;
    n.i0 = stride;
    n.i1 = pad;
    n.i2 = out_pad;
    n.value = Tensor::zeros({co, ho, wo});
    for (int ic = 0; ic < ci; ++ic)
        for (int oc = 0; oc < co; ++oc)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const double wgt = wv.data[((size_t(ic) * co + oc) * kh + ky) * kw + kx];
                    if (wgt == 0.0) continue;
                    for (int iy = 0; iy < h; ++iy) {
                        const int oy = iy * stride - pad + ky;
                        if (oy < 0 || oy >= ho) continue;
                        const double* xrow = &xv.data[(size_t(ic) * h + iy) * win];
                        double* yrow = &n.value.data[(size_t(oc) * ho + oy) * wo];
                        for (int ix = 0; ix < win; ++ix) {
                            const int ox = ix * stride - pad + kx;
                            if (ox < 0 || ox >= wo) continue;
                            yrow[ox] += wgt * xrow[ix];
                        }
                    }
                }
    return {x.tape, x.tape->push(std::move(n))};
}

Var max_pool2d(Var x) {
    const Tensor& xv = x.tape->value(x);
    require(xv.rank() == 3, "max_pool2d: expects [C,H,W]");
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    // 2x2 stride-2 floor pooling; degenerate axes of size 1 pass through
    const int ho = std::max(1, h / 2);
    const int wo = std::max(1, w / 2);
    Node n;
    n.op = OpKind::max_pool2d;
    n.in0 = x.id;
    n.value = Tensor::zeros({c, ho, wo});
    n.aux.resize(size_t(c) * ho * wo);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                int best = -1;
                double bv = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int iy = oy * 2 + dy;
                        const int ix = ox * 2 + dx;
                        if (iy >= h || ix >= w) continue;
                        const int idx = (ch * h + iy) * w + ix;
                        const double v = xv.data[size_t(idx)];
                        if (best < 0 || v > bv) {
                            best = idx;
                            bv = v;
                        }
                    }
                const size_t o = (size_t(ch) * ho + oy) * wo + ox;
                n.value.data[o] = bv;
                n.aux[o] = best;
            }
    return {x.tape, x.tape->push(std::move(n))};
}

Var global_avg_pool(Var x) {
    const Tensor& xv = x.tape->value(x);
    require(xv.rank() == 3, "global_avg_pool: expects [C,H,W]");
    const int c = xv.dim(0);
    const size_t hw = size_t(xv.dim(1)) * xv.dim(2);
    Node n;
    n.op = OpKind::global_avg_pool;
    n.in0 = x.id;
    n.value = Tensor::zeros({c});
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (size_t i = 0; i < hw; ++i) s += xv.data[size_t(ch) * hw + i];
        n.value.data[size_t(ch)] = s / double(hw);
    }
    return {x.tape, x.tape->push(std::move(n))};
}

Var concat(Var a, Var b, int axis) {
    check_same_tape(a, b);
    const Tensor& av = a.tape->value(a);
    const Tensor& bv = b.tape->value(b);
    require(av.rank() == bv.rank() && axis >= 0 && axis < av.rank(), "concat: bad axis");
    for (int i = 0; i < av.rank(); ++i)
        if (i != axis) require(av.dim(i) == bv.dim(i), "concat: non-axis dims differ");

    std::vector<int> shape = av.shape;
    shape[size_t(axis)] += bv.dim(axis);
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= size_t(av.dim(i));
    for (int i = axis + 1; i < av.rank(); ++i) inner *= size_t(av.dim(i));
    const size_t na = size_t(av.dim(axis)) * inner;
    const size_t nb = size_t(bv.dim(axis)) * inner;

    Node n;
    n.op = OpKind::concat;
    n.in0 = a.id;
    n.in1 = b.id;
    n.i0 = axis;
    n.value = Tensor::zeros(shape);
    for (size_t o = 0; o < outer; ++o) {
        std::copy_n(&av.data[o * na], na, &n.value.data[o * (na + nb)]);
        std::copy_n(&bv.data[o * nb], nb, &n.value.data[o * (na + nb) + na]);
    }
    return {a.tape, a.tape->push(std::move(n))};
}

Var slice_cols(Var x, int c0, int c1) {
    const Tensor& xv = x.tape->value(x);
    require(xv.rank() == 2 && c0 >= 0 && c1 <= xv.dim(1) && c0 < c1, "slice_cols: bad range");
    const int rows = xv.dim(0), d = xv.dim(1), w = c1 - c0;
    Node n;
    n.op = OpKind::slice_cols;
    n.in0 = x.id;
    n.i0 = c0;
    n.i1 = c1;
    n.value = Tensor::zeros({rows, w});
    for (int r = 0; r < rows; ++r)
        std::copy_n(&xv.data[size_t(r) * d + c0], w, &n.value.data[size_t(r) * w]);
    return {x.tape, x.tape->push(std::move(n))};
}

Var reshape(Var x, std::vector<int> shape) {
    const Tensor& xv = x.tape->value(x);
    require(Tensor::numel_of(shape) == xv.numel(), "reshape: element count mismatch");
    Node n;
    n.op = OpKind::reshape;
    n.in0 = x.id;
    n.value = Tensor(std::move(shape), xv.data);
    return {x.tape, x.tape->push(std::move(n))};
}

Var pad2d_to(Var x, int h, int w) {
    const Tensor& xv = x.tape->value(x);
    require(xv.rank() == 3 && h >= xv.dim(1) && w >= xv.dim(2), "pad2d_to: target too small");
    const int c = xv.dim(0), h0 = xv.dim(1), w0 = xv.dim(2);
    Node n;
    n.op = OpKind::pad2d;
    n.in0 = x.id;
    n.value = Tensor::zeros({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h0; ++y)
            std::copy_n(&xv.data[(size_t(ch) * h0 + y) * w0], w0,
                        &n.value.data[(size_t(ch) * h + y) * w]);
    return {x.tape, x.tape->push(std::move(n))};
}

Var crop2d_to(Var x, int h, int w) {
    const Tensor& xv = x.tape->value(x);
    require(xv.rank() == 3 && h <= xv.dim(1) && w <= xv.dim(2), "crop2d_to: target too large");
    const int c = xv.dim(0), h0 = xv.dim(1), w0 = xv.dim(2);
    Node n;
    n.op = OpKind::crop2d;
    n.in0 = x.id;
    n.value = Tensor::zeros({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            std::copy_n(&xv.data[(size_t(ch) * h0 + y) * w0], w,
                        &n.value.data[(size_t(ch) * h + y) * w]);
    return {x.tape, x.tape->push(std::move(n))};
}

Var sum_all(Var x) {
    const Tensor& xv = x.tape->value(x);
    double s = 0.0;
    for (double v : xv.data) s += v;
    Node n;
    n.op = OpKind::sum_all;
    n.in0 = x.id;
    n.value = Tensor::scalar(s);
    return {x.tape, x.tape->push(std::move(n))};
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void Tape::backward(Var loss) {
    if (!loss.valid() || loss.tape != this || size_t(loss.id) >= nodes_.size())
        throw DisconnectedLoss("loss is not a node of this tape");
    if (nodes_[size_t(loss.id)].value.numel() != 1)
        throw DisconnectedLoss("loss must be scalar");

    // mark nodes that require gradients (leaf flags propagate forward)
    for (size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (n.op == OpKind::leaf) continue;
        n.needs_grad = false;
        for (int in : {n.in0, n.in1, n.in2})
            if (in >= 0 && nodes_[size_t(in)].needs_grad) n.needs_grad = true;
    }

    grad_buf(loss.id).data[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[size_t(id)];
        if (n.op == OpKind::leaf || !n.needs_grad || n.grad.data.empty()) continue;
        backward_node(id);
    }
}

void Tape::backward_node(int id) {
    Node& n = nodes_[size_t(id)];
    const Tensor& gy = n.grad;

    auto in_val = [&](int in) -> const Tensor& { return nodes_[size_t(in)].value; };
    auto in_needs = [&](int in) { return in >= 0 && nodes_[size_t(in)].needs_grad; };

    switch (n.op) {
    case OpKind::leaf:
        break;
    case OpKind::add: {
        for (int in : {n.in0, n.in1})
            if (in_needs(in)) {
                Tensor& g = grad_buf(in);
                for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += gy.data[i];
            }
        break;
    }
    case OpKind::sub: {
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += gy.data[i];
        }
        if (in_needs(n.in1)) {
            Tensor& g = grad_buf(n.in1);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] -= gy.data[i];
        }
        break;
    }
    case OpKind::mul: {
        const Tensor& a = in_val(n.in0);
        const Tensor& b = in_val(n.in1);
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += gy.data[i] * b.data[i];
        }
        if (in_needs(n.in1)) {
            Tensor& g = grad_buf(n.in1);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += gy.data[i] * a.data[i];
        }
        break;
    }
    case OpKind::scale: {
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += gy.data[i] * n.a0;
        }
        break;
    }
    case OpKind::matmul: {
        const Tensor& a = in_val(n.in0);
        const Tensor& b = in_val(n.in1);
        const int m = a.dim(0), k = a.dim(1), p = b.dim(1);
        if (in_needs(n.in0)) {
            Tensor& ga = grad_buf(n.in0);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < p; ++j) {
                    const double g = gy.data[size_t(i) * p + j];
                    if (g == 0.0) continue;
                    const double* brow = &b.data[0];
                    for (int kk = 0; kk < k; ++kk)
                        ga.data[size_t(i) * k + kk] += g * brow[size_t(kk) * p + j];
                }
        }
        if (in_needs(n.in1)) {
            Tensor& gb = grad_buf(n.in1);
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    const double aik = a.data[size_t(i) * k + kk];
                    if (aik == 0.0) continue;
                    const double* grow = &gy.data[size_t(i) * p];
                    double* gbrow = &gb.data[size_t(kk) * p];
                    for (int j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
                }
        }
        break;
    }
    case OpKind::transpose2d: {
        if (in_needs(n.in0)) {
            const Tensor& a = in_val(n.in0);
            const int m = a.dim(0), p = a.dim(1);
            Tensor& g = grad_buf(n.in0);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < p; ++j)
                    g.data[size_t(i) * p + j] += gy.data[size_t(j) * m + i];
        }
        break;
    }
    case OpKind::add_row_bias: {
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += gy.data[i];
        }
        if (in_needs(n.in1)) {
            Tensor& g = grad_buf(n.in1);
            const int d = int(g.data.size());
            const size_t rows = gy.data.size() / size_t(d);
            for (size_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) g.data[size_t(j)] += gy.data[r * size_t(d) + size_t(j)];
        }
        break;
    }
    case OpKind::add_chan_bias: {
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += gy.data[i];
        }
        if (in_needs(n.in1)) {
            Tensor& g = grad_buf(n.in1);
            const int c = int(g.data.size());
            const size_t hw = gy.data.size() / size_t(c);
            for (int ch = 0; ch < c; ++ch)
                for (size_t i = 0; i < hw; ++i) g.data[size_t(ch)] += gy.data[size_t(ch) * hw + i];
        }
        break;
    }
    case OpKind::relu: {
        if (in_needs(n.in0)) {
            const Tensor& x = in_val(n.in0);
            Tensor& g = grad_buf(n.in0);
            for (size_t i = 0; i < g.data.size(); ++i)
                if (x.data[i] > 0.0) g.data[i] += gy.data[i];
        }
        break;
    }
    case OpKind::leaky_relu: {
        if (in_needs(n.in0)) {
            const Tensor& x = in_val(n.in0);
            Tensor& g = grad_buf(n.in0);
            for (size_t i = 0; i < g.data.size(); ++i)
                g.data[i] += gy.data[i] * (x.data[i] > 0.0 ? 1.0 : n.a0);
        }
        break;
    }
    case OpKind::softmax_last: {
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            const int d = n.value.shape.back();
            const size_t rows = n.value.data.size() / size_t(d);
            for (size_t r = 0; r < rows; ++r) {
                const double* y = &n.value.data[r * size_t(d)];
                const double* dy = &gy.data[r * size_t(d)];
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += dy[j] * y[j];
                double* gx = &g.data[r * size_t(d)];
                for (int j = 0; j < d; ++j) gx[j] += y[j] * (dy[j] - dot);
            }
        }
        break;
    }
    case OpKind::layer_norm: {
        const Tensor& x = in_val(n.in0);
        const Tensor& gv = in_val(n.in1);
        const int d = x.shape.back();
        const size_t rows = x.data.size() / size_t(d);
        Tensor* gx = in_needs(n.in0) ? &grad_buf(n.in0) : nullptr;
        Tensor* gg = in_needs(n.in1) ? &grad_buf(n.in1) : nullptr;
        Tensor* gb = in_needs(n.in2) ? &grad_buf(n.in2) : nullptr;
        for (size_t r = 0; r < rows; ++r) {
            const double mean = n.auxd[r * 2];
            const double invstd = n.auxd[r * 2 + 1];
            const double* xr = &x.data[r * size_t(d)];
            const double* dyr = &gy.data[r * size_t(d)];
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int j = 0; j < d; ++j) {
                const double xhat = (xr[j] - mean) * invstd;
                const double dxhat = dyr[j] * gv.data[size_t(j)];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                if (gg) gg->data[size_t(j)] += dyr[j] * xhat;
                if (gb) gb->data[size_t(j)] += dyr[j];
            }
            if (gx) {
                double* gxr = &gx->data[r * size_t(d)];
                for (int j = 0; j < d; ++j) {
                    const double xhat = (xr[j] - mean) * invstd;
                    const double dxhat = dyr[j] * gv.data[size_t(j)];
                    gxr[j] += invstd * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / double(d));
                }
            }
        }
        break;
    }
    case OpKind::group_norm: {
        const Tensor& x = in_val(n.in0);
        const Tensor& gv = in_val(n.in1);
        const int c = x.dim(0);
        const size_t hw = size_t(x.dim(1)) * x.dim(2);
        const int groups = n.i0;
        const int cg = c / groups;
        const size_t m = size_t(cg) * hw;
        Tensor* gx = in_needs(n.in0) ? &grad_buf(n.in0) : nullptr;
        Tensor* gg = in_needs(n.in1) ? &grad_buf(n.in1) : nullptr;
        Tensor* gb = in_needs(n.in2) ? &grad_buf(n.in2) : nullptr;
        for (int g = 0; g < groups; ++g) {
            const double mean = n.auxd[size_t(g) * 2];
            const double invstd = n.auxd[size_t(g) * 2 + 1];
            const double* xb = &x.data[size_t(g) * m];
            const double* dyb = &gy.data[size_t(g) * m];
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int cc = 0; cc < cg; ++cc) {
                const int ch = g * cg + cc;
                const double ga = gv.data[size_t(ch)];
                for (size_t i = 0; i < hw; ++i) {
                    const size_t k = size_t(cc) * hw + i;
                    const double xhat = (xb[k] - mean) * invstd;
                    const double dxhat = dyb[k] * ga;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (gg) gg->data[size_t(ch)] += dyb[k] * xhat;
                    if (gb) gb->data[size_t(ch)] += dyb[k];
                }
            }
            if (gx) {
                double* gxb = &gx->data[size_t(g) * m];
                for (int cc = 0; cc < cg; ++cc) {
                    const int ch = g * cg + cc;
                    const double ga = gv.data[size_t(ch)];
                    for (size_t i = 0; i < hw; ++i) {
                        const size_t k = size_t(cc) * hw + i;
                        const double xhat = (xb[k] - mean) * invstd;
                        const double dxhat = dyb[k] * ga;
                        gxb[k] += invstd *
                                  (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / double(m));
                    }
                }
            }
        }
        break;
    }
    case OpKind::conv2d: {
        const Tensor& x = in_val(n.in0);
        const Tensor& w = in_val(n.in1);
        const int ci = x.dim(0), h = x.dim(1), win = x.dim(2);
        const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
        const int ho = n.value.dim(1), wo = n.value.dim(2);
        const int stride = n.i0, pad = n.i1;
        Tensor* gx = in_needs(n.in0) ? &grad_buf(n.in0) : nullptr;
        Tensor* gw = in_needs(n.in1) ? &grad_buf(n.in1) : nullptr;
        for (int oc = 0; oc < co; ++oc)
            for (int ic = 0; ic < ci; ++ic)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const size_t widx = ((size_t(oc) * ci + ic) * kh + ky) * kw + kx;
                        const double wgt = w.data[widx];
                        double wacc = 0.0;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            const double* dyrow = &gy.data[(size_t(oc) * ho + oy) * wo];
                            const double* xrow = &x.data[(size_t(ic) * h + iy) * win];
                            double* gxrow = gx ? &gx->data[(size_t(ic) * h + iy) * win] : nullptr;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= win) continue;
                                const double g = dyrow[ox];
                                if (gxrow) gxrow[ix] += g * wgt;
                                wacc += g * xrow[ix];
                            }
                        }
                        if (gw) gw->data[widx] += wacc;
                    }
        break;
    }
    case OpKind::conv_transpose2d: {
        const Tensor& x = in_val(n.in0);
        const Tensor& w = in_val(n.in1);
        const int ci = x.dim(0), h = x.dim(1), win = x.dim(2);
        const int co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
        const int ho = n.value.dim(1), wo = n.value.dim(2);
        const int stride = n.i0, pad = n.i1;
        Tensor* gx = in_needs(n.in0) ? &grad_buf(n.in0) : nullptr;
        Tensor* gw = in_needs(n.in1) ? &grad_buf(n.in1) : nullptr;
        for (int ic = 0; ic < ci; ++ic)
            for (int oc = 0; oc < co; ++oc)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const size_t widx = ((size_t(ic) * co + oc) * kh + ky) * kw + kx;
                        const double wgt = w.data[widx];
                        double wacc = 0.0;
                        for (int iy = 0; iy < h; ++iy) {
                            const int oy = iy * stride - pad + ky;
                            if (oy < 0 || oy >= ho) continue;
                            const double* dyrow = &gy.data[(size_t(oc) * ho + oy) * wo];
                            const double* xrow = &x.data[(size_t(ic) * h + iy) * win];
                            double* gxrow = gx ? &gx->data[(size_t(ic) * h + iy) * win] : nullptr;
                            for (int ix = 0; ix < win; ++ix) {
                                const int ox = ix * stride - pad + kx;
                                if (ox < 0 || ox >= wo) continue;
                                const double g = dyrow[ox];
                                if (gxrow) gxrow[ix] += g * wgt;
                                wacc += g * xrow[ix];
                            }
                        }
                        if (gw) gw->data[widx] += wacc;
                    }
        break;
    }
    case OpKind::max_pool2d: {
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            for (size_t o = 0; o < n.aux.size(); ++o)
                if (n.aux[o] >= 0) g.data[size_t(n.aux[o])] += gy.data[o];
        }
        break;
    }
    case OpKind::global_avg_pool: {
        if (in_needs(n.in0)) {
            const Tensor& x = in_val(n.in0);
            const size_t hw = size_t(x.dim(1)) * x.dim(2);
            Tensor& g = grad_buf(n.in0);
            for (int c = 0; c < x.dim(0); ++c) {
                const double gc = gy.data[size_t(c)] / double(hw);
                for (size_t i = 0; i < hw; ++i) g.data[size_t(c) * hw + i] += gc;
            }
        }
        break;
    }
    case OpKind::concat: {
        const Tensor& a = in_val(n.in0);
        const Tensor& b = in_val(n.in1);
        const int axis = n.i0;
        size_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= size_t(a.dim(i));
        for (int i = axis + 1; i < a.rank(); ++i) inner *= size_t(a.dim(i));
        const size_t na = size_t(a.dim(axis)) * inner;
        const size_t nb = size_t(b.dim(axis)) * inner;
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            for (size_t o = 0; o < outer; ++o)
                for (size_t i = 0; i < na; ++i) g.data[o * na + i] += gy.data[o * (na + nb) + i];
        }
        if (in_needs(n.in1)) {
            Tensor& g = grad_buf(n.in1);
            for (size_t o = 0; o < outer; ++o)
                for (size_t i = 0; i < nb; ++i)
                    g.data[o * nb + i] += gy.data[o * (na + nb) + na + i];
        }
        break;
    }
    case OpKind::slice_cols: {
        if (in_needs(n.in0)) {
            const Tensor& x = in_val(n.in0);
            const int d = x.dim(1), w = n.i1 - n.i0;
            Tensor& g = grad_buf(n.in0);
            for (int r = 0; r < x.dim(0); ++r)
                for (int j = 0; j < w; ++j)
                    g.data[size_t(r) * d + n.i0 + j] += gy.data[size_t(r) * w + j];
        }
        break;
    }
    case OpKind::reshape: {
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += gy.data[i];
        }
        break;
    }
    case OpKind::pad2d: {
        if (in_needs(n.in0)) {
            const Tensor& x = in_val(n.in0);
            const int c = x.dim(0), h0 = x.dim(1), w0 = x.dim(2);
            const int h = n.value.dim(1), w = n.value.dim(2);
            Tensor& g = grad_buf(n.in0);
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h0; ++y)
                    for (int xw = 0; xw < w0; ++xw)
                        g.data[(size_t(ch) * h0 + y) * w0 + xw] +=
                            gy.data[(size_t(ch) * h + y) * w + xw];
        }
        break;
    }
    case OpKind::crop2d: {
        if (in_needs(n.in0)) {
            const Tensor& x = in_val(n.in0);
            const int c = x.dim(0), h0 = x.dim(1), w0 = x.dim(2);
            const int h = n.value.dim(1), w = n.value.dim(2);
            Tensor& g = grad_buf(n.in0);
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int xw = 0; xw < w; ++xw)
                        g.data[(size_t(ch) * h0 + y) * w0 + xw] +=
                            gy.data[(size_t(ch) * h + y) * w + xw];
        }
        break;
    }
    case OpKind::sum_all: {
        if (in_needs(n.in0)) {
            Tensor& g = grad_buf(n.in0);
            const double gs = gy.data[0];
            for (double& v : g.data) v += gs;
        }
        break;
    }
    }
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

GradcheckReport gradcheck(const GraphBuilder& fn, const std::vector<Tensor>& inputs, double eps,
                          double tol) {
    auto run_forward = [&](const std::vector<Tensor>& ins) {
        Tape t;
        std::vector<Var> leaves;
        leaves.reserve(ins.size());
        for (const Tensor& in : ins) leaves.push_back(t.leaf(in, false));
        Var loss = fn(t, leaves);
        if (t.value(loss).numel() != 1) throw DisconnectedLoss("gradcheck: loss must be scalar");
        return t.value(loss).data[0];
    };

    const double f0 = run_forward(inputs);
    const double f1 = run_forward(inputs);
    if (f0 != f1)
        throw NonDeterministicFunction("two forward passes differ: " + std::to_string(f0) +
                                       " vs " + std::to_string(f1));

    // analytic gradients
    Tape t;
    std::vector<Var> leaves;
    for (const Tensor& in : inputs) leaves.push_back(t.leaf(in, true));
    Var loss = fn(t, leaves);
    t.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(leaves.size());
    for (Var v : leaves) analytic.push_back(t.grad(v));

    GradcheckReport rep;
    rep.pass = true;

    struct Slot {
        size_t input;
        size_t elem;
        double rel;
    };
    std::vector<std::pair<size_t, size_t>> coords;
    for (size_t i = 0; i < inputs.size(); ++i)
        for (size_t e = 0; e < inputs[i].data.size(); ++e) coords.push_back({i, e});
    std::vector<double> rel_err(coords.size(), 0.0);

    parallel_for(coords.size(), [&](size_t c) {
        const auto [i, e] = coords[c];
        std::vector<Tensor> work = inputs;
        const double orig = work[i].data[e];
        work[i].data[e] = orig + eps;
        const double fp = run_forward(work);
        work[i].data[e] = orig - eps;
        const double fm = run_forward(work);
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[i].data[e];
        // components below the 1e-3 magnitude floor are compared absolutely;
        // central differences cannot resolve them beyond their own noise
        rel_err[c] = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
    });

    for (size_t c = 0; c < coords.size(); ++c) {
        ++rep.checked;
        if (rel_err[c] > rep.max_rel_err) {
            rep.max_rel_err = rel_err[c];
            rep.worst_input = int(coords[c].first);
            rep.worst_element = int64_t(coords[c].second);
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

} // namespace mbce::ad
