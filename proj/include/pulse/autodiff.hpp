#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pulse/resample.hpp"
#include "pulse/tensor.hpp"

namespace pulse {

// ---------------------------------------------------------------------------
// Plain tensor kernels, shared by the graph executor and by code that wants a
// forward pass without building a graph (e.g. weight-init probing).
// ---------------------------------------------------------------------------

/// 2-D convolution, stride 1, zero padding to "same" size.
/// x: (Cin, H, W), k: (Cout, Cin, kh, kw) with odd square kh == kw.
inline Tensor conv2d_same(const Tensor& x, const Tensor& k) {
    if (x.rank() != 3 || k.rank() != 4)
        throw std::invalid_argument("conv2d: expected input rank 3 and kernel rank 4, got " +
                                    shape_str(x.dims) + " and " + shape_str(k.dims));
    const std::size_t cin = x.dims[0], h = x.dims[1], w = x.dims[2];
    const std::size_t cout = k.dims[0], kh = k.dims[2], kw = k.dims[3];
    if (k.dims[1] != cin)
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(k.dims[1]) +
                                    " input channels, input has " + std::to_string(cin));
    if (kh != kw || kh % 2 == 0)
        throw std::invalid_argument("conv2d: kernel must be odd and square, got " +
                                    shape_str(k.dims));
    const long pad = static_cast<long>(kh / 2);
    Tensor out({cout, h, w}, 0.0);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* kk = &k.data[((co * cin + ci) * kh) * kw];
            const double* xx = &x.data[ci * h * w];
            double* oo = &out.data[co * h * w];
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t dy = 0; dy < kh; ++dy) {
                    const long sy = static_cast<long>(y + dy) - pad;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    const double* xrow = &xx[static_cast<std::size_t>(sy) * w];
                    const double* krow = &kk[dy * kw];
                    double* orow = &oo[y * w];
                    for (std::size_t dx = 0; dx < kw; ++dx) {
                        const double kv = krow[dx];
                        if (kv == 0.0) continue;
                        const long off = static_cast<long>(dx) - pad;
                        const std::size_t x0 =
                            static_cast<std::size_t>(std::max(0L, -off));
                        const std::size_t x1 = static_cast<std::size_t>(
                            std::min<long>(static_cast<long>(w), static_cast<long>(w) - off));
                        for (std::size_t xi = x0; xi < x1; ++xi)
                            orow[xi] += kv * xrow[static_cast<std::size_t>(
                                                 static_cast<long>(xi) + off)];
                    }
                }
        }
    return out;
}

/// Gradient of conv2d_same w.r.t. its input, given the output gradient.
inline Tensor conv2d_input_grad(const Tensor& gout, const Tensor& k) {
    const std::size_t cout = k.dims[0], cin = k.dims[1], kh = k.dims[2], kw = k.dims[3];
    const std::size_t h = gout.dims[1], w = gout.dims[2];
    const long pad = static_cast<long>(kh / 2);
    Tensor gin({cin, h, w}, 0.0);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* kk = &k.data[((co * cin + ci) * kh) * kw];
            const double* gg = &gout.data[co * h * w];
            double* gi = &gin.data[ci * h * w];
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t dy = 0; dy < kh; ++dy) {
                    const long sy = static_cast<long>(y + dy) - pad;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    const double* grow = &gg[y * w];
                    double* girow = &gi[static_cast<std::size_t>(sy) * w];
                    for (std::size_t dx = 0; dx < kw; ++dx) {
                        const double kv = kk[dy * kw + dx];
                        if (kv == 0.0) continue;
                        const long off = static_cast<long>(dx) - pad;
                        for (std::size_t xi = 0; xi < w; ++xi) {
                            const long sx = static_cast<long>(xi) + off;
                            if (sx < 0 || sx >= static_cast<long>(w)) continue;
                            girow[static_cast<std::size_t>(sx)] += kv * grow[xi];
                        }
                    }
                }
        }
    return gin;
}

/// Gradient of conv2d_same w.r.t. the kernel, given input and output gradient.
inline Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& gout, std::size_t kh,
                                 std::size_t kw) {
    const std::size_t cin = x.dims[0], h = x.dims[1], w = x.dims[2];
    const std::size_t cout = gout.dims[0];
    const long pad = static_cast<long>(kh / 2);
    Tensor gk({cout, cin, kh, kw}, 0.0);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t dy = 0; dy < kh; ++dy)
                for (std::size_t dx = 0; dx < kw; ++dx) {
                    double acc = 0.0;
                    for (std::size_t y = 0; y < h; ++y) {
                        const long sy = static_cast<long>(y + dy) - pad;
                        if (sy < 0 || sy >= static_cast<long>(h)) continue;
                        const double* grow = &gout.data[(co * h + y) * w];
                        const double* xrow =
                            &x.data[(ci * h + static_cast<std::size_t>(sy)) * w];
                        for (std::size_t xi = 0; xi < w; ++xi) {
                            const long sx = static_cast<long>(xi + dx) - pad;
                            if (sx < 0 || sx >= static_cast<long>(w)) continue;
                            acc += grow[xi] * xrow[static_cast<std::size_t>(sx)];
                        }
                    }
                    gk.data[((co * cin + ci) * kh + dy) * kw + dx] = acc;
                }
    return gk;
}

/// Nearest-neighbor x2 upsample: (C, H, W) -> (C, 2H, 2W).
inline Tensor upsample2x_nearest(const Tensor& x) {
    if (x.rank() != 3)
        throw std::invalid_argument("upsample2x: expected rank 3, got " + shape_str(x.dims));
    const std::size_t c = x.dims[0], h = x.dims[1], w = x.dims[2];
    Tensor out({c, 2 * h, 2 * w}, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y) {
            const double* src = &x.data[(ch * h + y) * w];
            double* d0 = &out.data[(ch * 2 * h + 2 * y) * 2 * w];
            double* d1 = d0 + 2 * w;
            for (std::size_t xi = 0; xi < w; ++xi) {
                const double v = src[xi];
                d0[2 * xi] = d0[2 * xi + 1] = v;
                d1[2 * xi] = d1[2 * xi + 1] = v;
            }
        }
    return out;
}

/// Adjoint of nearest x2 upsample: sums each 2x2 block.
inline Tensor upsample2x_adjoint(const Tensor& g) {
    const std::size_t c = g.dims[0], h2 = g.dims[1], w2 = g.dims[2];
    const std::size_t h = h2 / 2, w = w2 / 2;
    Tensor out({c, h, w}, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y) {
            const double* s0 = &g.data[(ch * h2 + 2 * y) * w2];
            const double* s1 = s0 + w2;
            double* dst = &out.data[(ch * h + y) * w];
            for (std::size_t xi = 0; xi < w; ++xi)
                dst[xi] = s0[2 * xi] + s0[2 * xi + 1] + s1[2 * xi] + s1[2 * xi + 1];
        }
    return out;
}

inline double leaky_relu_scalar(double x, double slope) { return x >= 0.0 ? x : slope * x; }

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Angle between two vectors via atan2(|rejection|, inner product) of the
/// normalized pair; stable at both 0 and pi.
inline double pair_angle(const Tensor& a, const Tensor& b) {
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("geocross: zero-norm style vector");
    if (a.data == b.data) return 0.0;  // exact, and skips rounding noise
    double c = 0.0;
    for (std::size_t t = 0; t < a.data.size(); ++t) c += a.data[t] * b.data[t];
    c /= na * nb;
    double rej = 0.0;
    for (std::size_t t = 0; t < a.data.size(); ++t) {
        const double r = b.data[t] / nb - c * (a.data[t] / na);
        rej += r * r;
    }
    return std::atan2(std::sqrt(rej), c);
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

using Bindings = std::map<std::string, Tensor>;

enum class Op {
    Input,      // bound per evaluation
    Param,      // fixed tensor baked into the graph (weights); never gets a gradient
    Add,        // elementwise; broadcasts scalar, (C) over (C,H,W), (H,W) over (C,H,W)
    Mul,        // same broadcast rules as Add
    Scale,      // multiply by a compile-time constant
    MatVec,     // (r,c) matrix times (c) vector
    Conv2d,     // zero-padded same-size convolution
    Upsample2x, // nearest-neighbor
    LeakyRelu,
    Sigmoid,
    Sum,        // reduce all entries to a rank-0 scalar
    PowAbs,     // |x|^p elementwise, p in {1,2}
    Resample,   // LinearResampler forward; backward is its adjoint
    Cross,      // sum over style pairs of squared euclidean distance
    GeoCross,   // sum over style pairs of squared angle
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::MatVec: return "matvec";
        case Op::Conv2d: return "conv2d";
        case Op::Upsample2x: return "upsample2x";
        case Op::LeakyRelu: return "leakyrelu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Sum: return "sum";
        case Op::PowAbs: return "powabs";
        case Op::Resample: return "resample";
        case Op::Cross: return "cross";
        case Op::GeoCross: return "geocross";
    }
    return "?";
}

struct Node {
    Op op;
    std::vector<int> args;
    std::vector<std::size_t> dims;  // output shape; empty = rank-0 scalar
    std::string name;               // inputs and params; optional elsewhere
    bool trainable = false;
    bool needs_grad = false;
    double alpha = 0.0;  // Scale factor / LeakyRelu slope
    int p = 2;           // PowAbs exponent
    Tensor value;        // Param payload
    std::shared_ptr<const LinearResampler> resampler;
};

namespace detail {

// Broadcast patterns allowed in Add/Mul: `which` tells which operand is the
// smaller one (0 = none, 1 = left, 2 = right).
struct BcastPlan {
    int which = 0;
    enum class Pattern { Full, Scalar, Channel, Spatial } pattern = Pattern::Full;
};

inline bool dims_equal(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    return a == b;
}

inline BcastPlan classify_broadcast(const std::vector<std::size_t>& a,
                                    const std::vector<std::size_t>& b) {
    using P = BcastPlan::Pattern;
    if (dims_equal(a, b)) return {0, P::Full};
    if (b.empty()) return {2, P::Scalar};
    if (a.empty()) return {1, P::Scalar};
    if (a.size() == 3 && b.size() == 1 && b[0] == a[0]) return {2, P::Channel};
    if (b.size() == 3 && a.size() == 1 && a[0] == b[0]) return {1, P::Channel};
    if (a.size() == 3 && b.size() == 2 && b[0] == a[1] && b[1] == a[2])
        return {2, P::Spatial};
    if (b.size() == 3 && a.size() == 2 && a[0] == b[1] && a[1] == b[2])
        return {1, P::Spatial};
    throw std::invalid_argument("add/mul: incompatible shapes " + shape_str(a) + " and " +
                                shape_str(b));
}

// Index of the broadcast operand's entry corresponding to flat index `idx` of
// the full operand with dims (C,H,W).
inline std::size_t bcast_index(BcastPlan::Pattern pat, std::size_t idx, std::size_t hw,
                               std::size_t w) {
    (void)w;
    switch (pat) {
        case BcastPlan::Pattern::Scalar: return 0;
        case BcastPlan::Pattern::Channel: return idx / hw;
        case BcastPlan::Pattern::Spatial: return idx % hw;
        default: return idx;
    }
}

}  // namespace detail

/// A static computation graph over Tensors. Build once, then evaluate with
/// fresh bindings as often as needed; the graph itself stays immutable, so
/// concurrent evaluations only need per-caller value buffers.
class Graph {
public:
    int input(const std::string& name, std::vector<std::size_t> dims, bool trainable = true) {
        Node n;
        n.op = Op::Input;
        n.dims = std::move(dims);
        n.name = name;
        n.trainable = trainable;
        n.needs_grad = trainable;
        return push(std::move(n));
    }

    int param(const std::string& name, Tensor value) {
        Node n;
        n.op = Op::Param;
        n.dims = value.dims;
        n.name = name;
        n.value = std::move(value);
        return push(std::move(n));
    }

    int add(int a, int b) { return binary(Op::Add, a, b); }
    int mul(int a, int b) { return binary(Op::Mul, a, b); }

    int scale(int a, double f) {
        Node n;
        n.op = Op::Scale;
        n.args = {a};
        n.dims = at(a).dims;
        n.alpha = f;
        return push(std::move(n));
    }

    int matvec(int m, int v) {
        const Node& mm = at(m);
        const Node& vv = at(v);
        if (mm.dims.size() != 2 || vv.dims.size() != 1 || mm.dims[1] != vv.dims[0])
            throw std::invalid_argument("matvec: need (r,c) x (c), got " +
                                        shape_str(mm.dims) + " and " + shape_str(vv.dims));
        Node n;
        n.op = Op::MatVec;
        n.args = {m, v};
        n.dims = {mm.dims[0]};
        return push(std::move(n));
    }

    int conv2d(int x, int k) {
        const Node& xx = at(x);
        const Node& kk = at(k);
        if (xx.dims.size() != 3 || kk.dims.size() != 4 || kk.dims[1] != xx.dims[0] ||
            kk.dims[2] != kk.dims[3] || kk.dims[2] % 2 == 0)
            throw std::invalid_argument("conv2d: bad shapes " + shape_str(xx.dims) + " and " +
                                        shape_str(kk.dims));
        Node n;
        n.op = Op::Conv2d;
        n.args = {x, k};
        n.dims = {kk.dims[0], xx.dims[1], xx.dims[2]};
        return push(std::move(n));
    }

    int upsample2x(int x) {
        const Node& xx = at(x);
        if (xx.dims.size() != 3)
            throw std::invalid_argument("upsample2x: need rank 3, got " + shape_str(xx.dims));
        Node n;
        n.op = Op::Upsample2x;
        n.args = {x};
        n.dims = {xx.dims[0], 2 * xx.dims[1], 2 * xx.dims[2]};
        return push(std::move(n));
    }

    int leaky_relu(int x, double slope) {
        Node n;
        n.op = Op::LeakyRelu;
        n.args = {x};
        n.dims = at(x).dims;
        n.alpha = slope;
        return push(std::move(n));
    }

    int sigmoid(int x) {
        Node n;
        n.op = Op::Sigmoid;
        n.args = {x};
        n.dims = at(x).dims;
        return push(std::move(n));
    }

    int sum(int x) {
        Node n;
        n.op = Op::Sum;
        n.args = {x};
        return push(std::move(n));
    }

    int pow_abs(int x, int p) {
        if (p != 1 && p != 2) throw std::invalid_argument("pow_abs: p must be 1 or 2");
        Node n;
        n.op = Op::PowAbs;
        n.args = {x};
        n.dims = at(x).dims;
        n.p = p;
        return push(std::move(n));
    }

    int resample(int x, std::shared_ptr<const LinearResampler> rs) {
        const Node& xx = at(x);
        if (xx.dims.size() != 3 || xx.dims[1] != rs->input_height() ||
            xx.dims[2] != rs->input_width())
            throw std::invalid_argument("resample: input " + shape_str(xx.dims) +
                                        " does not match resampler input dims");
        Node n;
        n.op = Op::Resample;
        n.args = {x};
        n.dims = {xx.dims[0], rs->output_height(), rs->output_width()};
        n.resampler = std::move(rs);
        return push(std::move(n));
    }

    int cross(const std::vector<int>& styles) { return pairwise(Op::Cross, styles); }
    int geocross(const std::vector<int>& styles) { return pairwise(Op::GeoCross, styles); }

    void set_output(int id) {
        at(id);
        output_ = id;
    }
    int output() const { return output_; }

    void set_name(int id, const std::string& name) { nodes_[check(id)].name = name; }

    const Node& at(int id) const { return nodes_[check(id)]; }
    std::size_t size() const { return nodes_.size(); }

    // ---- execution -------------------------------------------------------

    /// Computes every node value in topological (construction) order.
    /// `values` may be reused across calls; Param entries are filled once.
    void forward(const Bindings& bindings, std::vector<Tensor>& values) const {
        values.resize(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            eval_node(n, bindings, values, static_cast<int>(i));
            if (!values[i].all_finite())
                throw std::runtime_error(std::string("non-finite value after ") +
                                         op_name(n.op) + " node " + std::to_string(i) +
                                         (n.name.empty() ? "" : " (" + n.name + ")"));
        }
    }

    double forward_scalar(const Bindings& bindings, std::vector<Tensor>& values) const {
        require_scalar_output();
        forward(bindings, values);
        return values[static_cast<std::size_t>(output_)].data[0];
    }

    /// Reverse pass from the scalar output. `values` must come from forward()
    /// on this graph. Fills grads for every needs_grad node reached.
    void backward(const std::vector<Tensor>& values, std::vector<Tensor>& grads) const {
        require_scalar_output();
        if (values.size() != nodes_.size())
            throw std::invalid_argument("backward: value buffer does not match graph");
        grads.assign(nodes_.size(), Tensor());
        grads[static_cast<std::size_t>(output_)] = Tensor::scalar(1.0);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            Tensor& g = grads[static_cast<std::size_t>(i)];
            if (!n.needs_grad || g.data.empty()) continue;
            backward_node(n, i, values, grads, g);
        }
    }

    /// Forward values of every named node (plus "out" for an unnamed output).
    std::map<std::string, Tensor> evaluate(const Bindings& bindings) const {
        std::vector<Tensor> values;
        forward(bindings, values);
        std::map<std::string, Tensor> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (!nodes_[i].name.empty()) out[nodes_[i].name] = values[i];
        if (output_ >= 0 && nodes_[static_cast<std::size_t>(output_)].name.empty())
            out["out"] = values[static_cast<std::size_t>(output_)];
        return out;
    }

    /// Gradient of the scalar output w.r.t. every trainable input, by name.
    std::map<std::string, Tensor> gradient(const Bindings& bindings) const {
        std::vector<Tensor> values, grads;
        forward(bindings, values);
        require_scalar_output();
        backward(values, grads);
        std::map<std::string, Tensor> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            if (n.op != Op::Input || !n.trainable) continue;
            out[n.name] = grads[i].data.empty() ? Tensor(n.dims, 0.0) : grads[i];
        }
        return out;
    }

private:
    int check(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("graph: bad node id " + std::to_string(id));
        return id;
    }

    int push(Node n) {
        for (int a : n.args) {
            check(a);
            n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(a)].needs_grad;
        }
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int binary(Op op, int a, int b) {
        const Node& na = at(a);
        const Node& nb = at(b);
        const auto plan = detail::classify_broadcast(na.dims, nb.dims);
        Node n;
        n.op = op;
        n.args = {a, b};
        n.dims = (plan.which == 1) ? nb.dims : na.dims;
        return push(std::move(n));
    }

    int pairwise(Op op, const std::vector<int>& styles) {
        if (styles.empty()) throw std::invalid_argument("cross: need at least one style");
        const std::size_t d = at(styles[0]).dims.empty() ? 0 : at(styles[0]).dims[0];
        for (int s : styles) {
            const Node& ns = at(s);
            if (ns.dims.size() != 1 || ns.dims[0] != d)
                throw std::invalid_argument("cross: styles must share one rank-1 shape");
        }
        Node n;
        n.op = op;
        n.args = styles;
        return push(std::move(n));
    }

    void require_scalar_output() const {
        if (output_ < 0) throw std::invalid_argument("graph: no output set");
        if (!nodes_[static_cast<std::size_t>(output_)].dims.empty())
            throw std::invalid_argument("graph: output must be a rank-0 scalar, got " +
                                        shape_str(nodes_[static_cast<std::size_t>(output_)].dims));
    }

    static Tensor& grad_slot(std::vector<Tensor>& grads, int id,
                             const std::vector<std::size_t>& dims) {
        Tensor& t = grads[static_cast<std::size_t>(id)];
        if (t.data.empty()) t = Tensor(dims, 0.0);
        return t;
    }

    void eval_node(const Node& n, const Bindings& bindings, std::vector<Tensor>& values,
                   int id) const {
        Tensor& out = values[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::Input: {
                auto it = bindings.find(n.name);
                if (it == bindings.end())
                    throw std::invalid_argument("evaluate: unbound input '" + n.name + "'");
                if (it->second.dims != n.dims)
                    throw std::invalid_argument("evaluate: input '" + n.name + "' expects " +
                                                shape_str(n.dims) + ", got " +
                                                shape_str(it->second.dims));
                out = it->second;
                return;
            }
            case Op::Param:
                if (out.dims != n.dims || out.data.size() != n.value.data.size())
                    out = n.value;  // copied once per value buffer, then reused
                return;
            case Op::Add:
            case Op::Mul: {
                const Tensor& a = values[static_cast<std::size_t>(n.args[0])];
                const Tensor& b = values[static_cast<std::size_t>(n.args[1])];
                const auto plan = detail::classify_broadcast(a.dims, b.dims);
                const Tensor& full = (plan.which == 1) ? b : a;
                const Tensor& small = (plan.which == 1) ? a : b;
                out = Tensor(full.dims, 0.0);
                const std::size_t hw =
                    full.dims.size() == 3 ? full.dims[1] * full.dims[2] : 0;
                const std::size_t w = full.dims.size() == 3 ? full.dims[2] : 0;
                const bool is_add = (n.op == Op::Add);
                if (plan.which == 0) {
                    for (std::size_t i = 0; i < out.data.size(); ++i)
                        out.data[i] = is_add ? a.data[i] + b.data[i] : a.data[i] * b.data[i];
                } else {
                    for (std::size_t i = 0; i < out.data.size(); ++i) {
                        const double s =
                            small.data[detail::bcast_index(plan.pattern, i, hw, w)];
                        out.data[i] = is_add ? full.data[i] + s : full.data[i] * s;
                    }
                }
                return;
            }
            case Op::Scale: {
                out = values[static_cast<std::size_t>(n.args[0])];
                for (double& v : out.data) v *= n.alpha;
                return;
            }
            case Op::MatVec: {
                const Tensor& m = values[static_cast<std::size_t>(n.args[0])];
                const Tensor& v = values[static_cast<std::size_t>(n.args[1])];
                const std::size_t r = m.dims[0], c = m.dims[1];
                out = Tensor({r}, 0.0);
                for (std::size_t i = 0; i < r; ++i) {
                    double acc = 0.0;
                    const double* row = &m.data[i * c];
                    for (std::size_t j = 0; j < c; ++j) acc += row[j] * v.data[j];
                    out.data[i] = acc;
                }
                return;
            }
            case Op::Conv2d:
                out = conv2d_same(values[static_cast<std::size_t>(n.args[0])],
                                  values[static_cast<std::size_t>(n.args[1])]);
                return;
            case Op::Upsample2x:
                out = upsample2x_nearest(values[static_cast<std::size_t>(n.args[0])]);
                return;
            case Op::LeakyRelu: {
                out = values[static_cast<std::size_t>(n.args[0])];
                for (double& v : out.data) v = leaky_relu_scalar(v, n.alpha);
                return;
            }
            case Op::Sigmoid: {
                out = values[static_cast<std::size_t>(n.args[0])];
                for (double& v : out.data) v = sigmoid_scalar(v);
                return;
            }
            case Op::Sum: {
                const Tensor& a = values[static_cast<std::size_t>(n.args[0])];
                double acc = 0.0;
                for (double v : a.data) acc += v;
                out = Tensor::scalar(acc);
                return;
            }
            case Op::PowAbs: {
                out = values[static_cast<std::size_t>(n.args[0])];
                if (n.p == 2)
                    for (double& v : out.data) v *= v;
                else
                    for (double& v : out.data) v = std::abs(v);
                return;
            }
            case Op::Resample:
                out = n.resampler->apply_tensor(values[static_cast<std::size_t>(n.args[0])]);
                return;
            case Op::Cross: {
                // sum_{i<j} |v_i - v_j|^2
                double acc = 0.0;
                for (std::size_t i = 0; i < n.args.size(); ++i)
                    for (std::size_t j = i + 1; j < n.args.size(); ++j) {
                        const Tensor& a = values[static_cast<std::size_t>(n.args[i])];
                        const Tensor& b = values[static_cast<std::size_t>(n.args[j])];
                        for (std::size_t t = 0; t < a.data.size(); ++t) {
                            const double dv = a.data[t] - b.data[t];
                            acc += dv * dv;
                        }
                    }
                out = Tensor::scalar(acc);
                return;
            }
            case Op::GeoCross: {
                double acc = 0.0;
                for (std::size_t i = 0; i < n.args.size(); ++i)
                    for (std::size_t j = i + 1; j < n.args.size(); ++j) {
                        const double th =
                            pair_angle(values[static_cast<std::size_t>(n.args[i])],
                                       values[static_cast<std::size_t>(n.args[j])]);
                        acc += th * th;
                    }
                out = Tensor::scalar(acc);
                return;
            }
        }
        throw std::logic_error("evaluate: unsupported primitive");
    }

    void backward_node(const Node& n, int id, const std::vector<Tensor>& values,
                       std::vector<Tensor>& grads, const Tensor& g) const {
        auto arg_needs = [&](int k) {
            return nodes_[static_cast<std::size_t>(n.args[static_cast<std::size_t>(k)])]
                .needs_grad;
        };
        auto arg_val = [&](int k) -> const Tensor& {
            return values[static_cast<std::size_t>(n.args[static_cast<std::size_t>(k)])];
        };
        auto slot = [&](int k) -> Tensor& {
            const int id = n.args[static_cast<std::size_t>(k)];
            return grad_slot(grads, id, nodes_[static_cast<std::size_t>(id)].dims);
        };
        switch (n.op) {
            case Op::Input:
            case Op::Param:
                return;
            case Op::Add:
            case Op::Mul: {
                const Tensor& a = arg_val(0);
                const Tensor& b = arg_val(1);
                const auto plan = detail::classify_broadcast(a.dims, b.dims);
                const Tensor& full = (plan.which == 1) ? b : a;
                const std::size_t hw =
                    full.dims.size() == 3 ? full.dims[1] * full.dims[2] : 0;
                const std::size_t w = full.dims.size() == 3 ? full.dims[2] : 0;
                for (int side = 0; side < 2; ++side) {
                    if (!arg_needs(side)) continue;
                    Tensor& gs = slot(side);
                    const bool side_is_small =
                        (plan.which == 1 && side == 0) || (plan.which == 2 && side == 1);
                    const Tensor& other = side == 0 ? b : a;
                    const bool other_is_small = plan.which != 0 && !side_is_small;
                    for (std::size_t i = 0; i < g.data.size(); ++i) {
                        double contrib = g.data[i];
                        if (n.op == Op::Mul) {
                            const std::size_t oi =
                                other_is_small
                                    ? detail::bcast_index(plan.pattern, i, hw, w)
                                    : i;
                            contrib *= other.data[oi];
                        }
                        const std::size_t si =
                            side_is_small ? detail::bcast_index(plan.pattern, i, hw, w) : i;
                        gs.data[si] += contrib;
                    }
                }
                return;
            }
            case Op::Scale: {
                if (!arg_needs(0)) return;
                Tensor& gs = slot(0);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    gs.data[i] += n.alpha * g.data[i];
                return;
            }
            case Op::MatVec: {
                const Tensor& m = arg_val(0);
                const Tensor& v = arg_val(1);
                const std::size_t r = m.dims[0], c = m.dims[1];
                if (arg_needs(1)) {
                    Tensor& gv = slot(1);
                    for (std::size_t i = 0; i < r; ++i) {
                        const double gi = g.data[i];
                        const double* row = &m.data[i * c];
                        for (std::size_t j = 0; j < c; ++j) gv.data[j] += gi * row[j];
                    }
                }
                if (arg_needs(0)) {
                    Tensor& gm = slot(0);
                    for (std::size_t i = 0; i < r; ++i) {
                        const double gi = g.data[i];
                        double* row = &gm.data[i * c];
                        for (std::size_t j = 0; j < c; ++j) row[j] += gi * v.data[j];
                    }
                }
                return;
            }
            case Op::Conv2d: {
                const Tensor& k = arg_val(1);
                if (arg_needs(0)) {
                    Tensor gi = conv2d_input_grad(g, k);
                    Tensor& gs = slot(0);
                    for (std::size_t i = 0; i < gs.data.size(); ++i)
                        gs.data[i] += gi.data[i];
                }
                if (arg_needs(1)) {
                    Tensor gk = conv2d_kernel_grad(arg_val(0), g, k.dims[2], k.dims[3]);
                    Tensor& gs = slot(1);
                    for (std::size_t i = 0; i < gs.data.size(); ++i)
                        gs.data[i] += gk.data[i];
                }
                return;
            }
            case Op::Upsample2x: {
                if (!arg_needs(0)) return;
                Tensor gi = upsample2x_adjoint(g);
                Tensor& gs = slot(0);
                for (std::size_t i = 0; i < gs.data.size(); ++i) gs.data[i] += gi.data[i];
                return;
            }
            case Op::LeakyRelu: {
                if (!arg_needs(0)) return;
                const Tensor& x = arg_val(0);
                Tensor& gs = slot(0);
                // left-derivative at 0: use the negative-side slope
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    gs.data[i] += g.data[i] * (x.data[i] > 0.0 ? 1.0 : n.alpha);
                return;
            }
            case Op::Sigmoid: {
                if (!arg_needs(0)) return;
                const Tensor& y = values[static_cast<std::size_t>(id)];
                Tensor& gs = slot(0);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    gs.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
                return;
            }
            case Op::Sum: {
                if (!arg_needs(0)) return;
                Tensor& gs = slot(0);
                const double gv = g.data[0];
                for (double& v : gs.data) v += gv;
                return;
            }
            case Op::PowAbs: {
                if (!arg_needs(0)) return;
                const Tensor& x = arg_val(0);
                Tensor& gs = slot(0);
                if (n.p == 2) {
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        gs.data[i] += g.data[i] * 2.0 * x.data[i];
                } else {
                    // d|x|/dx = sign(x), 0 at the kink
                    for (std::size_t i = 0; i < g.data.size(); ++i) {
                        const double s =
                            x.data[i] > 0.0 ? 1.0 : (x.data[i] < 0.0 ? -1.0 : 0.0);
                        gs.data[i] += g.data[i] * s;
                    }
                }
                return;
            }
            case Op::Resample: {
                if (!arg_needs(0)) return;
                Tensor gi = n.resampler->adjoint_tensor(g);
                Tensor& gs = slot(0);
                for (std::size_t i = 0; i < gs.data.size(); ++i) gs.data[i] += gi.data[i];
                return;
            }
            case Op::Cross: {
                // d/dv_i = 2 * (k * v_i - sum_j v_j)
                const double gv = g.data[0];
                const std::size_t k = n.args.size();
                const std::size_t d = arg_val(0).data.size();
                std::vector<double> total(d, 0.0);
                for (std::size_t i = 0; i < k; ++i) {
                    const Tensor& vi = arg_val(static_cast<int>(i));
                    for (std::size_t t = 0; t < d; ++t) total[t] += vi.data[t];
                }
                for (std::size_t i = 0; i < k; ++i) {
                    if (!arg_needs(static_cast<int>(i))) continue;
                    const Tensor& vi = arg_val(static_cast<int>(i));
                    Tensor& gs = slot(static_cast<int>(i));
                    for (std::size_t t = 0; t < d; ++t)
                        gs.data[t] += gv * 2.0 * (static_cast<double>(k) * vi.data[t] -
                                                  total[t]);
                }
                return;
            }
            case Op::GeoCross: {
                const double gv = g.data[0];
                for (std::size_t i = 0; i < n.args.size(); ++i)
                    for (std::size_t j = i + 1; j < n.args.size(); ++j)
                        geocross_pair_backward(arg_val(static_cast<int>(i)),
                                               arg_val(static_cast<int>(j)),
                                               arg_needs(static_cast<int>(i))
                                                   ? &slot(static_cast<int>(i))
                                                   : nullptr,
                                               arg_needs(static_cast<int>(j))
                                                   ? &slot(static_cast<int>(j))
                                                   : nullptr,
                                               gv);
                return;
            }
        }
        throw std::logic_error(std::string("gradient: unsupported primitive ") + op_name(n.op));
    }

    // For unit a^, b^ with c = <a^,b^>, the rejection r_a = b^ - c a^ has norm
    // sin(theta), and grad_a theta^2 = -2 theta / (|r_a| |a|) * r_a.
    static void geocross_pair_backward(const Tensor& a, const Tensor& b, Tensor* ga,
                                       Tensor* gb, double gv) {
        const std::size_t d = a.data.size();
        const double na = norm2(a), nb = norm2(b);
        double c = 0.0;
        for (std::size_t t = 0; t < d; ++t) c += a.data[t] * b.data[t];
        c /= na * nb;
        double s2 = 0.0;
        std::vector<double> ra(d), rb(d);
        for (std::size_t t = 0; t < d; ++t) {
            ra[t] = b.data[t] / nb - c * (a.data[t] / na);
            rb[t] = a.data[t] / na - c * (b.data[t] / nb);
            s2 += ra[t] * ra[t];
        }
        const double s = std::sqrt(s2);
        const double theta = std::atan2(s, c);
        // theta/s -> 1 as the angle closes; at an exact antipode the descent
        // direction is undefined, so that pair contributes nothing.
        const double coef = (s > 1e-12) ? theta / s : (c > 0.0 ? 1.0 : 0.0);
        if (ga)
            for (std::size_t t = 0; t < d; ++t)
                ga->data[t] += gv * (-2.0 * coef / na) * ra[t];
        if (gb)
            for (std::size_t t = 0; t < d; ++t)
                gb->data[t] += gv * (-2.0 * coef / nb) * rb[t];
    }

    std::vector<Node> nodes_;
    int output_ = -1;
};

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct FdReport {
    std::map<std::string, double> max_rel_err;  // per trainable input
    double worst = 0.0;
    bool pass = false;
};

/// Compares `provided` gradients against central differences of the graph's
/// scalar output. Relative error uses max(|analytic|, |numeric|, 1e-2) as the
/// denominator so near-zero entries are judged on an absolute scale.
inline FdReport fd_compare(const Graph& graph, const Bindings& bindings,
                           const std::map<std::string, Tensor>& provided, double step,
                           double tol) {
    if (step <= 0.0) throw std::invalid_argument("fd_compare: step must be > 0");
    FdReport report;
    Bindings work = bindings;
    std::vector<Tensor> values;
    for (const auto& [name, grad] : provided) {
        Tensor& x = work.at(name);
        double worst = 0.0;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double saved = x.data[i];
            x.data[i] = saved + step;
            const double fp = graph.forward_scalar(work, values);
            x.data[i] = saved - step;
            const double fm = graph.forward_scalar(work, values);
            x.data[i] = saved;
            const double fd = (fp - fm) / (2.0 * step);
            const double an = grad.data[i];
            const double denom = std::max({std::abs(an), std::abs(fd), 1e-2});
            worst = std::max(worst, std::abs(an - fd) / denom);
        }
        report.max_rel_err[name] = worst;
        report.worst = std::max(report.worst, worst);
    }
    report.pass = report.worst <= tol;
    return report;
}

/// Runs reverse mode, then checks it against central differences.
inline FdReport finite_difference_check(const Graph& graph, const Bindings& bindings,
                                        double step, double tol) {
    return fd_compare(graph, bindings, graph.gradient(bindings), step, tol);
}

}  // namespace pulse
