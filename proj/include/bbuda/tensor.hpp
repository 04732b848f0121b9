#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bbuda/error.hpp"
#include "bbuda/rng.hpp"

namespace bbuda {

using Shape = std::vector<size_t>;

constexpr size_t kMaxRank = 4;

inline size_t numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream o;
    o << "[";
    for (size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
    o << "]";
    return o.str();
}

class Graph;

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;   // allocated lazily, same length as data
    bool requires_grad = false;
    bool from_op = false;      // produced by a recorded operation (non-leaf)
    Graph* graph = nullptr;
    std::optional<double> wide;  // 64-bit value carried by size-1 reductions

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
    bool needs_grad() const { return requires_grad || from_op; }
};

// Dense float tensor with value semantics over a shared buffer. Constants
// (the default) never accumulate gradient; parameters are created through
// Graph::parameter and carry a pointer to their tape.
class Tensor {
 public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0f); }

    static Tensor full(Shape shape, float value) {
        check_rank(shape);
        auto impl = std::make_shared<TensorImpl>();
        impl->data.assign(numel(shape), value);
        impl->shape = std::move(shape);
        return Tensor(std::move(impl));
    }

    static Tensor from_data(Shape shape, std::vector<float> data) {
        check_rank(shape);
        if (numel(shape) != data.size())
            throw shape_error("tensor: shape " + shape_str(shape) + " wants " +
                              std::to_string(numel(shape)) + " values, got " + std::to_string(data.size()));
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = std::move(shape);
        impl->data = std::move(data);
        return Tensor(std::move(impl));
    }

    static Tensor scalar(float v) { return from_data({1}, {v}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    size_t rank() const { return impl_->shape.size(); }
    size_t size() const { return impl_->data.size(); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& values() { return impl_->data; }
    const std::vector<float>& values() const { return impl_->data; }

    // Scalar value; reductions carry a 64-bit accumulation which is preferred.
    double item() const {
        if (size() != 1) throw value_error("item: tensor is not a scalar, shape " + shape_str(shape()));
        return impl_->wide ? *impl_->wide : static_cast<double>(impl_->data[0]);
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Graph* graph() const { return impl_ ? impl_->graph : nullptr; }

    bool has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
    const std::vector<float>& grad() const {
        if (!has_grad()) throw value_error("grad: no gradient allocated");
        return impl_->grad;
    }
    void zero_grad() {
        if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }

    // Constant copy, disconnected from any graph.
    Tensor detach() const {
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = impl_->shape;
        impl->data = impl_->data;
        impl->wide = impl_->wide;
        return Tensor(std::move(impl));
    }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    static void check_rank(const Shape& s) {
        if (s.empty() || s.size() > kMaxRank)
            throw shape_error("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got " + shape_str(s));
        for (size_t d : s)
            if (d == 0) throw shape_error("tensor extents must be positive, got " + shape_str(s));
    }

    std::shared_ptr<TensorImpl> impl_;
    friend class Graph;
};

// Reverse-mode tape. Nodes are recorded in construction order; backward
// visits them in exact reverse order, accumulating gradients additively.
// Single-threaded by contract: one graph, one thread.
class Graph {
 public:
    Tensor parameter(Shape shape, std::vector<float> data) {
        Tensor t = Tensor::from_data(std::move(shape), std::move(data));
        register_parameter(t);
        return t;
    }

    void register_parameter(Tensor& t) {
        t.impl_->requires_grad = true;
        t.impl_->graph = this;
        params_.push_back(t.impl_);
    }

    void record(std::shared_ptr<TensorImpl> out, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(out), std::move(backward)});
    }

    void backward(const Tensor& loss) {
        if (!loss.defined()) throw value_error("backward: undefined loss tensor");
        if (loss.size() != 1)
            throw value_error("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
        if (nodes_.empty()) throw value_error("backward: graph is empty");
        if (loss.impl_->graph != this) throw value_error("backward: loss does not belong to this graph");
        // Intermediate grads reset per pass; leaf (parameter) grads accumulate.
        for (auto& n : nodes_) {
            n.out->ensure_grad();
            std::fill(n.out->grad.begin(), n.out->grad.end(), 0.0f);
        }
        loss.impl_->ensure_grad();
        loss.impl_->grad[0] += 1.0f;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
    }

    void clear_tape() { nodes_.clear(); }

    size_t tape_size() const { return nodes_.size(); }
    size_t parameter_count() const { return params_.size(); }

 private:
    struct Node {
        std::shared_ptr<TensorImpl> out;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
    std::vector<std::shared_ptr<TensorImpl>> params_;
};

// ---------------------------------------------------------------------------
// op plumbing
// ---------------------------------------------------------------------------

namespace detail {

inline Graph* op_graph(const Tensor& a) { return a.graph(); }

inline Graph* op_graph(const Tensor& a, const Tensor& b) {
    Graph* ga = a.graph();
    Graph* gb = b.graph();
    if (ga && gb && ga != gb) throw value_error("op: operands belong to different graphs");
    return ga ? ga : gb;
}

inline void attach(Tensor& out, Graph* g, std::function<void()> back) {
    out.impl()->from_op = true;
    out.impl()->graph = g;
    g->record(out.impl(), std::move(back));
}

// Right-aligned broadcast: pad the shorter shape with leading 1s; each dim
// must match or be 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* opname) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw shape_error(std::string(opname) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                              " are not broadcast-compatible");
        out[i] = std::max(da, db);
    }
    return out;
}

struct Bcast {
    size_t dim[4];     // output extents, padded to rank 4
    size_t as[4];      // operand strides, 0 on broadcast dims
    size_t bs[4];
    size_t out_size;
    bool same_shape;
};

inline void padded_strides(const Shape& s, const size_t odim[4], size_t out[4]) {
    size_t r = s.size();
    size_t strides[4] = {0, 0, 0, 0};
    size_t acc = 1;
    for (size_t i = r; i-- > 0;) {
        strides[i] = acc;
        acc *= s[i];
    }
    for (size_t i = 0; i < 4; ++i) out[i] = 0;
    size_t off = 4 - r;
    for (size_t i = 0; i < r; ++i) {
        // dims of extent 1 broadcast against a larger output extent
        out[off + i] = (s[i] == 1 && odim[off + i] != 1) ? 0 : strides[i];
    }
}

inline Bcast make_bcast(const Shape& a, const Shape& b, const Shape& o) {
    Bcast bc{};
    size_t off = 4 - o.size();
    for (size_t i = 0; i < 4; ++i) bc.dim[i] = 1;
    for (size_t i = 0; i < o.size(); ++i) bc.dim[off + i] = o[i];
    padded_strides(a, bc.dim, bc.as);
    padded_strides(b, bc.dim, bc.bs);
    bc.out_size = numel(o);
    bc.same_shape = (a == b);
    return bc;
}

template <class F>
inline void bcast_forward(const Bcast& bc, const float* A, const float* B, float* O, F f) {
    if (bc.same_shape) {
        for (size_t i = 0; i < bc.out_size; ++i) O[i] = f(A[i], B[i]);
        return;
    }
    size_t o = 0;
    for (size_t i0 = 0; i0 < bc.dim[0]; ++i0)
        for (size_t i1 = 0; i1 < bc.dim[1]; ++i1)
            for (size_t i2 = 0; i2 < bc.dim[2]; ++i2) {
                const float* ap = A + i0 * bc.as[0] + i1 * bc.as[1] + i2 * bc.as[2];
                const float* bp = B + i0 * bc.bs[0] + i1 * bc.bs[1] + i2 * bc.bs[2];
                const size_t a3 = bc.as[3], b3 = bc.bs[3];
                for (size_t i3 = 0; i3 < bc.dim[3]; ++i3) O[o++] = f(ap[i3 * a3], bp[i3 * b3]);
            }
}

// Accumulating backward sweep; broadcast dims reduce naturally because many
// output positions map onto the same operand offset.
template <class DA, class DB>
inline void bcast_backward(const Bcast& bc, const float* A, const float* B, const float* G,
                           float* GA, float* GB, DA da, DB db) {
    if (bc.same_shape) {
        for (size_t i = 0; i < bc.out_size; ++i) {
            float g = G[i];
            if (GA) GA[i] += da(g, A[i], B[i]);
            if (GB) GB[i] += db(g, A[i], B[i]);
        }
        return;
    }
    size_t o = 0;
    for (size_t i0 = 0; i0 < bc.dim[0]; ++i0)
        for (size_t i1 = 0; i1 < bc.dim[1]; ++i1)
            for (size_t i2 = 0; i2 < bc.dim[2]; ++i2) {
                size_t abase = i0 * bc.as[0] + i1 * bc.as[1] + i2 * bc.as[2];
                size_t bbase = i0 * bc.bs[0] + i1 * bc.bs[1] + i2 * bc.bs[2];
                for (size_t i3 = 0; i3 < bc.dim[3]; ++i3, ++o) {
                    size_t ai = abase + i3 * bc.as[3];
                    size_t bi = bbase + i3 * bc.bs[3];
                    float g = G[o];
                    if (GA) GA[ai] += da(g, A[ai], B[bi]);
                    if (GB) GB[bi] += db(g, A[ai], B[bi]);
                }
            }
}

template <class F, class DA, class DB>
inline Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
    Shape os = broadcast_shape(a.shape(), b.shape(), name);
    Bcast bc = make_bcast(a.shape(), b.shape(), os);
    Tensor out = Tensor::zeros(os);
    bcast_forward(bc, a.data(), b.data(), out.data(), f);
    if (out.size() == 1 && a.size() == 1 && b.size() == 1) {
        double aw = a.impl()->wide ? *a.impl()->wide : static_cast<double>(a.data()[0]);
        double bw = b.impl()->wide ? *b.impl()->wide : static_cast<double>(b.data()[0]);
        out.impl()->wide = f(aw, bw);
    }
    Graph* g = op_graph(a, b);
    bool need_a = a.impl()->needs_grad();
    bool need_b = b.impl()->needs_grad();
    if (g && (need_a || need_b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        attach(out, g, [bc, ai, bi, oi, need_a, need_b, da, db] {
            if (need_a) ai->ensure_grad();
            if (need_b) bi->ensure_grad();
            bcast_backward(bc, ai->data.data(), bi->data.data(), oi->grad.data(),
                           need_a ? ai->grad.data() : nullptr, need_b ? bi->grad.data() : nullptr, da, db);
        });
    }
    return out;
}

template <class F, class DF>
inline Tensor unary_op(const Tensor& x, F f, DF dfdx_from_in_out) {
    Tensor out = Tensor::zeros(x.shape());
    const float* X = x.data();
    float* O = out.data();
    size_t n = x.size();
    for (size_t i = 0; i < n; ++i) O[i] = f(X[i]);
    Graph* g = op_graph(x);
    if (g && x.impl()->needs_grad()) {
        auto xi = x.impl(), oi = out.impl();
        attach(out, g, [xi, oi, dfdx_from_in_out] {
            xi->ensure_grad();
            size_t n = xi->data.size();
            for (size_t i = 0; i < n; ++i)
                xi->grad[i] += oi->grad[i] * dfdx_from_in_out(xi->data[i], oi->data[i]);
        });
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic (broadcasting over leading axes, numpy-style)
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "add", [](auto x, auto y) { return x + y; },
                             [](float g, float, float) { return g; },
                             [](float g, float, float) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "sub", [](auto x, auto y) { return x - y; },
                             [](float g, float, float) { return g; },
                             [](float g, float, float) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "mul", [](auto x, auto y) { return x * y; },
                             [](float g, float, float bv) { return g * bv; },
                             [](float g, float av, float) { return g * av; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "div", [](auto x, auto y) { return x / y; },
                             [](float g, float, float bv) { return g / bv; },
                             [](float g, float av, float bv) { return -g * av / (bv * bv); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor scale(const Tensor& x, float c) {
    Tensor out = detail::unary_op(x, [c](float v) { return v * c; },
                                  [c](float, float) { return c; });
    if (x.size() == 1 && x.impl()->wide) out.impl()->wide = *x.impl()->wide * static_cast<double>(c);
    return out;
}

inline Tensor add_scalar(const Tensor& x, float c) {
    Tensor out = detail::unary_op(x, [c](float v) { return v + c; },
                                  [](float, float) { return 1.0f; });
    if (x.size() == 1 && x.impl()->wide) out.impl()->wide = *x.impl()->wide + static_cast<double>(c);
    return out;
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0f); }

// ---------------------------------------------------------------------------
// unary math
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    return detail::unary_op(x, [](float v) { return v > 0.0f ? v : 0.0f; },
                            [](float xv, float) { return xv > 0.0f ? 1.0f : 0.0f; });
}

inline Tensor clamp_min(const Tensor& x, float lo) {
    return detail::unary_op(x, [lo](float v) { return v < lo ? lo : v; },
                            [lo](float xv, float) { return xv >= lo ? 1.0f : 0.0f; });
}

inline Tensor log(const Tensor& x) {
    return detail::unary_op(x, [](float v) { return std::log(v); },
                            [](float xv, float) { return 1.0f / xv; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary_op(x, [](float v) { return std::exp(v); },
                            [](float, float ov) { return ov; });
}

inline Tensor sqrt(const Tensor& x) {
    return detail::unary_op(x, [](float v) { return std::sqrt(v); },
                            [](float, float ov) { return 0.5f / ov; });
}

// ---------------------------------------------------------------------------
// reductions (64-bit accumulation)
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    const float* X = x.data();
    for (size_t i = 0; i < x.size(); ++i) acc += X[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    out.impl()->wide = acc;
    Graph* g = detail::op_graph(x);
    if (g && x.impl()->needs_grad()) {
        auto xi = x.impl();
        auto oi = out.impl();
        detail::attach(out, g, [xi, oi] {
            xi->ensure_grad();
            float go = oi->grad[0];
            for (auto& gv : xi->grad) gv += go;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& x) {
    double acc = 0.0;
    const float* X = x.data();
    size_t n = x.size();
    for (size_t i = 0; i < n; ++i) acc += X[i];
    acc /= static_cast<double>(n);
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    out.impl()->wide = acc;
    Graph* g = detail::op_graph(x);
    if (g && x.impl()->needs_grad()) {
        auto xi = x.impl();
        auto oi = out.impl();
        float inv = 1.0f / static_cast<float>(n);
        detail::attach(out, g, [xi, oi, inv] {
            xi->ensure_grad();
            float go = oi->grad[0] * inv;
            for (auto& gv : xi->grad) gv += go;
        });
    }
    return out;
}

// Per-channel mean of a [N,C,H,W] tensor -> [1,C,1,1]; the batchnorm reduce.
inline Tensor mean_per_channel(const Tensor& x) {
    if (x.rank() != 4) throw shape_error("mean_per_channel: want rank-4 input, got " + shape_str(x.shape()));
    size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    size_t hw = H * W, chw = C * hw;
    std::vector<float> out(C);
    double inv = 1.0 / static_cast<double>(N * hw);
    const float* X = x.data();
    for (size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (size_t n = 0; n < N; ++n) {
            const float* p = X + n * chw + c * hw;
            for (size_t i = 0; i < hw; ++i) acc += p[i];
        }
        out[c] = static_cast<float>(acc * inv);
    }
    Tensor t = Tensor::from_data({1, C, 1, 1}, std::move(out));
    Graph* g = detail::op_graph(x);
    if (g && x.impl()->needs_grad()) {
        auto xi = x.impl();
        auto oi = t.impl();
        float finv = static_cast<float>(inv);
        detail::attach(t, g, [xi, oi, N, C, hw, chw, finv] {
            xi->ensure_grad();
            for (size_t c = 0; c < C; ++c) {
                float go = oi->grad[c] * finv;
                for (size_t n = 0; n < N; ++n) {
                    float* p = xi->grad.data() + n * chw + c * hw;
                    for (size_t i = 0; i < hw; ++i) p[i] += go;
                }
            }
        });
    }
    return t;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor out = Tensor::from_data(std::move(shape), x.values());
    Graph* g = detail::op_graph(x);
    if (g && x.impl()->needs_grad()) {
        auto xi = x.impl();
        auto oi = out.impl();
        detail::attach(out, g, [xi, oi] {
            xi->ensure_grad();
            for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4)
        throw shape_error("concat_channels: want rank-4 inputs, got " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw shape_error("concat_channels: mismatched N/H/W between " + shape_str(sa) + " and " + shape_str(sb));
    size_t N = sa[0], Ca = sa[1], Cb = sb[1], hw = sa[2] * sa[3];
    Tensor out = Tensor::zeros({N, Ca + Cb, sa[2], sa[3]});
    float* O = out.data();
    for (size_t n = 0; n < N; ++n) {
        std::memcpy(O + n * (Ca + Cb) * hw, a.data() + n * Ca * hw, Ca * hw * sizeof(float));
        std::memcpy(O + n * (Ca + Cb) * hw + Ca * hw, b.data() + n * Cb * hw, Cb * hw * sizeof(float));
    }
    Graph* g = detail::op_graph(a, b);
    bool need_a = a.impl()->needs_grad();
    bool need_b = b.impl()->needs_grad();
    if (g && (need_a || need_b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::attach(out, g, [ai, bi, oi, N, Ca, Cb, hw, need_a, need_b] {
            if (need_a) ai->ensure_grad();
            if (need_b) bi->ensure_grad();
            for (size_t n = 0; n < N; ++n) {
                const float* go = oi->grad.data() + n * (Ca + Cb) * hw;
                if (need_a) {
                    float* ga = ai->grad.data() + n * Ca * hw;
                    for (size_t i = 0; i < Ca * hw; ++i) ga[i] += go[i];
                }
                if (need_b) {
                    float* gb = bi->grad.data() + n * Cb * hw;
                    for (size_t i = 0; i < Cb * hw; ++i) gb[i] += go[Ca * hw + i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution / pooling / upsampling
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
    size_t N, Ci, H, W, Co, kh, kw, OH, OW, stride, pad;
};

inline ConvGeom conv_geometry(const Shape& in, const Shape& k, size_t stride, size_t pad) {
    if (in.size() != 4) throw shape_error("conv2d: want rank-4 input, got " + shape_str(in));
    if (k.size() != 4) throw shape_error("conv2d: want rank-4 kernel, got " + shape_str(k));
    if (in[1] != k[1])
        throw shape_error("conv2d: input channels " + shape_str(in) + " do not match kernel " + shape_str(k));
    if (stride == 0) throw geometry_error("conv2d: stride must be >= 1");
    ConvGeom g{in[0], in[1], in[2], in[3], k[0], k[2], k[3], 0, 0, stride, pad};
    size_t ph = g.H + 2 * pad, pw = g.W + 2 * pad;
    if (g.kh == 0 || g.kw == 0 || g.kh > ph || g.kw > pw)
        throw geometry_error("conv2d: kernel " + shape_str(k) + " exceeds padded input " + shape_str(in) +
                             " (pad " + std::to_string(pad) + ")");
    g.OH = (ph - g.kh) / stride + 1;
    g.OW = (pw - g.kw) / stride + 1;
    return g;
}

// Valid output range [lo, hi) such that o*stride + f - pad lands in [0, extent).
inline void conv_span(size_t f, size_t pad, size_t stride, size_t extent, size_t out_extent,
                      size_t& lo, size_t& hi) {
    lo = (pad > f) ? (pad - f + stride - 1) / stride : 0;
    size_t last = extent - 1 + pad;
    hi = (f > last) ? 0 : std::min(out_extent, (last - f) / stride + 1);
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, size_t stride = 1, size_t pad = 0) {
    auto g = detail::conv_geometry(input.shape(), kernel.shape(), stride, pad);
    Tensor out = Tensor::zeros({g.N, g.Co, g.OH, g.OW});
    const float* I = input.data();
    const float* K = kernel.data();
    float* O = out.data();
    const size_t ihw = g.H * g.W, ohw = g.OH * g.OW, khw = g.kh * g.kw;

    for (size_t n = 0; n < g.N; ++n)
        for (size_t co = 0; co < g.Co; ++co) {
            float* op = O + (n * g.Co + co) * ohw;
            for (size_t ci = 0; ci < g.Ci; ++ci) {
                const float* ip = I + (n * g.Ci + ci) * ihw;
                const float* kp = K + (co * g.Ci + ci) * khw;
                for (size_t fh = 0; fh < g.kh; ++fh) {
                    size_t oh_lo, oh_hi;
                    detail::conv_span(fh, g.pad, g.stride, g.H, g.OH, oh_lo, oh_hi);
                    for (size_t fw = 0; fw < g.kw; ++fw) {
                        float w = kp[fh * g.kw + fw];
                        size_t ow_lo, ow_hi;
                        detail::conv_span(fw, g.pad, g.stride, g.W, g.OW, ow_lo, ow_hi);
                        const ptrdiff_t wshift = static_cast<ptrdiff_t>(fw) - static_cast<ptrdiff_t>(g.pad);
                        for (size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const float* irow = ip + (oh * g.stride + fh - g.pad) * g.W;
                            float* orow = op + oh * g.OW;
                            if (g.stride == 1) {
                                for (size_t ow = ow_lo; ow < ow_hi; ++ow)
                                    orow[ow] += w * irow[static_cast<ptrdiff_t>(ow) + wshift];
                            } else {
                                for (size_t ow = ow_lo; ow < ow_hi; ++ow)
                                    orow[ow] += w * irow[static_cast<ptrdiff_t>(ow * g.stride) + wshift];
                            }
                        }
                    }
                }
            }
        }

    Graph* gr = detail::op_graph(input, kernel);
    bool need_in = input.impl()->needs_grad();
    bool need_k = kernel.impl()->needs_grad();
    if (gr && (need_in || need_k)) {
        auto ii = input.impl(), ki = kernel.impl(), oi = out.impl();
        detail::attach(out, gr, [g, ii, ki, oi, need_in, need_k, ihw, ohw, khw] {
            const float* I = ii->data.data();
            const float* K = ki->data.data();
            const float* GO = oi->grad.data();
            if (need_in) ii->ensure_grad();
            if (need_k) ki->ensure_grad();
            float* GI = need_in ? ii->grad.data() : nullptr;
            float* GK = need_k ? ki->grad.data() : nullptr;
            for (size_t n = 0; n < g.N; ++n)
                for (size_t co = 0; co < g.Co; ++co) {
                    const float* gop = GO + (n * g.Co + co) * ohw;
                    for (size_t ci = 0; ci < g.Ci; ++ci) {
                        const size_t ibase = (n * g.Ci + ci) * ihw;
                        const size_t kbase = (co * g.Ci + ci) * khw;
                        for (size_t fh = 0; fh < g.kh; ++fh) {
                            size_t oh_lo, oh_hi;
                            detail::conv_span(fh, g.pad, g.stride, g.H, g.OH, oh_lo, oh_hi);
                            for (size_t fw = 0; fw < g.kw; ++fw) {
                                size_t ow_lo, ow_hi;
                                detail::conv_span(fw, g.pad, g.stride, g.W, g.OW, ow_lo, ow_hi);
                                const ptrdiff_t wshift =
                                    static_cast<ptrdiff_t>(fw) - static_cast<ptrdiff_t>(g.pad);
                                float w = K[kbase + fh * g.kw + fw];
                                float kacc = 0.0f;
                                for (size_t oh = oh_lo; oh < oh_hi; ++oh) {
                                    size_t irow_off = ibase + (oh * g.stride + fh - g.pad) * g.W;
                                    const float* gorow = gop + oh * g.OW;
                                    if (g.stride == 1) {
                                        const float* irow = I + irow_off;
                                        if (GI) {
                                            float* girow = GI + irow_off;
                                            for (size_t ow = ow_lo; ow < ow_hi; ++ow)
                                                girow[static_cast<ptrdiff_t>(ow) + wshift] += w * gorow[ow];
                                        }
                                        if (GK)
                                            for (size_t ow = ow_lo; ow < ow_hi; ++ow)
                                                kacc += irow[static_cast<ptrdiff_t>(ow) + wshift] * gorow[ow];
                                    } else {
                                        for (size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                            ptrdiff_t ipos = static_cast<ptrdiff_t>(irow_off + ow * g.stride) + wshift;
                                            if (GI) GI[ipos] += w * gorow[ow];
                                            if (GK) kacc += I[ipos] * gorow[ow];
                                        }
                                    }
                                }
                                if (GK) GK[kbase + fh * g.kw + fw] += kacc;
                            }
                        }
                    }
                }
        });
    }
    return out;
}

inline Tensor maxpool2d(const Tensor& x, size_t factor) {
    if (x.rank() != 4) throw shape_error("maxpool2d: want rank-4 input, got " + shape_str(x.shape()));
    if (factor == 0) throw geometry_error("maxpool2d: factor must be >= 1");
    size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (H % factor != 0 || W % factor != 0)
        throw geometry_error("maxpool2d: spatial extents " + shape_str(x.shape()) +
                             " not divisible by factor " + std::to_string(factor));
    size_t OH = H / factor, OW = W / factor;
    Tensor out = Tensor::zeros({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<uint32_t>>(N * C * OH * OW);
    const float* X = x.data();
    float* O = out.data();
    size_t o = 0;
    for (size_t nc = 0; nc < N * C; ++nc) {
        const float* plane = X + nc * H * W;
        for (size_t oh = 0; oh < OH; ++oh)
            for (size_t ow = 0; ow < OW; ++ow, ++o) {
                size_t best = oh * factor * W + ow * factor;
                float bv = plane[best];
                for (size_t dh = 0; dh < factor; ++dh)
                    for (size_t dw = 0; dw < factor; ++dw) {
                        size_t idx = (oh * factor + dh) * W + (ow * factor + dw);
                        if (plane[idx] > bv) {  // ties keep the first (row-major) hit
                            bv = plane[idx];
                            best = idx;
                        }
                    }
                O[o] = bv;
                (*argmax)[o] = static_cast<uint32_t>(best);
            }
    }
    Graph* g = detail::op_graph(x);
    if (g && x.impl()->needs_grad()) {
        auto xi = x.impl(), oi = out.impl();
        detail::attach(out, g, [xi, oi, argmax, N, C, H, W, OH, OW] {
            xi->ensure_grad();
            size_t o = 0;
            for (size_t nc = 0; nc < N * C; ++nc) {
                float* gplane = xi->grad.data() + nc * H * W;
                for (size_t i = 0; i < OH * OW; ++i, ++o) gplane[(*argmax)[o]] += oi->grad[o];
            }
        });
    }
    return out;
}

inline Tensor upsample_nearest(const Tensor& x, size_t factor) {
    if (x.rank() != 4) throw shape_error("upsample_nearest: want rank-4 input, got " + shape_str(x.shape()));
    if (factor == 0) throw geometry_error("upsample_nearest: factor must be >= 1");
    size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    size_t OH = H * factor, OW = W * factor;
    Tensor out = Tensor::zeros({N, C, OH, OW});
    const float* X = x.data();
    float* O = out.data();
    for (size_t nc = 0; nc < N * C; ++nc) {
        const float* plane = X + nc * H * W;
        float* oplane = O + nc * OH * OW;
        for (size_t oh = 0; oh < OH; ++oh) {
            const float* row = plane + (oh / factor) * W;
            float* orow = oplane + oh * OW;
            for (size_t ow = 0; ow < OW; ++ow) orow[ow] = row[ow / factor];
        }
    }
    Graph* g = detail::op_graph(x);
    if (g && x.impl()->needs_grad()) {
        auto xi = x.impl(), oi = out.impl();
        detail::attach(out, g, [xi, oi, N, C, H, W, OH, OW, factor] {
            xi->ensure_grad();
            for (size_t nc = 0; nc < N * C; ++nc) {
                float* gplane = xi->grad.data() + nc * H * W;
                const float* goplane = oi->grad.data() + nc * OH * OW;
                for (size_t oh = 0; oh < OH; ++oh) {
                    float* grow = gplane + (oh / factor) * W;
                    const float* gorow = goplane + oh * OW;
                    for (size_t ow = 0; ow < OW; ++ow) grow[ow / factor] += gorow[ow];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dropout / batchnorm / softmax
// ---------------------------------------------------------------------------

// Inverted dropout: identity when not training. The mask is drawn from the
// given seed only, so a fixed seed reproduces the exact mask.
inline Tensor dropout(const Tensor& x, float rate, bool training, uint64_t seed) {
    if (rate < 0.0f || rate >= 1.0f)
        throw value_error("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0f) return x;
    Rng rng(seed);
    auto mask = std::make_shared<std::vector<float>>(x.size());
    float keep_scale = 1.0f / (1.0f - rate);
    for (auto& m : *mask) m = rng.uniform() < rate ? 0.0f : keep_scale;
    Tensor out = Tensor::zeros(x.shape());
    const float* X = x.data();
    float* O = out.data();
    for (size_t i = 0; i < x.size(); ++i) O[i] = X[i] * (*mask)[i];
    Graph* g = detail::op_graph(x);
    if (g && x.impl()->needs_grad()) {
        auto xi = x.impl(), oi = out.impl();
        detail::attach(out, g, [xi, oi, mask] {
            xi->ensure_grad();
            for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i] * (*mask)[i];
        });
    }
    return out;
}

// Batch normalization over [N,C,H,W]. Training mode normalizes with batch
// statistics (biased variance) and updates the running buffers in place by
// EMA; evaluation mode reads the running buffers and has no side effects.
inline Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          Tensor& running_mean, Tensor& running_var, bool training,
                          float momentum = 0.1f, float eps = 1e-5f) {
    if (x.rank() != 4) throw shape_error("batchnorm2d: want rank-4 input, got " + shape_str(x.shape()));
    size_t C = x.shape()[1];
    if (gamma.size() != C || beta.size() != C)
        throw shape_error("batchnorm2d: gamma/beta length " + std::to_string(gamma.size()) + "/" +
                          std::to_string(beta.size()) + " does not match channel count " + std::to_string(C));
    if (running_mean.size() != C || running_var.size() != C)
        throw shape_error("batchnorm2d: running stats length does not match channel count " + std::to_string(C));

    Tensor gamma_b = reshape(gamma, {1, C, 1, 1});
    Tensor beta_b = reshape(beta, {1, C, 1, 1});

    if (training) {
        Tensor mu = mean_per_channel(x);
        Tensor xc = sub(x, mu);
        Tensor var = mean_per_channel(mul(xc, xc));
        for (size_t c = 0; c < C; ++c) {
            running_mean.data()[c] = (1.0f - momentum) * running_mean.data()[c] + momentum * mu.data()[c];
            running_var.data()[c] = (1.0f - momentum) * running_var.data()[c] + momentum * var.data()[c];
        }
        Tensor denom = sqrt(add_scalar(var, eps));
        return add(mul(div(xc, denom), gamma_b), beta_b);
    }
    Tensor rm = reshape(running_mean.detach(), {1, C, 1, 1});
    Tensor rv = reshape(running_var.detach(), {1, C, 1, 1});
    Tensor denom = sqrt(add_scalar(rv, eps));
    return add(mul(div(sub(x, rm), denom), gamma_b), beta_b);
}

// Pixel-wise softmax over the channel axis of [N,C,H,W], max-subtracted for
// stability. Every (n,h,w) column sums to 1.
inline Tensor softmax_channels(const Tensor& x) {
    if (x.rank() != 4) throw shape_error("softmax_channels: want rank-4 input, got " + shape_str(x.shape()));
    size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (C < 2) throw value_error("softmax_channels: need at least 2 channels, got " + std::to_string(C));
    const float* X = x.data();
    for (size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(X[i])) throw value_error("softmax_channels: non-finite input");
    Tensor out = Tensor::zeros(x.shape());
    float* O = out.data();
    size_t hw = H * W, chw = C * hw;
    for (size_t n = 0; n < N; ++n)
        for (size_t p = 0; p < hw; ++p) {
            const float* xp = X + n * chw + p;
            float* op = O + n * chw + p;
            float mx = xp[0];
            for (size_t c = 1; c < C; ++c) mx = std::max(mx, xp[c * hw]);
            float denom = 0.0f;
            for (size_t c = 0; c < C; ++c) {
                float e = std::exp(xp[c * hw] - mx);
                op[c * hw] = e;
                denom += e;
            }
            float inv = 1.0f / denom;
            for (size_t c = 0; c < C; ++c) op[c * hw] *= inv;
        }
    Graph* g = detail::op_graph(x);
    if (g && x.impl()->needs_grad()) {
        auto xi = x.impl(), oi = out.impl();
        detail::attach(out, g, [xi, oi, N, C, hw, chw] {
            xi->ensure_grad();
            const float* Y = oi->data.data();
            const float* GO = oi->grad.data();
            float* GX = xi->grad.data();
            for (size_t n = 0; n < N; ++n)
                for (size_t p = 0; p < hw; ++p) {
                    size_t base = n * chw + p;
                    float dot = 0.0f;
                    for (size_t c = 0; c < C; ++c) dot += GO[base + c * hw] * Y[base + c * hw];
                    for (size_t c = 0; c < C; ++c)
                        GX[base + c * hw] += Y[base + c * hw] * (GO[base + c * hw] - dot);
                }
        });
    }
    return out;
}

}  // namespace bbuda
