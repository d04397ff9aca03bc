#include "slpt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include <Eigen/Core>

#include "slpt/errors.hpp"

namespace slpt {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

int Mask::max_label() const {
    int m = 0;
    for (int v : labels) m = std::max(m, v);
    return m;
}

const Tensor& Var::value() const { return graph->value(id); }
bool Var::requires_grad() const { return graph->requires_grad(id); }

Var Graph::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    nodes_.push_back(Node{p.value, {}, grad_enabled_ && !p.frozen, {}});
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_.emplace(&p, id);
    return Var{this, id};
}

Var Graph::input(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, grad_enabled_ && requires_grad, {}});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::make(Tensor value, std::span<const Var> parents, BackwardFn backward) {
    bool rg = false;
    if (grad_enabled_)
        for (const Var& p : parents) rg = rg || nodes_[p.id].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(backward) : BackwardFn{}});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_buffer(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

void Graph::backward(Var scalar) {
    if (scalar.graph != this) throw InvalidArgument("backward: variable belongs to another graph");
    if (nodes_[scalar.id].value.numel() != 1) throw InvalidArgument("backward: output must be a scalar");
    if (!nodes_[scalar.id].requires_grad) return;
    grad_buffer(scalar.id)[0] = 1.0;
    for (int id = scalar.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.backward && !n.grad.empty()) n.backward(*this, n.grad, n.value);
    }
}

Tensor Graph::grad_of(const Parameter& p) const {
    auto it = param_nodes_.find(&p);
    if (it == param_nodes_.end() || nodes_[it->second].grad.empty()) return Tensor::zeros(p.value.shape());
    return nodes_[it->second].grad;
}

namespace ops {
namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

void require_chw(const Tensor& t, const char* op) {
    require(t.dim() == 3, std::string(op) + ": expected [C,H,W], got " + shape_str(t.shape()));
}

void require_mask(const Tensor& t, const Mask& m, const char* op) {
    require_chw(t, op);
    require(t.size(1) == m.height && t.size(2) == m.width,
            std::string(op) + ": mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                " does not match " + shape_str(t.shape()));
    for (int v : m.labels)
        require(v >= 0 && v < t.size(0), std::string(op) + ": label " + std::to_string(v) + " out of range");
}

// Row k = (ci, ky, kx) of channel block [c0, c0+cin); column = output pixel.
// Valid output range [lo, hi) for kernel tap offset `off` along one axis.
std::pair<int, int> tap_range(int off, int stride, int in, int out) {
    int lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    int hi = in - 1 - off < 0 ? 0 : (in - 1 - off) / stride + 1;
    return {std::min(lo, out), std::clamp(hi, 0, out)};
}

void im2col(const Tensor& x, int c0, int cin, int kh, int kw, const ConvSpec& s, int ho, int wo, double* col) {
    const int H = x.size(1), W = x.size(2);
    const std::size_t P = static_cast<std::size_t>(ho) * wo;
    std::size_t row = 0;
    for (int ci = 0; ci < cin; ++ci) {
        const double* src = x.data() + static_cast<std::size_t>(c0 + ci) * H * W;
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx, ++row) {
                double* dst = col + row * P;
                const int offx = kx * s.dilation - s.padding;
                const auto [xlo, xhi] = tap_range(offx, s.stride, W, wo);
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.padding + ky * s.dilation;
                    double* d = dst + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= H || xlo >= xhi) {
                        std::fill(d, d + wo, 0.0);
                        continue;
                    }
                    const double* srow = src + static_cast<std::size_t>(iy) * W;
                    std::fill(d, d + xlo, 0.0);
                    for (int ox = xlo; ox < xhi; ++ox) d[ox] = srow[ox * s.stride + offx];
                    std::fill(d + xhi, d + wo, 0.0);
                }
            }
    }
}

void col2im(const double* col, int c0, int cin, int kh, int kw, const ConvSpec& s, int ho, int wo, Tensor& dx) {
    const int H = dx.size(1), W = dx.size(2);
    const std::size_t P = static_cast<std::size_t>(ho) * wo;
    std::size_t row = 0;
    for (int ci = 0; ci < cin; ++ci) {
        double* dst = dx.data() + static_cast<std::size_t>(c0 + ci) * H * W;
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx, ++row) {
                const double* src = col + row * P;
                const int offx = kx * s.dilation - s.padding;
                const auto [xlo, xhi] = tap_range(offx, s.stride, W, wo);
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.padding + ky * s.dilation;
                    if (iy < 0 || iy >= H) continue;
                    double* drow = dst + static_cast<std::size_t>(iy) * W;
                    const double* srow = src + static_cast<std::size_t>(oy) * wo;
                    for (int ox = xlo; ox < xhi; ++ox) drow[ox * s.stride + offx] += srow[ox];
                }
            }
    }
}

std::vector<Var> conv_parents(Var x, Var w, const Var* b) {
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(*b);
    return parents;
}

// Calls f(c, ky, kx, oy, ox_lo, ox_hi, iy, offx) for every in-bounds output row segment of a tap;
// output column ox reads input column ox * stride + offx.
template <class F>
void for_each_tap(int C, int kh, int kw, int H, int W, int ho, int wo, const ConvSpec& s, F&& f) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky) {
            const int offy = ky * s.dilation - s.padding;
            const auto [ylo, yhi] = tap_range(offy, s.stride, H, ho);
            for (int kx = 0; kx < kw; ++kx) {
                const int offx = kx * s.dilation - s.padding;
                const auto [xlo, xhi] = tap_range(offx, s.stride, W, wo);
                if (xlo >= xhi) continue;
                for (int oy = ylo; oy < yhi; ++oy) f(c, ky, kx, oy, xlo, xhi, oy * s.stride + offy, offx);
            }
        }
}

Var depthwise_conv(Var x, Var w, const Var* b, const ConvSpec& s, int ho, int wo) {
    const Tensor& X = x.value();
    const Tensor& Wt = w.value();
    const int C = X.size(0), H = X.size(1), W = X.size(2);
    const int kh = Wt.size(2), kw = Wt.size(3);
    const int st = s.stride;
    Tensor out({C, ho, wo});
    if (b)
        for (int c = 0; c < C; ++c) std::fill_n(out.data() + static_cast<std::size_t>(c) * ho * wo, ho * wo, b->value()[c]);
    for_each_tap(C, kh, kw, H, W, ho, wo, s, [&](int c, int ky, int kx, int oy, int xlo, int xhi, int iy, int offx) {
        const double wv = Wt[(static_cast<std::size_t>(c) * kh + ky) * kw + kx];
        const double* in = X.data() + (static_cast<std::size_t>(c) * H + iy) * W;
        double* o = out.data() + (static_cast<std::size_t>(c) * ho + oy) * wo;
        for (int ox = xlo; ox < xhi; ++ox) o[ox] += wv * in[ox * st + offx];
    });
    const int bid = b ? b->id : -1;
    return x.graph->make(std::move(out), conv_parents(x, w, b),
                         [=, xid = x.id, wid = w.id](Graph& g, const Tensor& dy, const Tensor&) {
                             const Tensor& X = g.value(xid);
                             const Tensor& Wt = g.value(wid);
                             Tensor* dx = g.requires_grad(xid) ? &g.grad_buffer(xid) : nullptr;
                             Tensor* dw = g.requires_grad(wid) ? &g.grad_buffer(wid) : nullptr;
                             Tensor* db = (bid >= 0 && g.requires_grad(bid)) ? &g.grad_buffer(bid) : nullptr;
                             if (db)
                                 for (int c = 0; c < C; ++c) {
                                     const double* d = dy.data() + static_cast<std::size_t>(c) * ho * wo;
                                     (*db)[c] += std::accumulate(d, d + static_cast<std::size_t>(ho) * wo, 0.0);
                                 }
                             if (!dx && !dw) return;
                             for_each_tap(C, kh, kw, H, W, ho, wo, s,
                                          [&](int c, int ky, int kx, int oy, int xlo, int xhi, int iy, int offx) {
                                              const std::size_t wi = (static_cast<std::size_t>(c) * kh + ky) * kw + kx;
                                              const std::size_t in_off = (static_cast<std::size_t>(c) * H + iy) * W;
                                              const double* d = dy.data() + (static_cast<std::size_t>(c) * ho + oy) * wo;
                                              if (dx) {
                                                  const double wv = Wt[wi];
                                                  double* o = dx->data() + in_off;
                                                  for (int ox = xlo; ox < xhi; ++ox) o[ox * st + offx] += wv * d[ox];
                                              }
                                              if (dw) {
                                                  const double* in = X.data() + in_off;
                                                  double acc = 0.0;
                                                  for (int ox = xlo; ox < xhi; ++ox) acc += in[ox * st + offx] * d[ox];
                                                  (*dw)[wi] += acc;
                                              }
                                          });
                         });
}

template <class F>
Var unary(Var a, F&& f, auto&& df) {
    const Tensor& A = a.value();
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.numel(); ++i) out[i] = f(A[i]);
    return a.graph->make(std::move(out), std::span<const Var>(&a, 1),
                         [aid = a.id, df](Graph& g, const Tensor& dy, const Tensor&) {
                             const Tensor& A = g.value(aid);
                             Tensor& da = g.grad_buffer(aid);
                             for (std::size_t i = 0; i < A.numel(); ++i) da[i] += dy[i] * df(A[i]);
                         });
}

} // namespace

Var conv2d(Var x, Var w, const Var* b, const ConvSpec& s) {
    const Tensor& X = x.value();
    const Tensor& Wt = w.value();
    require_chw(X, "conv2d");
    require(Wt.dim() == 4, "conv2d: weight must be [Cout,Cin/g,kh,kw], got " + shape_str(Wt.shape()));
    require(s.stride >= 1 && s.dilation >= 1 && s.groups >= 1 && s.padding >= 0, "conv2d: invalid spec");
    const int cin = X.size(0), H = X.size(1), W = X.size(2);
    const int cout = Wt.size(0), cin_g = Wt.size(1), kh = Wt.size(2), kw = Wt.size(3);
    require(cin % s.groups == 0 && cout % s.groups == 0 && cin_g * s.groups == cin,
            "conv2d: channel/group mismatch, input " + shape_str(X.shape()) + " weight " + shape_str(Wt.shape()));
    if (b) require(b->value().numel() == static_cast<std::size_t>(cout), "conv2d: bias size mismatch");
    const int ho = (H + 2 * s.padding - s.dilation * (kh - 1) - 1) / s.stride + 1;
    const int wo = (W + 2 * s.padding - s.dilation * (kw - 1) - 1) / s.stride + 1;
    require(ho > 0 && wo > 0, "conv2d: empty output for input " + shape_str(X.shape()));

    if (s.groups == cin && cout == cin && cin_g == 1) return depthwise_conv(x, w, b, s, ho, wo);

    const int G = s.groups;
    const int cout_g = cout / G;
    const int K = cin_g * kh * kw;
    const std::size_t P = static_cast<std::size_t>(ho) * wo;
    const bool pointwise = kh == 1 && kw == 1 && s.stride == 1 && s.padding == 0;

    // Column buffers are kept only when the weight gradient needs them.
    auto cols = std::make_shared<std::vector<double>>();
    std::vector<double> scratch;
    Tensor out({cout, ho, wo});
    for (int gi = 0; gi < G; ++gi) {
        const double* colp;
        if (pointwise) {
            colp = X.data() + static_cast<std::size_t>(gi) * cin_g * P;
        } else {
            scratch.resize(static_cast<std::size_t>(K) * P);
            im2col(X, gi * cin_g, cin_g, kh, kw, s, ho, wo, scratch.data());
            colp = scratch.data();
        }
        CMatMap col(colp, K, static_cast<Eigen::Index>(P));
        CMatMap wm(Wt.data() + static_cast<std::size_t>(gi) * cout_g * K, cout_g, K);
        MatMap y(out.data() + static_cast<std::size_t>(gi) * cout_g * P, cout_g, static_cast<Eigen::Index>(P));
        y.noalias() = wm * col;
        if (!pointwise && w.requires_grad()) cols->insert(cols->end(), scratch.begin(), scratch.end());
    }
    if (b)
        for (int c = 0; c < cout; ++c) {
            const double bv = b->value()[c];
            double* o = out.data() + static_cast<std::size_t>(c) * P;
            for (std::size_t p = 0; p < P; ++p) o[p] += bv;
        }

    const int bid = b ? b->id : -1;
    return x.graph->make(
        std::move(out), conv_parents(x, w, b),
        [=, xid = x.id, wid = w.id](Graph& g, const Tensor& dy, const Tensor&) {
            const Tensor& X = g.value(xid);
            const Tensor& Wt = g.value(wid);
            if (bid >= 0 && g.requires_grad(bid)) {
                Tensor& db = g.grad_buffer(bid);
                for (int c = 0; c < cout; ++c) {
                    const double* d = dy.data() + static_cast<std::size_t>(c) * P;
                    double acc = 0.0;
                    for (std::size_t p = 0; p < P; ++p) acc += d[p];
                    db[c] += acc;
                }
            }
            const bool need_w = g.requires_grad(wid);
            const bool need_x = g.requires_grad(xid);
            std::vector<double> dcol;
            for (int gi = 0; gi < G; ++gi) {
                CMatMap dym(dy.data() + static_cast<std::size_t>(gi) * cout_g * P, cout_g, static_cast<Eigen::Index>(P));
                if (need_w) {
                    const double* colp = pointwise ? X.data() + static_cast<std::size_t>(gi) * cin_g * P
                                                   : cols->data() + static_cast<std::size_t>(gi) * K * P;
                    CMatMap col(colp, K, static_cast<Eigen::Index>(P));
                    MatMap dw(g.grad_buffer(wid).data() + static_cast<std::size_t>(gi) * cout_g * K, cout_g, K);
                    dw.noalias() += dym * col.transpose();
                }
                if (need_x) {
                    CMatMap wm(Wt.data() + static_cast<std::size_t>(gi) * cout_g * K, cout_g, K);
                    Tensor& dx = g.grad_buffer(xid);
                    if (pointwise) {
                        MatMap dxm(dx.data() + static_cast<std::size_t>(gi) * cin_g * P, K, static_cast<Eigen::Index>(P));
                        dxm.noalias() += wm.transpose() * dym;
                    } else {
                        dcol.resize(static_cast<std::size_t>(K) * P);
                        MatMap dc(dcol.data(), K, static_cast<Eigen::Index>(P));
                        dc.noalias() = wm.transpose() * dym;
                        col2im(dcol.data(), gi * cin_g, cin_g, kh, kw, s, ho, wo, dx);
                    }
                }
            }
        });
}

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    const Var ps[] = {a, b};
    return a.graph->make(std::move(out), ps, [aid = a.id, bid = b.id](Graph& g, const Tensor& dy, const Tensor&) {
        if (g.requires_grad(aid)) g.grad_buffer(aid) += dy;
        if (g.requires_grad(bid)) g.grad_buffer(bid) += dy;
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const Tensor& B = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= B[i];
    const Var ps[] = {a, b};
    return a.graph->make(std::move(out), ps, [aid = a.id, bid = b.id](Graph& g, const Tensor& dy, const Tensor&) {
        if (g.requires_grad(aid)) g.grad_buffer(aid) += dy;
        if (g.requires_grad(bid)) {
            Tensor& db = g.grad_buffer(bid);
            for (std::size_t i = 0; i < dy.numel(); ++i) db[i] -= dy[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "mul");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    Tensor out(A.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = A[i] * B[i];
    const Var ps[] = {a, b};
    return a.graph->make(std::move(out), ps, [aid = a.id, bid = b.id](Graph& g, const Tensor& dy, const Tensor&) {
        const Tensor& A = g.value(aid);
        const Tensor& B = g.value(bid);
        if (g.requires_grad(aid)) {
            Tensor& da = g.grad_buffer(aid);
            for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * B[i];
        }
        if (g.requires_grad(bid)) {
            Tensor& db = g.grad_buffer(bid);
            for (std::size_t i = 0; i < dy.numel(); ++i) db[i] += dy[i] * A[i];
        }
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    out *= s;
    return a.graph->make(std::move(out), std::span<const Var>(&a, 1), [aid = a.id, s](Graph& g, const Tensor& dy, const Tensor&) {
        Tensor& da = g.grad_buffer(aid);
        for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += s * dy[i];
    });
}

Var relu(Var a) {
    return unary(a, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    return unary(a, sig, [sig](double v) {
        const double s = sig(v);
        return s * (1.0 - s);
    });
}

Var sum(Var a) {
    Tensor out({1}, a.value().sum());
    return a.graph->make(std::move(out), std::span<const Var>(&a, 1), [aid = a.id](Graph& g, const Tensor& dy, const Tensor&) {
        Tensor& da = g.grad_buffer(aid);
        for (double& v : da.storage()) v += dy[0];
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().numel());
    return scale(sum(a), 1.0 / n);
}

Var add_all(std::span<const Var> xs) {
    require(!xs.empty(), "add_all: no inputs");
    Tensor out = xs[0].value();
    for (std::size_t i = 1; i < xs.size(); ++i) {
        require_same_shape(out, xs[i].value(), "add_all");
        out += xs[i].value();
    }
    std::vector<int> ids;
    for (const Var& v : xs) ids.push_back(v.id);
    return xs[0].graph->make(std::move(out), xs, [ids](Graph& g, const Tensor& dy, const Tensor&) {
        for (int id : ids)
            if (g.requires_grad(id)) g.grad_buffer(id) += dy;
    });
}

Var average(std::span<const Var> xs) { return scale(add_all(xs), 1.0 / static_cast<double>(xs.size())); }

Var concat_channels(std::span<const Var> xs) {
    require(!xs.empty(), "concat_channels: no inputs");
    const int H = xs[0].value().size(1), W = xs[0].value().size(2);
    int C = 0;
    for (const Var& v : xs) {
        require_chw(v.value(), "concat_channels");
        require(v.value().size(1) == H && v.value().size(2) == W,
                "concat_channels: spatial mismatch " + shape_str(v.shape()) + " vs " + shape_str(xs[0].shape()));
        C += v.value().size(0);
    }
    Tensor out({C, H, W});
    std::vector<std::pair<int, std::size_t>> slots;
    std::size_t off = 0;
    for (const Var& v : xs) {
        std::copy(v.value().data(), v.value().data() + v.value().numel(), out.data() + off);
        slots.emplace_back(v.id, off);
        off += v.value().numel();
    }
    return xs[0].graph->make(std::move(out), xs, [slots](Graph& g, const Tensor& dy, const Tensor&) {
        for (auto [id, o] : slots) {
            if (!g.requires_grad(id)) continue;
            Tensor& d = g.grad_buffer(id);
            for (std::size_t i = 0; i < d.numel(); ++i) d[i] += dy[o + i];
        }
    });
}

Var global_avg_pool(Var x) {
    const Tensor& X = x.value();
    require_chw(X, "global_avg_pool");
    const int C = X.size(0);
    const std::size_t P = static_cast<std::size_t>(X.size(1)) * X.size(2);
    Tensor out({C, 1, 1});
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < P; ++p) acc += X[c * P + p];
        out[c] = acc / static_cast<double>(P);
    }
    return x.graph->make(std::move(out), std::span<const Var>(&x, 1), [xid = x.id, C, P](Graph& g, const Tensor& dy, const Tensor&) {
        Tensor& dx = g.grad_buffer(xid);
        for (int c = 0; c < C; ++c) {
            const double d = dy[c] / static_cast<double>(P);
            for (std::size_t p = 0; p < P; ++p) dx[c * P + p] += d;
        }
    });
}

Var expand_spatial(Var x, int h, int w) {
    const Tensor& X = x.value();
    require(X.dim() == 3 && X.size(1) == 1 && X.size(2) == 1, "expand_spatial: expected [C,1,1]");
    const int C = X.size(0);
    const std::size_t P = static_cast<std::size_t>(h) * w;
    Tensor out({C, h, w});
    for (int c = 0; c < C; ++c) std::fill(out.data() + c * P, out.data() + (c + 1) * P, X[c]);
    return x.graph->make(std::move(out), std::span<const Var>(&x, 1), [xid = x.id, C, P](Graph& g, const Tensor& dy, const Tensor&) {
        Tensor& dx = g.grad_buffer(xid);
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) acc += dy[c * P + p];
            dx[c] += acc;
        }
    });
}

Var mul_channel(Var x, Var gate) {
    const Tensor& X = x.value();
    const Tensor& Gt = gate.value();
    require_chw(X, "mul_channel");
    const int C = X.size(0);
    require(Gt.numel() == static_cast<std::size_t>(C), "mul_channel: gate size mismatch");
    const std::size_t P = static_cast<std::size_t>(X.size(1)) * X.size(2);
    Tensor out(X.shape());
    for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) out[c * P + p] = X[c * P + p] * Gt[c];
    const Var ps[] = {x, gate};
    return x.graph->make(std::move(out), ps, [xid = x.id, gid = gate.id, C, P](Graph& g, const Tensor& dy, const Tensor&) {
        const Tensor& X = g.value(xid);
        const Tensor& Gt = g.value(gid);
        if (g.requires_grad(xid)) {
            Tensor& dx = g.grad_buffer(xid);
            for (int c = 0; c < C; ++c)
                for (std::size_t p = 0; p < P; ++p) dx[c * P + p] += dy[c * P + p] * Gt[c];
        }
        if (g.requires_grad(gid)) {
            Tensor& dg = g.grad_buffer(gid);
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t p = 0; p < P; ++p) acc += dy[c * P + p] * X[c * P + p];
                dg[c] += acc;
            }
        }
    });
}

namespace {
struct Taps {
    std::vector<int> i0, i1;
    std::vector<double> w1;
};

Taps bilinear_taps(int in, int out) {
    Taps t;
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int a = static_cast<int>(std::floor(src));
        const int b = std::min(a + 1, in - 1);
        t.i0.push_back(a);
        t.i1.push_back(b);
        t.w1.push_back(src - a);
    }
    return t;
}
} // namespace

Var resize_bilinear(Var x, int h, int w) {
    const Tensor& X = x.value();
    require_chw(X, "resize_bilinear");
    require(h > 0 && w > 0, "resize_bilinear: empty target");
    const int C = X.size(0), H = X.size(1), W = X.size(2);
    if (H == h && W == w) return scale(x, 1.0);
    auto ty = std::make_shared<Taps>(bilinear_taps(H, h));
    auto tx = std::make_shared<Taps>(bilinear_taps(W, w));
    Tensor out({C, h, w});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y) {
            const double wy = ty->w1[y];
            for (int xx = 0; xx < w; ++xx) {
                const double wx = tx->w1[xx];
                out.at(c, y, xx) = (1 - wy) * ((1 - wx) * X.at(c, ty->i0[y], tx->i0[xx]) + wx * X.at(c, ty->i0[y], tx->i1[xx])) +
                                   wy * ((1 - wx) * X.at(c, ty->i1[y], tx->i0[xx]) + wx * X.at(c, ty->i1[y], tx->i1[xx]));
            }
        }
    return x.graph->make(std::move(out), std::span<const Var>(&x, 1),
                         [xid = x.id, ty, tx, C, h, w](Graph& g, const Tensor& dy, const Tensor&) {
                             Tensor& dx = g.grad_buffer(xid);
                             for (int c = 0; c < C; ++c)
                                 for (int y = 0; y < h; ++y) {
                                     const double wy = ty->w1[y];
                                     for (int xx = 0; xx < w; ++xx) {
                                         const double wx = tx->w1[xx];
                                         const double d = dy.at(c, y, xx);
                                         dx.at(c, ty->i0[y], tx->i0[xx]) += d * (1 - wy) * (1 - wx);
                                         dx.at(c, ty->i0[y], tx->i1[xx]) += d * (1 - wy) * wx;
                                         dx.at(c, ty->i1[y], tx->i0[xx]) += d * wy * (1 - wx);
                                         dx.at(c, ty->i1[y], tx->i1[xx]) += d * wy * wx;
                                     }
                                 }
                         });
}

Var upsample_nearest(Var x, int f) {
    const Tensor& X = x.value();
    require_chw(X, "upsample_nearest");
    require(f >= 1, "upsample_nearest: factor must be >= 1");
    const int C = X.size(0), H = X.size(1), W = X.size(2);
    Tensor out({C, H * f, W * f});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H * f; ++y)
            for (int xx = 0; xx < W * f; ++xx) out.at(c, y, xx) = X.at(c, y / f, xx / f);
    return x.graph->make(std::move(out), std::span<const Var>(&x, 1), [xid = x.id, C, H, W, f](Graph& g, const Tensor& dy, const Tensor&) {
        Tensor& dx = g.grad_buffer(xid);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H * f; ++y)
                for (int xx = 0; xx < W * f; ++xx) dx.at(c, y / f, xx / f) += dy.at(c, y, xx);
    });
}

namespace {
Tensor log_softmax_value(const Tensor& Z) {
    const int C = Z.size(0);
    const std::size_t P = static_cast<std::size_t>(Z.size(1)) * Z.size(2);
    Tensor out(Z.shape());
    for (std::size_t p = 0; p < P; ++p) {
        double m = Z[p];
        for (int c = 1; c < C; ++c) m = std::max(m, Z[c * P + p]);
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(Z[c * P + p] - m);
        const double lse = m + std::log(s);
        for (int c = 0; c < C; ++c) out[c * P + p] = Z[c * P + p] - lse;
    }
    return out;
}
} // namespace

Var softmax_channels(Var logits) {
    require_chw(logits.value(), "softmax_channels");
    Tensor out = log_softmax_value(logits.value());
    for (double& v : out.storage()) v = std::exp(v);
    return logits.graph->make(std::move(out), std::span<const Var>(&logits, 1),
                              [zid = logits.id](Graph& g, const Tensor& dy, const Tensor& Y) {
                                  const int C = Y.size(0);
                                  const std::size_t P = static_cast<std::size_t>(Y.size(1)) * Y.size(2);
                                  Tensor& dz = g.grad_buffer(zid);
                                  for (std::size_t p = 0; p < P; ++p) {
                                      double dot = 0.0;
                                      for (int c = 0; c < C; ++c) dot += dy[c * P + p] * Y[c * P + p];
                                      for (int c = 0; c < C; ++c) dz[c * P + p] += Y[c * P + p] * (dy[c * P + p] - dot);
                                  }
                              });
}

Var log_softmax_channels(Var logits) {
    require_chw(logits.value(), "log_softmax_channels");
    return logits.graph->make(log_softmax_value(logits.value()), std::span<const Var>(&logits, 1),
                              [zid = logits.id](Graph& g, const Tensor& dy, const Tensor& L) {
                                  const int C = L.size(0);
                                  const std::size_t P = static_cast<std::size_t>(L.size(1)) * L.size(2);
                                  Tensor& dz = g.grad_buffer(zid);
                                  for (std::size_t p = 0; p < P; ++p) {
                                      double s = 0.0;
                                      for (int c = 0; c < C; ++c) s += dy[c * P + p];
                                      for (int c = 0; c < C; ++c) dz[c * P + p] += dy[c * P + p] - std::exp(L[c * P + p]) * s;
                                  }
                              });
}

Var cross_entropy(Var logits, const Mask& labels) {
    require_mask(logits.value(), labels, "cross_entropy");
    Tensor L = log_softmax_value(logits.value());
    const std::size_t P = labels.size();
    double loss = 0.0;
    for (std::size_t p = 0; p < P; ++p) loss -= L[labels.labels[p] * P + p];
    loss /= static_cast<double>(P);
    auto lsm = std::make_shared<Tensor>(std::move(L));
    return logits.graph->make(Tensor({1}, loss), std::span<const Var>(&logits, 1),
                              [zid = logits.id, lsm, labels](Graph& g, const Tensor& dy, const Tensor&) {
                                  Tensor& dz = g.grad_buffer(zid);
                                  const int C = lsm->size(0);
                                  const std::size_t P = labels.size();
                                  const double s = dy[0] / static_cast<double>(P);
                                  for (int c = 0; c < C; ++c)
                                      for (std::size_t p = 0; p < P; ++p)
                                          dz[c * P + p] += s * (std::exp((*lsm)[c * P + p]) - (labels.labels[p] == c ? 1.0 : 0.0));
                              });
}

Var tversky_index(Var prob, const Mask& labels, double alpha, double beta, double eps) {
    const Tensor& Y = prob.value();
    require_mask(Y, labels, "tversky_index");
    require(eps > 0.0, "tversky_index: eps must be positive");
    const int C = Y.size(0);
    const std::size_t P = labels.size();
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (int c = 1; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) {
            const double y = labels.labels[p] == c ? 1.0 : 0.0;
            const double v = Y[c * P + p];
            tp += v * y;
            fp += v * (1.0 - y);
            fn += (1.0 - v) * y;
        }
    const double num = tp + eps;
    const double den = tp + alpha * fp + beta * fn + eps;
    return prob.graph->make(Tensor({1}, num / den), std::span<const Var>(&prob, 1),
                            [pid = prob.id, labels, alpha, beta, num, den, C, P](Graph& g, const Tensor& dy, const Tensor&) {
                                Tensor& dp = g.grad_buffer(pid);
                                const double inv = dy[0] / (den * den);
                                for (int c = 1; c < C; ++c)
                                    for (std::size_t p = 0; p < P; ++p) {
                                        const double y = labels.labels[p] == c ? 1.0 : 0.0;
                                        const double dnum = y;
                                        const double dden = y * (1.0 - alpha - beta) + alpha;
                                        dp[c * P + p] += inv * (dnum * den - num * dden);
                                    }
                            });
}

Var pairwise_cosine_sum(std::span<const Var> xs) {
    require(xs.size() >= 2, "pairwise_cosine_sum: need at least two inputs");
    const std::size_t K = xs.size();
    std::vector<double> sq(K), norms(K);
    for (std::size_t k = 0; k < K; ++k) {
        require_same_shape(xs[k].value(), xs[0].value(), "pairwise_cosine_sum");
        sq[k] = xs[k].value().dot(xs[k].value());
        norms[k] = std::sqrt(sq[k]);
        if (!(norms[k] > 0.0) || !std::isfinite(norms[k]))
            throw NumericError("pairwise_cosine_sum: prompt " + std::to_string(k) + " has zero or non-finite norm");
    }
    double total = 0.0;
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = a + 1; b < K; ++b) total += xs[a].value().dot(xs[b].value()) / std::sqrt(sq[a] * sq[b]);
    std::vector<int> ids;
    for (const Var& v : xs) ids.push_back(v.id);
    return xs[0].graph->make(Tensor({1}, total), xs, [ids, norms](Graph& g, const Tensor& dy, const Tensor&) {
        const std::size_t K = ids.size();
        for (std::size_t a = 0; a < K; ++a) {
            if (!g.requires_grad(ids[a])) continue;
            const Tensor& A = g.value(ids[a]);
            Tensor& da = g.grad_buffer(ids[a]);
            for (std::size_t b = 0; b < K; ++b) {
                if (b == a) continue;
                const Tensor& B = g.value(ids[b]);
                const double cos = A.dot(B) / (norms[a] * norms[b]);
                const double s1 = dy[0] / (norms[a] * norms[b]);
                const double s2 = dy[0] * cos / (norms[a] * norms[a]);
                for (std::size_t i = 0; i < A.numel(); ++i) da[i] += s1 * B[i] - s2 * A[i];
            }
        }
    });
}

Var entropy_sum(Var prob, double floor) {
    const Tensor& Y = prob.value();
    double h = 0.0;
    for (double p : Y.storage()) h -= p * std::log(std::max(p, floor));
    return prob.graph->make(Tensor({1}, h), std::span<const Var>(&prob, 1),
                            [pid = prob.id, floor](Graph& g, const Tensor& dy, const Tensor&) {
                                const Tensor& Y = g.value(pid);
                                Tensor& dp = g.grad_buffer(pid);
                                for (std::size_t i = 0; i < Y.numel(); ++i) {
                                    const double p = Y[i];
                                    dp[i] += dy[0] * (p > floor ? -(std::log(p) + 1.0) : -std::log(floor));
                                }
                            });
}

} // namespace ops
} // namespace slpt
