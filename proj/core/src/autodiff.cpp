#include "uninet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uninet::ad {

Value leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

Value constant(Tensor v) { return leaf(std::move(v), false); }

Value Graph::track(Tensor val, std::vector<Value> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->backward_op = std::move(bw);
        tape_.push_back(n);
    }
    return n;
}

void Graph::backward(const Value& root) {
    if (!root->requires_grad) return;
    if (root->val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        Node& n = **it;
        if (n.grad_ready() && n.backward_op) n.backward_op(n);
    }
}

double sigmoid_val(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_val(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

Value conv2d(Graph& g, const Value& x, const Value& w, const Value& b, int stride, int pad) {
    const Tensor& xv = x->val;
    const Tensor& wv = w->val;
    const int h = xv.h(), iw = xv.w(), ic = xv.c();
    const int oc = wv.dim(0), kh = wv.dim(1), kw = wv.dim(2);
    if (wv.dim(3) != ic) throw std::invalid_argument("conv2d: channel mismatch");
    if (b->val.size() != oc) throw std::invalid_argument("conv2d: bias size mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (iw + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

    Tensor out({oh, ow, oc});
    const double* xp = xv.data();
    const double* wp = wv.data();
    const double* bp = b->val.data();
    double* op = out.data();
    const int64_t wstride_oc = static_cast<int64_t>(kh) * kw * ic;

    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* orow = op + (static_cast<int64_t>(oy) * ow + ox) * oc;
            for (int c = 0; c < oc; ++c) orow[c] = bp[c];
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= iw) continue;
                    const double* xrow = xp + (static_cast<int64_t>(iy) * iw + ix) * ic;
                    const double* wk = wp + (static_cast<int64_t>(ky) * kw + kx) * ic;
                    for (int c = 0; c < oc; ++c) {
                        const double* wr = wk + c * wstride_oc;
                        double acc = 0.0;
                        for (int i = 0; i < ic; ++i) acc += xrow[i] * wr[i];
                        orow[c] += acc;
                    }
                }
            }
        }
    }

    return g.track(std::move(out), {x, w, b}, [stride, pad, h, iw, ic, oc, kh, kw](Node& n) {
        const Value& x = n.parents[0];
        const Value& w = n.parents[1];
        const Value& b = n.parents[2];
        const int oh = n.val.dim(0), ow = n.val.dim(1);
        const double* gp = n.grad.data();
        const bool need_dx = x->requires_grad;
        const bool need_dw = w->requires_grad;
        const bool need_db = b->requires_grad;
        if (need_dx) x->ensure_grad();
        if (need_dw) w->ensure_grad();
        if (need_db) b->ensure_grad();
        const double* xp = x->val.data();
        const double* wp = w->val.data();
        double* dxp = need_dx ? x->grad.data() : nullptr;
        double* dwp = need_dw ? w->grad.data() : nullptr;
        double* dbp = need_db ? b->grad.data() : nullptr;
        const int64_t wstride_oc = static_cast<int64_t>(kh) * kw * ic;

        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double* grow = gp + (static_cast<int64_t>(oy) * ow + ox) * oc;
                if (need_db) {
                    for (int c = 0; c < oc; ++c) dbp[c] += grow[c];
                }
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= iw) continue;
                        const int64_t xoff = (static_cast<int64_t>(iy) * iw + ix) * ic;
                        const int64_t woff = (static_cast<int64_t>(ky) * kw + kx) * ic;
                        for (int c = 0; c < oc; ++c) {
                            const double gv = grow[c];
                            if (gv == 0.0) continue;
                            const double* wr = wp + woff + c * wstride_oc;
                            if (need_dx) {
                                double* dxr = dxp + xoff;
                                for (int i = 0; i < ic; ++i) dxr[i] += gv * wr[i];
                            }
                            if (need_dw) {
                                double* dwr = dwp + woff + c * wstride_oc;
                                const double* xrow = xp + xoff;
                                for (int i = 0; i < ic; ++i) dwr[i] += gv * xrow[i];
                            }
                        }
                    }
                }
            }
        }
    });
}

Value relu(Graph& g, const Value& x) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = x->val[i] > 0.0 ? x->val[i] : 0.0;
    return g.track(std::move(out), {x}, [](Node& n) {
        const Value& x = n.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < n.val.size(); ++i)
            if (x->val[i] > 0.0) x->grad[i] += n.grad[i];
    });
}

Value sigmoid(Graph& g, const Value& x) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = sigmoid_val(x->val[i]);
    return g.track(std::move(out), {x}, [](Node& n) {
        const Value& x = n.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < n.val.size(); ++i) {
            const double y = n.val[i];
            x->grad[i] += n.grad[i] * y * (1.0 - y);
        }
    });
}

Value softplus(Graph& g, const Value& x) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = softplus_val(x->val[i]);
    return g.track(std::move(out), {x}, [](Node& n) {
        const Value& x = n.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < n.val.size(); ++i)
            x->grad[i] += n.grad[i] * sigmoid_val(x->val[i]);
    });
}

Value exp_mul(Graph& g, const Value& x, double k) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(x->val[i]) * k;
    return g.track(std::move(out), {x}, [](Node& n) {
        const Value& x = n.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < n.val.size(); ++i) x->grad[i] += n.grad[i] * n.val[i];
    });
}

Value add(Graph& g, const Value& a, const Value& b) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("add: shape mismatch");
    Tensor out(a->val.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->val[i] + b->val[i];
    return g.track(std::move(out), {a, b}, [](Node& n) {
        for (const auto& p : n.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (int64_t i = 0; i < n.val.size(); ++i) p->grad[i] += n.grad[i];
        }
    });
}

Value concat_c(Graph& g, const std::vector<Value>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_c: no inputs");
    const int h = xs[0]->val.h(), w = xs[0]->val.w();
    int ctot = 0;
    for (const auto& x : xs) {
        if (x->val.h() != h || x->val.w() != w) throw std::invalid_argument("concat_c: spatial mismatch");
        ctot += x->val.c();
    }
    Tensor out({h, w, ctot});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double* orow = out.data() + out.idx3(y, x, 0);
            int off = 0;
            for (const auto& xv : xs) {
                const int c = xv->val.c();
                const double* irow = xv->val.data() + xv->val.idx3(y, x, 0);
                std::copy(irow, irow + c, orow + off);
                off += c;
            }
        }
    }
    return g.track(std::move(out), xs, [h, w](Node& n) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double* grow = n.grad.data() + n.val.idx3(y, x, 0);
                int off = 0;
                for (const auto& p : n.parents) {
                    const int c = p->val.c();
                    if (p->requires_grad) {
                        p->ensure_grad();
                        double* drow = p->grad.data() + p->val.idx3(y, x, 0);
                        for (int i = 0; i < c; ++i) drow[i] += grow[off + i];
                    }
                    off += c;
                }
            }
        }
    });
}

namespace {
// align_corners=false source coordinates with edge clamping
struct Lerp {
    int i0, i1;
    double w0, w1;
};
std::vector<Lerp> lerp_axis(int out_n, int in_n) {
    std::vector<Lerp> v(static_cast<size_t>(out_n));
    const double scale = static_cast<double>(in_n) / out_n;
    for (int o = 0; o < out_n; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in_n - 1);
        const double t = src - i0;
        v[static_cast<size_t>(o)] = {i0, i1, 1.0 - t, t};
    }
    return v;
}
}  // namespace

Value resize_bilinear(Graph& g, const Value& x, int out_h, int out_w) {
    const int h = x->val.h(), w = x->val.w(), c = x->val.c();
    const auto ly = lerp_axis(out_h, h);
    const auto lx = lerp_axis(out_w, w);
    Tensor out({out_h, out_w, c});
    for (int oy = 0; oy < out_h; ++oy) {
        const Lerp& ay = ly[static_cast<size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
            const Lerp& ax = lx[static_cast<size_t>(ox)];
            const double* p00 = x->val.data() + x->val.idx3(ay.i0, ax.i0, 0);
            const double* p01 = x->val.data() + x->val.idx3(ay.i0, ax.i1, 0);
            const double* p10 = x->val.data() + x->val.idx3(ay.i1, ax.i0, 0);
            const double* p11 = x->val.data() + x->val.idx3(ay.i1, ax.i1, 0);
            double* orow = out.data() + out.idx3(oy, ox, 0);
            const double w00 = ay.w0 * ax.w0, w01 = ay.w0 * ax.w1;
            const double w10 = ay.w1 * ax.w0, w11 = ay.w1 * ax.w1;
            for (int i = 0; i < c; ++i)
                orow[i] = w00 * p00[i] + w01 * p01[i] + w10 * p10[i] + w11 * p11[i];
        }
    }
    return g.track(std::move(out), {x}, [ly, lx, c](Node& n) {
        const Value& x = n.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        const int out_h = n.val.h(), out_w = n.val.w();
        for (int oy = 0; oy < out_h; ++oy) {
            const Lerp& ay = ly[static_cast<size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const Lerp& ax = lx[static_cast<size_t>(ox)];
                const double* grow = n.grad.data() + n.val.idx3(oy, ox, 0);
                double* d00 = x->grad.data() + x->val.idx3(ay.i0, ax.i0, 0);
                double* d01 = x->grad.data() + x->val.idx3(ay.i0, ax.i1, 0);
                double* d10 = x->grad.data() + x->val.idx3(ay.i1, ax.i0, 0);
                double* d11 = x->grad.data() + x->val.idx3(ay.i1, ax.i1, 0);
                const double w00 = ay.w0 * ax.w0, w01 = ay.w0 * ax.w1;
                const double w10 = ay.w1 * ax.w0, w11 = ay.w1 * ax.w1;
                for (int i = 0; i < c; ++i) {
                    const double gv = grow[i];
                    d00[i] += w00 * gv;
                    d01[i] += w01 * gv;
                    d10[i] += w10 * gv;
                    d11[i] += w11 * gv;
                }
            }
        }
    });
}

Value sum_all(Graph& g, const Value& x) {
    Tensor out = Tensor::scalar(sum(x->val));
    return g.track(std::move(out), {x}, [](Node& n) {
        const Value& x = n.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        const double gv = n.grad[0];
        for (int64_t i = 0; i < x->grad.size(); ++i) x->grad[i] += gv;
    });
}

Value s_add(Graph& g, const Value& a, const Value& b) {
    Tensor out = Tensor::scalar(a->val[0] + b->val[0]);
    return g.track(std::move(out), {a, b}, [](Node& n) {
        for (const auto& p : n.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            p->grad[0] += n.grad[0];
        }
    });
}

Value s_scale(Graph& g, const Value& a, double k) {
    Tensor out = Tensor::scalar(a->val[0] * k);
    return g.track(std::move(out), {a}, [k](Node& n) {
        const Value& a = n.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        a->grad[0] += n.grad[0] * k;
    });
}

}  // namespace uninet::ad
