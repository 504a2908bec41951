#include "picl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace picl {
namespace {

const double kSqrt2 = 1.4142135623730950488;
const double kInvSqrt2Pi = 0.3989422804014326779;

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    for (size_t i = 0; i < small.size(); ++i) {
        if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
    }
    return true;
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    if (!is_suffix(b.shape(), a.shape())) {
        throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()) + " do not conform");
    }
}

Tensor attach(Tape* tp, Shape shape, std::vector<double> vals, const char* op,
              const std::function<void(Tape*, int)>& record) {
    Tensor out(std::move(shape), std::move(vals));
    if (tp) {
        int node = tp->alloc(out.size());
        out.set_node(tp, node);
        record(tp, node);
    }
    debug_check_finite(out, op);
    return out;
}

// Unary elementwise op with derivative expressed from input and output value.
template <typename F, typename DF>
Tensor unary_op(const Tensor& a, const char* op, F fwd, DF dfwd) {
    const auto& av = a.data();
    std::vector<double> vals(av.size());
    for (size_t i = 0; i < av.size(); ++i) vals[i] = fwd(av[i]);
    Tape* tp = joint_tape({&a});
    auto adata = a.storage();
    int an = a.node();
    return attach(tp, a.shape(), std::move(vals), op, [&](Tape* t, int node) {
        t->record([t, node, an, adata, dfwd]() {
            auto& g = t->grad(node);
            auto& ga = t->grad(an);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfwd((*adata)[i]);
        });
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_broadcast(a, b, "add");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> vals(av.size());
    size_t bs = bv.size();
    for (size_t i = 0; i < av.size(); ++i) vals[i] = av[i] + bv[i % bs];
    Tape* tp = joint_tape({&a, &b});
    int an = a.node(), bn = b.node();
    return attach(tp, a.shape(), std::move(vals), "add", [&](Tape* t, int node) {
        t->record([t, node, an, bn, bs]() {
            auto& g = t->grad(node);
            if (an >= 0) {
                auto& ga = t->grad(an);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn >= 0) {
                auto& gb = t->grad(bn);
                for (size_t i = 0; i < g.size(); ++i) gb[i % bs] += g[i];
            }
        });
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_broadcast(a, b, "sub");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> vals(av.size());
    size_t bs = bv.size();
    for (size_t i = 0; i < av.size(); ++i) vals[i] = av[i] - bv[i % bs];
    Tape* tp = joint_tape({&a, &b});
    int an = a.node(), bn = b.node();
    return attach(tp, a.shape(), std::move(vals), "sub", [&](Tape* t, int node) {
        t->record([t, node, an, bn, bs]() {
            auto& g = t->grad(node);
            if (an >= 0) {
                auto& ga = t->grad(an);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn >= 0) {
                auto& gb = t->grad(bn);
                for (size_t i = 0; i < g.size(); ++i) gb[i % bs] -= g[i];
            }
        });
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_broadcast(a, b, "mul");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> vals(av.size());
    size_t bs = bv.size();
    for (size_t i = 0; i < av.size(); ++i) vals[i] = av[i] * bv[i % bs];
    Tape* tp = joint_tape({&a, &b});
    int an = a.node(), bn = b.node();
    auto ad = a.storage(), bd = b.storage();
    return attach(tp, a.shape(), std::move(vals), "mul", [&](Tape* t, int node) {
        t->record([t, node, an, bn, bs, ad, bd]() {
            auto& g = t->grad(node);
            if (an >= 0) {
                auto& ga = t->grad(an);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bd)[i % bs];
            }
            if (bn >= 0) {
                auto& gb = t->grad(bn);
                for (size_t i = 0; i < g.size(); ++i) gb[i % bs] += g[i] * (*ad)[i];
            }
        });
    });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    check_broadcast(a, b, "divide");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> vals(av.size());
    size_t bs = bv.size();
    for (size_t i = 0; i < av.size(); ++i) vals[i] = av[i] / bv[i % bs];
    Tape* tp = joint_tape({&a, &b});
    int an = a.node(), bn = b.node();
    auto ad = a.storage(), bd = b.storage();
    return attach(tp, a.shape(), std::move(vals), "divide", [&](Tape* t, int node) {
        t->record([t, node, an, bn, bs, ad, bd]() {
            auto& g = t->grad(node);
            if (an >= 0) {
                auto& ga = t->grad(an);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*bd)[i % bs];
            }
            if (bn >= 0) {
                auto& gb = t->grad(bn);
                for (size_t i = 0; i < g.size(); ++i) {
                    double bb = (*bd)[i % bs];
                    gb[i % bs] -= g[i] * (*ad)[i] / (bb * bb);
                }
            }
        });
    });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, "scale", [c](double x) { return c * x; }, [c](double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(a, "add_scalar", [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid",
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double x) {
            double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            return s * (1.0 - s);
        });
}

Tensor texp(const Tensor& a) {
    return unary_op(a, "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor tlog(const Tensor& a) {
    return unary_op(a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a) {
    return unary_op(
        a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x / kSqrt2)); },
        [](double x) {
            return 0.5 * (1.0 + std::erf(x / kSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
}

Tensor softmax_rows(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("softmax_rows: expected rank-2 input, got " + shape_str(a.shape()));
    int m = a.dim(0), n = a.dim(1);
    const auto& av = a.data();
    std::vector<double> vals(av.size());
    for (int r = 0; r < m; ++r) {
        const double* src = av.data() + static_cast<size_t>(r) * n;
        double* dst = vals.data() + static_cast<size_t>(r) * n;
        double mx = src[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, src[j]);
        double sum = 0;
        for (int j = 0; j < n; ++j) sum += (dst[j] = std::exp(src[j] - mx));
        for (int j = 0; j < n; ++j) dst[j] /= sum;
    }
    Tape* tp = joint_tape({&a});
    int an = a.node();
    Tensor out(a.shape(), std::move(vals));
    if (tp) {
        int node = tp->alloc(out.size());
        out.set_node(tp, node);
        auto yd = out.storage();
        tp->record([tp, node, an, m, n, yd]() {
            auto& g = tp->grad(node);
            auto& ga = tp->grad(an);
            for (int r = 0; r < m; ++r) {
                size_t off = static_cast<size_t>(r) * n;
                double dot = 0;
                for (int j = 0; j < n; ++j) dot += g[off + j] * (*yd)[off + j];
                for (int j = 0; j < n; ++j) ga[off + j] += (*yd)[off + j] * (g[off + j] - dot);
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> vals(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            double aik = av[static_cast<size_t>(i) * k + p];
            const double* brow = bv.data() + static_cast<size_t>(p) * n;
            double* orow = vals.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    Tape* tp = joint_tape({&a, &b});
    int an = a.node(), bn = b.node();
    auto ad = a.storage(), bd = b.storage();
    return attach(tp, {m, n}, std::move(vals), "matmul", [&](Tape* t, int node) {
        t->record([t, node, an, bn, ad, bd, m, k, n]() {
            auto& g = t->grad(node);
            if (an >= 0) {
                auto& ga = t->grad(an);  // gA += g . B^T
                for (int i = 0; i < m; ++i) {
                    for (int p = 0; p < k; ++p) {
                        double s = 0;
                        const double* grow = g.data() + static_cast<size_t>(i) * n;
                        const double* brow = bd->data() + static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                        ga[static_cast<size_t>(i) * k + p] += s;
                    }
                }
            }
            if (bn >= 0) {
                auto& gb = t->grad(bn);  // gB += A^T . g
                for (int p = 0; p < k; ++p) {
                    for (int i = 0; i < m; ++i) {
                        double aik = (*ad)[static_cast<size_t>(i) * k + p];
                        const double* grow = g.data() + static_cast<size_t>(i) * n;
                        double* gbrow = gb.data() + static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
                    }
                }
            }
        });
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw std::invalid_argument("matmul_nt: shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    }
    int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> vals(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* arow = av.data() + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const double* brow = bv.data() + static_cast<size_t>(j) * k;
            double s = 0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            vals[static_cast<size_t>(i) * n + j] = s;
        }
    }
    Tape* tp = joint_tape({&a, &b});
    int an = a.node(), bn = b.node();
    auto ad = a.storage(), bd = b.storage();
    return attach(tp, {m, n}, std::move(vals), "matmul_nt", [&](Tape* t, int node) {
        t->record([t, node, an, bn, ad, bd, m, k, n]() {
            auto& g = t->grad(node);
            if (an >= 0) {
                auto& ga = t->grad(an);  // gA += g . B
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) {
                        double gij = g[static_cast<size_t>(i) * n + j];
                        const double* brow = bd->data() + static_cast<size_t>(j) * k;
                        double* garow = ga.data() + static_cast<size_t>(i) * k;
                        for (int p = 0; p < k; ++p) garow[p] += gij * brow[p];
                    }
                }
            }
            if (bn >= 0) {
                auto& gb = t->grad(bn);  // gB += g^T . A
                for (int j = 0; j < n; ++j) {
                    for (int i = 0; i < m; ++i) {
                        double gij = g[static_cast<size_t>(i) * n + j];
                        const double* arow = ad->data() + static_cast<size_t>(i) * k;
                        double* gbrow = gb.data() + static_cast<size_t>(j) * k;
                        for (int p = 0; p < k; ++p) gbrow[p] += gij * arow[p];
                    }
                }
            }
        });
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

Tensor sum_all(const Tensor& a) {
    double s = 0;
    for (double v : a.data()) s += v;
    Tape* tp = joint_tape({&a});
    int an = a.node();
    return attach(tp, {1}, {s}, "sum_all", [&](Tape* t, int node) {
        t->record([t, node, an]() {
            double g = t->grad(node)[0];
            auto& ga = t->grad(an);
            for (auto& v : ga) v += g;
        });
    });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / a.size()); }

Tensor mean_hw(const Tensor& a) {
    if (a.rank() != 3) throw std::invalid_argument("mean_hw: expected [C,H,W], got " + shape_str(a.shape()));
    int c = a.dim(0), hw = a.dim(1) * a.dim(2);
    const auto& av = a.data();
    std::vector<double> vals(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int i = 0; i < hw; ++i) s += av[static_cast<size_t>(ch) * hw + i];
        vals[static_cast<size_t>(ch)] = s / hw;
    }
    Tape* tp = joint_tape({&a});
    int an = a.node();
    return attach(tp, {c}, std::move(vals), "mean_hw", [&](Tape* t, int node) {
        t->record([t, node, an, c, hw]() {
            auto& g = t->grad(node);
            auto& ga = t->grad(an);
            for (int ch = 0; ch < c; ++ch) {
                double gv = g[static_cast<size_t>(ch)] / hw;
                for (int i = 0; i < hw; ++i) ga[static_cast<size_t>(ch) * hw + i] += gv;
            }
        });
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
    if (x.rank() != 3 || w.rank() != 4) {
        throw std::invalid_argument("conv2d: expected x [Cin,H,W], w [Cout,Cin,k,k], got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    int cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin || w.dim(3) != k || k % 2 == 0) {
        throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) + " incompatible with input " +
                                    shape_str(x.shape()) + " (odd square kernel required)");
    }
    if (bias.size() != cout) throw std::invalid_argument("conv2d: bias size mismatch");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    int pad = k / 2;
    int oh = (h + stride - 1) / stride, ow = (wd + stride - 1) / stride;
    const auto& xv = x.data();
    const auto& wv = w.data();
    const auto& bv = bias.data();
    std::vector<double> vals(static_cast<size_t>(cout) * oh * ow);
    for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double s = bv[static_cast<size_t>(co)];
                for (int ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < k; ++ky) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= wd) continue;
                            s += xv[(static_cast<size_t>(ci) * h + iy) * wd + ix] *
                                 wv[((static_cast<size_t>(co) * cin + ci) * k + ky) * k + kx];
                        }
                    }
                }
                vals[(static_cast<size_t>(co) * oh + oy) * ow + ox] = s;
            }
        }
    }
    Tape* tp = joint_tape({&x, &w, &bias});
    int xn = x.node(), wn = w.node(), bn = bias.node();
    auto xd = x.storage(), wdat = w.storage();
    return attach(tp, {cout, oh, ow}, std::move(vals), "conv2d", [&](Tape* t, int node) {
        t->record([t, node, xn, wn, bn, xd, wdat, cin, h, wd, cout, k, stride, pad, oh, ow]() {
            auto& g = t->grad(node);
            for (int co = 0; co < cout; ++co) {
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        double go = g[(static_cast<size_t>(co) * oh + oy) * ow + ox];
                        if (bn >= 0) t->grad(bn)[static_cast<size_t>(co)] += go;
                        for (int ci = 0; ci < cin; ++ci) {
                            for (int ky = 0; ky < k; ++ky) {
                                int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= wd) continue;
                                    size_t xi = (static_cast<size_t>(ci) * h + iy) * wd + ix;
                                    size_t wi = ((static_cast<size_t>(co) * cin + ci) * k + ky) * k + kx;
                                    if (xn >= 0) t->grad(xn)[xi] += go * (*wdat)[wi];
                                    if (wn >= 0) t->grad(wn)[wi] += go * (*xd)[xi];
                                }
                            }
                        }
                    }
                }
            }
        });
    });
}

namespace {

struct ResizePlan {
    int c, in, out;
    bool has_channels;
};

ResizePlan resize_plan(const Tensor& x, int out_res, const char* op) {
    if (out_res < 1) throw std::invalid_argument(std::string(op) + ": output resolution must be >= 1");
    if (x.rank() == 2) {
        if (x.dim(0) != x.dim(1)) throw std::invalid_argument(std::string(op) + ": square input required");
        return {1, x.dim(0), out_res, false};
    }
    if (x.rank() == 3) {
        if (x.dim(1) != x.dim(2)) throw std::invalid_argument(std::string(op) + ": square input required");
        return {x.dim(0), x.dim(1), out_res, true};
    }
    throw std::invalid_argument(std::string(op) + ": expected [H,W] or [C,H,W], got " + shape_str(x.shape()));
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_res) {
    ResizePlan p = resize_plan(x, out_res, "resize_bilinear");
    int in = p.in, out = p.out, c = p.c;
    double ratio = static_cast<double>(in) / out;
    // Per output index: two source indices and an interpolation weight.
    std::vector<int> i0(static_cast<size_t>(out)), i1(static_cast<size_t>(out));
    std::vector<double> fr(static_cast<size_t>(out));
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * ratio - 0.5;
        double fl = std::floor(src);
        double f = src - fl;
        int a = static_cast<int>(fl);
        int b = a + 1;
        i0[static_cast<size_t>(o)] = std::clamp(a, 0, in - 1);
        i1[static_cast<size_t>(o)] = std::clamp(b, 0, in - 1);
        fr[static_cast<size_t>(o)] = f;
    }
    const auto& xv = x.data();
    std::vector<double> vals(static_cast<size_t>(c) * out * out);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = xv.data() + static_cast<size_t>(ch) * in * in;
        double* dst = vals.data() + static_cast<size_t>(ch) * out * out;
        for (int oy = 0; oy < out; ++oy) {
            int y0 = i0[static_cast<size_t>(oy)], y1 = i1[static_cast<size_t>(oy)];
            double fy = fr[static_cast<size_t>(oy)];
            for (int ox = 0; ox < out; ++ox) {
                int x0 = i0[static_cast<size_t>(ox)], x1 = i1[static_cast<size_t>(ox)];
                double fx = fr[static_cast<size_t>(ox)];
                double v00 = src[static_cast<size_t>(y0) * in + x0], v01 = src[static_cast<size_t>(y0) * in + x1];
                double v10 = src[static_cast<size_t>(y1) * in + x0], v11 = src[static_cast<size_t>(y1) * in + x1];
                dst[static_cast<size_t>(oy) * out + ox] =
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    Shape oshape = p.has_channels ? Shape{c, out, out} : Shape{out, out};
    Tape* tp = joint_tape({&x});
    int xn = x.node();
    return attach(tp, std::move(oshape), std::move(vals), "resize_bilinear", [&](Tape* t, int node) {
        t->record([t, node, xn, c, in, out, i0, i1, fr]() {
            auto& g = t->grad(node);
            auto& gx = t->grad(xn);
            for (int ch = 0; ch < c; ++ch) {
                const double* gdst = g.data() + static_cast<size_t>(ch) * out * out;
                double* gsrc = gx.data() + static_cast<size_t>(ch) * in * in;
                for (int oy = 0; oy < out; ++oy) {
                    int y0 = i0[static_cast<size_t>(oy)], y1 = i1[static_cast<size_t>(oy)];
                    double fy = fr[static_cast<size_t>(oy)];
                    for (int ox = 0; ox < out; ++ox) {
                        int x0 = i0[static_cast<size_t>(ox)], x1 = i1[static_cast<size_t>(ox)];
                        double fx = fr[static_cast<size_t>(ox)];
                        double go = gdst[static_cast<size_t>(oy) * out + ox];
                        gsrc[static_cast<size_t>(y0) * in + x0] += go * (1 - fy) * (1 - fx);
                        gsrc[static_cast<size_t>(y0) * in + x1] += go * (1 - fy) * fx;
                        gsrc[static_cast<size_t>(y1) * in + x0] += go * fy * (1 - fx);
                        gsrc[static_cast<size_t>(y1) * in + x1] += go * fy * fx;
                    }
                }
            }
        });
    });
}

Tensor resize_nearest(const Tensor& x, int out_res) {
    ResizePlan p = resize_plan(x, out_res, "resize_nearest");
    int in = p.in, out = p.out, c = p.c;
    std::vector<int> idx(static_cast<size_t>(out));
    for (int o = 0; o < out; ++o) {
        idx[static_cast<size_t>(o)] = std::min(in - 1, static_cast<int>(static_cast<int64_t>(o) * in / out));
    }
    const auto& xv = x.data();
    std::vector<double> vals(static_cast<size_t>(c) * out * out);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = xv.data() + static_cast<size_t>(ch) * in * in;
        double* dst = vals.data() + static_cast<size_t>(ch) * out * out;
        for (int oy = 0; oy < out; ++oy) {
            for (int ox = 0; ox < out; ++ox) {
                dst[static_cast<size_t>(oy) * out + ox] =
                    src[static_cast<size_t>(idx[static_cast<size_t>(oy)]) * in + idx[static_cast<size_t>(ox)]];
            }
        }
    }
    Shape oshape = p.has_channels ? Shape{c, out, out} : Shape{out, out};
    Tape* tp = joint_tape({&x});
    int xn = x.node();
    return attach(tp, std::move(oshape), std::move(vals), "resize_nearest", [&](Tape* t, int node) {
        t->record([t, node, xn, c, in, out, idx]() {
            auto& g = t->grad(node);
            auto& gx = t->grad(xn);
            for (int ch = 0; ch < c; ++ch) {
                const double* gdst = g.data() + static_cast<size_t>(ch) * out * out;
                double* gsrc = gx.data() + static_cast<size_t>(ch) * in * in;
                for (int oy = 0; oy < out; ++oy) {
                    for (int ox = 0; ox < out; ++ox) {
                        gsrc[static_cast<size_t>(idx[static_cast<size_t>(oy)]) * in + idx[static_cast<size_t>(ox)]] +=
                            gdst[static_cast<size_t>(oy) * out + ox];
                    }
                }
            }
        });
    });
}

Tensor scaled_softmax_nt(const Tensor& q, const Tensor& k, double scale_factor) {
    if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
        throw std::invalid_argument("scaled_softmax_nt: shapes " + shape_str(q.shape()) + " x " +
                                    shape_str(k.shape()) + "^T");
    }
    int m = q.dim(0), d = q.dim(1), n = k.dim(0);
    const auto& qv = q.data();
    const auto& kv = k.data();
    std::vector<double> vals(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* qrow = qv.data() + static_cast<size_t>(i) * d;
        double* orow = vals.data() + static_cast<size_t>(i) * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            const double* krow = kv.data() + static_cast<size_t>(j) * d;
            double s = 0;
            for (int p = 0; p < d; ++p) s += qrow[p] * krow[p];
            orow[j] = s * scale_factor;
            mx = std::max(mx, orow[j]);
        }
        double sum = 0;
        for (int j = 0; j < n; ++j) sum += (orow[j] = std::exp(orow[j] - mx));
        for (int j = 0; j < n; ++j) orow[j] /= sum;
    }
    Tape* tp = joint_tape({&q, &k});
    int qn = q.node(), kn = k.node();
    auto qd = q.storage(), kd = k.storage();
    Tensor out({m, n}, std::move(vals));
    if (tp) {
        int node = tp->alloc(out.size());
        out.set_node(tp, node);
        auto yd = out.storage();
        tp->record([tp, node, qn, kn, qd, kd, yd, m, n, d, scale_factor]() {
            auto& g = tp->grad(node);
            std::vector<double> dlog(static_cast<size_t>(n));
            for (int i = 0; i < m; ++i) {
                size_t off = static_cast<size_t>(i) * n;
                double dot = 0;
                for (int j = 0; j < n; ++j) dot += g[off + j] * (*yd)[off + j];
                for (int j = 0; j < n; ++j) dlog[static_cast<size_t>(j)] = scale_factor * (*yd)[off + j] * (g[off + j] - dot);
                const double* qrow = qd->data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < n; ++j) {
                    double dl = dlog[static_cast<size_t>(j)];
                    if (dl == 0.0) continue;
                    const double* krow = kd->data() + static_cast<size_t>(j) * d;
                    if (qn >= 0) {
                        double* gq = tp->grad(qn).data() + static_cast<size_t>(i) * d;
                        for (int p = 0; p < d; ++p) gq[p] += dl * krow[p];
                    }
                    if (kn >= 0) {
                        double* gk = tp->grad(kn).data() + static_cast<size_t>(j) * d;
                        for (int p = 0; p < d; ++p) gk[p] += dl * qrow[p];
                    }
                }
            }
        });
    }
    debug_check_finite(out, "scaled_softmax_nt");
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    int d = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
    if (d < 0) throw std::invalid_argument("concat_rows: rank-2 inputs required");
    int t_rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != d) throw std::invalid_argument("concat_rows: column count mismatch");
        t_rows += p.dim(0);
    }
    std::vector<double> vals;
    vals.reserve(static_cast<size_t>(t_rows) * d);
    std::vector<int> nodes, sizes;
    Tape* tp = nullptr;
    for (const auto& p : parts) {
        vals.insert(vals.end(), p.data().begin(), p.data().end());
        nodes.push_back(p.node());
        sizes.push_back(p.size());
        if (p.attached()) {
            if (tp && tp != p.tape()) throw std::invalid_argument("concat_rows mixes tapes");
            tp = p.tape();
        }
    }
    return attach(tp, {t_rows, d}, std::move(vals), "concat_rows", [&](Tape* t, int node) {
        t->record([t, node, nodes, sizes]() {
            auto& g = t->grad(node);
            size_t off = 0;
            for (size_t k = 0; k < nodes.size(); ++k) {
                if (nodes[k] >= 0) {
                    auto& gp = t->grad(nodes[k]);
                    for (int j = 0; j < sizes[k]; ++j) gp[static_cast<size_t>(j)] += g[off + j];
                }
                off += static_cast<size_t>(sizes[k]);
            }
        });
    });
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    if (x.rank() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1) {
        throw std::invalid_argument("slice_cols: bad slice [" + std::to_string(c0) + "," + std::to_string(c1) +
                                    ") of " + shape_str(x.shape()));
    }
    int t_rows = x.dim(0), d = x.dim(1), w = c1 - c0;
    const auto& xv = x.data();
    std::vector<double> vals(static_cast<size_t>(t_rows) * w);
    for (int r = 0; r < t_rows; ++r) {
        for (int j = 0; j < w; ++j) vals[static_cast<size_t>(r) * w + j] = xv[static_cast<size_t>(r) * d + c0 + j];
    }
    Tape* tp = joint_tape({&x});
    int xn = x.node();
    return attach(tp, {t_rows, w}, std::move(vals), "slice_cols", [&](Tape* t, int node) {
        t->record([t, node, xn, t_rows, d, w, c0]() {
            auto& g = t->grad(node);
            auto& gx = t->grad(xn);
            for (int r = 0; r < t_rows; ++r) {
                for (int j = 0; j < w; ++j) gx[static_cast<size_t>(r) * d + c0 + j] += g[static_cast<size_t>(r) * w + j];
            }
        });
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    int t_rows = parts[0].dim(0);
    int d = 0;
    std::vector<const Tensor*> ptrs;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != t_rows) throw std::invalid_argument("concat_cols: row count mismatch");
        d += p.dim(1);
        ptrs.push_back(&p);
    }
    std::vector<double> vals(static_cast<size_t>(t_rows) * d);
    std::vector<int> offsets, widths, nodes;
    int off = 0;
    for (const auto& p : parts) {
        int w = p.dim(1);
        const auto& pv = p.data();
        for (int r = 0; r < t_rows; ++r) {
            for (int j = 0; j < w; ++j) vals[static_cast<size_t>(r) * d + off + j] = pv[static_cast<size_t>(r) * w + j];
        }
        offsets.push_back(off);
        widths.push_back(w);
        nodes.push_back(p.node());
        off += w;
    }
    Tape* tp = nullptr;
    for (const auto& p : parts) {
        if (p.attached()) {
            if (tp && tp != p.tape()) throw std::invalid_argument("concat_cols mixes tapes");
            tp = p.tape();
        }
    }
    return attach(tp, {t_rows, d}, std::move(vals), "concat_cols", [&](Tape* t, int node) {
        t->record([t, node, t_rows, d, offsets, widths, nodes]() {
            auto& g = t->grad(node);
            for (size_t k = 0; k < nodes.size(); ++k) {
                if (nodes[k] < 0) continue;
                auto& gp = t->grad(nodes[k]);
                int w = widths[k], o = offsets[k];
                for (int r = 0; r < t_rows; ++r) {
                    for (int j = 0; j < w; ++j) gp[static_cast<size_t>(r) * w + j] += g[static_cast<size_t>(r) * d + o + j];
                }
            }
        });
    });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
    int d = rows[0].size();
    int t_rows = static_cast<int>(rows.size());
    std::vector<double> vals(static_cast<size_t>(t_rows) * d);
    std::vector<int> nodes;
    Tape* tp = nullptr;
    for (int r = 0; r < t_rows; ++r) {
        const auto& rv = rows[static_cast<size_t>(r)];
        if (rv.size() != d) throw std::invalid_argument("stack_rows: inconsistent row sizes");
        std::copy(rv.data().begin(), rv.data().end(), vals.begin() + static_cast<size_t>(r) * d);
        nodes.push_back(rv.node());
        if (rv.attached()) {
            if (tp && tp != rv.tape()) throw std::invalid_argument("stack_rows mixes tapes");
            tp = rv.tape();
        }
    }
    return attach(tp, {t_rows, d}, std::move(vals), "stack_rows", [&](Tape* t, int node) {
        t->record([t, node, d, nodes]() {
            auto& g = t->grad(node);
            for (size_t r = 0; r < nodes.size(); ++r) {
                if (nodes[r] < 0) continue;
                auto& gr = t->grad(nodes[r]);
                for (int j = 0; j < d; ++j) gr[static_cast<size_t>(j)] += g[r * d + j];
            }
        });
    });
}

Tensor row(const Tensor& x, int i) {
    if (x.rank() != 2 || i < 0 || i >= x.dim(0)) {
        throw std::invalid_argument("row: index " + std::to_string(i) + " out of " + shape_str(x.shape()));
    }
    int d = x.dim(1);
    const auto& xv = x.data();
    std::vector<double> vals(xv.begin() + static_cast<size_t>(i) * d, xv.begin() + static_cast<size_t>(i + 1) * d);
    Tape* tp = joint_tape({&x});
    int xn = x.node();
    return attach(tp, {d}, std::move(vals), "row", [&](Tape* t, int node) {
        t->record([t, node, xn, i, d]() {
            auto& g = t->grad(node);
            auto& gx = t->grad(xn);
            for (int j = 0; j < d; ++j) gx[static_cast<size_t>(i) * d + j] += g[static_cast<size_t>(j)];
        });
    });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
    if (table.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank 2");
    int k = table.dim(0), d = table.dim(1);
    const auto& tv = table.data();
    std::vector<double> vals(indices.size() * static_cast<size_t>(d));
    for (size_t r = 0; r < indices.size(); ++r) {
        int i = indices[r];
        if (i < 0 || i >= k) throw std::invalid_argument("gather_rows: index out of range");
        std::copy(tv.begin() + static_cast<size_t>(i) * d, tv.begin() + static_cast<size_t>(i + 1) * d,
                  vals.begin() + r * d);
    }
    Tape* tp = joint_tape({&table});
    int tn = table.node();
    return attach(tp, {static_cast<int>(indices.size()), d}, std::move(vals), "gather_rows",
                  [&](Tape* t, int node) {
                      t->record([t, node, tn, d, indices]() {
                          auto& g = t->grad(node);
                          auto& gt = t->grad(tn);
                          for (size_t r = 0; r < indices.size(); ++r) {
                              for (int j = 0; j < d; ++j) {
                                  gt[static_cast<size_t>(indices[r]) * d + j] += g[r * d + j];
                              }
                          }
                      });
                  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() != 2) throw std::invalid_argument("layer_norm: expected [T,d], got " + shape_str(x.shape()));
    int t_rows = x.dim(0), d = x.dim(1);
    if (gain.size() != d || bias.size() != d) throw std::invalid_argument("layer_norm: gain/bias size mismatch");
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    std::vector<double> vals(xv.size());
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(t_rows));
    for (int r = 0; r < t_rows; ++r) {
        const double* src = xv.data() + static_cast<size_t>(r) * d;
        double mu = 0;
        for (int j = 0; j < d; ++j) mu += src[j];
        mu /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
        var /= d;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[static_cast<size_t>(r)] = is;
        for (int j = 0; j < d; ++j) {
            double xh = (src[j] - mu) * is;
            (*xhat)[static_cast<size_t>(r) * d + j] = xh;
            vals[static_cast<size_t>(r) * d + j] = gv[static_cast<size_t>(j)] * xh + bv[static_cast<size_t>(j)];
        }
    }
    Tape* tp = joint_tape({&x, &gain, &bias});
    int xn = x.node(), gn = gain.node(), bn = bias.node();
    auto gd = gain.storage();
    return attach(tp, x.shape(), std::move(vals), "layer_norm", [&](Tape* t, int node) {
        t->record([t, node, xn, gn, bn, gd, xhat, inv_sigma, t_rows, d]() {
            auto& g = t->grad(node);
            for (int r = 0; r < t_rows; ++r) {
                size_t off = static_cast<size_t>(r) * d;
                if (gn >= 0) {
                    auto& gg = t->grad(gn);
                    for (int j = 0; j < d; ++j) gg[static_cast<size_t>(j)] += g[off + j] * (*xhat)[off + j];
                }
                if (bn >= 0) {
                    auto& gb = t->grad(bn);
                    for (int j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += g[off + j];
                }
                if (xn >= 0) {
                    auto& gx = t->grad(xn);
                    double m1 = 0, m2 = 0;
                    for (int j = 0; j < d; ++j) {
                        double dxh = g[off + j] * (*gd)[static_cast<size_t>(j)];
                        m1 += dxh;
                        m2 += dxh * (*xhat)[off + j];
                    }
                    m1 /= d;
                    m2 /= d;
                    double is = (*inv_sigma)[static_cast<size_t>(r)];
                    for (int j = 0; j < d; ++j) {
                        double dxh = g[off + j] * (*gd)[static_cast<size_t>(j)];
                        gx[off + j] += is * (dxh - m1 - (*xhat)[off + j] * m2);
                    }
                }
            }
        });
    });
}

Tensor rope_rotate_2d(const Tensor& x, const std::vector<std::pair<double, double>>& coords) {
    if (x.rank() != 2) throw std::invalid_argument("rope_rotate_2d: expected [T,d_h], got " + shape_str(x.shape()));
    int t_rows = x.dim(0), dh = x.dim(1);
    if (dh % 4 != 0) throw std::invalid_argument("rope_rotate_2d: head dim " + std::to_string(dh) + " not divisible by 4");
    if (static_cast<int>(coords.size()) != t_rows) throw std::invalid_argument("rope_rotate_2d: coords count mismatch");
    int half = dh / 2, npairs = dh / 4;
    // Precompute cos/sin per (token, half, pair).
    auto cs = std::make_shared<std::vector<double>>(static_cast<size_t>(t_rows) * dh);
    const auto& xv = x.data();
    std::vector<double> vals(xv.size());
    for (int r = 0; r < t_rows; ++r) {
        double cyx[2] = {coords[static_cast<size_t>(r)].first, coords[static_cast<size_t>(r)].second};
        for (int hhalf = 0; hhalf < 2; ++hhalf) {
            for (int i = 0; i < npairs; ++i) {
                double theta = std::pow(10000.0, -2.0 * i / half);
                double ang = cyx[hhalf] * theta;
                double c = std::cos(ang), s = std::sin(ang);
                size_t base = static_cast<size_t>(r) * dh + static_cast<size_t>(hhalf) * half + 2 * i;
                (*cs)[base] = c;
                (*cs)[base + 1] = s;
                double v0 = xv[base], v1 = xv[base + 1];
                vals[base] = c * v0 - s * v1;
                vals[base + 1] = s * v0 + c * v1;
            }
        }
    }
    Tape* tp = joint_tape({&x});
    int xn = x.node();
    return attach(tp, x.shape(), std::move(vals), "rope_rotate_2d", [&](Tape* t, int node) {
        t->record([t, node, xn, cs, t_rows, dh]() {
            auto& g = t->grad(node);
            auto& gx = t->grad(xn);
            for (size_t base = 0; base < static_cast<size_t>(t_rows) * dh; base += 2) {
                double c = (*cs)[base], s = (*cs)[base + 1];
                double g0 = g[base], g1 = g[base + 1];
                gx[base] += c * g0 + s * g1;
                gx[base + 1] += -s * g0 + c * g1;
            }
        });
    });
}

Tensor broadcast_spatial(const Tensor& v, int h, int w) {
    if (v.rank() != 1) throw std::invalid_argument("broadcast_spatial: expected [C], got " + shape_str(v.shape()));
    int c = v.dim(0);
    const auto& vv = v.data();
    std::vector<double> vals(static_cast<size_t>(c) * h * w);
    for (int ch = 0; ch < c; ++ch) {
        std::fill(vals.begin() + static_cast<size_t>(ch) * h * w, vals.begin() + static_cast<size_t>(ch + 1) * h * w,
                  vv[static_cast<size_t>(ch)]);
    }
    Tape* tp = joint_tape({&v});
    int vn = v.node();
    return attach(tp, {c, h, w}, std::move(vals), "broadcast_spatial", [&](Tape* t, int node) {
        t->record([t, node, vn, c, h, w]() {
            auto& g = t->grad(node);
            auto& gv = t->grad(vn);
            for (int ch = 0; ch < c; ++ch) {
                double s = 0;
                for (int i = 0; i < h * w; ++i) s += g[static_cast<size_t>(ch) * h * w + i];
                gv[static_cast<size_t>(ch)] += s;
            }
        });
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> vals = x.data();
    Tape* tp = joint_tape({&x});
    int xn = x.node();
    return attach(tp, std::move(shape), std::move(vals), "reshape", [&](Tape* t, int node) {
        t->record([t, node, xn]() {
            auto& g = t->grad(node);
            auto& gx = t->grad(xn);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    });
}

Tensor chw_to_tokens(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("chw_to_tokens: expected [C,H,W]");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto& xv = x.data();
    std::vector<double> vals(xv.size());
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h * w; ++i) {
            vals[static_cast<size_t>(i) * c + ch] = xv[static_cast<size_t>(ch) * h * w + i];
        }
    }
    Tape* tp = joint_tape({&x});
    int xn = x.node();
    return attach(tp, {h * w, c}, std::move(vals), "chw_to_tokens", [&](Tape* t, int node) {
        t->record([t, node, xn, c, h, w]() {
            auto& g = t->grad(node);
            auto& gx = t->grad(xn);
            for (int ch = 0; ch < c; ++ch) {
                for (int i = 0; i < h * w; ++i) {
                    gx[static_cast<size_t>(ch) * h * w + i] += g[static_cast<size_t>(i) * c + ch];
                }
            }
        });
    });
}

Tensor tokens_to_chw(const Tensor& x, int channels, int h, int w) {
    if (x.rank() != 2 || x.dim(0) != h * w || x.dim(1) != channels) {
        throw std::invalid_argument("tokens_to_chw: shape " + shape_str(x.shape()) + " incompatible");
    }
    const auto& xv = x.data();
    std::vector<double> vals(xv.size());
    for (int ch = 0; ch < channels; ++ch) {
        for (int i = 0; i < h * w; ++i) {
            vals[static_cast<size_t>(ch) * h * w + i] = xv[static_cast<size_t>(i) * channels + ch];
        }
    }
    Tape* tp = joint_tape({&x});
    int xn = x.node();
    return attach(tp, {channels, h, w}, std::move(vals), "tokens_to_chw", [&](Tape* t, int node) {
        t->record([t, node, xn, channels, h, w]() {
            auto& g = t->grad(node);
            auto& gx = t->grad(xn);
            for (int ch = 0; ch < channels; ++ch) {
                for (int i = 0; i < h * w; ++i) {
                    gx[static_cast<size_t>(i) * channels + ch] += g[static_cast<size_t>(ch) * h * w + i];
                }
            }
        });
    });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape()) {
        throw std::invalid_argument("bce_with_logits: shape mismatch " + shape_str(logits.shape()) + " vs " +
                                    shape_str(targets.shape()));
    }
    if (targets.attached()) throw std::invalid_argument("bce_with_logits: targets must be detached");
    const auto& zv = logits.data();
    const auto& yv = targets.data();
    double loss = 0;
    for (size_t i = 0; i < zv.size(); ++i) {
        double z = zv[i], y = yv[i];
        loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= static_cast<double>(zv.size());
    Tape* tp = joint_tape({&logits});
    int zn = logits.node();
    auto zd = logits.storage(), yd = targets.storage();
    return attach(tp, {1}, {loss}, "bce_with_logits", [&](Tape* t, int node) {
        t->record([t, node, zn, zd, yd]() {
            double g = t->grad(node)[0] / static_cast<double>(zd->size());
            auto& gz = t->grad(zn);
            for (size_t i = 0; i < zd->size(); ++i) {
                double z = (*zd)[i];
                double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                gz[i] += g * (s - (*yd)[i]);
            }
        });
    });
}

}  // namespace picl
