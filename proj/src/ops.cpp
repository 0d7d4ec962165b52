#include "msa2/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace msa2::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool wants(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

void push(Node& n, std::size_t i, Tensor g) {
    if (wants(n, i)) n.inputs[i]->accumulate(g);
}

const Tensor& in(const Node& n, std::size_t i) { return n.inputs[i]->value; }

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

template <typename F, typename D>
Var unary(const Var& x, F f, D df) {
    const Tensor& xv = x.value();
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = f(xv[i]);
    return make_result(std::move(y), {x}, [df](Node& n) {
        const Tensor& xv = in(n, 0);
        Tensor g(xv.shape());
        for (std::size_t i = 0; i < xv.numel(); ++i) g[i] = n.grad[i] * df(xv[i], n.value[i]);
        push(n, 0, std::move(g));
    });
}

}  // namespace

Var add(const Var& a, const Var& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor y = a.value();
    y.add_(b.value());
    return make_result(std::move(y), {a, b}, [](Node& n) {
        push(n, 0, n.grad);
        push(n, 1, n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
    return make_result(std::move(y), {a, b}, [](Node& n) {
        const Tensor& av = in(n, 0);
        const Tensor& bv = in(n, 1);
        if (wants(n, 0)) {
            Tensor g(av.shape());
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * bv[i];
            push(n, 0, std::move(g));
        }
        if (wants(n, 1)) {
            Tensor g(bv.shape());
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * av[i];
            push(n, 1, std::move(g));
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor y = a.value();
    y.scale_(s);
    return make_result(std::move(y), {a}, [s](Node& n) {
        Tensor g = n.grad;
        g.scale_(s);
        push(n, 0, std::move(g));
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor y = x.value().reshaped(std::move(shape));
    return make_result(std::move(y), {x}, [](Node& n) { push(n, 0, n.grad.reshaped(in(n, 0).shape())); });
}

Var mul_channels(const Var& x, const Var& s) {
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    const int c = xv.dim(-1);
    const bool per_sample = sv.rank() == 2;
    if (sv.dim(-1) != c || (per_sample && (xv.rank() != 4 || sv.dim(0) != xv.dim(0))) ||
        (!per_sample && sv.rank() != 1))
        throw ShapeError("mul_channels: " + shape_str(xv.shape()) + " by " + shape_str(sv.shape()));
    const std::size_t rows = xv.numel() / static_cast<std::size_t>(c);
    const std::size_t rows_per_sample = per_sample ? rows / static_cast<std::size_t>(xv.dim(0)) : rows;
    Tensor y(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* sp = sv.data() + (per_sample ? (r / rows_per_sample) * c : 0);
        for (int k = 0; k < c; ++k) y[r * c + k] = xv[r * c + k] * sp[k];
    }
    return make_result(std::move(y), {x, s}, [c, per_sample, rows, rows_per_sample](Node& n) {
        const Tensor& xv = in(n, 0);
        const Tensor& sv = in(n, 1);
        if (wants(n, 0)) {
            Tensor g(xv.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                const double* sp = sv.data() + (per_sample ? (r / rows_per_sample) * c : 0);
                for (int k = 0; k < c; ++k) g[r * c + k] = n.grad[r * c + k] * sp[k];
            }
            push(n, 0, std::move(g));
        }
        if (wants(n, 1)) {
            Tensor g(sv.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                double* gp = g.data() + (per_sample ? (r / rows_per_sample) * c : 0);
                for (int k = 0; k < c; ++k) gp[k] += n.grad[r * c + k] * xv[r * c + k];
            }
            push(n, 1, std::move(g));
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require_rank(wv, 2, "linear weight");
    const int cin = wv.dim(0), cout = wv.dim(1);
    if (xv.dim(-1) != cin)
        throw ShapeError("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
    if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != cout))
        throw ShapeError("linear: bias " + shape_str(bias.value().shape()));
    const Eigen::Index rows = static_cast<Eigen::Index>(xv.numel() / cin);
    Shape out_shape = xv.shape();
    out_shape.back() = cout;
    Tensor y(out_shape);
    MapMat ym(y.data(), rows, cout);
    ym.noalias() = CMapMat(xv.data(), rows, cin) * CMapMat(wv.data(), cin, cout);
    if (bias.defined()) ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), cout);

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(y), std::move(inputs), [rows, cin, cout](Node& n) {
        CMapMat gm(n.grad.data(), rows, cout);
        if (wants(n, 0)) {
            Tensor g(in(n, 0).shape());
            MapMat(g.data(), rows, cin).noalias() = gm * CMapMat(in(n, 1).data(), cin, cout).transpose();
            push(n, 0, std::move(g));
        }
        if (wants(n, 1)) {
            Tensor g(in(n, 1).shape());
            MapMat(g.data(), cin, cout).noalias() = CMapMat(in(n, 0).data(), rows, cin).transpose() * gm;
            push(n, 1, std::move(g));
        }
        if (n.inputs.size() > 2 && wants(n, 2)) {
            Tensor g(Shape{cout});
            Eigen::Map<Eigen::RowVectorXd>(g.data(), cout) = gm.colwise().sum();
            push(n, 2, std::move(g));
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x.value();
    const int c = xv.dim(-1);
    if (gamma.value().numel() != static_cast<std::size_t>(c) || beta.value().numel() != static_cast<std::size_t>(c))
        throw ShapeError("layer_norm: affine size mismatch for " + shape_str(xv.shape()));
    const std::size_t rows = xv.numel() / c;
    Tensor y(xv.shape());
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(rows);
    const double* g = gamma.value().data();
    const double* b = beta.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * c;
        double mean = 0.0;
        for (int k = 0; k < c; ++k) mean += xr[k];
        mean /= c;
        double var = 0.0;
        for (int k = 0; k < c; ++k) var += (xr[k] - mean) * (xr[k] - mean);
        var /= c;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int k = 0; k < c; ++k) {
            const double h = (xr[k] - mean) * is;
            xhat[r * c + k] = h;
            y[r * c + k] = g[k] * h + b[k];
        }
    }
    return make_result(std::move(y), {x, gamma, beta},
                       [c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                           const double* g = in(n, 1).data();
                           if (wants(n, 0)) {
                               Tensor dx(in(n, 0).shape());
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (int k = 0; k < c; ++k) {
                                       const double dh = n.grad[r * c + k] * g[k];
                                       m1 += dh;
                                       m2 += dh * xhat[r * c + k];
                                   }
                                   m1 /= c;
                                   m2 /= c;
                                   for (int k = 0; k < c; ++k) {
                                       const double dh = n.grad[r * c + k] * g[k];
                                       dx[r * c + k] = inv_std[r] * (dh - m1 - xhat[r * c + k] * m2);
                                   }
                               }
                               push(n, 0, std::move(dx));
                           }
                           if (wants(n, 1) || wants(n, 2)) {
                               Tensor dg(Shape{c}), db(Shape{c});
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (int k = 0; k < c; ++k) {
                                       dg[k] += n.grad[r * c + k] * xhat[r * c + k];
                                       db[k] += n.grad[r * c + k];
                                   }
                               push(n, 1, std::move(dg));
                               push(n, 2, std::move(db));
                           }
                       });
}

Var gelu(const Var& x) {
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
}

Var relu(const Var& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var softmax_last(const Var& x) {
    const Tensor& xv = x.value();
    const int c = xv.dim(-1);
    const std::size_t rows = xv.numel() / c;
    Tensor y(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * c;
        double m = xr[0];
        for (int k = 1; k < c; ++k) m = std::max(m, xr[k]);
        double s = 0.0;
        for (int k = 0; k < c; ++k) s += (y[r * c + k] = std::exp(xr[k] - m));
        for (int k = 0; k < c; ++k) y[r * c + k] /= s;
    }
    return make_result(std::move(y), {x}, [c, rows](Node& n) {
        Tensor g(n.value.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int k = 0; k < c; ++k) dot += n.grad[r * c + k] * n.value[r * c + k];
            for (int k = 0; k < c; ++k) g[r * c + k] = n.value[r * c + k] * (n.grad[r * c + k] - dot);
        }
        push(n, 0, std::move(g));
    });
}

Var space_to_depth(const Var& x, int p) {
    const Tensor& xv = x.value();
    require_rank(xv, 4, "space_to_depth");
    const int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
    if (p < 1 || H % p || W % p)
        throw ShapeError("space_to_depth: " + shape_str(xv.shape()) + " not divisible by " + std::to_string(p));
    const int Ho = H / p, Wo = W / p, Co = p * p * C;
    Tensor y(Shape{N, Ho, Wo, Co});
    auto map = [=](auto&& f) {
        for (int n = 0; n < N; ++n)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx) {
                            const std::size_t src = ((static_cast<std::size_t>(n) * H + i * p + dy) * W + j * p + dx) * C;
                            const std::size_t dst =
                                ((static_cast<std::size_t>(n) * Ho + i) * Wo + j) * Co + (dy * p + dx) * C;
                            f(src, dst);
                        }
    };
    map([&](std::size_t src, std::size_t dst) { std::copy_n(xv.data() + src, C, y.data() + dst); });
    return make_result(std::move(y), {x}, [map, C](Node& n) {
        Tensor g(in(n, 0).shape());
        map([&](std::size_t src, std::size_t dst) { std::copy_n(n.grad.data() + dst, C, g.data() + src); });
        push(n, 0, std::move(g));
    });
}

Var depthwise_conv2d(const Var& x, const Var& kernel) {
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    require_rank(xv, 4, "depthwise_conv2d input");
    require_rank(kv, 3, "depthwise_conv2d kernel");
    const int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
    const int k = kv.dim(0);
    if (kv.dim(1) != k || k % 2 == 0)
        throw ShapeError("depthwise_conv2d: kernel must be odd and square, got " + shape_str(kv.shape()));
    if (kv.dim(2) != C)
        throw ShapeError("depthwise_conv2d: channel mismatch " + shape_str(xv.shape()) + " vs " + shape_str(kv.shape()));
    const int pad = (k - 1) / 2;

    // clamped source index for every output row/col and tap
    std::vector<int> rows(static_cast<std::size_t>(H) * k), cols(static_cast<std::size_t>(W) * k);
    for (int i = 0; i < H; ++i)
        for (int t = 0; t < k; ++t) rows[i * k + t] = std::clamp(i + t - pad, 0, H - 1);
    for (int j = 0; j < W; ++j)
        for (int t = 0; t < k; ++t) cols[j * k + t] = std::clamp(j + t - pad, 0, W - 1);

    Tensor y(xv.shape());
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double* out = y.ptr(n, i, j, 0);
                for (int ty = 0; ty < k; ++ty) {
                    const int si = rows[i * k + ty];
                    for (int tx = 0; tx < k; ++tx) {
                        const double* src = xv.ptr(n, si, cols[j * k + tx], 0);
                        const double* w = kv.data() + (static_cast<std::size_t>(ty) * k + tx) * C;
                        for (int c = 0; c < C; ++c) out[c] += w[c] * src[c];
                    }
                }
            }
    return make_result(std::move(y), {x, kernel}, [=, rows = std::move(rows), cols = std::move(cols)](Node& n) {
        const Tensor& xv = in(n, 0);
        const Tensor& kv = in(n, 1);
        const bool gx = wants(n, 0), gk = wants(n, 1);
        Tensor dx = gx ? Tensor(xv.shape()) : Tensor();
        Tensor dk = gk ? Tensor(kv.shape()) : Tensor();
        for (int b = 0; b < N; ++b)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double* go = n.grad.ptr(b, i, j, 0);
                    for (int ty = 0; ty < k; ++ty) {
                        const int si = rows[i * k + ty];
                        for (int tx = 0; tx < k; ++tx) {
                            const int sj = cols[j * k + tx];
                            const std::size_t woff = (static_cast<std::size_t>(ty) * k + tx) * C;
                            if (gx) {
                                double* d = dx.ptr(b, si, sj, 0);
                                const double* w = kv.data() + woff;
                                for (int c = 0; c < C; ++c) d[c] += w[c] * go[c];
                            }
                            if (gk) {
                                double* d = dk.data() + woff;
                                const double* src = xv.ptr(b, si, sj, 0);
                                for (int c = 0; c < C; ++c) d[c] += src[c] * go[c];
                            }
                        }
                    }
                }
        if (gx) push(n, 0, std::move(dx));
        if (gk) push(n, 1, std::move(dk));
    });
}

namespace {

struct Interp {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

Interp bilinear_axis(int in_size, int factor) {
    const int out = in_size * factor;
    Interp t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) / factor - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in_size - 1) i0 = in_size - 1;
        t.lo[o] = i0;
        t.hi[o] = std::min(i0 + 1, in_size - 1);
        t.frac[o] = src - i0;
    }
    return t;
}

}  // namespace

Var upsample_bilinear(const Var& x, int factor) {
    const Tensor& xv = x.value();
    require_rank(xv, 4, "upsample_bilinear");
    if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
    const int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
    const int Ho = H * factor, Wo = W * factor;
    Interp ry = bilinear_axis(H, factor), rx = bilinear_axis(W, factor);
    Tensor y(Shape{N, Ho, Wo, C});
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < Ho; ++i) {
            const double fy = ry.frac[i];
            for (int j = 0; j < Wo; ++j) {
                const double fx = rx.frac[j];
                const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
                const double* a = xv.ptr(n, ry.lo[i], rx.lo[j], 0);
                const double* b = xv.ptr(n, ry.lo[i], rx.hi[j], 0);
                const double* c = xv.ptr(n, ry.hi[i], rx.lo[j], 0);
                const double* d = xv.ptr(n, ry.hi[i], rx.hi[j], 0);
                double* out = y.ptr(n, i, j, 0);
                for (int k = 0; k < C; ++k) out[k] = w00 * a[k] + w01 * b[k] + w10 * c[k] + w11 * d[k];
            }
        }
    return make_result(std::move(y), {x}, [=, ry = std::move(ry), rx = std::move(rx)](Node& nd) {
        Tensor g(in(nd, 0).shape());
        for (int n = 0; n < N; ++n)
            for (int i = 0; i < Ho; ++i) {
                const double fy = ry.frac[i];
                for (int j = 0; j < Wo; ++j) {
                    const double fx = rx.frac[j];
                    const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
                    const double* go = nd.grad.ptr(n, i, j, 0);
                    double* a = g.ptr(n, ry.lo[i], rx.lo[j], 0);
                    double* b = g.ptr(n, ry.lo[i], rx.hi[j], 0);
                    double* c = g.ptr(n, ry.hi[i], rx.lo[j], 0);
                    double* d = g.ptr(n, ry.hi[i], rx.hi[j], 0);
                    for (int k = 0; k < C; ++k) {
                        a[k] += w00 * go[k];
                        b[k] += w01 * go[k];
                        c[k] += w10 * go[k];
                        d[k] += w11 * go[k];
                    }
                }
            }
        push(nd, 0, std::move(g));
    });
}

Var global_avg_pool(const Var& x) {
    const Tensor& xv = x.value();
    require_rank(xv, 4, "global_avg_pool");
    const int N = xv.dim(0), C = xv.dim(3);
    const int HW = xv.dim(1) * xv.dim(2);
    Tensor y(Shape{N, C});
    for (int n = 0; n < N; ++n) {
        const double* src = xv.data() + static_cast<std::size_t>(n) * HW * C;
        for (int p = 0; p < HW; ++p)
            for (int c = 0; c < C; ++c) y[n * C + c] += src[static_cast<std::size_t>(p) * C + c];
        for (int c = 0; c < C; ++c) y[n * C + c] /= HW;
    }
    return make_result(std::move(y), {x}, [N, C, HW](Node& nd) {
        Tensor g(in(nd, 0).shape());
        for (int n = 0; n < N; ++n) {
            double* dst = g.data() + static_cast<std::size_t>(n) * HW * C;
            for (int p = 0; p < HW; ++p)
                for (int c = 0; c < C; ++c) dst[static_cast<std::size_t>(p) * C + c] = nd.grad[n * C + c] / HW;
        }
        push(nd, 0, std::move(g));
    });
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    Shape base = parts[0].shape();
    std::vector<int> widths;
    int total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != base.size()) throw ShapeError("concat_channels: rank mismatch");
        for (std::size_t d = 0; d + 1 < s.size(); ++d)
            if (s[d] != base[d])
                throw ShapeError("concat_channels: " + shape_str(s) + " vs " + shape_str(base));
        widths.push_back(s.back());
        total += s.back();
    }
    Shape out_shape = base;
    out_shape.back() = total;
    Tensor y(out_shape);
    const std::size_t rows = y.numel() / total;
    int offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(pv.data() + r * widths[k], widths[k], y.data() + r * total + offset);
        offset += widths[k];
    }
    return make_result(std::move(y), parts, [widths, rows, total](Node& n) {
        int offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (wants(n, k)) {
                Tensor g(in(n, k).shape());
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy_n(n.grad.data() + r * total + offset, widths[k], g.data() + r * widths[k]);
                push(n, k, std::move(g));
            }
            offset += widths[k];
        }
    });
}

Var slice_channels(const Var& x, int begin, int end) {
    const Tensor& xv = x.value();
    const int c = xv.dim(-1);
    if (begin < 0 || end > c || begin >= end)
        throw ShapeError("slice_channels: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(xv.shape()));
    const int w = end - begin;
    Shape out_shape = xv.shape();
    out_shape.back() = w;
    Tensor y(out_shape);
    const std::size_t rows = xv.numel() / c;
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * c + begin, w, y.data() + r * w);
    return make_result(std::move(y), {x}, [rows, c, w, begin](Node& n) {
        Tensor g(in(n, 0).shape());
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(n.grad.data() + r * w, w, g.data() + r * c + begin);
        push(n, 0, std::move(g));
    });
}

Var mix_kernels(const Var& probs, const std::vector<Var>& candidates) {
    const Tensor& pv = probs.value();
    if (pv.numel() != candidates.size() || candidates.empty())
        throw ShapeError("mix_kernels: " + std::to_string(pv.numel()) + " weights for " +
                         std::to_string(candidates.size()) + " candidates");
    int kmax = 0;
    const int C = candidates[0].value().dim(2);
    for (const auto& cand : candidates) {
        const Tensor& cv = cand.value();
        if (cv.rank() != 3 || cv.dim(0) != cv.dim(1) || cv.dim(0) % 2 == 0 || cv.dim(2) != C)
            throw ShapeError("mix_kernels: bad candidate " + shape_str(cv.shape()));
        kmax = std::max(kmax, cv.dim(0));
    }
    Tensor y(Shape{kmax, kmax, C});
    auto embed = [kmax, C](const Tensor& cv, auto&& f) {
        const int k = cv.dim(0);
        const int off = (kmax - k) / 2;
        for (int ty = 0; ty < k; ++ty)
            for (int tx = 0; tx < k; ++tx)
                f((static_cast<std::size_t>(ty) * k + tx) * C,
                  (static_cast<std::size_t>(ty + off) * kmax + tx + off) * C);
    };
    for (std::size_t j = 0; j < candidates.size(); ++j) {
        const Tensor& cv = candidates[j].value();
        const double p = pv[j];
        embed(cv, [&](std::size_t src, std::size_t dst) {
            for (int c = 0; c < C; ++c) y[dst + c] += p * cv[src + c];
        });
    }
    std::vector<Var> inputs{probs};
    inputs.insert(inputs.end(), candidates.begin(), candidates.end());
    return make_result(std::move(y), std::move(inputs), [embed, C](Node& n) {
        const Tensor& pv = in(n, 0);
        Tensor dp(pv.shape());
        for (std::size_t j = 0; j < pv.numel(); ++j) {
            const Tensor& cv = in(n, j + 1);
            const bool gw = wants(n, j + 1);
            Tensor dw = gw ? Tensor(cv.shape()) : Tensor();
            double acc = 0.0;
            embed(cv, [&](std::size_t src, std::size_t dst) {
                for (int c = 0; c < C; ++c) {
                    acc += n.grad[dst + c] * cv[src + c];
                    if (gw) dw[src + c] = pv[j] * n.grad[dst + c];
                }
            });
            dp[j] = acc;
            if (gw) push(n, j + 1, std::move(dw));
        }
        push(n, 0, std::move(dp));
    });
}

namespace {

// Token offsets (y*W + x) of every stripe for one orientation.
std::vector<std::vector<int>> stripe_tokens(int H, int W, int stripe, bool horizontal) {
    std::vector<std::vector<int>> out;
    const int extent = horizontal ? H : W;
    for (int s0 = 0; s0 < extent; s0 += stripe) {
        const int s1 = std::min(extent, s0 + stripe);
        std::vector<int> toks;
        if (horizontal) {
            for (int y = s0; y < s1; ++y)
                for (int x = 0; x < W; ++x) toks.push_back(y * W + x);
        } else {
            for (int y = 0; y < H; ++y)
                for (int x = s0; x < s1; ++x) toks.push_back(y * W + x);
        }
        out.push_back(std::move(toks));
    }
    return out;
}

struct AttnLayout {
    int N, H, W, C, heads, d;
    std::vector<std::vector<int>> horiz, vert;
};

AttnLayout attn_layout(const Tensor& qkv, int heads, int stripe) {
    if (qkv.rank() != 4) throw ShapeError("stripe_attention: expected [N,H,W,3C], got " + shape_str(qkv.shape()));
    AttnLayout L{};
    L.N = qkv.dim(0);
    L.H = qkv.dim(1);
    L.W = qkv.dim(2);
    if (qkv.dim(3) % 3) throw ShapeError("stripe_attention: channel count not a multiple of 3");
    L.C = qkv.dim(3) / 3;
    if (heads < 2 || heads % 2) throw ConfigError("stripe_attention: heads must be even and >= 2");
    if (L.C % heads) throw ConfigError("stripe_attention: channels " + std::to_string(L.C) + " not divisible by heads " +
                                       std::to_string(heads));
    if (stripe < 1) throw ConfigError("stripe_attention: stripe width must be >= 1");
    L.heads = heads;
    L.d = L.C / heads;
    L.horiz = stripe_tokens(L.H, L.W, stripe, true);
    L.vert = stripe_tokens(L.H, L.W, stripe, false);
    return L;
}

// Visits every (sample, head, stripe) group with the Q/K/V matrices gathered.
template <typename F>
void for_each_group(const AttnLayout& L, const Tensor& qkv, F&& f) {
    const int C3 = 3 * L.C;
    for (int n = 0; n < L.N; ++n)
        for (int h = 0; h < L.heads; ++h) {
            const auto& groups = h < L.heads / 2 ? L.horiz : L.vert;
            for (const auto& toks : groups) {
                const int len = static_cast<int>(toks.size());
                RowMat q(len, L.d), k(len, L.d), v(len, L.d);
                for (int t = 0; t < len; ++t) {
                    const double* row = qkv.data() + (static_cast<std::size_t>(n) * L.H * L.W + toks[t]) * C3;
                    for (int e = 0; e < L.d; ++e) {
                        q(t, e) = row[h * L.d + e];
                        k(t, e) = row[L.C + h * L.d + e];
                        v(t, e) = row[2 * L.C + h * L.d + e];
                    }
                }
                f(n, h, toks, q, k, v);
            }
        }
}

void row_softmax(RowMat& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
    }
}

}  // namespace

std::vector<Tensor> stripe_attention_weights(const Tensor& qkv, int heads, int stripe) {
    AttnLayout L = attn_layout(qkv, heads, stripe);
    const double sc = 1.0 / std::sqrt(static_cast<double>(L.d));
    std::vector<Tensor> out;
    for_each_group(L, qkv, [&](int, int, const std::vector<int>&, const RowMat& q, const RowMat& k, const RowMat&) {
        RowMat s = (q * k.transpose()) * sc;
        row_softmax(s);
        const int len = static_cast<int>(s.rows());
        Tensor t(Shape{len, len});
        MapMat(t.data(), len, len) = s;
        out.push_back(std::move(t));
    });
    return out;
}

Var stripe_attention(const Var& qkv, int heads, int stripe) {
    const Tensor& qv = qkv.value();
    AttnLayout L = attn_layout(qv, heads, stripe);
    const double sc = 1.0 / std::sqrt(static_cast<double>(L.d));
    Tensor y(Shape{L.N, L.H, L.W, L.C});
    auto probs = std::make_shared<std::vector<RowMat>>();
    const bool keep = grad_enabled() && qkv.requires_grad();
    for_each_group(L, qv, [&](int n, int h, const std::vector<int>& toks, const RowMat& q, const RowMat& k,
                              const RowMat& v) {
        RowMat p = (q * k.transpose()) * sc;
        row_softmax(p);
        RowMat o = p * v;
        for (std::size_t t = 0; t < toks.size(); ++t) {
            double* dst = y.data() + (static_cast<std::size_t>(n) * L.H * L.W + toks[t]) * L.C + h * L.d;
            for (int e = 0; e < L.d; ++e) dst[e] = o(static_cast<Eigen::Index>(t), e);
        }
        if (keep) probs->push_back(std::move(p));
    });
    return make_result(std::move(y), {qkv}, [L = std::move(L), probs, sc](Node& nd) {
        const Tensor& qv = in(nd, 0);
        Tensor g(qv.shape());
        const int C3 = 3 * L.C;
        std::size_t idx = 0;
        for_each_group(L, qv, [&](int n, int h, const std::vector<int>& toks, const RowMat& q, const RowMat& k,
                                  const RowMat& v) {
            const RowMat& p = (*probs)[idx++];
            const int len = static_cast<int>(toks.size());
            RowMat go(len, L.d);
            for (int t = 0; t < len; ++t) {
                const double* src = nd.grad.data() + (static_cast<std::size_t>(n) * L.H * L.W + toks[t]) * L.C + h * L.d;
                for (int e = 0; e < L.d; ++e) go(t, e) = src[e];
            }
            RowMat dv = p.transpose() * go;
            RowMat dp = go * v.transpose();
            Eigen::VectorXd rs = (dp.array() * p.array()).rowwise().sum();
            RowMat ds = p.array() * (dp.colwise() - rs).array();
            RowMat dq = (ds * k) * sc;
            RowMat dk = (ds.transpose() * q) * sc;
            for (int t = 0; t < len; ++t) {
                double* row = g.data() + (static_cast<std::size_t>(n) * L.H * L.W + toks[t]) * C3;
                for (int e = 0; e < L.d; ++e) {
                    row[h * L.d + e] += dq(t, e);
                    row[L.C + h * L.d + e] += dk(t, e);
                    row[2 * L.C + h * L.d + e] += dv(t, e);
                }
            }
        });
        push(nd, 0, std::move(g));
    });
}

Var segmentation_loss(const Var& logits, std::span<const std::uint8_t> labels, double ce_weight, double dice_weight) {
    const Tensor& zv = logits.value();
    const int K = zv.dim(-1);
    const std::size_t M = zv.numel() / K;
    if (labels.size() != M)
        throw ShapeError("segmentation_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(M) +
                         " pixels");
    if (K < 2) throw ShapeError("segmentation_loss: need at least 2 classes");
    Tensor p(zv.shape());
    double ce = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        if (labels[m] >= K) throw DataError("segmentation_loss: label out of range");
        const double* z = zv.data() + m * K;
        double mx = z[0];
        for (int c = 1; c < K; ++c) mx = std::max(mx, z[c]);
        double s = 0.0;
        for (int c = 0; c < K; ++c) s += (p[m * K + c] = std::exp(z[c] - mx));
        for (int c = 0; c < K; ++c) p[m * K + c] /= s;
        ce -= (z[labels[m]] - mx) - std::log(s);
    }
    ce /= static_cast<double>(M);

    constexpr double eps = 1.0;
    std::vector<double> inter(K, 0.0), psum(K, 0.0), tsum(K, 0.0);
    for (std::size_t m = 0; m < M; ++m)
        for (int c = 1; c < K; ++c) {
            const double pc = p[m * K + c];
            psum[c] += pc;
            if (labels[m] == c) {
                inter[c] += pc;
                tsum[c] += 1.0;
            }
        }
    double dice_mean = 0.0;
    for (int c = 1; c < K; ++c) dice_mean += (2.0 * inter[c] + eps) / (psum[c] + tsum[c] + eps);
    dice_mean /= (K - 1);
    const double loss = ce_weight * ce + dice_weight * (1.0 - dice_mean);

    std::vector<std::uint8_t> lab(labels.begin(), labels.end());
    return make_result(
        Tensor(Shape{1}, std::vector<double>{loss}), {logits},
        [=, p = std::move(p), lab = std::move(lab)](Node& n) {
            const double up = n.grad[0];
            Tensor g(p.shape());
            std::vector<double> dp(K);
            for (std::size_t m = 0; m < M; ++m) {
                for (int c = 0; c < K; ++c) dp[c] = 0.0;
                for (int c = 1; c < K; ++c) {
                    const double den = psum[c] + tsum[c] + eps;
                    const double t = lab[m] == c ? 1.0 : 0.0;
                    const double dd = (2.0 * t * den - (2.0 * inter[c] + eps)) / (den * den);
                    dp[c] = -dice_weight * dd / (K - 1);
                }
                double dot = 0.0;
                for (int c = 0; c < K; ++c) dot += dp[c] * p[m * K + c];
                for (int c = 0; c < K; ++c) {
                    const double pc = p[m * K + c];
                    const double ce_g = (pc - (lab[m] == c ? 1.0 : 0.0)) / static_cast<double>(M);
                    g[m * K + c] = up * (ce_weight * ce_g + pc * (dp[c] - dot));
                }
            }
            push(n, 0, std::move(g));
        });
}

Var sum_all(const Var& x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return make_result(Tensor(Shape{1}, std::vector<double>{s}), {x}, [](Node& n) {
        push(n, 0, Tensor(in(n, 0).shape(), n.grad[0]));
    });
}

Var weighted_sum(const Var& x, const Tensor& w) {
    if (w.numel() != x.value().numel()) throw ShapeError("weighted_sum: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.numel(); ++i) s += x.value()[i] * w[i];
    return make_result(Tensor(Shape{1}, std::vector<double>{s}), {x}, [w](Node& n) {
        Tensor g = w.reshaped(in(n, 0).shape());
        g.scale_(n.grad[0]);
        push(n, 0, std::move(g));
    });
}

}  // namespace msa2::ops
