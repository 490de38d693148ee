#include "cmma/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "conv_core.hpp"

namespace cmma::ops {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require(x.rank() == 3, "conv1x1: x must be C_in x H x W, got " + shape_str(x.shape()));
    require(weight.rank() == 2, "conv1x1: weight must be D_out x D_in, got " + shape_str(weight.shape()));
    const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t dout = weight.extent(0);
    require(weight.extent(1) == cin, "conv1x1: weight input axis " + std::to_string(weight.extent(1)) +
                                         " != x channel axis " + std::to_string(cin));
    require(bias.rank() == 1 && bias.extent(0) == dout,
            "conv1x1: bias axis " + shape_str(bias.shape()) + " != output channels " + std::to_string(dout));

    const std::size_t hw = h * w;
    Tensor out({dout, h, w});
    const double* xp = x.data();
    const double* wp = weight.data();
    double* op = out.data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t d = 0; d < static_cast<std::ptrdiff_t>(dout); ++d) {
        double* orow = op + d * hw;
        const double b = bias[static_cast<std::size_t>(d)];
        for (std::size_t p = 0; p < hw; ++p) orow[p] = b;
        for (std::size_t c = 0; c < cin; ++c) {
            const double wv = wp[d * cin + c];
            const double* xrow = xp + c * hw;
            for (std::size_t p = 0; p < hw; ++p) orow[p] += wv * xrow[p];
        }
    }
    return out;
}

Conv1x1Grads conv1x1_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
    const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t dout = weight.extent(0);
    require(grad_out.rank() == 3 && grad_out.extent(0) == dout && grad_out.extent(1) == h &&
                grad_out.extent(2) == w,
            "conv1x1_backward: grad_out shape " + shape_str(grad_out.shape()) + " does not match output");

    const std::size_t hw = h * w;
    Conv1x1Grads g{Tensor({cin, h, w}), Tensor({dout, cin}), Tensor({dout})};
    const double* xp = x.data();
    const double* wp = weight.data();
    const double* gp = grad_out.data();

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(cin); ++c) {
        double* gxrow = g.x.data() + c * hw;
        for (std::size_t d = 0; d < dout; ++d) {
            const double wv = wp[d * cin + c];
            const double* grow = gp + d * hw;
            for (std::size_t p = 0; p < hw; ++p) gxrow[p] += wv * grow[p];
        }
    }

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t d = 0; d < static_cast<std::ptrdiff_t>(dout); ++d) {
        const double* grow = gp + d * hw;
        for (std::size_t c = 0; c < cin; ++c) {
            const double* xrow = xp + c * hw;
            double acc = 0.0;
            for (std::size_t p = 0; p < hw; ++p) acc += grow[p] * xrow[p];
            g.weight[d * cin + c] = acc;
        }
        double bacc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) bacc += grow[p];
        g.bias[static_cast<std::size_t>(d)] = bacc;
    }
    return g;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        op[i] = xp[i] > 0.0 ? xp[i] : 0.0;
    }
    return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
    require(x.same_shape(grad_out), "relu_backward: grad shape " + shape_str(grad_out.shape()) +
                                        " != input shape " + shape_str(x.shape()));
    Tensor g(x.shape());
    const double* xp = x.data();
    const double* gp = grad_out.data();
    double* op = g.data();
    const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        op[i] = xp[i] > 0.0 ? gp[i] : 0.0;
    }
    return g;
}

Tensor global_softmax(const Tensor& r) {
    Tensor out(r.shape());
    const std::size_t n = r.size();
    double mx = r[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, r[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(r[i] - mx);
        sum += out[i];
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
    return out;
}

Tensor global_softmax_backward(const Tensor& softmax_out, const Tensor& grad_out) {
    require(softmax_out.same_shape(grad_out), "global_softmax_backward: shape mismatch " +
                                                  shape_str(softmax_out.shape()) + " vs " +
                                                  shape_str(grad_out.shape()));
    const std::size_t n = softmax_out.size();
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += softmax_out[i] * grad_out[i];
    Tensor g(softmax_out.shape());
    for (std::size_t i = 0; i < n; ++i) g[i] = softmax_out[i] * (grad_out[i] - dot);
    return g;
}

Tensor elementwise_max(const std::vector<Tensor>& xs) {
    require(!xs.empty(), "elementwise_max: needs at least one input");
    for (std::size_t k = 1; k < xs.size(); ++k) {
        require(xs[k].same_shape(xs[0]), "elementwise_max: input " + std::to_string(k) + " shape " +
                                             shape_str(xs[k].shape()) + " != " + shape_str(xs[0].shape()));
    }
    Tensor out = xs[0];
    for (std::size_t k = 1; k < xs.size(); ++k) {
        const double* xp = xs[k].data();
        double* op = out.data();
        const std::size_t n = out.size();
        for (std::size_t i = 0; i < n; ++i) op[i] = std::max(op[i], xp[i]);
    }
    return out;
}

std::vector<Tensor> elementwise_max_backward(const std::vector<Tensor>& xs, const Tensor& grad_out) {
    require(!xs.empty(), "elementwise_max_backward: needs at least one input");
    require(grad_out.same_shape(xs[0]), "elementwise_max_backward: grad shape mismatch");
    std::vector<Tensor> grads;
    grads.reserve(xs.size());
    for (const auto& x : xs) grads.emplace_back(Tensor(x.shape()));
    const std::size_t n = xs[0].size();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double bv = xs[0][i];
        for (std::size_t k = 1; k < xs.size(); ++k) {
            if (xs[k][i] > bv) {
                bv = xs[k][i];
                best = k;
            }
        }
        grads[best][i] = grad_out[i];
    }
    return grads;
}

namespace {

std::vector<bool> axis_mask(std::size_t rank, const std::vector<std::size_t>& axes) {
    std::vector<bool> reduce(rank, false);
    if (axes.empty()) throw std::invalid_argument("avg_pool: empty axis set");
    for (std::size_t a : axes) {
        if (a >= rank) {
            throw std::invalid_argument("avg_pool: axis " + std::to_string(a) + " out of range for rank " +
                                        std::to_string(rank));
        }
        if (reduce[a]) throw std::invalid_argument("avg_pool: duplicate axis " + std::to_string(a));
        reduce[a] = true;
    }
    return reduce;
}

}  // namespace

Tensor avg_pool(const Tensor& x, const std::vector<std::size_t>& axes) {
    const auto reduce = axis_mask(x.rank(), axes);
    std::vector<std::size_t> out_shape;
    std::size_t count = 1;
    for (std::size_t a = 0; a < x.rank(); ++a) {
        if (reduce[a]) {
            count *= x.extent(a);
        } else {
            out_shape.push_back(x.extent(a));
        }
    }
    Tensor out(out_shape);

    // Row-major walk; accumulate each element into its reduced slot.
    std::vector<std::size_t> idx(x.rank(), 0);
    const std::size_t n = x.size();
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t oflat = 0;
        for (std::size_t a = 0; a < x.rank(); ++a) {
            if (!reduce[a]) oflat = oflat * x.extent(a) + idx[a];
        }
        out[oflat] += x[flat];
        for (std::size_t a = x.rank(); a-- > 0;) {
            if (++idx[a] < x.extent(a)) break;
            idx[a] = 0;
        }
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
    return out;
}

Tensor avg_pool_backward(const std::vector<std::size_t>& x_shape, const std::vector<std::size_t>& axes,
                         const Tensor& grad_out) {
    const auto reduce = axis_mask(x_shape.size(), axes);
    std::size_t count = 1;
    std::vector<std::size_t> out_shape;
    for (std::size_t a = 0; a < x_shape.size(); ++a) {
        if (reduce[a]) {
            count *= x_shape[a];
        } else {
            out_shape.push_back(x_shape[a]);
        }
    }
    require(grad_out.shape() == out_shape, "avg_pool_backward: grad shape " + shape_str(grad_out.shape()) +
                                               " != pooled shape " + shape_str(out_shape));
    Tensor g(x_shape);
    const double inv = 1.0 / static_cast<double>(count);
    std::vector<std::size_t> idx(x_shape.size(), 0);
    for (std::size_t flat = 0; flat < g.size(); ++flat) {
        std::size_t oflat = 0;
        for (std::size_t a = 0; a < x_shape.size(); ++a) {
            if (!reduce[a]) oflat = oflat * x_shape[a] + idx[a];
        }
        g[flat] = grad_out[oflat] * inv;
        for (std::size_t a = x_shape.size(); a-- > 0;) {
            if (++idx[a] < x_shape[a]) break;
            idx[a] = 0;
        }
    }
    return g;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
    require(x.rank() == 3, "conv2d: x must be C_in x H x W, got " + shape_str(x.shape()));
    require(weight.rank() == 4, "conv2d: weight must be C_out x C_in x KH x KW, got " +
                                    shape_str(weight.shape()));
    require(stride >= 1, "conv2d: stride must be >= 1");
    const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t cout = weight.extent(0), kh = weight.extent(2), kw = weight.extent(3);
    require(weight.extent(1) == cin, "conv2d: weight channel axis " + std::to_string(weight.extent(1)) +
                                         " != x channel axis " + std::to_string(cin));
    require(bias.rank() == 1 && bias.extent(0) == cout, "conv2d: bias shape " + shape_str(bias.shape()) +
                                                            " != output channels");
    require(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d: kernel larger than padded input");
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;

    Tensor out({cout, ho, wo});
    const auto dims = detail::conv_dims(cin, h, w, cout, kh, kw, stride, pad);
    std::vector<double> col(dims.patch() * dims.sites());
    detail::im2col(x.data(), dims, col.data());
    const std::size_t chunks = (cout + detail::kCoBlock - 1) / detail::kCoBlock;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t chunk = 0; chunk < static_cast<std::ptrdiff_t>(chunks); ++chunk) {
        const std::size_t co0 = static_cast<std::size_t>(chunk) * detail::kCoBlock;
        const std::size_t co1 = std::min(co0 + detail::kCoBlock, cout);
        detail::conv_forward_chunk(col.data(), weight.data(), bias.data(), dims, co0, co1,
                                   out.data() + co0 * ho * wo);
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t pad,
                            const Tensor& grad_out) {
    const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t cout = weight.extent(0), kh = weight.extent(2), kw = weight.extent(3);
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    require(grad_out.rank() == 3 && grad_out.extent(0) == cout && grad_out.extent(1) == ho &&
                grad_out.extent(2) == wo,
            "conv2d_backward: grad_out shape " + shape_str(grad_out.shape()) + " does not match output");

    Conv2dGrads g{Tensor({cin, h, w}), Tensor(weight.shape()), Tensor({cout})};
    const auto dims = detail::conv_dims(cin, h, w, cout, kh, kw, stride, pad);
    std::vector<double> col(dims.patch() * dims.sites());
    detail::im2col(x.data(), dims, col.data());

    std::vector<double> gcol(dims.patch() * dims.sites());
    detail::conv_backward_gcol(weight.data(), grad_out.data(), dims, gcol.data());
    detail::col2im_add(gcol.data(), dims, g.x.data());

    const std::size_t chunks = (cout + detail::kCoBlock - 1) / detail::kCoBlock;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t chunk = 0; chunk < static_cast<std::ptrdiff_t>(chunks); ++chunk) {
        const std::size_t co0 = static_cast<std::size_t>(chunk) * detail::kCoBlock;
        const std::size_t co1 = std::min(co0 + detail::kCoBlock, cout);
        detail::conv_backward_dw_chunk(col.data(), grad_out.data(), dims, co0, co1, g.weight.data(),
                                       g.bias.data());
    }
    return g;
}

DiffRecord conv1x1_vjp(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    DiffRecord rec;
    rec.output = conv1x1(x, weight, bias);
    rec.backward = [x, weight](const Tensor& ct) {
        auto g = conv1x1_backward(x, weight, ct);
        return std::vector<Tensor>{std::move(g.x), std::move(g.weight), std::move(g.bias)};
    };
    return rec;
}

DiffRecord relu_vjp(const Tensor& x) {
    DiffRecord rec;
    rec.output = relu(x);
    rec.backward = [x](const Tensor& ct) { return std::vector<Tensor>{relu_backward(x, ct)}; };
    return rec;
}

DiffRecord global_softmax_vjp(const Tensor& r) {
    DiffRecord rec;
    rec.output = global_softmax(r);
    Tensor y = rec.output;
    rec.backward = [y](const Tensor& ct) { return std::vector<Tensor>{global_softmax_backward(y, ct)}; };
    return rec;
}

DiffRecord elementwise_max_vjp(const std::vector<Tensor>& xs) {
    DiffRecord rec;
    rec.output = elementwise_max(xs);
    rec.backward = [xs](const Tensor& ct) { return elementwise_max_backward(xs, ct); };
    return rec;
}

DiffRecord avg_pool_vjp(const Tensor& x, const std::vector<std::size_t>& axes) {
    DiffRecord rec;
    rec.output = avg_pool(x, axes);
    auto shape = x.shape();
    rec.backward = [shape, axes](const Tensor& ct) {
        return std::vector<Tensor>{avg_pool_backward(shape, axes, ct)};
    };
    return rec;
}

double finite_diff_check(const ScalarFunction& f, const Tensor& x0, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
    const Tensor probe = f.value(x0);
    if (probe.size() != 1) {
        throw std::invalid_argument("finite_diff_check: function output must be scalar, got shape " +
                                    shape_str(probe.shape()));
    }
    const Tensor analytic = f.gradient(x0);
    if (!analytic.same_shape(x0) && analytic.size() != x0.size()) {
        throw std::invalid_argument("finite_diff_check: gradient size does not match input");
    }
    double worst = 0.0;
    Tensor x = x0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double fp = f.value(x).item();
        x[i] = saved - step;
        const double fm = f.value(x).item();
        x[i] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace cmma::ops
