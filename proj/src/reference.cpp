#include "cmma/reference.hpp"

#include <cmath>

namespace cmma::ref {

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t dout = weight.extent(0);
    Tensor out({dout, h, w});
    for (std::size_t d = 0; d < dout; ++d) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t z = 0; z < w; ++z) {
                double acc = bias[d];
                for (std::size_t c = 0; c < cin; ++c) acc += weight.at(d, c) * x.at(c, y, z);
                out.at(d, y, z) = acc;
            }
        }
    }
    return out;
}

Tensor conv1x1_grad_x(const Tensor& weight, const Tensor& grad_out, std::size_t cin) {
    const std::size_t dout = grad_out.extent(0), h = grad_out.extent(1), w = grad_out.extent(2);
    Tensor gx({cin, h, w});
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t z = 0; z < w; ++z) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dout; ++d) acc += weight.at(d, c) * grad_out.at(d, y, z);
                gx.at(c, y, z) = acc;
            }
        }
    }
    return gx;
}

Tensor conv1x1_grad_weight(const Tensor& x, const Tensor& grad_out) {
    const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t dout = grad_out.extent(0);
    Tensor gw({dout, cin});
    for (std::size_t d = 0; d < dout; ++d) {
        for (std::size_t c = 0; c < cin; ++c) {
            double acc = 0.0;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t z = 0; z < w; ++z) acc += grad_out.at(d, y, z) * x.at(c, y, z);
            }
            gw.at(d, c) = acc;
        }
    }
    return gw;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
    const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t cout = weight.extent(0), kh = weight.extent(2), kw = weight.extent(3);
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    Tensor out({cout, ho, wo});
    for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = bias[co];
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    for (std::size_t r = 0; r < kh; ++r) {
                        for (std::size_t c = 0; c < kw; ++c) {
                            const long iy = static_cast<long>(oy * stride + r) - static_cast<long>(pad);
                            const long ix = static_cast<long>(ox * stride + c) - static_cast<long>(pad);
                            if (iy < 0 || iy >= static_cast<long>(h) || ix < 0 || ix >= static_cast<long>(w))
                                continue;
                            acc += weight.at(co, ci, r, c) *
                                   x.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                        }
                    }
                }
                out.at(co, oy, ox) = acc;
            }
        }
    }
    return out;
}

Tensor global_softmax(const Tensor& r) {
    Tensor out(r.shape());
    double mx = r[0];
    for (std::size_t i = 1; i < r.size(); ++i) {
        if (r[i] > mx) mx = r[i];
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) sum += std::exp(r[i] - mx);
    for (std::size_t i = 0; i < r.size(); ++i) out[i] = std::exp(r[i] - mx) / sum;
    return out;
}

Tensor weight_features(const Tensor& a, const Tensor& f) {
    const std::size_t n = a.extent(0), k = a.extent(1), h = a.extent(2), w = a.extent(3);
    const std::size_t d = f.extent(1);
    Tensor out({n, k, d, h, w});
    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t di = 0; di < d; ++di) {
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t z = 0; z < w; ++z) {
                        out.at(ni, ki, di, y, z) = a.at(ni, ki, y, z) * f.at(ni, di, y, z);
                    }
                }
            }
        }
    }
    return out;
}

Tensor fuse_frames(const Tensor& x, const Tensor& f) {
    const std::size_t n = x.extent(0), k = x.extent(1), d = x.extent(2);
    const std::size_t h = x.extent(3), w = x.extent(4);
    Tensor out(f.shape());
    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t di = 0; di < d; ++di) {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t z = 0; z < w; ++z) {
                    double m = x.at(ni, 0, di, y, z);
                    for (std::size_t ki = 1; ki < k; ++ki) m = std::max(m, x.at(ni, ki, di, y, z));
                    out.at(ni, di, y, z) = f.at(ni, di, y, z) + m;
                }
            }
        }
    }
    return out;
}

Tensor pairwise_distances(const Tensor& q, const Tensor& g) {
    const std::size_t nq = q.extent(0), d = q.extent(1), ng = g.extent(0);
    Tensor out({nq, ng});
    for (std::size_t i = 0; i < nq; ++i) {
        for (std::size_t j = 0; j < ng; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = q.at(i, c) - g.at(j, c);
                acc += diff * diff;
            }
            out.at(i, j) = std::sqrt(acc);
        }
    }
    return out;
}

}  // namespace cmma::ref
