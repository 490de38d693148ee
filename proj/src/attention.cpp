#include "cmma/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cmma/ops.hpp"

namespace cmma::attention {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void check_features(const Tensor& f, const MamParams& params) {
    require(f.rank() == 4, "attention: features must be N x D x H x W, got " + shape_str(f.shape()));
    require(f.extent(1) == params.channels,
            "attention: feature channel axis " + std::to_string(f.extent(1)) +
                " != configured channels " + std::to_string(params.channels));
}

// r[p] = outer(relu(inner(f))) for one frame and one submodule; the post-ReLU
// hidden block is written to `hidden` (D1 x HW).
void submodule_response(const double* frame, std::size_t channels, std::size_t hw,
                        const MamSubmodule& sub, double* hidden, double* response) {
    const std::size_t d1 = sub.inner_bias.size();
    for (std::size_t i = 0; i < d1; ++i) {
        double* hrow = hidden + i * hw;
        const double b = sub.inner_bias[i];
        for (std::size_t p = 0; p < hw; ++p) hrow[p] = b;
        const double* wrow = sub.inner_weight.data() + i * channels;
        for (std::size_t c = 0; c < channels; ++c) {
            const double wv = wrow[c];
            const double* frow = frame + c * hw;
            for (std::size_t p = 0; p < hw; ++p) hrow[p] += wv * frow[p];
        }
        for (std::size_t p = 0; p < hw; ++p) hrow[p] = hrow[p] > 0.0 ? hrow[p] : 0.0;
    }
    const double ob = sub.outer_bias[0];
    for (std::size_t p = 0; p < hw; ++p) response[p] = ob;
    for (std::size_t i = 0; i < d1; ++i) {
        const double wv = sub.outer_weight[i];
        const double* hrow = hidden + i * hw;
        for (std::size_t p = 0; p < hw; ++p) response[p] += wv * hrow[p];
    }
}

void softmax_slice(const double* in, double* out, std::size_t n) {
    double mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        sum += out[i];
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
}

}  // namespace

MamParams MamParams::init(std::size_t submodules, std::size_t channels, std::size_t bottleneck, Rng& rng) {
    if (submodules < 1) throw std::invalid_argument("MamParams: need at least one submodule");
    if (bottleneck >= channels) {
        throw std::invalid_argument("MamParams: bottleneck " + std::to_string(bottleneck) +
                                    " must be smaller than channels " + std::to_string(channels));
    }
    MamParams p;
    p.submodules = submodules;
    p.channels = channels;
    p.bottleneck = bottleneck;
    p.sub.resize(submodules);
    const double inner_scale = 1.0 / std::sqrt(static_cast<double>(channels));
    const double outer_scale = 1.0 / std::sqrt(static_cast<double>(bottleneck));
    for (auto& s : p.sub) {
        s.inner_weight = Tensor({bottleneck, channels});
        for (std::size_t i = 0; i < s.inner_weight.size(); ++i) {
            s.inner_weight[i] = rng.uniform(-inner_scale, inner_scale);
        }
        s.inner_bias = Tensor({bottleneck});
        s.outer_weight = Tensor({1, bottleneck});
        for (std::size_t i = 0; i < bottleneck; ++i) s.outer_weight[i] = rng.uniform(-outer_scale, outer_scale);
        s.outer_bias = Tensor({1});
    }
    return p;
}

Tensor attention_responses(const Tensor& features, const MamParams& params) {
    check_features(features, params);
    const std::size_t n = features.extent(0), d = params.channels;
    const std::size_t h = features.extent(2), w = features.extent(3);
    const std::size_t hw = h * w;
    const std::size_t k = params.submodules;
    Tensor out({n, k, h, w});
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
        for (std::ptrdiff_t ki = 0; ki < static_cast<std::ptrdiff_t>(k); ++ki) {
            std::vector<double> hidden(params.bottleneck * hw);
            submodule_response(features.data() + ni * d * hw, d, hw, params.sub[static_cast<std::size_t>(ki)],
                               hidden.data(), out.data() + (ni * k + ki) * hw);
        }
    }
    return out;
}

AttentionStack attention_distributions(const Tensor& responses) {
    require(responses.rank() == 4, "attention_distributions: responses must be N x K x H x W, got " +
                                       shape_str(responses.shape()));
    const std::size_t slices = responses.extent(0) * responses.extent(1);
    const std::size_t hw = responses.extent(2) * responses.extent(3);
    AttentionStack stack{Tensor(responses.shape())};
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(slices); ++s) {
        softmax_slice(responses.data() + s * hw, stack.values.data() + s * hw, hw);
    }
    return stack;
}

Tensor weight_features(const AttentionStack& attn, const Tensor& features) {
    const Tensor& a = attn.values;
    require(a.rank() == 4 && features.rank() == 4, "weight_features: need N x K x H x W and N x D x H x W");
    require(a.extent(0) == features.extent(0) && a.extent(2) == features.extent(2) &&
                a.extent(3) == features.extent(3),
            "weight_features: attention " + shape_str(a.shape()) + " does not align with features " +
                shape_str(features.shape()));
    const std::size_t n = a.extent(0), k = a.extent(1), d = features.extent(1);
    const std::size_t hw = a.extent(2) * a.extent(3);
    Tensor out({n, k, d, a.extent(2), a.extent(3)});
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
        for (std::ptrdiff_t ki = 0; ki < static_cast<std::ptrdiff_t>(k); ++ki) {
            const double* arow = a.data() + (ni * k + ki) * hw;
            for (std::size_t di = 0; di < d; ++di) {
                const double* frow = features.data() + (ni * d + di) * hw;
                double* orow = out.data() + ((static_cast<std::size_t>(ni) * k + ki) * d + di) * hw;
                for (std::size_t p = 0; p < hw; ++p) orow[p] = arow[p] * frow[p];
            }
        }
    }
    return out;
}

WeightFeaturesGrads weight_features_backward(const AttentionStack& attn, const Tensor& features,
                                             const Tensor& grad_out) {
    const Tensor& a = attn.values;
    require(grad_out.rank() == 5, "weight_features_backward: grad must be N x K x D x H x W");
    const std::size_t n = a.extent(0), k = a.extent(1), d = features.extent(1);
    const std::size_t hw = a.extent(2) * a.extent(3);
    WeightFeaturesGrads g{Tensor(a.shape()), Tensor(features.shape())};
    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            const double* arow = a.data() + (ni * k + ki) * hw;
            double* garow = g.attention.data() + (ni * k + ki) * hw;
            for (std::size_t di = 0; di < d; ++di) {
                const double* grow = grad_out.data() + ((ni * k + ki) * d + di) * hw;
                const double* frow = features.data() + (ni * d + di) * hw;
                double* gfrow = g.features.data() + (ni * d + di) * hw;
                for (std::size_t p = 0; p < hw; ++p) {
                    garow[p] += grow[p] * frow[p];
                    gfrow[p] += grow[p] * arow[p];
                }
            }
        }
    }
    return g;
}

FusedFeatures fuse_frames(const Tensor& weighted, const Tensor& features) {
    require(weighted.rank() == 5, "fuse_frames: weighted must be N x K x D x H x W, got " +
                                      shape_str(weighted.shape()));
    require(features.rank() == 4 && weighted.extent(0) == features.extent(0) &&
                weighted.extent(2) == features.extent(1) && weighted.extent(3) == features.extent(2) &&
                weighted.extent(4) == features.extent(3),
            "fuse_frames: weighted " + shape_str(weighted.shape()) + " does not align with features " +
                shape_str(features.shape()));
    const std::size_t n = features.extent(0), d = features.extent(1);
    const std::size_t hw = features.extent(2) * features.extent(3);
    const std::size_t k = weighted.extent(1);
    FusedFeatures out{Tensor(features.shape())};
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
        for (std::size_t di = 0; di < d; ++di) {
            const std::size_t base = (static_cast<std::size_t>(ni) * d + di) * hw;
            double* orow = out.values.data() + base;
            const double* frow = features.data() + base;
            for (std::size_t p = 0; p < hw; ++p) {
                double m = weighted[((static_cast<std::size_t>(ni) * k + 0) * d + di) * hw + p];
                for (std::size_t ki = 1; ki < k; ++ki) {
                    m = std::max(m, weighted[((static_cast<std::size_t>(ni) * k + ki) * d + di) * hw + p]);
                }
                orow[p] = frow[p] + m;
            }
        }
    }
    return out;
}

FuseFramesGrads fuse_frames_backward(const Tensor& weighted, const Tensor& features,
                                     const Tensor& grad_out) {
    require(grad_out.same_shape(features), "fuse_frames_backward: grad shape mismatch");
    const std::size_t n = features.extent(0), d = features.extent(1);
    const std::size_t hw = features.extent(2) * features.extent(3);
    const std::size_t k = weighted.extent(1);
    FuseFramesGrads g{Tensor(weighted.shape()), grad_out};
    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t di = 0; di < d; ++di) {
            for (std::size_t p = 0; p < hw; ++p) {
                std::size_t best = 0;
                double bv = weighted[((ni * k + 0) * d + di) * hw + p];
                for (std::size_t ki = 1; ki < k; ++ki) {
                    const double cand = weighted[((ni * k + ki) * d + di) * hw + p];
                    if (cand > bv) {
                        bv = cand;
                        best = ki;
                    }
                }
                g.weighted[((ni * k + best) * d + di) * hw + p] = grad_out[(ni * d + di) * hw + p];
            }
        }
    }
    return g;
}

Tensor video_embedding(const FusedFeatures& fused) {
    const Tensor& v = fused.values;
    require(v.rank() == 4, "video_embedding: fused features must be N x D x H x W");
    const Tensor temporal = ops::avg_pool(v, {0});       // D x H x W
    return ops::avg_pool(temporal, {1, 2});              // D
}

MamForward mam_forward(const Tensor& features, const MamParams& params) {
    check_features(features, params);
    const std::size_t n = features.extent(0), d = params.channels;
    const std::size_t h = features.extent(2), w = features.extent(3);
    const std::size_t hw = h * w;
    const std::size_t k = params.submodules, d1 = params.bottleneck;

    MamForward fwd;
    fwd.hidden = Tensor({n, k, d1, h, w});
    fwd.attention.values = Tensor({n, k, h, w});
    fwd.fused.values = Tensor(features.shape());
    fwd.max_index.assign(n * d * hw, 0);

#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
        for (std::ptrdiff_t ki = 0; ki < static_cast<std::ptrdiff_t>(k); ++ki) {
            std::vector<double> response(hw);
            submodule_response(features.data() + ni * d * hw, d, hw, params.sub[static_cast<std::size_t>(ki)],
                               fwd.hidden.data() + (ni * k + ki) * d1 * hw, response.data());
            softmax_slice(response.data(), fwd.attention.values.data() + (ni * k + ki) * hw, hw);
        }
    }

    const double* a = fwd.attention.values.data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
        for (std::size_t di = 0; di < d; ++di) {
            const std::size_t base = (static_cast<std::size_t>(ni) * d + di) * hw;
            const double* frow = features.data() + base;
            double* orow = fwd.fused.values.data() + base;
            std::uint8_t* mrow = fwd.max_index.data() + base;
            const double* ablock = a + static_cast<std::size_t>(ni) * k * hw;
            for (std::size_t p = 0; p < hw; ++p) {
                const double fv = frow[p];
                double best = ablock[p] * fv;
                std::uint8_t best_k = 0;
                for (std::size_t ki = 1; ki < k; ++ki) {
                    const double cand = ablock[ki * hw + p] * fv;
                    if (cand > best) {
                        best = cand;
                        best_k = static_cast<std::uint8_t>(ki);
                    }
                }
                orow[p] = fv + best;
                mrow[p] = best_k;
            }
        }
    }
    return fwd;
}

MamGrads mam_backward(const Tensor& features, const MamParams& params, const MamForward& fwd,
                      const Tensor& grad_fused, const Tensor* grad_attention) {
    check_features(features, params);
    require(grad_fused.same_shape(features), "mam_backward: grad_fused shape " +
                                                 shape_str(grad_fused.shape()) + " != features " +
                                                 shape_str(features.shape()));
    const std::size_t n = features.extent(0), d = params.channels;
    const std::size_t h = features.extent(2), w = features.extent(3);
    const std::size_t hw = h * w;
    const std::size_t k = params.submodules, d1 = params.bottleneck;
    if (grad_attention) {
        require(grad_attention->same_shape(fwd.attention.values),
                "mam_backward: grad_attention shape mismatch");
    }

    MamGrads grads;
    grads.features = grad_fused;  // shortcut path
    grads.sub.resize(k);
    for (std::size_t ki = 0; ki < k; ++ki) {
        grads.sub[ki].inner_weight = Tensor({d1, d});
        grads.sub[ki].inner_bias = Tensor({d1});
        grads.sub[ki].outer_weight = Tensor({1, d1});
        grads.sub[ki].outer_bias = Tensor({1});
    }

    const double* a = fwd.attention.values.data();

    // Max-fusion and Hadamard-weighting backward: route the fused cotangent
    // to the argmax submodule, splitting between the attention map and the
    // features.
    Tensor grad_a({n, k, h, w});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
        double* gablock = grad_a.data() + static_cast<std::size_t>(ni) * k * hw;
        const double* ablock = a + static_cast<std::size_t>(ni) * k * hw;
        for (std::size_t di = 0; di < d; ++di) {
            const std::size_t base = (static_cast<std::size_t>(ni) * d + di) * hw;
            const double* frow = features.data() + base;
            const double* grow = grad_fused.data() + base;
            const std::uint8_t* mrow = fwd.max_index.data() + base;
            double* gfrow = grads.features.data() + base;
            for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t ki = mrow[p];
                const double g = grow[p];
                gablock[ki * hw + p] += g * frow[p];
                gfrow[p] += g * ablock[ki * hw + p];
            }
        }
        if (grad_attention) {
            const double* ext = grad_attention->data() + static_cast<std::size_t>(ni) * k * hw;
            for (std::size_t i = 0; i < k * hw; ++i) gablock[i] += ext[i];
        }
    }

    // Softmax backward per slice, then through the outer conv and ReLU.
    Tensor grad_z({n, k, d1, h, w});
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
        for (std::ptrdiff_t ki = 0; ki < static_cast<std::ptrdiff_t>(k); ++ki) {
            const double* arow = a + (ni * k + ki) * hw;
            double* garow = grad_a.data() + (ni * k + ki) * hw;
            double dot = 0.0;
            for (std::size_t p = 0; p < hw; ++p) dot += arow[p] * garow[p];
            // reuse grad_a storage for the response cotangent
            for (std::size_t p = 0; p < hw; ++p) garow[p] = arow[p] * (garow[p] - dot);

            const auto& sub = params.sub[static_cast<std::size_t>(ki)];
            const double* hblock = fwd.hidden.data() + (ni * k + ki) * d1 * hw;
            double* gzblock = grad_z.data() + (ni * k + ki) * d1 * hw;
            for (std::size_t i = 0; i < d1; ++i) {
                const double wv = sub.outer_weight[i];
                const double* hrow = hblock + i * hw;
                double* gzrow = gzblock + i * hw;
                for (std::size_t p = 0; p < hw; ++p) gzrow[p] = hrow[p] > 0.0 ? wv * garow[p] : 0.0;
            }
        }
    }

    // Parameter gradients; each submodule owned by one iteration.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ki = 0; ki < static_cast<std::ptrdiff_t>(k); ++ki) {
        auto& gs = grads.sub[static_cast<std::size_t>(ki)];
        for (std::size_t ni = 0; ni < n; ++ni) {
            const double* grrow = grad_a.data() + (ni * k + ki) * hw;
            const double* hblock = fwd.hidden.data() + (ni * k + ki) * d1 * hw;
            const double* gzblock = grad_z.data() + (ni * k + ki) * d1 * hw;
            const double* fblock = features.data() + ni * d * hw;
            double ob = 0.0;
            for (std::size_t p = 0; p < hw; ++p) ob += grrow[p];
            gs.outer_bias[0] += ob;
            for (std::size_t i = 0; i < d1; ++i) {
                const double* hrow = hblock + i * hw;
                const double* gzrow = gzblock + i * hw;
                double ow = 0.0, ib = 0.0;
                for (std::size_t p = 0; p < hw; ++p) {
                    ow += grrow[p] * hrow[p];
                    ib += gzrow[p];
                }
                gs.outer_weight[i] += ow;
                gs.inner_bias[i] += ib;
                double* gwrow = gs.inner_weight.data() + i * d;
                for (std::size_t di = 0; di < d; ++di) {
                    const double* frow = fblock + di * hw;
                    double acc = 0.0;
                    for (std::size_t p = 0; p < hw; ++p) acc += gzrow[p] * frow[p];
                    gwrow[di] += acc;
                }
            }
        }
    }

    // Feature cotangent through the inner conv.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
        double* gfblock = grads.features.data() + ni * d * hw;
        for (std::size_t ki = 0; ki < k; ++ki) {
            const auto& sub = params.sub[ki];
            const double* gzblock = grad_z.data() + (ni * k + ki) * d1 * hw;
            for (std::size_t i = 0; i < d1; ++i) {
                const double* gzrow = gzblock + i * hw;
                const double* wrow = sub.inner_weight.data() + i * d;
                for (std::size_t di = 0; di < d; ++di) {
                    const double wv = wrow[di];
                    double* gfrow = gfblock + di * hw;
                    for (std::size_t p = 0; p < hw; ++p) gfrow[p] += wv * gzrow[p];
                }
            }
        }
    }
    return grads;
}

}  // namespace cmma::attention
