#include "odpg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "odpg/threading.hpp"

namespace odpg {

namespace {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

template <typename T>
std::shared_ptr<std::vector<T>> copy_of(const std::vector<T>& v) {
    return std::make_shared<std::vector<T>>(v);
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T beta, T* c) {
    Eigen::Map<const EMat<T>> am(a, trans_a ? k : m, trans_a ? m : k);
    Eigen::Map<const EMat<T>> bm(b, trans_b ? n : k, trans_b ? k : n);
    Eigen::Map<EMat<T>> cm(c, m, n);
    if (beta == T(0)) {
        if (!trans_a && !trans_b)
            cm.noalias() = am * bm;
        else if (trans_a && !trans_b)
            cm.noalias() = am.transpose() * bm;
        else if (!trans_a && trans_b)
            cm.noalias() = am * bm.transpose();
        else
            cm.noalias() = am.transpose() * bm.transpose();
    } else {
        if (!trans_a && !trans_b)
            cm.noalias() += am * bm;
        else if (trans_a && !trans_b)
            cm.noalias() += am.transpose() * bm;
        else if (!trans_a && trans_b)
            cm.noalias() += am * bm.transpose();
        else
            cm.noalias() += am.transpose() * bm.transpose();
    }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape("add", a, b);
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const auto n = static_cast<std::size_t>(a.numel());
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    attach_node<T>(
        out, {a, b},
        [a, b, n](const T* g) mutable {
            if (a.requires_grad()) {
                T* ga = a.grad_data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad_data();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        },
        "add");
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape("sub", a, b);
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const auto n = static_cast<std::size_t>(a.numel());
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    attach_node<T>(
        out, {a, b},
        [a, b, n](const T* g) mutable {
            if (a.requires_grad()) {
                T* ga = a.grad_data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad_data();
                for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        },
        "sub");
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape("mul", a, b);
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const auto n = static_cast<std::size_t>(a.numel());
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    attach_node<T>(
        out, {a, b},
        [a, b, n](const T* g) mutable {
            if (a.requires_grad()) {
                T* ga = a.grad_data();
                const T* pb2 = b.data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad_data();
                const T* pa2 = a.data();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
            }
        },
        "mul");
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, double c) {
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    const auto n = static_cast<std::size_t>(a.numel());
    const T cc = static_cast<T>(c);
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + cc;
    attach_node<T>(
        out, {a},
        [a, n](const T* g) mutable {
            T* ga = a.grad_data();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        },
        "add_scalar");
    return out;
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, double c) {
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    const auto n = static_cast<std::size_t>(a.numel());
    const T cc = static_cast<T>(c);
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * cc;
    attach_node<T>(
        out, {a},
        [a, n, cc](const T* g) mutable {
            T* ga = a.grad_data();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * cc;
        },
        "mul_scalar");
    return out;
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const int da = a.dim();
    const int db = b.dim();
    if ((da != 2 && da != 3) || (db != 2 && db != 3)) {
        throw DimensionError("matmul: expects 2-D or 3-D operands, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const int m = a.size(da - 2);
    const int ka = a.size(da - 1);
    const int kb = b.size(db - 2);
    const int n = b.size(db - 1);
    if (ka != kb) {
        throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const int ba = da == 3 ? a.size(0) : 1;
    const int bb = db == 3 ? b.size(0) : 1;
    if (da == 3 && db == 3 && ba != bb) {
        throw DimensionError("matmul: batch extents disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const int batch = std::max(ba, bb);
    const std::int64_t sa = da == 3 ? static_cast<std::int64_t>(m) * ka : 0;
    const std::int64_t sb = db == 3 ? static_cast<std::int64_t>(ka) * n : 0;
    const std::int64_t so = static_cast<std::int64_t>(m) * n;

    Shape out_shape = (da == 3 || db == 3) ? Shape{batch, m, n} : Shape{m, n};
    TensorT<T> out(std::move(out_shape));
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    parallel_for(batch, [&](int i) {
        gemm<T>(false, false, m, n, ka, pa + i * sa, pb + i * sb, T(0), po + i * so);
    });

    const int k = ka;
    attach_node<T>(
        out, {a, b},
        [a, b, m, n, k, batch, sa, sb, so](const T* g) mutable {
            if (a.requires_grad()) {
                T* ga = a.grad_data();
                const T* pb2 = b.data();
                if (sa != 0) {
                    parallel_for(batch, [&](int i) {
                        gemm<T>(false, true, m, k, n, g + i * so, pb2 + i * sb, T(1), ga + i * sa);
                    });
                } else {
                    for (int i = 0; i < batch; ++i) {
                        gemm<T>(false, true, m, k, n, g + i * so, pb2 + i * sb, T(1), ga);
                    }
                }
            }
            if (b.requires_grad()) {
                T* gb = b.grad_data();
                const T* pa2 = a.data();
                if (sb != 0) {
                    parallel_for(batch, [&](int i) {
                        gemm<T>(true, false, k, n, m, pa2 + i * sa, g + i * so, T(1), gb + i * sb);
                    });
                } else {
                    for (int i = 0; i < batch; ++i) {
                        gemm<T>(true, false, k, n, m, pa2 + i * sa, g + i * so, T(1), gb);
                    }
                }
            }
        },
        "matmul");
    return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void im2col(const T* x, int c_in, int h, int w, int kh, int kw, int stride, int pad, int oh,
            int ow, T* cols) {
    const int l = oh * ow;
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = cols + (static_cast<std::int64_t>(c) * kh * kw + ky * kw + kx) * l;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst + oy * ow, dst + (oy + 1) * ow, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::int64_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, int c_in, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, T* gx) {
    const int l = oh * ow;
    for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = cols + (static_cast<std::int64_t>(c) * kh * kw + ky * kw + kx) * l;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = gx + (static_cast<std::int64_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias, int stride,
                  int pad) {
    if (x.dim() != 4 || w.dim() != 4) {
        throw DimensionError("conv2d: expects x[B,C,H,W], w[O,C,kh,kw], got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
    if (pad < 0) throw ValidationError("conv2d: pad must be >= 0");
    const int b = x.size(0), c_in = x.size(1), h = x.size(2), ww = x.size(3);
    const int o = w.size(0), wc = w.size(1), kh = w.size(2), kw = w.size(3);
    if (wc != c_in) {
        throw DimensionError("conv2d: channel mismatch, input has " + std::to_string(c_in) +
                             ", kernel expects " + std::to_string(wc));
    }
    if (kh > h + 2 * pad || kw > ww + 2 * pad) {
        throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " larger than padded input " + std::to_string(h + 2 * pad) + "x" +
                             std::to_string(ww + 2 * pad));
    }
    if (bias.defined() && (bias.dim() != 1 || bias.size(0) != o)) {
        throw DimensionError("conv2d: bias must be [O]");
    }
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (ww + 2 * pad - kw) / stride + 1;
    const int ckk = c_in * kh * kw;
    const int l = oh * ow;
    const bool unit = (kh == 1 && kw == 1 && stride == 1 && pad == 0);

    TensorT<T> out({b, o, oh, ow});
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    const std::int64_t sx = static_cast<std::int64_t>(c_in) * h * ww;
    const std::int64_t so = static_cast<std::int64_t>(o) * l;
    const std::int64_t scol = static_cast<std::int64_t>(ckk) * l;

    // cached unfold, reused by the backward pass
    auto cols_cache = std::make_shared<std::vector<T>>();
    const bool want_cache =
        !unit && GradMode::enabled() && (x.requires_grad() || w.requires_grad());
    std::vector<T> fwd_scratch;
    if (!unit) {
        if (want_cache) {
            cols_cache->resize(static_cast<std::size_t>(b) * scol);
        } else {
            fwd_scratch.resize(static_cast<std::size_t>(std::min(b, num_threads())) * scol);
        }
    }
    parallel_for_worker(b, [&](int i, int worker) {
        const T* cptr;
        if (unit) {
            cptr = px + i * sx;
        } else {
            T* dst = want_cache ? cols_cache->data() + i * scol
                                : fwd_scratch.data() + static_cast<std::int64_t>(worker) * scol;
            im2col(px + i * sx, c_in, h, ww, kh, kw, stride, pad, oh, ow, dst);
            cptr = dst;
        }
        gemm<T>(false, false, o, l, ckk, pw, cptr, T(0), po + i * so);
        if (bias.defined()) {
            const T* pbias = bias.data();
            T* row = po + i * so;
            for (int oc = 0; oc < o; ++oc) {
                const T bv = pbias[oc];
                for (int j = 0; j < l; ++j) row[oc * l + j] += bv;
            }
        }
    });

    std::vector<TensorT<T>> inputs = {x, w};
    if (bias.defined()) inputs.push_back(bias);
    attach_node<T>(
        out, std::move(inputs),
        [x, w, bias, cols_cache, b, c_in, h, ww, o, kh, kw, stride, pad, oh, ow, ckk, l, unit,
         sx, so, scol](const T* g) mutable {
            const bool need_gx = x.requires_grad();
            const bool need_gw = w.requires_grad();
            const bool need_gb = bias.defined() && bias.requires_grad();
            const T* px2 = x.data();
            const T* pw2 = w.data();
            T* gx = need_gx ? x.grad_data() : nullptr;
            T* gw = need_gw ? w.grad_data() : nullptr;
            const int workers = std::min(b, num_threads());
            const std::size_t wn = static_cast<std::size_t>(o) * ckk;
            // per-worker weight-grad slabs, reduced in worker order; with
            // one worker the accumulation lands directly in the grad buffer
            std::vector<std::vector<T>> gw_slab(
                need_gw && workers > 1 ? static_cast<std::size_t>(workers) : 0);
            std::vector<std::vector<T>> gcol_scratch(
                !unit && need_gx ? static_cast<std::size_t>(workers) : 0);
            parallel_for_worker(b, [&](int i, int worker) {
                const T* cptr = nullptr;
                if (need_gw) {
                    cptr = unit ? px2 + i * sx : cols_cache->data() + i * scol;
                    T* acc;
                    if (workers > 1) {
                        auto& slab = gw_slab[static_cast<std::size_t>(worker)];
                        if (slab.empty()) slab.assign(wn, T(0));
                        acc = slab.data();
                    } else {
                        acc = gw;
                    }
                    gemm<T>(false, true, o, ckk, l, g + i * so, cptr, T(1), acc);
                }
                if (need_gx) {
                    if (unit) {
                        gemm<T>(true, false, ckk, l, o, pw2, g + i * so, T(1), gx + i * sx);
                    } else {
                        auto& gcols = gcol_scratch[static_cast<std::size_t>(worker)];
                        if (gcols.empty()) gcols.resize(static_cast<std::size_t>(scol));
                        gemm<T>(true, false, ckk, l, o, pw2, g + i * so, T(0), gcols.data());
                        col2im_add(gcols.data(), c_in, h, ww, kh, kw, stride, pad, oh, ow,
                                   gx + i * sx);
                    }
                }
            });
            if (need_gw && workers > 1) {
                for (const auto& slab : gw_slab) {
                    if (slab.empty()) continue;
                    for (std::size_t k = 0; k < wn; ++k) gw[k] += slab[k];
                }
            }
            if (need_gb) {
                T* gb = bias.grad_data();
                for (int i = 0; i < b; ++i) {
                    for (int oc = 0; oc < o; ++oc) {
                        double s = 0.0;
                        const T* row = g + i * so + oc * l;
                        for (int j = 0; j < l; ++j) s += static_cast<double>(row[j]);
                        gb[oc] += static_cast<T>(s);
                    }
                }
            }
        },
        "conv2d");
    return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> upsample_nearest2(const TensorT<T>& x) {
    if (x.dim() != 4) throw DimensionError("upsample_nearest2: expects [B,C,H,W]");
    const int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    TensorT<T> out({b, c, 2 * h, 2 * w});
    const T* px = x.data();
    T* po = out.data();
    for (int bc = 0; bc < b * c; ++bc) {
        const T* src = px + static_cast<std::int64_t>(bc) * h * w;
        T* dst = po + static_cast<std::int64_t>(bc) * 4 * h * w;
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                const T v = src[y * w + xx];
                T* d = dst + (2 * y) * (2 * w) + 2 * xx;
                d[0] = v;
                d[1] = v;
                d[2 * w] = v;
                d[2 * w + 1] = v;
            }
        }
    }
    attach_node<T>(
        out, {x},
        [x, b, c, h, w](const T* g) mutable {
            T* gx = x.grad_data();
            for (int bc = 0; bc < b * c; ++bc) {
                const T* gsrc = g + static_cast<std::int64_t>(bc) * 4 * h * w;
                T* gdst = gx + static_cast<std::int64_t>(bc) * h * w;
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) {
                        const T* s = gsrc + (2 * y) * (2 * w) + 2 * xx;
                        gdst[y * w + xx] += s[0] + s[1] + s[2 * w] + s[2 * w + 1];
                    }
                }
            }
        },
        "upsample_nearest2");
    return out;
}

template <typename T>
TensorT<T> avg_pool2d(const TensorT<T>& x, int k) {
    if (x.dim() != 4) throw DimensionError("avg_pool2d: expects [B,C,H,W]");
    if (k < 1) throw ValidationError("avg_pool2d: k must be >= 1");
    const int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (h % k != 0 || w % k != 0) {
        throw DimensionError("avg_pool2d: spatial extents must be divisible by k");
    }
    const int oh = h / k, ow = w / k;
    TensorT<T> out({b, c, oh, ow});
    const T* px = x.data();
    T* po = out.data();
    const double inv = 1.0 / (k * k);
    for (int bc = 0; bc < b * c; ++bc) {
        const T* src = px + static_cast<std::int64_t>(bc) * h * w;
        T* dst = po + static_cast<std::int64_t>(bc) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (int dy = 0; dy < k; ++dy) {
                    for (int dx = 0; dx < k; ++dx) {
                        s += static_cast<double>(src[(oy * k + dy) * w + ox * k + dx]);
                    }
                }
                dst[oy * ow + ox] = static_cast<T>(s * inv);
            }
        }
    }
    attach_node<T>(
        out, {x},
        [x, b, c, h, w, k, oh, ow, inv](const T* g) mutable {
            T* gx = x.grad_data();
            for (int bc = 0; bc < b * c; ++bc) {
                const T* gsrc = g + static_cast<std::int64_t>(bc) * oh * ow;
                T* gdst = gx + static_cast<std::int64_t>(bc) * h * w;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        const T gv = static_cast<T>(static_cast<double>(gsrc[oy * ow + ox]) * inv);
                        for (int dy = 0; dy < k; ++dy) {
                            for (int dx = 0; dx < k; ++dx) {
                                gdst[(oy * k + dy) * w + ox * k + dx] += gv;
                            }
                        }
                    }
                }
            }
        },
        "avg_pool2d");
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and activations
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
    const int d = x.dim();
    if (axis < 0) axis += d;
    if (axis < 0 || axis >= d) throw DimensionError("softmax: axis out of range");
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.size(i);
    const int n = x.size(axis);
    for (int i = axis + 1; i < d; ++i) inner *= x.size(i);

    TensorT<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (std::int64_t oo = 0; oo < outer; ++oo) {
        for (std::int64_t ii = 0; ii < inner; ++ii) {
            const T* sx = px + oo * n * inner + ii;
            T* sy = po + oo * n * inner + ii;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(sx[j * inner]));
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                const double e = std::exp(static_cast<double>(sx[j * inner]) - mx);
                sy[j * inner] = static_cast<T>(e);
                sum += e;
            }
            const double invsum = 1.0 / sum;
            for (int j = 0; j < n; ++j) {
                sy[j * inner] = static_cast<T>(static_cast<double>(sy[j * inner]) * invsum);
            }
        }
    }
    auto y_copy = copy_of(out.vec());
    attach_node<T>(
        out, {x},
        [x, y_copy, outer, n, inner](const T* g) mutable {
            T* gx = x.grad_data();
            const T* y = y_copy->data();
            for (std::int64_t oo = 0; oo < outer; ++oo) {
                for (std::int64_t ii = 0; ii < inner; ++ii) {
                    const std::int64_t base = oo * n * inner + ii;
                    double dot = 0.0;
                    for (int j = 0; j < n; ++j) {
                        dot += static_cast<double>(g[base + j * inner]) *
                               static_cast<double>(y[base + j * inner]);
                    }
                    for (int j = 0; j < n; ++j) {
                        const double yj = static_cast<double>(y[base + j * inner]);
                        gx[base + j * inner] +=
                            static_cast<T>(yj * (static_cast<double>(g[base + j * inner]) - dot));
                    }
                }
            }
        },
        "softmax");
    return out;
}

template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gamma,
                      const TensorT<T>& beta, double eps) {
    if (x.dim() != 4) throw DimensionError("group_norm: expects [B,C,H,W]");
    const int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (groups < 1 || c % groups != 0) {
        throw ConfigError("group_norm: channel count " + std::to_string(c) +
                          " not divisible by groups " + std::to_string(groups));
    }
    if (eps <= 0) throw ConfigError("group_norm: eps must be > 0");
    if (gamma.dim() != 1 || gamma.size(0) != c || beta.dim() != 1 || beta.size(0) != c) {
        throw DimensionError("group_norm: gamma/beta must be [C]");
    }
    const int cg = c / groups;
    const std::int64_t gsz = static_cast<std::int64_t>(cg) * h * w;
    TensorT<T> out(x.shape());
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    T* po = out.data();
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * groups * 2);
    for (int bi = 0; bi < b; ++bi) {
        for (int gi = 0; gi < groups; ++gi) {
            const T* sx = px + (static_cast<std::int64_t>(bi) * c + gi * cg) * h * w;
            double mean = 0.0;
            for (std::int64_t j = 0; j < gsz; ++j) mean += static_cast<double>(sx[j]);
            mean /= static_cast<double>(gsz);
            double var = 0.0;
            for (std::int64_t j = 0; j < gsz; ++j) {
                const double dd = static_cast<double>(sx[j]) - mean;
                var += dd * dd;
            }
            var /= static_cast<double>(gsz);
            const double inv = 1.0 / std::sqrt(var + eps);
            (*stats)[(static_cast<std::size_t>(bi) * groups + gi) * 2] = mean;
            (*stats)[(static_cast<std::size_t>(bi) * groups + gi) * 2 + 1] = inv;
            T* sy = po + (static_cast<std::int64_t>(bi) * c + gi * cg) * h * w;
            for (int cc = 0; cc < cg; ++cc) {
                const double gam = static_cast<double>(pg[gi * cg + cc]);
                const double bet = static_cast<double>(pb[gi * cg + cc]);
                const T* sxc = sx + static_cast<std::int64_t>(cc) * h * w;
                T* syc = sy + static_cast<std::int64_t>(cc) * h * w;
                for (int j = 0; j < h * w; ++j) {
                    syc[j] = static_cast<T>((static_cast<double>(sxc[j]) - mean) * inv * gam + bet);
                }
            }
        }
    }
    attach_node<T>(
        out, {x, gamma, beta},
        [x, gamma, beta, stats, b, c, h, w, groups, cg, gsz](const T* g) mutable {
            const T* px2 = x.data();
            const T* pg2 = gamma.data();
            const bool need_gx = x.requires_grad();
            const bool need_gg = gamma.requires_grad();
            const bool need_gb = beta.requires_grad();
            T* gx = need_gx ? x.grad_data() : nullptr;
            T* gg = need_gg ? gamma.grad_data() : nullptr;
            T* gb = need_gb ? beta.grad_data() : nullptr;
            const int hw = h * w;
            for (int bi = 0; bi < b; ++bi) {
                for (int gi = 0; gi < groups; ++gi) {
                    const double mean = (*stats)[(static_cast<std::size_t>(bi) * groups + gi) * 2];
                    const double inv =
                        (*stats)[(static_cast<std::size_t>(bi) * groups + gi) * 2 + 1];
                    const std::int64_t base = (static_cast<std::int64_t>(bi) * c + gi * cg) * hw;
                    const T* sx = px2 + base;
                    const T* sg = g + base;
                    // s1 = sum(dy*gamma), s2 = sum(dy*gamma*xhat)
                    double s1 = 0.0, s2 = 0.0;
                    for (int cc = 0; cc < cg; ++cc) {
                        const double gam = static_cast<double>(pg2[gi * cg + cc]);
                        for (int j = 0; j < hw; ++j) {
                            const double dy = static_cast<double>(sg[cc * hw + j]) * gam;
                            const double xhat =
                                (static_cast<double>(sx[cc * hw + j]) - mean) * inv;
                            s1 += dy;
                            s2 += dy * xhat;
                        }
                    }
                    const double ninv = 1.0 / static_cast<double>(gsz);
                    for (int cc = 0; cc < cg; ++cc) {
                        const double gam = static_cast<double>(pg2[gi * cg + cc]);
                        double dgam = 0.0, dbet = 0.0;
                        for (int j = 0; j < hw; ++j) {
                            const double gy = static_cast<double>(sg[cc * hw + j]);
                            const double xhat =
                                (static_cast<double>(sx[cc * hw + j]) - mean) * inv;
                            if (need_gx) {
                                gx[base + cc * hw + j] += static_cast<T>(
                                    inv * (gy * gam - ninv * s1 - xhat * ninv * s2));
                            }
                            dgam += gy * xhat;
                            dbet += gy;
                        }
                        if (need_gg) gg[gi * cg + cc] += static_cast<T>(dgam);
                        if (need_gb) gb[gi * cg + cc] += static_cast<T>(dbet);
                    }
                }
            }
        },
        "group_norm");
    return out;
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      double eps) {
    const int d = x.size(x.dim() - 1);
    if (gamma.dim() != 1 || gamma.size(0) != d || beta.dim() != 1 || beta.size(0) != d) {
        throw DimensionError("layer_norm: gamma/beta must match last extent " + std::to_string(d));
    }
    if (eps <= 0) throw ConfigError("layer_norm: eps must be > 0");
    const std::int64_t rows = x.numel() / d;
    TensorT<T> out(x.shape());
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    T* po = out.data();
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * 2);
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* sx = px + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += static_cast<double>(sx[j]);
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dd = static_cast<double>(sx[j]) - mean;
            var += dd * dd;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[static_cast<std::size_t>(r) * 2] = mean;
        (*stats)[static_cast<std::size_t>(r) * 2 + 1] = inv;
        T* sy = po + r * d;
        for (int j = 0; j < d; ++j) {
            sy[j] = static_cast<T>((static_cast<double>(sx[j]) - mean) * inv *
                                       static_cast<double>(pg[j]) +
                                   static_cast<double>(pb[j]));
        }
    }
    attach_node<T>(
        out, {x, gamma, beta},
        [x, gamma, beta, stats, rows, d](const T* g) mutable {
            const T* px2 = x.data();
            const T* pg2 = gamma.data();
            const bool need_gx = x.requires_grad();
            const bool need_gg = gamma.requires_grad();
            const bool need_gb = beta.requires_grad();
            T* gx = need_gx ? x.grad_data() : nullptr;
            T* gg = need_gg ? gamma.grad_data() : nullptr;
            T* gb = need_gb ? beta.grad_data() : nullptr;
            for (std::int64_t r = 0; r < rows; ++r) {
                const double mean = (*stats)[static_cast<std::size_t>(r) * 2];
                const double inv = (*stats)[static_cast<std::size_t>(r) * 2 + 1];
                const T* sx = px2 + r * d;
                const T* sg = g + r * d;
                double s1 = 0.0, s2 = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double dy = static_cast<double>(sg[j]) * static_cast<double>(pg2[j]);
                    const double xhat = (static_cast<double>(sx[j]) - mean) * inv;
                    s1 += dy;
                    s2 += dy * xhat;
                }
                for (int j = 0; j < d; ++j) {
                    const double gy = static_cast<double>(sg[j]);
                    const double xhat = (static_cast<double>(sx[j]) - mean) * inv;
                    if (need_gx) {
                        gx[r * d + j] += static_cast<T>(
                            inv * (gy * static_cast<double>(pg2[j]) - (s1 + xhat * s2) / d));
                    }
                    if (need_gg) gg[j] += static_cast<T>(gy * xhat);
                    if (need_gb) gb[j] += static_cast<T>(gy);
                }
            }
        },
        "layer_norm");
    return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const auto n = static_cast<std::size_t>(x.numel());
    for (std::size_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(px[i]);
        po[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
    }
    attach_node<T>(
        out, {x},
        [x, n](const T* g) mutable {
            T* gx = x.grad_data();
            const T* px2 = x.data();
            for (std::size_t i = 0; i < n; ++i) {
                const double v = static_cast<double>(px2[i]);
                const double s = 1.0 / (1.0 + std::exp(-v));
                gx[i] += static_cast<T>(static_cast<double>(g[i]) * s * (1.0 + v * (1.0 - s)));
            }
        },
        "silu");
    return out;
}

template <typename T>
TensorT<T> exp(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const auto n = static_cast<std::size_t>(x.numel());
    for (std::size_t i = 0; i < n; ++i) po[i] = static_cast<T>(std::exp(static_cast<double>(px[i])));
    auto y_copy = copy_of(out.vec());
    attach_node<T>(
        out, {x},
        [x, y_copy, n](const T* g) mutable {
            T* gx = x.grad_data();
            const T* y = y_copy->data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
        },
        "exp");
    return out;
}

template <typename T>
TensorT<T> log(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const auto n = static_cast<std::size_t>(x.numel());
    for (std::size_t i = 0; i < n; ++i) po[i] = static_cast<T>(std::log(static_cast<double>(px[i])));
    attach_node<T>(
        out, {x},
        [x, n](const T* g) mutable {
            T* gx = x.grad_data();
            const T* px2 = x.data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / px2[i];
        },
        "log");
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    double s = 0.0;
    const T* px = x.data();
    const auto n = static_cast<std::size_t>(x.numel());
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(px[i]);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(s));
    attach_node<T>(
        out, {x},
        [x, n](const T* g) mutable {
            T* gx = x.grad_data();
            const T gv = g[0];
            for (std::size_t i = 0; i < n; ++i) gx[i] += gv;
        },
        "sum_all");
    return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
    double s = 0.0;
    const T* px = x.data();
    const auto n = static_cast<std::size_t>(x.numel());
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(px[i]);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
    attach_node<T>(
        out, {x},
        [x, n](const T* g) mutable {
            T* gx = x.grad_data();
            const T gv = static_cast<T>(static_cast<double>(g[0]) / static_cast<double>(n));
            for (std::size_t i = 0; i < n; ++i) gx[i] += gv;
        },
        "mean_all");
    return out;
}

template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    TensorT<T> out(std::move(shape));
    out.vec() = x.vec();
    const auto n = static_cast<std::size_t>(x.numel());
    attach_node<T>(
        out, {x},
        [x, n](const T* g) mutable {
            T* gx = x.grad_data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
        },
        "reshape");
    return out;
}

namespace {

// flat index remap for permute: out[perm(idx)] = in[idx]
template <typename T>
void permute_copy(const T* src, T* dst, const Shape& in_shape, const std::vector<int>& axes,
                  bool add) {
    const int d = static_cast<int>(in_shape.size());
    std::vector<std::int64_t> in_strides(d, 1), out_strides(d, 1);
    Shape out_shape(d);
    for (int i = 0; i < d; ++i) out_shape[i] = in_shape[axes[i]];
    for (int i = d - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    for (int i = d - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    // stride of input axis axes[i] as seen from the output index order
    std::vector<std::int64_t> gather(d);
    for (int i = 0; i < d; ++i) gather[i] = in_strides[axes[i]];
    const std::int64_t n = shape_numel(in_shape);
    std::vector<std::int64_t> coord(d, 0);
    std::int64_t src_off = 0;
    for (std::int64_t o = 0; o < n; ++o) {
        if (add)
            dst[src_off] += src[o];
        else
            dst[o] = src[src_off];
        // odometer over output coords
        for (int i = d - 1; i >= 0; --i) {
            ++coord[i];
            src_off += gather[i];
            if (coord[i] < out_shape[i]) break;
            src_off -= gather[i] * out_shape[i];
            coord[i] = 0;
        }
    }
}

}  // namespace

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& axes) {
    const int d = x.dim();
    if (static_cast<int>(axes.size()) != d) throw DimensionError("permute: axes rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(d), false);
    Shape out_shape(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        if (axes[i] < 0 || axes[i] >= d || seen[axes[i]]) {
            throw DimensionError("permute: invalid axis list");
        }
        seen[axes[i]] = true;
        out_shape[i] = x.size(axes[i]);
    }
    TensorT<T> out(out_shape);
    permute_copy(x.data(), out.data(), x.shape(), axes, false);
    attach_node<T>(
        out, {x},
        [x, axes](const T* g) mutable {
            // scatter-add through the same mapping
            permute_copy(g, x.grad_data(), x.shape(), axes, true);
        },
        "permute");
    return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis) {
    if (xs.empty()) throw DimensionError("concat: no inputs");
    const int d = xs[0].dim();
    if (axis < 0) axis += d;
    if (axis < 0 || axis >= d) throw DimensionError("concat: axis out of range");
    Shape out_shape = xs[0].shape();
    int total = 0;
    for (const auto& x : xs) {
        if (x.dim() != d) throw DimensionError("concat: rank mismatch");
        for (int i = 0; i < d; ++i) {
            if (i != axis && x.size(i) != out_shape[i]) {
                throw DimensionError("concat: shape mismatch at axis " + std::to_string(i));
            }
        }
        total += x.size(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = total;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < d; ++i) inner *= out_shape[i];

    TensorT<T> out(out_shape);
    T* po = out.data();
    const std::int64_t orow = static_cast<std::int64_t>(total) * inner;
    std::int64_t off = 0;
    for (const auto& x : xs) {
        const std::int64_t xrow = static_cast<std::int64_t>(x.size(axis)) * inner;
        const T* px = x.data();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::memcpy(po + o * orow + off, px + o * xrow, sizeof(T) * xrow);
        }
        off += xrow;
    }
    attach_node<T>(
        out, xs,
        [xs, outer, inner, orow, axis](const T* g) mutable {
            std::int64_t off2 = 0;
            for (auto& x : xs) {
                const std::int64_t xrow = static_cast<std::int64_t>(x.size(axis)) * inner;
                if (x.requires_grad()) {
                    T* gx = x.grad_data();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const T* gsrc = g + o * orow + off2;
                        T* gdst = gx + o * xrow;
                        for (std::int64_t j = 0; j < xrow; ++j) gdst[j] += gsrc[j];
                    }
                }
                off2 += xrow;
            }
        },
        "concat");
    return out;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int start, int len) {
    const int d = x.dim();
    if (axis < 0) axis += d;
    if (axis < 0 || axis >= d) throw DimensionError("slice: axis out of range");
    if (start < 0 || len < 1 || start + len > x.size(axis)) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") out of bounds for extent " +
                             std::to_string(x.size(axis)));
    }
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.size(i);
    for (int i = axis + 1; i < d; ++i) inner *= x.size(i);
    const std::int64_t xrow = static_cast<std::int64_t>(x.size(axis)) * inner;
    const std::int64_t orow = static_cast<std::int64_t>(len) * inner;

    TensorT<T> out(out_shape);
    const T* px = x.data();
    T* po = out.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::memcpy(po + o * orow, px + o * xrow + start * inner, sizeof(T) * orow);
    }
    attach_node<T>(
        out, {x},
        [x, outer, inner, xrow, orow, start](const T* g) mutable {
            T* gx = x.grad_data();
            for (std::int64_t o = 0; o < outer; ++o) {
                const T* gsrc = g + o * orow;
                T* gdst = gx + o * xrow + start * inner;
                for (std::int64_t j = 0; j < orow; ++j) gdst[j] += gsrc[j];
            }
        },
        "slice");
    return out;
}

// ---------------------------------------------------------------------------
// Broadcast helpers
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> broadcast_batch(const TensorT<T>& x, int batch) {
    if (batch < 1) throw DimensionError("broadcast_batch: batch must be >= 1");
    Shape out_shape;
    out_shape.push_back(batch);
    for (int e : x.shape()) out_shape.push_back(e);
    TensorT<T> out(out_shape);
    const auto n = static_cast<std::size_t>(x.numel());
    const T* px = x.data();
    T* po = out.data();
    for (int i = 0; i < batch; ++i) std::memcpy(po + i * n, px, sizeof(T) * n);
    attach_node<T>(
        out, {x},
        [x, batch, n](const T* g) mutable {
            T* gx = x.grad_data();
            for (int i = 0; i < batch; ++i) {
                const T* gs = g + static_cast<std::size_t>(i) * n;
                for (std::size_t j = 0; j < n; ++j) gx[j] += gs[j];
            }
        },
        "broadcast_batch");
    return out;
}

template <typename T>
TensorT<T> broadcast_channels(const TensorT<T>& v, int batch, int h, int w) {
    if (v.dim() != 1) throw DimensionError("broadcast_channels: expects [C]");
    const int c = v.size(0);
    TensorT<T> out({batch, c, h, w});
    const T* pv = v.data();
    T* po = out.data();
    const int hw = h * w;
    for (int b = 0; b < batch; ++b) {
        for (int cc = 0; cc < c; ++cc) {
            T* dst = po + (static_cast<std::int64_t>(b) * c + cc) * hw;
            std::fill(dst, dst + hw, pv[cc]);
        }
    }
    attach_node<T>(
        out, {v},
        [v, batch, c, hw](const T* g) mutable {
            T* gv = v.grad_data();
            for (int b = 0; b < batch; ++b) {
                for (int cc = 0; cc < c; ++cc) {
                    const T* gs = g + (static_cast<std::int64_t>(b) * c + cc) * hw;
                    double s = 0.0;
                    for (int j = 0; j < hw; ++j) s += static_cast<double>(gs[j]);
                    gv[cc] += static_cast<T>(s);
                }
            }
        },
        "broadcast_channels");
    return out;
}

template <typename T>
TensorT<T> mul_batch_scalar(const TensorT<T>& x, const std::vector<double>& mask) {
    if (x.dim() < 1 || x.size(0) != static_cast<int>(mask.size())) {
        throw DimensionError("mul_batch_scalar: mask length must equal batch extent");
    }
    const int b = x.size(0);
    const std::int64_t per = x.numel() / b;
    TensorT<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int i = 0; i < b; ++i) {
        const T s = static_cast<T>(mask[static_cast<std::size_t>(i)]);
        const T* sx = px + i * per;
        T* sy = po + i * per;
        for (std::int64_t j = 0; j < per; ++j) sy[j] = sx[j] * s;
    }
    attach_node<T>(
        out, {x},
        [x, mask, b, per](const T* g) mutable {
            T* gx = x.grad_data();
            for (int i = 0; i < b; ++i) {
                const T s = static_cast<T>(mask[static_cast<std::size_t>(i)]);
                const T* gs = g + i * per;
                T* gd = gx + i * per;
                for (std::int64_t j = 0; j < per; ++j) gd[j] += gs[j] * s;
            }
        },
        "mul_batch_scalar");
    return out;
}

template <typename T>
TensorT<T> add_channel_map(const TensorT<T>& x, const TensorT<T>& t) {
    if (x.dim() != 4 || t.dim() != 2 || t.size(0) != x.size(0) || t.size(1) != x.size(1)) {
        throw DimensionError("add_channel_map: expects x[B,C,H,W] and t[B,C], got " +
                             shape_str(x.shape()) + " and " + shape_str(t.shape()));
    }
    const int b = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
    TensorT<T> out(x.shape());
    const T* px = x.data();
    const T* pt = t.data();
    T* po = out.data();
    for (int i = 0; i < b; ++i) {
        for (int cc = 0; cc < c; ++cc) {
            const T tv = pt[i * c + cc];
            const T* sx = px + (static_cast<std::int64_t>(i) * c + cc) * hw;
            T* sy = po + (static_cast<std::int64_t>(i) * c + cc) * hw;
            for (int j = 0; j < hw; ++j) sy[j] = sx[j] + tv;
        }
    }
    attach_node<T>(
        out, {x, t},
        [x, t, b, c, hw](const T* g) mutable {
            if (x.requires_grad()) {
                T* gx = x.grad_data();
                const std::int64_t n = static_cast<std::int64_t>(b) * c * hw;
                for (std::int64_t j = 0; j < n; ++j) gx[j] += g[j];
            }
            if (t.requires_grad()) {
                T* gt = t.grad_data();
                for (int i = 0; i < b; ++i) {
                    for (int cc = 0; cc < c; ++cc) {
                        const T* gs = g + (static_cast<std::int64_t>(i) * c + cc) * hw;
                        double s = 0.0;
                        for (int j = 0; j < hw; ++j) s += static_cast<double>(gs[j]);
                        gt[i * c + cc] += static_cast<T>(s);
                    }
                }
            }
        },
        "add_channel_map");
    return out;
}

template <typename T>
TensorT<T> add_bias_lastdim(const TensorT<T>& x, const TensorT<T>& bvec) {
    const int d = x.size(x.dim() - 1);
    if (bvec.dim() != 1 || bvec.size(0) != d) {
        throw DimensionError("add_bias_lastdim: bias must be [" + std::to_string(d) + "]");
    }
    const std::int64_t rows = x.numel() / d;
    TensorT<T> out(x.shape());
    const T* px = x.data();
    const T* pb = bvec.data();
    T* po = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        for (int j = 0; j < d; ++j) po[r * d + j] = px[r * d + j] + pb[j];
    }
    attach_node<T>(
        out, {x, bvec},
        [x, bvec, rows, d](const T* g) mutable {
            if (x.requires_grad()) {
                T* gx = x.grad_data();
                const std::int64_t n = rows * d;
                for (std::int64_t j = 0; j < n; ++j) gx[j] += g[j];
            }
            if (bvec.requires_grad()) {
                T* gb = bvec.grad_data();
                for (int j = 0; j < d; ++j) {
                    double s = 0.0;
                    for (std::int64_t r = 0; r < rows; ++r) {
                        s += static_cast<double>(g[r * d + j]);
                    }
                    gb[j] += static_cast<T>(s);
                }
            }
        },
        "add_bias_lastdim");
    return out;
}

template <typename T>
void clamp_inplace(TensorT<T>& x, T lo, T hi) {
    for (auto& v : x.vec()) v = std::min(hi, std::max(lo, v));
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define ODPG_INSTANTIATE_OPS(T)                                                                  \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                               \
    template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                               \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                               \
    template TensorT<T> add_scalar(const TensorT<T>&, double);                                   \
    template TensorT<T> mul_scalar(const TensorT<T>&, double);                                   \
    template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);                            \
    template TensorT<T> conv2d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int,    \
                               int);                                                             \
    template TensorT<T> upsample_nearest2(const TensorT<T>&);                                    \
    template TensorT<T> avg_pool2d(const TensorT<T>&, int);                                      \
    template TensorT<T> softmax(const TensorT<T>&, int);                                         \
    template TensorT<T> group_norm(const TensorT<T>&, int, const TensorT<T>&, const TensorT<T>&, \
                                   double);                                                      \
    template TensorT<T> layer_norm(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,      \
                                   double);                                                      \
    template TensorT<T> silu(const TensorT<T>&);                                                 \
    template TensorT<T> exp(const TensorT<T>&);                                                  \
    template TensorT<T> log(const TensorT<T>&);                                                  \
    template TensorT<T> sum_all(const TensorT<T>&);                                              \
    template TensorT<T> mean_all(const TensorT<T>&);                                             \
    template TensorT<T> mse(const TensorT<T>&, const TensorT<T>&);                               \
    template TensorT<T> reshape(const TensorT<T>&, Shape);                                       \
    template TensorT<T> permute(const TensorT<T>&, const std::vector<int>&);                     \
    template TensorT<T> concat(const std::vector<TensorT<T>>&, int);                             \
    template TensorT<T> slice(const TensorT<T>&, int, int, int);                                 \
    template TensorT<T> broadcast_batch(const TensorT<T>&, int);                                 \
    template TensorT<T> broadcast_channels(const TensorT<T>&, int, int, int);                    \
    template TensorT<T> mul_batch_scalar(const TensorT<T>&, const std::vector<double>&);         \
    template TensorT<T> add_channel_map(const TensorT<T>&, const TensorT<T>&);                   \
    template TensorT<T> add_bias_lastdim(const TensorT<T>&, const TensorT<T>&);                  \
    template void clamp_inplace(TensorT<T>&, T, T);                                              \
    template void gemm(bool, bool, int, int, int, const T*, const T*, T, T*);

ODPG_INSTANTIATE_OPS(float)
ODPG_INSTANTIATE_OPS(double)

#undef ODPG_INSTANTIATE_OPS

}  // namespace odpg
