#include "odpg/nn.hpp"

#include <cmath>

namespace odpg {

template <typename T>
void kaiming_uniform(TensorT<T>& w, int fan_in, Rng& rng, double gain) {
    const double lim = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    for (auto& x : w.vec()) x = static_cast<T>(rng.uniform(-lim, lim));
}

template <typename T>
TensorT<T> time_embed(const std::vector<std::int64_t>& ts, int dim, double max_period) {
    if (dim <= 0 || dim % 2 != 0) {
        throw ConfigError("time_embed: dim must be positive and even, got " + std::to_string(dim));
    }
    for (auto t : ts) {
        if (t < 0) throw ValidationError("time_embed: timestep must be >= 0");
    }
    const int half = dim / 2;
    TensorT<T> out({static_cast<int>(ts.size()), dim});
    T* po = out.data();
    for (std::size_t b = 0; b < ts.size(); ++b) {
        const double t = static_cast<double>(ts[b]);
        for (int i = 0; i < half; ++i) {
            const double freq = std::pow(max_period, -static_cast<double>(i) / half);
            po[b * dim + i] = static_cast<T>(std::sin(t * freq));
            po[b * dim + half + i] = static_cast<T>(std::cos(t * freq));
        }
    }
    return out;
}

template <typename T>
TensorT<T> attention_core(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                          int heads) {
    const bool batched = q.dim() == 3;
    if (q.dim() != k.dim() || q.dim() != v.dim() || (q.dim() != 2 && q.dim() != 3)) {
        throw DimensionError("attention_core: Q/K/V must all be 2-D or all 3-D");
    }
    const int d = q.size(q.dim() - 1);
    if (k.size(k.dim() - 1) != d || v.size(v.dim() - 1) != d) {
        throw DimensionError("attention_core: head dimension mismatch, Q has " +
                             std::to_string(d) + ", K has " +
                             std::to_string(k.size(k.dim() - 1)) + ", V has " +
                             std::to_string(v.size(v.dim() - 1)));
    }
    if (k.size(k.dim() - 2) != v.size(v.dim() - 2)) {
        throw DimensionError("attention_core: K and V row counts differ");
    }
    if (heads < 1 || d % heads != 0) {
        throw DimensionError("attention_core: d=" + std::to_string(d) +
                             " not divisible by heads=" + std::to_string(heads));
    }
    TensorT<T> q3 = batched ? q : reshape(q, {1, q.size(0), d});
    TensorT<T> k3 = batched ? k : reshape(k, {1, k.size(0), d});
    TensorT<T> v3 = batched ? v : reshape(v, {1, v.size(0), d});
    const int b = q3.size(0);
    if (k3.size(0) != b || v3.size(0) != b) {
        throw DimensionError("attention_core: batch extents disagree");
    }
    const int nq = q3.size(1), nk = k3.size(1), dh = d / heads;

    auto split = [&](const TensorT<T>& x, int n) {
        auto y = reshape(x, {b, n, heads, dh});
        y = permute(y, {0, 2, 1, 3});
        return reshape(y, {b * heads, n, dh});
    };
    auto qh = split(q3, nq);
    auto kh = split(k3, nk);
    auto vh = split(v3, nk);

    auto logits = matmul(qh, permute(kh, {0, 2, 1}));
    logits = mul_scalar(logits, 1.0 / std::sqrt(static_cast<double>(dh)));
    auto attn = softmax(logits, 2);
    auto ctx = matmul(attn, vh);  // [b*heads, nq, dh]

    auto out = reshape(ctx, {b, heads, nq, dh});
    out = permute(out, {0, 2, 1, 3});
    out = reshape(out, {b, nq, d});
    return batched ? out : reshape(out, {nq, d});
}

template <typename T>
TensorT<T> flatten_tokens(const TensorT<T>& x) {
    if (x.dim() != 4) throw DimensionError("flatten_tokens: expects [B,C,H,W]");
    const int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    return reshape(permute(reshape(x, {b, c, h * w}), {0, 2, 1}), {b, h * w, c});
}

template <typename T>
TensorT<T> unflatten_tokens(const TensorT<T>& x, int h, int w) {
    if (x.dim() != 3) throw DimensionError("unflatten_tokens: expects [B,n,C]");
    const int b = x.size(0), n = x.size(1), c = x.size(2);
    if (n != h * w) throw DimensionError("unflatten_tokens: token count != h*w");
    return reshape(permute(x, {0, 2, 1}), {b, c, h, w});
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <typename T>
LinearT<T>::LinearT(int in, int out, Rng& rng, bool with_bias) : has_bias(with_bias) {
    weight = TensorT<T>({in, out}, true);
    kaiming_uniform(weight, in, rng);
    if (has_bias) bias = TensorT<T>({out}, true);
}

template <typename T>
TensorT<T> LinearT<T>::forward(const TensorT<T>& x) const {
    const int in = weight.size(0);
    if (x.size(x.dim() - 1) != in) {
        throw DimensionError("linear: input width " + std::to_string(x.size(x.dim() - 1)) +
                             " != " + std::to_string(in));
    }
    TensorT<T> y;
    if (x.dim() <= 2) {
        auto x2 = x.dim() == 2 ? x : reshape(x, {1, in});
        y = matmul(x2, weight);
        if (x.dim() == 1) y = reshape(y, {weight.size(1)});
    } else if (x.dim() == 3) {
        y = matmul(x, weight);
    } else {
        throw DimensionError("linear: rank > 3 unsupported");
    }
    if (has_bias) y = add_bias_lastdim(y, bias);
    return y;
}

template <typename T>
void LinearT<T>::collect(const std::string& prefix, ParamMapT<T>& out) {
    out.emplace_back(prefix + ".weight", weight);
    if (has_bias) out.emplace_back(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// Conv layers
// ---------------------------------------------------------------------------

template <typename T>
Conv2dLayerT<T>::Conv2dLayerT(int in_ch, int out_ch, int kernel, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
    weight = TensorT<T>({out_ch, in_ch, kernel, kernel}, true);
    kaiming_uniform(weight, in_ch * kernel * kernel, rng);
    bias = TensorT<T>({out_ch}, true);
}

template <typename T>
TensorT<T> Conv2dLayerT<T>::forward(const TensorT<T>& x) const {
    return conv2d(x, weight, bias, stride, pad);
}

template <typename T>
void Conv2dLayerT<T>::collect(const std::string& prefix, ParamMapT<T>& out) {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
ZeroConv2dT<T>::ZeroConv2dT(int in_ch, int out_ch) {
    weight = TensorT<T>({out_ch, in_ch, 1, 1}, true);
    bias = TensorT<T>({out_ch}, true);
}

template <typename T>
TensorT<T> ZeroConv2dT<T>::forward(const TensorT<T>& x) const {
    return conv2d(x, weight, bias, 1, 0);
}

template <typename T>
void ZeroConv2dT<T>::collect(const std::string& prefix, ParamMapT<T>& out) {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// Norm layers
// ---------------------------------------------------------------------------

template <typename T>
GroupNormLayerT<T>::GroupNormLayerT(int channels, int groups_, double eps_)
    : groups(groups_), eps(eps_) {
    gamma = TensorT<T>::ones({channels});
    gamma.set_requires_grad(true);
    beta = TensorT<T>({channels}, true);
}

template <typename T>
TensorT<T> GroupNormLayerT<T>::forward(const TensorT<T>& x) const {
    return group_norm(x, groups, gamma, beta, eps);
}

template <typename T>
void GroupNormLayerT<T>::collect(const std::string& prefix, ParamMapT<T>& out) {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

template <typename T>
LayerNormLayerT<T>::LayerNormLayerT(int dim, double eps_) : eps(eps_) {
    gamma = TensorT<T>::ones({dim});
    gamma.set_requires_grad(true);
    beta = TensorT<T>({dim}, true);
}

template <typename T>
TensorT<T> LayerNormLayerT<T>::forward(const TensorT<T>& x) const {
    return layer_norm(x, gamma, beta, eps);
}

template <typename T>
void LayerNormLayerT<T>::collect(const std::string& prefix, ParamMapT<T>& out) {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

// ---------------------------------------------------------------------------
// Residual block
// ---------------------------------------------------------------------------

template <typename T>
ResidualBlockT<T>::ResidualBlockT(int in_ch_, int out_ch_, int t_dim_, int gn_groups, Rng& rng)
    : in_ch(in_ch_), out_ch(out_ch_), t_dim(t_dim_) {
    norm1 = GroupNormLayerT<T>(in_ch, gn_groups);
    conv1 = Conv2dLayerT<T>(in_ch, out_ch, 3, 1, 1, rng);
    if (t_dim > 0) time_proj = LinearT<T>(t_dim, out_ch, rng);
    norm2 = GroupNormLayerT<T>(out_ch, gn_groups);
    conv2 = Conv2dLayerT<T>(out_ch, out_ch, 3, 1, 1, rng);
    if (in_ch != out_ch) skip = Conv2dLayerT<T>(in_ch, out_ch, 1, 1, 0, rng);
}

template <typename T>
TensorT<T> ResidualBlockT<T>::forward(const TensorT<T>& x, const TensorT<T>& t_emb) const {
    if (t_dim > 0) {
        if (!t_emb.defined() || t_emb.dim() != 2 || t_emb.size(1) != t_dim) {
            throw DimensionError("residual block: time embedding must be [B," +
                                 std::to_string(t_dim) + "]");
        }
    }
    auto h = conv1.forward(silu(norm1.forward(x)));
    if (t_dim > 0) h = add_channel_map(h, time_proj.forward(silu(t_emb)));
    h = conv2.forward(silu(norm2.forward(h)));
    auto res = (in_ch != out_ch) ? skip.forward(x) : x;
    return add(h, res);
}

template <typename T>
void ResidualBlockT<T>::collect(const std::string& prefix, ParamMapT<T>& out) {
    norm1.collect(prefix + ".norm1", out);
    conv1.collect(prefix + ".conv1", out);
    if (t_dim > 0) time_proj.collect(prefix + ".time_proj", out);
    norm2.collect(prefix + ".norm2", out);
    conv2.collect(prefix + ".conv2", out);
    if (in_ch != out_ch) skip.collect(prefix + ".skip", out);
}

// ---------------------------------------------------------------------------
// Transformer blocks
// ---------------------------------------------------------------------------

template <typename T>
TransformerBlockT<T>::TransformerBlockT(int dim, int heads_, int mlp_ratio, Rng& rng)
    : heads(heads_) {
    ln1 = LayerNormLayerT<T>(dim);
    ln2 = LayerNormLayerT<T>(dim);
    q = LinearT<T>(dim, dim, rng);
    k = LinearT<T>(dim, dim, rng);
    v = LinearT<T>(dim, dim, rng);
    o = LinearT<T>(dim, dim, rng);
    fc1 = LinearT<T>(dim, dim * mlp_ratio, rng);
    fc2 = LinearT<T>(dim * mlp_ratio, dim, rng);
}

template <typename T>
TensorT<T> TransformerBlockT<T>::forward(const TensorT<T>& x) const {
    auto a = ln1.forward(x);
    auto attn = attention_core(q.forward(a), k.forward(a), v.forward(a), heads);
    auto h = add(x, o.forward(attn));
    auto m = ln2.forward(h);
    return add(h, fc2.forward(silu(fc1.forward(m))));
}

template <typename T>
void TransformerBlockT<T>::collect(const std::string& prefix, ParamMapT<T>& out) {
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    o.collect(prefix + ".o", out);
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

template <typename T>
DecoderBlockT<T>::DecoderBlockT(int dim, int heads_, int mlp_ratio, Rng& rng) : heads(heads_) {
    ln1 = LayerNormLayerT<T>(dim);
    ln2 = LayerNormLayerT<T>(dim);
    ln3 = LayerNormLayerT<T>(dim);
    sq = LinearT<T>(dim, dim, rng);
    sk = LinearT<T>(dim, dim, rng);
    sv = LinearT<T>(dim, dim, rng);
    so = LinearT<T>(dim, dim, rng);
    cq = LinearT<T>(dim, dim, rng);
    ck = LinearT<T>(dim, dim, rng);
    cv = LinearT<T>(dim, dim, rng);
    co = LinearT<T>(dim, dim, rng);
    fc1 = LinearT<T>(dim, dim * mlp_ratio, rng);
    fc2 = LinearT<T>(dim * mlp_ratio, dim, rng);
}

template <typename T>
TensorT<T> DecoderBlockT<T>::forward(const TensorT<T>& x, const TensorT<T>& memory) const {
    auto a = ln1.forward(x);
    auto h = add(x, so.forward(attention_core(sq.forward(a), sk.forward(a), sv.forward(a), heads)));
    auto c = ln2.forward(h);
    h = add(h, co.forward(attention_core(cq.forward(c), ck.forward(memory), cv.forward(memory),
                                         heads)));
    auto m = ln3.forward(h);
    return add(h, fc2.forward(silu(fc1.forward(m))));
}

template <typename T>
void DecoderBlockT<T>::collect(const std::string& prefix, ParamMapT<T>& out) {
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
    ln3.collect(prefix + ".ln3", out);
    sq.collect(prefix + ".sq", out);
    sk.collect(prefix + ".sk", out);
    sv.collect(prefix + ".sv", out);
    so.collect(prefix + ".so", out);
    cq.collect(prefix + ".cq", out);
    ck.collect(prefix + ".ck", out);
    cv.collect(prefix + ".cv", out);
    co.collect(prefix + ".co", out);
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

#define ODPG_INSTANTIATE_NN(T)                                                              \
    template void kaiming_uniform(TensorT<T>&, int, Rng&, double);                         \
    template TensorT<T> time_embed<T>(const std::vector<std::int64_t>&, int, double);      \
    template TensorT<T> attention_core(const TensorT<T>&, const TensorT<T>&,               \
                                       const TensorT<T>&, int);                            \
    template TensorT<T> flatten_tokens(const TensorT<T>&);                                 \
    template TensorT<T> unflatten_tokens(const TensorT<T>&, int, int);                     \
    template struct LinearT<T>;                                                            \
    template struct Conv2dLayerT<T>;                                                       \
    template struct ZeroConv2dT<T>;                                                        \
    template struct GroupNormLayerT<T>;                                                    \
    template struct LayerNormLayerT<T>;                                                    \
    template struct ResidualBlockT<T>;                                                     \
    template struct TransformerBlockT<T>;                                                  \
    template struct DecoderBlockT<T>;

ODPG_INSTANTIATE_NN(float)
ODPG_INSTANTIATE_NN(double)

#undef ODPG_INSTANTIATE_NN

}  // namespace odpg
