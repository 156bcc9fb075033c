#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "odpg/ops.hpp"
#include "odpg/tensor.hpp"

namespace odpg {

template <typename T>
using ParamMapT = std::vector<std::pair<std::string, TensorT<T>>>;
using ParamMap = ParamMapT<float>;

// Kaiming-uniform fill: U(-lim, lim) with lim = gain * sqrt(3 / fan_in).
template <typename T>
void kaiming_uniform(TensorT<T>& w, int fan_in, Rng& rng, double gain = 1.0);

// Sinusoidal embedding of integer timesteps: first half sin, second half
// cos of t / max_period^(2i/dim). Shape [B, dim].
template <typename T>
TensorT<T> time_embed(const std::vector<std::int64_t>& ts, int dim, double max_period = 10000.0);

// softmax((Q + .)K^T / sqrt(d_head)) V with an optional multi-head split.
// Q [n_q,d] or [B,n_q,d]; K,V [n_k,d] or [B,n_k,d].
template <typename T>
TensorT<T> attention_core(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                          int heads = 1);

// [B,C,H,W] -> [B,H*W,C] and back.
template <typename T>
TensorT<T> flatten_tokens(const TensorT<T>& x);
template <typename T>
TensorT<T> unflatten_tokens(const TensorT<T>& x, int h, int w);

template <typename T>
struct LinearT {
    TensorT<T> weight;  // [in, out]
    TensorT<T> bias;    // [out], undefined when has_bias == false
    bool has_bias = true;

    LinearT() = default;
    LinearT(int in, int out, Rng& rng, bool with_bias = true);

    // x [...,in] -> [...,out]
    TensorT<T> forward(const TensorT<T>& x) const;
    void collect(const std::string& prefix, ParamMapT<T>& out);
};

template <typename T>
struct Conv2dLayerT {
    TensorT<T> weight;  // [O,C,kh,kw]
    TensorT<T> bias;    // [O]
    int stride = 1;
    int pad = 0;

    Conv2dLayerT() = default;
    Conv2dLayerT(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng);

    TensorT<T> forward(const TensorT<T>& x) const;
    void collect(const std::string& prefix, ParamMapT<T>& out);
};

// 1x1 convolution with kernel and bias initialised to exactly zero, so a
// freshly constructed layer maps anything to zero.
template <typename T>
struct ZeroConv2dT {
    TensorT<T> weight;  // [O,C,1,1]
    TensorT<T> bias;    // [O]

    ZeroConv2dT() = default;
    ZeroConv2dT(int in_ch, int out_ch);

    TensorT<T> forward(const TensorT<T>& x) const;
    void collect(const std::string& prefix, ParamMapT<T>& out);
};

template <typename T>
struct GroupNormLayerT {
    TensorT<T> gamma;
    TensorT<T> beta;
    int groups = 8;
    double eps = 1e-5;

    GroupNormLayerT() = default;
    GroupNormLayerT(int channels, int groups, double eps = 1e-5);

    TensorT<T> forward(const TensorT<T>& x) const;
    void collect(const std::string& prefix, ParamMapT<T>& out);
};

template <typename T>
struct LayerNormLayerT {
    TensorT<T> gamma;
    TensorT<T> beta;
    double eps = 1e-5;

    LayerNormLayerT() = default;
    explicit LayerNormLayerT(int dim, double eps = 1e-5);

    TensorT<T> forward(const TensorT<T>& x) const;
    void collect(const std::string& prefix, ParamMapT<T>& out);
};

// GroupNorm/SiLU/conv x2 with a time-embedding channel shift and an
// optional 1x1 skip projection; spatial extents are preserved.
template <typename T>
struct ResidualBlockT {
    GroupNormLayerT<T> norm1;
    Conv2dLayerT<T> conv1;
    LinearT<T> time_proj;  // t_emb dim -> out channels; absent if t_dim == 0
    GroupNormLayerT<T> norm2;
    Conv2dLayerT<T> conv2;
    Conv2dLayerT<T> skip;  // 1x1, only when in != out
    int in_ch = 0, out_ch = 0, t_dim = 0;

    ResidualBlockT() = default;
    ResidualBlockT(int in_ch, int out_ch, int t_dim, int gn_groups, Rng& rng);

    // t_emb [B, t_dim]; pass undefined when the block has no time input.
    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& t_emb) const;
    void collect(const std::string& prefix, ParamMapT<T>& out);
};

// Pre-LN transformer encoder block with SiLU MLP.
template <typename T>
struct TransformerBlockT {
    LayerNormLayerT<T> ln1, ln2;
    LinearT<T> q, k, v, o;
    LinearT<T> fc1, fc2;
    int heads = 4;

    TransformerBlockT() = default;
    TransformerBlockT(int dim, int heads, int mlp_ratio, Rng& rng);

    TensorT<T> forward(const TensorT<T>& x) const;  // [B,n,d]
    void collect(const std::string& prefix, ParamMapT<T>& out);
};

// Pre-LN transformer decoder block: query self-attention, cross-attention
// over an external memory, SiLU MLP.
template <typename T>
struct DecoderBlockT {
    LayerNormLayerT<T> ln1, ln2, ln3;
    LinearT<T> sq, sk, sv, so;  // self-attention
    LinearT<T> cq, ck, cv, co;  // cross-attention
    LinearT<T> fc1, fc2;
    int heads = 4;

    DecoderBlockT() = default;
    DecoderBlockT(int dim, int heads, int mlp_ratio, Rng& rng);

    // x [B,n_q,d], memory [B,n_m,d]
    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& memory) const;
    void collect(const std::string& prefix, ParamMapT<T>& out);
};

using Linear = LinearT<float>;
using Conv2dLayer = Conv2dLayerT<float>;
using ZeroConv2d = ZeroConv2dT<float>;
using GroupNormLayer = GroupNormLayerT<float>;
using LayerNormLayer = LayerNormLayerT<float>;
using ResidualBlock = ResidualBlockT<float>;
using TransformerBlock = TransformerBlockT<float>;
using DecoderBlock = DecoderBlockT<float>;

}  // namespace odpg
