#include "picl/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace picl {

void ModelConfig::validate() const {
    if (d < 1 || layers < 1 || heads < 1 || patch_size < 1) throw std::invalid_argument("ModelConfig: non-positive field");
    if (d % heads != 0) throw std::invalid_argument("ModelConfig: d must be divisible by heads");
    if ((d / heads) % 4 != 0) throw std::invalid_argument("ModelConfig: head dim must be divisible by 4 for 2D RoPE");
    if (enc_channels.size() != 2) throw std::invalid_argument("ModelConfig: expected two encoder channel widths");
}

std::vector<double> resolution_encoding(int r, int d) {
    if (r < 1) throw std::invalid_argument("resolution_encoding: r must be >= 1");
    if (d % 2 != 0) throw std::invalid_argument("resolution_encoding: d must be even");
    std::vector<double> out(static_cast<size_t>(d));
    for (int i = 0; i < d / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / d);
        out[static_cast<size_t>(2 * i)] = std::sin(r * freq);
        out[static_cast<size_t>(2 * i + 1)] = std::cos(r * freq);
    }
    return out;
}

namespace {

Tensor conv_init(Shape shape, RngStream& rng) {
    int fan_in = shape[1] * shape[2] * shape[3];
    return Tensor::randn(shape, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

Tensor lin_init(int din, int dout, RngStream& rng) {
    return Tensor::randn({din, dout}, rng, 1.0 / std::sqrt(static_cast<double>(din)));
}

}  // namespace

void init_patch_model(const ModelConfig& cfg, ParamSet& params, RngStream& rng) {
    cfg.validate();
    int c1 = cfg.enc_channels[0], c2 = cfg.enc_channels[1], d = cfg.d;
    params.add("pm/enc/conv1_w", conv_init({c1, 2, 3, 3}, rng));
    params.add("pm/enc/conv1_b", Tensor({c1}));
    params.add("pm/enc/conv2_w", conv_init({c2, c1, 3, 3}, rng));
    params.add("pm/enc/conv2_b", Tensor({c2}));
    params.add("pm/enc/proj_w", lin_init(c2, d, rng));
    params.add("pm/enc/proj_b", Tensor({d}));
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "pm/attn/l" + std::to_string(l) + "/";
        params.add(p + "type_emb", Tensor::randn({2, d}, rng, 0.02));
        params.add(p + "ln1_g", Tensor::full({d}, 1.0));
        params.add(p + "ln1_b", Tensor({d}));
        params.add(p + "ln2_g", Tensor::full({d}, 1.0));
        params.add(p + "ln2_b", Tensor({d}));
        for (const char* w : {"wq", "wk", "wv", "wo"}) params.add(p + w, lin_init(d, d, rng));
        for (const char* b : {"bq", "bk", "bv", "bo"}) params.add(p + b, Tensor({d}));
        params.add(p + "ffn_w1", lin_init(d, 4 * d, rng));
        params.add(p + "ffn_b1", Tensor({4 * d}));
        params.add(p + "ffn_w2", lin_init(4 * d, d, rng));
        params.add(p + "ffn_b2", Tensor({d}));
    }
    params.add("pm/dec/proj_w", lin_init(d, c2, rng));
    params.add("pm/dec/proj_b", Tensor({c2}));
    params.add("pm/dec/conv1_w", conv_init({c2, c2, 3, 3}, rng));
    params.add("pm/dec/conv1_b", Tensor({c2}));
    params.add("pm/dec/conv2_w", conv_init({c1, c2, 3, 3}, rng));
    params.add("pm/dec/conv2_b", Tensor({c1}));
    params.add("pm/dec/conv3_w", conv_init({1, c1, 3, 3}, rng));
    params.add("pm/dec/conv3_b", Tensor({1}));
}

EncodedPatch encode_patch(const ModelConfig& cfg, const ParamSet& params, const Tensor& image_patch,
                          const Tensor* label_patch, int resolution) {
    int p = cfg.patch_size;
    if (image_patch.rank() != 2 || image_patch.dim(0) != p || image_patch.dim(1) != p) {
        throw std::invalid_argument("encode_patch: image patch shape " + shape_str(image_patch.shape()) +
                                    " does not match patch size " + std::to_string(p));
    }
    if (label_patch && (label_patch->rank() != 2 || label_patch->dim(0) != p || label_patch->dim(1) != p)) {
        throw std::invalid_argument("encode_patch: label patch shape mismatch");
    }
    std::vector<double> in(static_cast<size_t>(2) * p * p);
    std::copy(image_patch.data().begin(), image_patch.data().end(), in.begin());
    if (label_patch) {
        std::copy(label_patch->data().begin(), label_patch->data().end(), in.begin() + static_cast<size_t>(p) * p);
    } else {
        std::fill(in.begin() + static_cast<size_t>(p) * p, in.end(), 0.5);
    }
    Tensor x({2, p, p}, std::move(in));

    EncodedPatch out;
    out.skip_full = gelu(conv2d(x, params.get("pm/enc/conv1_w"), params.get("pm/enc/conv1_b"), 1));
    out.skip_half = gelu(conv2d(out.skip_full, params.get("pm/enc/conv2_w"), params.get("pm/enc/conv2_b"), 2));
    Tensor pooled = reshape(mean_hw(out.skip_half), {1, cfg.enc_channels[1]});
    Tensor emb = linear(pooled, params.get("pm/enc/proj_w"), params.get("pm/enc/proj_b"));
    Tensor res_enc({cfg.d}, resolution_encoding(resolution, cfg.d));
    out.embedding = add(reshape(emb, {cfg.d}), res_enc);
    return out;
}

Tensor attention_stack(const ModelConfig& cfg, const ParamSet& params, const std::vector<PatchToken>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("attention_stack: empty token list");
    int d = cfg.d, dh = cfg.head_dim();
    std::vector<Tensor> embs;
    std::vector<int> kinds;
    std::vector<std::pair<double, double>> coords;
    for (const auto& t : tokens) {
        if (t.embedding.size() != d) throw std::invalid_argument("attention_stack: token width mismatch");
        embs.push_back(t.embedding);
        kinds.push_back(static_cast<int>(t.kind));
        coords.emplace_back(t.y, t.x);
    }
    Tensor x = stack_rows(embs);
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "pm/attn/l" + std::to_string(l) + "/";
        Tensor h = add(x, gather_rows(params.get(p + "type_emb"), kinds));
        Tensor a = layer_norm(h, params.get(p + "ln1_g"), params.get(p + "ln1_b"));
        Tensor q = linear(a, params.get(p + "wq"), params.get(p + "bq"));
        Tensor k = linear(a, params.get(p + "wk"), params.get(p + "bk"));
        Tensor v = linear(a, params.get(p + "wv"), params.get(p + "bv"));
        std::vector<Tensor> head_out;
        for (int hh = 0; hh < cfg.heads; ++hh) {
            Tensor qh = rope_rotate_2d(slice_cols(q, hh * dh, (hh + 1) * dh), coords);
            Tensor kh = rope_rotate_2d(slice_cols(k, hh * dh, (hh + 1) * dh), coords);
            Tensor vh = slice_cols(v, hh * dh, (hh + 1) * dh);
            Tensor att = scaled_softmax_nt(qh, kh, inv_sqrt_dh);
            head_out.push_back(matmul(att, vh));
        }
        Tensor o = linear(concat_cols(head_out), params.get(p + "wo"), params.get(p + "bo"));
        h = add(h, o);
        Tensor f = layer_norm(h, params.get(p + "ln2_g"), params.get(p + "ln2_b"));
        f = linear(gelu(linear(f, params.get(p + "ffn_w1"), params.get(p + "ffn_b1"))),
                   params.get(p + "ffn_w2"), params.get(p + "ffn_b2"));
        x = add(h, f);
    }
    return x;
}

Tensor decode_patch(const ModelConfig& cfg, const ParamSet& params, const Tensor& attended, const EncodedPatch& enc) {
    int p = cfg.patch_size, c1 = cfg.enc_channels[0], c2 = cfg.enc_channels[1];
    int hp = (p + 1) / 2;
    if (attended.size() != cfg.d) throw std::invalid_argument("decode_patch: attended width mismatch");
    if (enc.skip_half.rank() != 3 || enc.skip_half.dim(0) != c2 || enc.skip_half.dim(1) != hp ||
        enc.skip_full.dim(0) != c1 || enc.skip_full.dim(1) != p) {
        throw std::invalid_argument("decode_patch: skip features do not match the encoder configuration");
    }
    Tensor t = reshape(linear(reshape(attended, {1, cfg.d}), params.get("pm/dec/proj_w"), params.get("pm/dec/proj_b")),
                       {c2});
    Tensor x = add(broadcast_spatial(t, hp, hp), enc.skip_half);
    x = gelu(conv2d(x, params.get("pm/dec/conv1_w"), params.get("pm/dec/conv1_b"), 1));
    x = resize_nearest(x, p);
    x = add(gelu(conv2d(x, params.get("pm/dec/conv2_w"), params.get("pm/dec/conv2_b"), 1)), enc.skip_full);
    x = conv2d(x, params.get("pm/dec/conv3_w"), params.get("pm/dec/conv3_b"), 1);
    return reshape(x, {p, p});
}

}  // namespace picl
