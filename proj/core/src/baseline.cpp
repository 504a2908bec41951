#include "picl/baseline.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "picl/cascade.hpp"

namespace picl {

void GlobalModelConfig::validate() const {
    if (d < 1 || layers < 1 || heads < 1 || enc_mid < 1 || working_res < 1) {
        throw std::invalid_argument("GlobalModelConfig: non-positive field");
    }
    if (d % heads != 0) throw std::invalid_argument("GlobalModelConfig: d must be divisible by heads");
    if ((d / heads) % 4 != 0) throw std::invalid_argument("GlobalModelConfig: head dim must be divisible by 4");
}

void init_global_model(const GlobalModelConfig& cfg, ParamSet& params, RngStream& rng) {
    cfg.validate();
    int c = cfg.enc_mid, d = cfg.d;
    auto conv_init = [&rng](Shape shape) {
        int fan_in = shape[1] * shape[2] * shape[3];
        return Tensor::randn(shape, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    };
    auto lin_init = [&rng](int din, int dout) {
        return Tensor::randn({din, dout}, rng, 1.0 / std::sqrt(static_cast<double>(din)));
    };
    params.add("gm/enc/conv1_w", conv_init({c, 2, 3, 3}));
    params.add("gm/enc/conv1_b", Tensor({c}));
    params.add("gm/enc/conv2_w", conv_init({d, c, 3, 3}));
    params.add("gm/enc/conv2_b", Tensor({d}));
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "gm/l" + std::to_string(l) + "/";
        params.add(p + "ln_cross_g", Tensor::full({d}, 1.0));
        params.add(p + "ln_cross_b", Tensor({d}));
        params.add(p + "ln_self_g", Tensor::full({d}, 1.0));
        params.add(p + "ln_self_b", Tensor({d}));
        params.add(p + "ln_ffn_g", Tensor::full({d}, 1.0));
        params.add(p + "ln_ffn_b", Tensor({d}));
        for (const char* w : {"cross_wq", "cross_wk", "cross_wv", "cross_wo", "self_wq", "self_wk", "self_wv", "self_wo"}) {
            params.add(p + w, lin_init(d, d));
        }
        for (const char* b : {"cross_bq", "cross_bk", "cross_bv", "cross_bo", "self_bq", "self_bk", "self_bv", "self_bo"}) {
            params.add(p + b, Tensor({d}));
        }
        params.add(p + "ffn_w1", lin_init(d, 4 * d));
        params.add(p + "ffn_b1", Tensor({4 * d}));
        params.add(p + "ffn_w2", lin_init(4 * d, d));
        params.add(p + "ffn_b2", Tensor({d}));
    }
    params.add("gm/dec/conv1_w", conv_init({c, d, 3, 3}));
    params.add("gm/dec/conv1_b", Tensor({c}));
    params.add("gm/dec/conv2_w", conv_init({1, c, 3, 3}));
    params.add("gm/dec/conv2_b", Tensor({1}));
}

namespace {

Tensor encode_image(const GlobalModelConfig& cfg, const ParamSet& params, const Tensor& image, const Tensor* label,
                    int r) {
    std::vector<double> in(static_cast<size_t>(2) * r * r);
    std::copy(image.data().begin(), image.data().end(), in.begin());
    if (label) {
        std::copy(label->data().begin(), label->data().end(), in.begin() + static_cast<size_t>(r) * r);
    } else {
        std::fill(in.begin() + static_cast<size_t>(r) * r, in.end(), 0.5);
    }
    Tensor x({2, r, r}, std::move(in));
    x = gelu(conv2d(x, params.get("gm/enc/conv1_w"), params.get("gm/enc/conv1_b"), 1));
    x = gelu(conv2d(x, params.get("gm/enc/conv2_w"), params.get("gm/enc/conv2_b"), 1));
    return chw_to_tokens(x);  // [r*r, d]
}

Tensor mha(const GlobalModelConfig& cfg, const Tensor& q_in, const Tensor& kv_in,
           const std::vector<std::pair<double, double>>& q_coords,
           const std::vector<std::pair<double, double>>& kv_coords, const ParamSet& params, const std::string& p,
           const std::string& kind) {
    int dh = cfg.head_dim();
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor q = linear(q_in, params.get(p + kind + "_wq"), params.get(p + kind + "_bq"));
    Tensor k = linear(kv_in, params.get(p + kind + "_wk"), params.get(p + kind + "_bk"));
    Tensor v = linear(kv_in, params.get(p + kind + "_wv"), params.get(p + kind + "_bv"));
    std::vector<Tensor> head_out;
    for (int hh = 0; hh < cfg.heads; ++hh) {
        Tensor qh = rope_rotate_2d(slice_cols(q, hh * dh, (hh + 1) * dh), q_coords);
        Tensor kh = rope_rotate_2d(slice_cols(k, hh * dh, (hh + 1) * dh), kv_coords);
        Tensor vh = slice_cols(v, hh * dh, (hh + 1) * dh);
        Tensor att = scaled_softmax_nt(qh, kh, inv_sqrt_dh);
        head_out.push_back(matmul(att, vh));
    }
    return linear(concat_cols(head_out), params.get(p + kind + "_wo"), params.get(p + kind + "_bo"));
}

}  // namespace

Tensor global_forward_logits(const GlobalModelConfig& cfg, const ParamSet& params, const TaskInstance& task) {
    cfg.validate();
    int r = cfg.working_res;
    if (r > cfg.safety_cap) {
        throw std::invalid_argument("global_forward: working resolution " + std::to_string(r) +
                                    " exceeds the dense-attention cap " + std::to_string(cfg.safety_cap) +
                                    "; use the analytic cost model for larger resolutions");
    }
    if (static_cast<int>(task.context.size()) != cfg.n_context) {
        throw std::invalid_argument("global_forward: expected " + std::to_string(cfg.n_context) + " context pairs");
    }

    Tensor timg = resize_bilinear(task.target_image.detached(), r);
    Tensor target = encode_image(cfg, params, timg, nullptr, r);

    std::vector<Tensor> ctx_parts;
    std::vector<std::pair<double, double>> ctx_coords;
    for (const auto& [ci, cl] : task.context) {
        Tensor img = resize_bilinear(ci.detached(), r);
        Tensor lab({r, r}, resample_mask_majority(cl.data(), cl.dim(0), r));
        ctx_parts.push_back(encode_image(cfg, params, img, &lab, r));
        for (int y = 0; y < r; ++y) {
            for (int x = 0; x < r; ++x) ctx_coords.emplace_back(y, x);
        }
    }
    Tensor ctx = concat_rows(ctx_parts);  // [n_c*r*r, d]

    std::vector<std::pair<double, double>> tgt_coords;
    for (int y = 0; y < r; ++y) {
        for (int x = 0; x < r; ++x) tgt_coords.emplace_back(y, x);
    }

    Tensor t = target;
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "gm/l" + std::to_string(l) + "/";
        Tensor a = layer_norm(t, params.get(p + "ln_cross_g"), params.get(p + "ln_cross_b"));
        t = add(t, mha(cfg, a, ctx, tgt_coords, ctx_coords, params, p, "cross"));
        Tensor s = layer_norm(t, params.get(p + "ln_self_g"), params.get(p + "ln_self_b"));
        t = add(t, mha(cfg, s, s, tgt_coords, tgt_coords, params, p, "self"));
        Tensor f = layer_norm(t, params.get(p + "ln_ffn_g"), params.get(p + "ln_ffn_b"));
        f = linear(gelu(linear(f, params.get(p + "ffn_w1"), params.get(p + "ffn_b1"))),
                   params.get(p + "ffn_w2"), params.get(p + "ffn_b2"));
        t = add(t, f);
    }

    Tensor x = tokens_to_chw(t, cfg.d, r, r);
    x = gelu(conv2d(x, params.get("gm/dec/conv1_w"), params.get("gm/dec/conv1_b"), 1));
    x = conv2d(x, params.get("gm/dec/conv2_w"), params.get("gm/dec/conv2_b"), 1);
    return reshape(x, {r, r});
}

Tensor global_forward(const GlobalModelConfig& cfg, const ParamSet& params, const TaskInstance& task) {
    Tensor logits = global_forward_logits(cfg, params, task);
    return resize_bilinear(sigmoid(logits), task.target_image.dim(0));
}

}  // namespace picl
