#include "picl/evalcost.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace picl {

const char* kFlopsConvention =
    "1 multiply-add = 2 FLOPs; attention = L*(4*T^2*d_h*heads + 8*T*d^2); "
    "conv = 2*k^2*Cin*Cout*Hout*Wout; sampling = 10*r^2; aggregation = 4*r^2 + 2*K*P^2";

namespace {

double conv_flops(int cin, int cout, int k, int hout, int wout) {
    return 2.0 * k * k * cin * cout * hout * wout;
}

}  // namespace

FlopsReport flops_patchicl(const CascadeConfig& config) {
    config.validate();
    const ModelConfig& m = config.model;
    int c1 = m.enc_channels[0], c2 = m.enc_channels[1], d = m.d, dh = m.head_dim();
    int p = m.patch_size, hp = (p + 1) / 2;
    FlopsReport rep;
    rep.arch = "patchicl";
    rep.resolution = config.levels.back().resolution;
    double enc_per_patch = conv_flops(2, c1, 3, p, p) + conv_flops(c1, c2, 3, hp, hp) + 2.0 * c2 * d;
    double dec_per_patch = 2.0 * d * c2 + conv_flops(c2, c2, 3, hp, hp) + conv_flops(c2, c1, 3, p, p) +
                           conv_flops(c1, 1, 3, p, p);
    for (const LevelConfig& lvl : config.levels) {
        int ncand = static_cast<int>(candidate_grid(lvl.resolution, lvl.patch_size, lvl.stride).boxes.size());
        double kt = std::min(lvl.k_target, ncand);
        double kc = std::min(lvl.k_context, ncand);
        double tokens = kt + config.n_context * kc;
        double r2 = static_cast<double>(lvl.resolution) * lvl.resolution;
        rep.encoder += tokens * enc_per_patch;
        rep.attention += m.layers * (4.0 * tokens * tokens * dh * m.heads + 8.0 * tokens * d * d);
        rep.decoder += kt * dec_per_patch;
        rep.sampling += 10.0 * r2;
        rep.aggregation += 4.0 * r2 + kt * 2.0 * p * p;
    }
    rep.total = rep.encoder + rep.attention + rep.decoder + rep.sampling + rep.aggregation;
    return rep;
}

FlopsReport flops_global(const GlobalModelConfig& config, int resolution) {
    config.validate();
    if (resolution < 1) throw std::invalid_argument("flops_global: resolution must be >= 1");
    int c = config.enc_mid, d = config.d, dh = config.head_dim();
    double r2 = static_cast<double>(resolution) * resolution;
    double ctx = config.n_context * r2;
    FlopsReport rep;
    rep.arch = "global";
    rep.resolution = resolution;
    rep.encoder = (1.0 + config.n_context) * (conv_flops(2, c, 3, resolution, resolution) +
                                              conv_flops(c, d, 3, resolution, resolution));
    rep.attention = config.layers * (4.0 * r2 * ctx * dh * config.heads +   // cross
                                     4.0 * r2 * r2 * dh * config.heads +    // self
                                     8.0 * (r2 + ctx) * d * d);             // projections
    rep.decoder = conv_flops(d, c, 3, resolution, resolution) + conv_flops(c, 1, 3, resolution, resolution);
    rep.total = rep.encoder + rep.attention + rep.decoder;
    return rep;
}

double dice_score(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) {
        throw std::invalid_argument("dice_score: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                    shape_str(gt.shape()));
    }
    long a = 0, b = 0, inter = 0;
    for (int i = 0; i < pred.size(); ++i) {
        bool pa = pred[i] >= 0.5;
        bool pb = gt[i] >= 0.5;
        a += pa;
        b += pb;
        inter += pa && pb;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

DiceResult summarize_dice(std::vector<double> per_episode) {
    DiceResult out;
    out.n = static_cast<int>(per_episode.size());
    out.per_episode = std::move(per_episode);
    if (out.n == 0) return out;
    double s = 0;
    for (double v : out.per_episode) s += v;
    out.mean = s / out.n;
    double ss = 0;
    for (double v : out.per_episode) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / out.n);
    return out;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_sweep_csv: cannot open " + path);
    os << "resolution,arch,dice_mean,dice_std,n,flops_total,flops_attention,flops_encoder,flops_decoder,flops_other\n";
    os.precision(17);
    for (const auto& r : rows) {
        os << r.resolution << "," << r.arch << "," << r.dice_mean << "," << r.dice_std << "," << r.n << ","
           << r.flops.total << "," << r.flops.attention << "," << r.flops.encoder << "," << r.flops.decoder << ","
           << r.flops.other() << "\n";
    }
}

int crossover_resolution(const std::vector<SweepRow>& rows) {
    std::map<int, std::pair<double, double>> totals;  // resolution -> (patchicl, global)
    for (const auto& r : rows) {
        auto& t = totals[r.resolution];
        if (r.arch == "patchicl") t.first = r.flops.total;
        if (r.arch == "global") t.second = r.flops.total;
    }
    for (const auto& [res, t] : totals) {
        if (t.first > 0 && t.second > 0 && t.first < t.second) return res;
    }
    return -1;
}

CascadeConfig sweep_cascade_config(int resolution, const ModelConfig& model, int n_context) {
    if (resolution % 4 != 0 || resolution < 16) {
        throw std::invalid_argument("sweep_cascade_config: resolution must be a multiple of 4, >= 16");
    }
    CascadeConfig cfg;
    cfg.model = model;
    cfg.n_context = n_context;
    cfg.noise_enabled = false;
    int p = model.patch_size;
    cfg.levels.push_back({resolution / 4, 4, 2, p, p});
    cfg.levels.push_back({resolution / 2, 8, 2, p, std::max(1, p / 2)});
    cfg.levels.push_back({resolution, 12, 2, p, p});
    return cfg;
}

}  // namespace picl
