#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "picl/checkpoint.hpp"
#include "picl/config.hpp"
#include "picl/data.hpp"
#include "picl/evalcost.hpp"
#include "picl/train.hpp"

namespace fs = std::filesystem;
using picl::KVConfig;

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string ep_name(int episode_id, const char* suffix) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "ep%06d_%s.pgm", episode_id, suffix);
    return buf;
}

// Flags override config-file values; the fully resolved set lands in run.lock.
struct FlagSet {
    CLI::App* cmd = nullptr;
    std::string config_path;
    std::string seed_s, out_s;

    void add_common(CLI::App* c) {
        cmd = c;
        c->add_option("--config", config_path, "key = value config file");
        c->add_option("--seed", seed_s, "RNG seed (u64)");
        c->add_option("--out", out_s, "output directory");
    }

    KVConfig resolve() const {
        KVConfig kv;
        if (!config_path.empty()) kv.load(config_path);
        if (cmd->count("--seed")) kv.set("seed", seed_s);
        if (cmd->count("--out")) kv.set("out", out_s);
        return kv;
    }
};

std::string required_out(const KVConfig& kv) {
    std::string out = kv.get_str("out", "");
    if (out.empty()) throw std::runtime_error("--out (or config key 'out') is required");
    fs::create_directories(out);
    return out;
}

picl::ModelConfig model_config_from(const KVConfig& kv) {
    picl::ModelConfig mc;
    mc.d = static_cast<int>(kv.get_int("model_d", mc.d));
    mc.layers = static_cast<int>(kv.get_int("model_layers", mc.layers));
    mc.heads = static_cast<int>(kv.get_int("model_heads", mc.heads));
    mc.patch_size = static_cast<int>(kv.get_int("patch_size", mc.patch_size));
    mc.enc_channels = kv.get_int_list("enc_channels", mc.enc_channels);
    return mc;
}

picl::TrainConfig train_config_from(const KVConfig& kv, int resolution, int n_context, const std::string& out_dir) {
    picl::TrainConfig tc;
    tc.arch = kv.get_str("arch", "patchicl");
    tc.seed = kv.get_u64("seed", 1);
    tc.steps = kv.get_int("steps", 5000);
    tc.lr = kv.get_double("lr", 1e-3);
    tc.checkpoint_every = kv.get_int("checkpoint_every", 500);
    tc.out_dir = out_dir;
    tc.resume = kv.get_str("resume", "");
    tc.cascade = picl::sweep_cascade_config(resolution, model_config_from(kv), n_context);
    tc.cascade.noise_enabled = kv.get_bool("sampling_noise", true);
    tc.global.d = static_cast<int>(kv.get_int("global_d", tc.global.d));
    tc.global.layers = static_cast<int>(kv.get_int("global_layers", tc.global.layers));
    tc.global.heads = static_cast<int>(kv.get_int("global_heads", tc.global.heads));
    tc.global.enc_mid = static_cast<int>(kv.get_int("global_enc_mid", tc.global.enc_mid));
    tc.global.working_res = static_cast<int>(kv.get_int("global_res", tc.global.working_res));
    tc.global.n_context = n_context;
    return tc;
}

void lock_train_keys(KVConfig& kv, const picl::TrainConfig& tc) {
    kv.set("arch", tc.arch);
    kv.set("seed", std::to_string(tc.seed));
    kv.set("steps", std::to_string(tc.steps));
    kv.set("lr", fmt_double(tc.lr));
    kv.set("checkpoint_every", std::to_string(tc.checkpoint_every));
    kv.set("resume", tc.resume);
    kv.set("model_d", std::to_string(tc.cascade.model.d));
    kv.set("model_layers", std::to_string(tc.cascade.model.layers));
    kv.set("model_heads", std::to_string(tc.cascade.model.heads));
    kv.set("patch_size", std::to_string(tc.cascade.model.patch_size));
    kv.set("enc_channels", fmt_int_list(tc.cascade.model.enc_channels));
    kv.set("sampling_noise", tc.cascade.noise_enabled ? "true" : "false");
    kv.set("global_d", std::to_string(tc.global.d));
    kv.set("global_layers", std::to_string(tc.global.layers));
    kv.set("global_heads", std::to_string(tc.global.heads));
    kv.set("global_enc_mid", std::to_string(tc.global.enc_mid));
    kv.set("global_res", std::to_string(tc.global.working_res));
}

std::map<std::string, int> split_class_counts(const std::string& dir, const std::string& split) {
    std::ifstream is(dir + "/" + split + "/index.csv");
    if (!is) throw std::runtime_error("missing index: " + dir + "/" + split + "/index.csv");
    std::map<std::string, int> counts;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        size_t a = line.find(',');
        size_t b = line.find(',', a + 1);
        counts[line.substr(a + 1, b - a - 1)]++;
    }
    return counts;
}

int cmd_make_data(const FlagSet& flags, const CLI::App* c, uint64_t res_s, long episodes_s, long heldout_s) {
    KVConfig kv = flags.resolve();
    if (c->count("--resolution")) kv.set("resolution", std::to_string(res_s));
    if (c->count("--episodes")) kv.set("episodes", std::to_string(episodes_s));
    if (c->count("--episodes-heldout")) kv.set("episodes_heldout", std::to_string(heldout_s));
    std::string out = required_out(kv);

    picl::DatasetManifest m;
    m.seed = kv.get_u64("seed", 1);
    m.resolution = static_cast<int>(kv.get_int("resolution", m.resolution));
    m.n_context = static_cast<int>(kv.get_int("n_context", m.n_context));
    m.noise_sigma = kv.get_double("noise_sigma", m.noise_sigma);
    m.episodes_train = static_cast<int>(kv.get_int("episodes", m.episodes_train));
    m.episodes_heldout = static_cast<int>(kv.get_int("episodes_heldout", m.episodes_heldout));
    if (m.episodes_train < 1 || m.episodes_heldout < 1) {
        throw std::runtime_error("episode counts must be >= 1");
    }
    picl::write_dataset(m, out);

    kv.set("out", out);
    kv.set("seed", std::to_string(m.seed));
    kv.set("resolution", std::to_string(m.resolution));
    kv.set("n_context", std::to_string(m.n_context));
    kv.set("noise_sigma", fmt_double(m.noise_sigma));
    kv.set("episodes", std::to_string(m.episodes_train));
    kv.set("episodes_heldout", std::to_string(m.episodes_heldout));
    kv.save(out + "/run.lock");

    for (const char* split : {"train", "heldout"}) {
        auto counts = split_class_counts(out, split);
        int total = 0;
        std::string detail;
        for (const auto& [cls, n] : counts) {
            total += n;
            if (!detail.empty()) detail += ", ";
            detail += cls + " " + std::to_string(n);
        }
        std::cout << split << ": " << total << " episodes (" << detail << ")\n";
    }
    return 0;
}

int cmd_train(const FlagSet& flags, const CLI::App* c, const std::string& data_s, const std::string& arch_s,
              long steps_s, const std::string& resume_s) {
    KVConfig kv = flags.resolve();
    if (c->count("--data")) kv.set("data", data_s);
    if (c->count("--arch")) kv.set("arch", arch_s);
    if (c->count("--steps")) kv.set("steps", std::to_string(steps_s));
    if (c->count("--resume")) kv.set("resume", resume_s);
    std::string out = required_out(kv);
    std::string data = kv.get_str("data", "");
    if (data.empty() || !fs::exists(data + "/manifest.txt")) {
        throw std::runtime_error("dataset missing (expected <data>/manifest.txt under --data)");
    }

    picl::DatasetManifest m = picl::read_manifest(data + "/manifest.txt");
    picl::TrainConfig tc = train_config_from(kv, m.resolution, m.n_context, out);
    tc.validate();
    kv.set("out", out);
    kv.set("data", data);
    lock_train_keys(kv, tc);
    kv.save(out + "/run.lock");

    std::vector<picl::TaskInstance> episodes = picl::load_split(data, "train");
    picl::TrainResult res = picl::train_model(tc, episodes);
    std::cout << "trained " << res.steps_done << " steps, final loss " << res.final_loss << "\n";
    std::cout << "final checkpoint: " << res.checkpoint_path << "\n";
    return 0;
}

void draw_box_border(std::vector<double>& panel, int res, const picl::PatchBox& box, double scale) {
    int y0 = static_cast<int>(box.y0 * scale);
    int x0 = static_cast<int>(box.x0 * scale);
    int y1 = std::min(res - 1, static_cast<int>((box.y0 + box.size) * scale) - 1);
    int x1 = std::min(res - 1, static_cast<int>((box.x0 + box.size) * scale) - 1);
    for (int x = x0; x <= x1; ++x) {
        panel[static_cast<size_t>(y0) * res + x] = 1.0;
        panel[static_cast<size_t>(y1) * res + x] = 1.0;
    }
    for (int y = y0; y <= y1; ++y) {
        panel[static_cast<size_t>(y) * res + x0] = 1.0;
        panel[static_cast<size_t>(y) * res + x1] = 1.0;
    }
}

// One panel per cascade level: target image with the selected target patch
// boxes outlined, panels side by side.
void dump_patch_overlay(const picl::TaskInstance& task, const picl::PredictionPyramid& pyr, const std::string& path) {
    int res = task.target_image.dim(0);
    int m_levels = static_cast<int>(pyr.levels.size());
    const int gap = 2;
    int width = m_levels * res + (m_levels - 1) * gap;
    std::vector<double> img(static_cast<size_t>(res) * width, 0.0);
    for (int l = 0; l < m_levels; ++l) {
        std::vector<double> panel = task.target_image.data();
        double scale = static_cast<double>(res) / pyr.levels[static_cast<size_t>(l)].resolution;
        for (const picl::PatchBox& box : pyr.levels[static_cast<size_t>(l)].patches.boxes) {
            draw_box_border(panel, res, box, scale);
        }
        int x_off = l * (res + gap);
        for (int y = 0; y < res; ++y) {
            for (int x = 0; x < res; ++x) {
                img[static_cast<size_t>(y) * width + x_off + x] = panel[static_cast<size_t>(y) * res + x];
            }
        }
    }
    picl::write_pgm(path, picl::Tensor({res, width}, std::move(img)));
}

int cmd_eval(const FlagSet& flags, const CLI::App* c, const std::string& data_s, const std::string& ckpt_s,
             const std::string& arch_s, const std::string& split_s, int jobs_s, bool allow_train, bool dump_patches) {
    KVConfig kv = flags.resolve();
    if (c->count("--data")) kv.set("data", data_s);
    if (c->count("--checkpoint")) kv.set("checkpoint", ckpt_s);
    if (c->count("--arch")) kv.set("arch", arch_s);
    if (c->count("--split")) kv.set("split", split_s);
    if (c->count("--jobs")) kv.set("jobs", std::to_string(jobs_s));
    if (allow_train) kv.set("allow_train", "true");
    if (dump_patches) kv.set("dump_patches", "true");
    std::string out = required_out(kv);

    std::string data = kv.get_str("data", "");
    std::string ckpt = kv.get_str("checkpoint", "");
    std::string split = kv.get_str("split", "heldout");
    int jobs = static_cast<int>(kv.get_int("jobs", 1));
    if (data.empty() || !fs::exists(data + "/manifest.txt")) throw std::runtime_error("dataset missing under --data");
    if (ckpt.empty() || !fs::exists(ckpt)) throw std::runtime_error("checkpoint missing: " + ckpt);
    if (split != "train" && split != "heldout") throw std::runtime_error("invalid split '" + split + "'");
    if (split == "train" && !kv.get_bool("allow_train", false)) {
        throw std::runtime_error("evaluating on the train split requires --allow-train");
    }

    picl::DatasetManifest m = picl::read_manifest(data + "/manifest.txt");
    picl::TrainConfig tc = train_config_from(kv, m.resolution, m.n_context, out);
    kv.set("out", out);
    kv.set("data", data);
    kv.set("checkpoint", ckpt);
    kv.set("split", split);
    kv.set("jobs", std::to_string(jobs));
    kv.set("allow_train", kv.get_bool("allow_train", false) ? "true" : "false");
    kv.set("dump_patches", kv.get_bool("dump_patches", false) ? "true" : "false");
    lock_train_keys(kv, tc);
    kv.save(out + "/run.lock");

    picl::ParamSet params = picl::load_checkpoint(ckpt);
    std::vector<picl::TaskInstance> episodes = picl::load_split(data, split);
    std::sort(episodes.begin(), episodes.end(),
              [](const picl::TaskInstance& a, const picl::TaskInstance& b) { return a.episode_id < b.episode_id; });

    std::vector<picl::Tensor> preds;
    std::vector<double> dice = picl::eval_dice_per_episode(tc, params, episodes, jobs, &preds);

    std::ofstream ecsv(out + "/eval_episodes.csv");
    if (!ecsv) throw std::runtime_error("cannot write " + out + "/eval_episodes.csv");
    ecsv << "episode,class,dice\n";
    ecsv.precision(17);
    fs::create_directories(out + "/predictions");
    std::map<std::string, std::vector<double>> by_class;
    for (size_t i = 0; i < episodes.size(); ++i) {
        const std::string& cls = picl::shape_class_names()[static_cast<size_t>(episodes[i].class_id)];
        ecsv << episodes[i].episode_id << "," << cls << "," << dice[i] << "\n";
        by_class[cls].push_back(dice[i]);
        picl::write_pgm(out + "/predictions/" + ep_name(episodes[i].episode_id, "pred"), preds[i]);
    }
    ecsv.close();

    std::ofstream scsv(out + "/eval_summary.csv");
    if (!scsv) throw std::runtime_error("cannot write " + out + "/eval_summary.csv");
    scsv << "class,dice_mean,dice_std,n\n";
    scsv.precision(17);
    for (const auto& [cls, vals] : by_class) {
        picl::DiceResult r = picl::summarize_dice(vals);
        scsv << cls << "," << r.mean << "," << r.stddev << "," << r.n << "\n";
    }
    picl::DiceResult overall = picl::summarize_dice(dice);
    scsv << "Overall," << overall.mean << "," << overall.stddev << "," << overall.n << "\n";
    scsv.close();

    if (kv.get_bool("dump_patches", false)) {
        if (tc.arch != "patchicl") throw std::runtime_error("--dump-patches requires arch = patchicl");
        fs::create_directories(out + "/patches");
        picl::CascadeConfig cc = tc.cascade;
        cc.noise_enabled = false;
        for (const picl::TaskInstance& task : episodes) {
            picl::RngStream rng = picl::RngStream(tc.seed, 2).sub(static_cast<uint64_t>(task.episode_id));
            picl::PredictionPyramid pyr = picl::cascade_forward(task, cc, params, rng);
            dump_patch_overlay(task, pyr, out + "/patches/" + ep_name(task.episode_id, "patches"));
        }
    }

    std::cout.precision(6);
    std::cout << "dice over " << overall.n << " " << split << " episodes: " << overall.mean << " +/- " << overall.stddev
              << "\n";
    return 0;
}

int cmd_bench_flops(const FlagSet& flags, const CLI::App* c, const std::string& resolutions_s, bool cost_only,
                    const std::string& ckpt_p, const std::string& ckpt_g, const std::string& data_s, int jobs_s) {
    KVConfig kv = flags.resolve();
    if (c->count("--resolutions")) kv.set("resolutions", resolutions_s);
    if (cost_only) kv.set("cost_only", "true");
    if (c->count("--ckpt-patchicl")) kv.set("ckpt_patchicl", ckpt_p);
    if (c->count("--ckpt-global")) kv.set("ckpt_global", ckpt_g);
    if (c->count("--data")) kv.set("data", data_s);
    if (c->count("--jobs")) kv.set("jobs", std::to_string(jobs_s));
    std::string out = required_out(kv);

    std::vector<int> resolutions = kv.get_int_list("resolutions", {64, 128, 256, 512});
    bool cost = kv.get_bool("cost_only", false);
    int n_context = static_cast<int>(kv.get_int("n_context", 3));
    picl::ModelConfig mc = model_config_from(kv);
    picl::GlobalModelConfig gc;
    gc.d = static_cast<int>(kv.get_int("global_d", gc.d));
    gc.layers = static_cast<int>(kv.get_int("global_layers", gc.layers));
    gc.heads = static_cast<int>(kv.get_int("global_heads", gc.heads));
    gc.enc_mid = static_cast<int>(kv.get_int("global_enc_mid", gc.enc_mid));
    gc.n_context = n_context;

    kv.set("out", out);
    kv.set("resolutions", fmt_int_list(resolutions));
    kv.set("cost_only", cost ? "true" : "false");
    kv.set("n_context", std::to_string(n_context));
    kv.save(out + "/run.lock");

    std::vector<picl::SweepRow> rows;
    for (int r : resolutions) {
        picl::SweepRow pr;
        pr.resolution = r;
        pr.arch = "patchicl";
        pr.flops = picl::flops_patchicl(picl::sweep_cascade_config(r, mc, n_context));
        rows.push_back(pr);
        picl::SweepRow gr;
        gr.resolution = r;
        gr.arch = "global";
        gr.flops = picl::flops_global(gc, r);
        rows.push_back(gr);
    }

    if (!cost) {
        std::string cp = kv.get_str("ckpt_patchicl", "");
        std::string cg = kv.get_str("ckpt_global", "");
        std::string data = kv.get_str("data", "");
        if (cp.empty() || cg.empty() || !fs::exists(cp) || !fs::exists(cg)) {
            throw std::runtime_error("bench-flops needs --ckpt-patchicl and --ckpt-global, or --cost-only");
        }
        if (data.empty() || !fs::exists(data + "/manifest.txt")) {
            throw std::runtime_error("bench-flops Dice columns need --data, or pass --cost-only");
        }
        picl::DatasetManifest m = picl::read_manifest(data + "/manifest.txt");
        std::vector<picl::TaskInstance> episodes = picl::load_split(data, "heldout");
        int jobs = static_cast<int>(kv.get_int("jobs", 1));
        for (picl::SweepRow& row : rows) {
            if (row.resolution != m.resolution) continue;  // Dice is measured at the dataset's native resolution
            picl::TrainConfig tc = train_config_from(kv, m.resolution, m.n_context, out);
            tc.arch = row.arch;
            picl::ParamSet params = picl::load_checkpoint(row.arch == "patchicl" ? cp : cg);
            picl::DiceResult r = picl::summarize_dice(picl::eval_dice_per_episode(tc, params, episodes, jobs));
            row.dice_mean = r.mean;
            row.dice_std = r.stddev;
            row.n = r.n;
        }
    }

    picl::write_sweep_csv(out + "/sweep.csv", rows);
    int cross = picl::crossover_resolution(rows);
    if (cross > 0) std::cout << "crossover resolution: " << cross << "\n";
    else std::cout << "crossover resolution: none in sweep\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical in-context patch segmentation toolkit"};
    app.require_subcommand(1);

    FlagSet f_make, f_train, f_eval, f_bench;

    auto* c_make = app.add_subcommand("make-data", "Generate the synthetic shape dataset");
    f_make.add_common(c_make);
    uint64_t md_res = 64;
    long md_eps = 512, md_held = 128;
    c_make->add_option("--resolution", md_res, "image resolution");
    c_make->add_option("--episodes", md_eps, "train episode count");
    c_make->add_option("--episodes-heldout", md_held, "held-out episode count");

    auto* c_train = app.add_subcommand("train", "Train a model on a generated dataset");
    f_train.add_common(c_train);
    std::string tr_data, tr_arch, tr_resume;
    long tr_steps = 5000;
    c_train->add_option("--data", tr_data, "dataset directory");
    c_train->add_option("--arch", tr_arch, "patchicl | global");
    c_train->add_option("--steps", tr_steps, "optimization steps");
    c_train->add_option("--resume", tr_resume, "checkpoint to resume from");

    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    f_eval.add_common(c_eval);
    std::string ev_data, ev_ckpt, ev_arch, ev_split;
    int ev_jobs = 1;
    bool ev_allow_train = false, ev_dump = false;
    c_eval->add_option("--data", ev_data, "dataset directory");
    c_eval->add_option("--checkpoint", ev_ckpt, "checkpoint file");
    c_eval->add_option("--arch", ev_arch, "patchicl | global");
    c_eval->add_option("--split", ev_split, "train | heldout");
    c_eval->add_option("--jobs", ev_jobs, "episode-level worker threads");
    c_eval->add_flag("--allow-train", ev_allow_train, "permit evaluating on the train split");
    c_eval->add_flag("--dump-patches", ev_dump, "write per-level patch-box overlays");

    auto* c_bench = app.add_subcommand("bench-flops", "Resolution sweep of the analytic cost model");
    f_bench.add_common(c_bench);
    std::string bf_res, bf_cp, bf_cg, bf_data;
    int bf_jobs = 1;
    bool bf_cost_only = false;
    c_bench->add_option("--resolutions", bf_res, "comma-separated resolutions");
    c_bench->add_flag("--cost-only", bf_cost_only, "FLOPs columns only, no checkpoints needed");
    c_bench->add_option("--ckpt-patchicl", bf_cp, "cascade checkpoint for Dice columns");
    c_bench->add_option("--ckpt-global", bf_cg, "baseline checkpoint for Dice columns");
    c_bench->add_option("--data", bf_data, "dataset for Dice columns");
    c_bench->add_option("--jobs", bf_jobs, "episode-level worker threads");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_make->parsed()) return cmd_make_data(f_make, c_make, md_res, md_eps, md_held);
        if (c_train->parsed()) return cmd_train(f_train, c_train, tr_data, tr_arch, tr_steps, tr_resume);
        if (c_eval->parsed()) {
            return cmd_eval(f_eval, c_eval, ev_data, ev_ckpt, ev_arch, ev_split, ev_jobs, ev_allow_train, ev_dump);
        }
        if (c_bench->parsed()) {
            return cmd_bench_flops(f_bench, c_bench, bf_res, bf_cost_only, bf_cp, bf_cg, bf_data, bf_jobs);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
