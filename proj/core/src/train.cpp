#include "picl/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "picl/checkpoint.hpp"

namespace picl {

void TrainConfig::validate() const {
    if (arch != "patchicl" && arch != "global") {
        throw std::invalid_argument("train: unknown arch '" + arch + "' (expected patchicl or global)");
    }
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (lr <= 0) throw std::invalid_argument("train: lr must be > 0");
    if (checkpoint_every < 1) throw std::invalid_argument("train: checkpoint_every must be >= 1");
    if (arch == "patchicl") cascade.validate();
    else global.validate();
}

CascadeConfig default_cascade_config(int resolution, int n_context) {
    CascadeConfig cfg = sweep_cascade_config(resolution, ModelConfig{}, n_context);
    cfg.noise_enabled = true;
    return cfg;
}

namespace {

std::string ckpt_path(const std::string& out_dir, long step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%06ld.pckt", step);
    return out_dir + "/" + std::string(buf);
}

// One optimization step; returns the per-level loss values (one entry for the
// global arch).
std::vector<double> train_step(const TrainConfig& cfg, ParamSet& params, Adam& opt, const TaskInstance& task,
                               RngStream& step_rng) {
    Tape tape;
    params.attach_all(tape);
    std::vector<double> level_vals;
    Tensor loss;
    if (cfg.arch == "patchicl") {
        RngStream frng = step_rng.sub(1);
        PredictionPyramid pyr = cascade_forward(task, cfg.cascade, params, frng);
        int full_res = task.target_mask.dim(0);
        for (const LevelPrediction& lvl : pyr.levels) {
            Tensor gt(Shape{lvl.resolution, lvl.resolution},
                      resample_mask_majority(task.target_mask.data(), full_res, lvl.resolution));
            Tensor ll = level_loss(lvl.combined, gt);
            level_vals.push_back(ll.value());
            loss = loss.defined() ? add(loss, ll) : ll;
        }
    } else {
        Tensor logits = global_forward_logits(cfg.global, params, task);
        int r = cfg.global.working_res;
        Tensor gt(Shape{r, r}, resample_mask_majority(task.target_mask.data(), task.target_mask.dim(0), r));
        loss = level_loss(logits, gt);
        level_vals.push_back(loss.value());
    }
    GradMap grads = backward(loss, params);
    params.detach_all();
    opt.step(params, grads);
    return level_vals;
}

}  // namespace

TrainResult train_model(const TrainConfig& cfg, const std::vector<TaskInstance>& episodes) {
    cfg.validate();
    if (episodes.empty()) throw std::invalid_argument("train: no episodes");
    if (cfg.out_dir.empty()) throw std::invalid_argument("train: out_dir is required");
    std::filesystem::create_directories(cfg.out_dir);

    ParamSet params;
    Adam opt(AdamConfig{cfg.lr});
    long start = 0;
    if (!cfg.resume.empty()) {
        params = load_checkpoint(cfg.resume);
        opt.state() = load_checkpoint(cfg.resume + ".opt");
        start = opt.step_count();
        if (start >= cfg.steps) {
            throw std::invalid_argument("train: resume checkpoint already at step " + std::to_string(start));
        }
    } else {
        RngStream init_rng(cfg.seed, 0);
        if (cfg.arch == "patchicl") init_patch_model(cfg.cascade.model, params, init_rng);
        else init_global_model(cfg.global, params, init_rng);
    }

    size_t n_levels = cfg.arch == "patchicl" ? cfg.cascade.levels.size() : 1;
    std::string log_path = cfg.out_dir + "/train_log.csv";
    std::ofstream log(log_path, start > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot open " + log_path);
    if (start == 0) {
        log << "step,loss_total";
        for (size_t l = 0; l < n_levels; ++l) log << ",loss_l" << (l + 1);
        log << "\n";
    }
    log.precision(17);

    TrainResult res;
    for (long step = start; step < cfg.steps; ++step) {
        RngStream step_rng = RngStream(cfg.seed, 1).sub(static_cast<uint64_t>(step));
        size_t idx = static_cast<size_t>(step_rng.next_below(episodes.size()));
        std::vector<double> level_vals;
        try {
            level_vals = train_step(cfg, params, opt, episodes[idx], step_rng);
        } catch (const std::exception& e) {
            params.detach_all();
            throw std::runtime_error("train: step " + std::to_string(step + 1) + " failed: " + e.what());
        }
        double total = 0;
        for (double v : level_vals) total += v;
        if (!std::isfinite(total)) {
            throw std::runtime_error("train: loss diverged (non-finite) at step " + std::to_string(step + 1));
        }
        log << (step + 1) << "," << total;
        for (double v : level_vals) log << "," << v;
        log << "\n";
        res.final_loss = total;
        res.steps_done = step + 1;
        if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps) {
            res.checkpoint_path = ckpt_path(cfg.out_dir, step + 1);
            save_checkpoint(params, res.checkpoint_path);
            save_checkpoint(opt.state(), res.checkpoint_path + ".opt");
        }
    }
    if (!log) throw std::runtime_error("train: write failed for " + log_path);
    return res;
}

std::vector<double> eval_dice_per_episode(const TrainConfig& cfg, const ParamSet& params,
                                          const std::vector<TaskInstance>& episodes, int jobs,
                                          std::vector<Tensor>* predictions) {
    cfg.validate();
    if (jobs < 1) throw std::invalid_argument("eval: jobs must be >= 1");
    CascadeConfig eval_cascade = cfg.cascade;
    eval_cascade.noise_enabled = false;

    std::vector<double> out(episodes.size(), 0.0);
    if (predictions) predictions->assign(episodes.size(), Tensor());
    std::vector<std::string> errors;
    std::mutex err_mu;
    auto run_range = [&](size_t lo, size_t hi) {
        try {
        for (size_t i = lo; i < hi; ++i) {
            const TaskInstance& task = episodes[i];
            Tensor prob;
            if (cfg.arch == "patchicl") {
                RngStream rng = RngStream(cfg.seed, 2).sub(static_cast<uint64_t>(task.episode_id));
                prob = cascade_forward(task, eval_cascade, params, rng).final_prob;
            } else {
                prob = global_forward(cfg.global, params, task);
            }
            out[i] = dice_score(prob, task.target_mask);
            if (predictions) (*predictions)[i] = prob;
        }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lk(err_mu);
            errors.emplace_back(e.what());
        }
    };

    size_t n = episodes.size();
    size_t workers = std::min<size_t>(static_cast<size_t>(jobs), std::max<size_t>(n, 1));
    if (workers <= 1) {
        run_range(0, n);
    } else {
        std::vector<std::thread> threads;
        for (size_t t = 0; t < workers; ++t) {
            size_t lo = n * t / workers;
            size_t hi = n * (t + 1) / workers;
            threads.emplace_back(run_range, lo, hi);
        }
        for (auto& th : threads) th.join();
    }
    if (!errors.empty()) throw std::runtime_error("eval: " + errors.front());
    return out;
}

}  // namespace picl
