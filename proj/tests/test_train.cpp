#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "picl/checkpoint.hpp"
#include "picl/data.hpp"
#include "picl/train.hpp"

using namespace picl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::vector<TaskInstance> tiny_episodes(uint64_t seed, int n) {
    DatasetManifest m;
    m.seed = seed;
    m.resolution = 24;
    m.n_context = 2;
    std::vector<TaskInstance> out;
    for (int e = 0; e < n; ++e) out.push_back(generate_episode(m, "train", e));
    return out;
}

TrainConfig tiny_train_config(const std::string& out_dir) {
    TrainConfig tc;
    tc.arch = "patchicl";
    tc.seed = 5;
    tc.steps = 4;
    tc.checkpoint_every = 2;
    tc.out_dir = out_dir;
    tc.cascade.model.d = 8;
    tc.cascade.model.layers = 1;
    tc.cascade.model.heads = 2;
    tc.cascade.model.patch_size = 4;
    tc.cascade.model.enc_channels = {2, 3};
    tc.cascade.levels.push_back({8, 2, 1, 4, 4});
    tc.cascade.levels.push_back({16, 3, 1, 4, 4});
    tc.cascade.n_context = 2;
    return tc;
}

int line_count(const fs::path& p) {
    std::ifstream is(p);
    int n = 0;
    std::string line;
    while (std::getline(is, line)) n += !line.empty();
    return n;
}

}  // namespace

TEST_CASE("default_cascade_config mirrors the 16-32-64 schedule") {
    CascadeConfig cfg = default_cascade_config(64, 3);
    REQUIRE(cfg.levels.size() == 3);
    CHECK(cfg.levels[0].resolution == 16);
    CHECK(cfg.levels[1].resolution == 32);
    CHECK(cfg.levels[2].resolution == 64);
    CHECK(cfg.noise_enabled);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("train_model writes one log row per step plus checkpoints") {
    auto eps = tiny_episodes(60, 3);
    fs::remove_all("tr_tmp_a");
    TrainConfig tc = tiny_train_config("tr_tmp_a");
    TrainResult res = train_model(tc, eps);
    CHECK(res.steps_done == 4);
    CHECK(res.checkpoint_path == "tr_tmp_a/ckpt_000004.pckt");
    CHECK(fs::exists("tr_tmp_a/ckpt_000002.pckt"));
    CHECK(fs::exists("tr_tmp_a/ckpt_000004.pckt"));
    CHECK(fs::exists("tr_tmp_a/ckpt_000004.pckt.opt"));
    CHECK(line_count("tr_tmp_a/train_log.csv") == 5);  // header + 4 steps
    std::ifstream is("tr_tmp_a/train_log.csv");
    std::string header;
    std::getline(is, header);
    CHECK(header == "step,loss_total,loss_l1,loss_l2");
    fs::remove_all("tr_tmp_a");
}

TEST_CASE("repeat runs with one seed are bitwise identical") {
    auto eps = tiny_episodes(61, 3);
    fs::remove_all("tr_tmp_b");
    fs::remove_all("tr_tmp_c");
    TrainConfig tb = tiny_train_config("tr_tmp_b");
    TrainConfig tcfg = tiny_train_config("tr_tmp_c");
    train_model(tb, eps);
    train_model(tcfg, eps);
    CHECK(slurp("tr_tmp_b/train_log.csv") == slurp("tr_tmp_c/train_log.csv"));
    CHECK(slurp("tr_tmp_b/ckpt_000004.pckt") == slurp("tr_tmp_c/ckpt_000004.pckt"));
    CHECK(slurp("tr_tmp_b/ckpt_000004.pckt.opt") == slurp("tr_tmp_c/ckpt_000004.pckt.opt"));
    fs::remove_all("tr_tmp_b");
    fs::remove_all("tr_tmp_c");
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run bitwise") {
    auto eps = tiny_episodes(62, 3);
    fs::remove_all("tr_tmp_full");
    fs::remove_all("tr_tmp_half");
    TrainConfig full = tiny_train_config("tr_tmp_full");
    train_model(full, eps);

    TrainConfig half = tiny_train_config("tr_tmp_half");
    half.steps = 2;
    train_model(half, eps);
    TrainConfig rest = tiny_train_config("tr_tmp_half");
    rest.resume = "tr_tmp_half/ckpt_000002.pckt";
    train_model(rest, eps);

    CHECK(slurp("tr_tmp_full/ckpt_000004.pckt") == slurp("tr_tmp_half/ckpt_000004.pckt"));
    CHECK(slurp("tr_tmp_full/ckpt_000004.pckt.opt") == slurp("tr_tmp_half/ckpt_000004.pckt.opt"));
    CHECK(slurp("tr_tmp_full/train_log.csv") == slurp("tr_tmp_half/train_log.csv"));
    fs::remove_all("tr_tmp_full");
    fs::remove_all("tr_tmp_half");
}

TEST_CASE("evaluation Dice is independent of the job count") {
    auto eps = tiny_episodes(63, 5);
    fs::remove_all("tr_tmp_e");
    TrainConfig tc = tiny_train_config("tr_tmp_e");
    tc.steps = 2;
    TrainResult res = train_model(tc, eps);
    ParamSet params = load_checkpoint(res.checkpoint_path);
    std::vector<Tensor> preds;
    std::vector<double> d1 = eval_dice_per_episode(tc, params, eps, 1, &preds);
    std::vector<double> d3 = eval_dice_per_episode(tc, params, eps, 3);
    REQUIRE(d1.size() == eps.size());
    CHECK(d1 == d3);  // bitwise identical regardless of parallelism
    for (size_t i = 0; i < d1.size(); ++i) {
        CHECK(d1[i] >= 0.0);
        CHECK(d1[i] <= 1.0);
        CHECK(preds[i].shape() == eps[i].target_mask.shape());
    }
    CHECK_THROWS(eval_dice_per_episode(tc, params, eps, 0));
    fs::remove_all("tr_tmp_e");
}

TEST_CASE("global arch trains and evaluates through the same path") {
    auto eps = tiny_episodes(64, 2);
    fs::remove_all("tr_tmp_g");
    TrainConfig tc = tiny_train_config("tr_tmp_g");
    tc.arch = "global";
    tc.steps = 2;
    tc.checkpoint_every = 2;
    tc.global.d = 8;
    tc.global.layers = 1;
    tc.global.heads = 2;
    tc.global.enc_mid = 2;
    tc.global.working_res = 8;
    tc.global.n_context = 2;
    TrainResult res = train_model(tc, eps);
    CHECK(res.steps_done == 2);
    std::ifstream is("tr_tmp_g/train_log.csv");
    std::string header;
    std::getline(is, header);
    CHECK(header == "step,loss_total,loss_l1");
    ParamSet params = load_checkpoint(res.checkpoint_path);
    std::vector<double> d = eval_dice_per_episode(tc, params, eps, 2);
    for (double v : d) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    fs::remove_all("tr_tmp_g");
}

TEST_CASE("train_model rejects bad configurations") {
    auto eps = tiny_episodes(65, 1);
    TrainConfig tc = tiny_train_config("tr_tmp_x");
    tc.arch = "mystery";
    CHECK_THROWS(train_model(tc, eps));
    tc = tiny_train_config("tr_tmp_x");
    tc.steps = 0;
    CHECK_THROWS(train_model(tc, eps));
    tc = tiny_train_config("tr_tmp_x");
    CHECK_THROWS(train_model(tc, {}));
    tc = tiny_train_config("");
    CHECK_THROWS(train_model(tc, eps));
    fs::remove_all("tr_tmp_x");
}
