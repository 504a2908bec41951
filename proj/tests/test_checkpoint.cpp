#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "picl/checkpoint.hpp"
#include "picl/rng.hpp"

using namespace picl;

TEST_CASE("round-trip is bit-exact and order preserving") {
    RngStream rng(10, 0);
    ParamSet p;
    p.add("enc/w", Tensor::randn({3, 2, 3, 3}, rng));
    p.add("enc/b", Tensor({3}));
    p.add("scalar", Tensor::scalar(-1.25e-300));
    p.add("big", Tensor::randn({257}, rng, 1e10));
    save_checkpoint(p, "ckpt_test_tmp.pckt");
    ParamSet q = load_checkpoint("ckpt_test_tmp.pckt");
    REQUIRE(q.names() == p.names());
    for (const auto& name : p.names()) {
        const Tensor& a = p.get(name);
        const Tensor& b = q.get(name);
        REQUIRE(a.shape() == b.shape());
        for (int i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bitwise, not approximate
    }
    std::remove("ckpt_test_tmp.pckt");
}

TEST_CASE("file layout matches the documented format byte for byte") {
    ParamSet p;
    p.add("a", Tensor({1}, {1.0}));
    save_checkpoint(p, "ckpt_fmt_tmp.pckt");
    std::ifstream is("ckpt_fmt_tmp.pckt", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const std::vector<unsigned char> expect = {
        'P', 'C', 'K', 'T', '1',
        1, 0, 0, 0,              // name length u32 LE
        'a',
        1, 0, 0, 0,              // rank u32 LE
        1, 0, 0, 0, 0, 0, 0, 0,  // dim u64 LE
        0, 0, 0, 0, 0, 0, 0xf0, 0x3f,  // 1.0 as f64 LE
    };
    CHECK(bytes == expect);
    std::remove("ckpt_fmt_tmp.pckt");
}

TEST_CASE("repeated saves of the same params are identical files") {
    RngStream rng(11, 0);
    ParamSet p;
    p.add("w", Tensor::randn({16, 16}, rng));
    save_checkpoint(p, "ckpt_a_tmp.pckt");
    save_checkpoint(p, "ckpt_b_tmp.pckt");
    auto slurp = [](const char* path) {
        std::ifstream is(path, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp("ckpt_a_tmp.pckt") == slurp("ckpt_b_tmp.pckt"));
    std::remove("ckpt_a_tmp.pckt");
    std::remove("ckpt_b_tmp.pckt");
}

TEST_CASE("bad magic and missing files are rejected") {
    {
        std::ofstream os("ckpt_bad_tmp.pckt", std::ios::binary);
        os << "NOPE!junk";
    }
    CHECK_THROWS(load_checkpoint("ckpt_bad_tmp.pckt"));
    CHECK_THROWS(load_checkpoint("no_such_checkpoint.pckt"));
    std::remove("ckpt_bad_tmp.pckt");
}

TEST_CASE("truncated payload is rejected") {
    ParamSet p;
    p.add("w", Tensor({4}, {1, 2, 3, 4}));
    save_checkpoint(p, "ckpt_trunc_tmp.pckt");
    std::ifstream is("ckpt_trunc_tmp.pckt", std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    std::ofstream os("ckpt_trunc_tmp.pckt", std::ios::binary);
    os.write(all.data(), static_cast<std::streamsize>(all.size() - 7));
    os.close();
    CHECK_THROWS(load_checkpoint("ckpt_trunc_tmp.pckt"));
    std::remove("ckpt_trunc_tmp.pckt");
}
