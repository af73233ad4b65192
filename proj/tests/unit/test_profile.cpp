#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "nnleak/cost_profile.hpp"

using namespace nnleak;

TEST_CASE("builtin profiles validate") {
    for (const auto& name : CostProfile::builtin_names()) {
        auto p = CostProfile::builtin(name);
        CHECK_NOTHROW(p.validate());
        CHECK(p.name == name);
    }
    CHECK_THROWS_AS(CostProfile::builtin("z80-like"), std::domain_error);
}

TEST_CASE("platform flags") {
    CHECK_FALSE(CostProfile::atmega_like().i2f_constant_time);
    CHECK_FALSE(CostProfile::atmega_like().div_hardware);
    CHECK(CostProfile::cortex_m0_like().i2f_constant_time);
    CHECK_FALSE(CostProfile::cortex_m0_like().div_hardware);
    // hardware divider and constant conversion on the riscv-like platform
    CHECK(CostProfile::riscv_like().i2f_constant_time);
    CHECK(CostProfile::riscv_like().div_hardware);
}

TEST_CASE("profile file round-trip") {
    auto dir = std::filesystem::temp_directory_path() / "nnleak_profile_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "custom.profile").string();

    CostProfile p = CostProfile::cortex_m0_like();
    p.name = "tweaked";
    p.fmul_base = 177;
    p.save(path);
    CostProfile q = CostProfile::load(path);
    CHECK(q.name == "tweaked");
    CHECK(q.fmul_base == 177);
    CHECK(q.i2f_constant_time == p.i2f_constant_time);
    CHECK(q.ct_mac == p.ct_mac);

    std::filesystem::remove_all(dir);
}

TEST_CASE("profile validation rejects bad constants") {
    CostProfile p = CostProfile::atmega_like();
    p.frelu_zero = p.frelu_pos;
    CHECK_THROWS_AS(p.validate(), std::domain_error);
    p = CostProfile::atmega_like();
    p.fadd_shift = 0;
    CHECK_THROWS_AS(p.validate(), std::domain_error);
    p = CostProfile::atmega_like();
    p.i2f_zero = p.i2f_base + 2 * p.i2f_iter;  // collides with the e=5 class
    CHECK_THROWS_AS(p.validate(), std::domain_error);
}
