#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace dcgrid;

TEST_CASE("adaptive estimate stays inside the parameter set for random error signals") {
    const auto c = oracle::projection_boundedness(10000);
    INFO(c.detail);
    CHECK(c.pass);
}

TEST_CASE("composite Lyapunov function does not increase on the coupled linear model") {
    const auto c = oracle::lyapunov_nonincrease();
    INFO(c.detail);
    CHECK(c.pass);
}

TEST_CASE("an effectively open line decouples two units") {
    const auto c = oracle::decoupling_limit(1e9);
    INFO(c.detail);
    CHECK(c.pass);
}

TEST_CASE("Kron reduction matches dense nodal analysis on every shipped bus network") {
    for (const auto& p : oracle::bus_configs(DCGRID_CONFIG_DIR)) {
        const auto c = oracle::kron_matches_nodal_analysis(load_config(p).grid.as_bus_network());
        INFO(p.filename().string() << ": " << c.detail);
        CHECK(c.pass);
    }
    const auto corpus = oracle::kron_corpus(DCGRID_CONFIG_DIR);
    INFO(corpus.detail);
    CHECK(corpus.pass);
}

TEST_CASE("plant integrator shows fourth-order convergence") {
    double ratio = 0.0;
    const auto c = oracle::rk4_order(&ratio);
    INFO(c.detail);
    CHECK(ratio >= 12.0);
    CHECK(ratio <= 20.0);
}

TEST_CASE("closed-form scalar cases") {
    const auto l1 = oracle::l1_norm_scalar();
    INFO(l1.detail);
    CHECK(l1.pass);
    const auto are = oracle::scalar_are();
    INFO(are.detail);
    CHECK(are.pass);
    const auto md = oracle::min_distance_normal();
    INFO(md.detail);
    CHECK(md.pass);
}

TEST_CASE("adding a unit only re-certifies it and its neighbours") {
    const auto c = oracle::locality();
    INFO(c.detail);
    CHECK(c.pass);
}
