/*
 * Copyright 2026 The gpimpute Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <map>
#include <numeric>

#include "doctest.h"
#include "gpimpute/gp_model.hpp"
#include "gpimpute/linalg.hpp"
#include "gpimpute/masking.hpp"
#include "gpimpute/rng.hpp"

using namespace gpimpute;

namespace {

// maximal runs must tile into blocks of length b
void check_block_census(const Mask& m, int k, int b) {
    auto runs = m.missing_runs();
    int total = std::accumulate(runs.begin(), runs.end(), 0);
    CHECK(total == k * b);
    for (int r : runs) CHECK(r % b == 0);
    CHECK(static_cast<int>(m.miss().size()) == k * b);
}

}  // namespace

TEST_CASE("sixteen singletons on H=96") {
    auto s = builtin_strategies(96).at("S1");
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Mask m = sample_mask(s, 96, seed);
        CHECK(m.miss().size() == 16);
        CHECK(m.obs().size() == 80);
    }
}

TEST_CASE("tail placement") {
    BlockStrategy t{1, 16, Placement::tail, {}};
    Mask m = sample_mask(t, 96, 1);
    std::vector<int> want(16);
    std::iota(want.begin(), want.end(), 80);
    CHECK(m.miss() == want);
}

TEST_CASE("four blocks of four: run census over 1000 draws") {
    BlockStrategy s{4, 4, Placement::uniform, {}};
    int exactly_four = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Mask m = sample_mask(s, 96, seed);
        check_block_census(m, 4, 4);
        auto runs = m.missing_runs();
        if (runs.size() == 4) {
            ++exactly_four;
            for (int r : runs) CHECK(r == 4);
        }
    }
    // touching blocks are allowed but rare
    CHECK(exactly_four > 700);
}

TEST_CASE("fixed placement and validation errors") {
    BlockStrategy f{2, 3, Placement::fixed, {10, 2}};
    Mask m = sample_mask(f, 20, 0);
    CHECK(m.miss() == std::vector<int>{2, 3, 4, 10, 11, 12});
    CHECK(m.missing_runs() == std::vector<int>{3, 3});
    BlockStrategy sat{8, 2, Placement::uniform, {}};
    CHECK_THROWS_WITH(sample_mask(sat, 16, 0), doctest::Contains("strategy saturates sequence"));
    BlockStrategy ov{2, 3, Placement::fixed, {2, 4}};
    CHECK_THROWS_AS(sample_mask(ov, 20, 0), StrategyError);
}

TEST_CASE("uniform placement covers every start position") {
    BlockStrategy s{1, 5, Placement::uniform, {}};
    std::vector<int> hits(12, 0);
    for (std::uint64_t seed = 0; seed < 3000; ++seed) hits[(std::size_t)sample_mask(s, 12, seed).miss()[0]]++;
    for (int i = 0; i <= 7; ++i) CHECK(hits[(std::size_t)i] > 250);
    for (int i = 8; i < 12; ++i) CHECK(hits[(std::size_t)i] == 0);
}

TEST_CASE("mixed component frequencies match weights") {
    auto s = builtin_strategies(96).at("S4");
    const int n = 10000;
    std::vector<int> count(4, 0);
    for (int i = 0; i < n; ++i) {
        int c = -1;
        Mask m = sample_mask(s, 96, mix_seed(5, (std::uint64_t)i), &c);
        count[(std::size_t)c]++;
        const auto& b = s.components[(std::size_t)c].blocks;
        check_block_census(m, b.num_blocks, b.block_len);
    }
    const double se = std::sqrt(0.25 * 0.75 / n);
    for (int c : count) CHECK(std::abs(c / double(n) - 0.25) < 3 * se);
}

TEST_CASE("masks are deterministic in the seed") {
    auto s = builtin_strategies(96).at("S3");
    CHECK(sample_mask(s, 96, 99) == sample_mask(s, 96, 99));
}

TEST_CASE("builtin patterns at H=96") {
    auto p = builtin_patterns(96);
    REQUIRE(p.size() == 4);
    CHECK(p[0].first == "P1");
    CHECK(p[0].second.num_blocks * p[0].second.block_len == 16);
    CHECK(p[3].second.num_blocks == 16);
    CHECK(p[3].second.block_len == 1);
    Mask m4 = sample_mask(p[3].second, 96, 3);
    CHECK(m4.miss().size() == 16);
    for (int r : m4.missing_runs()) CHECK(r >= 1);
}

TEST_CASE("pattern difficulty ordering under the H=96 laplace GP") {
    GpSpec spec;
    spec.H = 96;
    spec.kernel = {KernelSpec::Kind::laplace, 128.0};
    spec.Lambda = MatrixXd::Identity(1, 1);
    std::vector<double> mean_kappa;
    for (const auto& [name, strat] : builtin_patterns(96)) {
        double acc = 0;
        for (std::uint64_t seed = 0; seed < 40; ++seed)
            acc += condition_number(condition_on_observed(spec, sample_mask(strat, 96, seed)).Sigma_cond());
        mean_kappa.push_back(acc / 40);
    }
    CHECK(mean_kappa[0] > mean_kappa[1]);
    CHECK(mean_kappa[1] > mean_kappa[2]);
    CHECK(mean_kappa[2] > mean_kappa[3]);
}

TEST_CASE("apply_mask stacking order") {
    Mask m = Mask::from_missing(3, {1});
    Eigen::VectorXd seq(6);
    seq << 1, 2, 3, 4, 5, 6;
    auto sp = apply_mask(seq, m, 2);
    CHECK(sp.x_obs == (Eigen::VectorXd(4) << 1, 2, 5, 6).finished());
    CHECK(sp.x_miss == (Eigen::VectorXd(2) << 3, 4).finished());
    CHECK(reassemble(sp.x_obs, sp.x_miss, m, 2) == seq);
    CHECK_THROWS_AS(apply_mask(Eigen::VectorXd(5), m, 2), std::invalid_argument);
}

TEST_CASE("apply then reassemble is the identity under fuzzing") {
    Rng rng(17);
    for (int c = 0; c < 1000; ++c) {
        int H = (int)rng.uniform_int(2, 30), d = (int)rng.uniform_int(1, 3);
        std::vector<std::uint8_t> tau((std::size_t)H);
        do {
            for (auto& t : tau) t = (std::uint8_t)rng.uniform_int(0, 1);
        } while (std::count(tau.begin(), tau.end(), 0) == 0 || std::count(tau.begin(), tau.end(), 1) == 0);
        Mask m(tau);
        Eigen::VectorXd seq = rng.normal_vector(H * d);
        auto sp = apply_mask(seq, m, d);
        CHECK(reassemble(sp.x_obs, sp.x_miss, m, d) == seq);
    }
}

TEST_CASE("strategy json round trip") {
    auto s = builtin_strategies(96).at("S2");
    auto t = mixed_strategy_from_json(to_json(s), "strategies.S2");
    REQUIRE(t.components.size() == 2);
    CHECK(t.components[1].blocks.num_blocks == 8);
    CHECK(t.components[1].blocks.block_len == 2);
    CHECK(t.components[1].weight == 0.5);
    auto j = to_json(s);
    j[0]["blocks"][0]["placement"] = "sideways";
    CHECK_THROWS_WITH(mixed_strategy_from_json(j, "strategies.S2"),
                      doctest::Contains("strategies.S2[0].blocks[0].placement"));
    CHECK(mask_csv_row(Mask::from_missing(4, {2})) == "1,1,0,1");
}
