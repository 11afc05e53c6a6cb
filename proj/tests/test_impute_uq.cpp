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
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "gpimpute/gp_model.hpp"
#include "gpimpute/impute_uq.hpp"
#include "gpimpute/rng.hpp"
#include "gpimpute/score_exact.hpp"

using namespace gpimpute;

namespace {

GpSpec spec8() {
    GpSpec s;
    s.H = 8;
    s.d = 1;
    s.kernel = {KernelSpec::Kind::laplace, 4.0};
    s.Lambda = MatrixXd::Identity(1, 1);
    return s;
}

int inside(const ImputationResult& r) {
    int c = 0;
    for (Eigen::Index z = 0; z < r.samples.cols(); ++z) c += r.contains(r.samples.col(z));
    return c;
}

}  // namespace

TEST_CASE("identical samples give a zero radius") {
    MatrixXd S = VectorXd::LinSpaced(3, 1.0, 2.0).replicate(1, 40);
    auto r = summarize_samples(S, 0.05);
    CHECK(r.radius == 0.0);
    CHECK((r.mean - S.col(0)).norm() < 1e-15);
    CHECK((r.median - S.col(0)).norm() == 0.0);
}

TEST_CASE("quantile contract and monotonicity in alpha") {
    Rng rng(3);
    for (int rep = 0; rep < 200; ++rep) {
        int Z = 20 + int(rng.uniform_int(0, 300));
        MatrixXd S = rng.normal_matrix(1 + rng.uniform_int(0, 5), Z);
        double prev = 1e300;
        for (double a : {0.01, 0.05, 0.1, 0.3, 0.5, 0.9}) {
            for (PointKind k : {PointKind::mean, PointKind::median}) {
                auto r = summarize_samples(S, a, k);
                CHECK(inside(r) >= long(std::ceil((1 - a) * Z - 1e-9)));
            }
            auto r = summarize_samples(S, a);
            CHECK(r.radius <= prev);
            prev = r.radius;
        }
    }
    // exact order statistic: Z = 20, alpha = 0.05 takes the 19th smallest distance
    MatrixXd S = MatrixXd::Zero(1, 20);
    for (int z = 0; z < 10; ++z) {
        S(0, z) = z + 1.0;
        S(0, 10 + z) = -(z + 1.0);
    }
    auto r = summarize_samples(S, 0.05);
    CHECK(r.radius == 10.0);
    CHECK(summarize_samples(S, 0.1).radius == 9.0);
}

TEST_CASE("median point") {
    MatrixXd S(1, 4);
    S << 1, 7, 3, 100;
    auto r = summarize_samples(S, 0.5, PointKind::median);
    CHECK(r.median(0) == 5.0);
    CHECK(r.point()(0) == 5.0);
}

TEST_CASE("argument checks") {
    ExactScoreFn fn(spec8(), {});
    Mask m = Mask::from_missing(8, {3});
    ObservedContext ctx{m, VectorXd::Zero(7)};
    CHECK_THROWS(impute(fn, ctx, 1, 19, 0.05, {}));
    CHECK_THROWS(impute(fn, ctx, 1, 20, 0.0, {}));
    CHECK_THROWS(impute(fn, ctx, 1, 20, 1.0, {}));
    EvalConfig cfg;
    cfg.trials = 50;
    CHECK_THROWS(coverage_eval(fn, spec8(), as_mixed({1, 1, Placement::uniform, {}}), cfg));
}

TEST_CASE("sampler failures propagate with the sample index") {
    struct Bad : ScoreFn {
        BoundScore bind(const ObservedContext&) const override {
            return [](const MatrixXd& v, double t) {
                MatrixXd r = -v;
                if (t < 1.0) r(0, 7) = INFINITY;
                return r;
            };
        }
        std::string name() const override { return "bad"; }
    } bad;
    SamplerConfig sc;
    sc.n_steps = 50;
    try {
        impute(bad, {Mask::from_missing(8, {3}), VectorXd::Zero(7)}, 1, 20, 0.05, sc);
        FAIL("expected SamplerError");
    } catch (const SamplerError& e) {
        CHECK(e.sample == 7);
    }
}

TEST_CASE("exact-score point estimate matches the conditional mean") {
    GpSpec spec = spec8();
    spec.mean = VectorXd::LinSpaced(8, 0.0, 2.0);
    Mask m = Mask::from_missing(8, {2, 5});
    ConditionalGaussian cond(spec, m);
    VectorXd x_obs = VectorXd::LinSpaced(6, 1.0, -1.0);
    SamplerConfig sc;
    sc.seed = 4;
    auto r = impute(ExactScoreFn(spec, {}), {m, x_obs}, 1, 500, 0.05, sc);
    VectorXd mu = cond.mu_cond(x_obs);
    for (int i = 0; i < 2; ++i) CHECK(std::abs(r.mean(i) - mu(i)) <= 5 * std::sqrt(cond.Sigma_cond()(i, i) / 500));
}

TEST_CASE("exact-score coverage is nominal") {
    GpSpec spec = spec8();
    EvalConfig cfg;
    cfg.trials = 400;
    cfg.Z = 200;
    cfg.seed = 12;
    auto res = coverage_eval(ExactScoreFn(spec, {}), spec, as_mixed({2, 1, Placement::uniform, {}}), cfg);
    CAPTURE(res.coverage);
    CHECK(std::abs(res.coverage - 0.95) <= 3 * std::sqrt(0.95 * 0.05 / cfg.trials));
}

TEST_CASE("results do not depend on the thread count") {
    GpSpec spec = spec8();
    EvalConfig cfg;
    cfg.trials = 100;
    cfg.Z = 20;
    cfg.sampler.n_steps = 40;
    cfg.seed = 3;
    ExactScoreFn fn(spec, {});
    auto pat = as_mixed({1, 2, Placement::uniform, {}});
    auto a = coverage_eval(fn, spec, pat, cfg);
    cfg.threads = 3;
    auto b = coverage_eval(fn, spec, pat, cfg);
    CHECK(a.hits == b.hits);
    auto ma = mse_eval(fn, spec, pat, cfg);
    cfg.threads = 1;
    auto mb = mse_eval(fn, spec, pat, cfg);
    CHECK(ma.mse == mb.mse);
}

TEST_CASE("mean-point error shrinks like the sample count") {
    GpSpec spec = spec8();
    BlockStrategy fixed{1, 2, Placement::fixed, {4}};
    ConditionalGaussian cond(spec, Mask::from_missing(8, {4, 5}));
    ExactScoreFn fn(spec, {});
    EvalConfig cfg;
    cfg.trials = 200;
    cfg.seed = 6;
    cfg.Z = 20;
    double m20 = mse_eval(fn, spec, as_mixed(fixed), cfg).mse;
    cfg.Z = 500;
    double m500 = mse_eval(fn, spec, as_mixed(fixed), cfg).mse;
    CHECK(m20 > m500);
    const double want = cond.Sigma_cond().trace() / (2.0 * 500);
    CAPTURE(m500);
    CAPTURE(want);
    CHECK(std::abs(m500 - want) < 0.3 * want);
}

TEST_CASE("latent MSE runs against held-out values") {
    GpSpec spec = spec8();
    EvalConfig cfg;
    cfg.trials = 20;
    cfg.Z = 20;
    cfg.sampler.n_steps = 20;
    auto r = mse_eval_latent(ExactScoreFn(spec, {}), spec, 0.1, as_mixed({1, 2, Placement::uniform, {}}), cfg);
    CHECK(r.trials == 20);
    CHECK(std::isfinite(r.mse));
    CHECK(r.mse > 0.0);
}
