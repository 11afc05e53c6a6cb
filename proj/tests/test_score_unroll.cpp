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
#include <cmath>
#include <memory>
#include <numbers>

#include "doctest.h"
#include "gpimpute/linalg.hpp"
#include "gpimpute/nested_gd.hpp"
#include "gpimpute/rng.hpp"
#include "gpimpute/unrolled_transformer.hpp"

using namespace gpimpute;

namespace {

GpSpec sinus_spec(int H, int d, double ell) {
    GpSpec s;
    s.H = H;
    s.d = d;
    s.kernel = {KernelSpec::Kind::laplace, ell};
    s.Lambda = MatrixXd::Identity(d, d);
    if (d == 2) s.Lambda << 1.0, 0.3, 0.3, 0.7;
    s.embedding.kind = EmbeddingSpec::Kind::sinusoidal;
    s.embedding.C = 2.0 * (H - 1);
    s.embedding.r = s.embedding.C / (2.0 * std::numbers::pi);
    return s;
}

// draws (x, t, v_t) from the data law and keeps the truncated ones
std::vector<ScoreQuery> truncated_queries(const GpSpec& spec, const Mask& m, const DiffusionSchedule& sch, int n,
                                          std::uint64_t seed) {
    MatrixXd X = sample_sequences(spec, 4 * n, seed);
    Rng rng(seed + 1);
    const double cdata = default_c_data(spec);
    std::vector<ScoreQuery> out;
    for (int i = 0; i < X.cols() && (int)out.size() < n; ++i) {
        auto sp = apply_mask(X.col(i), m, spec.d);
        double t = std::exp(rng.uniform(std::log(sch.t0), std::log(sch.T)));
        VectorXd v = DiffusionSchedule::alpha(t) * sp.x_miss + DiffusionSchedule::sigma(t) * rng.normal_vector(sp.x_miss.size());
        ScoreQuery q{v, sp.x_obs, t};
        if (in_truncation_region(q, cdata)) out.push_back(q);
    }
    return out;
}

}  // namespace

TEST_CASE("perfectly conditioned auxiliary problem needs one step") {
    SpectralSummary s;
    s.cond_min = 0.5;
    s.cond_max = 2.0;
    s.obs_min = s.obs_max = 3.0;
    s.cor_norm = 0.4;
    s.c_sigma = 1.2;
    s.c_data = 5.0;
    auto c = recommend_iterations(s, {1e-3, 10}, 0.5, 1e-2);
    CHECK(c.K_aux == 1);
    CHECK(c.theta == doctest::Approx(1.0 / 3.0));
    s.cor_norm = 0.0;
    CHECK(recommend_iterations(s, {1e-3, 10}, 0.5, 1e-2).K_aux == 0);
    CHECK_THROWS(recommend_iterations(s, {1e-3, 10}, 0.5, 1.5));
}

TEST_CASE("iteration counts on the clustered H=96 instance") {
    GpSpec spec;
    spec.H = 96;
    spec.kernel = {KernelSpec::Kind::laplace, 128.0};
    spec.Lambda = MatrixXd::Identity(1, 1);
    std::vector<int> tail, spread;
    for (int i = 80; i < 96; ++i) tail.push_back(i);
    for (int i = 0; i < 16; ++i) spread.push_back(3 + 6 * i);
    ConditionalGaussian ct(spec, Mask::from_missing(96, tail)), cs(spec, Mask::from_missing(96, spread));
    DiffusionSchedule sch{1e-3, 10};
    auto rt = recommend_iterations(ct, sch, sch.t0, 1e-2);
    auto rs = recommend_iterations(cs, sch, sch.t0, 1e-2);
    MESSAGE("clustered: kappa_t=" << rt.kappa_t << " K=" << rt.K << " K_aux=" << rt.K_aux);
    MESSAGE("dispersed: kappa_t=" << rs.kappa_t << " K=" << rs.K << " K_aux=" << rs.K_aux);
    CHECK(rt.kappa_t > 300.0);
    CHECK(rt.K > 10 * rs.K);
    // halving eps costs at most (kappa_t + 1)/2 log 2 further steps
    auto rh = recommend_iterations(ct, sch, sch.t0, 0.5e-2);
    CHECK(rh.K >= rt.K);
    CHECK(rh.K - rt.K <= std::ceil(0.5 * (rt.kappa_t + 1) * std::log(2.0)) + 1);
}

TEST_CASE("decoupled case converges to -v") {
    GpSpec spec;
    spec.H = 6;
    spec.kernel = {KernelSpec::Kind::rbf, 1e-3};
    spec.Lambda = MatrixXd::Identity(1, 1);
    ConditionalGaussian c(spec, Mask::from_missing(6, {1, 4}));
    DiffusionSchedule sch{1e-3, 10};
    Rng rng(1);
    for (double t : {0.01, 1.0, 5.0}) {
        ScoreQuery q{rng.normal_vector(2), rng.normal_vector(4), t};
        auto cfg = recommend_iterations(c, sch, t, 1e-3);
        auto r = nested_gd_score(c, q, cfg);
        CHECK((r.s + q.v_t).norm() <= 1e-3 / DiffusionSchedule::sigma(t));
    }
}

TEST_CASE("first major step with exact auxiliary solves") {
    auto spec = sinus_spec(7, 1, 2.0);
    ConditionalGaussian c(spec, Mask::from_missing(7, {2, 5}));
    Rng rng(3);
    ScoreQuery q{rng.normal_vector(2), rng.normal_vector(5), 0.3};
    auto cfg = recommend_iterations(c, {1e-3, 10}, 0.3, 1e-2);
    cfg.K = 1;
    NestedGdOptions opt;
    opt.exact_aux = true;
    auto r = nested_gd_score(c, q, cfg, opt);
    VectorXd want = -cfg.eta * (q.v_t - DiffusionSchedule::alpha(0.3) * c.mu_cond(q.x_obs));
    CHECK((r.s - want).norm() < 1e-12);
}

TEST_CASE("recommended counts meet the error target on truncated queries") {
    for (int variant = 0; variant < 2; ++variant) {
        auto spec = variant == 0 ? sinus_spec(10, 1, 4.0) : sinus_spec(8, 2, 3.0);
        Mask m = variant == 0 ? Mask::from_missing(10, {3, 4, 5, 9}) : Mask::from_missing(8, {2, 6});
        auto cond = std::make_shared<ConditionalGaussian>(spec, m);
        DiffusionSchedule sch{1e-3, 10};
        ExactScore es(cond, sch);
        auto qs = truncated_queries(spec, m, sch, 100, 40 + variant);
        REQUIRE(qs.size() == 100);
        for (double eps : {1e-1, 1e-2}) {
            int worst_ok = 0;
            for (const auto& q : qs) {
                auto cfg = recommend_iterations(*cond, sch, q.t, eps);
                auto r = nested_gd_score(*cond, q, cfg);
                worst_ok += (r.s - es(q)).norm() <= eps / DiffusionSchedule::sigma(q.t);
            }
            CHECK(worst_ok == 100);
        }
    }
}

TEST_CASE("major iterations contract monotonically with exact auxiliary solves") {
    auto spec = sinus_spec(9, 1, 5.0);
    auto cond = std::make_shared<ConditionalGaussian>(spec, Mask::from_missing(9, {5, 6, 7}));
    DiffusionSchedule sch{1e-3, 10};
    ExactScore es(cond, sch);
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        ScoreQuery q{rng.normal_vector(3), rng.normal_vector(6), rng.uniform(0.01, 3.0)};
        auto cfg = recommend_iterations(*cond, sch, q.t, 1e-3);
        NestedGdOptions opt;
        opt.exact_aux = true;
        opt.oracle = &es;
        auto r = nested_gd_score(*cond, q, cfg, opt);
        const double rho = (cfg.kappa_t - 1) / (cfg.kappa_t + 1);
        for (std::size_t k = 1; k < r.error_to_oracle.size(); ++k)
            CHECK(r.error_to_oracle[k] <= rho * r.error_to_oracle[k - 1] * (1 + 1e-9) + 1e-13);
    }
}

TEST_CASE("constant-direction perturbations stay within the robustness bound") {
    auto spec = sinus_spec(9, 1, 5.0);
    auto cond = std::make_shared<ConditionalGaussian>(spec, Mask::from_missing(9, {5, 6, 7}));
    DiffusionSchedule sch{1e-3, 10};
    ExactScore es(cond, sch);
    Rng rng(6);
    ScoreQuery q{rng.normal_vector(3), rng.normal_vector(6), 0.05};
    auto cfg = recommend_iterations(*cond, sch, q.t, 1e-6);
    const double eps = 1e-2;
    // worst direction is the smallest-eigenvalue eigenvector of the shifted matrix
    auto e = sym_eig(cond->Sigma_cond());
    VectorXd dir = e.vectors.col(0);
    NestedGdOptions opt;
    opt.exact_aux = true;
    opt.perturbation = [&](int) { return VectorXd(eps * dir); };
    auto r = nested_gd_score(*cond, q, cfg, opt);
    const double err = (r.s - es(q)).norm();
    const double rho = (cfg.kappa_t - 1) / (cfg.kappa_t + 1);
    CHECK(err <= (cfg.kappa_t / 2 + 1) * eps + std::pow(rho, cfg.K) * es(q).norm());
    // and the bound is nearly attained along that direction
    CHECK(err >= 0.4 * (cfg.kappa_t + 1) / 2 * eps);
}

TEST_CASE("trapezoid picks out exactly one integer gap") {
    for (int H : {4, 12, 32}) {
        EmbeddingSpec e;
        e.kind = EmbeddingSpec::Kind::sinusoidal;
        e.C = 2.0 * (H - 1);
        e.r = e.C / (2 * std::numbers::pi);
        const double D = e.delta(H);
        MatrixXd X = e.coordinates(H);
        const double r2 = e.r * e.r;
        for (int m = 0; m < H; ++m)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < H; ++j) {
                    double u = X.row(i).dot(X.row(j)) - r2 + 0.5 * e.f(m) * e.f(m);
                    double want = std::abs(i - j) == m ? 1.0 : 0.0;
                    CHECK(std::abs(trapezoid(u, D) - want) < 1e-12);
                }
    }
}

TEST_CASE("relu multiplier accuracy on a grid") {
    for (double B : {1.0, 7.5, 40.0}) {
        ReluMultiplier mul(B, B, 1e-4);
        CHECK(mul.error_bound() <= 1e-4);
        double worst = 0;
        for (int a = -40; a <= 40; ++a)
            for (int b = -40; b <= 40; ++b) {
                double w = B * a / 40.0, x = B * b / 40.0;
                worst = std::max(worst, std::abs(mul(w, x) - w * x));
            }
        CHECK(worst <= 1e-4);
        CHECK(mul(0.0, 0.5 * B) == 0.0);
    }
}

TEST_CASE("idealized network transcribes nested gradient descent") {
    auto spec = sinus_spec(8, 1, 3.0);
    Mask m = Mask::from_missing(8, {2, 3, 6});
    DiffusionSchedule sch{1e-2, 10};
    auto net = build_unrolled_transformer(spec, m, sch, 1e-1);
    auto meta = net.metadata();
    MESSAGE("metadata: D=" << meta["D"] << " L=" << meta["L"] << " K=" << meta["K"] << " K_aux=" << meta["K_aux"]);
    CHECK(net.layout().D == 12 * 1 + 2 + 4 + 3);
    int attention_layers = 0;
    for (int i = 0; i < net.num_layers(); ++i) {
        const auto& l = net.layer((std::size_t)i);
        if (!l.heads.empty()) {
            ++attention_layers;
            CHECK(l.heads.size() == 4 * 8u);
        }
        CHECK(l.max_weight_norm() <= net.weight_bound());
    }
    CHECK(attention_layers == net.gd().K_aux * net.gd().K + 1 + 3 * (net.gd().K - 1));

    ConditionalGaussian cond(spec, m);
    auto qs = truncated_queries(spec, m, sch, 5, 8);
    for (const auto& q : qs) {
        auto cfg = net.gd();
        cfg.eta = major_step_size(spectral_summary(cond, default_c_data(spec)), q.t);
        NestedGdOptions opt;
        opt.record_aux = true;
        auto gd = nested_gd_score(cond, q, cfg, opt);
        const double a = DiffusionSchedule::alpha(q.t), a2 = DiffusionSchedule::alpha2(q.t);
        const auto& L = net.layout();
        int step = 0, aux_j = 0;
        double worst = 0;
        auto slot_obs = [&](const MatrixXd& Y, int slot) {
            VectorXd v(cond.m_obs());
            for (std::size_t i = 0; i < m.obs().size(); ++i) v(i) = Y(slot, m.obs()[i]);
            return v;
        };
        auto slot_miss = [&](const MatrixXd& Y, int slot) {
            VectorXd v(cond.m_miss());
            for (std::size_t i = 0; i < m.miss().size(); ++i) v(i) = Y(slot, m.miss()[i]);
            return v;
        };
        net.forward(q, [&](std::size_t, const std::string& tag, const MatrixXd& Y) {
            if (tag == "aux") {
                ++aux_j;
                // first step runs on eta*alpha*x_obs, later steps on eta*alpha^2*Sigma_cor s
                VectorXd want = step == 0 ? VectorXd(cfg.eta * a * gd.mu_aux[(std::size_t)aux_j])
                                          : VectorXd(cfg.eta * a2 * gd.aux[(std::size_t)step][(std::size_t)aux_j]);
                worst = std::max(worst, (slot_obs(Y, L.U) - want).cwiseAbs().maxCoeff());
            } else if (tag == "first.cort" || tag == "step.miss") {
                ++step;
                aux_j = 0;
                worst = std::max(worst, (slot_miss(Y, L.S) - gd.iterates[(std::size_t)step]).cwiseAbs().maxCoeff());
            }
        });
        CHECK(step == cfg.K);
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("network output is clipped and rejects foreign masks") {
    auto spec = sinus_spec(6, 1, 2.0);
    Mask m = Mask::from_missing(6, {4, 5});
    DiffusionSchedule sch{1e-2, 10};
    auto net = std::make_shared<UnrolledTransformer>(build_unrolled_transformer(spec, m, sch, 1e-1));
    ScoreQuery wild{VectorXd::Constant(2, 1e6), VectorXd::Constant(4, -1e6), 0.02};
    CHECK(net->forward(wild).norm() <= net->clip_radius(0.02) * (1 + 1e-12));
    UnrolledScoreFn fn(net);
    CHECK_THROWS(fn.bind({Mask::from_missing(6, {0, 1}), VectorXd::Zero(4)}));
    CHECK_THROWS(net->forward({VectorXd::Zero(3), VectorXd::Zero(3), 1.0}));
    GpSpec lin = spec;
    lin.embedding = {};
    CHECK_THROWS_WITH(build_unrolled_transformer(lin, m, sch, 1e-1), doctest::Contains("sinusoidal"));
}

TEST_CASE("output does not depend on the embedding phase") {
    auto spec = sinus_spec(7, 1, 3.0);
    auto shifted = spec;
    shifted.embedding.phase = 2.5;
    Mask m = Mask::from_missing(7, {1, 2});
    DiffusionSchedule sch{1e-2, 10};
    auto a = build_unrolled_transformer(spec, m, sch, 1e-1);
    auto b = build_unrolled_transformer(shifted, m, sch, 1e-1);
    for (const auto& q : truncated_queries(spec, m, sch, 5, 3))
        CHECK((a.forward(q) - b.forward(q)).norm() < 1e-9 * (1 + a.forward(q).norm()));
}

TEST_CASE("relu products stay inside the error ledger") {
    auto spec = sinus_spec(6, 1, 2.0);
    Mask m = Mask::from_missing(6, {2, 3});
    DiffusionSchedule sch{5e-2, 10};
    const double eps = 1e-1;
    auto ideal = build_unrolled_transformer(spec, m, sch, eps);
    UnrolledBuildOptions o;
    o.mode = MultMode::relu;
    auto relu = build_unrolled_transformer(spec, m, sch, eps, o);
    MESSAGE("relu eps_mult=" << relu.eps_mult() << " L=" << relu.num_layers());
    for (int i = 0; i < relu.num_layers(); ++i) CHECK(relu.layer((std::size_t)i).max_weight_norm() <= relu.weight_bound());
    auto cond = std::make_shared<ConditionalGaussian>(spec, m);
    ExactScore es(cond, sch);
    UnrolledTransformer ideal_same = build_unrolled_transformer(spec, m, sch, eps / 2);
    for (const auto& q : truncated_queries(spec, m, sch, 20, 12)) {
        VectorXd r = relu.forward(q);
        CHECK((r - ideal_same.forward(q)).norm() <= relu.relu_ledger(q.t));
        CHECK((r - es(q)).norm() <= eps / DiffusionSchedule::sigma(q.t));
    }
    o.eps_mult = 10.0;
    CHECK_THROWS_AS(build_unrolled_transformer(spec, m, sch, eps, o), BudgetError);
}

TEST_CASE("bisimulation report on a two-channel instance") {
    auto spec = sinus_spec(6, 2, 2.5);
    Mask m = Mask::from_missing(6, {1, 4});
    DiffusionSchedule sch{5e-2, 10};
    auto net = build_unrolled_transformer(spec, m, sch, 1e-1);
    for (const auto& q : truncated_queries(spec, m, sch, 3, 21)) {
        auto rep = bisimulate(net, q);
        CHECK(rep.major_steps == net.gd().K);
        CHECK(rep.aux_steps == net.gd().K * net.gd().K_aux);
        CHECK(rep.max_dev <= 1e-9);
        CHECK((rep.output - rep.gd_output).norm() <= 1e-9 * (1 + rep.gd_output.norm()));
    }
}
