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
#include <random>

#include "doctest.h"
#include "gpimpute/gp_model.hpp"
#include "gpimpute/linalg.hpp"

using namespace gpimpute;

namespace {

GpSpec make_spec(int H, int d, KernelSpec::Kind k, double ell, const MatrixXd& lam) {
    GpSpec s;
    s.H = H;
    s.d = d;
    s.kernel = {k, ell};
    s.Lambda = lam;
    return s;
}

MatrixXd random_spd(int n, std::mt19937_64& g) {
    std::normal_distribution<double> N;
    MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = N(g);
    return A * A.transpose() + 0.5 * MatrixXd::Identity(n, n);
}

// conditional law read off the joint precision matrix
void precision_oracle(const MatrixXd& S, const VectorXd& mu, const std::vector<int>& obs,
                      const std::vector<int>& miss, const VectorXd& x_obs, MatrixXd& cov, VectorXd& mean) {
    MatrixXd P = S.inverse();
    Eigen::VectorXi o = Eigen::Map<const Eigen::VectorXi>(obs.data(), (Eigen::Index)obs.size());
    Eigen::VectorXi m = Eigen::Map<const Eigen::VectorXi>(miss.data(), (Eigen::Index)miss.size());
    MatrixXd Pmm = P(m, m);
    cov = Pmm.inverse();
    mean = VectorXd(mu(m)) - cov * P(m, o) * (x_obs - VectorXd(mu(o)));
}

}  // namespace

TEST_CASE("rbf gram on two frames") {
    MatrixXd G = build_temporal_gram({KernelSpec::Kind::rbf, 1.0}, {}, 2);
    CHECK(G(0, 0) == doctest::Approx(1.0));
    CHECK(G(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    CHECK(G(1, 0) == G(0, 1));
}

TEST_CASE("laplace gram corner entry") {
    MatrixXd G = build_temporal_gram({KernelSpec::Kind::laplace, 128.0}, {}, 96);
    CHECK(std::abs(G(0, 95) - std::exp(-95.0 / 128.0)) < 1e-15);
    CHECK((G - G.transpose()).norm() == 0.0);
    CHECK((G.diagonal().array() == 1.0).all());
}

TEST_CASE("huge lengthscale degenerates to the constant kernel") {
    MatrixXd G = (MatrixXd::Ones(5, 5).array() * 0.0).matrix();
    KernelSpec k{KernelSpec::Kind::rbf, 1e9};
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) G(i, j) = k(std::abs(i - j));
    CHECK((G - MatrixXd::Ones(5, 5)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_WITH_AS(build_temporal_gram(k, {}, 5), doctest::Contains("gram not positive definite"),
                         std::domain_error);
}

TEST_CASE("matern kernels are one at zero and decreasing") {
    for (auto kind : {KernelSpec::Kind::matern_3_2, KernelSpec::Kind::matern_5_2, KernelSpec::Kind::rbf,
                      KernelSpec::Kind::laplace}) {
        KernelSpec k{kind, 2.0};
        CHECK(k(0.0) == doctest::Approx(1.0));
        for (int m = 0; m < 10; ++m) CHECK(k(m + 1.0) < k(m));
    }
    KernelSpec m32{KernelSpec::Kind::matern_3_2, 2.0};
    CHECK(m32(1.0) == doctest::Approx((1 + std::sqrt(3.0) / 2) * std::exp(-std::sqrt(3.0) / 2)));
}

TEST_CASE("sinusoidal embedding geometry") {
    EmbeddingSpec e;
    e.kind = EmbeddingSpec::Kind::sinusoidal;
    e.C = 30;
    e.r = 3.0;
    const int H = 16;
    MatrixXd X = e.coordinates(H);
    for (int i = 0; i < H; ++i) {
        CHECK(X.row(i).norm() == doctest::Approx(3.0));
        for (int j = 0; j < H; ++j) CHECK((X.row(i) - X.row(j)).norm() == doctest::Approx(e.f(std::abs(i - j))));
    }
    CHECK(e.delta(H) > 0.0);
    e.C = 10;  // f stops increasing past C/2
    CHECK_THROWS(e.validate(H));
}

TEST_CASE("condition numbers") {
    CHECK(condition_number(MatrixXd::Identity(4, 4)) == doctest::Approx(1.0));
    MatrixXd D = Eigen::Vector2d(4, 1).asDiagonal();
    CHECK(condition_number(D) == doctest::Approx(4.0));
    MatrixXd N = Eigen::Vector2d(1, -1).asDiagonal();
    CHECK_THROWS_WITH(condition_number(N), doctest::Contains("not positive definite"));
}

TEST_CASE("kronecker condition number factorizes") {
    std::mt19937_64 g(3);
    MatrixXd lam = random_spd(2, g);
    auto spec = make_spec(10, 2, KernelSpec::Kind::matern_5_2, 3.0, lam);
    auto c = condition_on_observed(spec, Mask::from_missing(10, {2, 3, 7}));
    CHECK(condition_number(c.Sigma_obs()) ==
          doctest::Approx(condition_number(c.Gamma_obs()) * condition_number(lam)).epsilon(1e-10));
}

TEST_CASE("kronecker spectra are pairwise products") {
    std::mt19937_64 g(11);
    for (int trial = 0; trial < 5; ++trial) {
        MatrixXd A = random_spd(4, g), B = random_spd(3, g);
        VectorXd ka = sym_eig(A).values, kb = sym_eig(B).values;
        std::vector<double> prod;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 3; ++j) prod.push_back(ka(i) * kb(j));
        std::sort(prod.begin(), prod.end());
        VectorXd kk = sym_eig(kron(A, B)).values;
        for (int i = 0; i < 12; ++i) CHECK(std::abs(kk(i) - prod[(std::size_t)i]) < 1e-10 * (1 + prod.back()));
    }
}

TEST_CASE("independence case") {
    auto spec = make_spec(5, 2, KernelSpec::Kind::rbf, 1e-3, MatrixXd::Identity(2, 2));
    auto c = condition_on_observed(spec, Mask::from_missing(5, {1, 3}));
    CHECK((c.Sigma_cond() - MatrixXd::Identity(4, 4)).norm() < 1e-12);
    CHECK(c.mu_cond(VectorXd::Constant(6, 2.5)).norm() < 1e-12);
}

TEST_CASE("three frame brute-force conditional") {
    auto spec = make_spec(3, 1, KernelSpec::Kind::laplace, 1.0, MatrixXd::Identity(1, 1));
    Mask m = Mask::from_missing(3, {1});
    auto c = condition_on_observed(spec, m);
    MatrixXd S(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) S(i, j) = std::exp(-std::abs(i - j));
    VectorXd x(2);
    x << 0.7, -1.3;
    MatrixXd cov;
    VectorXd mean;
    precision_oracle(S, VectorXd::Zero(3), {0, 2}, {1}, x, cov, mean);
    CHECK(std::abs(c.Sigma_cond()(0, 0) - cov(0, 0)) < 1e-10);
    CHECK(std::abs(c.mu_cond(x)(0) - mean(0)) < 1e-10);
}

TEST_CASE("schur complement matches joint precision on every mask") {
    std::mt19937_64 g(5);
    std::uniform_real_distribution<double> U(0.5, 4.0);
    const KernelSpec::Kind kinds[] = {KernelSpec::Kind::rbf, KernelSpec::Kind::laplace,
                                      KernelSpec::Kind::matern_3_2, KernelSpec::Kind::matern_5_2};
    for (int H = 2; H <= 6; ++H) {
        for (int d = 1; d <= 2; ++d) {
            auto spec = make_spec(H, d, kinds[(H + d) % 4], U(g), random_spd(d, g));
            spec.mean = VectorXd::Random(H * d);
            MatrixXd S = kron(spec.gram(), spec.Lambda);
            for (int bits = 1; bits < (1 << H) - 1; ++bits) {
                std::vector<int> miss;
                for (int i = 0; i < H; ++i)
                    if (bits & (1 << i)) miss.push_back(i);
                Mask m = Mask::from_missing(H, miss);
                auto c = condition_on_observed(spec, m);
                VectorXd x = VectorXd::Random(c.m_obs());
                MatrixXd cov;
                VectorXd mean;
                precision_oracle(S, spec.mean, frame_coords(m.obs(), d), frame_coords(m.miss(), d), x, cov, mean);
                CHECK((c.Sigma_cond() - cov).cwiseAbs().maxCoeff() < 1e-9);
                CHECK((c.mu_cond(x) - mean).cwiseAbs().maxCoeff() < 1e-9);
                CHECK((c.Sigma_cond() - c.Sigma_cond().transpose()).norm() == 0.0);
                CHECK(lambda_min(c.Sigma_miss() - c.Sigma_cond()) >= -1e-10);
                CHECK((c.Sigma_obs() - kron(c.Gamma_obs(), spec.Lambda)).norm() == 0.0);
            }
        }
    }
}

TEST_CASE("degenerate masks are rejected") {
    CHECK_THROWS_WITH(Mask::from_missing(4, {}), doctest::Contains("degenerate mask"));
    CHECK_THROWS_WITH(Mask::from_missing(3, {0, 1, 2}), doctest::Contains("degenerate mask"));
}

TEST_CASE("white noise sampling variance") {
    auto spec = make_spec(4, 2, KernelSpec::Kind::rbf, 1e-3, MatrixXd::Identity(2, 2));
    const int n = 10000;
    MatrixXd X = sample_sequences(spec, n, 42);
    for (int i = 0; i < X.rows(); ++i) {
        double v = X.row(i).squaredNorm() / n;
        CHECK(std::abs(v - 1.0) < 3.0 * std::sqrt(2.0 / n));
    }
}

TEST_CASE("adjacent-frame correlation under laplace kernel") {
    auto spec = make_spec(3, 1, KernelSpec::Kind::laplace, 1.0, MatrixXd::Identity(1, 1));
    const int n = 10000;
    MatrixXd X = sample_sequences(spec, n, 7);
    VectorXd a = X.row(0).transpose().array() - X.row(0).mean();
    VectorXd b = X.row(1).transpose().array() - X.row(1).mean();
    double rho = a.dot(b) / (a.norm() * b.norm()), target = std::exp(-1.0);
    CHECK(std::abs(rho - target) < 3.0 * (1 - target * target) / std::sqrt(double(n)));
}

TEST_CASE("sample covariance matches the kronecker law") {
    std::mt19937_64 g(9);
    auto spec = make_spec(4, 2, KernelSpec::Kind::matern_3_2, 2.0, random_spd(2, g));
    spec.mean = VectorXd::LinSpaced(8, -1, 1);
    const int n = 10000;
    MatrixXd X = sample_sequences(spec, n, 1234);
    MatrixXd S = kron(spec.gram(), spec.Lambda);
    MatrixXd Xc = X.colwise() - spec.mean;
    MatrixXd C = Xc * Xc.transpose() / n;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double se = std::sqrt((S(i, i) * S(j, j) + S(i, j) * S(i, j)) / n);
            CHECK(std::abs(C(i, j) - S(i, j)) < 5.0 * se);
        }
}

TEST_CASE("sampling is deterministic in the seed") {
    auto spec = make_spec(6, 2, KernelSpec::Kind::rbf, 2.0, MatrixXd::Identity(2, 2));
    CHECK(sample_sequences(spec, 5, 77) == sample_sequences(spec, 5, 77));
    CHECK(sample_sequences(spec, 5, 77) != sample_sequences(spec, 5, 78));
}

TEST_CASE("clustered versus dispersed conditioning at H=96") {
    auto spec = make_spec(96, 1, KernelSpec::Kind::laplace, 128.0, MatrixXd::Identity(1, 1));
    std::vector<int> tail, spread;
    for (int i = 80; i < 96; ++i) tail.push_back(i);
    for (int i = 0; i < 16; ++i) spread.push_back(3 + 6 * i);
    auto ct = condition_on_observed(spec, Mask::from_missing(96, tail));
    auto cs = condition_on_observed(spec, Mask::from_missing(96, spread));
    // precision-matrix route as an independent check
    MatrixXd P = spec.gram().inverse();
    Eigen::VectorXi ti = Eigen::VectorXi::LinSpaced(16, 80, 95);
    MatrixXd Pt = P(ti, ti);
    double kt = condition_number(ct.Sigma_cond());
    CHECK(kt == doctest::Approx(condition_number(Pt)).epsilon(1e-8));
    CHECK(kt > 350.0);
    CHECK(condition_number(cs.Sigma_cond()) < 1.5);
}

TEST_CASE("spec json round trip and key errors") {
    GpSpec s = make_spec(8, 2, KernelSpec::Kind::matern_5_2, 2.5, (MatrixXd(2, 2) << 2, 0.3, 0.3, 1).finished());
    s.embedding.kind = EmbeddingSpec::Kind::sinusoidal;
    s.embedding.C = 20;
    s.embedding.r = 1.5;
    GpSpec t = gp_spec_from_json(to_json(s));
    CHECK(t.H == 8);
    CHECK(t.Lambda == s.Lambda);
    CHECK(t.embedding.C == 20);
    CHECK(t.kernel.kind == KernelSpec::Kind::matern_5_2);
    auto j = to_json(s);
    j["kernel"]["lengthscale"] = "long";
    CHECK_THROWS_WITH(gp_spec_from_json(j), doctest::Contains("gp.kernel.lengthscale"));
    j = to_json(s);
    j.erase("H");
    CHECK_THROWS_WITH(gp_spec_from_json(j), doctest::Contains("gp.H"));
}
