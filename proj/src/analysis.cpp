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
#include "gpimpute/analysis.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "gpimpute/linalg.hpp"
#include "gpimpute/rng.hpp"

namespace gpimpute {

namespace {

Eigen::LLT<MatrixXd> pd_factor(const MatrixXd& S, const char* what) {
    Eigen::LLT<MatrixXd> llt(symmetrize(S));
    if (llt.info() != Eigen::Success) throw std::domain_error(std::string(what) + " not positive definite");
    return llt;
}

double logdet(const Eigen::LLT<MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

double gaussian_kl(const VectorXd& mu1, const MatrixXd& S1, const VectorXd& mu2, const MatrixXd& S2) {
    const Eigen::Index k = mu1.size();
    if (mu2.size() != k || S1.rows() != k || S1.cols() != k || S2.rows() != k || S2.cols() != k)
        throw std::invalid_argument("gaussian_kl: dimension mismatch");
    auto l1 = pd_factor(S1, "first covariance");
    auto l2 = pd_factor(S2, "second covariance");
    VectorXd dm = mu2 - mu1;
    double tr = l2.solve(S1).trace();
    double quad = dm.dot(l2.solve(dm));
    double kl = 0.5 * (tr + quad - static_cast<double>(k) + logdet(l2) - logdet(l1));
    return std::max(kl, 0.0);
}

double pinsker_tv_bound(double kl) {
    if (!(kl >= 0.0)) throw std::invalid_argument("KL must be non-negative");
    return std::sqrt(0.5 * kl);
}

std::vector<PatternRow> pattern_report(const GpSpec& spec,
                                       const std::vector<std::pair<std::string, BlockStrategy>>& patterns,
                                       int draws, std::uint64_t seed) {
    if (draws < 1) throw std::invalid_argument("pattern_report needs draws >= 1");
    std::vector<PatternRow> out;
    for (std::size_t p = 0; p < patterns.size(); ++p) {
        const auto& [name, blk] = patterns[p];
        blk.validate(spec.H);
        PatternRow row;
        row.name = name;
        row.draws = blk.placement == Placement::uniform ? draws : 1;
        for (int k = 0; k < row.draws; ++k) {
            Mask m = sample_mask(blk, spec.H, mix_seed(mix_seed(seed, p), static_cast<std::uint64_t>(k)));
            ConditionalGaussian c(spec, m);
            row.kappa_cond += condition_number(c.Sigma_cond());
            row.kappa_obs += condition_number(c.Sigma_obs());
            row.lambda_min_cond += lambda_min(c.Sigma_cond());
        }
        row.kappa_cond /= row.draws;
        row.kappa_obs /= row.draws;
        row.lambda_min_cond /= row.draws;
        out.push_back(row);
    }
    return out;
}

double psi_diagnostic(const ConditionalGaussian& cond, const VectorXd& x_obs) {
    if (x_obs.size() != cond.m_obs()) throw std::invalid_argument("x_obs length does not match mask");
    const MatrixXd& C = cond.Sigma_cor();  // obs x miss
    VectorXd w = C.transpose() * (inv_sqrt_spd(cond.Sigma_obs()) * x_obs);
    auto lc = pd_factor(cond.Sigma_cond(), "conditional covariance");
    double first = lambda_min(cond.Sigma_cond()) * w.dot(lc.solve(w));
    double second = (C.transpose() * cond.solve_obs(x_obs)).squaredNorm();
    return std::sqrt(std::max({first, second, 0.0}));
}

std::vector<ObservedContext> draw_test_points(const GpSpec& spec, const MixedStrategy& pattern, int count,
                                              std::uint64_t seed) {
    pattern.validate(spec.H);
    MatrixXd X = sample_sequences(spec, count, mix_seed(seed, 0));
    std::vector<ObservedContext> out;
    for (int i = 0; i < count; ++i) {
        Mask m = sample_mask(pattern, spec.H, mix_seed(seed, 1 + static_cast<std::uint64_t>(i)));
        out.push_back({m, apply_mask(X.col(i), m, spec.d).x_obs});
    }
    return out;
}

namespace {

// t from a log-uniform proposal, reweighted to the uniform law on [t0, T]
struct TimeDraw {
    double t, w;
};

TimeDraw draw_time(Rng& rng, const DiffusionSchedule& sch) {
    const double L = std::log(sch.T / sch.t0);
    const double t = std::min(sch.T, std::max(sch.t0, sch.t0 * std::exp(rng.uniform(0.0, L))));
    return {t, t * L / (sch.T - sch.t0)};
}

class LossSampler {
public:
    LossSampler(const GpSpec& spec, const ObservedContext& ctx, const DsConfig& cfg)
        : cfg_(cfg), cond_(std::make_shared<ConditionalGaussian>(spec, ctx.mask)),
          exact_(cond_, cfg.schedule), mu_(cond_->mu_cond(ctx.x_obs)) {}

    const ConditionalGaussian& cond() const { return *cond_; }
    const VectorXd& mu() const { return mu_; }

    double operator()(const BoundScore& s, const VectorXd& x_miss, const TimeDraw& td, const VectorXd& z) const {
        const double a = DiffusionSchedule::alpha(td.t), sg = DiffusionSchedule::sigma(td.t);
        MatrixXd v = a * x_miss + sg * z;
        MatrixXd pred = s(v, td.t);
        if (cfg_.loss == DsLoss::denoising) return td.w * (pred + z / sg).squaredNorm();
        return td.w * (pred - exact_.batch_mu(v, mu_, td.t)).squaredNorm();
    }

private:
    const DsConfig& cfg_;
    std::shared_ptr<ConditionalGaussian> cond_;
    ExactScore exact_;
    VectorXd mu_;
};

}  // namespace

ShiftEstimate ds_estimate(const GpSpec& spec, const MixedStrategy& reference,
                          const std::vector<ObservedContext>& test_points,
                          const std::vector<const ScoreFn*>& candidates, const DsConfig& cfg) {
    if (candidates.empty()) throw std::invalid_argument("ds_estimate needs at least one candidate");
    if (test_points.empty()) throw std::invalid_argument("ds_estimate needs test points");
    if (cfg.n_ref < 1 || cfg.n_inner < 1) throw std::invalid_argument("ds_estimate needs positive MC budgets");
    reference.validate(spec.H);
    cfg.schedule.validate();
    const int K = static_cast<int>(candidates.size());
    const int P = static_cast<int>(test_points.size());

    ShiftEstimate out;
    for (const auto* c : candidates) out.names.push_back(c->name());
    out.ref_loss = VectorXd::Zero(K);
    MatrixXd X = sample_sequences(spec, cfg.n_ref, mix_seed(cfg.seed, 0));
    Rng rng(mix_seed(cfg.seed, 1));
    for (int j = 0; j < cfg.n_ref; ++j) {
        Mask m = sample_mask(reference, spec.H, mix_seed(cfg.seed, 2 + static_cast<std::uint64_t>(j)));
        Split sp = apply_mask(X.col(j), m, spec.d);
        ObservedContext ctx{m, sp.x_obs};
        LossSampler loss(spec, ctx, cfg);
        TimeDraw td = draw_time(rng, cfg.schedule);
        VectorXd z = rng.normal_vector(sp.x_miss.size());
        for (int k = 0; k < K; ++k) out.ref_loss(k) += loss(candidates[k]->bind(ctx), sp.x_miss, td, z);
    }
    out.ref_loss /= cfg.n_ref;
    for (int k = 0; k < K; ++k)
        if (!(out.ref_loss(k) > 0.0)) throw std::runtime_error("degenerate candidate '" + out.names[k] + "'");

    out.test_loss = MatrixXd::Zero(P, K);
    for (int i = 0; i < P; ++i) {
        const auto& ctx = test_points[i];
        LossSampler loss(spec, ctx, cfg);
        Eigen::LLT<MatrixXd> L = pd_factor(loss.cond().Sigma_cond(), "conditional covariance");
        std::vector<BoundScore> bound;
        for (const auto* c : candidates) bound.push_back(c->bind(ctx));
        Rng r(mix_seed(mix_seed(cfg.seed, 3), static_cast<std::uint64_t>(i)));
        for (int j = 0; j < cfg.n_inner; ++j) {
            VectorXd x_miss = loss.mu() + L.matrixL() * r.normal_vector(loss.mu().size());
            TimeDraw td = draw_time(r, cfg.schedule);
            VectorXd z = r.normal_vector(loss.mu().size());
            for (int k = 0; k < K; ++k) out.test_loss(i, k) += loss(bound[k], x_miss, td, z);
        }
    }
    out.test_loss /= cfg.n_inner;
    out.ratio = out.test_loss.array().rowwise() / out.ref_loss.transpose().array();
    out.point_ds = out.ratio.rowwise().maxCoeff();
    out.ds = out.point_ds.mean();
    return out;
}

}  // namespace gpimpute
