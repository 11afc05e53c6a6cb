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
#include "gpimpute/nested_gd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "gpimpute/linalg.hpp"
#include "gpimpute/rng.hpp"

namespace gpimpute {

double c_data_of(const ConditionalGaussian& cond) {
    const int H = cond.mask().H(), d = cond.d();
    return 2.0 * std::sqrt((H * d + 1.0) * (cond.Lambda().norm() + 1.0));
}

SpectralSummary spectral_summary(const ConditionalGaussian& cond, double c_data) {
    SpectralSummary s;
    VectorXd ec = sym_eig(cond.Sigma_cond()).values, eo = sym_eig(cond.Sigma_obs()).values;
    s.cond_min = ec(0);
    s.cond_max = ec(ec.size() - 1);
    s.obs_min = eo(0);
    s.obs_max = eo(eo.size() - 1);
    s.cor_norm = spectral_norm(cond.Sigma_cor());
    s.c_sigma = c_sigma(cond);
    s.c_data = c_data + cond.mu_obs().norm();
    return s;
}

double major_step_size(const SpectralSummary& s, double t) {
    const double a2 = DiffusionSchedule::alpha2(t), s2 = DiffusionSchedule::sigma2(t);
    return 2.0 / (a2 * (s.cond_min + s.cond_max) + 2.0 * s2);
}

namespace {

int contraction_count(double kappa, double ratio) {
    if (kappa - 1.0 < 1e-12) return 1;
    if (ratio <= 1.0) return 1;
    return std::max(1, static_cast<int>(std::ceil(0.5 * (kappa + 1.0) * std::log(ratio))));
}

}  // namespace

NestedGdConfig recommend_iterations(const SpectralSummary& s, const DiffusionSchedule& sch, double t, double eps) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("recommend_iterations: eps must lie in (0,1)");
    if (t < sch.t0) throw std::domain_error("below early-stop time");
    const double a2 = DiffusionSchedule::alpha2(t), s2 = DiffusionSchedule::sigma2(t);
    NestedGdConfig c;
    c.t = t;
    c.eps = eps;
    const double lmin = a2 * s.cond_min + s2, lmax = a2 * s.cond_max + s2;
    c.kappa_t = lmax / lmin;
    c.eta = 2.0 / (lmin + lmax);
    c.kappa_obs = s.obs_max / s.obs_min;
    c.theta = 2.0 / (s.obs_min + s.obs_max);

    const double target = eps / std::sqrt(s2);
    c.score_bound = s.c_sigma * s.c_data / s2;
    // half of the target goes to the unperturbed contraction, half to the perturbations
    c.K = contraction_count(c.kappa_t, 2.0 * c.score_bound / target);
    c.xi_budget = target / (c.kappa_t + 1.0);
    if (s.cor_norm == 0.0) {
        c.K_aux = 0;
        c.eps0 = std::numeric_limits<double>::infinity();
        return c;
    }
    c.eps0 = c.xi_budget / (c.eta * (a2 + 1.0) * s.cor_norm);
    const double b_bound = std::max(s.cor_norm * (2.0 * c.score_bound + target), s.c_data);
    c.K_aux = contraction_count(c.kappa_obs, b_bound / (s.obs_min * c.eps0));
    return c;
}

NestedGdConfig recommend_iterations(const ConditionalGaussian& cond, const DiffusionSchedule& sch, double t,
                                    double eps) {
    return recommend_iterations(spectral_summary(cond, c_data_of(cond)), sch, t, eps);
}

NestedGdResult nested_gd_score(const ConditionalGaussian& cond, const ScoreQuery& q, const NestedGdConfig& cfg,
                               const NestedGdOptions& opt) {
    if (q.v_t.size() != cond.m_miss() || q.x_obs.size() != cond.m_obs())
        throw std::invalid_argument("nested_gd_score: dimension mismatch");
    if (cfg.K < 1 || cfg.K_aux < 0) throw std::invalid_argument("nested_gd_score: bad iteration counts");
    const double a = DiffusionSchedule::alpha(q.t), a2 = DiffusionSchedule::alpha2(q.t),
                 s2 = DiffusionSchedule::sigma2(q.t);
    const MatrixXd& So = cond.Sigma_obs();
    const MatrixXd& Sc = cond.Sigma_cor();
    const MatrixXd& Sm = cond.Sigma_miss();

    NestedGdResult out;
    out.in_truncation_region = in_truncation_region(q, c_data_of(cond));

    auto aux_loop = [&](const VectorXd& b, std::vector<VectorXd>* trace) {
        if (opt.exact_aux) return VectorXd(cond.solve_obs(b));
        VectorXd u = VectorXd::Zero(b.size());
        if (trace) trace->push_back(u);
        for (int j = 0; j < cfg.K_aux; ++j) {
            u -= cfg.theta * (So * u - b);
            if (trace) trace->push_back(u);
        }
        return u;
    };

    const VectorXd u_mu = aux_loop(q.x_obs - cond.mu_obs(), opt.record_aux ? &out.mu_aux : nullptr);
    const VectorXd mu_hat = cond.mu_miss() + Sc.transpose() * u_mu;
    const VectorXd c = q.v_t - a * mu_hat;

    VectorXd s = VectorXd::Zero(cond.m_miss());
    out.iterates.push_back(s);
    ScoreQuery exact_q = q;
    auto record = [&](const VectorXd& cur) {
        out.residual.push_back(major_objective(cond, exact_q, cur).gradient.norm());
        if (opt.oracle) out.error_to_oracle.push_back((cur - (*opt.oracle)(q)).norm());
    };
    record(s);
    for (int k = 0; k < cfg.K; ++k) {
        std::vector<VectorXd>* trace = nullptr;
        if (opt.record_aux) {
            out.aux.emplace_back();
            trace = &out.aux.back();
        }
        const VectorXd u = aux_loop(Sc * s, trace);
        const VectorXd grad = s2 * s + a2 * (Sm * s) - a2 * (Sc.transpose() * u) + c;
        VectorXd next = s - cfg.eta * grad;
        if (opt.perturbation) next += opt.perturbation(k);
        out.xi_norm.push_back((next - (s - cfg.eta * major_objective(cond, exact_q, s).gradient)).norm());
        s = std::move(next);
        out.iterates.push_back(s);
        record(s);
    }
    out.s = s;
    return out;
}

std::vector<ScoreQuery> draw_truncated_queries(const GpSpec& spec, const Mask& mask, const DiffusionSchedule& sch,
                                               int n, std::uint64_t seed) {
    sch.validate();
    const double cdata = default_c_data(spec);
    Rng rng(mix_seed(seed, 1));
    std::vector<ScoreQuery> out;
    for (int batch = 0; static_cast<int>(out.size()) < n; ++batch) {
        if (batch > 64) throw std::runtime_error("truncation region rejects almost every draw");
        MatrixXd X = sample_sequences(spec, 4 * n, mix_seed(seed, 100 + static_cast<std::uint64_t>(batch)));
        for (Eigen::Index i = 0; i < X.cols() && static_cast<int>(out.size()) < n; ++i) {
            Split sp = apply_mask(X.col(i), mask, spec.d);
            const double t = std::exp(rng.uniform(std::log(sch.t0), std::log(sch.T)));
            VectorXd v = DiffusionSchedule::alpha(t) * sp.x_miss +
                         DiffusionSchedule::sigma(t) * rng.normal_vector(sp.x_miss.size());
            ScoreQuery q{v, sp.x_obs, t};
            if (in_truncation_region(q, cdata)) out.push_back(std::move(q));
        }
    }
    return out;
}

}  // namespace gpimpute
