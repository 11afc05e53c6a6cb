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
#pragma once

#include <Eigen/Dense>
#include <memory>

#include "gpimpute/gp_model.hpp"
#include "gpimpute/score_fn.hpp"

namespace gpimpute {

struct DiffusionSchedule {
    double t0 = 1e-3;
    double T = 10.0;

    static double alpha(double t) { return std::exp(-0.5 * t); }
    static double alpha2(double t) { return std::exp(-t); }
    static double sigma2(double t) { return -std::expm1(-t); }
    static double sigma(double t) { return std::sqrt(sigma2(t)); }
    void validate() const;
};

struct ScoreQuery {
    VectorXd v_t;
    VectorXd x_obs;
    double t = 1.0;
};

bool in_truncation_region(const ScoreQuery& q, double c_data);

// Closed-form conditional score with one cached eigendecomposition of Sigma_cond.
class ExactScore {
public:
    ExactScore(std::shared_ptr<const ConditionalGaussian> cond, DiffusionSchedule schedule);

    VectorXd operator()(const ScoreQuery& q) const;
    // columns of v share x_obs and t
    MatrixXd batch(const MatrixXd& v, const VectorXd& x_obs, double t) const;
    // same, with mu_cond(x_obs) precomputed
    MatrixXd batch_mu(const MatrixXd& v, const VectorXd& mu_cond, double t) const;

    const ConditionalGaussian& cond() const { return *cond_; }
    const DiffusionSchedule& schedule() const { return sch_; }
    const VectorXd& cond_eigenvalues() const { return eval_; }

private:
    void check_t(double t) const;
    std::shared_ptr<const ConditionalGaussian> cond_;
    DiffusionSchedule sch_;
    VectorXd eval_;
    MatrixXd evec_;
};

VectorXd exact_score(const ConditionalGaussian& cond, const ScoreQuery& q, const DiffusionSchedule& sch);

struct ObjectiveValue {
    double value = 0.0;
    VectorXd gradient;
};

// L_t(s) = 1/2 s^T (a^2 Sigma_cond + s^2 I) s + s^T (v - a mu_cond)
ObjectiveValue major_objective(const ConditionalGaussian& cond, const ScoreQuery& q, const VectorXd& s);
// 1/2 u^T Sigma_obs u - u^T Sigma_cor s
ObjectiveValue aux_objective(const ConditionalGaussian& cond, const VectorXd& s, const VectorXd& u);

class ExactScoreFn : public ScoreFn {
public:
    ExactScoreFn(GpSpec spec, DiffusionSchedule schedule) : spec_(std::move(spec)), sch_(schedule) {}
    BoundScore bind(const ObservedContext& ctx) const override;
    std::string name() const override { return "exact"; }
    const GpSpec& spec() const { return spec_; }

private:
    GpSpec spec_;
    DiffusionSchedule sch_;
};

}  // namespace gpimpute
