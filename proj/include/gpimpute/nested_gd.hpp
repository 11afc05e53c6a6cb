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
#include <cstdint>
#include <functional>
#include <vector>

#include "gpimpute/gp_model.hpp"
#include "gpimpute/score_exact.hpp"

namespace gpimpute {

struct NestedGdConfig {
    int K = 1;
    int K_aux = 1;
    double eta = 1.0;    // 2 / (lmin + lmax) of a^2 Sigma_cond + s^2 I
    double theta = 1.0;  // 2 / (lmin + lmax) of Sigma_obs
    double eps = 1e-2;
    double t = 1.0;

    // quantities the counts were derived from
    double kappa_t = 1.0;
    double kappa_obs = 1.0;
    double eps0 = 0.0;       // auxiliary accuracy
    double xi_budget = 0.0;  // allowed per-step perturbation
    double score_bound = 0.0;
};

// Extreme eigenvalues reused across t.
struct SpectralSummary {
    double cond_min = 0, cond_max = 0;  // Sigma_cond
    double obs_min = 0, obs_max = 0;    // Sigma_obs
    double cor_norm = 0;                // ||Sigma_cor||_2
    double c_sigma = 0;
    double c_data = 0;
};
SpectralSummary spectral_summary(const ConditionalGaussian& cond, double c_data);
double c_data_of(const ConditionalGaussian& cond);

double major_step_size(const SpectralSummary& s, double t);

NestedGdConfig recommend_iterations(const ConditionalGaussian& cond, const DiffusionSchedule& sch, double t,
                                    double eps);
NestedGdConfig recommend_iterations(const SpectralSummary& s, const DiffusionSchedule& sch, double t, double eps);

struct NestedGdOptions {
    bool exact_aux = false;    // replace both auxiliary loops by direct solves
    bool record_aux = false;   // keep every auxiliary iterate
    const ExactScore* oracle = nullptr;
    // added to s after every major step
    std::function<VectorXd(int k)> perturbation;
};

struct NestedGdResult {
    VectorXd s;
    std::vector<VectorXd> iterates;         // s^(0..K)
    std::vector<double> residual;           // ||grad L_t(s^(k))||
    std::vector<double> error_to_oracle;    // ||s^(k) - exact||, empty without oracle
    std::vector<double> xi_norm;            // ||s^(k+1) - exact GD step from s^(k)||
    std::vector<VectorXd> mu_aux;           // u iterates of the conditional-mean loop
    std::vector<std::vector<VectorXd>> aux; // per major step
    bool in_truncation_region = true;
};

// Draws (x, t, v_t) from the data law with log-uniform t and keeps queries inside the truncation region.
std::vector<ScoreQuery> draw_truncated_queries(const GpSpec& spec, const Mask& mask, const DiffusionSchedule& sch,
                                               int n, std::uint64_t seed);

NestedGdResult nested_gd_score(const ConditionalGaussian& cond, const ScoreQuery& q, const NestedGdConfig& cfg,
                               const NestedGdOptions& opt = {});

}  // namespace gpimpute
