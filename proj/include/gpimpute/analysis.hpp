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
#include <string>
#include <utility>
#include <vector>

#include "gpimpute/gp_model.hpp"
#include "gpimpute/masking.hpp"
#include "gpimpute/score_exact.hpp"
#include "gpimpute/score_fn.hpp"

namespace gpimpute {

// KL(N(mu1, S1) || N(mu2, S2))
double gaussian_kl(const VectorXd& mu1, const MatrixXd& S1, const VectorXd& mu2, const MatrixXd& S2);
// Pinsker: TV <= sqrt(KL / 2)
double pinsker_tv_bound(double kl);

struct PatternRow {
    std::string name;
    int draws = 0;
    double kappa_cond = 0.0;  // averages over draws
    double kappa_obs = 0.0;
    double lambda_min_cond = 0.0;
};

// fixed placements are evaluated once, random ones averaged over `draws` masks
std::vector<PatternRow> pattern_report(const GpSpec& spec,
                                       const std::vector<std::pair<std::string, BlockStrategy>>& patterns,
                                       int draws, std::uint64_t seed);

double psi_diagnostic(const ConditionalGaussian& cond, const VectorXd& x_obs);

enum class DsLoss { denoising, score_error };

struct DsConfig {
    int n_ref = 2000;   // reference draws, one loss sample each
    int n_inner = 200;  // loss samples per test point
    DsLoss loss = DsLoss::denoising;
    DiffusionSchedule schedule;
    std::uint64_t seed = 0;
};

struct ShiftEstimate {
    std::vector<std::string> names;
    VectorXd ref_loss;     // per candidate
    MatrixXd test_loss;    // test point x candidate
    MatrixXd ratio;        // test point x candidate
    VectorXd point_ds;     // max over candidates, per test point
    double ds = 0.0;       // average of point_ds
};

std::vector<ObservedContext> draw_test_points(const GpSpec& spec, const MixedStrategy& pattern, int count,
                                              std::uint64_t seed);

// Losses for every candidate share the same random draws, so adding candidates never lowers the estimate.
ShiftEstimate ds_estimate(const GpSpec& spec, const MixedStrategy& reference,
                          const std::vector<ObservedContext>& test_points,
                          const std::vector<const ScoreFn*>& candidates, const DsConfig& cfg);

}  // namespace gpimpute
