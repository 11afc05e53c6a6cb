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
#include <stdexcept>
#include <vector>

#include "gpimpute/rng.hpp"
#include "gpimpute/score_exact.hpp"
#include "gpimpute/score_fn.hpp"
#include "json.hpp"

namespace gpimpute {

enum class TimeGrid { uniform, geometric };

struct SamplerConfig {
    DiffusionSchedule schedule;
    int n_steps = 500;
    TimeGrid grid = TimeGrid::uniform;
    std::uint64_t seed = 0;

    void validate() const;
    // ascending t_0 = t0 < ... < t_n = T
    std::vector<double> time_grid() const;
};

struct SamplerError : std::runtime_error {
    SamplerError(int step, int sample, const std::string& what)
        : std::runtime_error(what), step(step), sample(sample) {}
    int step;
    int sample;  // first offending chain, -1 if not applicable
};

// v_t = alpha_t x + sigma_t z
Eigen::VectorXd forward_corrupt(const Eigen::VectorXd& x_miss, double t, std::uint64_t seed);
Eigen::MatrixXd forward_corrupt(const Eigen::MatrixXd& x_miss, double t, Rng& rng);

// Euler-Maruyama on the reverse SDE from N(0, I) at T down to t0.
// Columns of the result are independent chains.
Eigen::MatrixXd backward_sample(const BoundScore& score, int dim, const SamplerConfig& cfg, int batch = 1);
Eigen::MatrixXd backward_sample(const ScoreFn& score, const ObservedContext& ctx, int d,
                                const SamplerConfig& cfg, int batch = 1);

// max(1e-4, lambda_min(Sigma_cond) / sqrt(n))
double default_t0(double lambda_min_cond, double n);

nlohmann::json to_json(const SamplerConfig& cfg);
SamplerConfig sampler_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace gpimpute
