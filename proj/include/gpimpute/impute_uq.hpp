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

#include "gpimpute/diffusion_sampler.hpp"
#include "gpimpute/gp_model.hpp"
#include "gpimpute/masking.hpp"
#include "gpimpute/score_fn.hpp"

namespace gpimpute {

enum class PointKind { mean, median };

struct ImputationResult {
    MatrixXd samples;  // one generated x_miss per column
    VectorXd mean;
    VectorXd median;
    PointKind point_kind = PointKind::mean;
    double radius = 0.0;  // CR radius around point()
    double alpha = 0.05;

    const VectorXd& point() const { return point_kind == PointKind::mean ? mean : median; }
    bool contains(const VectorXd& x) const { return (VectorXd(x) - point()).norm() <= radius; }
};

// Point estimates and the ceil((1 - alpha) Z)-th smallest distance to the chosen point.
ImputationResult summarize_samples(MatrixXd samples, double alpha, PointKind kind = PointKind::mean);

ImputationResult impute(const ScoreFn& score, const ObservedContext& ctx, int d, int Z, double alpha,
                        const SamplerConfig& sampler, PointKind kind = PointKind::mean);

struct EvalConfig {
    int trials = 200;
    int Z = 200;
    double alpha = 0.05;
    SamplerConfig sampler;
    PointKind point = PointKind::mean;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct CoverageResult {
    int trials = 0;
    int hits = 0;
    double coverage = 0.0;
    double stderr_ = 0.0;
};

// Per trial: draw a sequence and a mask, impute from x_obs, draw the reference x_miss from the
// exact conditional given x_obs and test membership in the CR.
CoverageResult coverage_eval(const ScoreFn& score, const GpSpec& spec, const MixedStrategy& pattern,
                             const EvalConfig& cfg);

struct MseResult {
    int trials = 0;
    double mse = 0.0;  // per coordinate, averaged over trials
    double stderr_ = 0.0;
};

// squared error of the point estimate against mu_cond(x_obs)
MseResult mse_eval(const ScoreFn& score, const GpSpec& spec, const MixedStrategy& pattern, const EvalConfig& cfg);
// data are phi(X) + noise for X from spec; error against the held-out missing values
MseResult mse_eval_latent(const ScoreFn& score, const GpSpec& spec, double noise_var, const MixedStrategy& pattern,
                          const EvalConfig& cfg);

// runs body(i) for i in [0, n) on up to `threads` workers; body must be safe to call concurrently
void parallel_for(int n, int threads, const std::function<void(int)>& body);

}  // namespace gpimpute
