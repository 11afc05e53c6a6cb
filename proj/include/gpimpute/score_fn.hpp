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
#include <functional>
#include <memory>
#include <string>

#include "gpimpute/masking.hpp"

namespace gpimpute {

struct ObservedContext {
    Mask mask;
    Eigen::VectorXd x_obs;
};

// Columns of v are diffused missing states; returns one score column per state.
using BoundScore = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& v, double t)>;

// Score contract (v_t, x_obs context, t) -> score. bind() does the per-context
// precomputation so the sampler's inner loop only pays for the state-dependent part.
class ScoreFn {
public:
    virtual ~ScoreFn() = default;
    virtual BoundScore bind(const ObservedContext& ctx) const = 0;
    virtual std::string name() const = 0;
};

}  // namespace gpimpute
