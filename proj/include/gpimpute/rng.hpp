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
#include <random>

namespace gpimpute {

// splitmix64 finalizer; used to derive independent per-trial streams.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double normal() { return norm_(eng_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
    // inclusive bounds
    long uniform_int(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(eng_); }

    Eigen::VectorXd normal_vector(Eigen::Index n);
    Eigen::MatrixXd normal_matrix(Eigen::Index r, Eigen::Index c);

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> norm_{0.0, 1.0};
};

}  // namespace gpimpute
