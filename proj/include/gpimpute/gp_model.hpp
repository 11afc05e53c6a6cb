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
#include <vector>

#include "gpimpute/masking.hpp"
#include "json.hpp"

namespace gpimpute {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct EmbeddingSpec {
    enum class Kind { linear_gap, sinusoidal };
    Kind kind = Kind::linear_gap;
    double r = 1.0;      // sinusoidal radius
    double C = 0.0;      // sinusoidal period in frames
    double phase = 0.0;  // sinusoidal index offset; leaves every pairwise distance unchanged

    // distance between frames m apart
    double f(int m) const;
    // min over m < H-1 of f(m+1)^2 - f(m)^2
    double delta(int H) const;
    int dim() const { return kind == Kind::sinusoidal ? 2 : 1; }
    // rows are e_i (sinusoidal only)
    MatrixXd coordinates(int H) const;
    void validate(int H) const;
};

struct KernelSpec {
    enum class Kind { rbf, laplace, matern_3_2, matern_5_2 };
    Kind kind = Kind::laplace;
    double lengthscale = 1.0;

    double operator()(double dist) const;
};

struct GpSpec {
    int H = 2;
    int d = 1;
    VectorXd mean;   // length H*d; empty means zero
    MatrixXd Lambda; // d x d
    KernelSpec kernel;
    EmbeddingSpec embedding;

    void validate() const;
    VectorXd mean_vector() const;
    MatrixXd gram() const;
};

MatrixXd build_temporal_gram(const KernelSpec& kernel, const EmbeddingSpec& emb, int H);

// n samples as columns of an (H d) x n matrix; frame i occupies rows [i d, (i+1) d)
MatrixXd sample_sequences(const GpSpec& spec, int n, std::uint64_t seed);

// entrywise x + exp(-x^2) + 2 sin x
double latent_phi(double x);
// Y = phi(X) + eps with eps ~ N(0, noise_var I)
MatrixXd latent_transform(const MatrixXd& X, double noise_var, std::uint64_t seed);

class ConditionalGaussian {
public:
    ConditionalGaussian(const GpSpec& spec, const Mask& mask);

    const Mask& mask() const { return mask_; }
    int d() const { return d_; }
    int m_obs() const { return static_cast<int>(mu_obs_.size()); }
    int m_miss() const { return static_cast<int>(mu_miss_.size()); }

    const MatrixXd& Sigma_obs() const { return S_obs_; }
    const MatrixXd& Sigma_miss() const { return S_miss_; }
    const MatrixXd& Sigma_cor() const { return S_cor_; }
    const MatrixXd& Sigma_cond() const { return S_cond_; }
    const MatrixXd& Gamma_obs() const { return G_obs_; }
    const MatrixXd& Gamma_miss() const { return G_miss_; }
    const MatrixXd& Gamma_cor() const { return G_cor_; }
    const MatrixXd& Lambda() const { return Lambda_; }
    const VectorXd& mu_obs() const { return mu_obs_; }
    const VectorXd& mu_miss() const { return mu_miss_; }

    VectorXd mu_cond(const VectorXd& x_obs) const;
    // Sigma_obs^{-1} b through the cached factorization
    VectorXd solve_obs(const VectorXd& b) const;

private:
    Mask mask_;
    int d_;
    MatrixXd Lambda_, G_obs_, G_miss_, G_cor_;
    MatrixXd S_obs_, S_miss_, S_cor_, S_cond_;
    VectorXd mu_obs_, mu_miss_;
    Eigen::LLT<MatrixXd> obs_llt_;
    MatrixXd gain_;  // Sigma_cor^T Sigma_obs^{-1}
};

ConditionalGaussian condition_on_observed(const GpSpec& spec, const Mask& mask);

// C_Sigma = 1 + ||Gamma_cor||_2 kappa(Lambda) / lambda_min(Gamma_obs)
double c_sigma(const ConditionalGaussian& cond);
// 2 sqrt((H d + 1)(||Lambda||_F + 1))
double default_c_data(const GpSpec& spec);

nlohmann::json to_json(const GpSpec& spec);
GpSpec gp_spec_from_json(const nlohmann::json& j, const std::string& path = "gp");
std::string kernel_name(KernelSpec::Kind k);

}  // namespace gpimpute
