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
#include <Eigen/SparseCore>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gpimpute/gp_model.hpp"
#include "gpimpute/nested_gd.hpp"
#include "gpimpute/score_exact.hpp"
#include "json.hpp"

namespace gpimpute {

using SpMat = Eigen::SparseMatrix<double>;

// Column a of Y feeds column i with weight relu((Q y_a)^T (K y_i)).
struct AttentionHead {
    SpMat Q, K, V;
};

// y + W1 relu(W2 y + b2) + b1
struct FeedForward {
    SpMat W1, W2;
    VectorXd b1, b2;
};

// idealized product: y[dst + c] += y[w_row] * sum_k coef_k y[src_k + c], c < width
struct ExactProduct {
    int w_row = 0;
    std::vector<std::pair<int, double>> src;
    int dst = 0;
    int width = 1;
};

struct Layer {
    std::string tag;
    std::vector<AttentionHead> heads;
    bool has_ffn = false;
    FeedForward ffn;
    bool has_product = false;
    ExactProduct product;

    MatrixXd apply(const MatrixXd& Y) const;
    double max_weight_norm() const;
};

enum class MultMode { idealized, relu };

// Token rows. Slots are d wide.
struct TokenLayout {
    int d = 1, de = 2;
    int D = 0;
    int X = 0, E = 0, PHI = 0, FLAG = 0, XO = 0;
    int S = 0, U = 0, BV = 0, R = 0, MU = 0, EB = 0, P = 0, Q = 0, CT = 0, MS = 0;
    static TokenLayout make(int d, int de);
    nlohmann::json to_json() const;
};

struct UnrolledBuildOptions {
    MultMode mode = MultMode::idealized;
    double eps_mult = 0.0;  // 0 selects the default allocation
};

// Scalar product network built from square-trick ReLU layers, on |w| <= Bw, |x| <= Bx.
class ReluMultiplier {
public:
    ReluMultiplier(double Bw, double Bx, double eps_mult);
    double operator()(double w, double x) const;
    int depth() const { return static_cast<int>(layers_.size()); }
    double error_bound() const { return bound_; }
    static int required_depth(double Bw, double Bx, double eps_mult);

private:
    std::vector<Layer> layers_;
    double bound_;
};

class UnrolledTransformer {
public:
    using Observer = std::function<void(std::size_t layer, const std::string& tag, const MatrixXd& Y)>;

    const TokenLayout& layout() const { return lay_; }
    int H() const { return H_; }
    int num_layers() const { return static_cast<int>(layers_.size()); }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }
    const NestedGdConfig& gd() const { return gd_; }
    MultMode mode() const { return mode_; }
    double eps_mult() const { return eps_mult_; }
    double weight_bound() const { return B_; }
    double delta() const { return delta_; }
    double schedule_t0() const { return sch_.t0; }
    const Mask& mask() const { return cond_->mask(); }
    const ConditionalGaussian& cond() const { return *cond_; }
    // the nested GD configuration the layers transcribe at time t
    NestedGdConfig gd_at(double t) const;

    MatrixXd encode(const ScoreQuery& q) const;
    VectorXd decode(const MatrixXd& Y, double t) const;
    double clip_radius(double t) const;
    VectorXd forward(const ScoreQuery& q, const Observer& obs = nullptr) const;

    // bound on ||forward in relu mode - forward in idealized mode||
    double relu_ledger(double t) const;
    // reference scale sqrt(H d^3) (r^2 + kappa(Sigma_obs) / sigma_t0)
    double reference_scale() const;

    nlohmann::json metadata() const;

    friend UnrolledTransformer build_unrolled_transformer(const GpSpec&, const Mask&, const DiffusionSchedule&,
                                                          double, const UnrolledBuildOptions&);

private:
    int H_ = 0;
    TokenLayout lay_;
    std::shared_ptr<const ConditionalGaussian> cond_;
    SpectralSummary spec_sum_;
    DiffusionSchedule sch_;
    NestedGdConfig gd_;
    MultMode mode_ = MultMode::idealized;
    double eps_mult_ = 0.0;
    double B_ = 0.0;
    double delta_ = 0.0;
    double r_ = 0.0;
    MatrixXd emb_;
    std::vector<std::shared_ptr<const Layer>> layers_;
    // linear aux map (I - (I - theta Sigma_obs)^K_aux) Sigma_obs^{-1}, kept for the ledger
    double aux_norm_ = 0.0;
    MatrixXd LP_;
};

UnrolledTransformer build_unrolled_transformer(const GpSpec& spec, const Mask& mask, const DiffusionSchedule& sch,
                                               double eps, const UnrolledBuildOptions& opt = {});

struct BudgetError : std::runtime_error {
    BudgetError(const std::string& what, int depth) : std::runtime_error(what), required_depth(depth) {}
    int required_depth;
};

// Runs the network and nested GD side by side; max_dev is the largest entrywise gap between the
// network's S and U buffers and the corresponding GD iterates.
struct BisimulationReport {
    int major_steps = 0;
    int aux_steps = 0;
    double max_dev = 0.0;
    VectorXd output;
    VectorXd gd_output;
};
BisimulationReport bisimulate(const UnrolledTransformer& net, const ScoreQuery& q);

// Trapezoid 1{|u| <= Delta/8} ramping to 0 at |u| = Delta/4, as four ReLUs.
double trapezoid(double u, double Delta);

// ScoreFn adapter; bind() refuses contexts with a different mask.
class UnrolledScoreFn : public ScoreFn {
public:
    explicit UnrolledScoreFn(std::shared_ptr<const UnrolledTransformer> net) : net_(std::move(net)) {}
    BoundScore bind(const ObservedContext& ctx) const override;
    std::string name() const override { return "unrolled"; }

private:
    std::shared_ptr<const UnrolledTransformer> net_;
};

}  // namespace gpimpute
