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
#include <optional>
#include <string>
#include <vector>

#include "gpimpute/gp_model.hpp"
#include "gpimpute/masking.hpp"
#include "gpimpute/score_exact.hpp"
#include "gpimpute/score_fn.hpp"
#include "json.hpp"

namespace gpimpute {

struct TrainingPair {
    Mask mask;
    VectorXd x_obs;
    VectorXd x_miss;
};
using TrainingSet = std::vector<TrainingPair>;

// n GP sequences, each with an independently drawn mask
TrainingSet make_training_set(const GpSpec& spec, const MixedStrategy& strategy, int n, std::uint64_t seed);
// columns of seqs are full sequences of H d entries
TrainingSet make_training_set(const MatrixXd& seqs, int H, int d, const MixedStrategy& strategy,
                              std::uint64_t seed);

enum class FeatureKind { affine, random_fourier };

struct FeatureConfig {
    FeatureKind kind = FeatureKind::affine;
    int F = 256;
    double bandwidth = 0.0;  // <= 0 means sqrt(H d)
};

struct TrainConfig {
    DiffusionSchedule schedule;
    int n_buckets = 16;
    int samples_per_t = 1;
    double ridge = 1e-3;  // scaled by the number of rows in each regression
    std::uint64_t seed = 0;
    FeatureConfig features;
    std::optional<double> fixed_t;  // every draw at this t instead of uniform within its bucket
};

// Piecewise-constant-in-t linear model over psi = [v_pad; y_pad; tau; 1; rff(y_pad)].
// v_pad and y_pad are length H d with zeros in the slots that belong to the other set.
class ScoreModel : public ScoreFn {
public:
    ScoreModel(int H, int d, std::vector<double> edges, FeatureConfig fc, MatrixXd omega, VectorXd phase,
               std::vector<MatrixXd> W);

    int H() const { return H_; }
    int d() const { return d_; }
    int n_buckets() const { return static_cast<int>(W_.size()); }
    int feature_dim() const;
    const std::vector<double>& edges() const { return edges_; }
    const FeatureConfig& features() const { return fc_; }
    // rows are output coordinates (H d), columns are features
    const MatrixXd& weights(int bucket) const { return W_[bucket]; }
    int bucket(double t) const;

    void fill_features(Eigen::Ref<Eigen::RowVectorXd> row, const VectorXd& v_pad, const VectorXd& y_pad,
                       const Mask& mask) const;
    Eigen::RowVectorXd rff(const VectorXd& y_pad) const;

    BoundScore bind(const ObservedContext& ctx) const override;
    std::string name() const override;

    nlohmann::json to_json() const;
    static ScoreModel from_json(const nlohmann::json& j);

    std::vector<std::string> warnings;

private:
    int H_, d_;
    std::vector<double> edges_;
    FeatureConfig fc_;
    MatrixXd omega_;  // F x (H d)
    VectorXd phase_;
    std::vector<MatrixXd> W_;
};

std::vector<double> geometric_edges(double t0, double T, int n);

ScoreModel fit(const TrainingSet& data, int H, int d, const TrainConfig& cfg);

// Time-averaged squared error to the exact score, t ~ U[t0, T], fresh masks, sequences and noise.
struct RiskEstimate {
    double risk = 0.0;
    double stderr_ = 0.0;
};
RiskEstimate score_risk(const ScoreFn& score, const GpSpec& spec, const MixedStrategy& strategy,
                        const DiffusionSchedule& sch, int n_mc, std::uint64_t seed);

std::string feature_kind_name(FeatureKind k);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace gpimpute
