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
#include "gpimpute/diffusion_sampler.hpp"

#include <cmath>
#include <string>

#include "gpimpute/config.hpp"
#include "gpimpute/linalg.hpp"

namespace gpimpute {

void SamplerConfig::validate() const {
    schedule.validate();
    if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
}

std::vector<double> SamplerConfig::time_grid() const {
    validate();
    const double t0 = schedule.t0, T = schedule.T;
    std::vector<double> g(static_cast<std::size_t>(n_steps) + 1);
    for (int k = 0; k <= n_steps; ++k) {
        double u = static_cast<double>(k) / n_steps;
        g[k] = grid == TimeGrid::uniform ? t0 + u * (T - t0) : t0 * std::pow(T / t0, u);
    }
    g.front() = t0;
    g.back() = T;
    return g;
}

Eigen::VectorXd forward_corrupt(const Eigen::VectorXd& x_miss, double t, std::uint64_t seed) {
    Rng rng(seed);
    return forward_corrupt(Eigen::MatrixXd(x_miss), t, rng);
}

Eigen::MatrixXd forward_corrupt(const Eigen::MatrixXd& x_miss, double t, Rng& rng) {
    if (!(t >= 0.0)) throw std::invalid_argument("forward_corrupt: t must be >= 0");
    Eigen::MatrixXd z = rng.normal_matrix(x_miss.rows(), x_miss.cols());
    return DiffusionSchedule::alpha(t) * x_miss + DiffusionSchedule::sigma(t) * z;
}

Eigen::MatrixXd backward_sample(const BoundScore& score, int dim, const SamplerConfig& cfg, int batch) {
    if (dim < 1 || batch < 1) throw std::invalid_argument("backward_sample: empty state");
    const std::vector<double> g = cfg.time_grid();
    Rng rng(cfg.seed);
    Eigen::MatrixXd v = rng.normal_matrix(dim, batch);
    Eigen::MatrixXd z(dim, batch);
    for (int k = cfg.n_steps - 1, step = 0; k >= 0; --k, ++step) {
        const double t = g[k + 1];
        const double h = g[k + 1] - g[k];
        Eigen::MatrixXd s = score(v, t);
        if (s.rows() != dim || s.cols() != batch)
            throw SamplerError(step, -1, "score returned wrong shape at step " + std::to_string(step));
        if (!all_finite(s)) {
            int j = 0;
            while (j < batch && s.col(j).allFinite()) ++j;
            throw SamplerError(step, j, "score not finite at step " + std::to_string(step) + " (t = " +
                                            std::to_string(t) + ", sample " + std::to_string(j) + ")");
        }
        for (Eigen::Index j = 0; j < z.size(); ++j) z.data()[j] = rng.normal();
        v += h * (0.5 * v + s) + std::sqrt(h) * z;
    }
    return v;
}

Eigen::MatrixXd backward_sample(const ScoreFn& score, const ObservedContext& ctx, int d,
                                const SamplerConfig& cfg, int batch) {
    const int dim = static_cast<int>(ctx.mask.miss().size()) * d;
    return backward_sample(score.bind(ctx), dim, cfg, batch);
}

double default_t0(double lambda_min_cond, double n) {
    if (!(n > 0.0)) throw std::invalid_argument("default_t0: n must be positive");
    return std::max(1e-4, lambda_min_cond / std::sqrt(n));
}

nlohmann::json to_json(const SamplerConfig& cfg) {
    return {{"t0", cfg.schedule.t0},
            {"T", cfg.schedule.T},
            {"n_steps", cfg.n_steps},
            {"grid", cfg.grid == TimeGrid::uniform ? "uniform" : "geometric"},
            {"seed", cfg.seed}};
}

SamplerConfig sampler_config_from_json(const nlohmann::json& j, const std::string& path) {
    SamplerConfig c;
    if (!j.is_object()) throw ConfigError(path, "wrong type");
    c.schedule.t0 = get_opt<double>(j, "t0", path, c.schedule.t0);
    c.schedule.T = get_opt<double>(j, "T", path, c.schedule.T);
    c.n_steps = get_opt<int>(j, "n_steps", path, c.n_steps);
    c.seed = get_opt<std::uint64_t>(j, "seed", path, c.seed);
    auto grid = get_opt<std::string>(j, "grid", path, "uniform");
    if (grid == "uniform")
        c.grid = TimeGrid::uniform;
    else if (grid == "geometric")
        c.grid = TimeGrid::geometric;
    else
        throw ConfigError(join_key(path, "grid"), "unknown grid '" + grid + "'");
    if (c.n_steps < 1) throw ConfigError(join_key(path, "n_steps"), "must be >= 1");
    if (!(c.schedule.t0 > 0.0)) throw ConfigError(join_key(path, "t0"), "must be positive");
    if (!(c.schedule.T > c.schedule.t0)) throw ConfigError(join_key(path, "T"), "must exceed t0");
    return c;
}

}  // namespace gpimpute
