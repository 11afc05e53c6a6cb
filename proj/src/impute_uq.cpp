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
#include "gpimpute/impute_uq.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "gpimpute/rng.hpp"

namespace gpimpute {

ImputationResult summarize_samples(MatrixXd samples, double alpha, PointKind kind) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    const Eigen::Index Z = samples.cols();
    if (Z < 1 || samples.rows() < 1) throw std::invalid_argument("no samples");
    ImputationResult r;
    r.alpha = alpha;
    r.point_kind = kind;
    r.mean = samples.rowwise().mean();
    r.median.resize(samples.rows());
    std::vector<double> buf(static_cast<std::size_t>(Z));
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        for (Eigen::Index z = 0; z < Z; ++z) buf[z] = samples(i, z);
        std::sort(buf.begin(), buf.end());
        r.median(i) = Z % 2 ? buf[Z / 2] : 0.5 * (buf[Z / 2 - 1] + buf[Z / 2]);
    }
    std::vector<double> ds(static_cast<std::size_t>(Z));
    // same expression as contains() so membership of the samples is bit-exact
    for (Eigen::Index z = 0; z < Z; ++z) ds[z] = (VectorXd(samples.col(z)) - r.point()).norm();
    // (1 - alpha) Z can land a hair above an integer in floating point
    long k = static_cast<long>(std::ceil((1.0 - alpha) * static_cast<double>(Z) - 1e-9));
    k = std::clamp(k, 1L, static_cast<long>(Z));
    std::nth_element(ds.begin(), ds.begin() + (k - 1), ds.end());
    r.radius = ds[static_cast<std::size_t>(k - 1)];
    r.samples = std::move(samples);
    return r;
}

ImputationResult impute(const ScoreFn& score, const ObservedContext& ctx, int d, int Z, double alpha,
                        const SamplerConfig& sampler, PointKind kind) {
    if (Z < 20) throw std::invalid_argument("impute needs Z >= 20");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    return summarize_samples(backward_sample(score, ctx, d, sampler, Z), alpha, kind);
}

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex mu;
    auto work = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> g(mu);
                if (!err) err = std::current_exception();
                next = n;
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int k = 0; k < std::min(threads, n); ++k) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

namespace {

struct Trial {
    Mask mask;
    Split split;
    SamplerConfig sampler;
    std::uint64_t stream;
};

Trial make_trial(const MatrixXd& seq, int H, int d, const MixedStrategy& pattern, const EvalConfig& cfg, int i) {
    Trial t;
    t.stream = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
    t.mask = sample_mask(pattern, H, mix_seed(t.stream, 1));
    t.split = apply_mask(seq, t.mask, d);
    t.sampler = cfg.sampler;
    t.sampler.seed = mix_seed(t.stream, 2);
    return t;
}

void check_eval(const EvalConfig& cfg, int min_trials) {
    if (cfg.trials < min_trials) throw std::invalid_argument("too few trials");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    cfg.sampler.validate();
}

MseResult finish(const std::vector<double>& e) {
    MseResult r;
    r.trials = static_cast<int>(e.size());
    double s = 0.0, s2 = 0.0;
    for (double x : e) {
        s += x;
        s2 += x * x;
    }
    r.mse = s / r.trials;
    r.stderr_ = r.trials > 1 ? std::sqrt(std::max(0.0, s2 / r.trials - r.mse * r.mse) / (r.trials - 1)) : 0.0;
    return r;
}

}  // namespace

CoverageResult coverage_eval(const ScoreFn& score, const GpSpec& spec, const MixedStrategy& pattern,
                             const EvalConfig& cfg) {
    check_eval(cfg, 100);
    pattern.validate(spec.H);
    const MatrixXd X = sample_sequences(spec, cfg.trials, mix_seed(cfg.seed, 0xc0feULL));
    std::vector<char> hit(static_cast<std::size_t>(cfg.trials), 0);
    parallel_for(cfg.trials, cfg.threads, [&](int i) {
        Trial tr = make_trial(X.col(i), spec.H, spec.d, pattern, cfg, i);
        ImputationResult res = impute(score, {tr.mask, tr.split.x_obs}, spec.d, cfg.Z, cfg.alpha, tr.sampler, cfg.point);
        ConditionalGaussian cond(spec, tr.mask);
        Eigen::LLT<MatrixXd> llt(cond.Sigma_cond());
        if (llt.info() != Eigen::Success) throw std::runtime_error("conditional covariance not positive definite");
        Rng rng(mix_seed(tr.stream, 3));
        VectorXd truth = cond.mu_cond(tr.split.x_obs) + llt.matrixL() * rng.normal_vector(res.mean.size());
        hit[static_cast<std::size_t>(i)] = res.contains(truth) ? 1 : 0;
    });
    CoverageResult r;
    r.trials = cfg.trials;
    for (char h : hit) r.hits += h;
    r.coverage = static_cast<double>(r.hits) / r.trials;
    r.stderr_ = std::sqrt(r.coverage * (1.0 - r.coverage) / r.trials);
    return r;
}

MseResult mse_eval(const ScoreFn& score, const GpSpec& spec, const MixedStrategy& pattern, const EvalConfig& cfg) {
    check_eval(cfg, 1);
    pattern.validate(spec.H);
    const MatrixXd X = sample_sequences(spec, cfg.trials, mix_seed(cfg.seed, 0xc0feULL));
    std::vector<double> err(static_cast<std::size_t>(cfg.trials));
    parallel_for(cfg.trials, cfg.threads, [&](int i) {
        Trial tr = make_trial(X.col(i), spec.H, spec.d, pattern, cfg, i);
        ImputationResult res = impute(score, {tr.mask, tr.split.x_obs}, spec.d, cfg.Z, cfg.alpha, tr.sampler, cfg.point);
        ConditionalGaussian cond(spec, tr.mask);
        err[static_cast<std::size_t>(i)] = (res.point() - cond.mu_cond(tr.split.x_obs)).squaredNorm() / res.mean.size();
    });
    return finish(err);
}

MseResult mse_eval_latent(const ScoreFn& score, const GpSpec& spec, double noise_var, const MixedStrategy& pattern,
                          const EvalConfig& cfg) {
    check_eval(cfg, 1);
    pattern.validate(spec.H);
    const MatrixXd Y = latent_transform(sample_sequences(spec, cfg.trials, mix_seed(cfg.seed, 0xc0feULL)), noise_var,
                                        mix_seed(cfg.seed, 0x1a7eULL));
    std::vector<double> err(static_cast<std::size_t>(cfg.trials));
    parallel_for(cfg.trials, cfg.threads, [&](int i) {
        Trial tr = make_trial(Y.col(i), spec.H, spec.d, pattern, cfg, i);
        ImputationResult res = impute(score, {tr.mask, tr.split.x_obs}, spec.d, cfg.Z, cfg.alpha, tr.sampler, cfg.point);
        err[static_cast<std::size_t>(i)] = (res.point() - tr.split.x_miss).squaredNorm() / res.mean.size();
    });
    return finish(err);
}

}  // namespace gpimpute
