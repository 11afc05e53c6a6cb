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
#include "gpimpute/score_train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "gpimpute/config.hpp"
#include "gpimpute/rng.hpp"

namespace gpimpute {

TrainingSet make_training_set(const GpSpec& spec, const MixedStrategy& strategy, int n, std::uint64_t seed) {
    MatrixXd seqs = sample_sequences(spec, n, mix_seed(seed, 0x5eedULL));
    return make_training_set(seqs, spec.H, spec.d, strategy, seed);
}

TrainingSet make_training_set(const MatrixXd& seqs, int H, int d, const MixedStrategy& strategy,
                              std::uint64_t seed) {
    strategy.validate(H);
    if (seqs.rows() != static_cast<Eigen::Index>(H) * d) throw std::invalid_argument("sequence length does not match H d");
    TrainingSet out;
    out.reserve(static_cast<std::size_t>(seqs.cols()));
    const std::uint64_t mseed = mix_seed(seed, 1);
    for (Eigen::Index i = 0; i < seqs.cols(); ++i) {
        Mask m = sample_mask(strategy, H, mix_seed(mseed, static_cast<std::uint64_t>(i)));
        Split s = apply_mask(seqs.col(i), m, d);
        out.push_back({std::move(m), std::move(s.x_obs), std::move(s.x_miss)});
    }
    return out;
}

std::vector<double> geometric_edges(double t0, double T, int n) {
    if (n < 1 || !(t0 > 0.0) || !(T > t0)) throw std::invalid_argument("bad bucket specification");
    std::vector<double> e(static_cast<std::size_t>(n) + 1);
    for (int b = 0; b <= n; ++b) e[b] = t0 * std::pow(T / t0, static_cast<double>(b) / n);
    e.front() = t0;
    e.back() = T;
    return e;
}

std::string feature_kind_name(FeatureKind k) { return k == FeatureKind::affine ? "affine" : "random_fourier"; }

ScoreModel::ScoreModel(int H, int d, std::vector<double> edges, FeatureConfig fc, MatrixXd omega, VectorXd phase,
                       std::vector<MatrixXd> W)
    : H_(H), d_(d), edges_(std::move(edges)), fc_(fc), omega_(std::move(omega)), phase_(std::move(phase)),
      W_(std::move(W)) {
    if (W_.empty() || edges_.size() != W_.size() + 1) throw std::invalid_argument("bucket count mismatch");
    if (fc_.kind == FeatureKind::affine) fc_.F = 0;
    for (const auto& w : W_)
        if (w.rows() != static_cast<Eigen::Index>(H_) * d_ || w.cols() != feature_dim())
            throw std::invalid_argument("weight shape mismatch");
}

int ScoreModel::feature_dim() const {
    return 2 * H_ * d_ + H_ + 1 + (fc_.kind == FeatureKind::random_fourier ? fc_.F : 0);
}

int ScoreModel::bucket(double t) const {
    auto it = std::upper_bound(edges_.begin(), edges_.end(), t);
    int b = static_cast<int>(it - edges_.begin()) - 1;
    return std::clamp(b, 0, n_buckets() - 1);
}

Eigen::RowVectorXd ScoreModel::rff(const VectorXd& y_pad) const {
    if (fc_.kind != FeatureKind::random_fourier) return {};
    VectorXd a = omega_ * y_pad + phase_;
    return (std::sqrt(2.0 / fc_.F) * a.array().cos()).matrix().transpose();
}

void ScoreModel::fill_features(Eigen::Ref<Eigen::RowVectorXd> row, const VectorXd& v_pad, const VectorXd& y_pad,
                               const Mask& mask) const {
    const int n = H_ * d_;
    row.segment(0, n) = v_pad.transpose();
    row.segment(n, n) = y_pad.transpose();
    for (int i = 0; i < H_; ++i) row(2 * n + i) = mask.observed(i) ? 1.0 : 0.0;
    row(2 * n + H_) = 1.0;
    if (fc_.kind == FeatureKind::random_fourier) row.tail(fc_.F) = rff(y_pad);
}

namespace {

VectorXd pad(const VectorXd& x, const std::vector<int>& coords, int n) {
    VectorXd out = VectorXd::Zero(n);
    for (std::size_t k = 0; k < coords.size(); ++k) out(coords[k]) = x(static_cast<Eigen::Index>(k));
    return out;
}

}  // namespace

BoundScore ScoreModel::bind(const ObservedContext& ctx) const {
    if (ctx.mask.H() != H_) throw std::invalid_argument("mask length does not match model H");
    const std::vector<int> oc = frame_coords(ctx.mask.obs(), d_);
    const std::vector<int> mc = frame_coords(ctx.mask.miss(), d_);
    if (ctx.x_obs.size() != static_cast<Eigen::Index>(oc.size()))
        throw std::invalid_argument("x_obs length does not match mask");
    const int n = H_ * d_;
    Eigen::RowVectorXd base(feature_dim());
    fill_features(base, VectorXd::Zero(n), pad(ctx.x_obs, oc, n), ctx.mask);

    struct Bucket {
        MatrixXd A;
        VectorXd c;
    };
    auto buckets = std::make_shared<std::vector<Bucket>>();
    for (const auto& W : W_) {
        MatrixXd Wm = W(mc, Eigen::all);
        buckets->push_back({Wm(Eigen::all, mc), Wm * base.transpose()});
    }
    auto edges = edges_;
    const int nb = n_buckets();
    return [buckets, edges, nb](const MatrixXd& v, double t) -> MatrixXd {
        auto it = std::upper_bound(edges.begin(), edges.end(), t);
        int b = std::clamp(static_cast<int>(it - edges.begin()) - 1, 0, nb - 1);
        const Bucket& k = (*buckets)[b];
        MatrixXd out = k.A * v;
        out.colwise() += k.c;
        return out;
    };
}

std::string ScoreModel::name() const { return feature_kind_name(fc_.kind); }

namespace {

nlohmann::json matrix_json(const MatrixXd& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& path) {
    auto r = get_req<Eigen::Index>(j, "rows", path);
    auto c = get_req<Eigen::Index>(j, "cols", path);
    auto data = get_req<std::vector<double>>(j, "data", path);
    if (static_cast<Eigen::Index>(data.size()) != r * c) throw ConfigError(join_key(path, "data"), "size mismatch");
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data[static_cast<std::size_t>(i * c + k)];
    return m;
}

}  // namespace

nlohmann::json ScoreModel::to_json() const {
    nlohmann::json j;
    j["H"] = H_;
    j["d"] = d_;
    j["edges"] = edges_;
    j["features"] = {{"kind", feature_kind_name(fc_.kind)}, {"F", fc_.F}, {"bandwidth", fc_.bandwidth}};
    if (fc_.kind == FeatureKind::random_fourier) {
        j["rff_omega"] = matrix_json(omega_);
        j["rff_phase"] = std::vector<double>(phase_.data(), phase_.data() + phase_.size());
    }
    j["W"] = nlohmann::json::array();
    for (const auto& w : W_) j["W"].push_back(matrix_json(w));
    return j;
}

ScoreModel ScoreModel::from_json(const nlohmann::json& j) {
    const std::string p = "model";
    int H = get_req<int>(j, "H", p), d = get_req<int>(j, "d", p);
    auto edges = get_req<std::vector<double>>(j, "edges", p);
    const auto& fj = require(j, "features", p);
    FeatureConfig fc;
    auto kind = get_req<std::string>(fj, "kind", p + ".features");
    if (kind == "affine")
        fc.kind = FeatureKind::affine;
    else if (kind == "random_fourier")
        fc.kind = FeatureKind::random_fourier;
    else
        throw ConfigError(p + ".features.kind", "unknown feature map '" + kind + "'");
    fc.F = get_req<int>(fj, "F", p + ".features");
    fc.bandwidth = get_req<double>(fj, "bandwidth", p + ".features");
    MatrixXd omega;
    VectorXd phase;
    if (fc.kind == FeatureKind::random_fourier) {
        omega = matrix_from_json(require(j, "rff_omega", p), p + ".rff_omega");
        auto ph = get_req<std::vector<double>>(j, "rff_phase", p);
        phase = Eigen::Map<VectorXd>(ph.data(), static_cast<Eigen::Index>(ph.size()));
    }
    std::vector<MatrixXd> W;
    const auto& wj = require(j, "W", p);
    for (std::size_t b = 0; b < wj.size(); ++b) W.push_back(matrix_from_json(wj[b], p + ".W[" + std::to_string(b) + "]"));
    return ScoreModel(H, d, std::move(edges), fc, std::move(omega), std::move(phase), std::move(W));
}

ScoreModel fit(const TrainingSet& data, int H, int d, const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("empty training set");
    cfg.schedule.validate();
    if (cfg.n_buckets < 1 || cfg.samples_per_t < 1) throw std::invalid_argument("bad training configuration");
    if (!(cfg.ridge >= 0.0)) throw std::invalid_argument("ridge must be non-negative");
    if (cfg.fixed_t && cfg.n_buckets != 1) throw std::invalid_argument("fixed_t requires a single bucket");
    const int n = H * d;
    const int N = static_cast<int>(data.size());

    FeatureConfig fc = cfg.features;
    MatrixXd omega;
    VectorXd phase;
    if (fc.kind == FeatureKind::random_fourier) {
        if (fc.F < 1) throw std::invalid_argument("random_fourier needs F >= 1");
        if (!(fc.bandwidth > 0.0)) fc.bandwidth = std::sqrt(static_cast<double>(n));
        Rng r(mix_seed(cfg.seed, 7));
        omega = r.normal_matrix(fc.F, n) / fc.bandwidth;
        phase = VectorXd(fc.F);
        for (int k = 0; k < fc.F; ++k) phase(k) = r.uniform(0.0, 2.0 * std::numbers::pi);
    } else {
        fc.F = 0;
    }
    const std::vector<double> edges = geometric_edges(cfg.schedule.t0, cfg.schedule.T, cfg.n_buckets);
    // zero weights give a model that can compute features
    ScoreModel model(H, d, edges, fc, omega, phase,
                     std::vector<MatrixXd>(static_cast<std::size_t>(cfg.n_buckets),
                                           MatrixXd::Zero(n, 2 * n + H + 1 + fc.F)));
    const int p = model.feature_dim();
    if (static_cast<long>(N) < static_cast<long>(cfg.n_buckets) * p)
        model.warnings.push_back("n = " + std::to_string(N) + " is below n_buckets * feature_dim = " +
                                 std::to_string(cfg.n_buckets * p));

    struct Prepared {
        VectorXd y_pad;
        std::vector<int> mc;
        Eigen::RowVectorXd base;
    };
    std::vector<Prepared> prep(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        const auto& pr = data[i];
        if (pr.mask.H() != H) throw std::invalid_argument("training mask length does not match H");
        auto& q = prep[i];
        q.mc = frame_coords(pr.mask.miss(), d);
        q.y_pad = pad(pr.x_obs, frame_coords(pr.mask.obs(), d), n);
        q.base.resize(p);
        model.fill_features(q.base, VectorXd::Zero(n), q.y_pad, pr.mask);
    }

    Rng rng(mix_seed(cfg.seed, 11));
    const int spt = cfg.samples_per_t;
    const long rows = static_cast<long>(N) * spt;
    std::vector<MatrixXd> W;
    for (int b = 0; b < cfg.n_buckets; ++b) {
        MatrixXd Psi(rows, p);
        MatrixXd Y = MatrixXd::Zero(rows, n);
        std::vector<std::vector<int>> frame_rows(static_cast<std::size_t>(H));
        long k = 0;
        for (int i = 0; i < N; ++i) {
            const auto& pr = data[i];
            const auto& q = prep[i];
            for (int r = 0; r < spt; ++r, ++k) {
                const double t = cfg.fixed_t ? *cfg.fixed_t : rng.uniform(edges[b], edges[b + 1]);
                const double a = DiffusionSchedule::alpha(t), s = DiffusionSchedule::sigma(t);
                VectorXd z = rng.normal_vector(static_cast<Eigen::Index>(q.mc.size()));
                VectorXd v = a * pr.x_miss + s * z;
                Psi.row(k) = q.base;
                for (std::size_t c = 0; c < q.mc.size(); ++c) {
                    Psi(k, q.mc[c]) = v(static_cast<Eigen::Index>(c));
                    Y(k, q.mc[c]) = -z(static_cast<Eigen::Index>(c)) / s;
                }
                for (int f : pr.mask.miss()) frame_rows[f].push_back(static_cast<int>(k));
            }
        }
        MatrixXd Wb = MatrixXd::Zero(n, p);
        for (int f = 0; f < H; ++f) {
            const auto& idx = frame_rows[f];
            if (idx.empty()) continue;
            MatrixXd Pf = Psi(idx, Eigen::all);
            MatrixXd A = MatrixXd::Zero(p, p);
            A.selfadjointView<Eigen::Lower>().rankUpdate(Pf.transpose());
            A = A.selfadjointView<Eigen::Lower>();
            A.diagonal().array() += cfg.ridge * static_cast<double>(idx.size());
            MatrixXd B = Pf.transpose() * Y(idx, Eigen::seqN(f * d, d));
            Eigen::LLT<MatrixXd> llt(A);
            if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
                if (cfg.ridge == 0.0) throw std::runtime_error("rank-deficient normal equations; set ridge > 0");
                throw std::runtime_error("normal equations not positive definite");
            }
            Wb.middleRows(f * d, d) = llt.solve(B).transpose();
        }
        W.push_back(std::move(Wb));
    }
    ScoreModel out(H, d, edges, fc, std::move(omega), std::move(phase), std::move(W));
    out.warnings = model.warnings;
    return out;
}

RiskEstimate score_risk(const ScoreFn& score, const GpSpec& spec, const MixedStrategy& strategy,
                        const DiffusionSchedule& sch, int n_mc, std::uint64_t seed) {
    if (n_mc < 2) throw std::invalid_argument("score_risk needs n_mc >= 2");
    strategy.validate(spec.H);
    MatrixXd X = sample_sequences(spec, n_mc, mix_seed(seed, 0));
    Rng rng(mix_seed(seed, 1));
    double sum = 0.0, sum2 = 0.0;
    for (int k = 0; k < n_mc; ++k) {
        Mask m = sample_mask(strategy, spec.H, mix_seed(seed, 2 + static_cast<std::uint64_t>(k)));
        Split sp = apply_mask(X.col(k), m, spec.d);
        ConditionalGaussian cond(spec, m);
        const double t = rng.uniform(sch.t0, sch.T);
        VectorXd v = DiffusionSchedule::alpha(t) * sp.x_miss +
                     DiffusionSchedule::sigma(t) * rng.normal_vector(sp.x_miss.size());
        VectorXd want = exact_score(cond, {v, sp.x_obs, t}, sch);
        VectorXd got = score.bind({m, sp.x_obs})(v, t);
        const double e = (got - want).squaredNorm();
        sum += e;
        sum2 += e * e;
    }
    RiskEstimate r;
    r.risk = sum / n_mc;
    r.stderr_ = std::sqrt(std::max(0.0, sum2 / n_mc - r.risk * r.risk) / (n_mc - 1));
    return r;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path, "wrong type");
    TrainConfig c;
    c.schedule.t0 = get_opt<double>(j, "t0", path, c.schedule.t0);
    c.schedule.T = get_opt<double>(j, "T", path, c.schedule.T);
    c.n_buckets = get_opt<int>(j, "n_buckets", path, c.n_buckets);
    c.samples_per_t = get_opt<int>(j, "samples_per_t", path, c.samples_per_t);
    c.ridge = get_opt<double>(j, "ridge", path, c.ridge);
    c.seed = get_opt<std::uint64_t>(j, "seed", path, c.seed);
    if (j.contains("features")) {
        const auto& f = j.at("features");
        const std::string fp = join_key(path, "features");
        auto kind = get_opt<std::string>(f, "kind", fp, "affine");
        if (kind == "affine")
            c.features.kind = FeatureKind::affine;
        else if (kind == "random_fourier")
            c.features.kind = FeatureKind::random_fourier;
        else
            throw ConfigError(join_key(fp, "kind"), "unknown feature map '" + kind + "'");
        c.features.F = get_opt<int>(f, "F", fp, c.features.F);
        c.features.bandwidth = get_opt<double>(f, "bandwidth", fp, c.features.bandwidth);
    }
    if (c.n_buckets < 1) throw ConfigError(join_key(path, "n_buckets"), "must be >= 1");
    if (c.samples_per_t < 1) throw ConfigError(join_key(path, "samples_per_t"), "must be >= 1");
    if (!(c.ridge >= 0.0)) throw ConfigError(join_key(path, "ridge"), "must be non-negative");
    if (!(c.schedule.t0 > 0.0) || !(c.schedule.T > c.schedule.t0)) throw ConfigError(join_key(path, "t0"), "need 0 < t0 < T");
    return c;
}

}  // namespace gpimpute
