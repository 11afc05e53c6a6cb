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
#include "gpimpute/gp_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "gpimpute/config.hpp"
#include "gpimpute/linalg.hpp"
#include "gpimpute/rng.hpp"

namespace gpimpute {

double EmbeddingSpec::f(int m) const {
    if (kind == Kind::linear_gap) return static_cast<double>(m);
    return 2.0 * r * std::abs(std::sin(std::numbers::pi * m / C));
}

double EmbeddingSpec::delta(int H) const {
    double best = std::numeric_limits<double>::infinity();
    for (int m = 0; m + 1 < H; ++m) best = std::min(best, f(m + 1) * f(m + 1) - f(m) * f(m));
    return best;
}

MatrixXd EmbeddingSpec::coordinates(int H) const {
    if (kind != Kind::sinusoidal) throw std::logic_error("linear_gap embedding has no explicit coordinates");
    MatrixXd e(H, 2);
    for (int i = 0; i < H; ++i) {
        double a = 2.0 * std::numbers::pi * (i + phase) / C;
        e(i, 0) = r * std::sin(a);
        e(i, 1) = r * std::cos(a);
    }
    return e;
}

void EmbeddingSpec::validate(int H) const {
    if (kind == Kind::sinusoidal) {
        if (!(r > 0.0)) throw std::invalid_argument("sinusoidal embedding needs r > 0");
        if (!(C >= 2.0 * (H - 1))) throw std::invalid_argument("sinusoidal embedding needs C >= 2(H-1)");
    }
    if (!(delta(H) > 0.0)) throw std::invalid_argument("embedding distance not strictly increasing");
}

double KernelSpec::operator()(double dist) const {
    const double z = dist / lengthscale;
    switch (kind) {
        case Kind::rbf: return std::exp(-0.5 * z * z);
        case Kind::laplace: return std::exp(-z);
        case Kind::matern_3_2: {
            double a = std::sqrt(3.0) * z;
            return (1.0 + a) * std::exp(-a);
        }
        case Kind::matern_5_2: {
            double a = std::sqrt(5.0) * z;
            return (1.0 + a + a * a / 3.0) * std::exp(-a);
        }
    }
    return 0.0;
}

MatrixXd build_temporal_gram(const KernelSpec& kernel, const EmbeddingSpec& emb, int H) {
    if (H < 2) throw std::invalid_argument("build_temporal_gram: H must be >= 2");
    if (!(kernel.lengthscale > 0.0)) throw std::invalid_argument("kernel lengthscale must be > 0");
    emb.validate(H);
    std::vector<double> g(static_cast<std::size_t>(H));
    for (int m = 0; m < H; ++m) g[static_cast<std::size_t>(m)] = kernel(emb.f(m));
    MatrixXd G(H, H);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < H; ++j) G(i, j) = g[static_cast<std::size_t>(std::abs(i - j))];
    Eigen::LLT<MatrixXd> llt(G);
    bool ok = llt.info() == Eigen::Success;
    // pivots this small mean the factor is numerically meaningless
    if (ok) ok = llt.matrixLLT().diagonal().array().square().minCoeff() > 1e-12;
    if (!ok) {
        std::ostringstream os;
        os << "gram not positive definite (smallest eigenvalue " << lambda_min(G) << ")";
        throw std::domain_error(os.str());
    }
    return G;
}

void GpSpec::validate() const {
    if (H < 2 || d < 1) throw std::invalid_argument("GpSpec: need H >= 2 and d >= 1");
    if (Lambda.rows() != d || Lambda.cols() != d) throw std::invalid_argument("GpSpec: Lambda must be d x d");
    if ((Lambda - Lambda.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + Lambda.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("GpSpec: Lambda not symmetric");
    if (Eigen::LLT<MatrixXd>(Lambda).info() != Eigen::Success)
        throw std::domain_error("GpSpec: Lambda not positive definite");
    if (mean.size() != 0 && mean.size() != static_cast<Eigen::Index>(H) * d)
        throw std::invalid_argument("GpSpec: mean length must be H*d");
    embedding.validate(H);
}

VectorXd GpSpec::mean_vector() const {
    return mean.size() ? mean : VectorXd::Zero(static_cast<Eigen::Index>(H) * d);
}

MatrixXd GpSpec::gram() const { return build_temporal_gram(kernel, embedding, H); }

MatrixXd sample_sequences(const GpSpec& spec, int n, std::uint64_t seed) {
    spec.validate();
    MatrixXd Lg = Eigen::LLT<MatrixXd>(spec.gram()).matrixL();
    MatrixXd Ll = Eigen::LLT<MatrixXd>(spec.Lambda).matrixL();
    const VectorXd mu = spec.mean_vector();
    Rng rng(seed);
    MatrixXd out(static_cast<Eigen::Index>(spec.H) * spec.d, n);
    for (int s = 0; s < n; ++s) {
        // X = L_Lambda Z L_Gamma^T has vec(X) ~ N(0, Gamma (x) Lambda)
        MatrixXd Z = rng.normal_matrix(spec.d, spec.H);
        MatrixXd X = Ll * Z * Lg.transpose();
        out.col(s) = mu + Eigen::Map<VectorXd>(X.data(), X.size());
    }
    return out;
}

double latent_phi(double x) { return x + std::exp(-x * x) + 2.0 * std::sin(x); }

MatrixXd latent_transform(const MatrixXd& X, double noise_var, std::uint64_t seed) {
    if (!(noise_var >= 0.0)) throw std::invalid_argument("noise variance must be non-negative");
    Rng rng(seed);
    MatrixXd Y = X.unaryExpr([](double x) { return latent_phi(x); });
    return Y + std::sqrt(noise_var) * rng.normal_matrix(X.rows(), X.cols());
}

ConditionalGaussian::ConditionalGaussian(const GpSpec& spec, const Mask& mask) : mask_(mask), d_(spec.d) {
    spec.validate();
    if (mask.H() != spec.H) throw std::invalid_argument("mask length does not match H");
    if (mask.miss().empty() || mask.obs().empty()) throw std::invalid_argument("degenerate mask");
    const MatrixXd G = spec.gram();
    Lambda_ = spec.Lambda;
    Eigen::VectorXi o = Eigen::Map<const Eigen::VectorXi>(mask.obs().data(), static_cast<Eigen::Index>(mask.obs().size()));
    Eigen::VectorXi m = Eigen::Map<const Eigen::VectorXi>(mask.miss().data(), static_cast<Eigen::Index>(mask.miss().size()));
    G_obs_ = G(o, o);
    G_miss_ = G(m, m);
    G_cor_ = G(o, m);
    S_obs_ = kron(G_obs_, Lambda_);
    S_miss_ = kron(G_miss_, Lambda_);
    S_cor_ = kron(G_cor_, Lambda_);
    const VectorXd mu = spec.mean_vector();
    mu_obs_ = mu(frame_coords(mask.obs(), d_));
    mu_miss_ = mu(frame_coords(mask.miss(), d_));
    obs_llt_.compute(S_obs_);
    if (obs_llt_.info() != Eigen::Success) throw std::domain_error("Sigma_obs factorization failed");
    gain_ = obs_llt_.solve(S_cor_).transpose();
    S_cond_ = symmetrize(S_miss_ - gain_ * S_cor_);
    if (Eigen::LLT<MatrixXd>(S_cond_).info() != Eigen::Success)
        throw std::domain_error("Sigma_cond not positive definite");
}

VectorXd ConditionalGaussian::mu_cond(const VectorXd& x_obs) const {
    if (x_obs.size() != mu_obs_.size()) throw std::invalid_argument("mu_cond: x_obs length mismatch");
    return mu_miss_ + gain_ * (x_obs - mu_obs_);
}

VectorXd ConditionalGaussian::solve_obs(const VectorXd& b) const { return obs_llt_.solve(b); }

ConditionalGaussian condition_on_observed(const GpSpec& spec, const Mask& mask) {
    return ConditionalGaussian(spec, mask);
}

double c_sigma(const ConditionalGaussian& cond) {
    return 1.0 + spectral_norm(cond.Gamma_cor()) * condition_number(cond.Lambda()) / lambda_min(cond.Gamma_obs());
}

double default_c_data(const GpSpec& spec) {
    return 2.0 * std::sqrt((spec.H * spec.d + 1.0) * (spec.Lambda.norm() + 1.0));
}

std::string kernel_name(KernelSpec::Kind k) {
    switch (k) {
        case KernelSpec::Kind::rbf: return "rbf";
        case KernelSpec::Kind::laplace: return "laplace";
        case KernelSpec::Kind::matern_3_2: return "matern_3_2";
        case KernelSpec::Kind::matern_5_2: return "matern_5_2";
    }
    return "?";
}

nlohmann::json to_json(const GpSpec& spec) {
    nlohmann::json j;
    j["H"] = spec.H;
    j["d"] = spec.d;
    j["kernel"] = {{"kind", kernel_name(spec.kernel.kind)}, {"lengthscale", spec.kernel.lengthscale}};
    if (spec.embedding.kind == EmbeddingSpec::Kind::linear_gap) {
        j["embedding"] = {{"kind", "linear_gap"}};
    } else {
        j["embedding"] = {{"kind", "sinusoidal"}, {"r", spec.embedding.r}, {"C", spec.embedding.C}};
        if (spec.embedding.phase != 0.0) j["embedding"]["phase"] = spec.embedding.phase;
    }
    std::vector<double> lam;
    for (int i = 0; i < spec.d; ++i)
        for (int k = 0; k < spec.d; ++k) lam.push_back(spec.Lambda(i, k));
    j["lambda"] = lam;
    if (spec.mean.size()) j["mean"] = std::vector<double>(spec.mean.data(), spec.mean.data() + spec.mean.size());
    return j;
}

GpSpec gp_spec_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    GpSpec s;
    s.H = get_req<int>(j, "H", path);
    s.d = get_opt<int>(j, "d", path, 1);
    if (s.H < 2) throw ConfigError(join_key(path, "H"), "must be >= 2");
    if (s.d < 1) throw ConfigError(join_key(path, "d"), "must be >= 1");
    const std::string kp = join_key(path, "kernel");
    const auto& k = require(j, "kernel", path);
    auto kind = get_req<std::string>(k, "kind", kp);
    if (kind == "rbf") s.kernel.kind = KernelSpec::Kind::rbf;
    else if (kind == "laplace") s.kernel.kind = KernelSpec::Kind::laplace;
    else if (kind == "matern_3_2") s.kernel.kind = KernelSpec::Kind::matern_3_2;
    else if (kind == "matern_5_2") s.kernel.kind = KernelSpec::Kind::matern_5_2;
    else throw ConfigError(join_key(kp, "kind"), "unknown kernel '" + kind + "'");
    s.kernel.lengthscale = get_req<double>(k, "lengthscale", kp);
    if (!(s.kernel.lengthscale > 0.0)) throw ConfigError(join_key(kp, "lengthscale"), "must be > 0");
    if (j.contains("embedding")) {
        const std::string ep = join_key(path, "embedding");
        const auto& e = j.at("embedding");
        auto ek = get_req<std::string>(e, "kind", ep);
        if (ek == "linear_gap") {
            s.embedding.kind = EmbeddingSpec::Kind::linear_gap;
        } else if (ek == "sinusoidal") {
            s.embedding.kind = EmbeddingSpec::Kind::sinusoidal;
            s.embedding.C = get_opt<double>(e, "C", ep, 2.0 * (s.H - 1));
            s.embedding.r = get_opt<double>(e, "r", ep, s.embedding.C / (2.0 * std::numbers::pi));
            s.embedding.phase = get_opt<double>(e, "phase", ep, 0.0);
            if (!(s.embedding.r > 0.0)) throw ConfigError(join_key(ep, "r"), "must be > 0");
            if (!(s.embedding.C >= 2.0 * (s.H - 1))) throw ConfigError(join_key(ep, "C"), "must be >= 2(H-1)");
        } else {
            throw ConfigError(join_key(ep, "kind"), "unknown embedding '" + ek + "'");
        }
    }
    s.Lambda = MatrixXd::Identity(s.d, s.d);
    if (j.contains("lambda")) {
        auto lam = get_as<std::vector<double>>(j.at("lambda"), join_key(path, "lambda"));
        if (static_cast<int>(lam.size()) != s.d * s.d)
            throw ConfigError(join_key(path, "lambda"), "expected d*d entries");
        for (int i = 0; i < s.d; ++i)
            for (int k2 = 0; k2 < s.d; ++k2) s.Lambda(i, k2) = lam[static_cast<std::size_t>(i * s.d + k2)];
    }
    if (j.contains("mean")) {
        auto mu = get_as<std::vector<double>>(j.at("mean"), join_key(path, "mean"));
        if (static_cast<int>(mu.size()) != s.H * s.d) throw ConfigError(join_key(path, "mean"), "expected H*d entries");
        s.mean = Eigen::Map<VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
    }
    try {
        s.validate();
    } catch (const std::exception& ex) {
        throw ConfigError(path, ex.what());
    }
    return s;
}

}  // namespace gpimpute
