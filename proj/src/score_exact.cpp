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
#include "gpimpute/score_exact.hpp"

#include <stdexcept>

#include "gpimpute/linalg.hpp"

namespace gpimpute {

void DiffusionSchedule::validate() const {
    if (!(t0 > 0.0)) throw std::invalid_argument("schedule: t0 must be > 0");
    if (!(T > t0)) throw std::invalid_argument("schedule: T must exceed t0");
}

bool in_truncation_region(const ScoreQuery& q, double c_data) {
    return q.v_t.norm() <= c_data && q.x_obs.norm() <= c_data;
}

ExactScore::ExactScore(std::shared_ptr<const ConditionalGaussian> cond, DiffusionSchedule schedule)
    : cond_(std::move(cond)), sch_(schedule) {
    sch_.validate();
    auto e = sym_eig(cond_->Sigma_cond());
    eval_ = e.values;
    evec_ = e.vectors;
}

void ExactScore::check_t(double t) const {
    // tolerate rounding on the grid end point
    if (t < sch_.t0 * (1.0 - 1e-12)) throw std::domain_error("below early-stop time");
}

MatrixXd ExactScore::batch_mu(const MatrixXd& v, const VectorXd& mu, double t) const {
    check_t(t);
    if (v.rows() != eval_.size()) throw std::invalid_argument("exact_score: v_t length mismatch");
    const double a = DiffusionSchedule::alpha(t), a2 = DiffusionSchedule::alpha2(t),
                 s2 = DiffusionSchedule::sigma2(t);
    MatrixXd r = v.colwise() - a * mu;
    MatrixXd c = evec_.transpose() * r;
    c.array().colwise() /= (a2 * eval_.array() + s2);
    return -(evec_ * c);
}

MatrixXd ExactScore::batch(const MatrixXd& v, const VectorXd& x_obs, double t) const {
    return batch_mu(v, cond_->mu_cond(x_obs), t);
}

VectorXd ExactScore::operator()(const ScoreQuery& q) const { return batch(q.v_t, q.x_obs, q.t); }

VectorXd exact_score(const ConditionalGaussian& cond, const ScoreQuery& q, const DiffusionSchedule& sch) {
    if (q.t < sch.t0) throw std::domain_error("below early-stop time");
    const double a = DiffusionSchedule::alpha(q.t), a2 = DiffusionSchedule::alpha2(q.t),
                 s2 = DiffusionSchedule::sigma2(q.t);
    MatrixXd A = a2 * cond.Sigma_cond() + s2 * MatrixXd::Identity(cond.m_miss(), cond.m_miss());
    return -Eigen::LLT<MatrixXd>(A).solve(q.v_t - a * cond.mu_cond(q.x_obs));
}

ObjectiveValue major_objective(const ConditionalGaussian& cond, const ScoreQuery& q, const VectorXd& s) {
    if (s.size() != cond.m_miss() || q.v_t.size() != cond.m_miss())
        throw std::invalid_argument("major_objective: dimension mismatch");
    const double a = DiffusionSchedule::alpha(q.t), a2 = DiffusionSchedule::alpha2(q.t),
                 s2 = DiffusionSchedule::sigma2(q.t);
    const VectorXd c = q.v_t - a * cond.mu_cond(q.x_obs);
    // (s^2 I + a^2 Sigma_miss) s - a^2 Sigma_cor^T Sigma_obs^{-1} Sigma_cor s + c
    VectorXd g = s2 * s + a2 * (cond.Sigma_miss() * s) -
                 a2 * (cond.Sigma_cor().transpose() * cond.solve_obs(cond.Sigma_cor() * s)) + c;
    ObjectiveValue out;
    out.value = 0.5 * s.dot(g - c) + s.dot(c);
    out.gradient = std::move(g);
    return out;
}

ObjectiveValue aux_objective(const ConditionalGaussian& cond, const VectorXd& s, const VectorXd& u) {
    if (s.size() != cond.m_miss() || u.size() != cond.m_obs())
        throw std::invalid_argument("aux_objective: dimension mismatch");
    const VectorXd b = cond.Sigma_cor() * s;
    const VectorXd Su = cond.Sigma_obs() * u;
    return {0.5 * u.dot(Su) - u.dot(b), Su - b};
}

BoundScore ExactScoreFn::bind(const ObservedContext& ctx) const {
    auto cond = std::make_shared<const ConditionalGaussian>(spec_, ctx.mask);
    auto es = std::make_shared<const ExactScore>(cond, sch_);
    VectorXd mu = cond->mu_cond(ctx.x_obs);
    return [es, mu](const MatrixXd& v, double t) { return es->batch_mu(v, mu, t); };
}

}  // namespace gpimpute
