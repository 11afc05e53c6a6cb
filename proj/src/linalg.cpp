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
#include "gpimpute/linalg.hpp"

#include <stdexcept>
#include <string>

namespace gpimpute {

MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

SymEig sym_eig(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

double lambda_min(const MatrixXd& sym) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

double lambda_max(const MatrixXd& sym) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(es.eigenvalues().size() - 1);
}

double condition_number(const MatrixXd& sym) {
    if (sym.rows() == 0) throw std::invalid_argument("condition_number: empty matrix");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    if (!(ev(0) > 0.0))
        throw std::domain_error("matrix not positive definite (lambda_min = " +
                                std::to_string(ev(0)) + ")");
    return ev(ev.size() - 1) / ev(0);
}

double spectral_norm(const MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<MatrixXd> svd(m);
    return svd.singularValues()(0);
}

MatrixXd kron(const MatrixXd& a, const MatrixXd& b) {
    MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

MatrixXd inv_sqrt_spd(const MatrixXd& s) {
    auto e = sym_eig(s);
    if (!(e.values(0) > 0.0)) throw std::domain_error("inv_sqrt_spd: matrix not positive definite");
    return e.vectors * e.values.cwiseSqrt().cwiseInverse().asDiagonal() * e.vectors.transpose();
}

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace gpimpute
