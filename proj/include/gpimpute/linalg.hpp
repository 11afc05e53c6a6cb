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

namespace gpimpute {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SymEig {
    VectorXd values;   // ascending
    MatrixXd vectors;
};

MatrixXd symmetrize(const MatrixXd& m);
SymEig sym_eig(const MatrixXd& m);
double lambda_min(const MatrixXd& sym);
double lambda_max(const MatrixXd& sym);

// lambda_max / lambda_min of a symmetric matrix; throws if not positive definite.
double condition_number(const MatrixXd& sym);

double spectral_norm(const MatrixXd& m);
MatrixXd kron(const MatrixXd& a, const MatrixXd& b);

// S^{-1/2} for symmetric positive definite S.
MatrixXd inv_sqrt_spd(const MatrixXd& s);

bool all_finite(const MatrixXd& m);

}  // namespace gpimpute
