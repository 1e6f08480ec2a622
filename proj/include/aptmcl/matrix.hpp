#pragma once

#include <Eigen/Dense>

namespace aptmcl {

// Row-major so that one row is one node/sample, matching the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace aptmcl
