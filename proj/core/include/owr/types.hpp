#pragma once

#include <Eigen/Dense>

namespace owr {

/// Sample-major storage: one row per sample, matching the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace owr
