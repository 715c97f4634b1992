#pragma once

#include <span>
#include <vector>

#include "owr/types.hpp"

namespace owr::stats {

/// Linear interpolation between order statistics, inclusive convention:
/// position h = (p/100)·(n−1), value = x[⌊h⌋] + (h−⌊h⌋)·(x[⌊h⌋+1] − x[⌊h⌋]).
/// `p` is in [0,100]; input need not be sorted.
double percentile(std::span<const double> values, double p);

/// Same as percentile() but for an already ascending-sorted input.
double percentile_sorted(std::span<const double> sorted, double p);

/// Conventional median (mean of the two middle order statistics for even n).
double median(std::span<const double> values);

/// 1-based midranks; tied values share the mean of the ranks they span.
std::vector<double> midranks(std::span<const double> values);

double pearson(std::span<const double> xs, std::span<const double> ys);

/// log Σ exp(row) with max-subtraction.
double logsumexp(const Eigen::Ref<const Eigen::RowVectorXd>& row);

/// Row-wise softmax with max-subtraction.
Matrix softmax_rows(const Matrix& logits);

/// Index of the largest entry; ties resolve to the lowest index.
Eigen::Index argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row);

}  // namespace owr::stats
