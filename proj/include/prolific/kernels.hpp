#pragma once

#include <Eigen/Dense>

namespace prolific::kernels {

// Reference implementations: plain loops, row order summation.
Eigen::MatrixXd cross_product_serial(const Eigen::MatrixXd& Y);
Eigen::MatrixXd project_serial(const Eigen::MatrixXd& Y, const Eigen::VectorXd& weights,
                               const Eigen::MatrixXd& basis);

// OpenMP versions. Rows are cut into fixed chunks and the partial sums are
// combined by a pairwise tree in chunk order, so the result depends only on
// `chunk`, not on the thread count.
Eigen::MatrixXd cross_product_parallel(const Eigen::MatrixXd& Y, int chunk = 64);
Eigen::MatrixXd project_parallel(const Eigen::MatrixXd& Y, const Eigen::VectorXd& weights,
                                 const Eigen::MatrixXd& basis);

}  // namespace prolific::kernels
