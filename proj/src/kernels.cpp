#include "prolific/kernels.hpp"

#include <vector>

namespace prolific::kernels {

Eigen::MatrixXd cross_product_serial(const Eigen::MatrixXd& Y) {
  const Eigen::Index n = Y.rows(), R = Y.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(R, R);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index a = 0; a < R; ++a) {
      const double ya = Y(i, a);
      for (Eigen::Index b = a; b < R; ++b) out(a, b) += ya * Y(i, b);
    }
  for (Eigen::Index a = 0; a < R; ++a)
    for (Eigen::Index b = 0; b < a; ++b) out(a, b) = out(b, a);
  return out;
}

Eigen::MatrixXd project_serial(const Eigen::MatrixXd& Y, const Eigen::VectorXd& w, const Eigen::MatrixXd& basis) {
  const Eigen::Index n = Y.rows(), R = Y.cols(), K = basis.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, K);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < K; ++k) {
      double acc = 0.0;
      for (Eigen::Index r = 0; r < R; ++r) acc += Y(i, r) * w(r) * basis(r, k);
      out(i, k) = acc;
    }
  return out;
}

Eigen::MatrixXd cross_product_parallel(const Eigen::MatrixXd& Y, int chunk) {
  const Eigen::Index n = Y.rows(), R = Y.cols();
  if (chunk < 1) chunk = 1;
  const int n_chunks = static_cast<int>((n + chunk - 1) / chunk);
  if (n_chunks == 0) return Eigen::MatrixXd::Zero(R, R);
  std::vector<Eigen::MatrixXd> parts(n_chunks);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < n_chunks; ++c) {
    const Eigen::Index start = static_cast<Eigen::Index>(c) * chunk;
    const Eigen::Index len = std::min<Eigen::Index>(chunk, n - start);
    auto block = Y.middleRows(start, len);
    Eigen::MatrixXd part = Eigen::MatrixXd::Zero(R, R);
    part.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose());
    parts[c] = part.selfadjointView<Eigen::Lower>();
  }
  for (int stride = 1; stride < n_chunks; stride *= 2) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < n_chunks - stride; c += 2 * stride) parts[c] += parts[c + stride];
  }
  return parts[0];
}

Eigen::MatrixXd project_parallel(const Eigen::MatrixXd& Y, const Eigen::VectorXd& w, const Eigen::MatrixXd& basis) {
  const Eigen::Index n = Y.rows();
  const Eigen::MatrixXd wb = w.asDiagonal() * basis;
  Eigen::MatrixXd out(n, basis.cols());
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = Y.row(i) * wb;
  return out;
}

}  // namespace prolific::kernels
