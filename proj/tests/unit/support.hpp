#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace testing_support {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("prolific_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& g, int rows, int cols) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = z(g);
  return m;
}

inline double max_rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double scale = std::max(1.0, std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()));
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace testing_support

#include "prolific/lmm.hpp"

namespace testing_support {

// Layer with `subjects` subjects, `per_period` curves per period and random
// scores; half the subjects in each group.
inline prolific::ProjectedLayer random_layer(std::mt19937_64& g, int subjects, int per_period) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  prolific::ProjectedLayer layer;
  std::vector<double> scores;
  int row = 0;
  for (int i = 0; i < subjects; ++i) {
    int group = i < (subjects + 1) / 2 ? 1 : 2;
    double shared = z(g);
    int start = row;
    for (int p = 1; p <= 4; ++p)
      for (int j = 0; j < per_period; ++j) {
        layer.day.push_back(u(g));
        layer.period.push_back(p);
        layer.i_tau.push_back(prolific::tau_indicator(group, p) ? 1 : 0);
        layer.i_lambda.push_back(prolific::lambda_indicator(group, p) ? 1 : 0);
        scores.push_back(shared + z(g));
        ++row;
      }
    layer.subject_blocks.emplace_back(start, row - start);
  }
  layer.score = Eigen::Map<Eigen::VectorXd>(scores.data(), static_cast<Eigen::Index>(scores.size()));
  layer.covariates.resize(row, 0);
  return layer;
}

inline std::vector<double> even_knots(int q) {
  std::vector<double> k;
  for (int i = 1; i <= q; ++i) k.push_back(static_cast<double>(i) / (q + 1));
  return k;
}

inline Eigen::MatrixXd dense_v(const prolific::ProjectedLmmProblem& p, const prolific::Ratios& r) {
  Eigen::MatrixXd V = Eigen::MatrixXd::Identity(p.N(), p.N());
  for (int c = 0; c < 3; ++c) V += r[c] * p.Z(c) * p.Z(c).transpose();
  return V;
}

inline Eigen::MatrixXd fixed_design(const prolific::ProjectedLmmProblem& p, bool tau, bool lambda) {
  Eigen::MatrixXd X(p.N(), p.X_b.cols() + (tau ? p.X_tau.cols() : 0) + (lambda ? p.X_lambda.cols() : 0));
  int c = 0;
  X.middleCols(c, p.X_b.cols()) = p.X_b;
  c += static_cast<int>(p.X_b.cols());
  if (tau) {
    X.middleCols(c, p.X_tau.cols()) = p.X_tau;
    c += static_cast<int>(p.X_tau.cols());
  }
  if (lambda) X.middleCols(c, p.X_lambda.cols()) = p.X_lambda;
  return X;
}

// P = V^{-1} - V^{-1}X(X'V^{-1}X)^{-1}X'V^{-1}, formed densely.
inline Eigen::MatrixXd dense_projector(const Eigen::MatrixXd& V, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd Vi = V.inverse();
  return Vi - Vi * X * (X.transpose() * Vi * X).inverse() * X.transpose() * Vi;
}

}  // namespace testing_support
