#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "snj/error.hpp"

namespace snj {

namespace detail {

// Square labelled matrix; the common shape of similarity and distance data.
template <class Tag>
class LabelledMatrix {
 public:
  LabelledMatrix() = default;
  LabelledMatrix(std::vector<std::string> labels, Eigen::MatrixXd values)
      : labels_(std::move(labels)), values_(std::move(values)) {
    require(values_.rows() == values_.cols(), "matrix must be square");
    require(static_cast<Eigen::Index>(labels_.size()) == values_.rows(),
            "label count does not match matrix size");
  }

  int size() const noexcept { return static_cast<int>(values_.rows()); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  double operator()(int i, int j) const { return values_(i, j); }

 private:
  std::vector<std::string> labels_;
  Eigen::MatrixXd values_;
};

struct SimilarityTag {};
struct DistanceTag {};

}  // namespace detail

// Symmetric pairwise affinities R; diagonal fixed at 1 and never read.
using SimilarityMatrix = detail::LabelledMatrix<detail::SimilarityTag>;

// Symmetric pairwise paralinear distances D = -log R; zero diagonal.
using DistanceMatrix = detail::LabelledMatrix<detail::DistanceTag>;

}  // namespace snj
