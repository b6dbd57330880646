#pragma once

#include <Eigen/Dense>

namespace rhythmvec {

/// Bottleneck speaker vector.
struct Embedding {
  Eigen::VectorXd values;

  Eigen::Index dim() const noexcept { return values.size(); }
};

}  // namespace rhythmvec
