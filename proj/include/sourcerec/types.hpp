#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <stdexcept>
#include <string>

namespace sourcerec {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IVec = Eigen::VectorXi;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/* Error taxonomy.  Every failure that callers can act on gets its own type;
   all derive from std::runtime_error so the CLI can map them to exit codes. */

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct NotPositiveDefinite : std::runtime_error {
  int pivot; /* index in the original (unpermuted) numbering */
  explicit NotPositiveDefinite(int pivot_index)
      : std::runtime_error("matrix not positive definite at pivot " +
                           std::to_string(pivot_index)),
        pivot(pivot_index) {}
};

struct InvalidExtent : std::runtime_error {
  explicit InvalidExtent(const std::string& what) : std::runtime_error(what) {}
};

struct UnsupportedAlpha : std::runtime_error {
  explicit UnsupportedAlpha(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidStep : std::runtime_error {
  explicit InvalidStep(const std::string& what) : std::runtime_error(what) {}
};

struct SingularOperator : std::runtime_error {
  explicit SingularOperator(const std::string& what) : std::runtime_error(what) {}
};

struct LocationOutsideMesh : std::runtime_error {
  explicit LocationOutsideMesh(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigInvalid : std::runtime_error {
  explicit ConfigInvalid(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sourcerec
