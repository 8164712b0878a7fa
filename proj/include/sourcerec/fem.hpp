#pragma once

#include <optional>

#include "sourcerec/mesh.hpp"
#include "sourcerec/sparse.hpp"
#include "sourcerec/types.hpp"

namespace sourcerec {

struct PdeCoefficients {
  double diffusion = 1.0; /* D >= 0 */
  double reaction = 0.0;  /* r >= 0 */
  Mat advection;          /* n x dim nodal velocity; empty means none */
};

/* Assembled linear-hat Galerkin system.  The composed stiffness is
   K = advection_part + D * diffusion_part + r * mass; the raw parts are kept
   so scalar coefficients can be swapped without reassembly. */
struct FemSystem {
  SpMat stiffness;
  SpMat mass;           /* consistent */
  SpMat lumped_mass;    /* diagonal, row sums of mass */
  SpMat diffusion_part; /* unit-coefficient grad-grad */
  SpMat advection_part; /* -integral grad(phi_i) . (v phi_j) */
  double diffusion = 1.0;
  double reaction = 0.0;
  Mesh mesh;

  Eigen::Index dim() const { return stiffness.rows(); }
};

FemSystem assemble(const Mesh& mesh, const PdeCoefficients& coeffs);

/* Same mesh and advection data, new scalar coefficients. */
FemSystem with_coefficients(const FemSystem& sys, double diffusion,
                            double reaction);

/* Boundary data for essential conditions: a constant vector, or a Gaussian
   field over the boundary nodes when `precision` is set. */
struct BoundaryValue {
  Vec value;                      /* constant value, or mean of the field */
  std::optional<SpMat> precision; /* Q_c for a Gaussian boundary field */
};

/* Interior system after condensing out boundary nodes: K22 u2 = L~22 f2 + offset.
   With a Gaussian boundary the randomness folds into the source as
   f~2 = f2 - L~22^{-1} K21 u1, handled by condensed_source_prior below. */
struct CondensedSystem {
  FemSystem reduced;  /* K22, masses, parts over kept nodes */
  IVec keep, drop;    /* original node indices: interior kept, boundary dropped */
  SpMat coupling;     /* K21 (kept rows x dropped cols) */
  SpMat coupling_mass;/* L21, zero under lumping; kept for the consistent variant */
  Vec rhs_offset;     /* -K21 * boundary mean, added to the condensed RHS */
  BoundaryValue boundary;
  bool consistent_mass = false;
};

CondensedSystem apply_dirichlet(const FemSystem& sys, const BoundaryValue& bc,
                                bool consistent_mass = false);

/* Solve the condensed steady system for a given interior source. */
Vec condensed_solve(const CondensedSystem& cs, const Vec& f_interior);

/* Scatter a condensed interior vector back to full length, boundary = mean. */
Vec expand_condensed(const CondensedSystem& cs, const Vec& interior,
                     Eigen::Index full_dim);

/* Extract a submatrix by row/column index lists. */
SpMat submatrix(const SpMat& M, const IVec& rows, const IVec& cols);

}  // namespace sourcerec
