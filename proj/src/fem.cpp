#include "sourcerec/fem.hpp"

#include <Eigen/SparseLU>
#include <cmath>

namespace sourcerec {

namespace {

void check_coeffs(const Mesh& mesh, const PdeCoefficients& c) {
  if (c.diffusion < 0.0 || c.reaction < 0.0)
    throw ShapeMismatch("diffusion and reaction must be nonnegative");
  if (c.advection.size() != 0 &&
      (c.advection.rows() != mesh.n_nodes() || c.advection.cols() != mesh.dimension))
    throw ShapeMismatch("advection array must be node count x dimension");
}

}  // namespace

FemSystem assemble(const Mesh& mesh, const PdeCoefficients& coeffs) {
  check_coeffs(mesh, coeffs);
  const Eigen::Index n = mesh.n_nodes();
  const bool has_adv = coeffs.advection.size() != 0;
  std::vector<Triplet> td, tm, ta;

  if (mesh.dimension == 1) {
    for (Eigen::Index c = 0; c < mesh.n_cells(); ++c) {
      const int a = mesh.cells(c, 0), b = mesh.cells(c, 1);
      const double h = mesh.nodes(b, 0) - mesh.nodes(a, 0);
      td.emplace_back(a, a, 1.0 / h);
      td.emplace_back(b, b, 1.0 / h);
      td.emplace_back(a, b, -1.0 / h);
      td.emplace_back(b, a, -1.0 / h);
      tm.emplace_back(a, a, h / 3.0);
      tm.emplace_back(b, b, h / 3.0);
      tm.emplace_back(a, b, h / 6.0);
      tm.emplace_back(b, a, h / 6.0);
      if (has_adv) {
        const double va = coeffs.advection(a, 0), vb = coeffs.advection(b, 0);
        /* -int phi_i' (v phi_j), v linear over the element */
        ta.emplace_back(a, a, va / 3.0 + vb / 6.0);
        ta.emplace_back(a, b, va / 6.0 + vb / 3.0);
        ta.emplace_back(b, a, -(va / 3.0 + vb / 6.0));
        ta.emplace_back(b, b, -(va / 6.0 + vb / 3.0));
      }
    }
  } else {
    for (Eigen::Index c = 0; c < mesh.n_cells(); ++c) {
      const int v0 = mesh.cells(c, 0), v1 = mesh.cells(c, 1), v2 = mesh.cells(c, 2);
      const int vv[3] = {v0, v1, v2};
      const Eigen::Vector2d p0 = mesh.nodes.row(v0), p1 = mesh.nodes.row(v1),
                            p2 = mesh.nodes.row(v2);
      const double det = (p1 - p0).x() * (p2 - p0).y() - (p2 - p0).x() * (p1 - p0).y();
      const double area = 0.5 * det;
      if (!(area > 0.0)) throw InvalidExtent("triangle with nonpositive area");
      Eigen::Matrix<double, 2, 3> grad;
      const Eigen::Vector2d pts[3] = {p0, p1, p2};
      for (int i = 0; i < 3; ++i) {
        const Eigen::Vector2d e = pts[(i + 2) % 3] - pts[(i + 1) % 3];
        grad.col(i) = Eigen::Vector2d(-e.y(), e.x()) / det; /* grad phi_i */
      }
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          td.emplace_back(vv[i], vv[j], area * grad.col(i).dot(grad.col(j)));
          tm.emplace_back(vv[i], vv[j], area / 12.0 * (i == j ? 2.0 : 1.0));
        }
      if (has_adv) {
        Eigen::Vector2d vel[3], vsum = Eigen::Vector2d::Zero();
        for (int i = 0; i < 3; ++i) {
          vel[i] = coeffs.advection.row(vv[i]);
          vsum += vel[i];
        }
        /* int v phi_j = (area/12) (vsum + v_j), exact for linear v */
        for (int j = 0; j < 3; ++j) {
          const Eigen::Vector2d mom = area / 12.0 * (vsum + vel[j]);
          for (int i = 0; i < 3; ++i)
            ta.emplace_back(vv[i], vv[j], -grad.col(i).dot(mom));
        }
      }
    }
  }

  FemSystem sys;
  sys.mesh = mesh;
  sys.diffusion = coeffs.diffusion;
  sys.reaction = coeffs.reaction;
  sys.diffusion_part.resize(n, n);
  sys.diffusion_part.setFromTriplets(td.begin(), td.end());
  sys.mass.resize(n, n);
  sys.mass.setFromTriplets(tm.begin(), tm.end());
  sys.advection_part.resize(n, n);
  if (has_adv) sys.advection_part.setFromTriplets(ta.begin(), ta.end());

  std::vector<Triplet> tl;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double rowsum = sys.mass.row(i).sum();
    tl.emplace_back(static_cast<int>(i), static_cast<int>(i), rowsum);
  }
  sys.lumped_mass.resize(n, n);
  sys.lumped_mass.setFromTriplets(tl.begin(), tl.end());

  sys.stiffness = sys.advection_part + coeffs.diffusion * sys.diffusion_part +
                  coeffs.reaction * sys.mass;
  return sys;
}

FemSystem with_coefficients(const FemSystem& sys, double diffusion,
                            double reaction) {
  if (diffusion < 0.0 || reaction < 0.0)
    throw ShapeMismatch("diffusion and reaction must be nonnegative");
  FemSystem out = sys;
  out.diffusion = diffusion;
  out.reaction = reaction;
  out.stiffness =
      sys.advection_part + diffusion * sys.diffusion_part + reaction * sys.mass;
  return out;
}

SpMat submatrix(const SpMat& M, const IVec& rows, const IVec& cols) {
  IVec rowmap = IVec::Constant(M.rows(), -1);
  for (Eigen::Index k = 0; k < rows.size(); ++k) rowmap[rows[k]] = static_cast<int>(k);
  std::vector<Triplet> t;
  for (Eigen::Index k = 0; k < cols.size(); ++k) {
    for (SpMat::InnerIterator it(M, cols[k]); it; ++it) {
      const int r = rowmap[it.row()];
      if (r >= 0) t.emplace_back(r, static_cast<int>(k), it.value());
    }
  }
  SpMat out(rows.size(), cols.size());
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

CondensedSystem apply_dirichlet(const FemSystem& sys, const BoundaryValue& bc,
                                bool consistent_mass) {
  const Eigen::Index n = sys.dim();
  const IVec& drop = sys.mesh.boundary_nodes;
  if (bc.value.size() != drop.size())
    throw ShapeMismatch("boundary value length must equal boundary node count");
  if (bc.precision && (bc.precision->rows() != drop.size() ||
                       bc.precision->cols() != drop.size()))
    throw ShapeMismatch("boundary precision must be square over boundary nodes");

  std::vector<char> is_drop(static_cast<std::size_t>(n), 0);
  for (Eigen::Index k = 0; k < drop.size(); ++k) is_drop[drop[k]] = 1;
  IVec keep(n - drop.size());
  Eigen::Index q = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!is_drop[i]) keep[q++] = static_cast<int>(i);

  CondensedSystem cs;
  cs.keep = keep;
  cs.drop = drop;
  cs.boundary = bc;
  cs.consistent_mass = consistent_mass;
  cs.coupling = submatrix(sys.stiffness, keep, drop);
  cs.coupling_mass = submatrix(sys.mass, keep, drop);
  cs.rhs_offset = -(cs.coupling * bc.value);

  FemSystem& red = cs.reduced;
  red.stiffness = submatrix(sys.stiffness, keep, keep);
  red.mass = submatrix(sys.mass, keep, keep);
  red.lumped_mass = submatrix(sys.lumped_mass, keep, keep);
  red.diffusion_part = submatrix(sys.diffusion_part, keep, keep);
  red.advection_part = submatrix(sys.advection_part, keep, keep);
  red.diffusion = sys.diffusion;
  red.reaction = sys.reaction;
  red.mesh.dimension = sys.mesh.dimension;
  red.mesh.nodes.resize(keep.size(), sys.mesh.dimension);
  red.mesh.interior.resize(static_cast<std::size_t>(keep.size()));
  for (Eigen::Index k = 0; k < keep.size(); ++k) {
    red.mesh.nodes.row(k) = sys.mesh.nodes.row(keep[k]);
    red.mesh.interior[static_cast<std::size_t>(k)] = sys.mesh.interior[keep[k]];
  }
  red.mesh.domain_lo = sys.mesh.domain_lo;
  red.mesh.domain_hi = sys.mesh.domain_hi;
  red.mesh.boundary_nodes.resize(0);
  return cs;
}

Vec condensed_solve(const CondensedSystem& cs, const Vec& f_interior) {
  if (f_interior.size() != cs.keep.size())
    throw ShapeMismatch("interior source length mismatch");
  const SpMat& pairing = cs.consistent_mass ? cs.reduced.mass : cs.reduced.lumped_mass;
  const Vec rhs = pairing * f_interior + cs.rhs_offset;
  Eigen::SparseLU<SpMat> lu;
  lu.compute(cs.reduced.stiffness);
  if (lu.info() != Eigen::Success)
    throw SingularOperator("condensed stiffness is singular");
  return lu.solve(rhs);
}

Vec expand_condensed(const CondensedSystem& cs, const Vec& interior,
                     Eigen::Index full_dim) {
  if (interior.size() != cs.keep.size())
    throw ShapeMismatch("interior vector length mismatch");
  Vec out = Vec::Zero(full_dim);
  for (Eigen::Index k = 0; k < cs.keep.size(); ++k) out[cs.keep[k]] = interior[k];
  for (Eigen::Index k = 0; k < cs.drop.size(); ++k)
    out[cs.drop[k]] = cs.boundary.value[k];
  return out;
}

}  // namespace sourcerec
