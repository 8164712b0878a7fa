#pragma once

#include <string>

#include "sourcerec/types.hpp"

namespace sourcerec {

/* Simplicial mesh (1-D segments or 2-D triangles) over the region of interest
   plus a surrounding buffer.  `interior[i]` flags nodes inside the region of
   interest; buffer and hull nodes are excluded from error integrals. */
struct Mesh {
  int dimension = 1;
  Mat nodes;              /* n x dimension */
  Eigen::MatrixXi cells;  /* m x (dimension+1), positive orientation in 2-D */
  std::vector<char> interior;
  IVec boundary_nodes;    /* hull nodes of the meshed (buffered) region */
  Vec domain_lo, domain_hi;

  Eigen::Index n_nodes() const { return nodes.rows(); }
  Eigen::Index n_cells() const { return cells.rows(); }
};

Mesh build_interval_mesh(double a, double b, int n_nodes, double buffer);
Mesh build_rect_mesh(double x0, double x1, double y0, double y1, int nx, int ny,
                     double buffer);

/* Containing cell and barycentric weights of a point (hull-inclusive). */
struct CellHit {
  int cell;
  Vec weights; /* one per cell vertex, nonnegative, summing to 1 */
};
CellHit locate(const Mesh& mesh, const Vec& point);

/* Node/cell tables as CSV (id, coordinates, interior flag / node ids). */
void write_mesh_csv(const Mesh& mesh, const std::string& node_path,
                    const std::string& cell_path);

}  // namespace sourcerec
