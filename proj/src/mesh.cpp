#include "sourcerec/mesh.hpp"

#include <algorithm>
#include <cmath>

#include "sourcerec/io.hpp"

namespace sourcerec {

namespace {
bool inside(double x, double lo, double hi, double tol) {
  return x >= lo - tol && x <= hi + tol;
}
}  // namespace

Mesh build_interval_mesh(double a, double b, int n_nodes, double buffer) {
  if (!(b > a)) throw InvalidExtent("interval requires b > a");
  if (n_nodes < 2) throw InvalidExtent("need at least 2 nodes");
  if (buffer < 0.0) throw InvalidExtent("buffer must be nonnegative");
  Mesh mesh;
  mesh.dimension = 1;
  const double lo = a - buffer, hi = b + buffer;
  const double h = (hi - lo) / (n_nodes - 1);
  mesh.nodes.resize(n_nodes, 1);
  for (int i = 0; i < n_nodes; ++i) mesh.nodes(i, 0) = lo + h * i;
  mesh.cells.resize(n_nodes - 1, 2);
  for (int i = 0; i + 1 < n_nodes; ++i) {
    mesh.cells(i, 0) = i;
    mesh.cells(i, 1) = i + 1;
  }
  const double tol = 1e-9 * (hi - lo);
  mesh.interior.resize(n_nodes);
  for (int i = 0; i < n_nodes; ++i)
    mesh.interior[i] = inside(mesh.nodes(i, 0), a, b, tol) ? 1 : 0;
  mesh.boundary_nodes.resize(2);
  mesh.boundary_nodes << 0, n_nodes - 1;
  mesh.domain_lo = Vec::Constant(1, a);
  mesh.domain_hi = Vec::Constant(1, b);
  return mesh;
}

Mesh build_rect_mesh(double x0, double x1, double y0, double y1, int nx, int ny,
                     double buffer) {
  if (!(x1 > x0) || !(y1 > y0)) throw InvalidExtent("rectangle extents inverted");
  if (nx < 2 || ny < 2) throw InvalidExtent("need at least 2 nodes per side");
  if (buffer < 0.0) throw InvalidExtent("buffer must be nonnegative");
  Mesh mesh;
  mesh.dimension = 2;
  const double lx = x0 - buffer, hx = x1 + buffer;
  const double ly = y0 - buffer, hy = y1 + buffer;
  const double dx = (hx - lx) / (nx - 1), dy = (hy - ly) / (ny - 1);
  const int n = nx * ny;
  mesh.nodes.resize(n, 2);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int k = j * nx + i;
      mesh.nodes(k, 0) = lx + dx * i;
      mesh.nodes(k, 1) = ly + dy * j;
    }
  mesh.cells.resize(2 * (nx - 1) * (ny - 1), 3);
  int c = 0;
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const int k = j * nx + i;
      /* counterclockwise split of each quad */
      mesh.cells.row(c++) << k, k + 1, k + nx + 1;
      mesh.cells.row(c++) << k, k + nx + 1, k + nx;
    }
  const double tol = 1e-9 * std::max(hx - lx, hy - ly);
  mesh.interior.resize(n);
  std::vector<int> hull;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int k = j * nx + i;
      mesh.interior[k] = (inside(mesh.nodes(k, 0), x0, x1, tol) &&
                          inside(mesh.nodes(k, 1), y0, y1, tol))
                             ? 1
                             : 0;
      if (i == 0 || i == nx - 1 || j == 0 || j == ny - 1) hull.push_back(k);
    }
  mesh.boundary_nodes.resize(static_cast<Eigen::Index>(hull.size()));
  for (std::size_t t = 0; t < hull.size(); ++t)
    mesh.boundary_nodes[static_cast<Eigen::Index>(t)] = hull[t];
  mesh.domain_lo = (Vec(2) << x0, y0).finished();
  mesh.domain_hi = (Vec(2) << x1, y1).finished();
  return mesh;
}

CellHit locate(const Mesh& mesh, const Vec& point) {
  if (point.size() != mesh.dimension)
    throw ShapeMismatch("point dimension does not match mesh");
  if (mesh.dimension == 1) {
    const double x = point[0];
    const int n = static_cast<int>(mesh.n_nodes());
    const double lo = mesh.nodes(0, 0), hi = mesh.nodes(n - 1, 0);
    const double tol = 1e-9 * (hi - lo);
    if (x < lo - tol || x > hi + tol)
      throw LocationOutsideMesh("x=" + std::to_string(x) + " outside mesh");
    int c = 0;
    /* nodes strictly increasing: binary search for the containing segment */
    int a = 0, b = n - 1;
    while (b - a > 1) {
      const int m = (a + b) / 2;
      if (mesh.nodes(m, 0) <= x)
        a = m;
      else
        b = m;
    }
    c = std::min(a, n - 2);
    const double xa = mesh.nodes(c, 0), xb = mesh.nodes(c + 1, 0);
    double t = (x - xa) / (xb - xa);
    t = std::clamp(t, 0.0, 1.0);
    CellHit hit;
    hit.cell = c;
    hit.weights = (Vec(2) << 1.0 - t, t).finished();
    return hit;
  }
  /* 2-D: scan cells for nonnegative barycentric coordinates */
  const double scale = (mesh.nodes.colwise().maxCoeff() -
                        mesh.nodes.colwise().minCoeff())
                           .maxCoeff();
  const double tol = 1e-9 * scale;
  for (int c = 0; c < mesh.n_cells(); ++c) {
    const auto p0 = mesh.nodes.row(mesh.cells(c, 0));
    const auto p1 = mesh.nodes.row(mesh.cells(c, 1));
    const auto p2 = mesh.nodes.row(mesh.cells(c, 2));
    const double det = (p1.x() - p0.x()) * (p2.y() - p0.y()) -
                       (p2.x() - p0.x()) * (p1.y() - p0.y());
    if (det == 0.0) continue;
    const double w1 = ((point[0] - p0.x()) * (p2.y() - p0.y()) -
                       (p2.x() - p0.x()) * (point[1] - p0.y())) /
                      det;
    const double w2 = ((p1.x() - p0.x()) * (point[1] - p0.y()) -
                       (point[0] - p0.x()) * (p1.y() - p0.y())) /
                      det;
    const double w0 = 1.0 - w1 - w2;
    if (w0 >= -tol && w1 >= -tol && w2 >= -tol) {
      Vec w = (Vec(3) << w0, w1, w2).finished();
      w = w.cwiseMax(0.0);
      w /= w.sum();
      CellHit hit;
      hit.cell = c;
      hit.weights = w;
      return hit;
    }
  }
  throw LocationOutsideMesh("point outside triangulation");
}

void write_mesh_csv(const Mesh& mesh, const std::string& node_path,
                    const std::string& cell_path) {
  const Eigen::Index n = mesh.n_nodes();
  Mat nodes(n, 2 + mesh.dimension);
  std::vector<std::string> header{"id"};
  header.push_back("x");
  if (mesh.dimension == 2) header.push_back("y");
  header.push_back("interior");
  for (Eigen::Index i = 0; i < n; ++i) {
    nodes(i, 0) = static_cast<double>(i);
    for (int d = 0; d < mesh.dimension; ++d) nodes(i, 1 + d) = mesh.nodes(i, d);
    nodes(i, 1 + mesh.dimension) = mesh.interior[i] ? 1.0 : 0.0;
  }
  write_csv(node_path, header, nodes);

  std::vector<std::string> cell_header;
  for (int v = 0; v <= mesh.dimension; ++v)
    cell_header.push_back("node" + std::to_string(v));
  Mat cells = mesh.cells.cast<double>();
  write_csv(cell_path, cell_header, cells);
}

}  // namespace sourcerec
