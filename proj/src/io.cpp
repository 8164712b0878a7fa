#include "sourcerec/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace sourcerec {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_matrix_market(const std::string& path, const SpMat& M,
                         bool symmetric_lower) {
  std::ofstream out(path);
  if (!out) throw ConfigInvalid("cannot open for writing: " + path);
  out << "%%MatrixMarket matrix coordinate real "
      << (symmetric_lower ? "symmetric" : "general") << "\n";
  std::vector<std::string> lines;
  long long nnz = 0;
  for (int j = 0; j < M.outerSize(); ++j)
    for (SpMat::InnerIterator it(M, j); it; ++it) {
      if (symmetric_lower && it.row() < j) continue;
      lines.push_back(std::to_string(it.row() + 1) + " " + std::to_string(j + 1) +
                      " " + format_double(it.value()));
      ++nnz;
    }
  out << M.rows() << " " << M.cols() << " " << nnz << "\n";
  for (const auto& l : lines) out << l << "\n";
}

SpMat read_matrix_market(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open: " + path);
  std::string banner;
  if (!std::getline(in, banner) || banner.rfind("%%MatrixMarket", 0) != 0)
    throw ConfigInvalid("not a MatrixMarket file: " + path);
  const bool symmetric = banner.find("symmetric") != std::string::npos;
  if (banner.find("coordinate") == std::string::npos ||
      banner.find("real") == std::string::npos)
    throw ConfigInvalid("only coordinate real matrices are supported: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '%') break;
  }
  std::istringstream hdr(line);
  long long rows = 0, cols = 0, nnz = 0;
  if (!(hdr >> rows >> cols >> nnz) || rows < 0 || cols < 0)
    throw ConfigInvalid("bad size line in " + path);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(symmetric ? 2 * nnz : nnz));
  for (long long k = 0; k < nnz; ++k) {
    long long i = 0, j = 0;
    double v = 0.0;
    if (!(in >> i >> j >> v)) throw ConfigInvalid("truncated entries in " + path);
    if (i < 1 || i > rows || j < 1 || j > cols)
      throw ConfigInvalid("entry out of range in " + path);
    trips.emplace_back(static_cast<int>(i - 1), static_cast<int>(j - 1), v);
    if (symmetric && i != j)
      trips.emplace_back(static_cast<int>(j - 1), static_cast<int>(i - 1), v);
  }
  SpMat M(static_cast<int>(rows), static_cast<int>(cols));
  M.setFromTriplets(trips.begin(), trips.end());
  return M;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Mat& columns) {
  if (static_cast<Eigen::Index>(header.size()) != columns.cols())
    throw ShapeMismatch("csv header does not match column count");
  std::ofstream out(path);
  if (!out) throw ConfigInvalid("cannot open for writing: " + path);
  for (std::size_t c = 0; c < header.size(); ++c)
    out << header[c] << (c + 1 < header.size() ? "," : "");
  out << "\n";
  for (Eigen::Index r = 0; r < columns.rows(); ++r) {
    for (Eigen::Index c = 0; c < columns.cols(); ++c)
      out << format_double(columns(r, c)) << (c + 1 < columns.cols() ? "," : "");
    out << "\n";
  }
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open: " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ConfigInvalid("empty csv: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::istringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.header.push_back(cell);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigInvalid("non-numeric cell '" + cell + "' in " + path);
      }
    }
    if (row.size() != table.header.size())
      throw ConfigInvalid("ragged row in " + path);
    rows.push_back(std::move(row));
  }
  table.columns.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(table.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      table.columns(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          rows[r][c];
  return table;
}

}  // namespace sourcerec
