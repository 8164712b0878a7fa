#pragma once

#include <string>
#include <vector>

#include "sourcerec/types.hpp"

namespace sourcerec {

/* Matrix Market coordinate real interchange (1-based indices, %.17g values).
   With symmetric_lower=true only the lower triangle is stored and the banner
   says `symmetric`; reading a symmetric file mirrors it back to full form. */
void write_matrix_market(const std::string& path, const SpMat& M,
                         bool symmetric_lower = false);
SpMat read_matrix_market(const std::string& path);

/* Minimal numeric CSV: one header line, then rows of doubles. */
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Mat& columns);
struct CsvTable {
  std::vector<std::string> header;
  Mat columns;
};
CsvTable read_csv(const std::string& path);

std::string format_double(double v); /* shortest round-trip decimal */

}  // namespace sourcerec
