#pragma once

#include <iosfwd>
#include <string>
#include <string_view>

#include "levy/symmetry.hpp"

namespace levy {

// Plain-text matrices: one row per line, whitespace-separated decimals,
// '#' starts a comment. Inline form (config values) separates rows by ';'.

Matrix read_matrix(std::istream& in);
Matrix read_matrix_file(const std::string& path);
Matrix parse_matrix(std::string_view text);

void write_matrix(std::ostream& out, const Matrix& m);
void write_matrix_file(const std::string& path, const Matrix& m);
std::string format_matrix_inline(const Matrix& m);

}  // namespace levy
