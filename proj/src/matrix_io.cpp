#include "levy/matrix_io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace levy {

namespace {

std::vector<double> parse_row(std::string_view line, std::size_t line_no) {
  std::vector<double> row;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == ','))
      ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r' && line[j] != ',')
      ++j;
    double value = 0.0;
    const auto tok = line.substr(i, j - i);
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
      std::ostringstream os;
      os << "matrix parse error on row " << line_no << ": bad number '" << tok << "'";
      throw ConfigError(os.str());
    }
    row.push_back(value);
    i = j;
  }
  return row;
}

Matrix assemble(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  const std::size_t cols = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) {
      std::ostringstream os;
      os << "matrix parse error: row " << r + 1 << " has " << rows[r].size() << " entries, expected "
         << cols;
      throw ConfigError(os.str());
    }
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

std::vector<std::vector<double>> collect(std::string_view text, char separator) {
  std::vector<std::vector<double>> rows;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start <= text.size()) {
    auto end = text.find(separator, start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    ++line_no;
    auto row = parse_row(line, line_no);
    if (!row.empty()) rows.push_back(std::move(row));
    start = end + 1;
  }
  return rows;
}

}  // namespace

Matrix read_matrix(std::istream& in) {
  std::ostringstream buf;
  buf << in.rdbuf();
  return assemble(collect(buf.str(), '\n'));
}

Matrix read_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open matrix file '" + path + "'");
  return read_matrix(in);
}

Matrix parse_matrix(std::string_view text) {
  const char sep = text.find(';') != std::string_view::npos ? ';' : '\n';
  return assemble(collect(text, sep));
}

void write_matrix(std::ostream& out, const Matrix& m) {
  out << std::setprecision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
    out << '\n';
  }
}

void write_matrix_file(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write matrix file '" + path + "'");
  write_matrix(out, m);
}

std::string format_matrix_inline(const Matrix& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) os << "; ";
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << m(r, c);
  }
  return os.str();
}

}  // namespace levy
