#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "levy/symmetry.hpp"

namespace levy {

/// INI-style experiment configuration. Keys are addressed as "section.key";
/// every lookup failure or parse failure throws ConfigError.
class Config {
public:
  Config() = default;
  static Config from_text(const std::string& text, const std::string& source = "<text>");
  static Config from_file(const std::string& path);
  /// A preset name when one matches, a file path otherwise.
  static Config load(const std::string& name_or_path);

  const std::string& source() const noexcept { return source_; }
  bool has(const std::string& key) const;
  bool has_section(const std::string& section) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  Matrix get_matrix(const std::string& key) const;
  std::optional<Matrix> find_matrix(const std::string& key) const;
  std::vector<double> get_vector(const std::string& key) const;
  std::vector<double> get_vector(const std::string& key, const std::vector<double>& fallback) const;
  /// ';'-separated items, trimmed.
  std::vector<std::string> get_list(const std::string& key) const;

  std::string text() const;

private:
  boost::property_tree::ptree tree_;
  std::string source_;
};

const std::vector<std::string>& preset_names();
std::optional<std::string> preset_text(const std::string& name);

}  // namespace levy
