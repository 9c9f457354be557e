#include "levy/config.hpp"

#include <boost/property_tree/ini_parser.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "levy/matrix_io.hpp"

namespace levy {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const std::map<std::string, std::string>& presets() {
  static const std::map<std::string, std::string> p = {
      {"nose-hoover", R"([run]
seed = 1

[system]
name = nose-hoover
temperature = 1

[observable]
kind = polynomial
components = q ; p
equivariance = 1 0 ; 0 -1

[estimate]
duration = 100000
step = 0.01
thin = 5
t_max = 60
lag_stride = 2
batches = 40

[construct]
mode = realize
target = 1
basis_degree = 2
calib_duration = 200000
verify_duration = 100000
)"},
      {"nose-hoover-pair", R"([run]
seed = 1

[system]
name = nose-hoover-pair
kappa = 1
alpha = 1
temperature = 1

[observable]
kind = random
equivariance = 1 0 0 ; 0 -1 0 ; 0 0 -1
degree = 2
seed = 5

[estimate]
duration = 100000
step = 0.01
thin = 5
t_max = 60
lag_stride = 2
batches = 40

[construct]
mode = realize
target = 2 0 ; 0 -1
basis_degree = 2
calib_duration = 400000
verify_duration = 100000
)"},
      {"ou-oracle", R"([run]
seed = 1

[system]
name = ou
gamma = 1 -1 ; 1 1
noise = 1.4142135623730951 0 ; 0 1.4142135623730951

[observable]
kind = identity

[estimate]
points = 1000000
step = 0.01
t_max = 10
lag_stride = 4
batches = 40
)"},
      {"section6-testbed", R"([run]
seed = 1

[system]
name = nose-hoover-pair

[observable]
kind = constructed
target = 2
basis_degree = 2
basis_count = 1
extra = 0 ; 0.5*z1
calib_duration = 200000

[estimate]
duration = 200000
step = 0.01
thin = 5
t_max = 60
lag_stride = 2
batches = 40

[slow]
kind = section6
d = 2
fixed = 1
i = 1
j = 2

[homogenise]
epsilons = 0.2 0.1 0.05
epsilon = 0.05
members = 2000
horizon = 1
step_fast = 0.01
xi = 1 0
sde_step = 0.001
control_repetitions = 10

[compare]
ks_p_floor = 0.01
mean_se = 3
control_min_failures = 9
)"},
  };
  return p;
}

}  // namespace

Config Config::from_text(const std::string& text, const std::string& source) {
  Config c;
  c.source_ = source;
  std::istringstream in(text);
  try {
    pt::read_ini(in, c.tree_);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return c;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), path);
}

Config Config::load(const std::string& name_or_path) {
  if (auto t = preset_text(name_or_path); t && !std::filesystem::exists(name_or_path))
    return from_text(*t, "preset:" + name_or_path);
  return from_file(name_or_path);
}

bool Config::has(const std::string& key) const { return static_cast<bool>(tree_.get_optional<std::string>(key)); }

bool Config::has_section(const std::string& section) const {
  return static_cast<bool>(tree_.get_child_optional(section));
}

void Config::set(const std::string& key, const std::string& value) { tree_.put(key, value); }

std::string Config::get_string(const std::string& key) const {
  auto v = tree_.get_optional<std::string>(key);
  if (!v) throw ConfigError(source_ + ": missing key " + key);
  return trim(*v);
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}

double Config::get_double(const std::string& key) const {
  const std::string s = get_string(key);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(source_ + ": " + key + " = '" + s + "' is not a number");
  return v;
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
  if (!has(key)) return fallback;
  const std::string s = get_string(key);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    // allow 1e6 style counts
    const double d = get_double(key);
    if (!(d >= 0.0) || d != static_cast<double>(static_cast<std::size_t>(d)))
      throw ConfigError(source_ + ": " + key + " = '" + s + "' is not a count");
    return static_cast<std::size_t>(d);
  }
  return v;
}

std::uint64_t Config::get_seed(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string s = get_string(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(source_ + ": " + key + " = '" + s + "' is not a seed");
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string s = get_string(key);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError(source_ + ": " + key + " = '" + s + "' is not a boolean");
}

Matrix Config::get_matrix(const std::string& key) const {
  const std::string s = get_string(key);
  try {
    return parse_matrix(s);
  } catch (const Error& e) {
    throw ConfigError(source_ + ": " + key + ": " + e.what());
  }
}

std::optional<Matrix> Config::find_matrix(const std::string& key) const {
  if (!has(key)) return std::nullopt;
  return get_matrix(key);
}

std::vector<double> Config::get_vector(const std::string& key) const {
  const Matrix m = get_matrix(key);
  std::vector<double> out;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

std::vector<double> Config::get_vector(const std::string& key, const std::vector<double>& fallback) const {
  return has(key) ? get_vector(key) : fallback;
}

std::vector<std::string> Config::get_list(const std::string& key) const {
  const std::string s = get_string(key);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(';', start);
    out.push_back(trim(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string Config::text() const {
  std::ostringstream out;
  pt::write_ini(out, tree_);
  return out.str();
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, v] : presets()) n.push_back(k);
    return n;
  }();
  return names;
}

std::optional<std::string> preset_text(const std::string& name) {
  const auto it = presets().find(name);
  if (it == presets().end()) return std::nullopt;
  return it->second;
}

}  // namespace levy
