#include "levy/trajectory_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <iomanip>

namespace levy {

namespace {

static_assert(std::endian::native == std::endian::little, "binary trajectory I/O assumes a little-endian host");

template <class T>
void put(std::ofstream& out, T value) {
  std::array<char, sizeof(T)> buf{};
  std::memcpy(buf.data(), &value, sizeof(T));
  out.write(buf.data(), buf.size());
}

template <class T>
T get(std::ifstream& in) {
  std::array<char, sizeof(T)> buf{};
  in.read(buf.data(), buf.size());
  if (!in) throw Error("truncated trajectory file");
  T value;
  std::memcpy(&value, buf.data(), sizeof(T));
  return value;
}

}  // namespace

TrajectoryWriter::TrajectoryWriter(const std::string& path, std::size_t dim, double step)
    : out_(path, std::ios::binary | std::ios::trunc), dim_(dim) {
  if (!out_) throw Error("cannot open trajectory file '" + path + "' for writing");
  if (dim == 0 || dim > 0xFFFF) throw DimensionError("trajectory dimension must be in 1..65535");
  out_.write("FSTJ", 4);
  put<std::uint16_t>(out_, kTrajectoryFormatVersion);
  put<std::uint16_t>(out_, static_cast<std::uint16_t>(dim));
  put<double>(out_, step);
}

void TrajectoryWriter::append(std::span<const double> point) {
  if (point.size() != dim_) throw DimensionError("trajectory record has wrong dimension");
  for (double v : point) put<double>(out_, v);
  ++records_;
}

void TrajectoryWriter::append(const Trajectory& traj) {
  for (std::size_t i = 0; i < traj.size(); ++i) append(traj.point(i));
  out_.flush();
}

Trajectory read_trajectory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open trajectory file '" + path + "'");
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || std::memcmp(magic.data(), "FSTJ", 4) != 0) throw Error("not a trajectory file: bad magic");
  const auto version = get<std::uint16_t>(in);
  if (version != kTrajectoryFormatVersion) throw Error("unsupported trajectory format version");
  Trajectory traj;
  traj.dim = get<std::uint16_t>(in);
  traj.step = get<double>(in);
  std::array<char, 8> buf{};
  while (in.read(buf.data(), 8)) {
    double v;
    std::memcpy(&v, buf.data(), 8);
    traj.data.push_back(v);
  }
  if (in.gcount() != 0 || traj.data.size() % traj.dim != 0) throw Error("truncated trajectory file");
  return traj;
}

void write_trajectory(const std::string& path, const Trajectory& traj) {
  TrajectoryWriter w(path, traj.dim, traj.step);
  w.append(traj);
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                          const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "t";
  for (std::size_t k = 0; k < traj.dim; ++k)
    out << ',' << (k < names.size() ? names[k] : "y" + std::to_string(k + 1));
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out << traj.start_time + traj.step * static_cast<double>(i);
    for (double v : traj.point(i)) out << ',' << v;
    out << '\n';
  }
}

}  // namespace levy
