#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>

#include "levy/fast_system.hpp"

namespace levy {

// Binary trajectory stream: 16-byte header (magic "FSTJ", u16 version,
// u16 dimension, f64 step), then little-endian f64 records of `dim` values.
inline constexpr std::uint16_t kTrajectoryFormatVersion = 1;

class TrajectoryWriter {
public:
  TrajectoryWriter(const std::string& path, std::size_t dim, double step);
  void append(std::span<const double> point);
  void append(const Trajectory& traj);
  std::size_t records() const noexcept { return records_; }

private:
  std::ofstream out_;
  std::size_t dim_;
  std::size_t records_ = 0;
};

Trajectory read_trajectory(const std::string& path);
void write_trajectory(const std::string& path, const Trajectory& traj);

/// Header "t,<names...>", one row per point.
void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                          const std::vector<std::string>& names = {});

}  // namespace levy
