#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "levy/config.hpp"
#include "levy/fast_system.hpp"
#include "levy/homogenise.hpp"
#include "levy/observable.hpp"
#include "levy/ou.hpp"

namespace levy {

/// Exit statuses shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitConfig = 2;

struct RunContext {
  std::string out_dir = "out";
  std::size_t threads = 1;
  // overrides run.seed
  std::optional<std::uint64_t> seed;
  // progress lines; null keeps quiet
  std::ostream* log = nullptr;
};

/// Fast system selected by [system]; the OU process is represented by a
/// null system of the same dimension with variables y1..ym.
FastSystem system_from_config(const Config& cfg);
bool is_ou_config(const Config& cfg);
OUSurrogate ou_from_config(const Config& cfg);
SlowField slow_from_config(const Config& cfg);

/// Parses and checks every matrix and name the commands depend on (R, A, S,
/// slow A) without running anything expensive. Throws ConfigError.
void validate_config(const Config& cfg);

/// Observable described by [observable]; constructed kinds calibrate a basis.
Observable observable_from_config(const Config& cfg, const FastSystem& system, const RunContext& ctx);

std::uint64_t base_seed(const Config& cfg, const RunContext& ctx);
/// Independent seed per purpose tag, derived from the base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

int cmd_check_symmetry(const Config& cfg, const RunContext& ctx);
int cmd_estimate(const Config& cfg, const RunContext& ctx);
int cmd_construct(const Config& cfg, const RunContext& ctx);
int cmd_compare(const Config& cfg, const RunContext& ctx);
/// Collects the JSON results found in the output directory.
int cmd_report(const Config& cfg, const RunContext& ctx);

const std::vector<std::string>& command_names();
/// Runs a command by name; ConfigError maps to 2, any other error to 1.
int run_command(const std::string& name, const Config& cfg, const RunContext& ctx, std::ostream& err);

}  // namespace levy
