#ifndef SIEVE_RUNNER_HPP
#define SIEVE_RUNNER_HPP

#include <sieve/cell.hpp>
#include <sieve/energy.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace sieve {

inline constexpr const char* kArtifactVersion = "1.0.0";

/// A validated experiment description. `data` is the normalized JSON form
/// with every default filled in, so to_json(parse_config(j)) is a fixed point.
struct ExperimentConfig {
  nlohmann::json data;

  const std::string command() const { return data.at("command").get<std::string>(); }
  std::uint64_t seed() const { return data.at("seed").get<std::uint64_t>(); }
};

/// Validates keys and physical constraints and fills defaults. Throws
/// Error(validation) on unknown keys or violated constraints.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// 64-bit FNV-1a of a string.
std::uint64_t fnv1a(const std::string& bytes);
/// Hash of the canonical (sorted-key, compact) serialization.
std::uint64_t config_hash(const nlohmann::json& j);
std::string hex64(std::uint64_t h);

EnergyDensity density_from_json(const nlohmann::json& block);

/// On-disk cache of truncated cell solves keyed by their inputs.
class ResultCache {
 public:
  explicit ResultCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  /// A miss returns nullopt; a corrupt or mismatched entry is a miss and
  /// appends a warning.
  std::optional<CellSolve> lookup(const nlohmann::json& key, std::vector<std::string>& warnings) const;
  void store(const nlohmann::json& key, const CellSolve& solve) const;
  std::filesystem::path path_for(const nlohmann::json& key) const;

 private:
  std::filesystem::path dir_;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty selects output.directory
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  bool use_cache = true;
};

struct RunOutcome {
  int exit_code = 0;  // 0 success, 2 validation, 3 non-convergence
  std::vector<std::string> files;
  std::vector<std::string> warnings;
  std::string error;
};

/// Executes the command and writes CSV (and JSON) results plus manifest.json
/// into the output directory.
RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

/// Loads, runs and reports errors on `err`; returns the exit status.
int run(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& err);

}  // namespace sieve

#endif  // SIEVE_RUNNER_HPP
