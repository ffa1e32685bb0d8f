#pragma once

// File formats owned by the command-line tool: JSON configs and outputs
// (each with a versioned "schema" field), the participant CSV and the run
// manifest.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "strata_id/identifiability.hpp"
#include "strata_id/inference.hpp"
#include "strata_id/population.hpp"
#include "strata_id/simulate.hpp"

namespace strata::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Bad arguments or malformed input; exit code 64.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A check or identification failed on valid input; exit code 2.
class DomainFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kSchemaDesign = "strata-id/design/1";
inline constexpr const char* kSchemaSim = "strata-id/sim/1";
inline constexpr const char* kSchemaParams = "strata-id/params/1";
inline constexpr const char* kSchemaCells = "strata-id/cells/1";
inline constexpr const char* kSchemaPriors = "strata-id/priors/1";
inline constexpr const char* kSchemaReport = "strata-id/check-report/1";
inline constexpr const char* kSchemaIdentified = "strata-id/identified/1";
inline constexpr const char* kSchemaFit = "strata-id/fit/1";
inline constexpr const char* kSchemaManifest = "strata-id/manifest/1";

std::string tool_version();

json read_json_file(const fs::path& path);
void require_schema(const json& j, std::string_view expected);
std::string read_text_file(const fs::path& path);
/// Refuses to replace an existing file unless force is set.
void check_writable(const fs::path& path, bool force);
void write_text_file(const fs::path& path, const std::string& text);
/// Sorted keys, two-space indent, trailing newline.
std::string dump(const json& j);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);
/// Shortest text that reads back to the same double; "NA" for NaN.
std::string format_double(double v);

/// Worker cap: hardware concurrency, lowered by STRATA_ID_THREADS.
int available_threads();

json shape_to_json(const TrialShape& s);
TrialShape shape_from_json(const json& j);
json matrix_to_json(const Matrix& m);  // array of rows, NaN as null
Matrix matrix_from_json(const json& j, const std::string& what);
json vector_to_json(const Vector& v);
Vector vector_from_json(const json& j, const std::string& what);

json params_to_json(const PopulationParams& p);
PopulationParams params_from_json(const json& j);

json cells_to_json(const CellCounts& c);
CellCounts cells_from_json(const json& j);

/// id,z,r,x,a_obs,s_obs,y_obs (+ a_true,stratum,y_true with oracle columns).
std::string dataset_csv(const TrialDataset& data, bool oracle);
/// Aggregates a participant CSV. Labels are 1-based; the shape defaults to
/// the largest label seen in each column (n_z at least 2).
CellCounts cells_from_csv(const std::string& text, const std::optional<TrialShape>& shape = {});

/// Design file: either explicit factor matrices or a named scenario whose
/// first covariate stratum supplies the factors.
struct DesignInput {
  Matrix P_A_given_strata;
  Matrix P_strata_given_R;
  double sn_S = 1.0, sp_S = 1.0;
  Theorem theorem = Theorem::T2;
};
DesignInput design_from_json(const json& j);
json report_to_json(const DesignCheckReport& r);

/// Simulation config file (every key optional except schema).
SimConfig sim_config_from_json(const json& j);
json sim_config_to_json(const SimConfig& c);

/// Overrides on top of the default priors.
void apply_priors(const json& j, PriorConfig& priors);
json priors_to_json(const PriorConfig& p);

json identified_to_json(const IdentifiedQuantities& id);
/// Largest absolute gaps between recovered quantities and the generating params.
json truth_errors(const IdentifiedQuantities& id, const PopulationParams& truth);

json fit_to_json(const FitResult& fit, const SamplerConfig& cfg, const PriorConfig& priors,
                 const std::optional<Decision>& decision, const std::optional<DecisionRule>& rule);
/// Gzip-compressed CSV of the draws, one column per parameter.
void write_draws_gz(const fs::path& path, const FitResult& fit);

/// trial,measurements,n,power,ci_lo,ci_hi
std::string power_csv(const PowerResult& r);
std::string replicates_csv(const PowerResult& r);

struct Manifest {
  std::string command;
  json config;
  std::uint64_t master_seed = 0;
  double wall_clock_seconds = 0.0;
  std::vector<fs::path> outputs;
};
/// Config hash is FNV-1a over the sorted-key compact dump of the config;
/// each output is listed with its size and FNV-1a digest.
json manifest_to_json(const Manifest& m);

}  // namespace strata::cli
