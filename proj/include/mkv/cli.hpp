#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "mkv/core.hpp"
#include "mkv/models.hpp"
#include "mkv/taming.hpp"

namespace mkv {

/// First line of every CSV written by the CLI.
inline constexpr const char* csv_schema_line = "# mkv-milstein schema v1";
inline constexpr const char* code_version = "0.1.0";

/// Fully resolved experiment configuration. JSON layout (all keys but
/// `command` and `model.name` optional):
///
///   command     simulate | rate | poc | verify | probe
///   model       {name, params{...}}
///   scheme, taming, horizon, steps, particles, runs, seed, threads,
///   substeps, initial{mean, stddev}, epsilon, output
///   simulate    {store_path}
///   rate        {resolutions, reference, schemes}
///   poc         {sizes, reference}
///   verify      {suites, samples, ito_tagged, ito_halving}
///   probe       {samples, atoms, radius, shells, resolutions, monotone_alpha}
///   version     written into manifests, ignored when read
struct ExperimentConfig {
    std::string command;
    std::string model;
    ParamTable params;  // complete after parsing: defaults merged with overrides
    RunConfig run;
    double epsilon = 0.5;  // reporting label for the rate target
    std::string output;

    bool store_path = true;

    std::vector<std::size_t> resolutions{8, 16, 32, 64, 128, 256};
    std::size_t rate_reference = 4096;
    std::vector<Scheme> schemes{Scheme::milstein, Scheme::euler};

    std::vector<std::size_t> poc_sizes{50, 100, 200, 400};
    std::size_t poc_reference = 3200;

    std::vector<std::string> suites{"model", "taming", "noise", "taylor", "power", "ito"};
    std::size_t verify_samples = 10000;
    std::size_t ito_tagged = 1;
    bool ito_halving = false;

    ProbeSpec probe;

    ExperimentConfig();

    /// Rejects unknown keys and missing required keys with ConfigError naming
    /// the key path.
    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Sets the dotted `path` of `j` to `value`, read as JSON when it parses and as
/// a string otherwise.
void apply_override(nlohmann::json& j, const std::string& path, const std::string& value);

/// Shortest round-trip decimal form of v.
std::string format_number(double v);

/// Entry point of the mkv_milstein tool; args excludes the program name.
/// Returns 0 on success, 1 on usage errors and 2 on experiment failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mkv
