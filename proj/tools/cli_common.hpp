#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "psim/dataset.hpp"
#include "psim/metric.hpp"
#include "psim/triplets.hpp"

namespace psim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

/// Built-in defaults for every configurable field.
nlohmann::json default_config();

/// Applies "a.b.c=value"; value is parsed as JSON when possible, else kept as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);
void set_path(nlohmann::json& config, const std::string& dotted, nlohmann::json value);
const nlohmann::json& get_path(const nlohmann::json& config, const std::string& dotted);

/// Shared state of one invocation: the resolved config and the manifest being built.
struct Context {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = default_config();
  std::string config_file;
  std::vector<std::string> overrides;
  int jobs = 0;
  nlohmann::json outputs = nlohmann::json::object();
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  /// Flag bindings: option text and the config path it overrides.
  std::vector<std::pair<CLI::Option*, std::string>> bindings;
  std::deque<std::string> binding_values;

  /// Loads the config file, applies --set overrides, then flag bindings.
  void resolve();
  int effective_jobs() const;
  /// Writes the run manifest to path.
  void write_manifest(const std::filesystem::path& path) const;
};

/// Registers --flag as an override of a config path.
void bind(CLI::App* app, Context& ctx, const std::string& flag, const std::string& path, const std::string& help);
void add_common(CLI::App* app, Context& ctx);

SamplerConfig sampler_config(const nlohmann::json& config);
MetricModel model_from_options(const std::string& model_dir, const nlohmann::json& config);

/// Loads records from a dataset file and their images (paths relative to the file's directory).
TripletSet load_set(const std::filesystem::path& dataset_path, const Dataset& dataset, int size, int jobs,
                    bool require_label);

std::vector<int> parse_int_list(const std::string& text);
void ensure_dir(const std::filesystem::path& dir);

void register_data_commands(CLI::App& app, Context& ctx);
void register_model_commands(CLI::App& app, Context& ctx);
void register_app_commands(CLI::App& app, Context& ctx);

}  // namespace psim::cli

namespace psim::cli {

// Pipeline stages; each records its outputs in ctx.outputs.
Dataset stage_generate(Context& ctx, const std::filesystem::path& out_dir);
std::vector<RoundInput> stage_simulate(Context& ctx, const Dataset& pool, const std::filesystem::path& out);
Dataset stage_filter(Context& ctx, const Dataset& pool, const std::vector<RoundInput>& stream,
                     const std::filesystem::path& out);
Dataset stage_split(Context& ctx, Dataset dataset, const std::filesystem::path& out);
/// Trains on the train split with validation selection; returns the tuned model.
MetricModel stage_train(Context& ctx, const std::filesystem::path& dataset_path, const Dataset& dataset,
                        const std::filesystem::path& out_dir, std::ostream* progress);
nlohmann::json stage_eval(Context& ctx, const MetricModel& model, const std::filesystem::path& dataset_path,
                          const Dataset& dataset, const std::string& split);

}  // namespace psim::cli
