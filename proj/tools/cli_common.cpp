#include "cli_common.hpp"

#include <fstream>
#include <sstream>

#include "psim/annotation_service.hpp"
#include "psim/annotator.hpp"
#include "psim/checkpoint.hpp"
#include "psim/error.hpp"
#include "psim/hash.hpp"
#include "psim/inversion.hpp"
#include "psim/lora.hpp"
#include "psim/parallel.hpp"
#include "psim/scene.hpp"
#include "psim/training.hpp"

namespace psim::cli {

nlohmann::json default_config() {
  nlohmann::json c;
  c["seed"] = 0;
  c["vit"] = ViTConfig{};
  c["sampler"] = SamplerConfig{};
  c["generate"] = {{"n", 2000}, {"size", 64}};
  const CampaignSimConfig sim;
  c["simulate"] = {{"flip_prob", sim.flip_prob},
                   {"failing_worker_fraction", sim.failing_worker_fraction},
                   {"tasks_per_worker", sim.tasks_per_worker},
                   {"sentinels_per_worker", sim.sentinels_per_worker},
                   {"rounds", sim.rounds}};
  c["split"] = {{"train", 0.8}, {"val", 0.1}, {"test", 0.1}, {"min_votes", kDefaultMinVotes}};
  c["model"] = {{"backbones", 1}, {"tuning", "lora"}, {"head_width", kDefaultHeadWidth}, {"seed", 1}};
  c["lora"] = LoraConfig{};
  TrainConfig train;
  train.batch_size = 0;  // 0: pick by backbone count
  c["train"] = train;
  c["train"].erase("jobs");
  c["inversion"] = InversionConfig{};
  c["campaign"] = CampaignConfig{};
  return c;
}

void set_path(nlohmann::json& config, const std::string& dotted, nlohmann::json value) {
  nlohmann::json* node = &config;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ValidationError("empty config path");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ValidationError("config path '" + dotted + "' crosses a non-object");
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = std::move(value);
}

const nlohmann::json& get_path(const nlohmann::json& config, const std::string& dotted) {
  const nlohmann::json* node = &config;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ValidationError("config has no field '" + dotted + "'");
    node = &node->at(part);
  }
  return *node;
}

namespace {

nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

void merge(nlohmann::json& base, const nlohmann::json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) merge(base[it.key()], *it);
    else base[it.key()] = *it;
  }
}

}  // namespace

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override '" + assignment + "' is not of the form path=value");
  }
  set_path(config, assignment.substr(0, eq), parse_value(assignment.substr(eq + 1)));
}

void Context::resolve() {
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) throw IoError("cannot read config " + config_file);
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config " + config_file + ": " + e.what());
    }
    if (!file.is_object()) throw ValidationError("config " + config_file + " must be a JSON object");
    merge(config, file);
  }
  for (const auto& o : overrides) apply_override(config, o);
  for (std::size_t i = 0; i < bindings.size(); ++i) {
    if (bindings[i].first->count() > 0) set_path(config, bindings[i].second, parse_value(binding_values[i]));
  }
}

int Context::effective_jobs() const { return jobs > 0 ? jobs : default_jobs(); }

void Context::write_manifest(const std::filesystem::path& path) const {
  const std::string dump = config.dump();
  nlohmann::json m = {
      {"command", command},
      {"argv", argv},
      {"config", config},
      {"config_hash", hex64(fnv1a64(dump))},
      {"seeds", {{"seed", config.value("seed", 0)}, {"model_seed", config["model"].value("seed", 0)},
                 {"train_seed", config["train"].value("seed", 0)}}},
      {"versions", {{"psim", "0.1.0"}, {"dataset_format", kDatasetVersion}}},
      {"outputs", outputs},
      {"wall_clock_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}};
  if (!path.parent_path().empty()) ensure_dir(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << m.dump(2) << "\n";
}

void bind(CLI::App* app, Context& ctx, const std::string& flag, const std::string& path, const std::string& help) {
  ctx.binding_values.emplace_back();
  CLI::Option* opt = app->add_option(flag, ctx.binding_values.back(), help + " [" + path + "]");
  ctx.bindings.emplace_back(opt, path);
}

void add_common(CLI::App* app, Context& ctx) {
  app->add_option("--config", ctx.config_file, "JSON config file");
  app->add_option("--set", ctx.overrides, "Override a config field: dotted.path=value (repeatable)");
  app->add_option("--jobs", ctx.jobs, "Worker threads (default: logical cores)");
}

SamplerConfig sampler_config(const nlohmann::json& config) {
  SamplerConfig s = config.at("sampler").get<SamplerConfig>();
  s.validate();
  return s;
}

MetricModel model_from_options(const std::string& model_dir, const nlohmann::json& config) {
  if (!model_dir.empty()) return load_model(model_dir);
  const ViTConfig vit = config.at("vit").get<ViTConfig>();
  return make_model(vit, config["model"].value("backbones", 1), config["model"].value("seed", 1), "untrained");
}

TripletSet load_set(const std::filesystem::path& dataset_path, const Dataset& dataset, int size, int jobs,
                    bool require_label) {
  return load_triplets(dataset, dataset_path.parent_path(), size, require_label, jobs);
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ValidationError("'" + part + "' is not an integer");
    }
  }
  if (out.empty()) throw ValidationError("empty integer list");
  return out;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

}  // namespace psim::cli
