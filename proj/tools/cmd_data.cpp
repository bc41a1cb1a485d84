#include <fstream>
#include <iostream>

#include "cli_common.hpp"
#include "psim/annotator.hpp"
#include "psim/error.hpp"
#include "psim/triplets.hpp"

namespace psim::cli {

namespace {

CampaignSimConfig sim_config(const nlohmann::json& config) {
  const auto& s = config.at("simulate");
  CampaignSimConfig c;
  c.flip_prob = s.value("flip_prob", c.flip_prob);
  c.failing_worker_fraction = s.value("failing_worker_fraction", c.failing_worker_fraction);
  c.tasks_per_worker = s.value("tasks_per_worker", c.tasks_per_worker);
  c.sentinels_per_worker = s.value("sentinels_per_worker", c.sentinels_per_worker);
  c.rounds = s.value("rounds", c.rounds);
  c.seed = config.value("seed", std::uint64_t{0});
  if (c.flip_prob < 0.0 || c.flip_prob >= 1.0) throw ValidationError("simulate.flip_prob must be in [0,1)");
  return c;
}

void write_stream(const std::filesystem::path& path, const std::vector<RoundInput>& stream) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t r = 0; r < stream.size(); ++r) {
    out << nlohmann::json{{"round", r + 1}, {"judgments", stream[r].judgments}, {"sentinels", stream[r].sentinels}}.dump()
        << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<RoundInput> read_stream(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<RoundInput> stream;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      stream.push_back({j.at("judgments").get<JudgmentLog>(), j.at("sentinels").get<std::vector<SentinelResult>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("judgment stream " + path.string() + ": " + e.what());
    }
  }
  return stream;
}

void write_round_csv(const std::filesystem::path& path, const std::vector<RoundCounts>& rounds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "round,input,unanimous,sentinel_carryover,eliminated,kept\n";
  for (const auto& c : rounds) {
    out << c.round << "," << c.input << "," << c.unanimous << "," << c.sentinel_carryover << "," << c.eliminated
        << "," << c.kept << "\n";
  }
}

}  // namespace

// Stage functions shared with `pipeline`.

Dataset stage_generate(Context& ctx, const std::filesystem::path& out_dir) {
  const auto& g = ctx.config.at("generate");
  const long long n = g.value("n", 0LL);
  if (n < 1) throw ValidationError("generate.n must be >= 1");
  ensure_dir(out_dir);
  Dataset ds = write_synthetic(out_dir, static_cast<std::size_t>(n), g.value("size", 64), sampler_config(ctx.config),
                               ctx.config.value("seed", std::uint64_t{0}), ctx.effective_jobs());
  write_dataset(out_dir / "dataset.jsonl", ds);
  int ones = 0;
  for (const auto& r : ds.records) ones += r.oracle_y.value_or(0);
  ctx.outputs["dataset"] = (out_dir / "dataset.jsonl").string();
  ctx.outputs["triplets"] = ds.size();
  ctx.outputs["label_balance"] = static_cast<double>(ones) / static_cast<double>(ds.size());
  return ds;
}

std::vector<RoundInput> stage_simulate(Context& ctx, const Dataset& pool, const std::filesystem::path& out) {
  const CampaignSimConfig sim = sim_config(ctx.config);
  FilterCampaign campaign(pool, sim.rounds);
  std::vector<RoundInput> stream;
  while (!campaign.finished()) {
    stream.push_back(simulate_round(campaign.pool(), campaign.round() + 1, sim));
    campaign.advance(stream.back());
  }
  write_stream(out, stream);
  ctx.outputs["judgments"] = out.string();
  return stream;
}

Dataset stage_filter(Context& ctx, const Dataset& pool, const std::vector<RoundInput>& stream,
                     const std::filesystem::path& out) {
  const int rounds = ctx.config.at("simulate").value("rounds", kDefaultRounds);
  CampaignResult result = run_filter_campaign(pool, stream, rounds);
  write_dataset(out, result.dataset);
  const auto csv = std::filesystem::path(out.string() + ".rounds.csv");
  write_round_csv(csv, result.rounds);
  ctx.outputs["filtered"] = out.string();
  ctx.outputs["round_counts"] = csv.string();
  ctx.outputs["survivors"] = result.dataset.size();
  ctx.outputs["rounds"] = result.rounds;
  return result.dataset;
}

Dataset stage_split(Context& ctx, Dataset dataset, const std::filesystem::path& out) {
  const auto& s = ctx.config.at("split");
  SplitFractions f{s.value("train", 0.8), s.value("val", 0.1), s.value("test", 0.1)};
  make_splits(dataset, f, ctx.config.value("seed", std::uint64_t{0}));
  const int min_votes = s.value("min_votes", 0);
  if (min_votes > 0) dataset = filter_min_votes(dataset, min_votes);
  write_dataset(out, dataset);
  const auto csv = std::filesystem::path(out.string() + ".splits.csv");
  std::ofstream m(csv);
  if (!m) throw IoError("cannot write " + csv.string());
  write_split_manifest(m, dataset);
  int counts[3] = {0, 0, 0};
  for (const auto& r : dataset.records) ++counts[static_cast<int>(*r.split)];
  ctx.outputs["split_dataset"] = out.string();
  ctx.outputs["split_manifest"] = csv.string();
  ctx.outputs["split_counts"] = {{"train", counts[0]}, {"val", counts[1]}, {"test", counts[2]}};
  return dataset;
}

void register_data_commands(CLI::App& app, Context& ctx) {
  static std::string out, dataset_path, judgments_path;

  auto* gen = app.add_subcommand("generate", "Render oracle-labeled synthetic triplets");
  add_common(gen, ctx);
  bind(gen, ctx, "--n", "generate.n", "Number of triplets");
  bind(gen, ctx, "--size", "generate.size", "Image side in pixels");
  bind(gen, ctx, "--seed", "seed", "Generator seed");
  gen->add_option("--out", out, "Output directory")->required();
  gen->callback([&] {
    ctx.resolve();
    stage_generate(ctx, out);
    ctx.write_manifest(std::filesystem::path(out) / "manifest.json");
    std::cout << nlohmann::json(ctx.outputs).dump() << "\n";
  });

  auto* sim = app.add_subcommand("simulate", "Simulate a judgment campaign over a dataset's oracle labels");
  add_common(sim, ctx);
  sim->add_option("--dataset", dataset_path, "Dataset JSON-lines file")->required();
  sim->add_option("--out", out, "Judgment stream output (JSON-lines, one round per line)")->required();
  bind(sim, ctx, "--flip", "simulate.flip_prob", "Annotator flip probability");
  bind(sim, ctx, "--failing-workers", "simulate.failing_worker_fraction", "Fraction of sentinel-failing workers");
  bind(sim, ctx, "--rounds", "simulate.rounds", "Filtering rounds");
  bind(sim, ctx, "--seed", "seed", "Simulation seed");
  sim->callback([&] {
    ctx.resolve();
    stage_simulate(ctx, read_dataset(dataset_path), out);
    ctx.write_manifest(out + ".manifest.json");
  });

  auto* filt = app.add_subcommand("filter", "Run sentinel exclusion and unanimity rounds over a judgment stream");
  add_common(filt, ctx);
  filt->add_option("--dataset", dataset_path, "Dataset JSON-lines file")->required();
  filt->add_option("--judgments", judgments_path, "Judgment stream from simulate")->required();
  filt->add_option("--out", out, "Labeled survivors output")->required();
  bind(filt, ctx, "--rounds", "simulate.rounds", "Filtering rounds");
  filt->callback([&] {
    ctx.resolve();
    stage_filter(ctx, read_dataset(dataset_path), read_stream(judgments_path), out);
    ctx.write_manifest(out + ".manifest.json");
    std::cout << ctx.outputs["rounds"].dump() << "\n";
  });

  auto* split = app.add_subcommand("split", "Assign train/val/test splits, then apply the vote threshold");
  add_common(split, ctx);
  split->add_option("--dataset", dataset_path, "Dataset JSON-lines file")->required();
  split->add_option("--out", out, "Output dataset with splits")->required();
  bind(split, ctx, "--seed", "seed", "Split seed");
  bind(split, ctx, "--min-votes", "split.min_votes", "Keep triplets with at least this many votes (0 disables)");
  split->callback([&] {
    ctx.resolve();
    stage_split(ctx, read_dataset(dataset_path), out);
    ctx.write_manifest(out + ".manifest.json");
    std::cout << ctx.outputs["split_counts"].dump() << "\n";
  });
}

}  // namespace psim::cli
