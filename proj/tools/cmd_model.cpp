#include <fstream>
#include <iostream>

#include "cli_common.hpp"
#include "psim/ablation.hpp"
#include "psim/attributes.hpp"
#include "psim/checkpoint.hpp"
#include "psim/error.hpp"
#include "psim/evaluation.hpp"
#include "psim/pca.hpp"
#include "psim/random.hpp"
#include "psim/training.hpp"

namespace psim::cli {

namespace {

Dataset pick_split(const Dataset& dataset, const std::string& split) {
  if (split == "all") return dataset;
  return select_split(dataset, split_from_string(split));
}

TripletSet split_set(Context& ctx, const MetricModel& model, const std::filesystem::path& path, const Dataset& ds,
                     const std::string& split) {
  const Dataset part = pick_split(ds, split);
  if (part.records.empty()) throw ValidationError("split '" + split + "' is empty in " + path.string());
  return load_set(path, part, model.input_size(), ctx.effective_jobs(), true);
}

std::vector<JndRecord> read_jnd(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<JndRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(label_jnd(nlohmann::json::parse(line).get<JndRecord>()));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("JND file " + path.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<int> decisions(const std::vector<Vote>& votes) {
  std::vector<int> d;
  for (const auto& v : votes) d.push_back(v.y_hat);
  return d;
}

}  // namespace

MetricModel stage_train(Context& ctx, const std::filesystem::path& dataset_path, const Dataset& dataset,
                        const std::filesystem::path& out_dir, std::ostream* progress) {
  const auto& mc = ctx.config.at("model");
  const int backbones = mc.value("backbones", 1);
  const std::string tuning = mc.value("tuning", std::string("lora"));
  const std::uint64_t model_seed = mc.value("seed", std::uint64_t{1});
  MetricModel model = make_model(ctx.config.at("vit").get<ViTConfig>(), backbones, model_seed,
                                 tuning + "-x" + std::to_string(backbones));
  if (tuning == "lora") {
    attach_lora_all(model, ctx.config.at("lora").get<LoraConfig>(), hash_combine(model_seed, 0x10a));
  } else if (tuning == "mlp") {
    attach_heads_all(model, mc.value("head_width", kDefaultHeadWidth), hash_combine(model_seed, 0x4ead));
  } else {
    throw ValidationError("model.tuning must be lora or mlp, got '" + tuning + "'");
  }
  nlohmann::json tc_json = ctx.config.at("train");
  if (tc_json.value("batch_size", 0) == 0) tc_json["batch_size"] = default_batch_size(backbones);
  TrainConfig tc = tc_json.get<TrainConfig>();
  tc.jobs = ctx.effective_jobs();

  const TripletSet train_set = split_set(ctx, model, dataset_path, dataset, "train");
  const TripletSet val_set = split_set(ctx, model, dataset_path, dataset, "val");
  const TrainResult result = train(model, train_set, val_set, tc, [&](const Checkpoint& c) {
    if (progress) {
      *progress << nlohmann::json{{"epoch", c.epoch}, {"loss", c.train_loss}, {"val_acc", c.val_score}}.dump()
                << std::endl;
    }
  });
  save_model(out_dir, model);
  nlohmann::json history = nlohmann::json::array();
  for (const auto& c : result.history) {
    history.push_back({{"epoch", c.epoch}, {"loss", c.train_loss}, {"val_acc", c.val_score}});
  }
  ctx.outputs["model"] = out_dir.string();
  ctx.outputs["model_hash"] = model_hash(model);
  ctx.outputs["history"] = history;
  ctx.outputs["best_epoch"] = result.best().epoch;
  ctx.outputs["best_val_acc"] = result.best().val_score;
  return model;
}

nlohmann::json stage_eval(Context& ctx, const MetricModel& model, const std::filesystem::path& dataset_path,
                          const Dataset& dataset, const std::string& split) {
  const TripletSet set = split_set(ctx, model, dataset_path, dataset, split);
  const EvalReport report = score_2afc(model, set, ctx.effective_jobs());
  nlohmann::json j = report;
  j["split"] = split;
  return j;
}

void register_model_commands(CLI::App& app, Context& ctx) {
  static std::string out, dataset_path, model_dir, split = "test", jnd_path, ablation = "all", attribute = "all",
                      region = "total", ks = "1,8,32,64", scores_path;
  static bool centering = false;

  auto* tr = app.add_subcommand("train", "Tune adapters with the triplet hinge loss");
  add_common(tr, ctx);
  tr->add_option("--dataset", dataset_path, "Dataset with train/val splits")->required();
  tr->add_option("--out", out, "Output model directory")->required();
  bind(tr, ctx, "--backbones", "model.backbones", "Number of backbones");
  bind(tr, ctx, "--tuning", "model.tuning", "lora or mlp");
  bind(tr, ctx, "--epochs", "train.max_epochs", "Epochs");
  bind(tr, ctx, "--seed", "train.seed", "Shuffle/dropout seed");
  bind(tr, ctx, "--model-seed", "model.seed", "Backbone init seed");
  bind(tr, ctx, "--batch", "train.batch_size", "Batch size (0: 16 for ensembles, 512 otherwise)");
  bind(tr, ctx, "--margin", "train.margin", "Hinge margin");
  bind(tr, ctx, "--lr", "train.learning_rate", "Learning rate");
  tr->callback([&] {
    ctx.resolve();
    ensure_dir(out);
    stage_train(ctx, dataset_path, read_dataset(dataset_path), out, &std::cout);
    ctx.write_manifest(std::filesystem::path(out) / "manifest.json");
  });

  auto* ev = app.add_subcommand("eval", "Score a model against labeled triplets (and JND records)");
  add_common(ev, ctx);
  ev->add_option("--model", model_dir, "Model directory (omit for an untrained model from the config)");
  ev->add_option("--dataset", dataset_path, "Dataset JSON-lines file")->required();
  ev->add_option("--split", split, "train, val, test or all")->capture_default_str();
  ev->add_option("--jnd", jnd_path, "JND records (JSON-lines) to score as well");
  ev->callback([&] {
    ctx.resolve();
    const MetricModel model = model_from_options(model_dir, ctx.config);
    const Dataset ds = read_dataset(dataset_path);
    nlohmann::json report = stage_eval(ctx, model, dataset_path, ds, split);
    if (!jnd_path.empty()) {
      std::vector<JndRecord> kept;
      int straddle = 0;
      for (auto& r : read_jnd(jnd_path)) {
        if (r.straddle_failed) ++straddle;
        else kept.push_back(r);
      }
      Dataset sub;
      for (const auto& r : kept) {
        const TripletRecord* rec = ds.find(r.triplet_id);
        if (!rec) throw ValidationError("JND record names unknown triplet " + r.triplet_id);
        sub.records.push_back(*rec);
      }
      const TripletSet set = load_set(dataset_path, sub, model.input_size(), ctx.effective_jobs(), false);
      const EvalReport jnd = score_jnd(predict_votes(model, set, ctx.effective_jobs()), kept, model.name);
      report["score_jnd"] = jnd.score_jnd;
      report["jnd_n"] = jnd.n_triplets;
      report["jnd_straddle_failed"] = straddle;
    }
    std::cout << report.dump(2) << "\n";
  });

  auto* an = app.add_subcommand("analyze", "Ablations, attribute alignment, PCA and score correlation");
  an->require_subcommand(1);

  auto* ab = an->add_subcommand("ablate", "Decision agreement under image ablations");
  add_common(ab, ctx);
  ab->add_option("--model", model_dir, "Model directory");
  ab->add_option("--dataset", dataset_path, "Dataset")->required();
  ab->add_option("--split", split, "Split")->capture_default_str();
  ab->add_option("--ablation", ablation, "Ablation name or all")->capture_default_str();
  bind(ab, ctx, "--seed", "seed", "Noise seed");
  ab->callback([&] {
    ctx.resolve();
    const MetricModel model = model_from_options(model_dir, ctx.config);
    const TripletSet set = split_set(ctx, model, dataset_path, read_dataset(dataset_path), split);
    std::vector<Ablation> which;
    if (ablation == "all") {
      which = {Ablation::flip_reference, Ablation::drop_L, Ablation::drop_AB, Ablation::fg_noise, Ablation::bg_noise};
    } else {
      which = {ablation_from_string(ablation)};
    }
    nlohmann::json out_json = nlohmann::json::object();
    for (auto a : which) {
      const auto r = ablation_agreement(model, set, a, ctx.config.value("seed", std::uint64_t{0}), ctx.effective_jobs());
      out_json[std::string(to_string(a))] = r.agreement;
    }
    out_json["n"] = set.size();
    std::cout << out_json.dump(2) << "\n";
  });

  auto* al = an->add_subcommand("align", "Agreement of model decisions with attribute similarity");
  add_common(al, ctx);
  al->add_option("--model", model_dir, "Model directory");
  al->add_option("--dataset", dataset_path, "Dataset")->required();
  al->add_option("--split", split, "Split")->capture_default_str();
  al->add_option("--attribute", attribute, "Attribute kind or all")->capture_default_str();
  al->add_option("--region", region, "foreground, background or total")->capture_default_str();
  al->callback([&] {
    ctx.resolve();
    const MetricModel model = model_from_options(model_dir, ctx.config);
    const TripletSet set = split_set(ctx, model, dataset_path, read_dataset(dataset_path), split);
    const auto d = decisions(predict_votes(model, set, ctx.effective_jobs()));
    std::vector<AttributeMetric> metrics;
    if (attribute == "all") {
      for (auto k : {AttributeKind::rgb_hist_32, AttributeKind::luminance_hist_10}) {
        for (auto r : {Region::foreground, Region::background, Region::total}) metrics.push_back({k, r});
      }
      for (auto k : {AttributeKind::things_hist, AttributeKind::stuff_hist, AttributeKind::per_category_area}) {
        metrics.push_back({k, Region::total});
      }
    } else {
      metrics.push_back({attribute_kind_from_string(attribute), region_from_string(region)});
    }
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& m : metrics) {
      rows.push_back({{"attribute", to_string(m.kind)},
                      {"region", to_string(m.region)},
                      {"alignment", attribute_alignment(d, m, set)}});
    }
    std::cout << rows.dump(2) << "\n";
  });

  auto* pc = an->add_subcommand("pca", "2AFC score with embeddings projected on the top-k components");
  add_common(pc, ctx);
  pc->add_option("--model", model_dir, "Model directory");
  pc->add_option("--dataset", dataset_path, "Dataset with train and test splits")->required();
  pc->add_option("--split", split, "Evaluation split")->capture_default_str();
  pc->add_option("--ks", ks, "Comma-separated component counts")->capture_default_str();
  pc->add_flag("--centering", centering, "Center before the decomposition");
  pc->callback([&] {
    ctx.resolve();
    const MetricModel model = model_from_options(model_dir, ctx.config);
    const Dataset ds = read_dataset(dataset_path);
    const TripletSet fit = split_set(ctx, model, dataset_path, ds, "train");
    const TripletSet eval = split_set(ctx, model, dataset_path, ds, split);
    std::cout << "k,score\n";
    for (const auto& [k, score] : pca_score_sweep(model, fit, eval, parse_int_list(ks), centering, ctx.effective_jobs())) {
      std::cout << k << "," << score << "\n";
    }
  });

  auto* co = an->add_subcommand("correlate", "Pearson and Spearman correlation of 2AFC and JND scores");
  add_common(co, ctx);
  co->add_option("--scores", scores_path, "CSV with columns metric,score_2afc,score_jnd")->required();
  co->callback([&] {
    ctx.resolve();
    std::ifstream in(scores_path);
    if (!in) throw IoError("cannot read " + scores_path);
    std::string line;
    std::vector<std::pair<double, double>> pts;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto c1 = line.find(','), c2 = line.rfind(',');
      if (c1 == std::string::npos || c1 == c2) throw ValidationError("bad scores row: " + line);
      try {
        pts.emplace_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)), std::stod(line.substr(c2 + 1)));
      } catch (const std::exception&) {
        throw ValidationError("bad scores row: " + line);
      }
    }
    const Correlation c = correlate_scores(pts);
    std::cout << nlohmann::json{{"pearson", c.pearson}, {"spearman", c.spearman}, {"n", pts.size()}}.dump(2) << "\n";
  });
}

}  // namespace psim::cli
