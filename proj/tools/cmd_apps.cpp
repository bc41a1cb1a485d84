#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>

#include "cli_common.hpp"
#include "psim/annotation_server.hpp"
#include "psim/checkpoint.hpp"
#include "psim/error.hpp"
#include "psim/inversion.hpp"
#include "psim/png_io.hpp"
#include "psim/retrieval.hpp"

namespace psim::cli {

namespace {

AnnotationServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

void register_app_commands(CLI::App& app, Context& ctx) {
  static std::string out, model_dir, images_dir, dataset_path, index_path, query_path, target_path, trace_path,
      campaign_path, log_path, static_dir, host = "127.0.0.1";
  static std::size_t k = 10;
  static int port = 8080;

  auto* ix = app.add_subcommand("index", "Embed images into a retrieval index");
  add_common(ix, ctx);
  ix->add_option("--model", model_dir, "Model directory (omit for an untrained model)");
  auto* src_images = ix->add_option("--images", images_dir, "Directory of PNG files (id = file stem)");
  auto* src_dataset = ix->add_option("--dataset", dataset_path, "Dataset whose reference images are indexed");
  src_images->excludes(src_dataset);
  ix->add_option("--out", out, "Index file (an .ids manifest is written next to it)")->required();
  ix->callback([&] {
    ctx.resolve();
    const MetricModel model = model_from_options(model_dir, ctx.config);
    std::vector<std::string> ids;
    std::vector<std::filesystem::path> files;
    if (!images_dir.empty()) {
      for (const auto& e : std::filesystem::directory_iterator(images_dir)) {
        if (e.path().extension() == ".png") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) ids.push_back(f.stem().string());
    } else if (!dataset_path.empty()) {
      const Dataset ds = read_dataset(dataset_path);
      for (const auto& r : ds.records) {
        ids.push_back(r.id);
        files.push_back(std::filesystem::path(dataset_path).parent_path() / r.ref_path);
      }
    } else {
      throw ValidationError("index needs --images or --dataset");
    }
    std::vector<Image> images;
    for (const auto& f : files) images.push_back(prepare_image(model, read_png(f)));
    const EmbeddingIndex index = build_index(model, ids, images, ctx.effective_jobs());
    write_index(out, index);
    ctx.outputs["index"] = out;
    ctx.outputs["items"] = index.size();
    ctx.outputs["model_hash"] = index.model_hash();
    ctx.write_manifest(out + ".manifest.json");
  });

  auto* rt = app.add_subcommand("retrieve", "Nearest neighbours of a query image");
  add_common(rt, ctx);
  rt->add_option("--index", index_path, "Index file")->required();
  rt->add_option("--model", model_dir, "Model directory used to build the index");
  rt->add_option("--query", query_path, "Query PNG")->required();
  rt->add_option("--k", k, "Neighbours to return")->capture_default_str();
  rt->callback([&] {
    ctx.resolve();
    const MetricModel model = model_from_options(model_dir, ctx.config);
    const EmbeddingIndex index = read_index(index_path);
    if (!index.model_hash().empty() && index.model_hash() != model_hash(model)) {
      throw ValidationError("index was built with model " + index.model_hash() + ", query model is " +
                            model_hash(model));
    }
    const auto hits = query_topk(model, index, read_png(query_path), k);
    std::cout << "rank\tid\tdistance\n";
    for (std::size_t i = 0; i < hits.size(); ++i) {
      std::cout << i + 1 << "\t" << hits[i].id << "\t" << hits[i].distance << "\n";
    }
  });

  auto* inv = app.add_subcommand("invert", "Optimize an image whose embedding matches a target image");
  add_common(inv, ctx);
  inv->add_option("--model", model_dir, "Model directory");
  inv->add_option("--target", target_path, "Target PNG")->required();
  inv->add_option("--out", out, "Output PNG")->required();
  inv->add_option("--trace", trace_path, "Loss trace CSV (default: <out>.trace.csv)");
  bind(inv, ctx, "--steps", "inversion.steps", "Gradient steps");
  bind(inv, ctx, "--step-size", "inversion.step_size", "Step size");
  bind(inv, ctx, "--tv-weight", "inversion.tv_weight", "Total-variation weight");
  bind(inv, ctx, "--init", "inversion.init", "noise or gray");
  bind(inv, ctx, "--seed", "inversion.seed", "Init seed");
  inv->callback([&] {
    ctx.resolve();
    const MetricModel model = model_from_options(model_dir, ctx.config);
    const auto cfg = ctx.config.at("inversion").get<InversionConfig>();
    const InversionResult r = invert_embedding(model, read_png(target_path), cfg);
    write_png(out, r.image);
    const std::string trace = trace_path.empty() ? out + ".trace.csv" : trace_path;
    std::ofstream t(trace);
    if (!t) throw IoError("cannot write " + trace);
    t << "step,loss,distance\n";
    t.precision(17);
    for (std::size_t i = 0; i < r.loss_trace.size(); ++i) {
      t << i << "," << r.loss_trace[i] << "," << r.distance_trace[i] << "\n";
    }
    ctx.outputs["image"] = out;
    ctx.outputs["trace"] = trace;
    ctx.outputs["initial_distance"] = r.distance_trace.front();
    ctx.outputs["final_distance"] = r.distance_trace.back();
    ctx.write_manifest(out + ".manifest.json");
    std::cout << nlohmann::json(ctx.outputs).dump() << "\n";
  });

  auto* sv = app.add_subcommand("serve", "Run the annotation HTTP server");
  add_common(sv, ctx);
  sv->add_option("--dataset", dataset_path, "Triplet pool (JSON-lines)")->required();
  sv->add_option("--port", port, "Port")->capture_default_str();
  sv->add_option("--host", host, "Bind address")->capture_default_str();
  sv->add_option("--campaign", campaign_path, "Campaign config JSON (overrides the config's campaign section)");
  sv->add_option("--log", log_path, "Judgment log; replayed on start, appended while running");
  sv->add_option("--static", static_dir, "Directory with the built UI bundle");
  sv->callback([&] {
    ctx.resolve();
    if (!campaign_path.empty()) {
      std::ifstream in(campaign_path);
      if (!in) throw IoError("cannot read " + campaign_path);
      try {
        ctx.config["campaign"].update(nlohmann::json::parse(in));
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError("campaign config: " + std::string(e.what()));
      }
    }
    AnnotationService service(read_dataset(dataset_path), ctx.config.at("campaign").get<CampaignConfig>(), log_path);
    AnnotationServer server(service, std::filesystem::path(dataset_path).parent_path(), static_dir);
    g_server = &server;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cerr << "serving on http://" << host << ":" << port << "\n";
    const bool ok = server.listen(host, port);
    g_server = nullptr;
    if (!ok) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  });

  auto* pl = app.add_subcommand("pipeline", "generate, simulate, filter, split, train and evaluate in one run");
  add_common(pl, ctx);
  pl->add_option("--out", out, "Run directory")->required();
  pl->callback([&] {
    ctx.resolve();
    const std::filesystem::path dir(out);
    ensure_dir(dir);
    const auto run_stage = [](const char* name, auto&& fn) {
      try {
        return fn();
      } catch (const ValidationError& e) {
        throw ValidationError(std::string("stage ") + name + ": " + e.what());
      } catch (const NumericError& e) {
        throw NumericError(std::string("stage ") + name + ": " + e.what());
      } catch (const std::exception& e) {
        throw IoError(std::string("stage ") + name + ": " + e.what());
      }
    };
    const Dataset generated = run_stage("generate", [&] { return stage_generate(ctx, dir / "data"); });
    const auto stream = run_stage("simulate", [&] { return stage_simulate(ctx, generated, dir / "judgments.jsonl"); });
    const Dataset filtered = run_stage("filter", [&] { return stage_filter(ctx, generated, stream, dir / "data" / "filtered.jsonl"); });
    const Dataset split = run_stage("split", [&] { return stage_split(ctx, filtered, dir / "data" / "split.jsonl"); });
    const auto split_path = dir / "data" / "split.jsonl";
    std::ofstream progress(dir / "train_progress.jsonl");
    const MetricModel tuned = run_stage("train", [&] { return stage_train(ctx, split_path, split, dir / "model", &progress); });
    nlohmann::json report = run_stage("eval", [&] {
      const MetricModel base = model_from_options("", ctx.config);
      return nlohmann::json{{"untrained", stage_eval(ctx, base, split_path, split, "test")},
                            {"tuned", stage_eval(ctx, tuned, split_path, split, "test")}};
    });
    ctx.outputs["report"] = report;
    std::ofstream(dir / "report.json") << report.dump(2) << "\n";
    ctx.write_manifest(dir / "manifest.json");
    std::cout << report.dump(2) << "\n";
  });
}

}  // namespace psim::cli
