/*
 * Copyright 2026 The tmegraph Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// tmegraph: synth | build | train | evaluate | explain.
// Exit codes: 0 success, 1 invalid input or config, 2 runtime failure.
// TMEGNN_THREADS sets the worker count.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tmegraph/pipeline.hpp"

namespace {

using namespace tmegraph;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run config JSON (or a manifest.json to re-run)");
  cmd->add_option("--seed", c.seed, "root seed; overrides the config");
  cmd->add_option("--out", c.out, "output directory")->required();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_run_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.synth.seed = *c.seed;
  }
  return cfg;
}

void print_summary(const nlohmann::json& report) {
  std::printf("%-8s %8s %8s %8s\n", "group", "mean_f1", "std", "splits");
  for (const auto& row : report.at("summary")) {
    std::printf("%-8s %8.3f %8.3f %8zu\n", row.at("group").get<std::string>().c_str(), row.at("mean").get<double>(),
                row.at("std").get<double>(), row.at("n_splits").get<std::size_t>());
  }
  for (const auto& w : report.at("warnings")) std::fprintf(stderr, "warning: %s\n", w.get<std::string>().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-level graph models of multiplexed immunofluorescence RoIs"};
  app.require_subcommand(1);

  Common synth_opts;
  std::string planted;
  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  add_common(synth, synth_opts);
  synth->add_option("--planted", planted, "topology_only|feature_only");

  Common build_opts;
  std::string cells, rois;
  auto* build = app.add_subcommand("build", "build tile- and cell-graphs and metric tables");
  add_common(build, build_opts);
  build->add_option("--cells", cells, "cell table (cells.csv)")->required();
  build->add_option("--rois", rois, "optional RoI label table (rois.csv)");

  Common train_opts;
  std::string train_data, model, split;
  auto* train_cmd = app.add_subcommand("train", "train and score over patient-level splits");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--data", train_data, "build output directory")->required();
  train_cmd->add_option("--model", model, "gcn-mean|gcn-add|gcn-max|mil-att|mil-mean|mlp");
  train_cmd->add_option("--split", split, "explicit split.json (single split)");

  Common eval_opts;
  std::string eval_ckpt, eval_data, eval_region;
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on its test RoIs");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint JSON")->required();
  eval->add_option("--data", eval_data, "build output directory")->required();
  eval->add_option("--region", eval_region, "Centre|Front|Mucosa|Stroma");

  Common explain_opts;
  std::string ex_ckpt, ex_data, ex_region;
  std::optional<std::size_t> top_k;
  auto* explain = app.add_subcommand("explain", "integrated gradients and mask explanations");
  add_common(explain, explain_opts);
  explain->add_option("--checkpoint", ex_ckpt, "checkpoint JSON")->required();
  explain->add_option("--data", ex_data, "build output directory")->required();
  explain->add_option("--region", ex_region, "Centre|Front|Mucosa|Stroma");
  explain->add_option("--top-k", top_k, "tiles listed per RoI in top_tiles.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      RunConfig cfg = resolve(synth_opts);
      if (!planted.empty()) {
        cfg.planted = parse_planted_kind(planted);
        if (!cfg.planted) throw ValidationError("unknown planted cohort '" + planted + "'");
      }
      const auto cohort = run_synth(cfg, synth_opts.out);
      std::size_t n = 0;
      for (const auto& r : cohort.rois) n += r.cells.size();
      std::printf("synth: %zu RoIs, %zu cells -> %s\n", cohort.rois.size(), n, synth_opts.out.c_str());
    } else if (build->parsed()) {
      const auto samples = run_build(resolve(build_opts), cells, rois, build_opts.out);
      std::printf("build: %zu RoIs -> %s\n", samples.size(), build_opts.out.c_str());
    } else if (train_cmd->parsed()) {
      RunConfig cfg = resolve(train_opts);
      if (!model.empty()) set_model_name(cfg.model, model);
      cfg.validate();
      const auto out = run_train(cfg, train_data, split, train_opts.out, [](std::size_t k, const EpochLog& e) {
        if (e.epoch % 10 == 0 || e.epoch == 1) {
          std::fprintf(stderr, "split %zu epoch %zu loss %.4f val_f1 %.3f\n", k, e.epoch, e.train_loss, e.val_f1);
        }
      });
      std::printf("train: %s, %zu split(s) -> %s\n", model_name(cfg.model).c_str(), out.run.report.splits.size(),
                  train_opts.out.c_str());
      print_summary(out.report);
    } else if (eval->parsed()) {
      const auto report = run_evaluate(resolve(eval_opts), eval_ckpt, eval_data, eval_region, eval_opts.out);
      print_summary(report);
    } else if (explain->parsed()) {
      const RunConfig cfg = resolve(explain_opts);
      const auto out = run_explain(cfg, ex_ckpt, ex_data, ex_region, top_k.value_or(cfg.top_k), explain_opts.out);
      double worst = 0.0;
      for (const auto& x : out) worst = std::max(worst, x.attribution.completeness_gap);
      std::printf("explain: %zu RoIs, max completeness gap %.3g -> %s\n", out.size(), worst,
                  explain_opts.out.c_str());
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
