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

#pragma once

// File-level pipeline stages behind the command-line tool:
//   synth    -> cells.csv, rois.csv, truth.json
//   build    -> bundles/, metrics.csv, roi_features.csv
//   train    -> checkpoint_<k>.json, split_<k>.json, training_log.json,
//               report.json, predictions.csv
//   evaluate -> report.json, predictions.csv
//   explain  -> attributions.csv, top_tiles.csv, edge_attributions.csv,
//               feature_importance.csv, completeness.csv
// Every stage also writes manifest.json. Outputs other than the manifest
// depend only on the inputs, the config and the seed.

#include <cctype>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmegraph/dataset.hpp"
#include "tmegraph/explain.hpp"
#include "tmegraph/synth.hpp"
#include "tmegraph/text.hpp"
#include "tmegraph/train.hpp"

namespace tmegraph {

inline constexpr std::string_view kToolVersion = "1.0.0";

/// Everything a pipeline run depends on. `seed` is the single root seed;
/// it replaces synth.seed.
struct RunConfig {
  std::uint64_t seed = 7;
  SynthConfig synth;
  std::optional<PlantedKind> planted;
  double planted_shift = 0.5;
  HierModelConfig model;
  ExplainerConfig explainer;
  std::size_t ig_points = 50;
  std::size_t top_k = 10;

  void validate() const {
    synth.validate();
    model.validate();
    if (ig_points == 0) throw ValidationError("config: ig_points must be >= 1");
    if (explainer.epochs == 0 || !(explainer.lr > 0.0)) {
      throw ValidationError("config: explainer needs epochs >= 1 and lr > 0");
    }
    if (!(explainer.lambda_size >= 0.0) || !(explainer.lambda_entropy >= 0.0)) {
      throw ValidationError("config: explainer penalties must be >= 0");
    }
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"synth", c.synth},
       {"planted", c.planted ? nlohmann::json(c.planted == PlantedKind::TopologyOnly ? "topology_only" : "feature_only")
                             : nlohmann::json(nullptr)},
       {"planted_shift", c.planted_shift},
       {"model", c.model},
       {"explainer", c.explainer},
       {"ig_points", c.ig_points},
       {"top_k", c.top_k}};
  j["synth"]["seed"] = c.seed;
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c.seed = j.value("seed", c.seed);
  if (j.contains("synth")) c.synth = j.at("synth").get<SynthConfig>();
  c.synth.seed = c.seed;
  if (j.contains("planted") && !j.at("planted").is_null()) {
    const auto name = j.at("planted").get<std::string>();
    c.planted = parse_planted_kind(name);
    if (!c.planted) throw ValidationError("unknown planted cohort '" + name + "' (expected topology_only|feature_only)");
  }
  c.planted_shift = j.value("planted_shift", c.planted_shift);
  if (j.contains("model")) c.model = j.at("model").get<HierModelConfig>();
  if (j.contains("explainer")) c.explainer = j.at("explainer").get<ExplainerConfig>();
  c.ig_points = j.value("ig_points", c.ig_points);
  c.top_k = j.value("top_k", c.top_k);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(nlohmann::json(c).dump())); }

namespace pipeline_detail {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

inline void write_file(const fs::path& p, const std::string& bytes) {
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << bytes;
  if (!out) throw Error("write failed for " + p.string());
}

/// Keeps [A-Za-z0-9_.-] and maps everything else to '_'.
inline std::string safe_name(std::string_view id) {
  std::string out(id);
  for (char& c : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    if (!ok) c = '_';
  }
  return out.empty() || out[0] == '.' ? "_" + out : out;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace pipeline_detail

/// Reads a run config, or a manifest (its embedded config). An empty path
/// gives the defaults.
inline RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  if (!path.empty()) {
    auto j = pipeline_detail::read_json(path);
    if (j.contains("format") && j.at("format") == "tmegraph-manifest") j = j.at("config");
    try {
      c = j.get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ": " + e.what());
    }
  }
  c.synth.seed = c.seed;
  c.validate();
  return c;
}

/// Display name of a class: the stages mapped to it, joined by '+'.
inline std::string class_name(const HierModelConfig& cfg, std::size_t c) {
  std::string out;
  for (std::size_t s = 0; s < 3; ++s) {
    if (cfg.class_map[s] != c) continue;
    if (!out.empty()) out += '+';
    out += to_string(static_cast<Stage>(s));
  }
  return out.empty() ? "class" + std::to_string(c) : out;
}

/// Accumulates output files and writes manifest.json at the end.
class RunRecorder {
 public:
  RunRecorder(std::string command, const RunConfig& cfg, std::filesystem::path out_dir)
      : command_(std::move(command)), cfg_(cfg), dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {}

  void input(const std::string& path) { inputs_.push_back(path); }

  void output(const std::string& name, const std::string& bytes, std::optional<std::size_t> rows = std::nullopt) {
    pipeline_detail::write_file(dir_ / name, bytes);
    nlohmann::json entry = {{"fnv1a", hex64(fnv1a(bytes))}, {"bytes", bytes.size()}};
    if (rows) entry["rows"] = *rows;
    outputs_[name] = std::move(entry);
  }

  void note(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

  void finish() const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    nlohmann::json m = {{"format", "tmegraph-manifest"},
                        {"command", command_},
                        {"tool_version", std::string(kToolVersion)},
                        {"config_hash", config_hash(cfg_)},
                        {"seed", cfg_.seed},
                        {"config", cfg_},
                        {"inputs", inputs_},
                        {"outputs", outputs_},
                        {"versions",
                         {{"metric_catalog", std::string(kMetricCatalogVersion)},
                          {"roi_bundle", 1},
                          {"checkpoint", 1}}},
                        {"wall_time_seconds", wall}};
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    pipeline_detail::write_file(dir_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  RunConfig cfg_;
  std::filesystem::path dir_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> inputs_;
  nlohmann::json outputs_ = nlohmann::json::object();
  nlohmann::json extra_ = nlohmann::json::object();
};

// ---------------------------------------------------------------- tables

inline void write_metrics_csv(std::ostream& out, std::span<const RoISample> samples) {
  out << "roi_id,tile_id";
  for (const auto& n : metric_names()) out << ',' << n;
  out << '\n';
  for (const auto& s : samples) {
    for (std::size_t t = 0; t < s.n_tiles(); ++t) {
      out << pipeline_detail::csv_field(s.roi_id) << ',' << s.tiles[t].tile_id;
      for (double v : s.tile_graph.node_features.row(t)) out << ',' << text::format_double(v);
      out << '\n';
    }
  }
}

inline void write_roi_features_csv(std::ostream& out, std::span<const RoISample> samples) {
  out << "roi_id,patient_id,region,stage,n_cells,n_tiles";
  for (auto n : kCellFeatureNames) out << ",mean_" << n;
  out << '\n';
  for (const auto& s : samples) {
    out << pipeline_detail::csv_field(s.roi_id) << ',' << pipeline_detail::csv_field(s.patient_id) << ','
        << to_string(s.region) << ',' << to_string(s.stage) << ',' << s.n_cells << ',' << s.n_tiles();
    for (double v : s.mean_cell_features) out << ',' << text::format_double(v);
    out << '\n';
  }
}

/// RoI-level samples (no tiles) from roi_features.csv; enough for the MLP.
inline std::vector<RoISample> read_roi_features_csv(const std::string& path) {
  std::istringstream in(pipeline_detail::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  const std::size_t n_cols = 6 + kNumCellFeatures;
  if (text::split(line, ',').size() != n_cols) throw ParseError(path + ": unexpected header");
  std::vector<RoISample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, ',');
    const std::string where = path + ":" + std::to_string(line_no);
    if (f.size() != n_cols) throw ParseError(where + ": expected " + std::to_string(n_cols) + " fields");
    RoISample s;
    s.roi_id = std::string(f[0]);
    s.patient_id = std::string(f[1]);
    const auto region = parse_region(f[2]);
    const auto stage = parse_stage(f[3]);
    const auto n_cells = text::parse_int(f[4]);
    if (!region || !stage || !n_cells || *n_cells < 0) throw ParseError(where + ": bad region/stage/n_cells");
    s.region = *region;
    s.stage = *stage;
    s.n_cells = static_cast<std::size_t>(*n_cells);
    for (std::size_t k = 0; k < kNumCellFeatures; ++k) {
      const auto v = text::parse_double(f[6 + k]);
      if (!v) throw ParseError(where + ": bad number '" + std::string(f[6 + k]) + "'");
      s.mean_cell_features[k] = *v;
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_predictions_csv(std::ostream& out, const HierModelConfig& cfg, std::span<const SplitReport> splits) {
  out << "split,roi_id,region,true_stage,predicted_stage";
  for (std::size_t c = 0; c < cfg.n_classes; ++c) out << ",p_" << class_name(cfg, c);
  out << '\n';
  for (const auto& s : splits) {
    for (const auto& p : s.predictions) {
      out << s.split << ',' << pipeline_detail::csv_field(p.roi_id) << ',' << to_string(p.region) << ','
          << class_name(cfg, p.true_class) << ',' << class_name(cfg, p.predicted);
      for (double v : p.probabilities) out << ',' << text::format_double(v);
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------- bundles

inline std::vector<RoISample> load_bundles(const std::string& data_dir) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(data_dir) / "bundles";
  const auto index = pipeline_detail::read_json(dir / "index.json");
  std::vector<std::string> files;
  try {
    files = index.at("files").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "index.json").string() + ": " + e.what());
  }
  std::vector<RoISample> out(files.size());
  parallel_for(files.size(), [&](std::size_t i) { out[i] = sample_from_json(pipeline_detail::read_json(dir / files[i])); });
  return out;
}

/// Graph models need bundles; the MLP reads roi_features.csv only.
inline std::vector<RoISample> load_training_data(const std::string& data_dir, const HierModelConfig& cfg) {
  if (cfg.kind == ModelKind::Mlp) {
    return read_roi_features_csv((std::filesystem::path(data_dir) / "roi_features.csv").string());
  }
  return load_bundles(data_dir);
}

// ---------------------------------------------------------------- stages

inline SynthCohort run_synth(const RunConfig& cfg, const std::string& out_dir) {
  RunRecorder rec("synth", cfg, out_dir);
  SynthConfig sc = cfg.synth;
  sc.seed = cfg.seed;
  if (cfg.planted) sc = planted_signal_config(*cfg.planted, sc, cfg.planted_shift);
  SynthCohort cohort = generate_cohort(sc);
  std::size_t n_cells = 0;
  for (const auto& r : cohort.rois) n_cells += r.cells.size();
  std::ostringstream cells, rois;
  write_cell_table(cells, cohort.rois);
  write_roi_table(rois, cohort.rois);
  rec.output("cells.csv", cells.str(), n_cells);
  rec.output("rois.csv", rois.str(), cohort.rois.size());
  rec.output("truth.json", truth_to_json(cohort, sc).dump(2) + "\n");
  rec.finish();
  return cohort;
}

inline std::vector<RoISample> run_build(const RunConfig& cfg, const std::string& cells_path,
                                        const std::string& rois_path, const std::string& out_dir) {
  RunRecorder rec("build", cfg, out_dir);
  rec.input(cells_path);
  auto rois = parse_cell_table(cells_path);
  if (!rois_path.empty()) {
    rec.input(rois_path);
    std::istringstream in(pipeline_detail::read_file(rois_path));
    apply_roi_labels(rois, parse_roi_table(in));
  }
  if (rois.empty()) throw ValidationError(cells_path + ": no RoIs");
  const auto samples = build_dataset(std::move(rois), cfg.model, cfg.seed);
  std::vector<std::string> files;
  std::set<std::string> used;
  for (const auto& s : samples) {
    std::string name = pipeline_detail::safe_name(s.roi_id);
    while (!used.insert(name).second) name += "_";
    files.push_back(name + ".json");
  }
  std::vector<std::string> bodies(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) { bodies[i] = sample_to_json(samples[i]).dump() + "\n"; });
  for (std::size_t i = 0; i < samples.size(); ++i) rec.output("bundles/" + files[i], bodies[i]);
  rec.output("bundles/index.json", nlohmann::json{{"files", files}}.dump(2) + "\n", files.size());
  std::ostringstream metrics, features;
  write_metrics_csv(metrics, samples);
  write_roi_features_csv(features, samples);
  std::size_t tiles = 0;
  for (const auto& s : samples) tiles += s.n_tiles();
  rec.output("metrics.csv", metrics.str(), tiles);
  rec.output("roi_features.csv", features.str(), samples.size());
  rec.finish();
  return samples;
}

struct TrainOutputs {
  ExperimentRun run;
  nlohmann::json report;
};

inline TrainOutputs run_train(const RunConfig& cfg, const std::string& data_dir, const std::string& split_path,
                              const std::string& out_dir,
                              const std::function<void(std::size_t, const EpochLog&)>& on_epoch = {}) {
  RunRecorder rec("train", cfg, out_dir);
  rec.input(data_dir);
  const auto data = load_training_data(data_dir, cfg.model);
  std::vector<SplitPlan> plans;
  if (!split_path.empty()) {
    rec.input(split_path);
    plans.push_back(split_from_json(pipeline_detail::read_json(split_path)));
  }
  TrainOutputs out{run_experiment(data, cfg.model, cfg.seed, plans, on_epoch), {}};
  const auto& report = out.run.report;
  nlohmann::json logs = nlohmann::json::array();
  for (std::size_t k = 0; k < report.splits.size(); ++k) {
    const auto& split = report.splits[k];
    const Checkpoint ckpt{out.run.models[k].model, split.plan.test_rois, cfg.seed, k};
    rec.output("checkpoint_" + std::to_string(k) + ".json", checkpoint_to_json(ckpt).dump() + "\n");
    rec.output("split_" + std::to_string(k) + ".json", split_to_json(split.plan).dump(2) + "\n");
    logs.push_back({{"split", k},
                    {"best_epoch", out.run.models[k].best_epoch},
                    {"class_weights", out.run.models[k].class_weights},
                    {"epochs", log_to_json(out.run.models[k].log)}});
  }
  out.report = report_to_json(report);
  std::ostringstream preds;
  write_predictions_csv(preds, cfg.model, report.splits);
  std::size_t n_preds = 0;
  for (const auto& s : report.splits) n_preds += s.predictions.size();
  rec.output("training_log.json", logs.dump(2) + "\n");
  rec.output("report.json", out.report.dump(2) + "\n");
  rec.output("predictions.csv", preds.str(), n_preds);
  rec.note("warnings", report.warnings);
  rec.finish();
  return out;
}

namespace pipeline_detail {

inline Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json(path)); }

/// The checkpoint's test RoIs, optionally restricted to one region.
inline std::vector<RoISample> checkpoint_test_set(const Checkpoint& ckpt, const std::vector<RoISample>& data,
                                                  const std::string& region) {
  std::optional<Region> only;
  if (!region.empty()) {
    only = parse_region(region);
    if (!only) throw ValidationError("unknown region '" + region + "' (expected Centre|Front|Mucosa|Stroma)");
  }
  std::vector<RoISample> out;
  for (const auto* s : train_detail::pick(data, ckpt.test_rois)) {
    if (!only || s->region == *only) out.push_back(*s);
  }
  return out;
}

}  // namespace pipeline_detail

inline nlohmann::json run_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                                   const std::string& data_dir, const std::string& region,
                                   const std::string& out_dir) {
  RunRecorder rec("evaluate", cfg, out_dir);
  rec.input(checkpoint_path);
  rec.input(data_dir);
  const auto ckpt = pipeline_detail::load_checkpoint(checkpoint_path);
  const auto data = load_training_data(data_dir, ckpt.model.config());
  const auto test = pipeline_detail::checkpoint_test_set(ckpt, data, region);
  if (test.empty()) throw ValidationError("no test RoIs to evaluate");
  SplitPlan plan;
  for (const auto& s : test) plan.test_rois.push_back(s.roi_id);
  ExperimentReport report;
  report.model = model_name(ckpt.model.config());
  report.splits.push_back(score_split(ckpt.model, test, plan, ckpt.split, &report.warnings));
  const auto j = report_to_json(report);
  std::ostringstream preds;
  write_predictions_csv(preds, ckpt.model.config(), report.splits);
  rec.output("report.json", j.dump(2) + "\n");
  rec.output("predictions.csv", preds.str(), report.splits[0].predictions.size());
  rec.note("warnings", report.warnings);
  rec.finish();
  return j;
}

struct RoIExplanation {
  std::string roi_id;
  Attribution attribution;
  ExplainerMasks masks;
};

/// IG and mask explanations for one prepared RoI.
inline RoIExplanation explain_roi(const HierModel& model, const PreparedSample& p, const RunConfig& cfg) {
  return {p.roi_id, integrated_gradients(model, p, std::nullopt, cfg.ig_points), gnn_explain(model, p, cfg.explainer)};
}

inline std::vector<RoIExplanation> run_explain(const RunConfig& cfg, const std::string& checkpoint_path,
                                               const std::string& data_dir, const std::string& region,
                                               std::size_t top_k, const std::string& out_dir) {
  RunRecorder rec("explain", cfg, out_dir);
  rec.input(checkpoint_path);
  rec.input(data_dir);
  const auto ckpt = pipeline_detail::load_checkpoint(checkpoint_path);
  const HierModel& model = ckpt.model;
  if (model.config().kind != ModelKind::Gcn) {
    throw ValidationError("checkpoint holds a " + model_name(model.config()) +
                          " model; tile explanations need a gcn-* checkpoint");
  }
  const auto test = pipeline_detail::checkpoint_test_set(ckpt, load_bundles(data_dir), region);
  if (test.empty()) throw ValidationError("no test RoIs to explain");
  std::vector<RoIExplanation> out(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    out[i] = explain_roi(model, model.prepare(make_test_graph(test[i], model.config())), cfg);
  });

  std::ostringstream nodes, top, edges, gaps, features;
  nodes << "roi_id,tile_id,rank,node_ig,target_class,completeness_gap\n";
  top << "roi_id,rank,tile_id,node_ig\n";
  edges << "roi_id,tile_u,tile_v,edge_ig,edge_mask\n";
  gaps << "roi_id,target_class,f_input,f_baseline,sum_edge_ig,completeness_gap\n";
  std::size_t n_nodes = 0, n_top = 0, n_edges = 0;
  for (const auto& x : out) {
    const auto& a = x.attribution;
    const std::string id = pipeline_detail::csv_field(x.roi_id);
    const std::string target = class_name(model.config(), a.target_class);
    const std::string gap = text::format_double(a.completeness_gap);
    const auto ranked = rank_tiles(a, a.node_ig.size());
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      nodes << id << ',' << ranked[r].tile_id << ',' << r + 1 << ',' << text::format_double(ranked[r].score) << ','
            << target << ',' << gap << '\n';
      ++n_nodes;
      if (r < top_k) {
        top << id << ',' << r + 1 << ',' << ranked[r].tile_id << ',' << text::format_double(ranked[r].score) << '\n';
        ++n_top;
      }
    }
    double sum = 0.0;
    for (std::size_t e = 0; e < a.edges.size(); ++e) {
      edges << id << ',' << a.tile_ids[a.edges[e].u] << ',' << a.tile_ids[a.edges[e].v] << ','
            << text::format_double(a.edge_ig[e]) << ',' << text::format_double(x.masks.edge_mask[e]) << '\n';
      sum += a.edge_ig[e];
      ++n_edges;
    }
    gaps << id << ',' << target << ',' << text::format_double(a.f_input) << ',' << text::format_double(a.f_baseline)
         << ',' << text::format_double(sum) << ',' << gap << '\n';
  }
  std::vector<ExplainerMasks> masks;
  for (const auto& x : out) masks.push_back(x.masks);
  const auto names = tile_feature_names(model.config().cell_embed_dim);
  const auto report = feature_importance_report(masks, names);
  features << "rank,feature,index,mean_mask\n";
  for (std::size_t r = 0; r < report.size(); ++r) {
    features << r + 1 << ',' << report[r].name << ',' << report[r].index << ','
             << text::format_double(report[r].mean_mask) << '\n';
  }
  rec.output("attributions.csv", nodes.str(), n_nodes);
  rec.output("top_tiles.csv", top.str(), n_top);
  rec.output("edge_attributions.csv", edges.str(), n_edges);
  rec.output("completeness.csv", gaps.str(), out.size());
  rec.output("feature_importance.csv", features.str(), report.size());
  rec.note("top_k", top_k);
  rec.finish();
  return out;
}

}  // namespace tmegraph
