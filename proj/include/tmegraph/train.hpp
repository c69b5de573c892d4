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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmegraph/dataset.hpp"
#include "tmegraph/model.hpp"

namespace tmegraph {

/// RoI ids per role. Pseudo-validation RoIs come from the training
/// patients and are held out of gradient updates.
struct SplitPlan {
  std::vector<std::string> train_rois;
  std::vector<std::string> test_rois;
  std::vector<std::string> pseudo_val_rois;

  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

inline nlohmann::json split_to_json(const SplitPlan& s) {
  return {{"train", s.train_rois}, {"test", s.test_rois}, {"pseudo_val", s.pseudo_val_rois}};
}

inline SplitPlan split_from_json(const nlohmann::json& j) {
  try {
    return {j.at("train").get<std::vector<std::string>>(), j.at("test").get<std::vector<std::string>>(),
            j.value("pseudo_val", std::vector<std::string>{})};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed split: ") + e.what());
  }
}

/// Throws unless every id is known, roles do not overlap, pseudo-val RoIs
/// belong to training patients and no patient is in both train and test.
inline void validate_split(const SplitPlan& plan, std::span<const RoISample> data) {
  std::map<std::string, const RoISample*> by_id;
  for (const auto& s : data) by_id[s.roi_id] = &s;
  auto patients = [&](const std::vector<std::string>& ids) {
    std::set<std::string> out;
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ValidationError("split references unknown RoI '" + id + "'");
      out.insert(it->second->patient_id);
    }
    return out;
  };
  auto train_p = patients(plan.train_rois);
  const auto val_p = patients(plan.pseudo_val_rois);
  const auto test_p = patients(plan.test_rois);
  if (plan.train_rois.empty() || plan.test_rois.empty()) throw ValidationError("split: empty train or test set");
  train_p.insert(val_p.begin(), val_p.end());
  for (const auto& p : test_p) {
    if (train_p.count(p)) throw ValidationError("split violates patient disjointness: patient " + p);
  }
  std::set<std::string> seen;
  for (const auto* ids : {&plan.train_rois, &plan.pseudo_val_rois, &plan.test_rois}) {
    for (const auto& id : *ids) {
      if (!seen.insert(id).second) throw ValidationError("split lists RoI '" + id + "' twice");
    }
  }
}

namespace train_detail {

/// round(fraction * n) items chosen from each stratum, summing to the
/// rounded total by largest remainder.
inline std::vector<std::size_t> stratified_counts(const std::vector<std::size_t>& sizes, double fraction) {
  std::size_t n = 0;
  for (auto s : sizes) n += s;
  const auto total = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> out(sizes.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double exact = fraction * static_cast<double>(sizes[i]);
    out[i] = static_cast<std::size_t>(std::floor(exact));
    used += out[i];
    rem.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total && k < rem.size(); ++k) {
    if (out[rem[k].second] < sizes[rem[k].second]) {
      ++out[rem[k].second];
      ++used;
    }
  }
  return out;
}

}  // namespace train_detail

/// Patient-level split stratified by stage (a patient's stage is that of
/// its first RoI), then a stage-stratified pseudo-validation draw from the
/// training RoIs. Seeded by derive_seed(seed, {4, split_index}).
inline SplitPlan make_split(std::span<const RoISample> data, const HierModelConfig& cfg, std::uint64_t seed,
                            std::size_t split_index = 0) {
  Rng rng(derive_seed(seed, {4, split_index}));
  std::map<std::string, Stage> patient_stage;
  for (const auto& s : data) patient_stage.try_emplace(s.patient_id, s.stage);
  std::vector<std::vector<std::string>> strata(3);
  for (const auto& [p, st] : patient_stage) strata[static_cast<std::size_t>(st)].push_back(p);
  std::vector<std::size_t> sizes;
  for (auto& st : strata) {
    rng.shuffle(std::span<std::string>(st));
    sizes.push_back(st.size());
  }
  const auto n_test = train_detail::stratified_counts(sizes, cfg.test_fraction);
  std::set<std::string> test_patients;
  for (std::size_t k = 0; k < strata.size(); ++k) {
    test_patients.insert(strata[k].begin(), strata[k].begin() + static_cast<std::ptrdiff_t>(n_test[k]));
  }
  SplitPlan plan;
  std::vector<std::vector<std::string>> train_by_stage(3);
  for (const auto& s : data) {
    if (test_patients.count(s.patient_id)) {
      plan.test_rois.push_back(s.roi_id);
    } else {
      train_by_stage[static_cast<std::size_t>(s.stage)].push_back(s.roi_id);
    }
  }
  std::vector<std::size_t> train_sizes;
  for (auto& st : train_by_stage) {
    rng.shuffle(std::span<std::string>(st));
    train_sizes.push_back(st.size());
  }
  const auto n_val = train_detail::stratified_counts(train_sizes, cfg.pseudo_val_fraction);
  std::set<std::string> val;
  for (std::size_t k = 0; k < 3; ++k) {
    val.insert(train_by_stage[k].begin(), train_by_stage[k].begin() + static_cast<std::ptrdiff_t>(n_val[k]));
  }
  for (const auto& s : data) {
    if (test_patients.count(s.patient_id)) continue;
    (val.count(s.roi_id) ? plan.pseudo_val_rois : plan.train_rois).push_back(s.roi_id);
  }
  validate_split(plan, data);
  return plan;
}

/// w_c = N / (C * n_c); classes absent from the labels get weight 0.
inline std::vector<double> class_weights(std::span<const std::size_t> labels, std::size_t n_classes) {
  std::vector<double> count(n_classes, 0.0);
  for (auto y : labels) count.at(y) += 1.0;
  std::vector<double> w(n_classes, 0.0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (count[c] > 0.0) w[c] = static_cast<double>(labels.size()) / (static_cast<double>(n_classes) * count[c]);
  }
  return w;
}

/// Support-weighted mean of per-class F1 over the classes present in y_true.
inline double weighted_f1(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred,
                          std::size_t n_classes) {
  if (y_true.size() != y_pred.size()) throw ValidationError("weighted_f1: length mismatch");
  if (y_true.empty()) return 0.0;
  std::vector<double> tp(n_classes, 0.0), fp(n_classes, 0.0), fn(n_classes, 0.0), support(n_classes, 0.0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    support.at(y_true[i]) += 1.0;
    if (y_true[i] == y_pred[i]) {
      tp[y_true[i]] += 1.0;
    } else {
      fp.at(y_pred[i]) += 1.0;
      fn[y_true[i]] += 1.0;
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    const double f1 = denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
    total += support[c] * f1;
  }
  return total / static_cast<double>(y_true.size());
}

struct Prediction {
  std::string roi_id;
  Region region = Region::Centre;
  std::size_t true_class = 0;
  std::size_t predicted = 0;
  std::vector<double> probabilities;
};

inline std::vector<Prediction> predict(const HierModel& model, std::span<const PreparedSample> samples) {
  std::vector<Prediction> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto logits = model.logits(samples[i]);
    out[i] = {samples[i].roi_id, samples[i].region, samples[i].label, argmax(logits), ad::softmax_row(logits)};
  });
  return out;
}

inline constexpr std::array<std::string_view, 5> kReportGroups = {"All", "Centre", "Front", "Mucosa", "Stroma"};

struct RegionScore {
  std::string group;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Weighted F1 overall and per region. Regions with no RoIs are left out
/// and named in `warnings`.
inline std::vector<RegionScore> evaluate(std::span<const Prediction> preds, std::size_t n_classes,
                                         std::vector<std::string>* warnings = nullptr) {
  std::vector<RegionScore> out;
  for (auto group : kReportGroups) {
    std::vector<std::size_t> t, p;
    for (const auto& pr : preds) {
      if (group == "All" || to_string(pr.region) == group) {
        t.push_back(pr.true_class);
        p.push_back(pr.predicted);
      }
    }
    if (t.empty()) {
      if (warnings) warnings->push_back("no test RoIs in region " + std::string(group) + "; row omitted");
      continue;
    }
    out.push_back({std::string(group), weighted_f1(t, p, n_classes), t.size()});
  }
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_f1 = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  HierModel model;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::vector<double> class_weights;
};

inline nlohmann::json log_to_json(std::span<const EpochLog> log) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : log) {
    out.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_f1", e.val_f1}, {"val_loss", e.val_loss}});
  }
  return out;
}

namespace train_detail {

inline std::vector<const RoISample*> pick(std::span<const RoISample> data, const std::vector<std::string>& ids) {
  std::map<std::string, const RoISample*> by_id;
  for (const auto& s : data) by_id[s.roi_id] = &s;
  std::vector<const RoISample*> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("unknown RoI '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

inline double mean_loss(const HierModel& model, std::span<const PreparedSample> samples,
                        std::span<const double> weights) {
  if (samples.empty()) return 0.0;
  std::vector<Tensor> rows;
  std::vector<std::size_t> labels;
  Rng unused(0);
  for (const auto& s : samples) {
    rows.push_back(model.forward(s, false, unused));
    labels.push_back(s.label);
  }
  return ad::weighted_cross_entropy(ad::concat_rows(rows), labels, weights).item();
}

}  // namespace train_detail

/// Trains with mini-batch Adam (L2 through weight_decay) on a weighted
/// cross entropy. The augmented set (augment_copies per training RoI) is
/// built once. After each epoch the pseudo-validation weighted F1 is
/// measured; the best epoch (ties broken by lower validation loss) is kept
/// and training stops after `patience` epochs without improvement.
/// Without pseudo-validation RoIs the last epoch is kept.
inline TrainResult train(std::span<const RoISample> data, const SplitPlan& plan, const HierModelConfig& cfg,
                         std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  validate_split(plan, data);
  const auto train_set = train_detail::pick(data, plan.train_rois);
  const auto val_set = train_detail::pick(data, plan.pseudo_val_rois);
  if (train_set.empty()) throw ValidationError("train: empty training split");

  TrainResult result;
  result.model = HierModel(cfg, derive_seed(seed, {6}));
  HierModel& model = result.model;
  std::vector<RoISample> base;
  for (const auto* s : train_set) base.push_back(*s);
  model.fit_normalizers(base);

  const bool augmenting = model.uses_graphs() && cfg.augment_copies > 0;
  std::vector<PreparedSample> train_samples(augmenting ? base.size() * cfg.augment_copies : base.size());
  parallel_for(train_samples.size(), [&](std::size_t i) {
    if (!augmenting) {
      train_samples[i] = model.prepare(base[i]);
      return;
    }
    const std::size_t r = i / cfg.augment_copies, copy = i % cfg.augment_copies;
    const auto aug_seed = derive_seed(seed, {5, fnv1a(base[r].roi_id), copy});
    train_samples[i] = model.prepare(augment(base[r], cfg, aug_seed));
  });
  std::vector<PreparedSample> val_samples(val_set.size());
  parallel_for(val_set.size(), [&](std::size_t i) { val_samples[i] = model.prepare(make_test_graph(*val_set[i], cfg)); });

  std::vector<std::size_t> labels;
  for (const auto& s : base) labels.push_back(cfg.class_of(s.stage));
  result.class_weights = class_weights(labels, cfg.n_classes);

  nn::Adam opt(model.trainable(), {cfg.lr, cfg.weight_decay});
  auto snapshot = [&] {
    std::vector<Matrix> v;
    for (const auto& p : model.parameters()) v.push_back(p.tensor.value());
    return v;
  };
  std::vector<Matrix> best = snapshot();
  double best_f1 = -1.0, best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  Rng rng(derive_seed(seed, {7}));
  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> rows;
      std::vector<std::size_t> y;
      for (std::size_t k = start; k < end; ++k) {
        rows.push_back(model.forward(train_samples[order[k]], true, rng));
        y.push_back(train_samples[order[k]].label);
      }
      const Tensor loss = ad::weighted_cross_entropy(ad::concat_rows(rows), y, result.class_weights);
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += loss.item();
      ++batches;
    }
    EpochLog entry{epoch, loss_sum / static_cast<double>(batches), 0.0, 0.0};
    if (!val_samples.empty()) {
      const auto preds = predict(model, val_samples);
      std::vector<std::size_t> t, p;
      for (const auto& pr : preds) {
        t.push_back(pr.true_class);
        p.push_back(pr.predicted);
      }
      entry.val_f1 = weighted_f1(t, p, cfg.n_classes);
      entry.val_loss = train_detail::mean_loss(model, val_samples, result.class_weights);
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    const bool improved = val_samples.empty() || entry.val_f1 > best_f1 ||
                          (entry.val_f1 == best_f1 && entry.val_loss < best_loss);
    if (improved) {
      best_f1 = entry.val_f1;
      best_loss = entry.val_loss;
      best = snapshot();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) params[k].tensor.mutable_value() = best[k];
  return result;
}

struct SplitReport {
  std::size_t split = 0;
  SplitPlan plan;
  std::vector<RegionScore> scores;
  std::vector<Prediction> predictions;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

struct ExperimentReport {
  std::string model;
  std::vector<SplitReport> splits;
  std::vector<std::string> warnings;
};

/// Mean and sample standard deviation of each group's F1 over splits.
inline nlohmann::json report_to_json(const ExperimentReport& r) {
  nlohmann::json splits = nlohmann::json::array();
  std::map<std::string, std::vector<double>> by_group;
  for (const auto& s : r.splits) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& g : s.scores) {
      rows.push_back({{"group", g.group}, {"weighted_f1", g.f1}, {"support", g.support}});
      by_group[g.group].push_back(g.f1);
    }
    splits.push_back({{"split", s.split},
                      {"best_epoch", s.best_epoch},
                      {"epochs_run", s.epochs_run},
                      {"test_rois", s.plan.test_rois.size()},
                      {"rows", rows}});
  }
  nlohmann::json summary = nlohmann::json::array();
  for (auto group : kReportGroups) {
    auto it = by_group.find(std::string(group));
    if (it == by_group.end()) continue;
    const auto& v = it->second;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    summary.push_back({{"group", std::string(group)}, {"mean", mean}, {"std", sd}, {"n_splits", v.size()}});
  }
  return {{"model", r.model}, {"splits", splits}, {"summary", summary}, {"warnings", r.warnings}};
}

/// Test-set predictions and the per-region table for one trained model.
inline SplitReport score_split(const HierModel& model, std::span<const RoISample> data, const SplitPlan& plan,
                               std::size_t split, std::vector<std::string>* warnings = nullptr) {
  SplitReport rep;
  rep.split = split;
  rep.plan = plan;
  const auto test = train_detail::pick(data, plan.test_rois);
  std::vector<PreparedSample> prepared(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    prepared[i] = model.prepare(make_test_graph(*test[i], model.config()));
  });
  rep.predictions = predict(model, prepared);
  std::vector<std::string> local;
  rep.scores = evaluate(rep.predictions, model.config().n_classes, &local);
  if (warnings) {
    for (const auto& w : local) warnings->push_back("split " + std::to_string(split) + ": " + w);
  }
  return rep;
}

struct ExperimentRun {
  ExperimentReport report;
  std::vector<TrainResult> models;
};

/// Trains and scores cfg.n_splits patient-level splits (or the given fixed
/// plans). Split k trains with derive_seed(seed, {8, k}).
inline ExperimentRun run_experiment(std::span<const RoISample> data, const HierModelConfig& cfg, std::uint64_t seed,
                                    std::vector<SplitPlan> plans = {},
                                    const std::function<void(std::size_t, const EpochLog&)>& on_epoch = {}) {
  if (plans.empty()) {
    for (std::size_t k = 0; k < cfg.n_splits; ++k) plans.push_back(make_split(data, cfg, seed, k));
  }
  ExperimentRun run;
  run.report.model = model_name(cfg);
  for (std::size_t k = 0; k < plans.size(); ++k) {
    auto callback = [&](const EpochLog& e) {
      if (on_epoch) on_epoch(k, e);
    };
    auto result = train(data, plans[k], cfg, derive_seed(seed, {8, k}), callback);
    auto rep = score_split(result.model, data, plans[k], k, &run.report.warnings);
    rep.best_epoch = result.best_epoch;
    rep.epochs_run = result.log.size();
    run.report.splits.push_back(std::move(rep));
    run.models.push_back(std::move(result));
  }
  return run;
}

}  // namespace tmegraph
