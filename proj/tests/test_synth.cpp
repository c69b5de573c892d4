#include <gtest/gtest.h>
#include <cmath>
#include <sstream>
#include "tmegraph/metrics.hpp"
#include "tmegraph/synth.hpp"

namespace tmegraph {
namespace {

std::string cells_csv(const SynthCohort& c) {
  std::ostringstream os;
  write_cell_table(os, c.rois);
  return os.str();
}

SynthConfig small(std::size_t patients, std::uint64_t seed = 11) {
  SynthConfig cfg;
  cfg.n_patients = patients;
  cfg.seed = seed;
  return cfg;
}

// |mean_a - mean_b| / pooled SD over per-cell values.
double separation(const std::vector<double>& a, const std::vector<double>& b) {
  auto stats = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, s};
  };
  const auto [ma, sa] = stats(a);
  const auto [mb, sb] = stats(b);
  const double pooled = std::sqrt((sa + sb) / static_cast<double>(a.size() + b.size() - 2));
  return std::abs(ma - mb) / pooled;
}

std::array<std::vector<std::vector<double>>, 3> features_by_class(const SynthCohort& c) {
  std::array<std::vector<std::vector<double>>, 3> out;
  for (auto& cls : out) cls.resize(kNumCellFeatures);
  for (const auto& r : c.rois) {
    for (const auto& cell : r.cells) {
      const auto f = cell.features();
      for (std::size_t k = 0; k < kNumCellFeatures; ++k) {
        out[static_cast<std::size_t>(r.stage)][k].push_back(f[k]);
      }
    }
  }
  return out;
}

TEST(Synth, SameSeedIsByteIdentical) {
  const auto a = generate_cohort(small(2));
  const auto b = generate_cohort(small(2));
  EXPECT_EQ(cells_csv(a), cells_csv(b));
  EXPECT_EQ(truth_to_json(a, small(2)).dump(), truth_to_json(b, small(2)).dump());
  EXPECT_NE(cells_csv(a), cells_csv(generate_cohort(small(2, 12))));
}

TEST(Synth, IndependentOfThreadCount) {
  const auto cfg = small(2);
  setenv("TMEGNN_THREADS", "1", 1);
  const auto serial = cells_csv(generate_cohort(cfg));
  setenv("TMEGNN_THREADS", "4", 1);
  EXPECT_EQ(serial, cells_csv(generate_cohort(cfg)));
  unsetenv("TMEGNN_THREADS");
}

TEST(Synth, CellsInBoundsAndExpressionsNonNegative) {
  const auto c = generate_cohort(small(3));
  ASSERT_EQ(c.rois.size(), 12u);
  for (const auto& r : c.rois) {
    for (const auto& cell : r.cells) {
      ASSERT_GE(cell.x, 0.0);
      ASSERT_LT(cell.x, r.width);
      ASSERT_GE(cell.y, 0.0);
      ASSERT_LT(cell.y, r.height);
      for (double e : cell.expr) ASSERT_GE(e, 0.0);
      ASSERT_GT(cell.area, 0.0);
      ASSERT_LE(cell.solidity, 1.0);
    }
  }
}

TEST(Synth, OutputRoundTripsThroughIngest) {
  const auto c = generate_cohort(small(1));
  std::istringstream in(cells_csv(c));
  const auto parsed = parse_cell_table(in);
  ASSERT_EQ(parsed.size(), c.rois.size());
  for (std::size_t r = 0; r < parsed.size(); ++r) {
    EXPECT_EQ(parsed[r].roi_id, c.rois[r].roi_id);
    EXPECT_EQ(parsed[r].region, c.rois[r].region);
    ASSERT_EQ(parsed[r].cells.size(), c.rois[r].cells.size());
    EXPECT_EQ(parsed[r].cells.back().expr, c.rois[r].cells.back().expr);
    EXPECT_EQ(parsed[r].cells.back().x, c.rois[r].cells.back().x);
  }
}

TEST(Synth, PatientRoIsShareStageAndCycleRegions) {
  const auto c = generate_cohort(small(5));
  for (std::size_t i = 0; i < c.rois.size(); ++i) {
    EXPECT_EQ(c.rois[i].stage, c.rois[i - i % 4].stage);
    EXPECT_EQ(c.rois[i].patient_id, c.rois[i - i % 4].patient_id);
    EXPECT_EQ(c.rois[i].region, kAllRegions[i % 4]);
  }
}

TEST(Synth, MeanCellCountMatchesIntensity) {
  const auto c = generate_cohort(small(25));
  ASSERT_EQ(c.rois.size(), 100u);
  double total = 0.0;
  for (const auto& r : c.rois) total += static_cast<double>(r.cells.size());
  double lambda = 0.0;
  for (double l : ClassProfile{}.effective_intensity()) lambda += l;
  const double mean = total / 100.0;
  EXPECT_LT(std::abs(mean - lambda), 3.0 * std::sqrt(lambda / 100.0)) << mean << " vs " << lambda;
}

TEST(Synth, ClassCountsFollowPriors) {
  SynthConfig cfg = small(600);
  cfg.rois_per_patient = 1;
  cfg.class_priors = {0.2, 0.5, 0.3};
  for (auto& p : cfg.classes) p.intensity = {1, 1, 1, 1, 5};
  const auto c = generate_cohort(cfg);
  std::array<double, 3> counts{};
  for (const auto& r : c.rois) counts[static_cast<std::size_t>(r.stage)] += 1.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double p = cfg.class_priors[k];
    const double sd = std::sqrt(600.0 * p * (1.0 - p));
    EXPECT_LT(std::abs(counts[k] - 600.0 * p), 3.0 * sd) << k;
  }
}

TEST(Synth, MixingRaisesImmuneTumourInteraction) {
  auto mean_ratio = [](double mixing) {
    SynthConfig cfg = small(13, 5);
    cfg.rois_per_patient = 4;
    for (auto& p : cfg.classes) p.mixing = mixing;
    const auto c = generate_cohort(cfg);
    double sum = 0.0;
    for (std::size_t r = 0; r < 50; ++r) {
      const auto& roi = c.rois[r];
      std::vector<Point> pts;
      std::vector<Phenotype> labels;
      for (const auto& cell : roi.cells) {
        pts.push_back({cell.x, cell.y});
        labels.push_back(*cell.phenotype);
      }
      auto g = build_graph(pts, Matrix(pts.size(), 0), 30.0);
      g.node_labels = labels;
      sum += interaction_ratio(g);
    }
    return sum / 50.0;
  };
  const double low = mean_ratio(0.0);
  const double high = mean_ratio(1.0);
  EXPECT_GT(high, low);
  EXPECT_GT(high, 1.0);
}

TEST(Synth, PhenotypingRecoversTruthBelowNoiseThreshold) {
  SynthConfig cfg = small(5);
  cfg.marker_noise = 0.005;  // documented threshold
  auto c = generate_cohort(cfg);
  const auto truth = c.rois;
  phenotype_rois(c.rois);
  std::size_t ok = 0, n = 0;
  for (std::size_t r = 0; r < c.rois.size(); ++r) {
    for (std::size_t i = 0; i < c.rois[r].cells.size(); ++i) {
      ++n;
      ok += c.rois[r].cells[i].phenotype == truth[r].cells[i].phenotype;
    }
  }
  EXPECT_GE(static_cast<double>(ok) / static_cast<double>(n), 0.95);
}

TEST(Synth, TopologyOnlyMatchesFeatureMarginals) {
  const auto c = planted_signal_cohort(PlantedKind::TopologyOnly, small(25, 3));
  const auto by_class = features_by_class(c);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      if (by_class[a][0].empty() || by_class[b][0].empty()) continue;
      for (std::size_t k = 0; k < kNumCellFeatures; ++k) {
        EXPECT_LT(separation(by_class[a][k], by_class[b][k]), 0.05) << a << b << " feature " << k;
      }
    }
  }
}

TEST(Synth, FeatureOnlyPlantsCd20Alone) {
  const auto c = planted_signal_cohort(PlantedKind::FeatureOnly, small(25, 4));
  const auto by_class = features_by_class(c);
  ASSERT_FALSE(by_class[0][0].empty());
  ASSERT_FALSE(by_class[1][0].empty());
  for (std::size_t k = 0; k < kNumCellFeatures; ++k) {
    const double s = separation(by_class[0][k], by_class[1][k]);
    if (k == static_cast<std::size_t>(Phenotype::BCell)) {
      EXPECT_GT(s, 2.0);
    } else {
      EXPECT_LT(s, 0.1) << "feature " << k;
    }
  }
}

TEST(Synth, RatioSplitsTCellIntensity) {
  ClassProfile p;
  p.intensity = {100, 300, 0, 0, 10};
  p.cd4_cd8_ratio = 3.0;
  const auto e = p.effective_intensity();
  EXPECT_DOUBLE_EQ(e[0], 300.0);
  EXPECT_DOUBLE_EQ(e[1], 100.0);
}

TEST(Synth, ConfigValidation) {
  SynthConfig cfg;
  cfg.class_priors = {0.5, 0.5, 0.5};
  EXPECT_THROW(generate_cohort(cfg), ValidationError);
  cfg = SynthConfig{};
  for (auto& p : cfg.classes) p.intensity = {0, 0, 0, 0, 0};
  EXPECT_THROW(generate_cohort(cfg), ValidationError);
  cfg = SynthConfig{};
  cfg.classes[1].mixing = 1.5;
  EXPECT_THROW(generate_cohort(cfg), ValidationError);
}

TEST(Synth, ConfigJsonRoundTrip) {
  SynthConfig cfg = planted_signal_config(PlantedKind::FeatureOnly, small(3, 99));
  const nlohmann::json j = cfg;
  EXPECT_EQ(j.get<SynthConfig>(), cfg);
  const auto partial = nlohmann::json{{"n_patients", 4}}.get<SynthConfig>();
  EXPECT_EQ(partial.n_patients, 4u);
  EXPECT_EQ(partial.seed, SynthConfig{}.seed);
}

TEST(Synth, TruthRecordsCounts) {
  const auto c = generate_cohort(small(1));
  const auto j = truth_to_json(c, small(1));
  ASSERT_EQ(j["rois"].size(), 4u);
  std::size_t total = 0;
  for (auto& [k, v] : j["rois"][0]["cell_counts"].items()) total += v.get<std::size_t>();
  EXPECT_EQ(total, c.rois[0].cells.size());
}

}  // namespace
}  // namespace tmegraph
