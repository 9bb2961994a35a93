#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "priq/priq.hpp"
#include "priq/testing/oracles.hpp"

using namespace priq;

namespace {

// Small enough to train in well under a second per epoch.
RunConfig tiny_config() {
  RunConfig c;
  c.dataset.params.num_scenes = 5;
  c.epochs = 2;
  c.batch_sets = 2;
  c.N_train = 3;
  c.seeds = {0, 1, 2};
  c.T_values = {2, 5};
  return c;
}

const synth::SceneSplit& tiny_split() {
  static const auto split = [] {
    const auto c = tiny_config();
    return synth::split_scenes(synth::build_dataset(c.dataset.params), c.dataset.train_fraction, c.dataset.split_seed);
  }();
  return split;
}

std::vector<double> random_values(std::size_t n, Rng& rng, bool ties) {
  auto v = oracle::random_buffer(n, rng);
  if (ties) {
    for (auto& x : v) x = std::round(x * 3);
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, PearsonExamples) {
  std::vector<double> x{1, 2, 4, 7, 11}, y, neg;
  for (double v : x) {
    y.push_back(2 * v + 3);
    neg.push_back(-v);
  }
  EXPECT_NEAR(pearson(x, y), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, neg), -1.0, 1e-15);
  EXPECT_THROW(pearson(x, std::vector<double>(5, 2.0)), UndefinedMetricError);
  EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{2}), UndefinedMetricError);
  EXPECT_THROW(pearson(x, std::vector<double>{1, 2}), ShapeError);
}

TEST(Metrics, SpearmanExamples) {
  std::vector<double> x{-3, -1, 0.5, 2, 9}, cube, rev;
  for (double v : x) {
    cube.push_back(v * v * v);
    rev.push_back(-v);
  }
  EXPECT_NEAR(spearman(x, cube), 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, rev), -1.0, 1e-15);
  EXPECT_EQ(average_ranks(std::vector<double>{3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(Metrics, MatchOraclesOnThousandCasesWithTies) {
  Rng rng(1);
  double worst_p = 0, worst_s = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + trial % 60;
    const bool ties = trial % 2 == 1;
    const auto x = random_values(n, rng, ties), y = random_values(n, rng, ties);
    try {
      const double p = pearson(x, y);
      worst_p = std::max(worst_p, std::abs(p - oracle::pearson(x, y)));
      worst_s = std::max(worst_s, std::abs(spearman(x, y) - oracle::spearman(x, y)));
    } catch (const UndefinedMetricError&) {
      // constant draw; the oracle is undefined too
    }
  }
  EXPECT_LE(worst_p, 1e-12);
  EXPECT_LE(worst_s, 1e-12);
}

TEST(Metrics, MedianMatchesSortOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = oracle::random_buffer(1 + trial % 9, rng);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double want = n % 2 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2;
    EXPECT_EQ(median(v), want);
  }
  EXPECT_THROW(median({}), UndefinedMetricError);
}

// ---------------------------------------------------------------------------
// Partition and evaluation

TEST(Partition, SetSizesAndRemainder) {
  const auto& test = tiny_split().test;
  ASSERT_EQ(test.scenes.size(), 1u);
  ASSERT_EQ(test.scenes[0].images.size(), 20u);
  auto sizes = [&](std::size_t T) {
    std::vector<std::size_t> s;
    for (const auto& set : partition_test(test, T, 3).sets) s.push_back(set.image_index.size());
    return s;
  };
  EXPECT_EQ(sizes(5), (std::vector<std::size_t>{5, 5, 5, 5}));
  EXPECT_EQ(sizes(7), (std::vector<std::size_t>{7, 7, 6}));
  EXPECT_EQ(sizes(1), std::vector<std::size_t>(20, 1));
  EXPECT_EQ(sizes(100), (std::vector<std::size_t>{20}));
  EXPECT_THROW(partition_test(test, 0, 3), ConfigError);
  EXPECT_THROW(partition_test(synth::Dataset{}, 5, 3), ConfigError);
}

TEST(Partition, TotalityAndSeedDeterminism) {
  const auto ds = synth::build_dataset({.num_scenes = 6});
  for (std::size_t T : {1, 2, 3, 5, 7, 10, 20, 50}) {
    const auto a = partition_test(ds, T, 11);
    EXPECT_NO_THROW(check_partition_totality(ds, a));
    EXPECT_EQ(a.sets, partition_test(ds, T, 11).sets);
    for (const auto& set : a.sets) EXPECT_LT(set.scene_index, ds.scenes.size());
  }
  EXPECT_NE(partition_test(ds, 5, 11).sets, partition_test(ds, 5, 12).sets);
  auto broken = partition_test(ds, 5, 11);
  broken.sets.back().image_index.push_back(broken.sets.front().image_index.front());
  EXPECT_THROW(check_partition_totality(ds, broken), Error);
}

TEST(Evaluate, PerfectAndConstantStubs) {
  const auto& test = tiny_split().test;
  SetPredictor perfect = [](const Tensor<float>&, std::span<const synth::LabeledImage* const> members) {
    std::vector<double> s;
    for (const auto* m : members) s.push_back(m->score);
    return s;
  };
  const auto r = evaluate_with(perfect, test, 5, 1, 64);
  EXPECT_NEAR(r.lcc, 1.0, 1e-12);
  EXPECT_NEAR(r.srocc, 1.0, 1e-12);
  EXPECT_EQ(r.predictions.size(), test.num_images());
  SetPredictor constant = [](const Tensor<float>& images, std::span<const synth::LabeledImage* const>) {
    return std::vector<double>(images.dim(0), 0.5);
  };
  EXPECT_THROW(evaluate_with(constant, test, 5, 1, 64), UndefinedMetricError);
}

TEST(Evaluate, SetsSeenByPredictorAreTheSameAcrossMethods) {
  const auto& test = tiny_split().test;
  auto record = [&](std::vector<std::vector<std::size_t>>& log) {
    return SetPredictor([&log](const Tensor<float>& images, std::span<const synth::LabeledImage* const> members) {
      std::vector<std::size_t> ids;
      std::vector<double> s;
      for (const auto* m : members) {
        ids.push_back(static_cast<std::size_t>(m->distortion.family) * 10 + static_cast<std::size_t>(m->distortion.level));
        s.push_back(m->score + 0.001 * images[0]);
      }
      log.push_back(ids);
      return s;
    });
  };
  std::vector<std::vector<std::size_t>> a, b;
  evaluate_with(record(a), test, 5, 4, 64);
  evaluate_with(record(b), test, 5, 4, 64);
  EXPECT_EQ(a, b);
}

// ---------------------------------------------------------------------------
// Training and checkpoints

TEST(Train, LearningRateSchedule) {
  RunConfig c;
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 0), 0.02);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 9), 0.02);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 10), 0.02 * 0.3);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 25), 0.02 * 0.3 * 0.3);
  EXPECT_EQ(c.batch_images(), 30u);
}

TEST(Train, SgdMomentumStep) {
  Tensor<float> p({2}, {1.0f, -2.0f}, true);
  p.mutable_grad()[0] = 0.5f;
  p.mutable_grad()[1] = -1.0f;
  SgdMomentum opt({p}, 0.9, 0.1);
  opt.step(0.1);
  EXPECT_FLOAT_EQ(p[0], 1.0f - 0.1f * (0.5f + 0.1f * 1.0f));
  const float v0 = 0.5f + 0.1f * 1.0f;
  const float p0 = p[0];
  opt.step(0.1);
  EXPECT_FLOAT_EQ(p[0], p0 - 0.1f * (0.9f * v0 + 0.5f + 0.1f * p0));
}

TEST(Train, OverfitsOneSceneOfTenImages) {
  RunConfig c;
  c.epochs = 200;
  const auto full = synth::build_dataset({.num_scenes = 2});
  synth::Dataset one;
  one.image_size = full.image_size;
  one.scenes.push_back(full.scenes[0]);
  auto& imgs = one.scenes[0].images;
  std::vector<synth::LabeledImage> kept;
  for (std::size_t i = 0; i < imgs.size(); i += 2) kept.push_back(imgs[i]);
  imgs = kept;
  ASSERT_EQ(one.num_images(), 10u);
  const auto r = train(c, one, 0);
  ASSERT_EQ(r.loss_curve.size(), 200u);
  EXPECT_LT(r.loss_curve.back(), 0.1 * r.initial_loss) << "initial " << r.initial_loss;
}

TEST(Train, IdenticalSeedsGiveBitIdenticalCheckpoints) {
  const auto c = tiny_config();
  const auto a = serialize_checkpoint(train(c, tiny_split().train, 5));
  const auto b = serialize_checkpoint(train(c, tiny_split().train, 5));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, serialize_checkpoint(train(c, tiny_split().train, 6)));
}

TEST(Train, BaselineToggleTrains) {
  auto c = tiny_config();
  c.pseudo_ref = c.ssim = c.pyramid = false;
  const auto r = train(c, tiny_split().train, 0);
  EXPECT_TRUE(std::isfinite(r.loss_curve.back()));
  const auto e = evaluate(r.model, tiny_split().test, 5, 1, 64);
  EXPECT_GE(e.srocc, -1.0);
}

TEST(Train, DivergenceIsReported) {
  auto c = tiny_config();
  c.learning_rate = 1e30;
  c.epochs = 3;
  try {
    train(c, tiny_split().train, 0);
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(Evaluate, TrainedModelIsReproducible) {
  const auto c = tiny_config();
  const auto split = tiny_split();
  const auto a = evaluate(train(c, split.train, 1).model, split.test, 5, 3, 64);
  const auto b = evaluate(train(c, split.train, 1).model, split.test, 5, 3, 64);
  EXPECT_NEAR(a.lcc, b.lcc, 1e-9);
  EXPECT_NEAR(a.srocc, b.srocc, 1e-9);
  EXPECT_EQ(a.predictions, b.predictions);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const auto c = tiny_config();
  const auto run = train(c, tiny_split().train, 2);
  const auto path = (std::filesystem::temp_directory_path() / "priq_roundtrip.ckpt").string();
  checkpoint_save(run, path);
  const auto back = checkpoint_load(path);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(run));
  EXPECT_EQ(back.loss_curve, run.loss_curve);
  EXPECT_EQ(back.initial_loss, run.initial_loss);
  const auto probe = synth::apply_transform({&tiny_split().test.scenes[0].images[0].pixels,
                                              &tiny_split().test.scenes[0].images[9].pixels,
                                              &tiny_split().test.scenes[0].images[15].pixels},
                                             64, synth::center_transform(80, 64));
  const auto pa = predict(run.model, probe), pb = predict(back.model, probe);
  EXPECT_TRUE(std::equal(pa.values().begin(), pa.values().end(), pb.values().begin()));
  std::filesystem::remove(path);
  EXPECT_THROW(checkpoint_load(path), IoError);
}

TEST(Checkpoint, CorruptVersionAndShapeErrors) {
  auto c = tiny_config();
  c.epochs = 1;
  const auto bytes = serialize_checkpoint(train(c, tiny_split().train, 0));
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 7)), IoError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, 40)), IoError);
  std::string v2 = bytes;
  v2.replace(v2.find("format_version = 1"), 18, "format_version = 2");
  try {
    deserialize_checkpoint(v2);
    FAIL() << "expected version error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  RunConfig other = c;
  other.variant = PRVariant::ChannelWeight;
  EXPECT_THROW(deserialize_checkpoint(bytes, &other), ShapeError);
  EXPECT_NO_THROW(deserialize_checkpoint(bytes, &c));
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, ParseRoundTripAndErrors) {
  const auto text = R"(
# a comment
variant = channel
epochs = 12   # trailing comment
learning_rate = 0.015
seeds = 3, 4
T_values = 2,5,10
backbone.stage_channels = 4,8,12,16,20
dataset.families = gaussian_blur, intensity_quantization
)";
  const auto c = parse_run_config(text);
  EXPECT_EQ(c.variant, PRVariant::ChannelWeight);
  EXPECT_EQ(c.epochs, 12u);
  EXPECT_EQ(c.learning_rate, 0.015);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.dataset.params.families.size(), 2u);
  EXPECT_EQ(to_text(parse_run_config(to_text(c))), to_text(c));
  EXPECT_THROW(parse_run_config("epochz = 3\n"), ConfigError);
  EXPECT_THROW(parse_run_config("epochs = 3\nepochs = 4\n"), ConfigError);
  EXPECT_THROW(parse_run_config("epochs = three\n"), ConfigError);
  EXPECT_THROW(parse_run_config("pseudo_ref = false\n"), ConfigError);
  EXPECT_THROW(parse_run_config("crop_size = 90\n"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/priq.cfg"), IoError);
}

TEST(Config, ShippedConfigsParse) {
  const std::filesystem::path dir = PRIQ_SOURCE_DIR "/configs";
  EXPECT_NO_THROW(load_run_config((dir / "default.cfg").string()));
  EXPECT_NO_THROW(parse_ablation_grid(read_text_file((dir / "ablation_variants.cfg").string())));
  EXPECT_NO_THROW(parse_ablation_grid(read_text_file((dir / "ablation_toggles.cfg").string())));
  EXPECT_EQ(to_text(load_run_config((dir / "default.cfg").string())), to_text(RunConfig{}));
}

// ---------------------------------------------------------------------------
// Ablation

TEST(Ablation, GridParsing) {
  const auto grid = parse_ablation_grid(
      "grid.variants = mean, location\n"
      "grid.toggles = pr1-ssim1-pyr1, pr1-ssim0-pyr1, pr0-ssim0-pyr0\n"
      "grid.jobs = 2\n"
      "epochs = 3\n");
  ASSERT_EQ(grid.arms.size(), 5u);
  EXPECT_EQ(grid.jobs, 2u);
  EXPECT_EQ(grid.base.epochs, 3u);
  EXPECT_EQ(grid.arms.back().variant_label(), "none");
  EXPECT_EQ(grid.arms.back().toggles(), "pr0-ssim0-pyr0");
  EXPECT_THROW(parse_ablation_grid("grid.toggles = pr0-ssim1-pyr0\n"), ConfigError);
  EXPECT_THROW(parse_ablation_grid("grid.toggles = pr2-ssim1-pyr0\n"), ConfigError);
  EXPECT_THROW(parse_ablation_grid("grid.variantz = mean\n"), ConfigError);
}

TEST(Ablation, CsvRoundTripIsExact) {
  MetricsReport r;
  Rng rng(3);
  std::uniform_real_distribution<double> d(-1, 1);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    for (std::size_t T : {2, 5}) r.records.push_back({"location", "pr1-ssim1-pyr1", T, seed, d(rng), d(rng)});
  }
  r.records.push_back({"none", "pr0-ssim0-pyr0", 1, 0, std::numeric_limits<double>::quiet_NaN(), 0.1});
  const auto text = to_csv(r);
  EXPECT_EQ(text.substr(0, text.find('\n')), "variant,toggles,T,seed,lcc,srocc");
  const auto back = parse_metrics_csv(text);
  EXPECT_EQ(back.records, r.records);
  EXPECT_THROW(parse_metrics_csv("bad header\n"), IoError);
}

TEST(Ablation, MediansOverSeeds) {
  MetricsReport r;
  r.records = {{"location", "pr1-ssim1-pyr1", 5, 0, 0.3, 0.9},
               {"location", "pr1-ssim1-pyr1", 5, 1, 0.1, 0.2},
               {"location", "pr1-ssim1-pyr1", 5, 2, 0.2, 0.5},
               {"location", "pr1-ssim1-pyr1", 10, 0, std::numeric_limits<double>::quiet_NaN(), 0.4}};
  const auto m = r.median_of("location", "pr1-ssim1-pyr1", 5);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->lcc, 0.2);
  EXPECT_EQ(m->srocc, 0.5);
  EXPECT_EQ(m->runs, 3u);
  EXPECT_TRUE(std::isnan(r.median_of("location", "pr1-ssim1-pyr1", 10)->lcc));
}

TEST(Ablation, OneArmOneTThreeSeeds) {
  AblationGrid grid;
  grid.base = tiny_config();
  grid.base.T_values = {5};
  grid.arms = {AblationArm{}};
  const auto ds = synth::build_dataset(grid.base.dataset.params);
  const auto report = ablation_run(grid, ds);
  ASSERT_EQ(report.records.size(), 3u);
  std::vector<double> s;
  for (const auto& rec : report.records) s.push_back(rec.srocc);
  const auto rows = report.medians();
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].srocc, median(s));
  EXPECT_EQ(rows[0].runs, 3u);

  // Concurrent runs give the same numbers as sequential ones.
  grid.jobs = 3;
  EXPECT_EQ(ablation_run(grid, ds).records, report.records);

  const auto dir = std::filesystem::temp_directory_path() / "priq_ablation_report";
  std::filesystem::remove_all(dir);
  write_report(report, dir);
  for (const char* f : {"metrics.csv", "medians.csv", "table_variants.csv", "table_toggles.csv", "tsweep.svg"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_EQ(parse_metrics_csv(read_text_file((dir / "metrics.csv").string())).records, report.records);
  std::filesystem::remove_all(dir);
}
