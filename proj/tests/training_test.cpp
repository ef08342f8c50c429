// Copyright 2026 The ResDTA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "resdta/training.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_support.hpp"

namespace resdta {
namespace {

using testing::tiny_config;

EncodedDataset tiny_data(std::size_t n_drugs = 8, std::size_t n_proteins = 4, std::uint64_t seed = 1) {
  const auto raw = testing::synthetic_raw({.n_drugs = n_drugs,
                                           .n_proteins = n_proteins,
                                           .present_fraction = 1.0,
                                           .smiles_min = 3,
                                           .smiles_max = 14,
                                           .protein_min = 5,
                                           .protein_max = 24,
                                           .affinity_lo = 0.0,
                                           .affinity_hi = 3.0,
                                           .seed = seed});
  EncodingOptions opts;
  opts.smiles_len = tiny_config().smiles_len;
  opts.protein_len = tiny_config().protein_len;
  return encode_dataset(raw, smiles_vocabulary(), protein_vocabulary(), opts);
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.lr_initial = 1e-3;
  cfg.batch_size = 4;
  cfg.epochs = epochs;
  cfg.lr_drop_period = 1000;
  cfg.restart_period = 0;
  cfg.seed = 3;
  return cfg;
}

std::vector<double> flat(const ModelParams<double>& p) {
  std::vector<double> out;
  for_each_tensor(p, [&](const std::string&, const Mat<double>& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
  return out;
}

TEST(RmseLoss, Examples) {
  EXPECT_EQ(rmse_loss(std::vector<double>{1, 2}, std::vector<double>{1, 2}), 0.0);
  EXPECT_DOUBLE_EQ(rmse_loss(std::vector<double>{0, 0}, std::vector<double>{3, 4}), std::sqrt(12.5));
  EXPECT_THROW(rmse_loss(std::vector<double>{}, std::vector<double>{}), Error);
  EXPECT_THROW(rmse_loss(std::vector<double>{1}, std::vector<double>{}), Error);
}

TEST(RmseLoss, NonNegativeAndHomogeneous) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(1 + rng.below(20)), y(p.size());
    for (auto& v : p) v = rng.uniform(-3, 3);
    for (auto& v : y) v = rng.uniform(-3, 3);
    const double base = rmse_loss(p, y);
    EXPECT_GE(base, 0.0);
    const double c = rng.uniform(0.1, 4.0);
    for (auto& v : p) v *= c;
    for (auto& v : y) v *= c;
    EXPECT_NEAR(rmse_loss(p, y), c * base, 1e-12);
  }
}

TEST(ScheduleLr, StepDecay) {
  const TrainConfig cfg;
  EXPECT_DOUBLE_EQ(schedule_lr(0, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(schedule_lr(199, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(schedule_lr(200, cfg), 1e-5);
  EXPECT_DOUBLE_EQ(schedule_lr(399, cfg), 1e-5);
}

TEST(TrainConfigCheck, RejectsInvalidValues) {
  TrainConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  cfg.batch_size = 0;
  EXPECT_THROW(validate(cfg), Error);
  cfg = {};
  cfg.lr_initial = 0;
  EXPECT_THROW(validate(cfg), Error);
  cfg = {};
  cfg.accumulation_steps = 0;
  EXPECT_THROW(validate(cfg), Error);
  cfg = {};
  cfg.epochs = 50;
  EXPECT_THROW(validate(cfg), Error);
  cfg.restart_period = 50;
  EXPECT_NO_THROW(validate(cfg));
}

TEST(TrainConfigJson, RoundTrip) {
  TrainConfig cfg = quick_config(7);
  cfg.grad_clip = 2.5;
  EXPECT_EQ(nlohmann::json(cfg).get<TrainConfig>(), cfg);
}

TEST(Adam, FirstStepMovesEachWeightByLearningRate) {
  const auto config = tiny_config();
  auto params = init_params<double>(config, 1);
  const auto before = flat(params);
  auto grads = zero_params<double>(config);
  for_each_tensor(grads, [](const std::string&, Mat<double>& m) { m.setConstant(-0.25); });
  Adam<double> adam(config, TrainConfig{});
  adam.step(params, grads, 1e-2);
  const auto after = flat(params);
  for (std::size_t i = 0; i < before.size(); ++i) ASSERT_NEAR(after[i] - before[i], 1e-2, 1e-9);
  EXPECT_EQ(adam.steps(), 1u);
  adam.reset();
  EXPECT_EQ(adam.steps(), 0u);
}

// The window gradient is the gradient of the window RMSE; compare with
// central differences of rmse_loss over the same samples.
TEST(RmseGradient, MatchesCentralDifferenceOfWindowRmse) {
  const auto data = tiny_data();
  const auto config = tiny_config();
  auto params = init_params<double>(config, 9);
  const std::vector<InteractionRecord> window(data.records.begin(), data.records.begin() + 6);
  const auto targets = affinities(window);

  RmseGradient<double> g(config);
  for (const auto& r : window) g.add(params, data.drug(r.drug_index), data.protein(r.protein_index), r.affinity, {});
  const auto analytic = g.finish();

  std::vector<double*> p;
  std::vector<const double*> a;
  for_each_tensor(params, [&](const std::string&, Mat<double>& m) { p.push_back(m.data()); });
  for_each_tensor(analytic, [&](const std::string&, const Mat<double>& m) { a.push_back(m.data()); });
  const double h = 1e-6;
  for (std::size_t t = 0; t < p.size(); ++t) {
    const double saved = p[t][0];
    p[t][0] = saved + h;
    const double up = rmse_loss(predict(params, data, window), targets);
    p[t][0] = saved - h;
    const double down = rmse_loss(predict(params, data, window), targets);
    p[t][0] = saved;
    const double numeric = (up - down) / (2 * h);
    EXPECT_NEAR(a[t][0], numeric, 1e-6 + 1e-5 * std::abs(numeric)) << "tensor " << t;
  }
}

TEST(Fit, UpdatesPerEpochIsCeilOfTrainOverBatch) {
  const auto data = tiny_data();
  const std::vector<InteractionRecord> train(data.records.begin(), data.records.begin() + 10);
  const std::vector<InteractionRecord> val(data.records.begin() + 10, data.records.begin() + 14);
  auto cfg = quick_config(2);
  const auto result = fit(init_params<double>(tiny_config(), 1), data, train, val, cfg);
  for (const auto& e : result.history.epochs) EXPECT_EQ(e.updates, 3u);
  cfg.accumulation_steps = 2;
  const auto accumulated = fit(init_params<double>(tiny_config(), 1), data, train, val, cfg);
  for (const auto& e : accumulated.history.epochs) EXPECT_EQ(e.updates, 2u);
}

TEST(Fit, AccumulatedMicroBatchesMatchOneLargeBatch) {
  const auto data = tiny_data();
  const std::vector<InteractionRecord> train(data.records.begin(), data.records.begin() + 20);
  const std::vector<InteractionRecord> val(data.records.begin() + 20, data.records.end());
  auto micro = quick_config(3);
  micro.batch_size = 2;
  micro.accumulation_steps = 4;
  auto large = quick_config(3);
  large.batch_size = 8;
  const auto a = fit(init_params<double>(tiny_config(), 4), data, train, val, micro);
  const auto b = fit(init_params<double>(tiny_config(), 4), data, train, val, large);
  const auto fa = flat(a.best);
  const auto fb = flat(b.best);
  ASSERT_EQ(fa.size(), fb.size());
  for (std::size_t i = 0; i < fa.size(); ++i) ASSERT_NEAR(fa[i], fb[i], 1e-6 * (1.0 + std::abs(fb[i])));
}

TEST(Fit, DeterministicForFixedSeed) {
  const auto data = tiny_data();
  const std::vector<InteractionRecord> train(data.records.begin(), data.records.begin() + 16);
  const std::vector<InteractionRecord> val(data.records.begin() + 16, data.records.end());
  const auto a = fit(init_params<double>(tiny_config(), 2), data, train, val, quick_config(3));
  const auto b = fit(init_params<double>(tiny_config(), 2), data, train, val, quick_config(3));
  EXPECT_EQ(flat(a.best), flat(b.best));
  auto other = quick_config(3);
  other.seed = 99;
  const auto c = fit(init_params<double>(tiny_config(), 2), data, train, val, other);
  EXPECT_NE(flat(a.best), flat(c.best));
}

TEST(Fit, SelectsWeightsWithLowestValidationMse) {
  const auto data = tiny_data();
  const std::vector<InteractionRecord> train(data.records.begin(), data.records.begin() + 16);
  const std::vector<InteractionRecord> val(data.records.begin() + 16, data.records.end());
  auto cfg = quick_config(8);
  cfg.lr_initial = 3e-2;
  const auto result = fit(init_params<double>(tiny_config(), 2), data, train, val, cfg);
  const auto& epochs = result.history.epochs;
  ASSERT_EQ(epochs.size(), 8u);
  const auto best = std::min_element(epochs.begin(), epochs.end(),
                                     [](const EpochRecord& x, const EpochRecord& y) { return x.val_mse < y.val_mse; });
  EXPECT_EQ(result.history.best_epoch, best->epoch);
  EXPECT_EQ(result.history.best_val_mse, best->val_mse);
  EXPECT_EQ(mse(affinities(val), predict(result.best, data, val)), best->val_mse);
  for (const auto& e : epochs) {
    EXPECT_GT(e.train_rmse, 0.0);
    EXPECT_GE(e.val_mse, result.history.best_val_mse);
  }
}

TEST(Fit, LearningRateTraceAndRestarts) {
  const auto data = tiny_data(4, 3);
  const std::vector<InteractionRecord> train(data.records.begin(), data.records.begin() + 8);
  const std::vector<InteractionRecord> val(data.records.begin() + 8, data.records.end());
  auto cfg = quick_config(6);
  cfg.lr_drop_period = 4;
  cfg.restart_period = 2;
  std::vector<std::size_t> seen;
  FitCallbacks<double> cb;
  cb.on_epoch = [&](const EpochRecord& r) { seen.push_back(r.epoch); };
  const auto result = fit(init_params<double>(tiny_config(), 2), data, train, val, cfg, cb);
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  for (const auto& e : result.history.epochs) {
    EXPECT_DOUBLE_EQ(e.lr, e.epoch < 4 ? 1e-3 : 1e-4);
    EXPECT_EQ(e.restarted, e.epoch == 2 || e.epoch == 4);
  }
}

TEST(Fit, RestartReloadsBestWeights) {
  const auto data = tiny_data(4, 3);
  const std::vector<InteractionRecord> train(data.records.begin(), data.records.begin() + 8);
  const std::vector<InteractionRecord> val(data.records.begin() + 8, data.records.end());
  auto cfg = quick_config(4);
  cfg.restart_period = 1;
  cfg.batch_size = 8;
  std::vector<ModelParams<double>> improved;
  FitCallbacks<double> cb;
  cb.on_improved = [&](const ModelParams<double>& p, std::size_t) { improved.push_back(p); };
  const auto result = fit(init_params<double>(tiny_config(), 2), data, train, val, cfg, cb);
  ASSERT_FALSE(improved.empty());
  EXPECT_EQ(flat(improved.back()), flat(result.best));
  for (const auto& e : result.history.epochs) EXPECT_EQ(e.restarted, e.epoch > 0);
}

TEST(Fit, OverfitsSmallSet) {
  ModelConfig c = tiny_config();
  c.embed_dim = 8;
  c.stream_filters = {4, 8, 8};
  c.combined_filters = {8, 8, 8};
  c.stream_repr_dim = 16;
  c.combined_repr_dim = 16;
  c.fc_dims = {32, 16, 1};
  const auto data = tiny_data(8, 4, 21);
  const std::vector<InteractionRecord> train(data.records.begin(), data.records.begin() + 24);
  auto cfg = quick_config(150);
  cfg.lr_initial = 3e-3;
  cfg.batch_size = 8;
  const auto initial = init_params<double>(c, 5);
  const auto targets = affinities(train);
  const double before = rmse_loss(predict(initial, data, train), targets);
  const auto result = fit(initial, data, train, train, cfg);
  EXPECT_LT(rmse_loss(predict(result.best, data, train), targets), 0.25 * before);
}

TEST(Fit, NonFiniteLossAndEmptySplit) {
  const auto data = tiny_data(4, 3);
  const std::vector<InteractionRecord> train(data.records.begin(), data.records.begin() + 8);
  const std::vector<InteractionRecord> val(data.records.begin() + 8, data.records.end());
  auto params = init_params<double>(tiny_config(), 2);
  params.fc.back().bias(0) = std::numeric_limits<double>::quiet_NaN();
  try {
    fit(params, data, train, val, quick_config(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
  try {
    fit(init_params<double>(tiny_config(), 2), data, std::span<const InteractionRecord>{}, val, quick_config(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptySplit);
  }
}

TEST(Predict, DeterministicBatchIndependentAndHandlesDuplicates) {
  const auto data = tiny_data();
  const auto params = init_params<float>(tiny_config(), 8);
  std::vector<InteractionRecord> records(data.records.begin(), data.records.begin() + 11);
  records.push_back(records[3]);
  const auto a = predict(params, data, records, 1);
  const auto b = predict(params, data, records, 4);
  const auto c = predict(params, data, records, 256);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a[3], a.back());
  EXPECT_EQ(predict(params, data, records, 4), b);
  EXPECT_THROW(predict(params, data, records, 0), Error);
}

TEST(HistoryCsv, HeaderAndRows) {
  testing::TempDir dir;
  TrainHistory h;
  h.epochs.push_back({0, 1.5, 2.0, 0.6, 1e-4, false, 3});
  h.epochs.push_back({1, 1.0, 1.5, 0.7, 1e-4, true, 3});
  write_history_csv(h, dir.file("h.csv"));
  std::ifstream in(dir.file("h.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,train_rmse,val_mse,val_ci,lr,restarted");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 6), "0,1.5,");
  std::getline(in, line);
  EXPECT_EQ(line.back(), '1');
}

}  // namespace
}  // namespace resdta
