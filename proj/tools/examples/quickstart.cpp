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

// Encodes a handful of pairs, trains a small network for a few epochs and
// prints held-out metrics.

#include <iostream>

#include "resdta/resdta.hpp"

int main() {
  using namespace resdta;

  RawDataset raw;
  raw.drugs = {{"aspirin", "CC(=O)OC1=CC=CC=C1C(=O)O"}, {"caffeine", "CN1C=NC2=C1C(=O)N(C(=O)N2C)C"},
               {"ethanol", "CCO"}, {"benzene", "c1ccccc1"}};
  raw.proteins = {{"P1", "MKTAYIAKQRQISFVKSHFSRQ"}, {"P2", "MSDNGPQNQRNAPRITFGGPSD"}, {"P3", "MEEPQSDPSVEPPLSQETFSDL"}};
  Rng rng(1);
  for (std::size_t i = 0; i < raw.drugs.size() * raw.proteins.size(); ++i) raw.affinity.emplace_back(rng.uniform(10, 14));

  ModelConfig model;
  model.smiles_len = 32;
  model.protein_len = 24;
  model.embed_dim = 8;
  model.stream_filters = {4, 8, 8};
  model.combined_filters = {8, 8, 8};
  model.kernel_size = 3;
  model.stream_repr_dim = 16;
  model.combined_repr_dim = 16;
  model.fc_dims = {32, 1};

  EncodingOptions enc;
  enc.smiles_len = model.smiles_len;
  enc.protein_len = model.protein_len;
  const auto data = encode_dataset(raw, smiles_vocabulary(), protein_vocabulary(), enc);
  const std::vector<InteractionRecord> train(data.records.begin(), data.records.begin() + 8);
  const std::vector<InteractionRecord> test(data.records.begin() + 8, data.records.end());

  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.restart_period = 50;
  cfg.batch_size = 4;
  cfg.lr_initial = 3e-3;
  const auto result = fit(init_params<float>(model, 1), data, train, test, cfg);
  const auto pred = predict(result.best, data, test);
  const auto actual = affinities(test);
  std::cout << "best epoch " << result.history.best_epoch << ", test CI " << concordance_index(actual, pred)
            << ", test MSE " << mse(actual, pred) << "\n";
}
