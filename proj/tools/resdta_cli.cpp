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

// resdta: prepare, train, evaluate, predict and report on KIBA-format data.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "resdta/resdta.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using resdta::Error;
using resdta::ErrorKind;
using Scalar = float;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config;
  std::string out;
  std::string data_dir;
  std::optional<std::uint64_t> seed;
  std::string folds = "all";
  std::optional<std::size_t> limit;
  std::optional<std::size_t> epochs;
  bool force = false;
  // command specific
  bool random_init = false;
  std::string checkpoint;
  std::string pairs;
  std::string output;
  std::string predictions;
  bool svg = false;
};

json default_run_config() {
  return {{"data_dir", ""},
          {"drugs", "ligands_can.txt"},
          {"proteins", "proteins.txt"},
          {"affinity", "Y.txt"},
          {"test_folds", ""},
          {"cv_folds", ""},
          {"fold_seed", 0},
          {"transform_scores", false},
          {"out", "resdta_out"},
          {"model", json(resdta::ModelConfig{})},
          {"train", json(resdta::TrainConfig{})}};
}

bool same_kind(const json& def, const json& given) {
  if (def.is_number_float()) return given.is_number();
  if (def.is_number_unsigned()) return given.is_number_unsigned() || (given.is_number_integer() && given.get<long long>() >= 0);
  if (def.is_number_integer()) return given.is_number_integer();
  return def.type() == given.type();
}

void check_against(const json& def, const json& given, const std::string& where) {
  if (!same_kind(def, given)) {
    throw UsageError("config key '" + where + "' expects " + std::string(def.type_name()) + ", got " +
                     std::string(given.type_name()));
  }
  if (given.is_object()) {
    for (const auto& [key, value] : given.items()) {
      if (!def.contains(key)) throw UsageError("unknown config key '" + where + (where.empty() ? "" : ".") + key + "'");
      check_against(def.at(key), value, where.empty() ? key : where + "." + key);
    }
  } else if (given.is_array() && !def.empty()) {
    for (std::size_t i = 0; i < given.size(); ++i) check_against(def.front(), given[i], where + "[" + std::to_string(i) + "]");
  }
}

struct RunConfig {
  json doc;
  resdta::ModelConfig model;
  resdta::TrainConfig train;
  fs::path out;

  fs::path data_path(const std::string& key) const {
    fs::path p = doc.at(key).get<std::string>();
    const auto dir = doc.at("data_dir").get<std::string>();
    if (p.is_relative() && !dir.empty()) p = fs::path(dir) / p;
    return p;
  }
  fs::path cache_dir() const { return out / "cache"; }
  fs::path checkpoint(std::size_t fold, std::size_t epoch) const {
    return out / "checkpoints" / ("fold" + std::to_string(fold) + "_epoch" + std::to_string(epoch) + ".ckpt");
  }
  std::vector<fs::path> checkpoints_of(std::size_t fold) const {
    std::vector<fs::path> found;
    const std::string prefix = "fold" + std::to_string(fold) + "_epoch";
    if (!fs::exists(out / "checkpoints")) return found;
    for (const auto& e : fs::directory_iterator(out / "checkpoints")) {
      const auto name = e.path().filename().string();
      if (name.starts_with(prefix) && e.path().extension() == ".ckpt") found.push_back(e.path());
    }
    std::sort(found.begin(), found.end());
    return found;
  }
  fs::path history(std::size_t fold, const char* ext) const {
    return out / "history" / ("fold" + std::to_string(fold) + ext);
  }
};

RunConfig load_run_config(const Flags& flags) {
  json doc = default_run_config();
  if (const char* env = std::getenv("RESDTA_DATA_DIR"); env != nullptr) doc["data_dir"] = env;
  if (!flags.config.empty()) {
    std::ifstream in(flags.config);
    if (!in) throw Error(ErrorKind::kIo, "cannot open config " + flags.config);
    json given;
    try {
      given = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError("config " + flags.config + ": " + e.what());
    }
    if (!given.is_object()) throw UsageError("config " + flags.config + " must be a JSON object");
    check_against(doc, given, "");
    doc.merge_patch(given);
  }
  if (!flags.data_dir.empty()) doc["data_dir"] = flags.data_dir;
  if (!flags.out.empty()) doc["out"] = flags.out;
  if (flags.seed) {
    doc["fold_seed"] = *flags.seed;
    doc["train"]["seed"] = *flags.seed;
  }
  if (flags.epochs) {
    doc["train"]["epochs"] = *flags.epochs;
    // A restart period at or beyond the run length never fires.
    if (doc["train"]["restart_period"].get<std::size_t>() > *flags.epochs) doc["train"]["restart_period"] = *flags.epochs;
  }

  RunConfig rc;
  rc.doc = doc;
  rc.model = doc.at("model").get<resdta::ModelConfig>();
  rc.train = doc.at("train").get<resdta::TrainConfig>();
  rc.out = doc.at("out").get<std::string>();
  try {
    resdta::shape_chain(rc.model);
    resdta::validate(rc.train);
  } catch (const Error& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  return rc;
}

void write_json(const fs::path& path, const json& doc) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

void snapshot_config(const RunConfig& rc, const std::string& command) {
  write_json(rc.out / (command + "_config.json"), rc.doc);
}

std::vector<std::size_t> parse_folds(const std::string& selector, bool allow_test) {
  if (selector == "all" || (allow_test && selector == "test")) return {0, 1, 2, 3, 4};
  if (selector.size() == 1 && selector[0] >= '0' && selector[0] <= '4') {
    return {static_cast<std::size_t>(selector[0] - '0')};
  }
  throw UsageError("--folds expects 0..4 or all" + std::string(allow_test ? " or test" : "") + ", got '" + selector + "'");
}

template <typename T>
std::vector<T> capped(std::vector<T> v, const std::optional<std::size_t>& limit) {
  if (limit && v.size() > *limit) v.resize(*limit);
  return v;
}

// ---------------------------------------------------------------- prepare

std::string hash_inputs(const RunConfig& rc, const std::vector<fs::path>& files) {
  std::string blob;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    blob += f.string() + '\0' + ss.str() + '\0';
  }
  blob += json{{"smiles_len", rc.model.smiles_len},
               {"protein_len", rc.model.protein_len},
               {"fold_seed", rc.doc.at("fold_seed")},
               {"transform_scores", rc.doc.at("transform_scores")}}
              .dump();
  std::ostringstream hex;
  hex << std::hex << std::hash<std::string>{}(blob);
  return hex.str();
}

std::vector<std::size_t> histogram(const std::vector<resdta::NamedSequence>& entries, std::size_t bin) {
  std::vector<std::size_t> counts;
  for (const auto& e : entries) {
    const std::size_t b = e.sequence.size() / bin;
    if (counts.size() <= b) counts.resize(b + 1, 0);
    ++counts[b];
  }
  return counts;
}

json length_summary(const std::vector<resdta::NamedSequence>& entries, std::size_t cap, std::size_t bin) {
  const auto s = resdta::length_stats(entries, cap);
  return {{"max", s.max}, {"mean", s.mean}, {"cap", cap}, {"within_cap", s.covered}, {"histogram_bin", bin},
          {"histogram", histogram(entries, bin)}};
}

void save_encoded(const resdta::EncodedDataset& d, const fs::path& path) {
  json records = json::array();
  for (const auto& r : d.records) records.push_back({r.drug_index, r.protein_index, r.affinity});
  write_json(path, json{{"smiles_len", d.smiles_len},
                        {"protein_len", d.protein_len},
                        {"drug_ids", d.drug_ids},
                        {"protein_ids", d.protein_ids},
                        {"drug_tokens", d.drug_tokens},
                        {"protein_tokens", d.protein_tokens},
                        {"records", records}});
}

resdta::EncodedDataset load_encoded(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kIo, "no prepared cache at " + path.string() + "; run prepare first");
  const json j = read_json(path);
  resdta::EncodedDataset d;
  try {
    j.at("smiles_len").get_to(d.smiles_len);
    j.at("protein_len").get_to(d.protein_len);
    j.at("drug_ids").get_to(d.drug_ids);
    j.at("protein_ids").get_to(d.protein_ids);
    j.at("drug_tokens").get_to(d.drug_tokens);
    j.at("protein_tokens").get_to(d.protein_tokens);
    for (const auto& r : j.at("records")) {
      d.records.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>(), r.at(2).get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  if (d.drug_tokens.size() != d.n_drugs() * d.smiles_len || d.protein_tokens.size() != d.n_proteins() * d.protein_len) {
    throw Error(ErrorKind::kParse, path.string() + ": token matrix size does not match the id lists");
  }
  return d;
}

int cmd_prepare(const Flags& flags) {
  const RunConfig rc = load_run_config(flags);
  const auto drugs = rc.data_path("drugs");
  const auto proteins = rc.data_path("proteins");
  const auto affinity = rc.data_path("affinity");
  std::vector<fs::path> inputs{drugs, proteins, affinity};
  for (const auto& p : inputs) {
    if (!fs::exists(p)) throw Error(ErrorKind::kIo, "missing input file " + p.string());
  }
  std::optional<std::pair<fs::path, fs::path>> external;
  const auto test_key = rc.doc.at("test_folds").get<std::string>();
  const auto cv_key = rc.doc.at("cv_folds").get<std::string>();
  if (!test_key.empty() || !cv_key.empty()) {
    if (test_key.empty() || cv_key.empty()) throw UsageError("test_folds and cv_folds must be given together");
    external = {{rc.data_path("test_folds"), rc.data_path("cv_folds")}};
    inputs.push_back(external->first);
    inputs.push_back(external->second);
  }

  const auto cache = rc.cache_dir();
  const auto manifest = cache / "manifest.json";
  const std::string hash = hash_inputs(rc, inputs);
  if (!flags.force && fs::exists(manifest) && fs::exists(cache / "encoded.json") && fs::exists(cache / "folds_test.json") &&
      fs::exists(cache / "folds_cv.json") && read_json(manifest).value("input_hash", "") == hash) {
    std::cerr << "cache up to date: " << cache.string() << "\n";
    return 0;
  }

  std::cerr << "loading " << drugs.string() << ", " << proteins.string() << ", " << affinity.string() << "\n";
  const auto raw = resdta::load_kiba(drugs.string(), proteins.string(), affinity.string(),
                                     {.transform_scores = rc.doc.at("transform_scores").get<bool>()});
  resdta::EncodingOptions enc;
  enc.smiles_len = rc.model.smiles_len;
  enc.protein_len = rc.model.protein_len;
  const auto data = resdta::encode_dataset(raw, resdta::smiles_vocabulary(), resdta::protein_vocabulary(), enc);
  const std::size_t n = data.records.size();

  resdta::FoldSplit split;
  if (external) {
    split = resdta::load_fold_files(external->first.string(), external->second.string(), n);
  } else {
    split = resdta::make_folds(n, rc.doc.at("fold_seed").get<std::uint64_t>());
  }

  fs::create_directories(cache);
  save_encoded(data, cache / "encoded.json");
  resdta::write_fold_files(split, (cache / "folds_test.json").string(), (cache / "folds_cv.json").string());
  std::vector<std::size_t> fold_sizes{split.test_indices.size()};
  for (const auto& f : split.cv_folds) fold_sizes.push_back(f.size());
  write_json(rc.out / "summary.json",
             {{"n_drugs", raw.n_drugs()},
              {"n_proteins", raw.n_proteins()},
              {"n_interactions", n},
              {"fold_source", external ? "external" : "generated"},
              {"fold_sizes", fold_sizes},
              {"smiles_length", length_summary(raw.drugs, rc.model.smiles_len, 10)},
              {"protein_length", length_summary(raw.proteins, rc.model.protein_len, 100)}});
  write_json(manifest, {{"input_hash", hash}});
  snapshot_config(rc, "prepare");
  std::cerr << "prepared " << raw.n_drugs() << " drugs, " << raw.n_proteins() << " proteins, " << n
            << " interactions\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct Prepared {
  resdta::EncodedDataset data;
  resdta::FoldSplit split;
};

Prepared load_prepared(const RunConfig& rc) {
  Prepared p;
  p.data = load_encoded(rc.cache_dir() / "encoded.json");
  if (p.data.smiles_len != rc.model.smiles_len || p.data.protein_len != rc.model.protein_len) {
    throw Error(ErrorKind::kConfigMismatch, "prepared cache was encoded with lengths " +
                                                std::to_string(p.data.smiles_len) + "/" +
                                                std::to_string(p.data.protein_len) + " but the model expects " +
                                                std::to_string(rc.model.smiles_len) + "/" +
                                                std::to_string(rc.model.protein_len));
  }
  p.split = resdta::load_fold_files((rc.cache_dir() / "folds_test.json").string(),
                                    (rc.cache_dir() / "folds_cv.json").string(), p.data.records.size());
  return p;
}

int cmd_train(const Flags& flags) {
  const RunConfig rc = load_run_config(flags);
  const auto folds = parse_folds(flags.folds, false);
  const Prepared prepared = load_prepared(rc);
  snapshot_config(rc, "train");
  fs::create_directories(rc.out / "checkpoints");
  fs::create_directories(rc.out / "history");

  for (std::size_t fold : folds) {
    const auto train_idx = capped(prepared.split.training_indices(fold), flags.limit);
    const auto val_idx = capped(prepared.split.cv_folds[fold], flags.limit);
    const auto train = prepared.data.select(train_idx);
    const auto val = prepared.data.select(val_idx);
    std::cerr << "fold " << fold << ": " << train.size() << " train, " << val.size() << " validation\n";

    resdta::FitCallbacks<Scalar> cb;
    cb.on_epoch = [&](const resdta::EpochRecord& r) {
      std::cerr << "fold " << fold << " epoch " << r.epoch << " train_rmse " << r.train_rmse << " val_mse "
                << r.val_mse << " val_ci " << r.val_ci << (r.restarted ? " (restart)" : "") << "\n";
    };
    for (const auto& stale : rc.checkpoints_of(fold)) fs::remove(stale);
    fs::path saved;
    cb.on_improved = [&](const resdta::ModelParams<Scalar>& best, std::size_t epoch) {
      const auto path = rc.checkpoint(fold, epoch);
      resdta::save_checkpoint(best, path.string(), epoch);
      if (!saved.empty() && saved != path) fs::remove(saved);
      saved = path;
    };
    auto cfg = rc.train;
    cfg.seed = rc.train.seed + fold;
    const auto result =
        resdta::fit(resdta::init_params<Scalar>(rc.model, cfg.seed), prepared.data, train, val, cfg, cb);
    resdta::write_history_csv(result.history, rc.history(fold, ".csv").string());
    json summary = resdta::history_summary(result.history);
    summary["fold"] = fold;
    summary["checkpoint"] = saved.string();
    summary["n_train"] = train.size();
    summary["n_val"] = val.size();
    write_json(rc.history(fold, ".json"), summary);
    std::cerr << "fold " << fold << ": best epoch " << result.history.best_epoch << ", val_mse "
              << result.history.best_val_mse << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct ScoredMetrics {
  resdta::FoldMetrics metrics;
  bool rm2_degenerate = false;
};

ScoredMetrics score(const std::vector<double>& actual, const std::vector<double>& pred) {
  ScoredMetrics s;
  s.metrics.ci = resdta::concordance_index(actual, pred);
  s.metrics.mse = resdta::mse(actual, pred);
  try {
    s.metrics.rm2 = resdta::rm2(actual, pred);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kDegenerateInput) throw;
    s.metrics.rm2 = std::numeric_limits<double>::quiet_NaN();
    s.rm2_degenerate = true;
  }
  return s;
}

void write_predictions(const fs::path& path, const resdta::EncodedDataset& data,
                       const std::vector<resdta::InteractionRecord>& records, const std::vector<double>& pred) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "drug_id,protein_id,measured,predicted\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << data.drug_ids[records[i].drug_index] << ',' << data.protein_ids[records[i].protein_index] << ','
        << resdta::format_real(records[i].affinity) << ',' << resdta::format_real(pred[i]) << '\n';
  }
}

resdta::ModelParams<Scalar> model_for_fold(const RunConfig& rc, const Flags& flags, std::size_t fold) {
  if (flags.random_init) return resdta::init_params<Scalar>(rc.model, rc.train.seed + fold);
  if (!flags.checkpoint.empty()) return resdta::load_checkpoint<Scalar>(flags.checkpoint, rc.model).params;
  const auto found = rc.checkpoints_of(fold);
  if (found.empty()) {
    throw Error(ErrorKind::kIo, "no checkpoint for fold " + std::to_string(fold) + " under " +
                                    (rc.out / "checkpoints").string() + "; run train first");
  }
  if (found.size() > 1) throw Error(ErrorKind::kIo, "several checkpoints for fold " + std::to_string(fold));
  return resdta::load_checkpoint<Scalar>(found.front().string(), rc.model).params;
}

int cmd_evaluate(const Flags& flags) {
  const RunConfig rc = load_run_config(flags);
  const auto folds = flags.checkpoint.empty() ? parse_folds(flags.folds, true) : std::vector<std::size_t>{0};
  const Prepared prepared = load_prepared(rc);
  snapshot_config(rc, "evaluate");
  const auto test = prepared.data.select(capped(prepared.split.test_indices, flags.limit));
  const auto actual = resdta::affinities(test);
  const auto eval_dir = rc.out / "eval";

  std::vector<resdta::FoldMetrics> per_fold;
  std::vector<double> ensemble(test.size(), 0.0);
  bool degenerate = false;
  for (std::size_t fold : folds) {
    const auto params = model_for_fold(rc, flags, fold);
    const auto pred = resdta::predict(params, prepared.data, test, rc.train.batch_size);
    const auto s = score(actual, pred);
    degenerate = degenerate || s.rm2_degenerate;
    per_fold.push_back(s.metrics);
    for (std::size_t i = 0; i < pred.size(); ++i) ensemble[i] += pred[i] / static_cast<double>(folds.size());
    write_predictions(eval_dir / ("predictions_fold" + std::to_string(fold) + ".csv"), prepared.data, test, pred);
    std::cerr << "fold " << fold << ": ci " << s.metrics.ci << " mse " << s.metrics.mse << " rm2 " << s.metrics.rm2
              << "\n";
  }
  write_predictions(eval_dir / "predictions.csv", prepared.data, test, ensemble);
  json report = resdta::aggregate(per_fold);
  report["fold_ids"] = folds;
  report["n_test"] = test.size();
  report["random_init"] = flags.random_init;
  report["rm2_degenerate"] = degenerate;
  write_json(eval_dir / "metrics.json", report);
  std::cerr << "mean ci " << report["mean"]["ci"] << " mse " << report["mean"]["mse"] << "\n";
  return 0;
}

// ---------------------------------------------------------------- predict

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

int cmd_predict(const Flags& flags) {
  const RunConfig rc = load_run_config(flags);
  if (flags.pairs.empty()) throw UsageError("predict requires --pairs");
  const auto folds = flags.checkpoint.empty() ? parse_folds(flags.folds, true) : std::vector<std::size_t>{0};
  const Prepared prepared = load_prepared(rc);
  std::map<std::string, std::size_t> drug_index, protein_index;
  for (std::size_t i = 0; i < prepared.data.n_drugs(); ++i) drug_index[prepared.data.drug_ids[i]] = i;
  for (std::size_t i = 0; i < prepared.data.n_proteins(); ++i) protein_index[prepared.data.protein_ids[i]] = i;

  std::ifstream in(flags.pairs);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + flags.pairs);
  std::vector<resdta::InteractionRecord> records;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line, '\t');
    if (f.size() != 2) throw Error(ErrorKind::kParse, flags.pairs + ":" + std::to_string(line_no) + ": expected drug_id<TAB>protein_id");
    if (line_no == 1 && f[0] == "drug_id" && f[1] == "protein_id") continue;
    const auto d = drug_index.find(f[0]);
    const auto p = protein_index.find(f[1]);
    if (d == drug_index.end() || p == protein_index.end()) {
      throw Error(ErrorKind::kParse, flags.pairs + ":" + std::to_string(line_no) + ": unknown id '" +
                                         (d == drug_index.end() ? f[0] : f[1]) + "'");
    }
    records.push_back({d->second, p->second, 0.0});
  }

  std::vector<double> mean(records.size(), 0.0);
  for (std::size_t fold : folds) {
    const auto pred = resdta::predict(model_for_fold(rc, flags, fold), prepared.data, records, rc.train.batch_size);
    for (std::size_t i = 0; i < pred.size(); ++i) mean[i] += pred[i] / static_cast<double>(folds.size());
  }
  const fs::path path = flags.output.empty() ? rc.out / "predict" / "predictions.csv" : fs::path(flags.output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "drug_id,protein_id,predicted\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << prepared.data.drug_ids[records[i].drug_index] << ',' << prepared.data.protein_ids[records[i].protein_index]
        << ',' << resdta::format_real(mean[i]) << '\n';
  }
  std::cerr << "wrote " << records.size() << " predictions to " << path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- report

struct Scatter {
  std::vector<double> measured;
  std::vector<double> predicted;
};

Scatter read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kParse, path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line, ',');
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorKind::kParse, path + ":1: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t m = col("measured");
  const std::size_t p = col("predicted");
  Scatter s;
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line, ',');
    if (f.size() != header.size()) throw Error(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": wrong field count");
    try {
      std::size_t used_m = 0, used_p = 0;
      const double mv = std::stod(f[m], &used_m);
      const double pv = std::stod(f[p], &used_p);
      if (used_m != f[m].size() || used_p != f[p].size()) throw std::invalid_argument("trailing characters");
      s.measured.push_back(mv);
      s.predicted.push_back(pv);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": not a number");
    }
  }
  if (s.measured.empty()) throw Error(ErrorKind::kEmptyInput, path + ": no rows");
  return s;
}

json optional_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string svg_scatter(const Scatter& s, double slope, double intercept) {
  const auto [mn, mx] = std::minmax_element(s.measured.begin(), s.measured.end());
  const auto [pn, px] = std::minmax_element(s.predicted.begin(), s.predicted.end());
  const double lo = std::min(*mn, *pn);
  const double hi = std::max(*mx, *px) + (std::max(*mx, *px) == lo ? 1.0 : 0.0);
  const double size = 480.0, margin = 40.0;
  auto sx = [&](double v) { return margin + (v - lo) / (hi - lo) * (size - 2 * margin); };
  auto sy = [&](double v) { return size - margin - (v - lo) / (hi - lo) * (size - 2 * margin); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < s.measured.size(); ++i) {
    o << "<circle cx=\"" << sx(s.measured[i]) << "\" cy=\"" << sy(s.predicted[i]) << "\" r=\"1.5\" fill=\"steelblue\"/>\n";
  }
  o << "<line x1=\"" << sx(lo) << "\" y1=\"" << sy(lo) << "\" x2=\"" << sx(hi) << "\" y2=\"" << sy(hi)
    << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
  if (std::isfinite(slope)) {
    o << "<line x1=\"" << sx(lo) << "\" y1=\"" << sy(slope * lo + intercept) << "\" x2=\"" << sx(hi) << "\" y2=\""
      << sy(slope * hi + intercept) << "\" stroke=\"red\"/>\n";
  }
  o << "<text x=\"" << size / 2 << "\" y=\"" << size - 8 << "\" text-anchor=\"middle\">measured</text>\n";
  o << "<text x=\"12\" y=\"" << size / 2 << "\" transform=\"rotate(-90 12 " << size / 2
    << ")\" text-anchor=\"middle\">predicted</text>\n</svg>\n";
  return o.str();
}

int cmd_report(const Flags& flags) {
  const RunConfig rc = load_run_config(flags);
  const std::string input = flags.predictions.empty() ? (rc.out / "eval" / "predictions.csv").string() : flags.predictions;
  const Scatter s = read_predictions(input);
  const std::size_t n = s.measured.size();
  const auto dir = rc.out / "report";
  fs::create_directories(dir);

  {
    std::ofstream out(dir / "scatter.csv");
    out << "measured,predicted\n";
    for (std::size_t i = 0; i < n; ++i) {
      out << resdta::format_real(s.measured[i]) << ',' << resdta::format_real(s.predicted[i]) << '\n';
    }
  }

  // predicted ~ slope * measured + intercept
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_x += s.measured[i] / static_cast<double>(n);
    mean_y += s.predicted[i] / static_cast<double>(n);
  }
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (s.measured[i] - mean_x) * (s.measured[i] - mean_x);
    sxy += (s.measured[i] - mean_x) * (s.predicted[i] - mean_y);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
  const double intercept = sxx > 0.0 ? mean_y - slope * mean_x : std::numeric_limits<double>::quiet_NaN();

  const double nan = std::numeric_limits<double>::quiet_NaN();
  double ci = nan, r2 = nan, r2_origin = nan, rm2 = nan;
  bool degenerate = false;
  try {
    ci = resdta::concordance_index(s.measured, s.predicted);
  } catch (const Error&) {
  }
  try {
    const auto r = resdta::r_squared_pair(s.measured, s.predicted);
    r2 = r.r2;
    r2_origin = r.r2_origin;
    rm2 = r.r2 * (1.0 - std::sqrt(std::abs(r.r2 - r.r2_origin)));
  } catch (const Error&) {
    degenerate = true;
  }
  const double mse = resdta::mse(s.measured, s.predicted);

  write_json(dir / "report.json", {{"n", n},
                                   {"source", input},
                                   {"regression", {{"slope", optional_number(slope)}, {"intercept", optional_number(intercept)}}},
                                   {"ci", optional_number(ci)},
                                   {"mse", mse},
                                   {"r2", optional_number(r2)},
                                   {"r2_origin", optional_number(r2_origin)},
                                   {"rm2", optional_number(rm2)},
                                   {"rm2_acceptable", std::isfinite(rm2) && rm2 > resdta::kRm2AcceptanceThreshold},
                                   {"r2_degenerate", degenerate}});
  {
    auto cell = [](double v) { return std::isfinite(v) ? resdta::format_real(v) : std::string("n/a"); };
    std::ofstream out(dir / "report.md");
    out << "| metric | value |\n|---|---|\n";
    out << "| n | " << n << " |\n";
    out << "| CI | " << cell(ci) << " |\n";
    out << "| MSE | " << cell(mse) << " |\n";
    out << "| r2 | " << cell(r2) << (degenerate ? " (degenerate)" : "") << " |\n";
    out << "| r0^2 | " << cell(r2_origin) << " |\n";
    out << "| rm2 | " << cell(rm2) << " |\n";
    out << "| slope | " << cell(slope) << " |\n";
    out << "| intercept | " << cell(intercept) << " |\n";
  }
  if (flags.svg) {
    std::ofstream out(dir / "scatter.svg");
    out << svg_scatter(s, slope, intercept);
  }
  std::cerr << "report written to " << dir.string() << "\n";
  return 0;
}

void add_shared(CLI::App* cmd, Flags& flags) {
  cmd->add_option("--config", flags.config, "JSON run configuration");
  cmd->add_option("--out", flags.out, "Output directory");
  cmd->add_option("--data-dir", flags.data_dir, "Directory holding the input files (default $RESDTA_DATA_DIR)");
  cmd->add_option("--seed", flags.seed, "Seed for folds, initialization and shuffling");
  cmd->add_option("--folds", flags.folds, "0..4, all, or test");
  cmd->add_option("--limit", flags.limit, "Cap on records per split");
  cmd->add_option("--epochs", flags.epochs, "Override the epoch count");
  cmd->add_flag("--force", flags.force, "Rebuild outputs even if up to date");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ResDTA drug-target affinity toolkit"};
  app.require_subcommand(1);
  Flags flags;
  auto* prepare = app.add_subcommand("prepare", "Encode raw data and write fold files");
  auto* train = app.add_subcommand("train", "Train one model per selected fold");
  auto* evaluate = app.add_subcommand("evaluate", "Score fold models on the test split");
  auto* predict = app.add_subcommand("predict", "Predict affinities for drug/protein id pairs");
  auto* report = app.add_subcommand("report", "Scatter data, regression line and metric table");
  for (auto* cmd : {prepare, train, evaluate, predict, report}) add_shared(cmd, flags);
  evaluate->add_flag("--random-init", flags.random_init, "Score untrained models");
  evaluate->add_option("--checkpoint", flags.checkpoint, "Score one checkpoint file");
  predict->add_option("--checkpoint", flags.checkpoint, "Use one checkpoint file");
  predict->add_option("--pairs", flags.pairs, "TSV of drug_id and protein_id")->required();
  predict->add_option("--output", flags.output, "Output CSV");
  report->add_option("--predictions", flags.predictions, "Predictions CSV");
  report->add_flag("--svg", flags.svg, "Also render scatter.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*prepare) return cmd_prepare(flags);
    if (*train) return cmd_train(flags);
    if (*evaluate) return cmd_evaluate(flags);
    if (*predict) return cmd_predict(flags);
    return cmd_report(flags);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(resdta::category_of(e.kind()));
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
