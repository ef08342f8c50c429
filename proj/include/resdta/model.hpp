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

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "resdta/error.hpp"
#include "resdta/random.hpp"
#include "resdta/vocab.hpp"

namespace resdta {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// floor((l_in + 2*padding - dilation*(kernel-1) - 1) / stride + 1)
inline std::size_t conv_output_length(std::size_t l_in, std::size_t kernel, std::size_t stride,
                                      std::size_t padding, std::size_t dilation) {
  if (l_in == 0 || kernel == 0 || stride == 0 || dilation == 0) {
    throw Error(ErrorKind::kInvalidArgument, "conv arguments must be positive");
  }
  const auto numerator = static_cast<std::int64_t>(l_in + 2 * padding) -
                         static_cast<std::int64_t>(dilation * (kernel - 1)) - 1;
  if (numerator < 0) {
    throw Error(ErrorKind::kDegenerateOutput, "kernel span exceeds input length " + std::to_string(l_in));
  }
  return static_cast<std::size_t>(numerator) / stride + 1;
}

struct ModelConfig {
  std::size_t smiles_len = kSmilesMaxLen;
  std::size_t protein_len = kProteinMaxLen;
  std::size_t embed_dim = 128;
  std::size_t smiles_vocab = 64;
  std::size_t protein_vocab = 25;
  std::array<std::size_t, 3> stream_filters{32, 64, 96};
  std::array<std::size_t, 3> combined_filters{192, 288, 96};
  std::size_t kernel_size = 8;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t stream_repr_dim = 256;
  std::size_t combined_repr_dim = 512;
  std::vector<std::size_t> fc_dims{2048, 2048, 1024, 512, 1};
  double dropout_p = 0.1;
  /// true: every conv layer's pooled features feed the projection (ResDTA);
  /// false: only the last conv layer's (ablation).
  bool use_skip = true;

  bool operator==(const ModelConfig&) const = default;
};

/// Lengths after each conv layer, derived from a config.
struct ShapeChain {
  std::array<std::size_t, 3> drug_lengths{};
  std::array<std::size_t, 3> protein_lengths{};
  std::size_t combined_input_length = 0;
  std::array<std::size_t, 3> combined_lengths{};
  std::size_t stream_feature_dim = 0;
  std::size_t combined_feature_dim = 0;
  std::size_t combined_input_channels = 0;
  std::size_t fc_input_dim = 0;
};

inline ShapeChain shape_chain(const ModelConfig& c) {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw Error(ErrorKind::kInvalidArgument, std::string(what) + " must be positive");
  };
  positive(c.smiles_len, "smiles_len");
  positive(c.protein_len, "protein_len");
  positive(c.embed_dim, "embed_dim");
  positive(c.smiles_vocab, "smiles_vocab");
  positive(c.protein_vocab, "protein_vocab");
  positive(c.stream_repr_dim, "stream_repr_dim");
  positive(c.combined_repr_dim, "combined_repr_dim");
  for (auto f : c.stream_filters) positive(f, "stream filter count");
  for (auto f : c.combined_filters) positive(f, "combined filter count");
  if (c.fc_dims.empty() || c.fc_dims.back() != 1) {
    throw Error(ErrorKind::kInvalidArgument, "fc_dims must end in 1");
  }
  for (auto d : c.fc_dims) positive(d, "fc dim");
  if (!(c.dropout_p >= 0.0 && c.dropout_p < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "dropout_p must lie in [0, 1)");
  }

  ShapeChain s;
  auto chain = [&](std::size_t len, std::array<std::size_t, 3>& out) {
    for (std::size_t i = 0; i < 3; ++i) {
      len = conv_output_length(len, c.kernel_size, c.stride, c.padding, c.dilation);
      out[i] = len;
    }
  };
  chain(c.smiles_len, s.drug_lengths);
  chain(c.protein_len, s.protein_lengths);
  s.combined_input_length = s.drug_lengths[2] + s.protein_lengths[2];
  s.combined_input_channels = c.stream_filters[2];
  chain(s.combined_input_length, s.combined_lengths);
  s.stream_feature_dim =
      c.use_skip ? c.stream_filters[0] + c.stream_filters[1] + c.stream_filters[2] : c.stream_filters[2];
  s.combined_feature_dim =
      c.use_skip ? c.combined_filters[0] + c.combined_filters[1] + c.combined_filters[2] : c.combined_filters[2];
  s.fc_input_dim = 2 * c.stream_repr_dim + c.combined_repr_dim;
  return s;
}

/// Cross-correlation weights, laid out Cout x (kernel * Cin) with column
/// k * Cin + c holding tap k of input channel c.
template <typename T>
struct ConvLayer {
  Mat<T> weight;
  Mat<T> bias;  // Cout x 1
};

/// y = W x + b
template <typename T>
struct Linear {
  Mat<T> weight;  // out x in
  Mat<T> bias;    // out x 1
};

template <typename T>
struct StreamParams {
  Mat<T> embedding;  // embed_dim x (vocab + 1); column 0 is the pad label
  std::array<ConvLayer<T>, 3> convs;
  Linear<T> projection;
};

template <typename T>
struct CombinedParams {
  std::array<ConvLayer<T>, 3> convs;
  Linear<T> projection;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  StreamParams<T> drug;
  StreamParams<T> protein;
  CombinedParams<T> combined;
  std::vector<Linear<T>> fc;
};

/// Visits every weight array as (name, matrix). Works on const and mutable
/// params alike; the order is fixed and used by checkpoints and the optimizer.
template <typename P, typename F>
void for_each_tensor(P& params, F&& fn) {
  auto stream = [&](auto& s, const std::string& prefix) {
    fn(prefix + ".embedding", s.embedding);
    for (std::size_t i = 0; i < 3; ++i) {
      fn(prefix + ".conv" + std::to_string(i + 1) + ".weight", s.convs[i].weight);
      fn(prefix + ".conv" + std::to_string(i + 1) + ".bias", s.convs[i].bias);
    }
    fn(prefix + ".projection.weight", s.projection.weight);
    fn(prefix + ".projection.bias", s.projection.bias);
  };
  stream(params.drug, "drug");
  stream(params.protein, "protein");
  for (std::size_t i = 0; i < 3; ++i) {
    fn("combined.conv" + std::to_string(i + 1) + ".weight", params.combined.convs[i].weight);
    fn("combined.conv" + std::to_string(i + 1) + ".bias", params.combined.convs[i].bias);
  }
  fn(std::string("combined.projection.weight"), params.combined.projection.weight);
  fn(std::string("combined.projection.bias"), params.combined.projection.bias);
  for (std::size_t i = 0; i < params.fc.size(); ++i) {
    fn("fc" + std::to_string(i + 1) + ".weight", params.fc[i].weight);
    fn("fc" + std::to_string(i + 1) + ".bias", params.fc[i].bias);
  }
}

/// Two-argument variant over a pair of identically shaped parameter sets.
template <typename P, typename Q, typename F>
void for_each_tensor_pair(P& a, Q& b, F&& fn) {
  std::vector<std::reference_wrapper<std::remove_reference_t<decltype((a.drug.embedding))>>> lhs;
  std::vector<std::reference_wrapper<std::remove_reference_t<decltype((b.drug.embedding))>>> rhs;
  std::vector<std::string> names;
  for_each_tensor(a, [&](const std::string& name, auto& m) {
    names.push_back(name);
    lhs.emplace_back(m);
  });
  for_each_tensor(b, [&](const std::string&, auto& m) { rhs.emplace_back(m); });
  for (std::size_t i = 0; i < names.size(); ++i) fn(names[i], lhs[i].get(), rhs[i].get());
}

namespace detail {

template <typename T>
ConvLayer<T> zero_conv(std::size_t in, std::size_t out, std::size_t kernel) {
  return {Mat<T>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * kernel)),
          Mat<T>::Zero(static_cast<Eigen::Index>(out), 1)};
}

template <typename T>
Linear<T> zero_linear(std::size_t in, std::size_t out) {
  return {Mat<T>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
          Mat<T>::Zero(static_cast<Eigen::Index>(out), 1)};
}

template <typename T>
StreamParams<T> zero_stream(const ModelConfig& c, const ShapeChain& s, std::size_t vocab) {
  StreamParams<T> p;
  p.embedding = Mat<T>::Zero(static_cast<Eigen::Index>(c.embed_dim), static_cast<Eigen::Index>(vocab + 1));
  std::size_t in = c.embed_dim;
  for (std::size_t i = 0; i < 3; ++i) {
    p.convs[i] = zero_conv<T>(in, c.stream_filters[i], c.kernel_size);
    in = c.stream_filters[i];
  }
  p.projection = zero_linear<T>(s.stream_feature_dim, c.stream_repr_dim);
  return p;
}

}  // namespace detail

/// All-zero parameters with the shapes implied by `config`.
template <typename T>
ModelParams<T> zero_params(const ModelConfig& config) {
  const ShapeChain s = shape_chain(config);
  ModelParams<T> p;
  p.config = config;
  p.drug = detail::zero_stream<T>(config, s, config.smiles_vocab);
  p.protein = detail::zero_stream<T>(config, s, config.protein_vocab);
  std::size_t in = s.combined_input_channels;
  for (std::size_t i = 0; i < 3; ++i) {
    p.combined.convs[i] = detail::zero_conv<T>(in, config.combined_filters[i], config.kernel_size);
    in = config.combined_filters[i];
  }
  p.combined.projection = detail::zero_linear<T>(s.combined_feature_dim, config.combined_repr_dim);
  in = s.fc_input_dim;
  for (std::size_t d : config.fc_dims) {
    p.fc.push_back(detail::zero_linear<T>(in, d));
    in = d;
  }
  return p;
}

/// Embeddings ~ N(0, 1); conv and linear weights and biases ~
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)). Deterministic in (config, seed).
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> p = zero_params<T>(config);
  Rng rng(seed);
  auto fill_uniform = [&](Mat<T>& m, double bound) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(rng.uniform(-bound, bound));
  };
  auto fill_normal = [&](Mat<T>& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(rng.normal());
  };
  auto layer = [&](auto& l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    fill_uniform(l.weight, bound);
    fill_uniform(l.bias, bound);
  };
  for (auto* s : {&p.drug, &p.protein}) {
    fill_normal(s->embedding);
    for (auto& c : s->convs) layer(c);
    layer(s->projection);
  }
  for (auto& c : p.combined.convs) layer(c);
  layer(p.combined.projection);
  for (auto& l : p.fc) layer(l);
  return p;
}

enum class Stream { kDrug, kProtein };

/// Per-sample intermediate values kept for the backward pass.
template <typename T>
struct ConvStackCache {
  std::array<Mat<T>, 4> act;  // act[0] is the stack input, act[i+1] = relu(conv_i)
  std::array<std::vector<Eigen::Index>, 3> argmax;
  Vec<T> features;
  Vec<T> repr;
};

template <typename T>
struct SampleCache {
  std::span<const Token> drug_tokens;
  std::span<const Token> protein_tokens;
  ConvStackCache<T> drug;
  ConvStackCache<T> protein;
  ConvStackCache<T> combined;
  std::vector<Vec<T>> fc_inputs;      // input to each fc layer
  std::vector<Vec<T>> dropout_scale;  // per hidden layer: 0 or 1/(1-p); empty at inference
};

namespace detail {

template <typename T>
Mat<T> pad_columns(const Mat<T>& x, std::size_t padding) {
  if (padding == 0) return x;
  const auto p = static_cast<Eigen::Index>(padding);
  Mat<T> out = Mat<T>::Zero(x.rows(), x.cols() + 2 * p);
  out.middleCols(p, x.cols()) = x;
  return out;
}

/// relu(conv(x)) for one sample; x is Cin x L.
template <typename T>
Mat<T> conv_relu(const ConvLayer<T>& layer, const Mat<T>& input, const ModelConfig& c) {
  const Mat<T> x = pad_columns(input, c.padding);
  const Eigen::Index cin = x.rows();
  const auto kernel = static_cast<Eigen::Index>(c.kernel_size);
  const auto stride = static_cast<Eigen::Index>(c.stride);
  const auto dilation = static_cast<Eigen::Index>(c.dilation);
  const auto l_out = static_cast<Eigen::Index>(
      conv_output_length(static_cast<std::size_t>(input.cols()), c.kernel_size, c.stride, c.padding, c.dilation));
  if (layer.weight.cols() != cin * kernel) {
    throw Error(ErrorKind::kShapeMismatch, "conv input has " + std::to_string(cin) + " channels");
  }
  Mat<T> out(layer.weight.rows(), l_out);
  if (dilation == 1) {
    // Column t of the unfolded input is the contiguous run x[:, t*stride .. t*stride+kernel).
    Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>> unfolded(x.data(), cin * kernel, l_out,
                                                                Eigen::OuterStride<>(cin * stride));
    out.noalias() = layer.weight * unfolded;
  } else {
    out.setZero();
    for (Eigen::Index k = 0; k < kernel; ++k) {
      Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>> tap(x.data() + k * dilation * cin, cin, l_out,
                                                             Eigen::OuterStride<>(cin * stride));
      out.noalias() += layer.weight.middleCols(k * cin, cin) * tap;
    }
  }
  out.colwise() += layer.bias.col(0);
  return out.cwiseMax(T(0));
}

/// Accumulates weight/bias gradients and returns the gradient w.r.t. the
/// (unpadded) input. `d_out` is the gradient w.r.t. the pre-activation.
template <typename T>
Mat<T> conv_backward(const ConvLayer<T>& layer, const Mat<T>& input, const Mat<T>& d_out, const ModelConfig& c,
                     ConvLayer<T>& grad) {
  const Mat<T> x = pad_columns(input, c.padding);
  const Eigen::Index cin = x.rows();
  const auto kernel = static_cast<Eigen::Index>(c.kernel_size);
  const auto stride = static_cast<Eigen::Index>(c.stride);
  const auto dilation = static_cast<Eigen::Index>(c.dilation);
  const Eigen::Index l_out = d_out.cols();

  grad.bias.col(0) += d_out.rowwise().sum();
  Mat<T> d_x = Mat<T>::Zero(cin, x.cols());
  for (Eigen::Index k = 0; k < kernel; ++k) {
    Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>> tap(x.data() + k * dilation * cin, cin, l_out,
                                                           Eigen::OuterStride<>(cin * stride));
    grad.weight.middleCols(k * cin, cin).noalias() += d_out * tap.transpose();
    Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>> d_tap(d_x.data() + k * dilation * cin, cin, l_out,
                                                      Eigen::OuterStride<>(cin * stride));
    d_tap.noalias() += layer.weight.middleCols(k * cin, cin).transpose() * d_out;
  }
  if (c.padding == 0) return d_x;
  return d_x.middleCols(static_cast<Eigen::Index>(c.padding), input.cols());
}

/// Three conv+relu layers with a global max pool (over length) after each.
template <typename T>
void conv_stack_forward(const std::array<ConvLayer<T>, 3>& convs, const Linear<T>& projection, const ModelConfig& c,
                        ConvStackCache<T>& cache) {
  Eigen::Index feature_dim = 0;
  std::array<Vec<T>, 3> pooled;
  for (std::size_t i = 0; i < 3; ++i) {
    cache.act[i + 1] = conv_relu(convs[i], cache.act[i], c);
    const Mat<T>& a = cache.act[i + 1];
    pooled[i].resize(a.rows());
    cache.argmax[i].resize(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index ch = 0; ch < a.rows(); ++ch) {
      Eigen::Index where = 0;
      pooled[i](ch) = a.row(ch).maxCoeff(&where);
      cache.argmax[i][static_cast<std::size_t>(ch)] = where;
    }
    if (c.use_skip || i == 2) feature_dim += a.rows();
  }
  cache.features.resize(feature_dim);
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!c.use_skip && i != 2) continue;
    cache.features.segment(offset, pooled[i].size()) = pooled[i];
    offset += pooled[i].size();
  }
  cache.repr = projection.weight * cache.features + projection.bias.col(0);
}

/// Backward through projection, pools and convs. `d_last_map` is an extra
/// gradient arriving at act[3] (from the combined stream), may be empty.
/// Returns the gradient w.r.t. act[0].
template <typename T>
Mat<T> conv_stack_backward(const std::array<ConvLayer<T>, 3>& convs, const Linear<T>& projection,
                           const ModelConfig& c, const ConvStackCache<T>& cache, const Vec<T>& d_repr,
                           const Mat<T>* d_last_map, std::array<ConvLayer<T>, 3>& conv_grads,
                           Linear<T>& projection_grad) {
  projection_grad.weight.noalias() += d_repr * cache.features.transpose();
  projection_grad.bias.col(0) += d_repr;
  const Vec<T> d_features = projection.weight.transpose() * d_repr;

  std::array<Eigen::Index, 3> offsets{};
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!c.use_skip && i != 2) continue;
    offsets[i] = offset;
    offset += cache.act[i + 1].rows();
  }

  Mat<T> d_act;  // gradient w.r.t. act[i+1], walked downwards
  if (d_last_map != nullptr) {
    d_act = *d_last_map;
  } else {
    d_act = Mat<T>::Zero(cache.act[3].rows(), cache.act[3].cols());
  }
  for (std::size_t step = 0; step < 3; ++step) {
    const std::size_t i = 2 - step;
    const Mat<T>& a = cache.act[i + 1];
    if (c.use_skip || i == 2) {
      for (Eigen::Index ch = 0; ch < a.rows(); ++ch) {
        d_act(ch, cache.argmax[i][static_cast<std::size_t>(ch)]) += d_features(offsets[i] + ch);
      }
    }
    const Mat<T> d_pre = (a.array() > T(0)).select(d_act, T(0));
    d_act = conv_backward(convs[i], cache.act[i], d_pre, c, conv_grads[i]);
  }
  return d_act;
}

template <typename T>
void embed(const Mat<T>& table, std::span<const Token> tokens, std::size_t vocab, Mat<T>& out) {
  out.resize(table.rows(), static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const Token tok = tokens[t];
    if (tok < 0 || static_cast<std::size_t>(tok) > vocab) {
      throw Error(ErrorKind::kTokenOutOfRange,
                  "token " + std::to_string(tok) + " at position " + std::to_string(t));
    }
    out.col(static_cast<Eigen::Index>(t)) = table.col(tok);
  }
}

template <typename T>
void stream_forward_one(const StreamParams<T>& s, const ModelConfig& c, std::span<const Token> tokens,
                        std::size_t expected_len, std::size_t vocab, ConvStackCache<T>& cache) {
  if (tokens.size() != expected_len) {
    throw Error(ErrorKind::kShapeMismatch,
                "expected " + std::to_string(expected_len) + " tokens, got " + std::to_string(tokens.size()));
  }
  embed(s.embedding, tokens, vocab, cache.act[0]);
  conv_stack_forward(s.convs, s.projection, c, cache);
}

template <typename T>
void combined_forward_one(const CombinedParams<T>& p, const ModelConfig& c, const Mat<T>& drug_map,
                          const Mat<T>& protein_map, ConvStackCache<T>& cache) {
  if (drug_map.rows() != protein_map.rows()) {
    throw Error(ErrorKind::kShapeMismatch, "drug and protein maps have different channel counts");
  }
  cache.act[0].resize(drug_map.rows(), drug_map.cols() + protein_map.cols());
  cache.act[0] << drug_map, protein_map;
  conv_stack_forward(p.convs, p.projection, c, cache);
}

}  // namespace detail

/// Draws one sample's dropout masks. Masks are drawn per sample so a
/// sample's mask does not depend on how the batch is partitioned.
template <typename T>
std::vector<Vec<T>> draw_dropout(const ModelConfig& c, Rng& rng) {
  std::vector<Vec<T>> masks;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - c.dropout_p));
  for (std::size_t l = 0; l + 1 < c.fc_dims.size(); ++l) {
    Vec<T> m(static_cast<Eigen::Index>(c.fc_dims[l]));
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform() < c.dropout_p ? T(0) : keep_scale;
    masks.push_back(std::move(m));
  }
  return masks;
}

/// Full forward pass for one drug/protein pair. With non-empty `dropout`
/// the hidden fc outputs are multiplied by the given masks.
template <typename T>
T forward_sample(const ModelParams<T>& params, std::span<const Token> drug_tokens,
                 std::span<const Token> protein_tokens, std::vector<Vec<T>> dropout, SampleCache<T>& cache) {
  const ModelConfig& c = params.config;
  cache.drug_tokens = drug_tokens;
  cache.protein_tokens = protein_tokens;
  detail::stream_forward_one(params.drug, c, drug_tokens, c.smiles_len, c.smiles_vocab, cache.drug);
  detail::stream_forward_one(params.protein, c, protein_tokens, c.protein_len, c.protein_vocab, cache.protein);
  detail::combined_forward_one(params.combined, c, cache.drug.act[3], cache.protein.act[3], cache.combined);

  const Eigen::Index sd = cache.drug.repr.size();
  const Eigen::Index cd = cache.combined.repr.size();
  Vec<T> x(sd + cd + cache.protein.repr.size());
  x << cache.drug.repr, cache.combined.repr, cache.protein.repr;
  cache.dropout_scale = std::move(dropout);
  cache.fc_inputs.clear();
  for (std::size_t l = 0; l < params.fc.size(); ++l) {
    cache.fc_inputs.push_back(x);
    Vec<T> z = params.fc[l].weight * x + params.fc[l].bias.col(0);
    if (l + 1 < params.fc.size()) {
      z = z.cwiseMax(T(0));
      if (!cache.dropout_scale.empty()) z.array() *= cache.dropout_scale[l].array();
    }
    x = std::move(z);
  }
  return x(0);
}

/// Adds d_output * d(prediction)/d(params) into `grads`.
template <typename T>
void backward_sample(const ModelParams<T>& params, const SampleCache<T>& cache, T d_output, ModelParams<T>& grads) {
  const ModelConfig& c = params.config;
  Vec<T> d_z = Vec<T>::Constant(1, d_output);
  Vec<T> d_x;
  for (std::size_t step = 0; step < params.fc.size(); ++step) {
    const std::size_t l = params.fc.size() - 1 - step;
    grads.fc[l].weight.noalias() += d_z * cache.fc_inputs[l].transpose();
    grads.fc[l].bias.col(0) += d_z;
    d_x = params.fc[l].weight.transpose() * d_z;
    if (l > 0) {
      // fc_inputs[l] = dropout(relu(z_{l-1})); zero exactly where relu was inactive or dropped.
      const Vec<T>& h = cache.fc_inputs[l];
      d_z = (h.array() > T(0)).select(d_x, T(0));
      if (!cache.dropout_scale.empty()) d_z.array() *= cache.dropout_scale[l - 1].array();
    }
  }
  const Eigen::Index sd = cache.drug.repr.size();
  const Eigen::Index cd = cache.combined.repr.size();
  const Vec<T> d_drug = d_x.segment(0, sd);
  const Vec<T> d_comb = d_x.segment(sd, cd);
  const Vec<T> d_prot = d_x.segment(sd + cd, cache.protein.repr.size());

  const Mat<T> d_combined_in = detail::conv_stack_backward(params.combined.convs, params.combined.projection, c,
                                                           cache.combined, d_comb, static_cast<const Mat<T>*>(nullptr), grads.combined.convs,
                                                           grads.combined.projection);
  const Eigen::Index drug_len = cache.drug.act[3].cols();
  const Mat<T> d_drug_map = d_combined_in.leftCols(drug_len);
  const Mat<T> d_prot_map = d_combined_in.rightCols(d_combined_in.cols() - drug_len);

  auto stream_back = [&](const StreamParams<T>& s, const ConvStackCache<T>& sc, const Vec<T>& d_repr,
                         const Mat<T>& d_map, std::span<const Token> tokens, StreamParams<T>& g) {
    const Mat<T> d_emb =
        detail::conv_stack_backward(s.convs, s.projection, c, sc, d_repr, &d_map, g.convs, g.projection);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      g.embedding.col(tokens[t]) += d_emb.col(static_cast<Eigen::Index>(t));
    }
  };
  stream_back(params.drug, cache.drug, d_drug, d_drug_map, cache.drug_tokens, grads.drug);
  stream_back(params.protein, cache.protein, d_prot, d_prot_map, cache.protein_tokens, grads.protein);
}

/// A batch of n pairs with tokens stored contiguously, row per pair.
struct TokenBatch {
  std::size_t size = 0;
  std::span<const Token> drug;     // size x smiles_len
  std::span<const Token> protein;  // size x protein_len
};

namespace detail {

inline void check_batch(const ModelConfig& c, const TokenBatch& batch) {
  if (batch.drug.size() != batch.size * c.smiles_len || batch.protein.size() != batch.size * c.protein_len) {
    throw Error(ErrorKind::kShapeMismatch, "token batch does not match batch size " + std::to_string(batch.size));
  }
}

}  // namespace detail

template <typename T>
struct StreamOutput {
  Mat<T> repr;                  // repr_dim x n
  std::vector<Mat<T>> last_map;  // n maps of filters[2] x L3
};

template <typename T>
StreamOutput<T> stream_forward(const ModelParams<T>& params, std::span<const Token> tokens, std::size_t n,
                               Stream stream) {
  const ModelConfig& c = params.config;
  const bool drug = stream == Stream::kDrug;
  const std::size_t len = drug ? c.smiles_len : c.protein_len;
  const std::size_t vocab = drug ? c.smiles_vocab : c.protein_vocab;
  if (tokens.size() != n * len) throw Error(ErrorKind::kShapeMismatch, "token count does not match n * length");
  StreamOutput<T> out;
  out.repr.resize(static_cast<Eigen::Index>(c.stream_repr_dim), static_cast<Eigen::Index>(n));
  ConvStackCache<T> cache;
  for (std::size_t i = 0; i < n; ++i) {
    detail::stream_forward_one(drug ? params.drug : params.protein, c, tokens.subspan(i * len, len), len, vocab,
                               cache);
    out.repr.col(static_cast<Eigen::Index>(i)) = cache.repr;
    out.last_map.push_back(cache.act[3]);
  }
  return out;
}

template <typename T>
Mat<T> combined_forward(const ModelParams<T>& params, const std::vector<Mat<T>>& drug_maps,
                        const std::vector<Mat<T>>& protein_maps) {
  if (drug_maps.size() != protein_maps.size()) {
    throw Error(ErrorKind::kShapeMismatch, "drug and protein batches differ in size");
  }
  const ModelConfig& c = params.config;
  const std::size_t channels = c.stream_filters[2];
  Mat<T> out(static_cast<Eigen::Index>(c.combined_repr_dim), static_cast<Eigen::Index>(drug_maps.size()));
  ConvStackCache<T> cache;
  for (std::size_t i = 0; i < drug_maps.size(); ++i) {
    if (static_cast<std::size_t>(drug_maps[i].rows()) != channels ||
        static_cast<std::size_t>(protein_maps[i].rows()) != channels) {
      throw Error(ErrorKind::kShapeMismatch, "feature maps must have " + std::to_string(channels) + " channels");
    }
    detail::combined_forward_one(params.combined, c, drug_maps[i], protein_maps[i], cache);
    out.col(static_cast<Eigen::Index>(i)) = cache.repr;
  }
  return out;
}

/// Predicted affinities for a batch. Dropout is applied only when
/// `training` is true, drawing masks from `rng`.
template <typename T>
std::vector<T> forward(const ModelParams<T>& params, const TokenBatch& batch, bool training = false,
                       Rng* rng = nullptr) {
  const ModelConfig& c = params.config;
  detail::check_batch(c, batch);
  if (training && rng == nullptr) throw Error(ErrorKind::kInvalidArgument, "training forward needs an rng");
  std::vector<T> out(batch.size);
  SampleCache<T> cache;
  for (std::size_t i = 0; i < batch.size; ++i) {
    auto masks = training ? draw_dropout<T>(c, *rng) : std::vector<Vec<T>>{};
    out[i] = forward_sample(params, batch.drug.subspan(i * c.smiles_len, c.smiles_len),
                            batch.protein.subspan(i * c.protein_len, c.protein_len), std::move(masks), cache);
  }
  return out;
}

/// Casts every weight to another scalar type.
template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& src) {
  ModelParams<To> dst = zero_params<To>(src.config);
  for_each_tensor_pair(dst, src, [](const std::string&, Mat<To>& d, const Mat<From>& s) { d = s.template cast<To>(); });
  return dst;
}

}  // namespace resdta
