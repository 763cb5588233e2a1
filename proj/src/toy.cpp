/* Copyright 2026 The ModulePort Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "moduleport/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <variant>

#include "moduleport/error.hpp"

namespace moduleport::toy {

using moduleport::BitEqual;

namespace {

Matrix RandomNormal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

std::vector<double> RandomVector(std::size_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

void AddRowVector(Matrix& m, std::span<const double> v) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += v[c];
  }
}

void AccumulateColumnSums(const Matrix& m, std::vector<double>& out) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row[c];
  }
}

void AddInPlace(Matrix& dst, const Matrix& src) {
  auto d = dst.values();
  const auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

// Per-layer intermediates kept for backprop.
struct LayerCache {
  Matrix h_in{1, 1};
  Matrix a{1, 1};
  Matrix t{1, 1};
  Matrix u{1, 1};
  // Attention models.
  std::optional<Matrix> q, k, v, probs;
  // LoRA models: h * A^T for the query and value factors.
  std::optional<Matrix> zq, zv;
  // Adapter models: bottleneck pre-activation.
  std::optional<Matrix> z;
};

struct ForwardResult {
  Matrix hidden{1, 1};  // final hidden states, tokens x d
  std::vector<LayerCache> layers;
};

void CheckCompatible(const ToyModel& model, const PeftState* state, const Matrix& x,
                     std::size_t seq_len) {
  if (x.cols() != model.d_in) {
    throw ShapeError("toy model expects " + std::to_string(model.d_in) +
                     " input features, got " + x.shape_string());
  }
  if (seq_len == 0 || x.rows() % seq_len != 0) {
    throw ShapeError("input rows " + std::to_string(x.rows()) +
                     " are not a multiple of seq_len " + std::to_string(seq_len));
  }
  if (state == nullptr) return;
  if (state->layers.size() != model.depth()) {
    throw ShapeError("PEFT state has " + std::to_string(state->layers.size()) +
                     " layers, model has " + std::to_string(model.depth()));
  }
  if (state->head.weight.rows() != model.d_model ||
      state->head.bias.size() != state->head.weight.cols()) {
    throw ShapeError("task head " + state->head.weight.shape_string() +
                     " does not fit d_model " + std::to_string(model.d_model));
  }
  for (const auto& layer : state->layers) {
    if (const auto* a = std::get_if<AdapterParams>(&layer)) {
      a->Validate();
      if (a->d_model() != model.d_model) throw ShapeError("adapter d_model mismatch");
    } else {
      const auto& lo = std::get<LoraLayer>(layer);
      if (!model.has_attention()) {
        throw ShapeError("LoRA needs attention projections; model has none");
      }
      lo.query.Validate();
      lo.value.Validate();
      if (lo.query.d_model() != model.d_model || lo.value.d_model() != model.d_model) {
        throw ShapeError("LoRA d_model mismatch");
      }
    }
  }
}

void Attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t seq_len,
            Matrix& probs, Matrix& out) {
  const std::size_t d = q.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t examples = q.rows() / seq_len;
  for (std::size_t e = 0; e < examples; ++e) {
    const std::size_t base = e * seq_len;
    for (std::size_t i = 0; i < seq_len; ++i) {
      const auto qi = q.row(base + i);
      auto p = probs.row(base + i);
      double max_s = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < seq_len; ++j) {
        const auto kj = k.row(base + j);
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
        p[j] = s * inv_sqrt_d;
        max_s = std::max(max_s, p[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < seq_len; ++j) {
        p[j] = std::exp(p[j] - max_s);
        total += p[j];
      }
      for (std::size_t j = 0; j < seq_len; ++j) p[j] /= total;
      auto o = out.row(base + i);
      for (std::size_t j = 0; j < seq_len; ++j) {
        const auto vj = v.row(base + j);
        for (std::size_t c = 0; c < d; ++c) o[c] += p[j] * vj[c];
      }
    }
  }
}

ForwardResult Forward(const ToyModel& model, const PeftState* state, const Matrix& x,
                      std::size_t seq_len) {
  ForwardResult result;
  Matrix h = Matmul(x, model.input_proj);
  result.layers.resize(model.depth());
  for (std::size_t l = 0; l < model.depth(); ++l) {
    const ToyBlock& block = model.blocks[l];
    LayerCache& cache = result.layers[l];
    cache.h_in = h;
    const PeftLayer* peft = state ? &state->layers[l] : nullptr;
    const auto* lora = peft ? std::get_if<LoraLayer>(peft) : nullptr;
    const auto* adapter = peft ? std::get_if<AdapterParams>(peft) : nullptr;

    Matrix a = h;
    if (block.attention) {
      Matrix q = MatmulTransposedB(h, block.attention->query);
      Matrix k = MatmulTransposedB(h, block.attention->key);
      Matrix v = MatmulTransposedB(h, block.attention->value);
      if (lora) {
        cache.zq = MatmulTransposedB(h, lora->query.a_weight);
        cache.zv = MatmulTransposedB(h, lora->value.a_weight);
        AddInPlace(q, Scale(MatmulTransposedB(*cache.zq, lora->query.b_weight),
                            lora->query.scaling));
        AddInPlace(v, Scale(MatmulTransposedB(*cache.zv, lora->value.b_weight),
                            lora->value.scaling));
      }
      Matrix probs(h.rows(), seq_len);
      Matrix att(h.rows(), h.cols());
      Attend(q, k, v, seq_len, probs, att);
      AddInPlace(a, att);
      cache.q = std::move(q);
      cache.k = std::move(k);
      cache.v = std::move(v);
      cache.probs = std::move(probs);
    }

    Matrix t = MatmulTransposedB(a, block.weight);
    AddRowVector(t, block.bias);
    for (double& val : t.values()) val = std::tanh(val);
    Matrix u = Add(a, t);

    if (adapter) {
      cache.z = AdapterDownProjection(*adapter, u);
      h = AdapterForward(*adapter, u);
    } else {
      h = u;
    }
    cache.a = std::move(a);
    cache.t = std::move(t);
    cache.u = std::move(u);
  }
  result.hidden = std::move(h);
  return result;
}

Matrix MeanPool(const Matrix& hidden, std::size_t seq_len) {
  const std::size_t examples = hidden.rows() / seq_len;
  Matrix pooled(examples, hidden.cols());
  const double inv = 1.0 / static_cast<double>(seq_len);
  for (std::size_t e = 0; e < examples; ++e) {
    auto out = pooled.row(e);
    for (std::size_t i = 0; i < seq_len; ++i) {
      const auto src = hidden.row(e * seq_len + i);
      for (std::size_t c = 0; c < src.size(); ++c) out[c] += src[c];
    }
    for (double& v : out) v *= inv;
  }
  return pooled;
}

Matrix Logits(const TaskHead& head, const Matrix& pooled) {
  Matrix logits = Matmul(pooled, head.weight);
  AddRowVector(logits, head.bias);
  return logits;
}

// Softmax probabilities in place; returns the summed cross-entropy.
double SoftmaxCrossEntropy(Matrix& logits, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t e = 0; e < logits.rows(); ++e) {
    auto row = logits.row(e);
    const double max_v = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - max_v);
      sum += v;
    }
    for (double& v : row) v /= sum;
    const auto label = static_cast<std::size_t>(labels[e]);
    if (label >= row.size()) throw ShapeError("label out of range for the task head");
    total += -std::log(std::max(row[label], std::numeric_limits<double>::min()));
  }
  return total;
}

void CheckLabels(const Matrix& x, std::span<const int> labels, std::size_t seq_len) {
  if (labels.size() * seq_len != x.rows()) {
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(x.rows() / seq_len) + " examples");
  }
}

PeftState ZerosLike(const PeftState& state) {
  PeftState zeros;
  for (const auto& layer : state.layers) {
    if (const auto* a = std::get_if<AdapterParams>(&layer)) {
      zeros.layers.emplace_back(AdapterParams{
          Matrix(a->down_weight.rows(), a->down_weight.cols()),
          std::vector<double>(a->down_bias.size()),
          Matrix(a->up_weight.rows(), a->up_weight.cols()),
          std::vector<double>(a->up_bias.size())});
    } else {
      const auto& lo = std::get<LoraLayer>(layer);
      auto zero = [](const LoraParams& p) {
        return LoraParams{Matrix(p.a_weight.rows(), p.a_weight.cols()),
                          Matrix(p.b_weight.rows(), p.b_weight.cols()), p.scaling};
      };
      zeros.layers.emplace_back(LoraLayer{zero(lo.query), zero(lo.value)});
    }
  }
  zeros.head = TaskHead{Matrix(state.head.weight.rows(), state.head.weight.cols()),
                        std::vector<double>(state.head.bias.size())};
  return zeros;
}

// Backprop through one LoRA factor pair: y += s * (h A^T) B^T.
void LoraBackward(const LoraParams& p, const Matrix& h, const Matrix& zh, const Matrix& dy,
                  LoraParams& grad, Matrix& dh) {
  const Matrix dy_scaled = Scale(dy, p.scaling);
  AddInPlace(grad.b_weight, MatmulTransposedA(dy_scaled, zh));
  const Matrix dz = Matmul(dy_scaled, p.b_weight);
  AddInPlace(grad.a_weight, MatmulTransposedA(dz, h));
  AddInPlace(dh, Matmul(dz, p.a_weight));
}

void Axpy(PeftState& state, const PeftState& grad, double alpha) {
  auto update = [alpha](std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
  };
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    if (auto* a = std::get_if<AdapterParams>(&state.layers[l])) {
      const auto& g = std::get<AdapterParams>(grad.layers[l]);
      update(a->down_weight.values(), g.down_weight.values());
      update(a->down_bias, g.down_bias);
      update(a->up_weight.values(), g.up_weight.values());
      update(a->up_bias, g.up_bias);
    } else {
      auto& lo = std::get<LoraLayer>(state.layers[l]);
      const auto& g = std::get<LoraLayer>(grad.layers[l]);
      update(lo.query.a_weight.values(), g.query.a_weight.values());
      update(lo.query.b_weight.values(), g.query.b_weight.values());
      update(lo.value.a_weight.values(), g.value.a_weight.values());
      update(lo.value.b_weight.values(), g.value.b_weight.values());
    }
  }
  update(state.head.weight.values(), grad.head.weight.values());
  update(state.head.bias, grad.head.bias);
}

Matrix GatherExamples(const Matrix& x, std::span<const std::size_t> examples,
                      std::size_t seq_len) {
  Matrix out(examples.size() * seq_len, x.cols());
  for (std::size_t b = 0; b < examples.size(); ++b) {
    for (std::size_t i = 0; i < seq_len; ++i) {
      const auto src = x.row(examples[b] * seq_len + i);
      std::copy(src.begin(), src.end(), out.row(b * seq_len + i).begin());
    }
  }
  return out;
}

void ShuffleInPlace(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

ToyModel ToyModel::Random(std::size_t depth, std::size_t d_in, std::size_t d_model,
                          bool attention, std::uint64_t seed) {
  if (depth == 0 || d_in == 0 || d_model == 0) {
    throw ConfigError("toy model depth and widths must be positive");
  }
  std::mt19937_64 rng(seed);
  ToyModel m;
  m.d_in = d_in;
  m.d_model = d_model;
  m.seed = seed;
  m.input_proj = RandomNormal(d_in, d_model, 1.0 / std::sqrt(double(d_in)), rng);
  const double block_std = 1.0 / std::sqrt(double(d_model));
  for (std::size_t l = 0; l < depth; ++l) {
    ToyBlock block{RandomNormal(d_model, d_model, block_std, rng),
                   RandomVector(d_model, 0.1, rng), std::nullopt};
    if (attention) {
      block.attention = AttentionWeights{RandomNormal(d_model, d_model, block_std, rng),
                                         RandomNormal(d_model, d_model, block_std, rng),
                                         RandomNormal(d_model, d_model, block_std, rng)};
    }
    m.blocks.push_back(std::move(block));
  }
  return m;
}

bool BitEqual(const ToyModel& a, const ToyModel& b) {
  if (a.d_in != b.d_in || a.d_model != b.d_model || a.depth() != b.depth() ||
      !BitEqual(a.input_proj, b.input_proj)) {
    return false;
  }
  for (std::size_t l = 0; l < a.depth(); ++l) {
    const auto& x = a.blocks[l];
    const auto& y = b.blocks[l];
    if (!BitEqual(x.weight, y.weight) || !BitEqual(x.bias, y.bias)) return false;
    if (x.attention.has_value() != y.attention.has_value()) return false;
    if (x.attention && (!BitEqual(x.attention->query, y.attention->query) ||
                        !BitEqual(x.attention->key, y.attention->key) ||
                        !BitEqual(x.attention->value, y.attention->value))) {
      return false;
    }
  }
  return true;
}

TensorContainer ModelToContainer(const ToyModel& model) {
  TensorContainer c;
  c.SetMeta("model", "toy");
  c.SetMeta("d_in", std::to_string(model.d_in));
  c.SetMeta("d_model", std::to_string(model.d_model));
  c.SetMeta("depth", std::to_string(model.depth()));
  c.SetMeta("attention", model.has_attention() ? "true" : "false");
  c.SetMeta("seed", std::to_string(model.seed));
  c.AddMatrix("input_proj", model.input_proj, DType::kF64);
  for (std::size_t l = 0; l < model.depth(); ++l) {
    const std::string p = "block_" + std::to_string(l) + "/";
    const ToyBlock& b = model.blocks[l];
    c.AddMatrix(p + "weight", b.weight, DType::kF64);
    c.AddVector(p + "bias", b.bias, DType::kF64);
    if (b.attention) {
      c.AddMatrix(p + "attn/query", b.attention->query, DType::kF64);
      c.AddMatrix(p + "attn/key", b.attention->key, DType::kF64);
      c.AddMatrix(p + "attn/value", b.attention->value, DType::kF64);
    }
  }
  return c;
}

ToyModel ModelFromContainer(const TensorContainer& c) {
  if (!c.HasMeta("model") || c.GetMeta("model") != "toy") {
    throw FormatError("container does not hold a toy model");
  }
  ToyModel m;
  m.input_proj = c.GetMatrix("input_proj");
  m.d_in = m.input_proj.rows();
  m.d_model = m.input_proj.cols();
  m.seed = std::stoull(c.GetMeta("seed"));
  const std::size_t depth = std::stoul(c.GetMeta("depth"));
  const bool attention = c.GetMeta("attention") == "true";
  for (std::size_t l = 0; l < depth; ++l) {
    const std::string p = "block_" + std::to_string(l) + "/";
    ToyBlock b{c.GetMatrix(p + "weight"), c.GetVector(p + "bias"), std::nullopt};
    if (attention) {
      b.attention = AttentionWeights{c.GetMatrix(p + "attn/query"), c.GetMatrix(p + "attn/key"),
                                     c.GetMatrix(p + "attn/value")};
    }
    if (b.weight.rows() != m.d_model || b.weight.cols() != m.d_model ||
        b.bias.size() != m.d_model) {
      throw ShapeError("block " + std::to_string(l) + " does not match d_model");
    }
    m.blocks.push_back(std::move(b));
  }
  if (m.blocks.empty()) throw FormatError("toy model has no blocks");
  return m;
}

std::string ToString(PairMode mode) {
  return mode == PairMode::kMatching ? "matching" : "incompatible";
}

PairMode ParsePairMode(const std::string& text) {
  if (text == "matching") return PairMode::kMatching;
  if (text == "incompatible") return PairMode::kIncompatible;
  throw ConfigError("unknown pair mode '" + text + "' (expected matching or incompatible)");
}

ToyPair BuildPair(const PairConfig& config) {
  if (config.student_depth == 0 || config.teacher_depth % config.student_depth != 0) {
    throw ConfigError("teacher depth " + std::to_string(config.teacher_depth) +
                      " is not divisible by student depth " +
                      std::to_string(config.student_depth));
  }
  if (config.student_dim > config.teacher_dim) {
    throw WideningError("student dim " + std::to_string(config.student_dim) +
                        " exceeds teacher dim " + std::to_string(config.teacher_dim));
  }
  ToyPair pair{ToyModel::Random(config.teacher_depth, config.d_in, config.teacher_dim,
                                config.attention, config.seed),
               ToyModel{}};
  if (config.mode == PairMode::kMatching) {
    if (config.student_dim != config.teacher_dim) {
      throw ConfigError("matching pairs share hidden size; got " +
                        std::to_string(config.teacher_dim) + " vs " +
                        std::to_string(config.student_dim));
    }
    const std::size_t stride = config.teacher_depth / config.student_depth;
    const std::size_t offset = config.copy_offset.value_or(stride - 1);
    if (offset >= stride) throw ConfigError("copy offset must be smaller than the stride");
    ToyModel& s = pair.student;
    s.d_in = pair.teacher.d_in;
    s.d_model = pair.teacher.d_model;
    s.seed = pair.teacher.seed;
    s.input_proj = pair.teacher.input_proj;
    for (std::size_t l = 0; l < config.student_depth; ++l) {
      s.blocks.push_back(pair.teacher.blocks[l * stride + offset]);
    }
  } else {
    // Independent draw; the constant only separates the two RNG streams.
    pair.student = ToyModel::Random(config.student_depth, config.d_in, config.student_dim,
                                    config.attention, config.seed ^ 0x5bd1e9955bd1e995ULL);
  }
  return pair;
}

ToyTask ToyTask::Generate(const TaskConfig& config) {
  if (config.d_in == 0 || config.seq_len == 0 || config.n_classes < 2 ||
      config.n_train == 0 || config.n_val == 0) {
    throw ConfigError("task needs positive sizes and at least 2 classes");
  }
  std::mt19937_64 rng(config.seed);
  const std::size_t n = config.n_train + config.n_val;
  const Matrix x = RandomNormal(n * config.seq_len, config.d_in, 1.0, rng);

  // Token-mean of each example, then the fixed scoring network.
  Matrix pooled = MeanPool(x, config.seq_len);
  std::vector<double> score(n);
  if (config.ground_truth == GroundTruth::kLinear) {
    const Matrix w = RandomNormal(config.d_in, 1, 1.0, rng);
    const Matrix s = Matmul(pooled, w);
    for (std::size_t e = 0; e < n; ++e) score[e] = s(e, 0);
  } else {
    constexpr std::size_t kHidden = 16;
    const Matrix w1 = RandomNormal(config.d_in, kHidden, 2.0 / std::sqrt(double(config.d_in)), rng);
    const Matrix w2 = RandomNormal(kHidden, 1, 1.0, rng);
    Matrix hidden = Matmul(pooled, w1);
    for (double& v : hidden.values()) v = std::tanh(v);
    const Matrix s = Matmul(hidden, w2);
    for (std::size_t e = 0; e < n; ++e) score[e] = s(e, 0);
  }

  // Quantile buckets over the whole draw.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  std::vector<int> labels(n);
  for (std::size_t rank = 0; rank < n; ++rank) {
    labels[order[rank]] = static_cast<int>(rank * config.n_classes / n);
  }

  ToyTask task;
  task.config = config;
  std::vector<std::size_t> train_idx(config.n_train), val_idx(config.n_val);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(val_idx.begin(), val_idx.end(), config.n_train);
  task.train_x = GatherExamples(x, train_idx, config.seq_len);
  task.val_x = GatherExamples(x, val_idx, config.seq_len);
  task.train_y.assign(labels.begin(), labels.begin() + config.n_train);
  task.val_y.assign(labels.begin() + config.n_train, labels.end());
  return task;
}

PeftState PeftState::Fresh(const ToyModel& model, PeftKind kind, std::size_t width,
                           double lora_scaling, std::size_t n_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PeftModuleSet set =
      kind == PeftKind::kAdapter
          ? PeftModuleSet::FreshAdapters(model.depth(), model.d_model, width, rng)
          : PeftModuleSet::FreshLora(model.depth(), model.d_model, width, lora_scaling, rng);
  TaskHead head{RandomNormal(model.d_model, n_classes, 0.02, rng),
                std::vector<double>(n_classes, 0.0)};
  return From(set, std::move(head));
}

PeftState PeftState::From(const PeftModuleSet& modules, TaskHead head) {
  return PeftState{modules.layers(), std::move(head)};
}

bool BitEqual(const PeftState& a, const PeftState& b) {
  return a.layers.size() == b.layers.size() && BitEqual(a.modules(), b.modules()) &&
         BitEqual(a.head.weight, b.head.weight) && BitEqual(a.head.bias, b.head.bias);
}

double Loss(const ToyModel& model, const PeftState& state, const Matrix& x,
            std::span<const int> labels, std::size_t seq_len) {
  CheckCompatible(model, &state, x, seq_len);
  CheckLabels(x, labels, seq_len);
  const ForwardResult fwd = Forward(model, &state, x, seq_len);
  Matrix logits = Logits(state.head, MeanPool(fwd.hidden, seq_len));
  return SoftmaxCrossEntropy(logits, labels) / static_cast<double>(labels.size());
}

double LossAndGradient(const ToyModel& model, const PeftState& state, const Matrix& x,
                       std::span<const int> labels, std::size_t seq_len, PeftState& grad) {
  CheckCompatible(model, &state, x, seq_len);
  CheckLabels(x, labels, seq_len);
  const ForwardResult fwd = Forward(model, &state, x, seq_len);
  const Matrix pooled = MeanPool(fwd.hidden, seq_len);
  Matrix probs = Logits(state.head, pooled);
  const double batch = static_cast<double>(labels.size());
  const double loss = SoftmaxCrossEntropy(probs, labels) / batch;

  grad = ZerosLike(state);

  // d loss / d logits = (softmax - onehot) / batch.
  Matrix dlogits = probs;
  for (std::size_t e = 0; e < dlogits.rows(); ++e) {
    dlogits(e, static_cast<std::size_t>(labels[e])) -= 1.0;
  }
  for (double& v : dlogits.values()) v /= batch;

  grad.head.weight = MatmulTransposedA(pooled, dlogits);
  AccumulateColumnSums(dlogits, grad.head.bias);
  const Matrix dpooled = MatmulTransposedB(dlogits, state.head.weight);

  Matrix dh(fwd.hidden.rows(), fwd.hidden.cols());
  const double inv_len = 1.0 / static_cast<double>(seq_len);
  for (std::size_t r = 0; r < dh.rows(); ++r) {
    const auto src = dpooled.row(r / seq_len);
    auto dst = dh.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = src[c] * inv_len;
  }

  const std::size_t d = model.d_model;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t li = model.depth(); li-- > 0;) {
    const ToyBlock& block = model.blocks[li];
    const LayerCache& cache = fwd.layers[li];
    const PeftLayer& peft = state.layers[li];

    // Adapter: h' = u + relu(z) U^T + ub, z = u D^T + db.
    Matrix du = dh;
    if (const auto* adapter = std::get_if<AdapterParams>(&peft)) {
      auto& g = std::get<AdapterParams>(grad.layers[li]);
      Matrix r = *cache.z;
      for (double& v : r.values()) v = v > 0.0 ? v : 0.0;
      g.up_weight = MatmulTransposedA(dh, r);
      AccumulateColumnSums(dh, g.up_bias);
      Matrix dz = Matmul(dh, adapter->up_weight);
      const auto zv = cache.z->values();
      auto dzv = dz.values();
      for (std::size_t i = 0; i < dzv.size(); ++i) dzv[i] = zv[i] > 0.0 ? dzv[i] : 0.0;
      g.down_weight = MatmulTransposedA(dz, cache.u);
      AccumulateColumnSums(dz, g.down_bias);
      AddInPlace(du, Matmul(dz, adapter->down_weight));
    }

    // Block: u = a + tanh(a W^T + b).
    Matrix dc = du;
    {
      auto dcv = dc.values();
      const auto tv = cache.t.values();
      for (std::size_t i = 0; i < dcv.size(); ++i) dcv[i] *= 1.0 - tv[i] * tv[i];
    }
    Matrix da = du;
    AddInPlace(da, Matmul(dc, block.weight));

    if (!block.attention) {
      dh = std::move(da);
      continue;
    }

    // Attention: a = h + P V per example, P = softmax(Q K^T / sqrt(d)).
    const Matrix& q = *cache.q;
    const Matrix& k = *cache.k;
    const Matrix& v = *cache.v;
    const Matrix& p = *cache.probs;
    Matrix dq(q.rows(), d), dk(q.rows(), d), dv(q.rows(), d);
    std::vector<double> dp(seq_len);
    const std::size_t examples = q.rows() / seq_len;
    for (std::size_t e = 0; e < examples; ++e) {
      const std::size_t base = e * seq_len;
      for (std::size_t i = 0; i < seq_len; ++i) {
        const auto dai = da.row(base + i);
        const auto pi = p.row(base + i);
        double weighted = 0.0;
        for (std::size_t j = 0; j < seq_len; ++j) {
          const auto vj = v.row(base + j);
          double s = 0.0;
          for (std::size_t c = 0; c < d; ++c) s += dai[c] * vj[c];
          dp[j] = s;
          weighted += s * pi[j];
          auto dvj = dv.row(base + j);
          for (std::size_t c = 0; c < d; ++c) dvj[c] += pi[j] * dai[c];
        }
        auto dqi = dq.row(base + i);
        for (std::size_t j = 0; j < seq_len; ++j) {
          const double ds = pi[j] * (dp[j] - weighted) * inv_sqrt_d;
          const auto kj = k.row(base + j);
          const auto qi = q.row(base + i);
          auto dkj = dk.row(base + j);
          for (std::size_t c = 0; c < d; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
    Matrix dh_prev = std::move(da);
    AddInPlace(dh_prev, Matmul(dq, block.attention->query));
    AddInPlace(dh_prev, Matmul(dk, block.attention->key));
    AddInPlace(dh_prev, Matmul(dv, block.attention->value));
    if (const auto* lora = std::get_if<LoraLayer>(&peft)) {
      auto& g = std::get<LoraLayer>(grad.layers[li]);
      LoraBackward(lora->query, cache.h_in, *cache.zq, dq, g.query, dh_prev);
      LoraBackward(lora->value, cache.h_in, *cache.zv, dv, g.value, dh_prev);
    }
    dh = std::move(dh_prev);
  }
  return loss;
}

std::vector<int> Predict(const ToyModel& model, const PeftState& state, const Matrix& x,
                         std::size_t seq_len) {
  CheckCompatible(model, &state, x, seq_len);
  const ForwardResult fwd = Forward(model, &state, x, seq_len);
  const Matrix logits = Logits(state.head, MeanPool(fwd.hidden, seq_len));
  std::vector<int> out(logits.rows());
  for (std::size_t e = 0; e < logits.rows(); ++e) {
    const auto row = logits.row(e);
    out[e] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double Accuracy(const ToyModel& model, const PeftState& state, const Matrix& x,
                std::span<const int> labels, std::size_t seq_len) {
  CheckLabels(x, labels, seq_len);
  const auto predicted = Predict(model, state, x, seq_len);
  std::size_t correct = 0;
  for (std::size_t e = 0; e < labels.size(); ++e) correct += predicted[e] == labels[e] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

TrainingLog TrainPeft(const ToyModel& model, PeftState& state, const ToyTask& task,
                      const TrainOptions& options) {
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!std::isfinite(options.learning_rate)) throw ConfigError("learning rate must be finite");
  const std::size_t seq_len = task.config.seq_len;
  CheckCompatible(model, &state, task.train_x, seq_len);

  TrainingLog log;
  log.initial_loss = Loss(model, state, task.train_x, task.train_y, seq_len);
  log.initial_val_accuracy = Accuracy(model, state, task.val_x, task.val_y, seq_len);

  const std::size_t n = task.train_y.size();
  std::vector<std::size_t> order(n);
  PeftState grad;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(options.order_seed + 0x9e3779b97f4a7c15ULL * (epoch + 1));
    ShuffleInPlace(order, rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t end = std::min(n, start + options.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = GatherExamples(task.train_x, idx, seq_len);
      std::vector<int> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = task.train_y[idx[i]];
      loss_sum += LossAndGradient(model, state, xb, yb, seq_len, grad);
      if (options.learning_rate != 0.0) Axpy(state, grad, -options.learning_rate);
      ++batches;
    }
    log.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    log.val_accuracy.push_back(Accuracy(model, state, task.val_x, task.val_y, seq_len));
  }
  return log;
}

CapturePoint CapturePointFor(PeftKind kind) {
  return kind == PeftKind::kAdapter ? CapturePoint::kAdapterInput
                                    : CapturePoint::kAttentionInput;
}

std::vector<Matrix> HiddenStates(const ToyModel& model, const PeftState* state,
                                 const Matrix& x, std::size_t seq_len, CapturePoint point) {
  CheckCompatible(model, state, x, seq_len);
  if (point == CapturePoint::kAttentionInput && !model.has_attention()) {
    throw ConfigError("attention-input capture needs an attention model");
  }
  ForwardResult fwd = Forward(model, state, x, seq_len);
  std::vector<Matrix> out;
  out.reserve(model.depth());
  for (auto& cache : fwd.layers) {
    out.push_back(point == CapturePoint::kAdapterInput ? std::move(cache.u)
                                                       : std::move(cache.h_in));
  }
  return out;
}

SampleBatch CaptureSamples(const ToyModel& teacher, const PeftState* teacher_state,
                           const ToyModel& student, const PeftState* student_state,
                           const LayerMapPlan& plan, const Matrix& inputs,
                           std::size_t seq_len, std::size_t n, CapturePoint point) {
  if (n < 2) throw InsufficientSamplesError("capture needs at least 2 samples");
  if (seq_len == 0) throw ConfigError("seq_len must be positive");
  if (n > inputs.rows()) {
    throw ShapeError("asked for " + std::to_string(n) + " samples from " +
                     std::to_string(inputs.rows()) + " token rows");
  }
  if (plan.student_layers() != student.depth()) {
    throw ShapeError("plan covers " + std::to_string(plan.student_layers()) +
                     " student layers, student has " + std::to_string(student.depth()));
  }
  if (teacher.d_in != student.d_in) throw ShapeError("teacher and student input sizes differ");

  // Whole examples so attention sees full sequences, then trim to n tokens.
  const std::size_t examples = (n + seq_len - 1) / seq_len;
  std::vector<std::size_t> idx(examples);
  std::iota(idx.begin(), idx.end(), 0);
  const Matrix x = GatherExamples(inputs, idx, seq_len);
  const auto teacher_hidden = HiddenStates(teacher, teacher_state, x, seq_len, point);
  const auto student_hidden = HiddenStates(student, student_state, x, seq_len, point);

  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  SampleBatch batch;
  batch.plan = plan;
  for (std::size_t l = 0; l < plan.student_layers(); ++l) {
    const std::size_t t = plan.representative(l);
    if (t >= teacher.depth()) {
      throw ShapeError("plan references teacher layer " + std::to_string(t) +
                       " of a " + std::to_string(teacher.depth()) + "-layer teacher");
    }
    batch.per_layer.push_back(LayerSamples{GatherRows(student_hidden[l], rows),
                                           GatherRows(teacher_hidden[t], rows)});
  }
  batch.Validate();
  return batch;
}

}  // namespace moduleport::toy
