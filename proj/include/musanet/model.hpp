#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "musanet/attention.hpp"
#include "musanet/autograd.hpp"
#include "musanet/batch.hpp"
#include "musanet/gradcheck.hpp"

namespace musanet {

struct ModelConfig {
  std::size_t d = 128;
  std::size_t max_visits = 16;
  std::size_t max_codes = 32;
  std::size_t vocab_size = 0;  // including the padding slot
  std::size_t num_classes = 2;
  double dropout = 0.1;
  std::size_t interval_limit = 1000;  // largest encodable day offset
  std::size_t depth = 1;              // mSA blocks per direction
  Task task = Task::kReadmission;
  bool use_attention_pooling = true;
  bool use_positional_mask = true;
  bool use_interval_encoding = true;
  double layer_norm_eps = 1e-5;
  double init_stddev = 0.02;

  void validate() const;
};

void to_json(nlohmann::ordered_json& j, const ModelConfig& c);
void from_json(const nlohmann::ordered_json& j, ModelConfig& c);

template <typename T>
struct ModelWeights {
  T embedding;  // [vocab_size x d], row 0 is padding
  PoolingWeights<T> code_pool;
  T interval;  // [(interval_limit + 1) x d]
  std::vector<MsaWeights<T>> forward_blocks;
  std::vector<MsaWeights<T>> backward_blocks;
  PoolingWeights<T> forward_pool;
  PoolingWeights<T> backward_pool;
  T classifier_w;  // [num_classes x 2d]
  T classifier_b;  // [num_classes]

  template <typename F>
  auto map(F&& f) const {
    using U = decltype(f(embedding));
    ModelWeights<U> out;
    out.embedding = f(embedding);
    out.code_pool = code_pool.map(f);
    out.interval = f(interval);
    for (const auto& block : forward_blocks) out.forward_blocks.push_back(block.map(f));
    for (const auto& block : backward_blocks) out.backward_blocks.push_back(block.map(f));
    out.forward_pool = forward_pool.map(f);
    out.backward_pool = backward_pool.map(f);
    out.classifier_w = f(classifier_w);
    out.classifier_b = f(classifier_b);
    return out;
  }

  // Visits (name, tensor) in the canonical parameter order.
  template <typename F>
  void for_each(F&& f) const {
    for_each_impl(*this, f);
  }
  template <typename F>
  void for_each(F&& f) {
    for_each_impl(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void for_each_impl(Self& self, F& f) {
    f(std::string("embedding"), self.embedding);
    self.code_pool.for_each([&](const char* n, auto& t) { f("code_pool." + std::string(n), t); });
    f(std::string("interval"), self.interval);
    for (std::size_t i = 0; i < self.forward_blocks.size(); ++i) {
      self.forward_blocks[i].for_each([&](const char* n, auto& t) {
        f("forward_blocks." + std::to_string(i) + "." + n, t);
      });
    }
    for (std::size_t i = 0; i < self.backward_blocks.size(); ++i) {
      self.backward_blocks[i].for_each([&](const char* n, auto& t) {
        f("backward_blocks." + std::to_string(i) + "." + n, t);
      });
    }
    self.forward_pool.for_each([&](const char* n, auto& t) { f("forward_pool." + std::string(n), t); });
    self.backward_pool.for_each([&](const char* n, auto& t) { f("backward_pool." + std::string(n), t); });
    f(std::string("classifier_w"), self.classifier_w);
    f(std::string("classifier_b"), self.classifier_b);
  }
};

using ModelParams = ModelWeights<Tensor>;
using ModelVars = ModelWeights<Var>;

// Deterministic per seed: weights ~ N(0, init_stddev^2), biases 0,
// layer-norm gain 1, padding embedding row 0.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

std::size_t parameter_count(const ModelParams& params);

// Parameters in canonical order, and the inverse mapping.
std::vector<Tensor*> parameter_list(ModelParams& params);
std::vector<Tensor> parameter_values(const ModelParams& params);
ModelVars vars_from_list(std::span<const Var> vars, const ModelConfig& config);

void zero_padding_row(ModelParams& params);

enum class Mode { kTrain, kEval };

// Attention probabilities of one example laid out on the padded grid.
// Padding positions are 0.
struct AttentionRecord {
  std::string patient_id;
  std::size_t num_visits = 0;
  Tensor code_probabilities;            // [m x d x k_max]
  Tensor forward_visit_probabilities;   // [d x m]
  Tensor backward_visit_probabilities;  // [d x m]
  // Feature-averaged summaries.
  std::vector<double> visit_importance_forward;   // [m]
  std::vector<double> visit_importance_backward;  // [m]
  std::vector<double> visit_importance;           // [m], mean of both branches
  Tensor code_importance;                         // [m x k_max]
};

// Handles to intermediate values of one example, over its real visits only.
struct ExampleTrace {
  Var visits;           // [r x d] visit embeddings after interval encoding
  Var forward_states;   // [r x d] forward-branch mSA output
  Var backward_states;  // [r x d]
  Var forward_pooled;   // [d]
  Var backward_pooled;  // [d]
};

struct ForwardResult {
  Var logits;  // [B x C]
  std::vector<ExampleTrace> traces;
  std::vector<AttentionRecord> attention;  // filled when requested
};

// Visit embeddings [r x d] of example `b`'s real visits. Attention pooling
// over code embeddings, or their plain sum when pooling is disabled.
struct VisitEmbedding {
  Var visits;
  std::vector<Var> code_probabilities;  // per visit [d x k], empty for the sum path
};
VisitEmbedding embed_visits(const Batch& batch, std::size_t b, const ModelVars& vars,
                            const ModelConfig& config, Mode mode, std::mt19937_64* rng);

// `rng` drives dropout and is required in train mode when dropout > 0.
ForwardResult forward(const Batch& batch, const ModelVars& vars, const ModelConfig& config,
                      Mode mode, std::mt19937_64* rng = nullptr, bool record_attention = false);

// Mean task loss: softmax cross-entropy (readmission) or per-class sigmoid
// cross-entropy over multi-hot category targets (diagnosis).
Var task_loss(Var logits, const Batch& batch, Task task);

// Ranking scores per example: P(readmission) as [B], or per-category
// logits as [B x C].
Tensor prediction_scores(const Tensor& logits, Task task);

// Eval-mode logits without recording gradients.
Tensor predict_logits(const ModelParams& params, const ModelConfig& config, const Batch& batch);

// End-to-end finite-difference check of the task loss on a tiny random model
// and batch. The larger init_stddev keeps activations away from the flat
// regions of tanh, where central differences lose precision.
struct TinyCheckConfig {
  std::size_t d = 4;
  std::size_t visits = 3;  // max_visits
  std::size_t codes = 2;   // max_codes
  std::size_t vocab_size = 7;
  std::size_t patients = 3;
  Task task = Task::kReadmission;
  std::uint64_t seed = 1;
  double init_stddev = 0.3;
  double h = 1e-5;
};
GradCheckReport model_gradcheck(const TinyCheckConfig& config);

}  // namespace musanet
