#include "musanet/model.hpp"

#include <cmath>

#include "musanet/errors.hpp"

namespace musanet {

void ModelConfig::validate() const {
  if (d == 0 || max_visits == 0 || max_codes == 0 || num_classes == 0) {
    throw ConfigError("d, max_visits, max_codes and num_classes must be positive");
  }
  if (vocab_size < 2) throw ConfigError("vocab_size must cover padding and at least one code");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (depth == 0) throw ConfigError("depth must be positive");
  if (layer_norm_eps < 0.0 || init_stddev <= 0.0) throw ConfigError("invalid numeric settings");
  if (task == Task::kReadmission && num_classes != 2) {
    throw ConfigError("readmission uses two classes");
  }
}

void to_json(nlohmann::ordered_json& j, const ModelConfig& c) {
  j = nlohmann::ordered_json{{"d", c.d},
                             {"max_visits", c.max_visits},
                             {"max_codes", c.max_codes},
                             {"vocab_size", c.vocab_size},
                             {"num_classes", c.num_classes},
                             {"dropout", c.dropout},
                             {"interval_limit", c.interval_limit},
                             {"depth", c.depth},
                             {"task", task_name(c.task)},
                             {"use_attention_pooling", c.use_attention_pooling},
                             {"use_positional_mask", c.use_positional_mask},
                             {"use_interval_encoding", c.use_interval_encoding},
                             {"layer_norm_eps", c.layer_norm_eps},
                             {"init_stddev", c.init_stddev}};
}

void from_json(const nlohmann::ordered_json& j, ModelConfig& c) {
  j.at("d").get_to(c.d);
  j.at("max_visits").get_to(c.max_visits);
  j.at("max_codes").get_to(c.max_codes);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("num_classes").get_to(c.num_classes);
  j.at("dropout").get_to(c.dropout);
  j.at("interval_limit").get_to(c.interval_limit);
  j.at("depth").get_to(c.depth);
  c.task = parse_task(j.at("task").get<std::string>());
  j.at("use_attention_pooling").get_to(c.use_attention_pooling);
  j.at("use_positional_mask").get_to(c.use_positional_mask);
  j.at("use_interval_encoding").get_to(c.use_interval_encoding);
  j.at("layer_norm_eps").get_to(c.layer_norm_eps);
  j.at("init_stddev").get_to(c.init_stddev);
}

namespace {

Tensor gaussian(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = normal(rng);
  return t;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d;
  const double sd = config.init_stddev;
  ModelParams p;
  p.embedding = gaussian({config.vocab_size, d}, rng, sd);
  p.code_pool = init_pooling(d, rng, sd);
  p.interval = gaussian({config.interval_limit + 1, d}, rng, sd);
  for (std::size_t i = 0; i < config.depth; ++i) p.forward_blocks.push_back(init_msa(d, rng, sd));
  for (std::size_t i = 0; i < config.depth; ++i) p.backward_blocks.push_back(init_msa(d, rng, sd));
  p.forward_pool = init_pooling(d, rng, sd);
  p.backward_pool = init_pooling(d, rng, sd);
  p.classifier_w = gaussian({config.num_classes, 2 * d}, rng, sd);
  p.classifier_b = Tensor::zeros({config.num_classes});
  zero_padding_row(p);
  return p;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t total = 0;
  params.for_each([&](const std::string&, const Tensor& t) { total += t.size(); });
  return total;
}

std::vector<Tensor*> parameter_list(ModelParams& params) {
  std::vector<Tensor*> out;
  params.for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<Tensor> parameter_values(const ModelParams& params) {
  std::vector<Tensor> out;
  params.for_each([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

ModelVars vars_from_list(std::span<const Var> vars, const ModelConfig& config) {
  // Shapes only matter for the count; the placeholder mirrors init_params.
  ModelWeights<int> layout;
  layout.forward_blocks.resize(config.depth);
  layout.backward_blocks.resize(config.depth);
  std::size_t next = 0;
  ModelVars out = layout.map([&](int) {
    if (next >= vars.size()) throw ContractError("vars_from_list: too few variables");
    return vars[next++];
  });
  if (next != vars.size()) throw ContractError("vars_from_list: too many variables");
  return out;
}

void zero_padding_row(ModelParams& params) {
  const std::size_t d = params.embedding.dim(1);
  for (std::size_t k = 0; k < d; ++k) params.embedding[k] = 0.0;
}

VisitEmbedding embed_visits(const Batch& batch, std::size_t b, const ModelVars& vars,
                            const ModelConfig& config, Mode mode, std::mt19937_64* rng) {
  const bool drop = mode == Mode::kTrain && config.dropout > 0.0;
  if (drop && rng == nullptr) throw ContractError("embed_visits: train mode needs an rng");
  VisitEmbedding out;
  std::vector<Var> rows;
  for (std::size_t v = 0; v < batch.max_visits; ++v) {
    if (!batch.has_visit(b, v)) continue;
    std::vector<int> codes;
    for (std::size_t c = 0; c < batch.max_codes; ++c) {
      if (!batch.has_code(b, v, c)) continue;
      const int code = batch.code(b, v, c);
      if (code <= 0 || static_cast<std::size_t>(code) >= config.vocab_size) {
        throw ContractError("embedding stage: code index " + std::to_string(code) +
                            " outside vocabulary of size " + std::to_string(config.vocab_size));
      }
      codes.push_back(code);
    }
    if (codes.empty()) {
      throw ContractError("embedding stage: visit without codes for patient " + batch.patient_ids[b]);
    }
    Var embedded = ops::gather_rows(vars.embedding, codes);
    if (drop) embedded = ops::dropout(embedded, config.dropout, *rng);
    Var visit;
    if (config.use_attention_pooling) {
      const std::vector<std::uint8_t> valid(codes.size(), 1);
      PoolOutput pooled = attention_pool(embedded, valid, vars.code_pool);
      visit = pooled.pooled;
      out.code_probabilities.push_back(pooled.probabilities);
    } else {
      visit = ops::sum(embedded, 0);
    }
    rows.push_back(ops::reshape(visit, {1, config.d}));
  }
  if (rows.empty()) throw ContractError("embedding stage: example without visits");
  out.visits = rows.size() == 1 ? rows.front() : ops::concat(rows, 0);
  return out;
}

namespace {

struct Branch {
  Var states;
  Var pooled;
  Var pool_probabilities;  // [d x r], unset for mean pooling
};

Branch run_branch(Var visits, const std::vector<MsaVars>& blocks, const PoolingVars& pool,
                  MaskDirection direction, const ModelConfig& config, bool drop,
                  std::mt19937_64* rng) {
  const std::size_t r = visits.shape()[0];
  const Tensor mask = config.use_positional_mask ? positional_mask(r, direction).matrix
                                                 : Tensor::zeros({r, r});
  const std::vector<std::uint8_t> valid(r, 1);
  Branch out;
  out.states = visits;
  for (const MsaVars& block : blocks) {
    out.states = msa_forward(out.states, mask, valid, block, config.layer_norm_eps).output;
    if (drop) out.states = ops::dropout(out.states, config.dropout, *rng);
  }
  if (config.use_attention_pooling) {
    PoolOutput pooled = attention_pool(out.states, valid, pool);
    out.pooled = pooled.pooled;
    out.pool_probabilities = pooled.probabilities;
  } else {
    out.pooled = ops::mean(out.states, 0);
  }
  return out;
}

AttentionRecord make_record(const Batch& batch, std::size_t b, const ModelConfig& config,
                            const VisitEmbedding& embedding, const Branch& fw, const Branch& bw) {
  const std::size_t m = batch.max_visits, k_max = batch.max_codes, d = config.d;
  AttentionRecord rec;
  rec.patient_id = batch.patient_ids[b];
  rec.code_probabilities = Tensor::zeros({m, d, k_max});
  rec.forward_visit_probabilities = Tensor::zeros({d, m});
  rec.backward_visit_probabilities = Tensor::zeros({d, m});
  rec.visit_importance_forward.assign(m, 0.0);
  rec.visit_importance_backward.assign(m, 0.0);
  rec.visit_importance.assign(m, 0.0);
  rec.code_importance = Tensor::zeros({m, k_max});

  std::vector<std::size_t> slots;
  for (std::size_t v = 0; v < m; ++v) {
    if (batch.has_visit(b, v)) slots.push_back(v);
  }
  rec.num_visits = slots.size();
  for (std::size_t r = 0; r < slots.size() && r < embedding.code_probabilities.size(); ++r) {
    const std::size_t v = slots[r];
    const Tensor& probs = embedding.code_probabilities[r].value();  // [d x n]
    std::size_t n = 0;
    for (std::size_t c = 0; c < k_max; ++c) {
      if (!batch.has_code(b, v, c)) continue;
      double avg = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        rec.code_probabilities.at(v, k, c) = probs.at(k, n);
        avg += probs.at(k, n);
      }
      rec.code_importance.at(v, c) = avg / static_cast<double>(d);
      ++n;
    }
  }
  auto fill_visits = [&](const Branch& branch, Tensor& dense, std::vector<double>& summary) {
    if (!branch.pool_probabilities.valid()) return;
    const Tensor& probs = branch.pool_probabilities.value();  // [d x r]
    for (std::size_t r = 0; r < slots.size(); ++r) {
      double avg = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        dense.at(k, slots[r]) = probs.at(k, r);
        avg += probs.at(k, r);
      }
      summary[slots[r]] = avg / static_cast<double>(d);
    }
  };
  fill_visits(fw, rec.forward_visit_probabilities, rec.visit_importance_forward);
  fill_visits(bw, rec.backward_visit_probabilities, rec.visit_importance_backward);
  for (std::size_t v = 0; v < m; ++v) {
    rec.visit_importance[v] = 0.5 * (rec.visit_importance_forward[v] + rec.visit_importance_backward[v]);
  }
  return rec;
}

}  // namespace

ForwardResult forward(const Batch& batch, const ModelVars& vars, const ModelConfig& config,
                      Mode mode, std::mt19937_64* rng, bool record_attention) {
  if (batch.max_visits != config.max_visits || batch.max_codes != config.max_codes) {
    throw ContractError("forward: batch grid " + std::to_string(batch.max_visits) + "x" +
                        std::to_string(batch.max_codes) + " does not match model grid " +
                        std::to_string(config.max_visits) + "x" + std::to_string(config.max_codes));
  }
  if (batch.size == 0) throw ContractError("forward: empty batch");
  if (vars.embedding.shape() != Shape{config.vocab_size, config.d}) {
    throw ContractError("forward: embedding table " + to_string(vars.embedding.shape()) +
                        " does not match the configuration");
  }
  const bool drop = mode == Mode::kTrain && config.dropout > 0.0;
  if (drop && rng == nullptr) throw ContractError("forward: train mode needs an rng");

  ForwardResult result;
  std::vector<Var> joint;
  joint.reserve(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) {
    VisitEmbedding embedding = embed_visits(batch, b, vars, config, mode, rng);
    Var visits = embedding.visits;
    if (config.use_interval_encoding) {
      std::vector<int> positions;
      for (std::size_t v = 0; v < batch.max_visits; ++v) {
        if (batch.has_visit(b, v)) positions.push_back(batch.position(b, v));
      }
      visits = ops::add(visits, interval_encode(positions, vars.interval));
    }
    Branch fw = run_branch(visits, vars.forward_blocks, vars.forward_pool, MaskDirection::kForward,
                           config, drop, rng);
    Branch bw = run_branch(visits, vars.backward_blocks, vars.backward_pool,
                           MaskDirection::kBackward, config, drop, rng);
    const Var halves[] = {fw.pooled, bw.pooled};
    joint.push_back(ops::reshape(ops::concat(halves, 0), {1, 2 * config.d}));
    result.traces.push_back({visits, fw.states, bw.states, fw.pooled, bw.pooled});
    if (record_attention) result.attention.push_back(make_record(batch, b, config, embedding, fw, bw));
  }
  Var features = joint.size() == 1 ? joint.front() : ops::concat(joint, 0);
  result.logits = ops::linear(features, vars.classifier_w, vars.classifier_b);
  return result;
}

Var task_loss(Var logits, const Batch& batch, Task task) {
  if (logits.shape().size() != 2 || logits.shape()[0] != batch.size) {
    throw DimensionError("task_loss: logits " + to_string(logits.shape()) + " for batch of " +
                         std::to_string(batch.size));
  }
  if (task == Task::kReadmission) return ops::softmax_cross_entropy(logits, batch.readmission);
  const std::size_t classes = logits.shape()[1];
  Tensor targets({batch.size, classes});
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (int c : batch.diagnosis[b]) {
      if (c < 0 || static_cast<std::size_t>(c) >= classes) {
        throw ContractError("task_loss: category " + std::to_string(c) + " outside [0, " +
                            std::to_string(classes) + ")");
      }
      targets.at(b, static_cast<std::size_t>(c)) = 1.0;
    }
  }
  return ops::sigmoid_cross_entropy(logits, targets);
}

Tensor prediction_scores(const Tensor& logits, Task task) {
  if (task == Task::kDiagnosis) return logits;
  const std::size_t batch = logits.dim(0);
  Tensor out({batch});
  for (std::size_t b = 0; b < batch; ++b) {
    // softmax probability of class 1
    out[b] = 1.0 / (1.0 + std::exp(logits.at(b, 0) - logits.at(b, 1)));
  }
  return out;
}

Tensor predict_logits(const ModelParams& params, const ModelConfig& config, const Batch& batch) {
  Tape tape;
  ModelVars vars = bind_constants(tape, params);
  return forward(batch, vars, config, Mode::kEval).logits.value();
}

GradCheckReport model_gradcheck(const TinyCheckConfig& check) {
  ModelConfig config;
  config.d = check.d;
  config.max_visits = check.visits;
  config.max_codes = check.codes;
  config.vocab_size = check.vocab_size;
  config.num_classes = 2;
  config.task = check.task;
  config.init_stddev = check.init_stddev;
  config.dropout = 0.0;
  config.validate();

  std::mt19937_64 rng(check.seed);
  std::uniform_int_distribution<int> code(1, static_cast<int>(check.vocab_size) - 1);
  std::uniform_int_distribution<int> gap(1, 60);
  std::uniform_int_distribution<std::size_t> length(1, check.visits);
  std::vector<Example> examples(check.patients);
  for (std::size_t p = 0; p < examples.size(); ++p) {
    Example& e = examples[p];
    e.input.patient_id = "p" + std::to_string(p);
    // The first patient fills the grid; the others leave padding.
    const std::size_t n = p == 0 ? check.visits : length(rng);
    int day = 0;
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<int> codes;
      const std::size_t k = p == 0 ? check.codes : 1 + rng() % check.codes;
      for (std::size_t c = 0; c < k; ++c) codes.push_back(code(rng));
      e.input.visits.push_back(make_visit(std::move(codes), day));
      day += gap(rng);
    }
    e.readmission = static_cast<int>(p % 2);
    e.diagnosis = {static_cast<int>(p % 2)};
    e.total_visits = n + 1;
  }
  const Batch batch = batch_and_pad(examples, check.visits, check.codes);

  const ScalarFunction loss = [&](Tape&, std::span<const Var> vars) {
    const ModelVars bound = vars_from_list(vars, config);
    const ForwardResult out = forward(batch, bound, config, Mode::kEval);
    return task_loss(out.logits, batch, config.task);
  };
  return finite_diff_check(loss, parameter_values(init_params(config, check.seed)), check.h);
}

}  // namespace musanet
