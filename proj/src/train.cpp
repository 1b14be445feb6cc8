#include "musanet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "musanet/errors.hpp"
#include "musanet/metrics.hpp"

namespace musanet {

using nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  optimizer().validate();
}

void to_json(ordered_json& j, const TrainConfig& c) {
  j = ordered_json{{"batch_size", c.batch_size},
                   {"epochs", c.epochs},
                   {"learning_rate", c.learning_rate},
                   {"decay", c.decay},
                   {"epsilon", c.epsilon},
                   {"seed", c.seed},
                   {"task", task_name(c.task)},
                   {"split", {c.split.train, c.split.valid, c.split.test}},
                   {"min_count", c.min_count}};
}

void from_json(const ordered_json& j, TrainConfig& c) {
  j.at("batch_size").get_to(c.batch_size);
  j.at("epochs").get_to(c.epochs);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("decay").get_to(c.decay);
  j.at("epsilon").get_to(c.epsilon);
  j.at("seed").get_to(c.seed);
  c.task = parse_task(j.at("task").get<std::string>());
  const auto& split = j.at("split");
  c.split = {split.at(0).get<double>(), split.at(1).get<double>(), split.at(2).get<double>()};
  j.at("min_count").get_to(c.min_count);
}

namespace {

std::vector<Var> flatten(const ModelVars& vars) {
  std::vector<Var> flat;
  vars.for_each([&](const std::string&, const Var& v) { flat.push_back(v); });
  return flat;
}

std::optional<double> selection_metric(const Predictions& pred, std::span<const Example> examples,
                                       Task task) {
  if (task == Task::kReadmission) {
    std::vector<int> labels;
    for (const Example& e : examples) labels.push_back(e.readmission);
    if (std::find(labels.begin(), labels.end(), 1) == labels.end()) return std::nullopt;
    const Tensor scores = prediction_scores(pred.logits, task);
    return pr_auc(scores.data(), labels);
  }
  std::vector<std::vector<int>> labels;
  for (const Example& e : examples) labels.push_back(e.diagnosis);
  return precision_at_k(pred.logits, labels, kSelectionK);
}

bool better(const EpochStats& candidate, const EpochStats& incumbent) {
  if (candidate.valid_metric && incumbent.valid_metric) {
    return *candidate.valid_metric > *incumbent.valid_metric;
  }
  return candidate.valid_loss < incumbent.valid_loss;
}

}  // namespace

TrainResult train(std::span<const Example> train_set, std::span<const Example> valid_set,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const EpochCallback& on_epoch) {
  model_config.validate();
  train_config.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (model_config.task != train_config.task) throw ConfigError("train: model and training tasks differ");

  ModelParams params = init_params(model_config, train_config.seed);
  std::vector<Tensor*> param_list = parameter_list(params);
  OptimizerState state = make_optimizer_state(param_list);
  const RmsPropConfig optimizer = train_config.optimizer();

  std::mt19937_64 shuffle_rng(train_config.seed ^ 0x5bd1e995ULL);
  std::mt19937_64 dropout_rng(train_config.seed + 1);

  TrainResult result;
  result.params = params;
  std::optional<EpochStats> best;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= train_config.epochs && !result.diverged; ++epoch) {
    const ModelParams epoch_start = params;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
      const std::size_t end = std::min(order.size(), start + train_config.batch_size);
      std::vector<Example> chunk;
      chunk.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) chunk.push_back(train_set[order[i]]);
      const Batch batch = batch_and_pad(chunk, model_config.max_visits, model_config.max_codes);

      Tape tape;
      const ModelVars vars = bind_parameters(tape, params);
      const ForwardResult out = forward(batch, vars, model_config, Mode::kTrain, &dropout_rng);
      const Var loss = task_loss(out.logits, batch, model_config.task);
      const double loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) {
        result.diverged = true;
        std::ostringstream msg;
        msg << "non-finite training loss in epoch " << epoch << " at example offset " << start;
        result.diagnostic = msg.str();
        if (!best) result.params = epoch_start;
        break;
      }
      loss_sum += loss_value * static_cast<double>(batch.size);
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const Var& v : flatten(vars)) grads.push_back(tape.grad(v));
      rmsprop_step(param_list, grads, state, optimizer);
      zero_padding_row(params);
    }
    if (result.diverged) break;

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    if (!valid_set.empty()) {
      const Predictions pred = predict(params, model_config, valid_set);
      stats.valid_loss = pred.loss;
      stats.valid_metric = selection_metric(pred, valid_set, model_config.task);
    } else {
      stats.valid_loss = stats.train_loss;
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (!best || valid_set.empty() || better(stats, *best)) {
      best = stats;
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

Predictions predict(const ModelParams& params, const ModelConfig& config,
                    std::span<const Example> examples, std::size_t batch_size) {
  if (examples.empty()) throw ContractError("predict: no examples");
  Predictions out;
  out.logits = Tensor({examples.size(), config.num_classes});
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    const Batch batch = batch_and_pad(examples.subspan(start, end - start), config.max_visits,
                                      config.max_codes);
    Tape tape;
    const ModelVars vars = bind_constants(tape, params);
    const ForwardResult fwd = forward(batch, vars, config, Mode::kEval);
    loss_sum += task_loss(fwd.logits, batch, config.task).value().item() *
                static_cast<double>(batch.size);
    const Tensor& logits = fwd.logits.value();
    std::copy(logits.data().begin(), logits.data().end(),
              out.logits.data().begin() + static_cast<std::ptrdiff_t>(start * config.num_classes));
  }
  out.loss = loss_sum / static_cast<double>(examples.size());
  return out;
}

MetricsReport evaluate(const ModelParams& params, const ModelConfig& config,
                       std::span<const Example> examples, std::span<const std::size_t> k_list) {
  if (examples.empty()) throw ContractError("evaluate: empty example set");
  const Predictions pred = predict(params, config, examples);
  MetricsReport report;
  report.task = config.task;
  report.examples = examples.size();
  report.loss = pred.loss;
  if (config.task == Task::kReadmission) {
    std::vector<int> labels;
    for (const Example& e : examples) labels.push_back(e.readmission);
    const auto positives = std::count(labels.begin(), labels.end(), 1);
    report.prevalence = static_cast<double>(positives) / static_cast<double>(labels.size());
    if (positives > 0) {
      const Tensor scores = prediction_scores(pred.logits, config.task);
      report.pr_auc = pr_auc(scores.data(), labels);
    }
  } else {
    std::vector<std::vector<int>> labels;
    for (const Example& e : examples) labels.push_back(e.diagnosis);
    for (std::size_t k : k_list) {
      report.precision_at[k] = precision_at_k(pred.logits, labels, k);
      report.random_precision_at[k] = random_precision_at_k(labels, config.num_classes, k);
    }
  }
  return report;
}

ordered_json report_json(const MetricsReport& report) {
  ordered_json j;
  j["task"] = task_name(report.task);
  if (report.task == Task::kReadmission) {
    j["pr_auc"] = report.pr_auc ? ordered_json(*report.pr_auc) : ordered_json(nullptr);
    j["prevalence"] = report.prevalence;
    j["pr_auc_estimator"] = "average_precision";
  }
  ordered_json precision = ordered_json::object();
  for (const auto& [k, v] : report.precision_at) precision[std::to_string(k)] = v;
  j["precision_at"] = precision;
  if (!report.random_precision_at.empty()) {
    ordered_json baseline = ordered_json::object();
    for (const auto& [k, v] : report.random_precision_at) baseline[std::to_string(k)] = v;
    j["random_precision_at"] = baseline;
  }
  j["epochs"] = report.epochs;
  j["seed"] = report.seed;
  j["config_digest"] = report.config_digest;
  j["examples"] = report.examples;
  j["loss"] = report.loss;
  j["train_loss"] = report.train_loss;
  ordered_json valid = ordered_json::array();
  for (const auto& v : report.valid_metric) valid.push_back(v ? ordered_json(*v) : ordered_json(nullptr));
  j["valid_metric"] = valid;
  return j;
}

std::string report_text(const MetricsReport& report) {
  std::ostringstream out;
  out << "task: " << task_name(report.task) << "\n";
  out << "examples: " << report.examples << "\n";
  out << "loss: " << report.loss << "\n";
  if (report.task == Task::kReadmission) {
    out << "pr_auc (average precision): ";
    if (report.pr_auc) {
      out << *report.pr_auc;
    } else {
      out << "undefined (no positives)";
    }
    out << "\nprevalence: " << report.prevalence << "\n";
  }
  for (const auto& [k, v] : report.precision_at) {
    out << "precision@" << k << ": " << v;
    if (auto it = report.random_precision_at.find(k); it != report.random_precision_at.end()) {
      out << " (random " << it->second << ")";
    }
    out << "\n";
  }
  out << "epochs: " << report.epochs << "  seed: " << report.seed
      << "  config: " << report.config_digest << "\n";
  return out.str();
}

namespace {

ordered_json history_json(const std::vector<EpochStats>& history) {
  ordered_json out = ordered_json::array();
  for (const EpochStats& s : history) {
    out.push_back({{"epoch", s.epoch},
                   {"train_loss", s.train_loss},
                   {"valid_loss", s.valid_loss},
                   {"valid_metric", s.valid_metric ? ordered_json(*s.valid_metric) : ordered_json(nullptr)}});
  }
  return out;
}

}  // namespace

ordered_json checkpoint_json(const Checkpoint& checkpoint) {
  ordered_json j;
  j["format"] = "musanet-checkpoint";
  j["version"] = 1;
  j["model"] = checkpoint.model;
  j["train"] = checkpoint.train;
  j["best_epoch"] = checkpoint.best_epoch;
  j["history"] = history_json(checkpoint.history);
  j["vocabulary"] = std::vector<std::string>(checkpoint.vocabulary.codes().begin(),
                                             checkpoint.vocabulary.codes().end());
  ordered_json params = ordered_json::object();
  checkpoint.params.for_each([&](const std::string& name, const Tensor& t) {
    params[name] = {{"shape", t.shape()}, {"data", t.values()}};
  });
  j["params"] = std::move(params);
  return j;
}

Checkpoint checkpoint_from_json(const ordered_json& j) {
  if (j.value("format", "") != "musanet-checkpoint") throw ParseError("not a musanet checkpoint");
  Checkpoint c;
  c.model = j.at("model").get<ModelConfig>();
  c.train = j.at("train").get<TrainConfig>();
  c.best_epoch = j.at("best_epoch").get<std::size_t>();
  for (const auto& h : j.at("history")) {
    EpochStats s;
    s.epoch = h.at("epoch").get<std::size_t>();
    s.train_loss = h.at("train_loss").get<double>();
    s.valid_loss = h.at("valid_loss").get<double>();
    if (!h.at("valid_metric").is_null()) s.valid_metric = h.at("valid_metric").get<double>();
    c.history.push_back(s);
  }
  for (const auto& code : j.at("vocabulary")) c.vocabulary.add(code.get<std::string>());
  if (c.vocabulary.size() != c.model.vocab_size) {
    throw ParseError("checkpoint vocabulary size does not match its model configuration");
  }
  c.params = init_params(c.model, 0);
  const auto& params = j.at("params");
  c.params.for_each([&](const std::string& name, Tensor& t) {
    if (!params.contains(name)) throw ParseError("checkpoint is missing parameter " + name);
    const auto& entry = params.at(name);
    Tensor loaded(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>());
    if (loaded.shape() != t.shape()) {
      throw ParseError("parameter " + name + " has shape " + to_string(loaded.shape()) +
                       ", expected " + to_string(t.shape()));
    }
    t = std::move(loaded);
  });
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_json(checkpoint).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid checkpoint: ") + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid checkpoint: ") + e.what());
  }
}

std::string config_digest(const ModelConfig& model, const TrainConfig& train) {
  const std::string text = ordered_json{{"model", model}, {"train", train}}.dump();
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

SplitPart parse_split_part(const std::string& name) {
  if (name == "train") return SplitPart::kTrain;
  if (name == "valid") return SplitPart::kValid;
  if (name == "test") return SplitPart::kTest;
  if (name == "all") return SplitPart::kAll;
  throw ConfigError("unknown split '" + name + "' (expected train, valid, test or all)");
}

Checkpoint train_on_dataset(const Dataset& dataset, const CategoryMap* categories,
                            ModelConfig model_config, const TrainConfig& train_config,
                            const EpochCallback& on_epoch, std::string* diagnostic) {
  if (dataset.journeys.empty()) throw ContractError("train: empty dataset");
  model_config.task = train_config.task;
  model_config.vocab_size = dataset.vocabulary.size();
  if (train_config.task == Task::kDiagnosis) {
    if (categories == nullptr) throw ContractError("diagnosis training needs a category map");
    model_config.num_classes = categories->num_categories();
  } else {
    model_config.num_classes = 2;
  }
  const DatasetSplit split = split_dataset(dataset.journeys, train_config.split, train_config.seed);
  const auto train_examples = make_examples(split.train, train_config.task, categories, &dataset.vocabulary);
  const auto valid_examples = make_examples(split.valid, train_config.task, categories, &dataset.vocabulary);
  TrainResult result = train(train_examples, valid_examples, model_config, train_config, on_epoch);

  Checkpoint checkpoint;
  checkpoint.model = model_config;
  checkpoint.train = train_config;
  checkpoint.vocabulary = dataset.vocabulary;
  checkpoint.params = std::move(result.params);
  checkpoint.best_epoch = result.best_epoch;
  checkpoint.history = std::move(result.history);
  if (result.diverged) {
    if (diagnostic) *diagnostic = result.diagnostic;
    throw NumericError(result.diagnostic);
  }
  return checkpoint;
}

std::vector<Example> checkpoint_examples(const Checkpoint& checkpoint, const Dataset& dataset,
                                         const CategoryMap* categories, SplitPart part) {
  if (!(dataset.vocabulary == checkpoint.vocabulary)) {
    throw ContractError("dataset vocabulary differs from the checkpoint vocabulary");
  }
  const std::vector<PatientJourney>* journeys = &dataset.journeys;
  DatasetSplit split;
  if (part != SplitPart::kAll) {
    split = split_dataset(dataset.journeys, checkpoint.train.split, checkpoint.train.seed);
    journeys = part == SplitPart::kTrain ? &split.train
               : part == SplitPart::kValid ? &split.valid
                                           : &split.test;
  }
  return make_examples(*journeys, checkpoint.model.task, categories, &checkpoint.vocabulary);
}

}  // namespace musanet
