#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "musanet/batch.hpp"
#include "musanet/ehr_data.hpp"
#include "musanet/model.hpp"
#include "musanet/optimizer.hpp"

namespace musanet {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  double decay = 0.9;
  double epsilon = 1e-7;
  std::uint64_t seed = 1;
  Task task = Task::kReadmission;
  SplitRatios split;
  std::size_t min_count = 5;

  void validate() const;
  RmsPropConfig optimizer() const { return {learning_rate, decay, epsilon}; }
};

void to_json(nlohmann::ordered_json& j, const TrainConfig& c);
void from_json(const nlohmann::ordered_json& j, TrainConfig& c);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_loss = 0.0;
  // PR-AUC or precision@20; unset when undefined (no validation positives).
  std::optional<double> valid_metric;
};

struct TrainResult {
  ModelParams params;  // best epoch
  std::size_t best_epoch = 0;
  std::vector<EpochStats> history;
  bool diverged = false;
  std::string diagnostic;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Task metric used for model selection.
inline constexpr std::size_t kSelectionK = 20;

// Seeded RMSprop training; after every epoch the validation set is scored and
// the parameters of the best epoch are kept (highest metric, or lowest
// validation loss when the metric is undefined). A non-finite training loss
// stops training and returns the best finite parameters with a diagnostic.
TrainResult train(std::span<const Example> train_set, std::span<const Example> valid_set,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const EpochCallback& on_epoch = nullptr);

// Scores examples in eval mode, in batches, in input order.
struct Predictions {
  Tensor logits;  // [N x C]
  double loss = 0.0;
};
Predictions predict(const ModelParams& params, const ModelConfig& config,
                    std::span<const Example> examples, std::size_t batch_size = 256);

struct MetricsReport {
  Task task = Task::kReadmission;
  std::size_t examples = 0;
  double loss = 0.0;
  std::optional<double> pr_auc;
  double prevalence = 0.0;  // readmission only
  std::map<std::size_t, double> precision_at;
  std::map<std::size_t, double> random_precision_at;  // diagnosis baseline
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<double> train_loss;
  std::vector<std::optional<double>> valid_metric;
};

// Throws ContractError on an empty example set.
MetricsReport evaluate(const ModelParams& params, const ModelConfig& config,
                       std::span<const Example> examples, std::span<const std::size_t> k_list);

nlohmann::ordered_json report_json(const MetricsReport& report);
std::string report_text(const MetricsReport& report);

// Everything needed to reproduce predictions: configs, vocabulary, weights
// and the training history.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  Vocabulary vocabulary;
  ModelParams params;
  std::size_t best_epoch = 0;
  std::vector<EpochStats> history;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
nlohmann::ordered_json checkpoint_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const nlohmann::ordered_json& j);

// FNV-1a digest of the model and training configuration, as 16 hex digits.
std::string config_digest(const ModelConfig& model, const TrainConfig& train);

// Full pipeline on a loaded dataset: split, build task examples, train.
// `model_config.vocab_size` and `num_classes` are filled in from the data.
Checkpoint train_on_dataset(const Dataset& dataset, const CategoryMap* categories,
                            ModelConfig model_config, const TrainConfig& train_config,
                            const EpochCallback& on_epoch = nullptr, std::string* diagnostic = nullptr);

enum class SplitPart { kTrain, kValid, kTest, kAll };
SplitPart parse_split_part(const std::string& name);

// Examples of one split part, reproduced from the checkpoint's seed and ratios.
std::vector<Example> checkpoint_examples(const Checkpoint& checkpoint, const Dataset& dataset,
                                         const CategoryMap* categories, SplitPart part);

}  // namespace musanet
