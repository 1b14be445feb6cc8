#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "musanet/errors.hpp"
#include "musanet/metrics.hpp"
#include "musanet/synthetic.hpp"
#include "musanet/train.hpp"

namespace musanet::cli {
namespace {

using nlohmann::ordered_json;

// Usage problems detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  // Shared paths.
  std::string data;
  std::string vocab;
  std::string categories;
  std::string checkpoint;
  std::string out;
  std::string split = "test";
  bool dump_config = false;

  // gen-data
  GeneratorConfig generator;

  // train
  ModelConfig model;
  TrainConfig train;
  std::string task = "readm";
  std::string split_ratios = "0.8,0.1,0.1";
  bool no_posmask = false;
  bool no_interval = false;
  bool no_attn_pool = false;
  bool quiet = false;

  // evaluate / robustness / explain
  std::vector<std::size_t> k_list{5, 10, 20, 30};
  std::size_t from = 6;
  std::size_t to = 16;
  std::size_t patients = 10;

  // gradcheck
  TinyCheckConfig tiny;
  std::string check_task = "both";
};

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--split-ratios: '" + item + "' is not a number");
    }
  }
  if (values.size() != 3) throw UsageError("--split-ratios needs three comma-separated values");
  double total = 0.0;
  for (double v : values) {
    if (v < 0.0) throw UsageError("--split-ratios values must be nonnegative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("--split-ratios must sum to 1");
  return values;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write " + path);
  file << text;
}

Dataset load_data(const Options& o, const Vocabulary* fixed, std::ostream& err) {
  LoadOptions load;
  load.min_count = o.train.min_count;
  load.vocabulary = fixed;
  LoadReport report;
  Dataset dataset = load_dataset(o.data, load, &report);
  for (const std::string& warning : report.warnings) err << "warning: " << warning << "\n";
  if (report.dropped_journeys > 0 || report.dropped_visits > 0) {
    err << "note: dropped " << report.dropped_journeys << " journeys and " << report.dropped_visits
        << " visits during filtering\n";
  }
  if (dataset.journeys.empty()) throw ContractError("no journeys left after filtering " + o.data);
  return dataset;
}

std::optional<CategoryMap> load_categories(const Options& o, Task task, const Vocabulary& vocab) {
  if (o.categories.empty()) {
    if (task == Task::kDiagnosis) throw UsageError("diagnosis needs --categories");
    return std::nullopt;
  }
  return CategoryMap::load(o.categories, vocab);
}

Checkpoint read_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  return load_checkpoint(o.checkpoint);
}

struct Loaded {
  Checkpoint checkpoint;
  Dataset dataset;
  std::optional<CategoryMap> categories;
};

Loaded load_for_checkpoint(const Options& o, std::ostream& err) {
  Loaded l;
  l.checkpoint = read_checkpoint(o);
  l.dataset = load_data(o, &l.checkpoint.vocabulary, err);
  l.categories = load_categories(o, l.checkpoint.model.task, l.checkpoint.vocabulary);
  if (l.categories && l.checkpoint.model.task == Task::kDiagnosis &&
      l.categories->num_categories() != l.checkpoint.model.num_classes) {
    throw ContractError("category map has " + std::to_string(l.categories->num_categories()) +
                        " categories, the checkpoint predicts " +
                        std::to_string(l.checkpoint.model.num_classes));
  }
  return l;
}

ordered_json optional_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

// ---------------------------------------------------------------- gen-data

int gen_data(const Options& o, std::ostream& out, std::ostream& err) {
  ordered_json config{{"patients", o.generator.num_patients}, {"seed", o.train.seed}, {"out", o.out}};
  if (o.dump_config) {
    out << config.dump(2) << "\n";
    return kOk;
  }
  if (o.out.empty()) throw UsageError("gen-data needs --out <directory>");
  o.generator.validate();
  const SyntheticCohort cohort = generate_synthetic(o.generator, o.train.seed);
  write_cohort(cohort, o.out);
  std::size_t visits = 0;
  std::size_t readmitted = 0;
  for (const PatientJourney& j : cohort.dataset.journeys) {
    visits += j.visits.size();
    readmitted += static_cast<std::size_t>(j.readmission.value_or(0));
  }
  const double n = static_cast<double>(cohort.dataset.journeys.size());
  err << "wrote " << cohort.dataset.journeys.size() << " patients, " << cohort.dataset.vocabulary.codes().size()
      << " codes to " << o.out << " (mean visits " << static_cast<double>(visits) / n
      << ", readmission rate " << static_cast<double>(readmitted) / n << ")\n";
  return kOk;
}

// ---------------------------------------------------------------- train

int train_cmd(Options o, std::ostream& out, std::ostream& err) {
  o.train.task = parse_task(o.task);
  const std::vector<double> ratios = parse_ratios(o.split_ratios);
  o.train.split = {ratios[0], ratios[1], ratios[2]};
  o.model.task = o.train.task;
  o.model.use_positional_mask = !o.no_posmask;
  o.model.use_interval_encoding = !o.no_interval;
  o.model.use_attention_pooling = !o.no_attn_pool;
  o.train.validate();

  if (o.dump_config) {
    ordered_json model = o.model;
    model.erase("vocab_size");
    model.erase("num_classes");
    out << ordered_json{{"model", model}, {"train", o.train}}.dump(2) << "\n";
    return kOk;
  }
  if (o.train.task == Task::kDiagnosis && o.categories.empty()) {
    throw UsageError("--task dx needs --categories");
  }
  if (o.data.empty()) throw UsageError("train needs --data");
  if (o.checkpoint.empty()) throw UsageError("train needs --checkpoint <output path>");

  std::optional<Vocabulary> fixed;
  if (!o.vocab.empty()) fixed = Vocabulary::load(o.vocab);
  const Dataset dataset = load_data(o, fixed ? &*fixed : nullptr, err);
  const auto categories = load_categories(o, o.train.task, dataset.vocabulary);

  const EpochCallback progress = [&](const EpochStats& s) {
    if (o.quiet) return;
    err << "epoch " << s.epoch << "/" << o.train.epochs << "  train_loss " << s.train_loss
        << "  valid_loss " << s.valid_loss << "  valid_metric ";
    if (s.valid_metric) {
      err << *s.valid_metric;
    } else {
      err << "undefined";
    }
    err << "\n";
  };
  const Checkpoint checkpoint = train_on_dataset(dataset, categories ? &*categories : nullptr, o.model,
                                                 o.train, progress);
  save_checkpoint(o.checkpoint, checkpoint);
  err << "best epoch " << checkpoint.best_epoch << ", checkpoint written to " << o.checkpoint << "\n";
  return kOk;
}

// ---------------------------------------------------------------- evaluate

MetricsReport full_report(const Checkpoint& c, std::span<const Example> examples,
                          std::span<const std::size_t> k_list) {
  MetricsReport report = evaluate(c.params, c.model, examples, k_list);
  report.epochs = c.train.epochs;
  report.seed = c.train.seed;
  report.config_digest = config_digest(c.model, c.train);
  for (const EpochStats& s : c.history) {
    report.train_loss.push_back(s.train_loss);
    report.valid_metric.push_back(s.valid_metric);
  }
  return report;
}

int evaluate_cmd(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.data.empty()) throw UsageError("evaluate needs --data");
  const SplitPart part = parse_split_part(o.split);
  const Loaded l = load_for_checkpoint(o, err);
  const auto examples = checkpoint_examples(l.checkpoint, l.dataset, l.categories ? &*l.categories : nullptr, part);
  if (examples.empty()) throw ContractError("split '" + o.split + "' has no examples");
  const MetricsReport report = full_report(l.checkpoint, examples, o.k_list);
  const std::string json = report_json(report).dump(2) + "\n";
  if (o.out.empty()) {
    out << json;
  } else {
    write_text(o.out, json);
    out << report_text(report);
  }
  return kOk;
}

// ---------------------------------------------------------------- robustness

int robustness_cmd(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.data.empty()) throw UsageError("robustness needs --data");
  if (o.from == 0 || o.from > o.to) throw UsageError("--from must be positive and not exceed --to");
  const SplitPart part = parse_split_part(o.split);
  const Loaded l = load_for_checkpoint(o, err);
  const Task task = l.checkpoint.model.task;
  const auto examples = checkpoint_examples(l.checkpoint, l.dataset, l.categories ? &*l.categories : nullptr, part);

  ordered_json buckets = ordered_json::array();
  for (std::size_t length = o.from; length <= o.to; ++length) {
    std::vector<Example> bucket;
    for (const Example& e : examples) {
      if (e.total_visits == length) bucket.push_back(e);
    }
    if (bucket.empty()) {
      err << "notice: no patients with " << length << " visits; bucket skipped\n";
      continue;
    }
    const Predictions pred = predict(l.checkpoint.params, l.checkpoint.model, bucket);
    std::optional<double> value;
    if (task == Task::kDiagnosis) {
      std::vector<std::vector<int>> labels;
      for (const Example& e : bucket) labels.push_back(e.diagnosis);
      value = precision_at_k(pred.logits, labels, kSelectionK);
    } else {
      std::vector<int> labels;
      for (const Example& e : bucket) labels.push_back(e.readmission);
      if (std::count(labels.begin(), labels.end(), 1) > 0) {
        const Tensor scores = prediction_scores(pred.logits, task);
        value = pr_auc(scores.data(), labels);
      }
    }
    buckets.push_back({{"visits", length}, {"examples", bucket.size()}, {"value", optional_json(value)}});
  }
  ordered_json result{{"task", task_name(task)},
                      {"metric", task == Task::kDiagnosis ? "precision@20" : "pr_auc"},
                      {"split", o.split},
                      {"buckets", buckets}};
  const std::string json = result.dump(2) + "\n";
  if (o.out.empty()) {
    out << json;
  } else {
    write_text(o.out, json);
  }
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

int gradcheck_cmd(const Options& o, std::ostream& out, std::ostream&) {
  std::vector<Task> tasks;
  if (o.check_task == "both") {
    tasks = {Task::kReadmission, Task::kDiagnosis};
  } else {
    tasks = {parse_task(o.check_task)};
  }
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  for (Task task : tasks) {
    TinyCheckConfig check = o.tiny;
    check.task = task;
    const GradCheckReport report = model_gradcheck(check);
    const bool pass = report.max_relative_error < kTolerance;
    ok = ok && pass;
    out << task_name(task) << ": max_relative_error " << report.max_relative_error
        << " max_absolute_error " << report.max_absolute_error << " entries " << report.entries_checked
        << (pass ? " ok" : " FAILED") << "\n";
  }
  return ok ? kOk : kNumericFailure;
}

// ---------------------------------------------------------------- explain

int explain_cmd(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.data.empty()) throw UsageError("explain needs --data");
  const SplitPart part = parse_split_part(o.split);
  const Checkpoint checkpoint = read_checkpoint(o);
  const ModelConfig& config = checkpoint.model;
  if (!config.use_attention_pooling) {
    throw ContractError("checkpoint was trained without attention pooling; there is nothing to explain");
  }
  const Dataset dataset = load_data(o, &checkpoint.vocabulary, err);
  std::vector<PatientJourney> journeys = dataset.journeys;
  if (part != SplitPart::kAll) {
    DatasetSplit split = split_dataset(dataset.journeys, checkpoint.train.split, checkpoint.train.seed);
    journeys = part == SplitPart::kTrain   ? std::move(split.train)
               : part == SplitPart::kValid ? std::move(split.valid)
                                           : std::move(split.test);
  }
  if (journeys.size() > o.patients) journeys.resize(o.patients);

  // The model sees every visit but the last, as in training.
  std::vector<Example> examples;
  for (const PatientJourney& j : journeys) {
    Example e;
    e.total_visits = j.visits.size();
    e.input.patient_id = j.patient_id;
    e.input.visits.assign(j.visits.begin(), j.visits.end() - 1);
    examples.push_back(std::move(e));
  }

  std::ostringstream lines;
  for (std::size_t start = 0; start < examples.size(); start += 64) {
    const std::size_t end = std::min(examples.size(), start + 64);
    const std::span<const Example> chunk(examples.data() + start, end - start);
    const Batch batch = batch_and_pad(chunk, config.max_visits, config.max_codes);
    Tape tape;
    const ModelVars vars = bind_constants(tape, checkpoint.params);
    const ForwardResult fwd = forward(batch, vars, config, Mode::kEval, nullptr, true);
    const Tensor scores = prediction_scores(fwd.logits.value(), config.task);

    for (std::size_t b = 0; b < batch.size; ++b) {
      const Example& e = chunk[b];
      const AttentionRecord& rec = fwd.attention[b];
      const std::size_t kept = batch.num_visits(b);
      const std::size_t first = e.input.visits.size() - kept;
      ordered_json visits = ordered_json::array();
      for (std::size_t v = 0; v < kept; ++v) {
        const Visit& visit = e.input.visits[first + v];
        ordered_json codes = ordered_json::array();
        for (std::size_t c = 0; c < config.max_codes; ++c) {
          if (!batch.has_code(b, v, c)) continue;
          codes.push_back({{"code", checkpoint.vocabulary.code(batch.code(b, v, c))},
                           {"importance", rec.code_importance.at(v, c)}});
        }
        visits.push_back({{"visit", first + v},
                          {"admission_day", visit.admission_day},
                          {"position", batch.position(b, v)},
                          {"importance", rec.visit_importance[v]},
                          {"importance_forward", rec.visit_importance_forward[v]},
                          {"importance_backward", rec.visit_importance_backward[v]},
                          {"codes", codes}});
      }
      ordered_json record{{"patient_id", e.input.patient_id}, {"task", task_name(config.task)}};
      if (config.task == Task::kReadmission) {
        record["readmission_probability"] = scores[b];
      } else {
        const std::span<const double> row = scores.data().subspan(b * config.num_classes, config.num_classes);
        record["top_categories"] = top_k(row, 5);
      }
      record["visits"] = visits;
      lines << record.dump() << "\n";
    }
  }
  if (o.out.empty()) {
    out << lines.str();
  } else {
    write_text(o.out, lines.str());
    err << "wrote " << examples.size() << " explanations to " << o.out << "\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Multi-level self-attention over patient visit sequences", "musanet"};
  app.require_subcommand(1, 1);

  auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--task", o.task, "readm or dx")->check(CLI::IsMember({"readm", "dx"}));
    sub->add_option("--d", o.model.d, "embedding dimension")->check(CLI::PositiveNumber);
    sub->add_option("--max-visits", o.model.max_visits, "visits kept per patient")->check(CLI::PositiveNumber);
    sub->add_option("--max-codes", o.model.max_codes, "codes kept per visit")->check(CLI::PositiveNumber);
    sub->add_option("--dropout", o.model.dropout, "dropout rate in [0, 1)");
    sub->add_flag("--no-posmask", o.no_posmask, "replace the positional masks by zeros");
    sub->add_flag("--no-interval", o.no_interval, "disable interval encoding");
    sub->add_flag("--no-attn-pool", o.no_attn_pool, "sum codes and average visits instead of attention pooling");
    sub->add_option("--epochs", o.train.epochs)->check(CLI::PositiveNumber);
    sub->add_option("--batch", o.train.batch_size)->check(CLI::PositiveNumber);
    sub->add_option("--lr", o.train.learning_rate)->check(CLI::NonNegativeNumber);
    sub->add_option("--split-ratios", o.split_ratios, "train,valid,test fractions");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic cohort (journeys.jsonl, vocab.txt, categories.tsv)");
  gen->add_option("--patients", o.generator.num_patients)->check(CLI::PositiveNumber);
  gen->add_option("--seed", o.train.seed);
  gen->add_option("--out", o.out, "output directory");
  gen->add_flag("--dump-config", o.dump_config, "print the effective configuration and exit");

  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train->add_option("--data", o.data, "journeys JSONL");
  CLI::Option* vocab = train->add_option("--vocab", o.vocab, "fixed vocabulary file");
  CLI::Option* min_count = train->add_option("--min-count", o.train.min_count, "minimum code frequency");
  vocab->excludes(min_count);
  train->add_option("--categories", o.categories, "code<TAB>category table (dx)");
  train->add_option("--checkpoint", o.checkpoint, "output checkpoint path");
  train->add_option("--seed", o.train.seed);
  train->add_flag("--quiet", o.quiet, "no per-epoch progress");
  train->add_flag("--dump-config", o.dump_config, "print the effective configuration and exit");
  add_model_flags(train);

  auto add_eval_flags = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint)->required();
    sub->add_option("--data", o.data, "journeys JSONL");
    sub->add_option("--categories", o.categories, "code<TAB>category table (dx)");
    sub->add_option("--split", o.split, "train, valid, test or all")
        ->check(CLI::IsMember({"train", "valid", "test", "all"}));
    sub->add_option("--out", o.out, "output file (default: standard output)");
  };
  CLI::App* eval = app.add_subcommand("evaluate", "score a checkpoint; JSON metrics report");
  add_eval_flags(eval);
  eval->add_option("--k", o.k_list, "precision@k cutoffs")->delimiter(',')->check(CLI::PositiveNumber);

  CLI::App* robust = app.add_subcommand("robustness", "metric per journey length");
  add_eval_flags(robust);
  robust->add_option("--from", o.from, "shortest journey length");
  robust->add_option("--to", o.to, "longest journey length");

  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference check of a tiny model");
  grad->add_option("--d", o.tiny.d)->check(CLI::PositiveNumber);
  grad->add_option("--visits", o.tiny.visits)->check(CLI::PositiveNumber);
  grad->add_option("--codes", o.tiny.codes)->check(CLI::PositiveNumber);
  grad->add_option("--seed", o.tiny.seed);
  grad->add_option("--task", o.check_task, "readm, dx or both")->check(CLI::IsMember({"readm", "dx", "both"}));

  CLI::App* explain = app.add_subcommand("explain", "per-patient visit and code importance (JSONL)");
  add_eval_flags(explain);
  explain->add_option("--patients", o.patients, "number of patients")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  try {
    if (gen->parsed()) return gen_data(o, out, err);
    if (train->parsed()) return train_cmd(o, out, err);
    if (eval->parsed()) return evaluate_cmd(o, out, err);
    if (robust->parsed()) return robustness_cmd(o, out, err);
    if (grad->parsed()) return gradcheck_cmd(o, out, err);
    if (explain->parsed()) return explain_cmd(o, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const ContractError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  err << "error: no subcommand\n";
  return kUsage;
}

int run_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace musanet::cli
