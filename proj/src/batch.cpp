#include "musanet/batch.hpp"

#include <algorithm>

#include "musanet/errors.hpp"

namespace musanet {

std::string task_name(Task task) { return task == Task::kReadmission ? "readm" : "dx"; }

Task parse_task(const std::string& name) {
  if (name == "readm") return Task::kReadmission;
  if (name == "dx") return Task::kDiagnosis;
  throw ConfigError("unknown task '" + name + "' (expected readm or dx)");
}

std::vector<Example> make_examples(std::span<const PatientJourney> journeys, Task task,
                                   const CategoryMap* categories, const Vocabulary* vocabulary) {
  if (task == Task::kDiagnosis && categories == nullptr) {
    throw ContractError("diagnosis examples need a category map");
  }
  std::vector<Example> examples;
  examples.reserve(journeys.size());
  for (const PatientJourney& journey : journeys) {
    if (journey.visits.size() < 2) {
      throw ContractError("patient " + journey.patient_id + " has fewer than two visits");
    }
    Example ex;
    ex.total_visits = journey.visits.size();
    ex.input.patient_id = journey.patient_id;
    ex.input.visits.assign(journey.visits.begin(), journey.visits.end() - 1);
    if (task == Task::kReadmission) {
      ex.readmission = readmission_label(journey);
    } else {
      ex.diagnosis = build_diagnosis_target(journey, *categories, vocabulary);
      ex.input.diagnosis_target = ex.diagnosis;
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::size_t Batch::num_visits(std::size_t b) const {
  std::size_t n = 0;
  for (std::size_t v = 0; v < max_visits; ++v) n += has_visit(b, v) ? 1 : 0;
  return n;
}

namespace {

void fill_journey(Batch& batch, std::size_t b, const PatientJourney& journey) {
  const std::size_t n = journey.visits.size();
  const std::size_t keep = std::min(n, batch.max_visits);
  batch.truncated_visits += n - keep;
  const std::size_t first = n - keep;
  const int origin = keep > 0 ? journey.visits[first].admission_day : 0;
  for (std::size_t v = 0; v < keep; ++v) {
    const Visit& visit = journey.visits[first + v];
    batch.visit_mask[b * batch.max_visits + v] = 1;
    batch.temporal_positions[b * batch.max_visits + v] = std::abs(visit.admission_day - origin);
    std::vector<int> codes = visit.codes;
    std::sort(codes.begin(), codes.end());
    if (codes.size() > batch.max_codes) {
      batch.truncated_codes += codes.size() - batch.max_codes;
      codes.resize(batch.max_codes);
    }
    for (std::size_t c = 0; c < codes.size(); ++c) {
      if (codes[c] <= 0) throw ContractError("patient " + journey.patient_id + ": invalid code index");
      batch.code_indices[batch.code_offset(b, v, c)] = codes[c];
      batch.code_mask[batch.code_offset(b, v, c)] = 1;
    }
  }
}

Batch empty_batch(std::size_t size, std::size_t max_visits, std::size_t max_codes) {
  if (max_visits == 0 || max_codes == 0) throw ConfigError("max_visits and max_codes must be positive");
  Batch batch;
  batch.size = size;
  batch.max_visits = max_visits;
  batch.max_codes = max_codes;
  batch.code_indices.assign(size * max_visits * max_codes, 0);
  batch.code_mask.assign(size * max_visits * max_codes, 0);
  batch.visit_mask.assign(size * max_visits, 0);
  batch.temporal_positions.assign(size * max_visits, 0);
  batch.readmission.assign(size, 0);
  batch.diagnosis.assign(size, {});
  batch.patient_ids.assign(size, {});
  return batch;
}

}  // namespace

Batch batch_and_pad(std::span<const Example> examples, std::size_t max_visits, std::size_t max_codes) {
  Batch batch = empty_batch(examples.size(), max_visits, max_codes);
  for (std::size_t b = 0; b < examples.size(); ++b) {
    fill_journey(batch, b, examples[b].input);
    batch.readmission[b] = examples[b].readmission;
    batch.diagnosis[b] = examples[b].diagnosis;
    batch.patient_ids[b] = examples[b].input.patient_id;
  }
  return batch;
}

Batch batch_and_pad(std::span<const PatientJourney> journeys, std::size_t max_visits,
                    std::size_t max_codes) {
  Batch batch = empty_batch(journeys.size(), max_visits, max_codes);
  for (std::size_t b = 0; b < journeys.size(); ++b) {
    fill_journey(batch, b, journeys[b]);
    batch.patient_ids[b] = journeys[b].patient_id;
    if (journeys[b].readmission) batch.readmission[b] = *journeys[b].readmission;
    if (journeys[b].diagnosis_target) batch.diagnosis[b] = *journeys[b].diagnosis_target;
  }
  return batch;
}

}  // namespace musanet
