#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "musanet/ehr_data.hpp"

namespace musanet {

enum class Task { kReadmission, kDiagnosis };

std::string task_name(Task task);  // "readm" / "dx"
Task parse_task(const std::string& name);

// One supervised instance: the visits preceding the final one, and the
// label derived from the full journey.
struct Example {
  PatientJourney input;
  int readmission = 0;
  std::vector<int> diagnosis;  // sorted category set
  std::size_t total_visits = 0;
};

// Readmission labels come from readmission_label(); diagnosis targets from
// build_diagnosis_target() and need `categories`.
std::vector<Example> make_examples(std::span<const PatientJourney> journeys, Task task,
                                   const CategoryMap* categories = nullptr,
                                   const Vocabulary* vocabulary = nullptr);

// Padded batch. Real entries occupy the leading visit/code slots; padding
// slots hold code index 0 and mask 0.
struct Batch {
  std::size_t size = 0;
  std::size_t max_visits = 0;
  std::size_t max_codes = 0;
  std::vector<int> code_indices;              // [size x max_visits x max_codes]
  std::vector<std::uint8_t> code_mask;        // [size x max_visits x max_codes]
  std::vector<std::uint8_t> visit_mask;       // [size x max_visits]
  std::vector<int> temporal_positions;        // [size x max_visits]
  std::vector<int> readmission;               // [size]
  std::vector<std::vector<int>> diagnosis;    // [size]
  std::vector<std::string> patient_ids;       // [size]
  std::size_t truncated_codes = 0;
  std::size_t truncated_visits = 0;

  std::size_t code_offset(std::size_t b, std::size_t v, std::size_t c) const {
    return (b * max_visits + v) * max_codes + c;
  }
  int code(std::size_t b, std::size_t v, std::size_t c) const { return code_indices[code_offset(b, v, c)]; }
  bool has_code(std::size_t b, std::size_t v, std::size_t c) const {
    return code_mask[code_offset(b, v, c)] != 0;
  }
  bool has_visit(std::size_t b, std::size_t v) const { return visit_mask[b * max_visits + v] != 0; }
  int position(std::size_t b, std::size_t v) const { return temporal_positions[b * max_visits + v]; }
  std::size_t num_visits(std::size_t b) const;
};

// Journeys longer than `max_visits` keep their most recent visits; temporal
// positions are measured from the first kept visit. Visits with more than
// `max_codes` codes keep the lowest indices and count the rest in
// truncated_codes.
Batch batch_and_pad(std::span<const Example> examples, std::size_t max_visits, std::size_t max_codes);
Batch batch_and_pad(std::span<const PatientJourney> journeys, std::size_t max_visits,
                    std::size_t max_codes);

}  // namespace musanet
