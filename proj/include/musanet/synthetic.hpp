#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "musanet/ehr_data.hpp"

namespace musanet {

// Synthetic cohort shaped like an ICU admissions extract: ~2.66 visits per
// patient, ~13 diagnosis and ~4 procedure codes per visit.
//
// Codes are grouped into categories and categories into latent condition
// clusters. Each patient carries a few clusters and a dominant cluster that
// drifts from visit to visit; most codes of a visit come from the dominant
// cluster. Patients with the chronic cluster carry marker codes and are
// readmitted far more often. A readmission makes the next one likelier, and
// so does an acute episode: a single visit dominated by one of the acute
// clusters, which are never part of a patient's persistent set. A
// readmission usually continues the problem of the stay before it.
struct GeneratorConfig {
  std::size_t num_patients = 7499;
  double mean_visits = 2.66;
  std::size_t min_visits = 2;
  std::size_t max_visits = 40;
  double mean_diagnoses = 13.0;
  double mean_procedures = 4.0;

  std::size_t num_clusters = 20;
  std::size_t num_categories = 100;
  std::size_t diagnoses_per_category = 15;
  std::size_t procedures_per_category = 5;

  double chronic_fraction = 0.15;
  double marker_rate = 0.8;          // per-visit probability of each chronic marker code
  std::size_t chronic_markers = 3;
  std::size_t max_patient_clusters = 3;  // besides the chronic cluster
  std::size_t acute_clusters = 3;        // clusters 1..acute_clusters
  double acute_rate = 0.25;              // per-visit probability of an acute episode
  double dominant_share = 0.7;       // codes drawn from the dominant cluster
  double background_share = 0.1;     // codes drawn from any category
  double stay_probability = 0.6;     // dominant cluster persists to the next visit
  double readmit_continuation = 0.8; // a readmission keeps the previous visit's focus

  double readmit_intercept = -2.2;   // logit of a readmission, baseline
  double readmit_chronic = 2.5;      // added for chronic patients
  double readmit_previous = 1.0;     // added after a readmission
  double readmit_acute = 2.0;        // added after an acute episode
  double gap_median_days = 30.0;     // log-normal gap after non-readmitted discharges
  double gap_sigma = 0.8;
  double mean_length_of_stay = 5.0;
  int history_span_days = 3650;

  void validate() const;
};

struct SyntheticCohort {
  Dataset dataset;
  // Category of every code the generator can emit.
  std::map<std::string, int> categories;
  // Codes marking the chronic cluster.
  std::vector<std::string> chronic_markers;
};

// Deterministic for a given (config, seed). Readmission labels are stored on
// the journeys and agree with readmission_label() over the discharge days.
SyntheticCohort generate_synthetic(const GeneratorConfig& config, std::uint64_t seed);

// Writes journeys.jsonl, vocab.txt and categories.tsv into `directory`.
void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& directory);

}  // namespace musanet
