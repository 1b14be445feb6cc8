#include "musanet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "musanet/errors.hpp"

namespace musanet {
namespace {

std::string code_name(char kind, std::size_t category, std::size_t rank) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%03zu.%02zu", kind, category, rank);
  return buf;
}

struct CodeBook {
  std::vector<std::vector<std::string>> diagnoses;   // per category
  std::vector<std::vector<std::string>> procedures;  // per category
  std::vector<std::size_t> cluster_begin;            // category range per cluster
  std::vector<std::size_t> cluster_end;
};

CodeBook make_codebook(const GeneratorConfig& config) {
  CodeBook book;
  book.diagnoses.resize(config.num_categories);
  book.procedures.resize(config.num_categories);
  for (std::size_t c = 0; c < config.num_categories; ++c) {
    for (std::size_t r = 0; r < config.diagnoses_per_category; ++r) {
      book.diagnoses[c].push_back(code_name('D', c, r));
    }
    for (std::size_t r = 0; r < config.procedures_per_category; ++r) {
      book.procedures[c].push_back(code_name('P', c, r));
    }
  }
  for (std::size_t g = 0; g < config.num_clusters; ++g) {
    book.cluster_begin.push_back(g * config.num_categories / config.num_clusters);
    book.cluster_end.push_back((g + 1) * config.num_categories / config.num_clusters);
  }
  return book;
}

std::discrete_distribution<std::size_t> zipf(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / static_cast<double>(i + 1);
  return std::discrete_distribution<std::size_t>(w.begin(), w.end());
}

}  // namespace

void GeneratorConfig::validate() const {
  if (num_patients == 0) throw ConfigError("num_patients must be positive");
  if (min_visits < 2) throw ConfigError("min_visits must be at least 2");
  if (max_visits < min_visits) throw ConfigError("max_visits must be >= min_visits");
  if (mean_visits < static_cast<double>(min_visits)) {
    throw ConfigError("mean_visits must be >= min_visits");
  }
  if (mean_diagnoses <= 0 || mean_procedures < 0) {
    throw ConfigError("codes per visit must be positive");
  }
  if (num_clusters == 0 || num_categories < num_clusters) {
    throw ConfigError("need at least one category per cluster");
  }
  if (diagnoses_per_category == 0) throw ConfigError("diagnoses_per_category must be positive");
  const double diagnosis_pool = static_cast<double>(num_categories * diagnoses_per_category);
  const double procedure_pool = static_cast<double>(num_categories * procedures_per_category);
  if (mean_diagnoses > diagnosis_pool || mean_procedures > procedure_pool) {
    throw ConfigError("codes per visit exceed the vocabulary");
  }
  if (max_patient_clusters == 0 || acute_clusters + max_patient_clusters >= num_clusters) {
    throw ConfigError("cluster counts out of range");
  }
  if (chronic_markers > diagnoses_per_category) {
    throw ConfigError("chronic_markers exceeds diagnoses_per_category");
  }
  for (double p : {chronic_fraction, marker_rate, acute_rate, readmit_continuation, dominant_share,
                   background_share, stay_probability}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("probabilities must lie in [0, 1]");
  }
  if (dominant_share + background_share > 1.0) {
    throw ConfigError("dominant_share + background_share must not exceed 1");
  }
  if (gap_median_days <= 0 || gap_sigma <= 0 || mean_length_of_stay < 1 || history_span_days < 0) {
    throw ConfigError("timing parameters out of range");
  }
}

SyntheticCohort generate_synthetic(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  const CodeBook book = make_codebook(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double extra_mean = config.mean_visits - static_cast<double>(config.min_visits);
  std::geometric_distribution<std::size_t> extra_visits(1.0 / (1.0 + extra_mean));
  std::poisson_distribution<int> diagnosis_count(config.mean_diagnoses);
  std::poisson_distribution<int> procedure_count(std::max(config.mean_procedures, 1e-12));
  std::poisson_distribution<int> stay_extra(config.mean_length_of_stay - 1.0);
  std::lognormal_distribution<double> gap(std::log(config.gap_median_days), config.gap_sigma);
  std::uniform_int_distribution<int> readmit_gap(1, 30);
  std::uniform_int_distribution<int> first_day(0, config.history_span_days);
  std::uniform_int_distribution<std::size_t> cluster_count(
      1, std::min<std::size_t>(config.max_patient_clusters, config.num_clusters));
  std::uniform_int_distribution<std::size_t> any_category(0, config.num_categories - 1);
  std::uniform_int_distribution<std::size_t> acute_cluster(0, std::max<std::size_t>(config.acute_clusters, 1) - 1);
  auto diagnosis_rank = zipf(config.diagnoses_per_category);
  auto procedure_rank = zipf(std::max<std::size_t>(config.procedures_per_category, 1));

  SyntheticCohort cohort;
  for (std::size_t c = 0; c < config.num_categories; ++c) {
    for (const auto& code : book.diagnoses[c]) cohort.categories[code] = static_cast<int>(c);
    for (const auto& code : book.procedures[c]) cohort.categories[code] = static_cast<int>(c);
  }
  for (std::size_t r = 0; r < config.chronic_markers; ++r) {
    cohort.chronic_markers.push_back(book.diagnoses[0][r]);
  }

  auto pick_category = [&](std::size_t cluster) {
    std::uniform_int_distribution<std::size_t> pick(book.cluster_begin[cluster],
                                                    book.cluster_end[cluster] - 1);
    return pick(rng);
  };

  std::vector<RawJourney> raw;
  raw.reserve(config.num_patients);
  for (std::size_t p = 0; p < config.num_patients; ++p) {
    const bool chronic = unit(rng) < config.chronic_fraction;

    // Persistent clusters. Cluster 0 is reserved for chronic patients and
    // clusters 1..acute_clusters for acute episodes.
    std::vector<std::size_t> clusters;
    if (chronic) clusters.push_back(0);
    const std::size_t wanted = cluster_count(rng) + (chronic ? 1 : 0);
    std::uniform_int_distribution<std::size_t> other_cluster(1 + config.acute_clusters,
                                                             config.num_clusters - 1);
    for (std::size_t attempt = 0; clusters.size() < wanted && attempt < 100; ++attempt) {
      const std::size_t g = other_cluster(rng);
      if (std::find(clusters.begin(), clusters.end(), g) == clusters.end()) clusters.push_back(g);
    }

    const std::size_t num_visits =
        std::min(config.max_visits, config.min_visits + extra_visits(rng));

    RawJourney journey;
    char id[32];
    std::snprintf(id, sizeof(id), "patient-%05zu", p + 1);
    journey.patient_id = id;

    std::uniform_int_distribution<std::size_t> pick_cluster(0, clusters.size() - 1);
    std::size_t dominant = clusters[pick_cluster(rng)];
    int admission = first_day(rng);
    bool previous_readmit = false;
    bool acute = false;
    std::size_t focus = dominant;
    for (std::size_t v = 0; v < num_visits; ++v) {
      const bool continued = previous_readmit && unit(rng) < config.readmit_continuation;
      if (!continued) {
        if (v > 0 && clusters.size() > 1 && unit(rng) >= config.stay_probability) {
          std::size_t next = dominant;
          while (next == dominant) next = clusters[pick_cluster(rng)];
          dominant = next;
        }
        acute = config.acute_clusters > 0 && unit(rng) < config.acute_rate;
        focus = acute ? 1 + acute_cluster(rng) : dominant;
      }

      std::set<std::string> codes;
      auto draw_codes = [&](std::size_t target, bool diagnosis) {
        const std::size_t begin = codes.size();
        for (std::size_t attempt = 0; codes.size() - begin < target && attempt < 50 * target + 50;
             ++attempt) {
          const double u = unit(rng);
          std::size_t category;
          if (u < config.dominant_share) {
            category = pick_category(focus);
          } else if (u < config.dominant_share + config.background_share) {
            category = any_category(rng);
          } else {
            category = pick_category(clusters[pick_cluster(rng)]);
          }
          if (diagnosis) {
            codes.insert(book.diagnoses[category][diagnosis_rank(rng)]);
          } else {
            codes.insert(book.procedures[category][procedure_rank(rng)]);
          }
        }
      };
      draw_codes(static_cast<std::size_t>(std::max(1, diagnosis_count(rng))), true);
      if (config.procedures_per_category > 0) {
        draw_codes(static_cast<std::size_t>(procedure_count(rng)), false);
      }
      if (chronic) {
        for (const std::string& marker : cohort.chronic_markers) {
          if (unit(rng) < config.marker_rate) codes.insert(marker);
        }
      }

      RawVisit visit;
      visit.codes.assign(codes.begin(), codes.end());
      visit.admission_day = admission;
      const int discharge = admission + 1 + stay_extra(rng);
      visit.discharge_day = discharge;
      journey.visits.push_back(std::move(visit));

      const double logit = config.readmit_intercept + (chronic ? config.readmit_chronic : 0.0) +
                           (previous_readmit ? config.readmit_previous : 0.0) +
                           (acute ? config.readmit_acute : 0.0);
      const bool readmit = unit(rng) < 1.0 / (1.0 + std::exp(-logit));
      const int days = readmit ? readmit_gap(rng) : 31 + static_cast<int>(std::floor(gap(rng)));
      admission = discharge + days;
      previous_readmit = readmit;
    }
    raw.push_back(std::move(journey));
  }

  LoadOptions keep_all;
  keep_all.min_count = 1;
  cohort.dataset = build_dataset(raw, keep_all);
  for (PatientJourney& j : cohort.dataset.journeys) j.readmission = readmission_label(j);
  return cohort;
}

void write_cohort(const SyntheticCohort& cohort, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  save_dataset(directory / "journeys.jsonl", cohort.dataset);
  cohort.dataset.vocabulary.save(directory / "vocab.txt");
  save_category_table(directory / "categories.tsv", cohort.categories);
}

}  // namespace musanet
