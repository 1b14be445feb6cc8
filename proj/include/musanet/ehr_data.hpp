#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace musanet {

// Bijection between medical-code strings and dense indices. Index 0 is the
// padding slot and never names a real code, so size() == number of codes + 1.
class Vocabulary {
 public:
  Vocabulary();

  // Index of `code`, inserting it at the end if absent.
  int add(const std::string& code);
  std::optional<int> find(std::string_view code) const;
  int index_of(std::string_view code) const;
  const std::string& code(int index) const;

  std::size_t size() const { return codes_.size(); }
  // Real codes in index order (index i + 1 for element i).
  std::span<const std::string> codes() const { return std::span(codes_).subspan(1); }

  // One code per line; line n (1-based) holds index n.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.codes_ == b.codes_; }

 private:
  std::vector<std::string> codes_;
  std::unordered_map<std::string, int> index_;
};

struct Visit {
  std::vector<int> codes;  // sorted, duplicate-free, nonempty
  int admission_day = 0;
  std::optional<int> discharge_day;

  friend bool operator==(const Visit&, const Visit&) = default;
};

// Sorts and deduplicates `codes`; throws ContractError if the result would
// violate the Visit invariants.
Visit make_visit(std::vector<int> codes, int admission_day,
                 std::optional<int> discharge_day = std::nullopt);

struct PatientJourney {
  std::string patient_id;
  std::vector<Visit> visits;
  std::optional<int> readmission;
  std::optional<std::vector<int>> diagnosis_target;

  friend bool operator==(const PatientJourney&, const PatientJourney&) = default;
};

struct Dataset {
  Vocabulary vocabulary;
  std::vector<PatientJourney> journeys;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Journey as read from disk, before vocabulary filtering.
struct RawVisit {
  std::vector<std::string> codes;
  int admission_day = 0;
  std::optional<int> discharge_day;
};

struct RawJourney {
  std::string patient_id;
  std::vector<RawVisit> visits;
  std::optional<int> readmission;
};

struct LoadOptions {
  // Codes seen fewer times than this across the corpus are removed.
  std::size_t min_count = 5;
  // When set, codes outside this vocabulary are removed instead and
  // min_count is ignored.
  const Vocabulary* vocabulary = nullptr;
};

struct LoadReport {
  std::size_t lines = 0;
  std::size_t dropped_journeys = 0;
  std::size_t dropped_visits = 0;
  std::size_t dropped_code_occurrences = 0;
  std::vector<std::string> warnings;
};

// Parses JSONL journeys. Malformed lines raise ParseError carrying the line
// number; unknown fields are reported as warnings and ignored.
std::vector<RawJourney> read_journeys(std::istream& in, LoadReport* report = nullptr);

// Applies the corpus filters and indexes the codes. The vocabulary holds the
// surviving codes in lexicographic order unless options.vocabulary is given.
Dataset build_dataset(const std::vector<RawJourney>& raw, const LoadOptions& options = {},
                      LoadReport* report = nullptr);

Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options = {},
                     LoadReport* report = nullptr);

void write_journeys(std::ostream& out, const Dataset& dataset);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

// Map from vocabulary index to category index.
class CategoryMap {
 public:
  CategoryMap() = default;
  // category_of[i] is the category of code i, or -1 when unmapped.
  CategoryMap(std::vector<int> category_of, std::size_t num_categories);

  // Reads "code<TAB>category" lines. Codes absent from `vocabulary` are
  // skipped; the category count spans every line of the file.
  static CategoryMap load(const std::filesystem::path& path, const Vocabulary& vocabulary);

  std::optional<int> category(int code) const;
  std::size_t num_categories() const { return num_categories_; }

 private:
  std::vector<int> category_of_;
  std::size_t num_categories_ = 0;
};

void save_category_table(const std::filesystem::path& path,
                         const std::map<std::string, int>& category_of_code);

// Day offset of each visit from the first admission.
std::vector<int> temporal_positions(const PatientJourney& journey);

// 1 iff some admission falls within `window_days` after the previous visit's
// discharge. An explicit label on the journey takes precedence. Throws
// ContractError when neither a label nor discharge days are available.
int readmission_label(const PatientJourney& journey, int window_days = 30);

// Sorted categories of the final visit's codes. Throws ContractError naming
// the first unmapped code (by string when `vocabulary` is given).
std::vector<int> build_diagnosis_target(const PatientJourney& journey,
                                        const CategoryMap& categories,
                                        const Vocabulary* vocabulary = nullptr);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<PatientJourney> train;
  std::vector<PatientJourney> valid;
  std::vector<PatientJourney> test;
};

// Seeded shuffle by patient, then consecutive slices of rounded sizes.
DatasetSplit split_dataset(const std::vector<PatientJourney>& journeys, const SplitRatios& ratios,
                           std::uint64_t seed);

}  // namespace musanet
