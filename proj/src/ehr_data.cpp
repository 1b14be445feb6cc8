#include "musanet/ehr_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "musanet/errors.hpp"

namespace musanet {

using nlohmann::json;

Vocabulary::Vocabulary() : codes_{""} {}

int Vocabulary::add(const std::string& code) {
  if (code.empty()) throw ContractError("vocabulary codes must be nonempty");
  auto [it, inserted] = index_.emplace(code, static_cast<int>(codes_.size()));
  if (inserted) codes_.push_back(code);
  return it->second;
}

std::optional<int> Vocabulary::find(std::string_view code) const {
  auto it = index_.find(std::string(code));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::index_of(std::string_view code) const {
  if (auto idx = find(code)) return *idx;
  throw ContractError("unknown code '" + std::string(code) + "'");
}

const std::string& Vocabulary::code(int index) const {
  if (index <= 0 || static_cast<std::size_t>(index) >= codes_.size()) {
    throw ContractError("vocabulary index " + std::to_string(index) + " out of range");
  }
  return codes_[index];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const std::string& code : codes()) out << code << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open vocabulary " + path.string());
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) throw ParseError("empty vocabulary entry", line_no);
    if (vocab.find(line)) throw ParseError("duplicate vocabulary entry '" + line + "'", line_no);
    vocab.add(line);
  }
  return vocab;
}

Visit make_visit(std::vector<int> codes, int admission_day, std::optional<int> discharge_day) {
  std::sort(codes.begin(), codes.end());
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
  if (codes.empty()) throw ContractError("a visit needs at least one code");
  if (codes.front() <= 0) throw ContractError("visit code index must be positive");
  if (admission_day < 0) throw ContractError("admission day must be nonnegative");
  if (discharge_day && *discharge_day < admission_day) {
    throw ContractError("discharge precedes admission");
  }
  return Visit{std::move(codes), admission_day, discharge_day};
}

namespace {

int require_int(const json& value, const char* field, std::size_t line_no) {
  if (!value.is_number_integer()) {
    throw ParseError(std::string("field '") + field + "' must be an integer", line_no);
  }
  return value.get<int>();
}

RawJourney parse_journey(const json& obj, std::size_t line_no, LoadReport* report) {
  if (!obj.is_object()) throw ParseError("expected a JSON object", line_no);
  RawJourney journey;
  bool has_id = false, has_visits = false;
  for (const auto& [key, value] : obj.items()) {
    if (key == "patient_id") {
      if (!value.is_string()) throw ParseError("field 'patient_id' must be a string", line_no);
      journey.patient_id = value.get<std::string>();
      has_id = true;
    } else if (key == "visits") {
      if (!value.is_array()) throw ParseError("field 'visits' must be an array", line_no);
      has_visits = true;
      for (const json& v : value) {
        if (!v.is_object()) throw ParseError("visit must be an object", line_no);
        RawVisit visit;
        bool has_codes = false, has_day = false;
        for (const auto& [vkey, vval] : v.items()) {
          if (vkey == "codes") {
            if (!vval.is_array()) throw ParseError("field 'codes' must be an array", line_no);
            for (const json& c : vval) {
              if (!c.is_string()) throw ParseError("codes must be strings", line_no);
              visit.codes.push_back(c.get<std::string>());
            }
            has_codes = true;
          } else if (vkey == "admission_day") {
            visit.admission_day = require_int(vval, "admission_day", line_no);
            if (visit.admission_day < 0) throw ParseError("admission_day must be >= 0", line_no);
            has_day = true;
          } else if (vkey == "discharge_day") {
            visit.discharge_day = require_int(vval, "discharge_day", line_no);
          } else if (report) {
            report->warnings.push_back("line " + std::to_string(line_no) +
                                       ": ignoring unknown visit field '" + vkey + "'");
          }
        }
        if (!has_codes || !has_day) {
          throw ParseError("visit requires 'codes' and 'admission_day'", line_no);
        }
        if (visit.discharge_day && *visit.discharge_day < visit.admission_day) {
          throw ParseError("discharge_day precedes admission_day", line_no);
        }
        journey.visits.push_back(std::move(visit));
      }
    } else if (key == "readmission") {
      const int label = require_int(value, "readmission", line_no);
      if (label != 0 && label != 1) throw ParseError("readmission must be 0 or 1", line_no);
      journey.readmission = label;
    } else if (report) {
      report->warnings.push_back("line " + std::to_string(line_no) + ": ignoring unknown field '" +
                                 key + "'");
    }
  }
  if (!has_id || !has_visits) throw ParseError("journey requires 'patient_id' and 'visits'", line_no);
  std::stable_sort(journey.visits.begin(), journey.visits.end(),
                   [](const RawVisit& a, const RawVisit& b) { return a.admission_day < b.admission_day; });
  return journey;
}

}  // namespace

std::vector<RawJourney> read_journeys(std::istream& in, LoadReport* report) {
  std::vector<RawJourney> journeys;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (report) ++report->lines;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    journeys.push_back(parse_journey(obj, line_no, report));
  }
  return journeys;
}

Dataset build_dataset(const std::vector<RawJourney>& raw, const LoadOptions& options,
                      LoadReport* report) {
  LoadReport scratch;
  LoadReport& rep = report ? *report : scratch;

  std::vector<const RawJourney*> eligible;
  for (const RawJourney& j : raw) {
    if (j.visits.size() >= 2) {
      eligible.push_back(&j);
    } else {
      ++rep.dropped_journeys;
    }
  }

  Dataset dataset;
  if (options.vocabulary != nullptr) {
    dataset.vocabulary = *options.vocabulary;
  } else {
    std::map<std::string, std::size_t> counts;
    for (const RawJourney* j : eligible) {
      for (const RawVisit& v : j->visits) {
        for (const std::string& c : v.codes) ++counts[c];
      }
    }
    for (const auto& [code, count] : counts) {
      if (count >= options.min_count) dataset.vocabulary.add(code);
    }
  }

  for (const RawJourney* j : eligible) {
    PatientJourney journey;
    journey.patient_id = j->patient_id;
    journey.readmission = j->readmission;
    for (const RawVisit& v : j->visits) {
      std::vector<int> codes;
      for (const std::string& c : v.codes) {
        if (auto idx = dataset.vocabulary.find(c)) {
          codes.push_back(*idx);
        } else {
          ++rep.dropped_code_occurrences;
        }
      }
      if (codes.empty()) {
        ++rep.dropped_visits;
        continue;
      }
      journey.visits.push_back(make_visit(std::move(codes), v.admission_day, v.discharge_day));
    }
    if (journey.visits.size() < 2) {
      ++rep.dropped_journeys;
      continue;
    }
    dataset.journeys.push_back(std::move(journey));
  }
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options,
                     LoadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset " + path.string());
  return build_dataset(read_journeys(in, report), options, report);
}

void write_journeys(std::ostream& out, const Dataset& dataset) {
  for (const PatientJourney& j : dataset.journeys) {
    nlohmann::ordered_json obj;
    obj["patient_id"] = j.patient_id;
    nlohmann::ordered_json visits = nlohmann::ordered_json::array();
    for (const Visit& v : j.visits) {
      nlohmann::ordered_json visit;
      nlohmann::ordered_json codes = nlohmann::ordered_json::array();
      for (int c : v.codes) codes.push_back(dataset.vocabulary.code(c));
      visit["codes"] = std::move(codes);
      visit["admission_day"] = v.admission_day;
      if (v.discharge_day) visit["discharge_day"] = *v.discharge_day;
      visits.push_back(std::move(visit));
    }
    obj["visits"] = std::move(visits);
    if (j.readmission) obj["readmission"] = *j.readmission;
    out << obj.dump() << '\n';
  }
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_journeys(out, dataset);
}

CategoryMap::CategoryMap(std::vector<int> category_of, std::size_t num_categories)
    : category_of_(std::move(category_of)), num_categories_(num_categories) {
  for (int c : category_of_) {
    if (c >= 0 && static_cast<std::size_t>(c) >= num_categories_) {
      throw ContractError("category " + std::to_string(c) + " outside [0, " +
                          std::to_string(num_categories_) + ")");
    }
  }
}

CategoryMap CategoryMap::load(const std::filesystem::path& path, const Vocabulary& vocabulary) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open category map " + path.string());
  std::vector<int> category_of(vocabulary.size(), -1);
  std::size_t num_categories = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected code<TAB>category", line_no);
    const std::string code = line.substr(0, tab);
    int category = 0;
    try {
      std::size_t used = 0;
      category = std::stoi(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError("invalid category index", line_no);
    }
    if (category < 0) throw ParseError("category index must be nonnegative", line_no);
    num_categories = std::max(num_categories, static_cast<std::size_t>(category) + 1);
    if (auto idx = vocabulary.find(code)) category_of[*idx] = category;
  }
  return CategoryMap(std::move(category_of), num_categories);
}

std::optional<int> CategoryMap::category(int code) const {
  if (code < 0 || static_cast<std::size_t>(code) >= category_of_.size()) return std::nullopt;
  const int c = category_of_[code];
  if (c < 0) return std::nullopt;
  return c;
}

void save_category_table(const std::filesystem::path& path,
                         const std::map<std::string, int>& category_of_code) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [code, category] : category_of_code) out << code << '\t' << category << '\n';
}

std::vector<int> temporal_positions(const PatientJourney& journey) {
  std::vector<int> positions;
  positions.reserve(journey.visits.size());
  if (journey.visits.empty()) return positions;
  const int first = journey.visits.front().admission_day;
  for (const Visit& v : journey.visits) positions.push_back(std::abs(v.admission_day - first));
  return positions;
}

int readmission_label(const PatientJourney& journey, int window_days) {
  if (journey.readmission) return *journey.readmission;
  for (std::size_t i = 1; i < journey.visits.size(); ++i) {
    const auto& discharge = journey.visits[i - 1].discharge_day;
    if (!discharge) {
      throw ContractError("patient " + journey.patient_id +
                          ": no readmission label and no discharge day");
    }
    const int gap = journey.visits[i].admission_day - *discharge;
    if (gap >= 0 && gap <= window_days) return 1;
  }
  return 0;
}

std::vector<int> build_diagnosis_target(const PatientJourney& journey,
                                        const CategoryMap& categories,
                                        const Vocabulary* vocabulary) {
  if (journey.visits.empty()) throw ContractError("journey has no visits");
  std::set<int> target;
  for (int code : journey.visits.back().codes) {
    auto category = categories.category(code);
    if (!category) {
      std::string name = vocabulary ? "'" + vocabulary->code(code) + "'"
                                    : "index " + std::to_string(code);
      throw ContractError("code " + name + " has no category");
    }
    target.insert(*category);
  }
  return {target.begin(), target.end()};
}

DatasetSplit split_dataset(const std::vector<PatientJourney>& journeys, const SplitRatios& ratios,
                           std::uint64_t seed) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be nonnegative and sum to 1");
  }
  std::vector<std::size_t> order(journeys.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const double n = static_cast<double>(journeys.size());
  const std::size_t n_train = std::min(journeys.size(), static_cast<std::size_t>(std::llround(n * ratios.train)));
  const std::size_t n_valid =
      std::min(journeys.size() - n_train, static_cast<std::size_t>(std::llround(n * ratios.valid)));
  DatasetSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const PatientJourney& j = journeys[order[i]];
    if (i < n_train) {
      split.train.push_back(j);
    } else if (i < n_train + n_valid) {
      split.valid.push_back(j);
    } else {
      split.test.push_back(j);
    }
  }
  return split;
}

}  // namespace musanet
