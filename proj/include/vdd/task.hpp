#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdd/errors.hpp"

namespace vdd {

// Global label-space view of a task: the ordered raw class ids every module
// agrees on, plus the reserved unknown slot at index C.
struct LabelSpace {
  std::vector<int> known_classes;  // sorted raw ids, size C
  int unknown_index = 0;           // == C
};

// A generalized multi-source adaptation task: N partially overlapping labeled
// source domains plus one unlabeled target whose label set is the source
// union extended by a single collapsed unknown class. Raw class ids are
// remapped once, at construction, to contiguous indices 0..C-1; everything
// downstream works in remapped indices.
class GmdaTask {
 public:
  static GmdaTask build(const std::vector<std::vector<int>>& raw_source_sets,
                        bool target_extra_unknown, uint64_t seed,
                        std::vector<std::string> domain_names = {}) {
    if (raw_source_sets.size() < 2)
      throw ProtocolError("need at least 2 source domains, got " +
                          std::to_string(raw_source_sets.size()));
    std::set<int> union_raw;
    for (size_t i = 0; i < raw_source_sets.size(); ++i) {
      if (raw_source_sets[i].empty())
        throw ProtocolError("source " + std::to_string(i) + " has an empty label set");
      union_raw.insert(raw_source_sets[i].begin(), raw_source_sets[i].end());
    }

    GmdaTask t;
    t.seed_ = seed;
    t.target_has_unknown_ = target_extra_unknown;
    t.label_space_.known_classes.assign(union_raw.begin(), union_raw.end());
    t.label_space_.unknown_index = static_cast<int>(t.label_space_.known_classes.size());
    for (size_t i = 0; i < t.label_space_.known_classes.size(); ++i)
      t.raw_to_index_[t.label_space_.known_classes[i]] = static_cast<int>(i);

    t.source_sets_.resize(raw_source_sets.size());
    for (size_t i = 0; i < raw_source_sets.size(); ++i) {
      std::set<int> remapped;
      for (int raw : raw_source_sets[i]) remapped.insert(t.raw_to_index_.at(raw));
      t.source_sets_[i].assign(remapped.begin(), remapped.end());
    }

    if (domain_names.empty()) {
      for (size_t i = 0; i < raw_source_sets.size(); ++i)
        domain_names.push_back("source" + std::to_string(i));
      domain_names.push_back("target");
    }
    if (domain_names.size() != raw_source_sets.size() + 1)
      throw ProtocolError("expected " + std::to_string(raw_source_sets.size() + 1) +
                          " domain names");
    std::set<std::string> unique(domain_names.begin(), domain_names.end());
    if (unique.size() != domain_names.size())
      throw ProtocolError("duplicate domain names");
    t.domain_names_ = std::move(domain_names);
    return t;
  }

  int num_sources() const { return static_cast<int>(source_sets_.size()); }
  int num_domains() const { return num_sources() + 1; }
  int target_index() const { return num_sources(); }
  int num_known_classes() const { return label_space_.unknown_index; }
  int unknown_index() const { return label_space_.unknown_index; }
  bool target_has_unknown() const { return target_has_unknown_; }
  uint64_t seed() const { return seed_; }
  const LabelSpace& label_space() const { return label_space_; }
  const std::vector<std::string>& domain_names() const { return domain_names_; }

  const std::vector<std::vector<int>>& source_classes() const { return source_sets_; }

  const std::vector<int>& source_classes(int i) const {
    check_source(i);
    return source_sets_[i];
  }

  bool source_owns(int i, int cls) const {
    check_source(i);
    return std::binary_search(source_sets_[i].begin(), source_sets_[i].end(), cls);
  }

  std::vector<int> owners_of(int cls) const {
    std::vector<int> owners;
    for (int i = 0; i < num_sources(); ++i)
      if (source_owns(i, cls)) owners.push_back(i);
    return owners;
  }

  // Y_ij = Y_Si ∩ Y_Sj and the part of Y_Si private to that pair.
  std::pair<std::vector<int>, std::vector<int>> shared_and_private(int i, int j) const {
    check_source(i);
    check_source(j);
    if (i == j) throw ProtocolError("shared_and_private needs distinct source indices");
    std::vector<int> shared, priv;
    std::set_intersection(source_sets_[i].begin(), source_sets_[i].end(),
                          source_sets_[j].begin(), source_sets_[j].end(),
               std::back_inserter(shared));
    std::set_difference(source_sets_[i].begin(), source_sets_[i].end(), shared.begin(),
                        shared.end(), std::back_inserter(priv));
    return {shared, priv};
  }

  int to_internal(int raw) const {
    auto it = raw_to_index_.find(raw);
    if (it == raw_to_index_.end())
      throw ProtocolError("raw class id " + std::to_string(raw) + " is not in the task");
    return it->second;
  }

  bool knows_raw(int raw) const { return raw_to_index_.count(raw) > 0; }

  int to_raw(int index) const {
    if (index < 0 || index >= num_known_classes())
      throw ProtocolError("class index " + std::to_string(index) + " out of range");
    return label_space_.known_classes[index];
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed_;
    j["target_has_unknown"] = target_has_unknown_;
    j["domain_names"] = domain_names_;
    j["known_classes_raw"] = label_space_.known_classes;
    j["unknown_index"] = label_space_.unknown_index;
    nlohmann::json sources = nlohmann::json::array();
    for (const auto& s : source_sets_) {
      std::vector<int> raw;
      for (int c : s) raw.push_back(to_raw(c));
      sources.push_back(raw);
    }
    j["source_classes_raw"] = sources;
    return j;
  }

  static GmdaTask from_json(const nlohmann::json& j) {
    std::vector<std::vector<int>> raw_sets = j.at("source_classes_raw");
    auto t = build(raw_sets, j.at("target_has_unknown"), j.at("seed"),
                   j.at("domain_names").get<std::vector<std::string>>());
    if (t.label_space_.known_classes != j.at("known_classes_raw").get<std::vector<int>>())
      throw ProtocolError("task document is internally inconsistent");
    return t;
  }

 private:
  void check_source(int i) const {
    if (i < 0 || i >= num_sources())
      throw ProtocolError("source index " + std::to_string(i) + " out of range");
  }

  LabelSpace label_space_;
  std::vector<std::vector<int>> source_sets_;  // remapped ids, sorted
  std::map<int, int> raw_to_index_;
  std::vector<std::string> domain_names_;
  bool target_has_unknown_ = true;
  uint64_t seed_ = 0;
};

}  // namespace vdd
