// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <string>

namespace vlalign {

// Language codes and the English names used to fill $LANGUAGE slots.
class LanguageTable {
 public:
  LanguageTable() = default;
  explicit LanguageTable(std::map<std::string, std::string> entries)
      : entries_(std::move(entries)) {}

  // The 96-language default set (mC4 languages minus the handful the MT
  // backend does not support, plus English).
  static const LanguageTable& default_table();

  bool contains(const std::string& code) const { return entries_.count(code) != 0; }
  const std::string& name(const std::string& code) const;
  std::set<std::string> codes() const;
  std::size_t size() const { return entries_.size(); }

  void add(const std::string& code, const std::string& name) { entries_[code] = name; }

 private:
  std::map<std::string, std::string> entries_;
};

// code -> probability; nonnegative, sums to 1 (within 1e-9), codes drawn
// from the configured language table.
struct LanguageDistribution {
  std::map<std::string, double> entries;

  void validate(const LanguageTable& table) const;
};

}  // namespace vlalign
