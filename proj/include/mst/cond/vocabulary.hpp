// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MST_COND_VOCABULARY_HPP_
#define MST_COND_VOCABULARY_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace mst::cond {

// Registry of style labels, one per (axis, name) pair, e.g. "instrument:piano"
// or "composer:chopin". Ids are dense and stable in insertion order, so a
// checkpoint that stores the registry file can reuse embedding rows.
class Vocabulary {
 public:
  // Returns the existing id when the pair is already registered.
  int64_t add(const std::string& axis, const std::string& name);

  // Throws std::out_of_range for unregistered labels.
  int64_t id(const std::string& axis, const std::string& name) const;
  bool has(const std::string& axis, const std::string& name) const;

  const std::string& axis(int64_t id) const;
  const std::string& name(int64_t id) const;
  std::string label(int64_t id) const;  // "axis:name"

  int64_t size() const { return static_cast<int64_t>(entries_.size()); }

  // Ids registered under one axis, in id order.
  std::vector<int64_t> ids_for_axis(const std::string& axis) const;

  // Plain text, one "axis:name" per line.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // Parses one "axis:name" line. Throws std::invalid_argument on bad shape.
  static std::pair<std::string, std::string> parse_label(const std::string& line);

 private:
  struct Entry {
    std::string axis;
    std::string name;
  };
  std::vector<Entry> entries_;
  int64_t find(const std::string& axis, const std::string& name) const;
};

}  // namespace mst::cond

#endif  // MST_COND_VOCABULARY_HPP_
