// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/cond/vocabulary.hpp"

#include <fstream>
#include <stdexcept>

namespace mst::cond {

int64_t Vocabulary::find(const std::string& axis, const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].axis == axis && entries_[i].name == name)
      return static_cast<int64_t>(i);
  return -1;
}

int64_t Vocabulary::add(const std::string& axis, const std::string& name) {
  if (axis.empty() || name.empty())
    throw std::invalid_argument("vocabulary: empty axis or name");
  if (axis.find(':') != std::string::npos || axis.find('\n') != std::string::npos ||
      name.find('\n') != std::string::npos)
    throw std::invalid_argument("vocabulary: ':' or newline in label parts");
  const int64_t existing = find(axis, name);
  if (existing >= 0) return existing;
  entries_.push_back({axis, name});
  return static_cast<int64_t>(entries_.size()) - 1;
}

int64_t Vocabulary::id(const std::string& axis, const std::string& name) const {
  const int64_t i = find(axis, name);
  if (i < 0) throw std::out_of_range("vocabulary: unknown label " + axis + ":" + name);
  return i;
}

bool Vocabulary::has(const std::string& axis, const std::string& name) const {
  return find(axis, name) >= 0;
}

const std::string& Vocabulary::axis(int64_t id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary: id out of range");
  return entries_[static_cast<std::size_t>(id)].axis;
}

const std::string& Vocabulary::name(int64_t id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary: id out of range");
  return entries_[static_cast<std::size_t>(id)].name;
}

std::string Vocabulary::label(int64_t id) const { return axis(id) + ":" + name(id); }

std::vector<int64_t> Vocabulary::ids_for_axis(const std::string& axis) const {
  std::vector<int64_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].axis == axis) out.push_back(static_cast<int64_t>(i));
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("vocabulary: cannot write " + path);
  for (const Entry& e : entries_) os << e.axis << ':' << e.name << '\n';
}

std::pair<std::string, std::string> Vocabulary::parse_label(const std::string& line) {
  const std::size_t colon = line.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == line.size())
    throw std::invalid_argument("vocabulary: expected axis:name, got '" + line + "'");
  return {line.substr(0, colon), line.substr(colon + 1)};
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("vocabulary: cannot read " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto [axis, name] = parse_label(line);
    v.add(axis, name);
  }
  return v;
}

}  // namespace mst::cond
