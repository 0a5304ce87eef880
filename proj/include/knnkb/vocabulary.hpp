#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "knnkb/error.hpp"

namespace knnkb {

using LabelId = std::uint32_t;

// Append-only bijection between dense label ids and label names.
class LabelVocabulary {
 public:
  LabelVocabulary() = default;

  explicit LabelVocabulary(std::vector<std::string> names) {
    for (auto& name : names) {
      if (index_.contains(name)) {
        fail(ErrorCode::kInvalidArgument, "duplicate label name '" + name + "'");
      }
      index_.emplace(name, static_cast<LabelId>(names_.size()));
      names_.push_back(std::move(name));
    }
  }

  LabelId intern(std::string_view name) {
    if (name.empty()) fail(ErrorCode::kInvalidArgument, "label name must not be empty");
    if (auto it = index_.find(std::string(name)); it != index_.end()) return it->second;
    const auto id = static_cast<LabelId>(names_.size());
    names_.emplace_back(name);
    index_.emplace(names_.back(), id);
    return id;
  }

  std::optional<LabelId> find(std::string_view name) const {
    if (auto it = index_.find(std::string(name)); it != index_.end()) return it->second;
    return std::nullopt;
  }

  const std::string& name(LabelId id) const {
    if (id >= names_.size()) {
      fail(ErrorCode::kNotFound, "unknown label id " + std::to_string(id));
    }
    return names_[id];
  }

  bool contains(LabelId id) const { return id < names_.size(); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, LabelId> index_;
};

}  // namespace knnkb
