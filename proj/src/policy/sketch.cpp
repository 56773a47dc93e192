#include "dips/policy/sketch.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

namespace dips::policy {

Sketch::Sketch(Index capacity, Index num_items)
    : capacity_(capacity), num_items_(num_items), member_(static_cast<std::size_t>(num_items), 0) {
  if (capacity < 1) throw InvalidArgument(fmt::format("sketch: capacity {} must be >= 1", capacity));
  if (num_items < 1) throw InvalidArgument("sketch: item count must be positive");
  entries_.reserve(static_cast<std::size_t>(capacity));
}

bool Sketch::contains(Index item) const {
  return item >= 0 && item < num_items_ && member_[item] != 0;
}

std::vector<Index> Sketch::items() const {
  std::vector<Index> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.item);
  return out;
}

void Sketch::insert(const SketchEntry& e) {
  if (e.item < 0 || e.item >= num_items_) {
    throw InvalidArgument(fmt::format("sketch: item {} out of range [0, {})", e.item, num_items_));
  }
  if (contains(e.item)) throw InvalidArgument(fmt::format("sketch: item {} already present", e.item));
  if (full()) throw InvalidArgument("sketch: insert into a full sketch");
  entries_.push_back(e);
  member_[e.item] = 1;
}

void Sketch::replace(Index slot, const SketchEntry& e) {
  if (slot < 0 || slot >= size()) throw InvalidArgument("sketch: replace slot out of range");
  if (contains(e.item)) throw InvalidArgument(fmt::format("sketch: item {} already present", e.item));
  member_[entries_[slot].item] = 0;
  entries_[slot] = e;
  member_[e.item] = 1;
}

void Sketch::erase_item(Index item) {
  for (auto it = entries_.begin(); it != entries_.end(); ++it) {
    if (it->item == item) {
      member_[item] = 0;
      entries_.erase(it);
      return;
    }
  }
  throw InvalidArgument(fmt::format("sketch: item {} not present", item));
}

void Sketch::assign(std::vector<SketchEntry> entries) {
  if (static_cast<Index>(entries.size()) > capacity_) {
    throw InvalidArgument(
        fmt::format("sketch: {} entries exceed capacity {}", entries.size(), capacity_));
  }
  for (const auto& e : entries_) member_[e.item] = 0;
  entries_.clear();
  for (const auto& e : entries) insert(e);
}

Matrix Sketch::indicator() const {
  Matrix z = Matrix::Zero(1, num_items_);
  for (const auto& e : entries_) z(0, e.item) = 1.0;
  return z;
}

void Sketch::check() const {
  if (size() > capacity_) throw InvalidArgument("sketch: over capacity");
  Index members = 0;
  for (auto m : member_) members += m;
  if (members != size()) throw InvalidArgument("sketch: membership flags disagree with entries");
  for (const auto& e : entries_) {
    if (!member_[e.item]) throw InvalidArgument("sketch: entry missing from membership flags");
  }
}

IntermediateSketch IntermediateSketch::from(const Sketch& base,
                                            const std::vector<SketchEntry>& incoming) {
  IntermediateSketch s;
  s.num_items = base.num_items();
  s.entries = base.entries();
  for (const auto& e : incoming) {
    if (base.contains(e.item)) {
      throw InvalidArgument(fmt::format("intermediate sketch: item {} already present", e.item));
    }
    s.entries.push_back(e);
  }
  return s;
}

std::vector<Index> IntermediateSketch::items() const {
  std::vector<Index> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.item);
  return out;
}

std::vector<double> IntermediateSketch::ratings() const {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.rating);
  return out;
}

Matrix IntermediateSketch::indicator() const {
  Matrix z = Matrix::Zero(1, num_items);
  for (const auto& e : entries) z(0, e.item) += 1.0;
  return z;
}

}  // namespace dips::policy
