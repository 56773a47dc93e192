// Fixed-capacity per-user sketches of past interactions.
#pragma once

#include "dips/ad/tensor.hpp"

#include <cstdint>
#include <vector>

namespace dips::policy {

using ad::Index;
using ad::Matrix;

struct SketchEntry {
  Index item = 0;
  double rating = 0.0;
  Index step = 0;  // 1-based position in the user's stream
};

class Sketch {
 public:
  Sketch() = default;
  Sketch(Index capacity, Index num_items);

  Index capacity() const { return capacity_; }
  Index num_items() const { return num_items_; }
  Index size() const { return static_cast<Index>(entries_.size()); }
  bool full() const { return size() >= capacity_; }
  bool contains(Index item) const;
  const std::vector<SketchEntry>& entries() const { return entries_; }
  std::vector<Index> items() const;

  // Rejects duplicates and insertion into a full sketch.
  void insert(const SketchEntry& e);
  void replace(Index slot, const SketchEntry& e);
  void erase_item(Index item);
  // Keeps exactly the given entries, in the given order.
  void assign(std::vector<SketchEntry> entries);

  // 1 x M indicator z.
  Matrix indicator() const;
  // Throws if the entries, membership flags and capacity disagree.
  void check() const;

 private:
  Index capacity_ = 0;
  Index num_items_ = 0;
  std::vector<SketchEntry> entries_;
  std::vector<std::uint8_t> member_;
};

// A sketch plus the incoming items waiting for the next selection.
struct IntermediateSketch {
  std::vector<SketchEntry> entries;  // sketch entries first, then incoming
  Index num_items = 0;

  static IntermediateSketch from(const Sketch& base, const std::vector<SketchEntry>& incoming);
  Index size() const { return static_cast<Index>(entries.size()); }
  std::vector<Index> items() const;
  std::vector<double> ratings() const;
  // 1 x M indicator z_hat.
  Matrix indicator() const;
};

}  // namespace dips::policy
