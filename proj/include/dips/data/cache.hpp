// Binary dataset cache for fast reloads.
//
// Layout (little-endian): magic "DIPSDATA", u32 version, u8 implicit flag,
// u64 user count, u64 item count, length-prefixed raw user ids, length-prefixed
// raw item ids, then per user a u64 event count followed by
// (i64 item, f64 rating, i64 timestamp) triples.
#pragma once

#include "dips/data/dataset.hpp"

#include <string>

namespace dips::data {

inline constexpr std::uint32_t kCacheVersion = 1;

void save_cache(const std::string& path, const Dataset& data);
Dataset load_cache(const std::string& path);

}  // namespace dips::data
