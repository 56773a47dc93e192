// Interaction logs: loading, k-core filtering and user splits.
#pragma once

#include "dips/ad/tensor.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace dips::data {

using ad::Index;

struct Interaction {
  Index item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

// One user's chronologically ordered, duplicate-free interactions.
struct UserStream {
  Index user = 0;
  std::vector<Interaction> events;

  Index length() const { return static_cast<Index>(events.size()); }
};

// Dense ids [0, N) and [0, M) mapped to and from the raw ids of the source.
struct Catalog {
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, Index> user_index;
  std::unordered_map<std::string, Index> item_index;

  Index num_users() const { return static_cast<Index>(user_ids.size()); }
  Index num_items() const { return static_cast<Index>(item_ids.size()); }
  Index add_user(const std::string& raw);
  Index add_item(const std::string& raw);
};

struct Dataset {
  Catalog catalog;
  std::vector<UserStream> streams;  // streams[u].user == u
  bool implicit = false;

  Index num_users() const { return catalog.num_users(); }
  Index num_items() const { return catalog.num_items(); }
  std::size_t num_interactions() const;
  // Throws DataError if ids are not dense, streams are unsorted, or an item
  // repeats within a stream.
  void validate() const;
};

enum class Format { movielens_dat, csv };
Format parse_format(const std::string& s);

struct LoadOptions {
  Index min_user_ratings = 0;  // users with fewer ratings are dropped
  double implicit_threshold = 3.5;
};

// Explicit ratings. movielens-dat lines are UserID::MovieID::Rating::Timestamp;
// csv files carry the header user,item,rating,timestamp.
Dataset load_explicit(const std::string& path, Format format, const LoadOptions& options = {});

// Implicit feedback. With a rating column only ratings strictly above the
// threshold are kept; a csv with header user,item,timestamp keeps every event.
Dataset load_implicit(const std::string& path, Format format = Format::csv,
                      const LoadOptions& options = {});

// Repeatedly drops users and items with fewer than k interactions, then
// re-indexes densely.
Dataset k_core_filter(const Dataset& data, Index k);

struct SplitSpec {
  double train = 0.6;
  double valid = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<UserStream> train;
  std::vector<UserStream> valid;
  std::vector<UserStream> test;
};

Split split_users(const std::vector<UserStream>& streams, const SplitSpec& spec);

}  // namespace dips::data
