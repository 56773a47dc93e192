#include "dips/data/dataset.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string_view>
#include <unordered_set>

namespace dips::data {

Index Catalog::add_user(const std::string& raw) {
  auto [it, inserted] = user_index.try_emplace(raw, num_users());
  if (inserted) user_ids.push_back(raw);
  return it->second;
}

Index Catalog::add_item(const std::string& raw) {
  auto [it, inserted] = item_index.try_emplace(raw, num_items());
  if (inserted) item_ids.push_back(raw);
  return it->second;
}

std::size_t Dataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& s : streams) n += s.events.size();
  return n;
}

void Dataset::validate() const {
  if (static_cast<Index>(streams.size()) != num_users()) {
    throw DataError("dataset: one stream per user required");
  }
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(num_items()), 0);
  for (Index u = 0; u < num_users(); ++u) {
    const auto& s = streams[u];
    if (s.user != u) throw DataError(fmt::format("dataset: stream {} labelled user {}", u, s.user));
    for (std::size_t i = 0; i < s.events.size(); ++i) {
      const auto& e = s.events[i];
      if (e.item < 0 || e.item >= num_items()) {
        throw DataError(fmt::format("dataset: user {} has item {} out of range", u, e.item));
      }
      if (seen[e.item]) throw DataError(fmt::format("dataset: user {} repeats item {}", u, e.item));
      seen[e.item] = 1;
      if (i > 0 && s.events[i - 1].timestamp > e.timestamp) {
        throw DataError(fmt::format("dataset: user {} stream is not time ordered", u));
      }
    }
    for (const auto& e : s.events) seen[e.item] = 0;
  }
}

Format parse_format(const std::string& s) {
  if (s == "movielens-dat") return Format::movielens_dat;
  if (s == "csv") return Format::csv;
  throw ConfigError(fmt::format("unknown dataset format '{}' (expected movielens-dat or csv)", s));
}

namespace {

struct RawRecord {
  std::string user;
  std::string item;
  double rating = 1.0;
  std::int64_t timestamp = 0;
};

std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Reads every record in file order. `has_rating` reports whether the source
// carried a rating column.
std::vector<RawRecord> read_records(const std::string& path, Format format, bool& has_rating) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open dataset '{}'", path));
  std::vector<RawRecord> records;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(fmt::format("{}:{}: {}", path, line_no, why));
  };
  has_rating = true;
  int col_user = 0, col_item = 1, col_rating = 2, col_time = 3;
  std::size_t columns = 4;
  if (format == Format::csv) {
    ++line_no;
    if (!std::getline(in, line)) fail("empty file, expected a header");
    auto header = split(trim(line), ",");
    col_user = col_item = col_rating = col_time = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
      const auto h = trim(header[i]);
      if (h == "user") col_user = static_cast<int>(i);
      else if (h == "item") col_item = static_cast<int>(i);
      else if (h == "rating") col_rating = static_cast<int>(i);
      else if (h == "timestamp") col_time = static_cast<int>(i);
    }
    if (col_user < 0 || col_item < 0 || col_time < 0) {
      fail("csv header must name the columns user, item, timestamp and optionally rating");
    }
    has_rating = col_rating >= 0;
    columns = header.size();
  }
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    auto fields = format == Format::csv ? split(view, ",") : split(view, "::");
    if (fields.size() != columns) {
      fail(fmt::format("expected {} fields, found {}", columns, fields.size()));
    }
    RawRecord r;
    r.user = std::string(trim(fields[col_user]));
    r.item = std::string(trim(fields[col_item]));
    if (r.user.empty() || r.item.empty()) fail("empty user or item id");
    if (has_rating && (!parse_number(fields[col_rating], r.rating) || !std::isfinite(r.rating))) {
      fail(fmt::format("invalid rating '{}'", fields[col_rating]));
    }
    if (!parse_number(fields[col_time], r.timestamp)) {
      fail(fmt::format("invalid timestamp '{}'", fields[col_time]));
    }
    records.push_back(std::move(r));
  }
  return records;
}

// Groups records per user (first occurrence of a user/item pair wins), sorts
// each stream by timestamp with file order breaking ties, drops short users
// and assigns dense ids in order of first appearance.
Dataset assemble(const std::vector<RawRecord>& records, Index min_user, bool implicit,
                 const std::string& path) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_user;
  std::vector<std::string> user_order;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = by_user.try_emplace(records[i].user);
    if (inserted) user_order.push_back(records[i].user);
    it->second.push_back(i);
  }
  Dataset d;
  d.implicit = implicit;
  for (const auto& raw_user : user_order) {
    std::vector<std::size_t> idx;
    std::unordered_set<std::string> items;
    for (std::size_t i : by_user[raw_user]) {
      if (items.insert(records[i].item).second) idx.push_back(i);
    }
    if (static_cast<Index>(idx.size()) < min_user) continue;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return records[a].timestamp < records[b].timestamp;
    });
    UserStream s;
    s.user = d.catalog.add_user(raw_user);
    for (std::size_t i : idx) {
      s.events.push_back({d.catalog.add_item(records[i].item), records[i].rating,
                          records[i].timestamp});
    }
    d.streams.push_back(std::move(s));
  }
  if (d.streams.empty()) throw DataError(fmt::format("{}: no users left after loading", path));
  return d;
}

}  // namespace

Dataset load_explicit(const std::string& path, Format format, const LoadOptions& options) {
  bool has_rating = true;
  auto records = read_records(path, format, has_rating);
  if (!has_rating) throw DataError(fmt::format("{}: explicit data needs a rating column", path));
  return assemble(records, options.min_user_ratings, false, path);
}

Dataset load_implicit(const std::string& path, Format format, const LoadOptions& options) {
  bool has_rating = true;
  auto records = read_records(path, format, has_rating);
  std::vector<RawRecord> kept;
  kept.reserve(records.size());
  for (auto& r : records) {
    if (has_rating && !(r.rating > options.implicit_threshold)) continue;
    r.rating = 1.0;
    kept.push_back(std::move(r));
  }
  return assemble(kept, options.min_user_ratings, true, path);
}

Dataset k_core_filter(const Dataset& data, Index k) {
  if (k < 1) throw InvalidArgument(fmt::format("k_core_filter: k = {} must be >= 1", k));
  const Index n = data.num_users(), m = data.num_items();
  std::vector<std::uint8_t> user_alive(n, 1), item_alive(m, 1);
  std::vector<Index> user_deg(n, 0), item_deg(m, 0);
  for (const auto& s : data.streams) {
    user_deg[s.user] = s.length();
    for (const auto& e : s.events) ++item_deg[e.item];
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (Index u = 0; u < n; ++u) {
      if (!user_alive[u] || user_deg[u] >= k) continue;
      user_alive[u] = 0;
      changed = true;
      for (const auto& e : data.streams[u].events) {
        if (item_alive[e.item]) --item_deg[e.item];
      }
    }
    for (Index j = 0; j < m; ++j) {
      if (item_alive[j] && item_deg[j] < k) {
        item_alive[j] = 0;
        changed = true;
      }
    }
    if (!changed) break;
    // Recount user degrees over surviving items.
    std::fill(user_deg.begin(), user_deg.end(), 0);
    for (Index u = 0; u < n; ++u) {
      if (!user_alive[u]) continue;
      for (const auto& e : data.streams[u].events) user_deg[u] += item_alive[e.item];
    }
    std::fill(item_deg.begin(), item_deg.end(), 0);
    for (Index u = 0; u < n; ++u) {
      if (!user_alive[u]) continue;
      for (const auto& e : data.streams[u].events) {
        if (item_alive[e.item]) ++item_deg[e.item];
      }
    }
  }
  Dataset out;
  out.implicit = data.implicit;
  for (Index u = 0; u < n; ++u) {
    if (!user_alive[u]) continue;
    UserStream s;
    s.user = out.catalog.add_user(data.catalog.user_ids[u]);
    for (const auto& e : data.streams[u].events) {
      if (!item_alive[e.item]) continue;
      s.events.push_back({out.catalog.add_item(data.catalog.item_ids[e.item]), e.rating, e.timestamp});
    }
    out.streams.push_back(std::move(s));
  }
  if (out.streams.empty()) {
    throw DataError(fmt::format(
        "k_core_filter: no users survive the {}-core ({} users, {} items, {} interactions in)", k,
        n, m, data.num_interactions()));
  }
  return out;
}

Split split_users(const std::vector<UserStream>& streams, const SplitSpec& spec) {
  const double total = spec.train + spec.valid + spec.test;
  if (spec.train < 0 || spec.valid < 0 || spec.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("split fractions must be nonnegative and sum to 1 (got {}, {}, {})",
                                  spec.train, spec.valid, spec.test));
  }
  const std::size_t n = streams.size();
  if (n < 5) throw DataError(fmt::format("split_users: need at least 5 users, have {}", n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle.
  std::mt19937_64 rng(spec.seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train * n));
  const auto n_valid =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(spec.valid * n)));
  Split s;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& stream = streams[order[i]];
    if (i < n_train) s.train.push_back(stream);
    else if (i < n_train + n_valid) s.valid.push_back(stream);
    else s.test.push_back(stream);
  }
  return s;
}

}  // namespace dips::data
