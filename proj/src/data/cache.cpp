#include "dips/data/cache.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>

namespace dips::data {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'P', 'S', 'D', 'A', 'T', 'A'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::ifstream& in, const std::string& path) : in_(in), path_(path) {}

  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw DataError(fmt::format("{}: truncated dataset cache", path_));
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (n > (1u << 20)) throw DataError(fmt::format("{}: corrupt id length", path_));
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw DataError(fmt::format("{}: truncated dataset cache", path_));
    return s;
  }

 private:
  std::ifstream& in_;
  const std::string& path_;
};

}  // namespace

void save_cache(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path));
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCacheVersion);
  put<std::uint8_t>(out, data.implicit ? 1 : 0);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(data.num_users()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(data.num_items()));
  for (const auto& id : data.catalog.user_ids) put_string(out, id);
  for (const auto& id : data.catalog.item_ids) put_string(out, id);
  for (const auto& s : data.streams) {
    put<std::uint64_t>(out, s.events.size());
    for (const auto& e : s.events) {
      put<std::int64_t>(out, e.item);
      put<double>(out, e.rating);
      put<std::int64_t>(out, e.timestamp);
    }
  }
  if (!out) throw DataError(fmt::format("failed writing '{}'", path));
}

Dataset load_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open dataset cache '{}'", path));
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(fmt::format("{}: not a dataset cache", path));
  }
  Reader r(in, path);
  const auto version = r.get<std::uint32_t>();
  if (version != kCacheVersion) {
    throw DataError(fmt::format("{}: cache version {} (this build reads {})", path, version,
                                kCacheVersion));
  }
  Dataset d;
  d.implicit = r.get<std::uint8_t>() != 0;
  const auto n = r.get<std::uint64_t>();
  const auto m = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) d.catalog.add_user(r.get_string());
  for (std::uint64_t i = 0; i < m; ++i) d.catalog.add_item(r.get_string());
  if (static_cast<std::uint64_t>(d.num_users()) != n || static_cast<std::uint64_t>(d.num_items()) != m) {
    throw DataError(fmt::format("{}: duplicate raw ids in cache", path));
  }
  d.streams.resize(n);
  for (std::uint64_t u = 0; u < n; ++u) {
    auto& s = d.streams[u];
    s.user = static_cast<Index>(u);
    const auto len = r.get<std::uint64_t>();
    if (len > m) throw DataError(fmt::format("{}: corrupt stream length", path));
    s.events.resize(len);
    for (auto& e : s.events) {
      e.item = r.get<std::int64_t>();
      e.rating = r.get<double>();
      e.timestamp = r.get<std::int64_t>();
    }
  }
  d.validate();
  return d;
}

}  // namespace dips::data
