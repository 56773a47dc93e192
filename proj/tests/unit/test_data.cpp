#include "dips/common/error.hpp"
#include "dips/data/cache.hpp"
#include "dips/data/dataset.hpp"
#include "dips/data/synth.hpp"

#include <doctest.h>
#include <fmt/format.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

using namespace dips;
using namespace dips::data;

namespace {

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name, const std::string& content = "")
      : path(std::filesystem::temp_directory_path() / name) {
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::filesystem::remove(path); }
  std::string str() const { return path.string(); }
};

std::string ml_lines(const std::string& user, int count, int first_item = 0) {
  std::string s;
  for (int i = 0; i < count; ++i) {
    s += fmt::format("{}::{}::{}::{}\n", user, first_item + i, 1 + i % 5, 1000 + i);
  }
  return s;
}

// Independent peeling oracle: removes one offending user or item at a time.
std::set<std::pair<std::string, std::string>> peel(std::set<std::pair<std::string, std::string>> e,
                                                   int k) {
  while (true) {
    std::map<std::string, int> du, di;
    for (auto& [u, i] : e) {
      ++du[u];
      ++di[i];
    }
    bool removed = false;
    for (auto it = e.begin(); it != e.end();) {
      if (du[it->first] < k || di[it->second] < k) {
        it = e.erase(it);
        removed = true;
      } else {
        ++it;
      }
    }
    if (!removed) return e;
  }
}

std::set<std::pair<std::string, std::string>> edges(const Dataset& d) {
  std::set<std::pair<std::string, std::string>> e;
  for (const auto& s : d.streams) {
    for (const auto& x : s.events) e.emplace(d.catalog.user_ids[s.user], d.catalog.item_ids[x.item]);
  }
  return e;
}

}  // namespace

TEST_CASE("movielens-dat record parsing") {
  TempFile f("dips_ml1.dat", "1::1193::5::978300760\n");
  Dataset d = load_explicit(f.str(), Format::movielens_dat);
  REQUIRE(d.num_users() == 1);
  REQUIRE(d.streams[0].events.size() == 1);
  CHECK(d.catalog.user_ids[0] == "1");
  CHECK(d.catalog.item_ids[d.streams[0].events[0].item] == "1193");
  CHECK(d.streams[0].events[0].rating == 5.0);
  CHECK(d.streams[0].events[0].timestamp == 978300760);
}

TEST_CASE("users below the minimum rating count are excluded") {
  TempFile f("dips_ml2.dat", ml_lines("a", 19) + ml_lines("b", 20));
  LoadOptions opt;
  opt.min_user_ratings = 20;
  Dataset d = load_explicit(f.str(), Format::movielens_dat, opt);
  REQUIRE(d.num_users() == 1);
  CHECK(d.catalog.user_ids[0] == "b");
  d.validate();
}

TEST_CASE("streams are sorted by timestamp with file order breaking ties") {
  std::mt19937_64 rng(3);
  std::vector<std::pair<long, int>> rows;
  for (int i = 0; i < 200; ++i) rows.emplace_back(std::uniform_int_distribution<long>(0, 50)(rng), i);
  std::string csv = "user,item,rating,timestamp\n";
  for (auto& [ts, item] : rows) csv += fmt::format("u,{},3,{}\n", item, ts);
  TempFile f("dips_sort.csv", csv);
  Dataset d = load_explicit(f.str(), Format::csv);
  auto want = rows;
  std::stable_sort(want.begin(), want.end(),
                   [](auto& a, auto& b) { return a.first < b.first; });
  REQUIRE(d.streams[0].events.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(d.streams[0].events[i].timestamp == want[i].first);
    CHECK(d.catalog.item_ids[d.streams[0].events[i].item] == std::to_string(want[i].second));
  }
}

TEST_CASE("repeated user-item pairs keep the first occurrence") {
  TempFile f("dips_dup.csv", "user,item,rating,timestamp\nu,x,1,5\nu,y,2,6\nu,x,4,7\n");
  Dataset d = load_explicit(f.str(), Format::csv);
  REQUIRE(d.streams[0].events.size() == 2);
  CHECK(d.streams[0].events[0].rating == 1.0);
}

TEST_CASE("malformed lines report their line number") {
  TempFile f("dips_bad.dat", "1::2::3::4\n1::2::x::5\n");
  try {
    load_explicit(f.str(), Format::movielens_dat);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  TempFile g("dips_bad2.dat", "1::2::3\n");
  CHECK_THROWS_AS(load_explicit(g.str(), Format::movielens_dat), DataError);
  TempFile h("dips_empty.csv", "user,item,rating,timestamp\n");
  CHECK_THROWS_AS(load_explicit(h.str(), Format::csv), DataError);
  CHECK_THROWS_AS(load_explicit("/nonexistent/file.csv", Format::csv), DataError);
}

TEST_CASE("implicit threshold is strict and flag logs keep every event") {
  TempFile f("dips_imp.csv", "user,item,rating,timestamp\nu,a,3.5,1\nu,b,4.0,2\nu,c,2,3\n");
  Dataset d = load_implicit(f.str());
  REQUIRE(d.streams[0].events.size() == 1);
  CHECK(d.catalog.item_ids[d.streams[0].events[0].item] == "b");
  CHECK(d.streams[0].events[0].rating == 1.0);
  CHECK(d.implicit);
  TempFile g("dips_flag.csv", "user,item,timestamp\nu,a,1\nu,b,2\nv,a,3\n");
  Dataset e = load_implicit(g.str());
  CHECK(e.num_interactions() == 3);
}

TEST_CASE("k-core filtering") {
  SUBCASE("an existing k-core is unchanged") {
    std::string s;
    for (int u = 0; u < 3; ++u) s += ml_lines(std::to_string(u), 3);
    TempFile f("dips_core.dat", s);
    Dataset d = load_explicit(f.str(), Format::movielens_dat);
    Dataset c = k_core_filter(d, 3);
    CHECK(edges(c) == edges(d));
  }
  SUBCASE("a star graph has an empty 2-core") {
    TempFile f("dips_star.dat", ml_lines("1", 10));
    Dataset d = load_explicit(f.str(), Format::movielens_dat);
    CHECK_THROWS_AS(k_core_filter(d, 2), DataError);
  }
  SUBCASE("random bipartite graphs match a peeling oracle, and filtering is idempotent") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
      std::string s;
      int ts = 0;
      for (int u = 0; u < 40; ++u) {
        const int deg = std::uniform_int_distribution<int>(1, 12)(rng);
        for (int i = 0; i < deg; ++i) {
          s += fmt::format("{}::{}::3::{}\n", u, std::uniform_int_distribution<int>(0, 30)(rng), ++ts);
        }
      }
      TempFile f("dips_rand.dat", s);
      Dataset d = load_explicit(f.str(), Format::movielens_dat);
      auto want = peel(edges(d), 4);
      if (want.empty()) {
        CHECK_THROWS_AS(k_core_filter(d, 4), DataError);
        continue;
      }
      Dataset c = k_core_filter(d, 4);
      c.validate();
      CHECK(edges(c) == want);
      CHECK(edges(k_core_filter(c, 4)) == want);
    }
  }
}

TEST_CASE("re-indexing round trips raw ids") {
  TempFile f("dips_ids.csv", "user,item,rating,timestamp\nalice,x9,4,1\nbob,x2,3,2\nalice,x2,5,3\n");
  Dataset d = load_explicit(f.str(), Format::csv);
  for (Index u = 0; u < d.num_users(); ++u) CHECK(d.catalog.user_index.at(d.catalog.user_ids[u]) == u);
  for (Index j = 0; j < d.num_items(); ++j) CHECK(d.catalog.item_index.at(d.catalog.item_ids[j]) == j);
}

TEST_CASE("user split sizes, determinism and partition") {
  std::vector<UserStream> s(10);
  for (Index u = 0; u < 10; ++u) s[u].user = u;
  Split a = split_users(s, {.seed = 5});
  CHECK(a.train.size() == 6);
  CHECK(a.valid.size() == 2);
  CHECK(a.test.size() == 2);
  Split b = split_users(s, {.seed = 5});
  auto ids = [](const std::vector<UserStream>& v) {
    std::vector<Index> out;
    for (auto& x : v) out.push_back(x.user);
    return out;
  };
  CHECK(ids(a.train) == ids(b.train));
  CHECK(ids(a.test) == ids(b.test));
  std::set<Index> all;
  for (auto* part : {&a.train, &a.valid, &a.test}) {
    for (Index u : ids(*part)) CHECK(all.insert(u).second);
  }
  CHECK(all.size() == 10);
  CHECK_THROWS_AS(split_users(std::vector<UserStream>(4), {}), DataError);
  CHECK_THROWS_AS(split_users(s, {.train = 0.5, .valid = 0.2, .test = 0.2}), ConfigError);
}

TEST_CASE("synthetic streams: ordering, uniqueness, anchors first") {
  for (bool implicit : {false, true}) {
    SynthConfig cfg;
    cfg.num_users = 50;
    cfg.num_items = 120;
    cfg.length = 30;
    cfg.num_anchor_items = 20;
    cfg.implicit = implicit;
    Dataset d = synth_stream(cfg, 7);
    d.validate();
    CHECK(d.implicit == implicit);
    for (const auto& s : d.streams) {
      REQUIRE(s.length() == 30);
      for (Index i = 0; i < s.length(); ++i) {
        CHECK((s.events[i].item < 20) == (i < cfg.anchors_per_user));
        if (i > 0) CHECK(s.events[i].timestamp > s.events[i - 1].timestamp);
      }
    }
    Dataset again = synth_stream(cfg, 7);
    CHECK(edges(again) == edges(d));
  }
}

TEST_CASE("synthetic ratings follow the planted factors") {
  SynthConfig cfg;
  cfg.num_users = 30;
  cfg.num_items = 100;
  cfg.length = 20;
  cfg.num_anchor_items = 10;
  cfg.filler_noise = 0.0;
  cfg.anchor_noise = 0.0;
  SynthTruth truth;
  Dataset d = synth_stream(cfg, 3, &truth);
  for (const auto& s : d.streams) {
    for (const auto& e : s.events) {
      const double want = cfg.mean_rating + truth.item_bias[e.item] +
                          truth.user_factors.row(s.user).dot(truth.item_factors.row(e.item));
      CHECK(e.rating == doctest::Approx(want).epsilon(1e-12));
    }
  }
  // Without anchor weight the rating of an item does not depend on the user.
  cfg.anchor_weight = 0.0;
  Dataset flat = synth_stream(cfg, 3, &truth);
  for (const auto& s : flat.streams) {
    for (const auto& e : s.events) {
      CHECK(e.rating == doctest::Approx(cfg.mean_rating + truth.item_bias[e.item]).epsilon(1e-12));
    }
  }
}

TEST_CASE("dataset cache round trip and version check") {
  SynthConfig cfg;
  cfg.num_users = 20;
  cfg.num_items = 80;
  cfg.length = 10;
  Dataset d = synth_stream(cfg, 1);
  const auto path = (std::filesystem::temp_directory_path() / "dips_cache.bin").string();
  save_cache(path, d);
  Dataset e = load_cache(path);
  CHECK(e.catalog.user_ids == d.catalog.user_ids);
  CHECK(e.catalog.item_ids == d.catalog.item_ids);
  for (Index u = 0; u < d.num_users(); ++u) {
    for (std::size_t i = 0; i < d.streams[u].events.size(); ++i) {
      CHECK(e.streams[u].events[i].item == d.streams[u].events[i].item);
      CHECK(e.streams[u].events[i].rating == d.streams[u].events[i].rating);
    }
  }
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t bad = 99;
    f.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
  }
  CHECK_THROWS_AS(load_cache(path), DataError);
  std::filesystem::remove(path);
}
