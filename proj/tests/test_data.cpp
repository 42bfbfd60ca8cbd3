#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "mcan/data.hpp"
#include "mcan/errors.hpp"
#include "support.hpp"

using namespace mcan;

namespace {

CategoryTaxonomy two_level() { return CategoryTaxonomy({"tee", "shirt", "jeans"}, {0, 0, 1}, {"top", "bottom"}); }

Dataset tiny() {
  std::vector<Item> items{{1, {0.5, 1.0}, 0}, {2, {-1.0, 0.25}, 2}, {3, {0.0, 2.0}, 1}, {4, {3.0, -3.0}, 2}};
  std::vector<Outfit> outfits{{10, Split::train, {1, 2}}, {11, Split::test, {3, 4}}};
  return Dataset(2, two_level(), items, outfits);
}

std::string to_text(const Dataset& d) {
  std::ostringstream os;
  write_dataset(d, os);
  return os.str();
}

Dataset from_text(const std::string& s) {
  std::istringstream is(s);
  return read_dataset(is);
}

}  // namespace

TEST_CASE("taxonomy lookups") {
  auto tax = two_level();
  CHECK(tax.num_fine() == 3);
  CHECK(tax.num_coarse() == 2);
  CHECK(tax.coarse_of(0) == 0);
  CHECK(tax.coarse_of(1) == 0);
  CHECK(tax.coarse_of(2) == 1);
  CHECK_THROWS_AS(tax.coarse_of(3), LookupError);
  CHECK_THROWS_AS(CategoryTaxonomy({"a b"}, {0}, {"c"}), ValidationError);
  CHECK_THROWS_AS(CategoryTaxonomy({"a", "a"}, {0, 0}, {"c"}), ValidationError);
  CHECK_THROWS_AS(CategoryTaxonomy({"a"}, {1}, {"c"}), ValidationError);
}

TEST_CASE("random taxonomy agrees with its map table") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t nc = 1 + rng() % 4, nf = nc + rng() % 6;
    std::vector<std::string> fine, coarse;
    std::vector<CategoryId> map;
    for (std::size_t c = 0; c < nc; ++c) coarse.push_back("c" + std::to_string(c));
    for (std::size_t f = 0; f < nf; ++f) {
      fine.push_back("f" + std::to_string(f));
      map.push_back(f < nc ? f : rng() % nc);
    }
    CategoryTaxonomy tax(fine, map, coarse);
    for (std::size_t f = 0; f < nf; ++f) CHECK(tax.coarse_of(f) == map[f]);
  }
}

TEST_CASE("minimal dataset") {
  Dataset d(2, two_level(), {{1, {0, 0}, 0}, {2, {1, 1}, 2}}, {{5, Split::train, {1, 2}}});
  CHECK(d.outfits().size() == 1);
  CHECK(d.outfit(5).item_ids.size() == 2);
  CHECK(d.category_of(2, Granularity::coarse) == 1);
  CHECK_THROWS_AS(d.item(9), LookupError);
  CHECK_THROWS_AS(d.outfit(9), LookupError);
}

TEST_CASE("dataset validation") {
  auto tax = two_level();
  std::vector<Item> items{{1, {0, 0}, 0}, {2, {1, 1}, 1}, {3, {1, 1}, 2}};
  CHECK_THROWS_AS(Dataset(2, tax, items, {{1, Split::train, {1, 9}}}), ValidationError);
  CHECK_THROWS_AS(Dataset(2, tax, items, {{1, Split::train, {1}}}), ValidationError);
  CHECK_THROWS_AS(Dataset(2, tax, items, {{1, Split::train, {1, 1}}}), ValidationError);
  CHECK_THROWS_AS(Dataset(3, tax, items, {}), ValidationError);
  CHECK_THROWS_AS(Dataset(2, tax, {{1, {0, 0}, 7}}, {}), ValidationError);
  CHECK_THROWS_AS(Dataset(2, tax, {{1, {0, 0}, 0}, {1, {0, 0}, 1}}, {}), ValidationError);
  CHECK_THROWS_AS(Dataset(2, tax, {{1, {0, std::nan("")}, 0}}, {}), ValidationError);
  // Two items of fine category 0 and 1 share coarse 0 but are distinct fines: accepted.
  CHECK_NOTHROW(Dataset(2, tax, items, {{1, Split::train, {1, 2}}}));
  std::vector<Item> dup{{1, {0, 0}, 0}, {2, {1, 1}, 0}};
  try {
    Dataset(2, tax, dup, {{42, Split::train, {1, 2}}});
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("42") != std::string::npos);
  }
}

TEST_CASE("category subsets") {
  Dataset d = tiny();
  CHECK(d.category_subset(0, Granularity::fine) == std::vector<ItemId>{1});
  CHECK(d.category_subset(2, Granularity::fine) == std::vector<ItemId>{2, 4});
  CHECK(d.category_subset(0, Granularity::coarse) == std::vector<ItemId>{1, 3});
  CHECK_THROWS_AS(d.category_subset(5, Granularity::fine), LookupError);
}

TEST_CASE("category subsets agree with a linear scan") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Dataset d = test::small_dataset(seed);
    const auto& tax = d.taxonomy();
    for (Granularity g : {Granularity::fine, Granularity::coarse}) {
      for (CategoryId c = 0; c < tax.count(g); ++c) {
        std::vector<ItemId> want;
        for (const auto& it : d.items()) {
          CategoryId have = g == Granularity::fine ? it.fine_category : tax.coarse_of(it.fine_category);
          if (have == c) want.push_back(it.id);
        }
        std::sort(want.begin(), want.end());
        CHECK(d.category_subset(c, g) == want);
      }
    }
    for (CategoryId c = 0; c < tax.num_coarse(); ++c) {
      std::set<ItemId> joined;
      for (CategoryId f = 0; f < tax.num_fine(); ++f)
        if (tax.coarse_of(f) == c)
          for (ItemId id : d.category_subset(f, Granularity::fine)) joined.insert(id);
      const auto& coarse = d.category_subset(c, Granularity::coarse);
      CHECK(std::vector<ItemId>(joined.begin(), joined.end()) == coarse);
    }
  }
}

TEST_CASE("serialization round trip") {
  Dataset d = tiny();
  std::string a = to_text(d);
  Dataset back = from_text(a);
  CHECK(back == d);
  CHECK(to_text(back) == a);
  CHECK(to_text(d) == a);

  Dataset big = test::small_dataset();
  std::string b = to_text(big);
  CHECK(from_text(b) == big);
  CHECK(to_text(from_text(b)) == b);
}

TEST_CASE("features survive text round trip bit for bit") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  std::vector<Item> items;
  for (ItemId i = 0; i < 50; ++i) items.push_back({i, {u(rng), u(rng) * 1e-300, 1.0 / 3.0}, 0});
  Dataset d(3, CategoryTaxonomy({"f"}, {0}, {"c"}), items, {});
  Dataset back = from_text(to_text(d));
  for (std::size_t i = 0; i < items.size(); ++i) CHECK(back.items()[i].features == items[i].features);
}

TEST_CASE("dataset without outfits") {
  Dataset d(1, CategoryTaxonomy({"f"}, {0}, {"c"}), {{0, {1.0}, 0}}, {});
  std::string s = to_text(d);
  CHECK(s.find("O ") == std::string::npos);
  CHECK(from_text(s) == d);
}

TEST_CASE("parse errors carry the line number") {
  std::string good = to_text(tiny());
  auto expect_line = [](const std::string& text, const std::string& needle) {
    try {
      from_text(text);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_line("H 2\nX 1\n", "line 2");
  expect_line("H 2\nT coarse 0 top\nT fine 0 tee 0\nI 1 0 0.5\n", "line 4");
  expect_line("H 2\nT coarse 0 top\nT fine 0 tee 0\nI 1 0 0.5 abc\n", "line 4");
  expect_line("I 1 0 0.5 1\n", "line 1");
  CHECK_THROWS_AS(from_text(""), ParseError);
  CHECK_THROWS_AS(from_text(good + "O 99 train 1 77\n"), ValidationError);
}

TEST_CASE("file io") {
  test::TempDir dir;
  Dataset d = tiny();
  save_dataset(d, dir / "d.txt");
  CHECK(load_dataset(dir / "d.txt") == d);
  CHECK_THROWS_AS(load_dataset(dir / "missing.txt"), IoError);
  CHECK_THROWS_AS(save_dataset(d, dir / "no" / "such" / "dir.txt"), IoError);
}

TEST_CASE("tuples and splits") {
  Dataset d = tiny();
  auto t = as_tuples(d.outfit(10), Granularity::coarse);
  REQUIRE(t.size() == 2);
  CHECK(t[0] == TupleEntry{1, Granularity::coarse});
  CHECK(d.category_ref(t[1]) == CategoryRef{1, Granularity::coarse});
  CHECK(d.outfits_in(Split::train).size() == 1);
  CHECK(d.outfits_in(Split::val).empty());
  CHECK(d.outfits_of(3) == std::vector<OutfitId>{11});
  CHECK(parse_split("val") == Split::val);
  CHECK_THROWS_AS(parse_split("dev"), ParseError);
  CHECK(parse_granularity("coarse") == Granularity::coarse);
}
