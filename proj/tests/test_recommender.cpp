#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "mcan/errors.hpp"
#include "mcan/recommender.hpp"
#include "model_oracle.hpp"
#include "support.hpp"

using namespace mcan;

namespace {

struct Rig {
  Dataset ds = test::small_dataset();
  McanParams p = test::random_params(test::small_model(ds), 41);
  CandidatePools pools{ds};
};

Query parse(const std::string& text) {
  std::istringstream is(text);
  return read_query(is);
}

}  // namespace

TEST_CASE("item recommendation ranks the pool") {
  Rig r;
  TupleSeq given{{r.ds.outfits()[0].item_ids[0], Granularity::fine}};
  CategoryRef cat{1, Granularity::fine};
  const auto& pool = r.pools.of(cat);
  auto probs = oracle::item_distribution(r.p, r.ds, given, cat, pool);
  auto top = recommend_item(r.p, r.ds, given, cat, r.pools, 3);
  REQUIRE(top.size() == 3);
  auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
  CHECK(top[0].first == pool[best]);
  CHECK(top[0].second == doctest::Approx(probs[best]).epsilon(1e-12));
  CHECK(top[0].second >= top[1].second);
  CHECK(top[1].second >= top[2].second);

  auto all = recommend_item(r.p, r.ds, given, cat, r.pools, 1000);
  CHECK(all.size() == pool.size());
  double total = 0.0;
  for (const auto& [id, pr] : all) total += pr;
  CHECK(total == doctest::Approx(1.0));

  const ItemId skip[] = {top[0].first};
  auto rest = recommend_item(r.p, r.ds, given, cat, r.pools, 1, skip);
  CHECK(rest[0].first != top[0].first);
  CHECK_THROWS_AS(recommend_item(r.p, r.ds, given, cat, r.pools, 0), ContractError);
  CHECK_THROWS_AS(recommend_item(r.p, r.ds, given, cat, r.pools, 1, pool), LookupError);
}

TEST_CASE("ties rank by item id") {
  Rig r;
  McanParams z = McanParams::zeros(r.p.config);
  TupleSeq given{{r.ds.items()[0].id, Granularity::fine}};
  auto ranked = recommend_item(z, r.ds, given, {2, Granularity::fine}, r.pools, 100);
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].first < ranked[i].first);
  auto cats = recommend_category(z, r.ds, given, Granularity::coarse);
  CHECK(cats[0].first == 0);
  CHECK(cats[1].first == 1);
}

TEST_CASE("category recommendation follows the category layer") {
  Rig r;
  TupleSeq given{{r.ds.items()[3].id, Granularity::fine}, {r.ds.items()[20].id, Granularity::coarse}};
  for (Granularity g : {Granularity::fine, Granularity::coarse}) {
    auto probs = oracle::category_distribution(r.p, r.ds, given, g);
    auto ranked = recommend_category(r.p, r.ds, given, g);
    REQUIRE(ranked.size() == probs.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      CHECK(ranked[i].second == doctest::Approx(probs[ranked[i].first]).epsilon(1e-12));
      if (i > 0) CHECK(ranked[i - 1].second >= ranked[i].second);
    }
  }
  ModelConfig man = r.p.config;
  man.use_cpl = false;
  CHECK_THROWS_AS(recommend_category(McanParams::zeros(man), r.ds, given, Granularity::fine), AblationError);
}

TEST_CASE("query validation") {
  Query q;
  CHECK_THROWS_AS(q.validate(), ValidationError);
  q.given = {{1, Granularity::fine}};
  CHECK_THROWS_AS(q.validate(), ValidationError);
  q.plan = {{std::nullopt, Granularity::fine}};
  q.max_len = 1;
  CHECK_THROWS_AS(q.validate(), ValidationError);
  q.max_len = 2;
  CHECK_NOTHROW(q.validate());
}

TEST_CASE("query text") {
  Query q = parse("# comment\nM 5\nG 3 fine\nG 7 coarse\n\nS * fine\nS 2 coarse\n");
  CHECK(q.max_len == 5);
  REQUIRE(q.given.size() == 2);
  CHECK(q.given[1] == TupleEntry{7, Granularity::coarse});
  REQUIRE(q.plan.size() == 2);
  CHECK(!q.plan[0].category);
  CHECK(q.plan[1] == PlanStep{2, Granularity::coarse});
  std::ostringstream os;
  write_query(os, q);
  CHECK(parse(os.str()) == q);

  CHECK(parse("G 1 fine\nS * fine\nS * fine\n").max_len == 3);
  auto expect_line = [](const std::string& text, const std::string& needle) {
    try {
      parse(text);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_line("G 1 fine\nS x fine\n", "line 2");
  expect_line("G 1 fine\nS * medium\n", "line 2");
  expect_line("M 3\nM 4\n", "line 2");
  expect_line("Q 1\n", "line 1");
  CHECK_THROWS_AS(parse("M 1\nG 1 fine\nS * fine\n"), ValidationError);
  test::TempDir dir;
  CHECK_THROWS_AS(load_query(dir / "absent.q"), IoError);
}

TEST_CASE("greedy completion") {
  Rig r;
  const Outfit& o = r.ds.outfits()[0];
  Query q;
  q.given = {{o.item_ids[0], Granularity::fine}};
  const CategoryId fixed = r.ds.category_of(o.item_ids[1], Granularity::fine);
  q.plan = {{fixed, Granularity::fine}, {std::nullopt, Granularity::fine}, {std::nullopt, Granularity::fine}};
  q.max_len = 4;
  Completion c = complete_outfit(r.p, r.ds, q, r.pools);
  REQUIRE(c.steps.size() == 3);
  REQUIRE(c.outfit.size() == 4);
  CHECK(c.outfit[0] == q.given[0]);

  // Step 1: fixed category, argmax over its pool.
  CHECK(c.steps[0].category == fixed);
  CHECK(c.steps[0].category_probability == 1.0);
  const ItemId first[] = {o.item_ids[0]};
  auto want = recommend_item(r.p, r.ds, q.given, {fixed, Granularity::fine}, r.pools, 1, first);
  CHECK(c.steps[0].tuple.item == want[0].first);
  CHECK(c.steps[0].item_probability == doctest::Approx(want[0].second).epsilon(1e-12));

  // Step 2: best unused fine category.
  TupleSeq prefix(c.outfit.begin(), c.outfit.begin() + 2);
  auto cats = recommend_category(r.p, r.ds, prefix, Granularity::fine);
  std::set<CategoryId> used{r.ds.category_of(c.outfit[0].item, Granularity::fine),
                            r.ds.category_of(c.outfit[1].item, Granularity::fine)};
  auto pick = std::find_if(cats.begin(), cats.end(), [&](const auto& e) { return !used.count(e.first); });
  CHECK(c.steps[1].category == pick->first);
  CHECK(c.steps[1].category_probability == doctest::Approx(pick->second).epsilon(1e-12));

  std::set<ItemId> items;
  for (const auto& e : c.outfit) items.insert(e.item);
  CHECK(items.size() == c.outfit.size());
  for (const auto& s : c.steps) CHECK(r.ds.category_of(s.tuple.item, s.tuple.granularity) == s.category);

  std::ostringstream os;
  write_completion(os, c, 1);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "G " + std::to_string(o.item_ids[0]) + " fine");
  std::getline(is, line);
  CHECK(line.rfind("R " + std::to_string(c.steps[0].tuple.item) + " fine " + std::to_string(fixed) + " 1 ", 0) == 0);
}

TEST_CASE("max_len stops the plan early") {
  Rig r;
  Query q;
  q.given = {{r.ds.items()[0].id, Granularity::fine}};
  q.plan = {{std::nullopt, Granularity::fine}};
  q.max_len = 2;
  CHECK(complete_outfit(r.p, r.ds, q, r.pools).steps.size() == 1);
}

TEST_CASE("completion errors") {
  Rig r;
  Query q;
  q.given = {{99999, Granularity::fine}};
  q.plan = {{std::nullopt, Granularity::fine}};
  q.max_len = 2;
  CHECK_THROWS_AS(complete_outfit(r.p, r.ds, q, r.pools), LookupError);
  q.given = {{r.ds.items()[0].id, Granularity::fine}};
  q.plan = {{17, Granularity::fine}};
  CHECK_THROWS_AS(complete_outfit(r.p, r.ds, q, r.pools), LookupError);
  // Two coarse categories: the third wildcard has nothing left.
  q.plan = {{std::nullopt, Granularity::coarse}, {std::nullopt, Granularity::coarse}};
  q.max_len = 3;
  CHECK_THROWS_AS(complete_outfit(r.p, r.ds, q, r.pools), CompletionError);
  // A one-item pool that is already in the outfit.
  std::vector<std::vector<ItemId>> fine(r.ds.taxonomy().num_fine());
  fine[r.ds.items()[0].fine_category] = {r.ds.items()[0].id};
  CandidatePools tiny(fine, std::vector<std::vector<ItemId>>(r.ds.taxonomy().num_coarse()));
  q.plan = {{r.ds.items()[0].fine_category, Granularity::fine}};
  q.max_len = 2;
  CHECK_THROWS_AS(complete_outfit(r.p, r.ds, q, tiny), CompletionError);
  ModelConfig man = r.p.config;
  man.use_cpl = false;
  q.plan = {{std::nullopt, Granularity::fine}};
  CHECK_THROWS_AS(complete_outfit(McanParams::zeros(man), r.ds, q, r.pools), AblationError);
}

TEST_CASE("random completions stay well formed") {
  Rig r;
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    Query q;
    q.given = {{r.ds.items()[rng() % r.ds.items().size()].id, rng() % 2 ? Granularity::fine : Granularity::coarse}};
    const std::size_t steps = 1 + rng() % 3;
    for (std::size_t s = 0; s < steps; ++s) {
      PlanStep st;
      st.granularity = Granularity::fine;
      if (rng() % 2) st.category = rng() % r.ds.taxonomy().num_fine();
      q.plan.push_back(st);
    }
    q.max_len = q.given.size() + q.plan.size();
    Completion c;
    try {
      c = complete_outfit(r.p, r.ds, q, r.pools);
    } catch (const CompletionError&) {
      continue;  // wildcard ran out of categories
    }
    CHECK(c.outfit.size() == q.max_len);
    std::set<ItemId> ids;
    for (const auto& e : c.outfit) ids.insert(e.item);
    CHECK(ids.size() == c.outfit.size());
    for (std::size_t s = 0; s < c.steps.size(); ++s) {
      if (q.plan[s].category) CHECK(c.steps[s].category == *q.plan[s].category);
      CHECK(c.steps[s].item_probability > 0.0);
      CHECK(c.steps[s].item_probability <= 1.0);
    }
  }
}
