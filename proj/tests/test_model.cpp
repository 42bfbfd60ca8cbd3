#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mcan/errors.hpp"
#include "mcan/model.hpp"
#include "mcan/objectives.hpp"
#include "model_oracle.hpp"
#include "support.hpp"

using namespace mcan;
using ag::Tensor;

namespace {

struct Rig {
  Dataset ds = test::small_dataset();
  ModelConfig cfg = test::small_model(ds);
  McanParams p = test::random_params(cfg, 17);
  CandidatePools pools{ds};
};

TupleSeq random_prefix(const Dataset& ds, std::mt19937_64& rng, std::size_t n, bool mixed) {
  TupleSeq out;
  while (out.size() < n) {
    ItemId id = ds.items()[rng() % ds.items().size()].id;
    bool dup = std::any_of(out.begin(), out.end(), [&](const TupleEntry& e) { return e.item == id; });
    if (dup) continue;
    Granularity g = mixed && rng() % 2 ? Granularity::coarse : Granularity::fine;
    out.push_back({id, g});
  }
  return out;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.values().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          t.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

}  // namespace

TEST_CASE("parameter shapes and init") {
  Rig r;
  McanParams p = McanParams::init(r.cfg);
  CHECK(p.e_fine.rows() == r.ds.taxonomy().num_fine());
  CHECK(p.e_coarse.rows() == r.ds.taxonomy().num_coarse());
  CHECK(p.w_h.rows() == r.cfg.d);
  CHECK(p.w_h.cols() == r.cfg.d_img);
  CHECK(p.attn.in_width() == 2 * r.cfg.d);
  CHECK(p.scorer.in_width() == 2 * r.cfg.d);
  CHECK(p.mix_fine.in_width() == r.cfg.d + r.cfg.d_c);
  CHECK(p.mix_fine.out_width() == r.cfg.d);
  CHECK(p.cpl_coarse.out_width() == r.cfg.num_coarse);
  for (const auto& [name, t] : std::as_const(p).named()) {
    const bool bias = name.find(".b") != std::string::npos;
    for (double v : t->values()) {
      if (bias) {
        CHECK(v == 0.0);
      } else {
        CHECK(std::abs(v) <= 0.05);
      }
    }
  }
  McanParams q = McanParams::init(r.cfg);
  for (std::size_t i = 0; i < p.tensors().size(); ++i) CHECK(*p.tensors()[i] == *q.tensors()[i]);
  ModelConfig bad = r.cfg;
  bad.d = 0;
  CHECK_THROWS_AS(McanParams::init(bad), ConfigError);
}

TEST_CASE("category embedding lookup") {
  Rig r;
  const CategoryId ids[] = {1, 0, 1};
  Tensor e = embed_categories(r.p, ids, Granularity::fine);
  CHECK(row(e, 0) == row(r.p.e_fine, 1));
  CHECK(row(e, 1) == row(r.p.e_fine, 0));
  const CategoryId bad[] = {99};
  CHECK_THROWS_AS(embed_categories(r.p, bad, Granularity::fine), LookupError);

  // Gradient of the summed lookup is a use-count indicator per row.
  ag::Tape tape;
  McanGraph g(r.p, r.ds, tape);
  auto grads = tape.backward(ag::sum(g.embed(ids, Granularity::fine)));
  const Tensor& ge = grads.at(&r.p.e_fine);
  for (std::size_t c = 0; c < ge.cols(); ++c) {
    CHECK(ge.at(0, c) == 1.0);
    CHECK(ge.at(1, c) == 2.0);
    CHECK(ge.at(2, c) == 0.0);
  }
}

TEST_CASE("attention matches the loop oracle") {
  Rig r;
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 4;
    Tensor x = test::random_tensor(rng, n, r.cfg.d_img, -2, 2);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(row(x, i));
    for (bool causal : {true, false}) {
      Attention a = attend(r.p, x, causal ? AttentionMask::causal : AttentionMask::none);
      auto want = oracle::attend(r.p, rows, causal);
      for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          CHECK(std::abs(a.alpha.at(i, k) - want.alpha[i][k]) < 1e-12);
          total += a.alpha.at(i, k);
          if (causal && k > i) CHECK(a.alpha.at(i, k) == 0.0);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
        for (std::size_t c = 0; c < r.cfg.d; ++c) CHECK(std::abs(a.h.at(i, c) - want.h[i][c]) < 1e-12);
      }
    }
  }
}

TEST_CASE("attention on a single row is the identity weight") {
  Rig r;
  std::mt19937_64 rng(2);
  Tensor x = test::random_tensor(rng, 1, r.cfg.d_img);
  Attention a = attend(r.p, x);
  CHECK(a.alpha[0] == 1.0);
}

TEST_CASE("attention rejects a wrong feature width") {
  Rig r;
  CHECK_THROWS_AS(attend(r.p, Tensor::zeros({2, r.cfg.d_img + 1})), DimensionError);
}

TEST_CASE("mixing") {
  Rig r;
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor h = test::random_tensor(rng, 3, r.cfg.d);
    Tensor c = test::random_tensor(rng, 3, r.cfg.d_c);
    for (Granularity g : {Granularity::fine, Granularity::coarse}) {
      Tensor t = mix(r.p, h, c, g);
      for (std::size_t i = 0; i < 3; ++i) {
        auto want = oracle::ffn(r.p.mixer(g), oracle::concat(row(h, i), row(c, i)));
        for (std::size_t k = 0; k < r.cfg.d; ++k) CHECK(std::abs(t.at(i, k) - want[k]) < 1e-12);
      }
    }
  }
  CHECK_THROWS_AS(mix(r.p, Tensor::zeros({1, r.cfg.d}), Tensor::zeros({1, r.cfg.d_c + 1}), Granularity::fine),
                  DimensionError);
}

TEST_CASE("mixer that passes h through yields relu(h)") {
  Dataset ds = test::small_dataset();
  ModelConfig cfg = test::small_model(ds);
  cfg.hidden_f = cfg.d;
  McanParams p = McanParams::zeros(cfg);
  for (std::size_t i = 0; i < cfg.d; ++i) {
    p.mix_fine.weights[0].at(i, i) = 1.0;
    p.mix_fine.weights[1].at(i, i) = 1.0;
  }
  std::mt19937_64 rng(4);
  Tensor h = test::random_tensor(rng, 2, cfg.d);
  Tensor c = test::random_tensor(rng, 2, cfg.d_c);
  Tensor t = mix(p, h, c, Granularity::fine);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == std::max(0.0, h[i]));
}

TEST_CASE("item distribution matches the loop oracle") {
  Rig r;
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const bool mixed = trial % 2 == 1;
    TupleSeq prefix = random_prefix(r.ds, rng, 1 + rng() % 3, mixed);
    Granularity g = rng() % 2 ? Granularity::coarse : Granularity::fine;
    CategoryRef cat{rng() % r.ds.taxonomy().count(g), g};
    const auto& pool = r.ds.category_subset(cat);
    std::vector<ItemId> cands(pool.begin(), pool.begin() + std::min<std::ptrdiff_t>(5, pool.size()));
    auto got = item_distribution(r.p, r.ds, prefix, cat, cands);
    auto want = oracle::item_distribution(r.p, r.ds, prefix, cat, cands);
    double total = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      CHECK(std::abs(got[i] - want[i]) < 1e-12);
      total += got[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("item distribution rejects foreign candidates") {
  Rig r;
  TupleSeq prefix{{r.ds.outfits()[0].item_ids[0], Granularity::fine}};
  CategoryRef cat{0, Granularity::fine};
  ItemId foreign = r.ds.category_subset(1, Granularity::fine).front();
  const ItemId cands[] = {foreign};
  CHECK_THROWS_AS(item_distribution(r.p, r.ds, prefix, cat, cands), ContractError);
  CHECK_THROWS_AS(item_distribution(r.p, r.ds, prefix, cat, std::span<const ItemId>{}), ContractError);
  const ItemId one[] = {r.ds.category_subset(0, Granularity::fine).front()};
  auto d = item_distribution(r.p, r.ds, prefix, cat, one);
  CHECK(d == std::vector<double>{1.0});
}

TEST_CASE("category distribution") {
  Rig r;
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    TupleSeq prefix = random_prefix(r.ds, rng, 1 + rng() % 3, true);
    for (Granularity g : {Granularity::fine, Granularity::coarse}) {
      auto got = category_distribution(r.p, r.ds, prefix, g);
      auto want = oracle::category_distribution(r.p, r.ds, prefix, g);
      REQUIRE(got.size() == r.ds.taxonomy().count(g));
      double total = 0.0;
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(std::abs(got[i] - want[i]) < 1e-12);
        total += got[i];
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
  McanParams z = McanParams::zeros(r.cfg);
  TupleSeq prefix{{r.ds.items()[0].id, Granularity::fine}};
  for (double v : category_distribution(z, r.ds, prefix, Granularity::fine)) {
    CHECK(v == doctest::Approx(1.0 / r.cfg.num_fine));
  }
  ModelConfig man = r.cfg;
  man.use_cpl = false;
  CHECK_THROWS_AS(category_distribution(McanParams::zeros(man), r.ds, prefix, Granularity::fine), AblationError);
}

TEST_CASE("joint permutation of the prefix leaves every probability unchanged") {
  Rig r;
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    TupleSeq prefix = random_prefix(r.ds, rng, 2 + rng() % 3, trial % 2 == 1);
    TupleSeq shuffled = prefix;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CategoryRef cat{rng() % r.ds.taxonomy().num_fine(), Granularity::fine};
    const auto& pool = r.ds.category_subset(cat);
    auto a = item_distribution(r.p, r.ds, prefix, cat, pool);
    auto b = item_distribution(r.p, r.ds, shuffled, cat, pool);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    for (Granularity g : {Granularity::fine, Granularity::coarse}) {
      auto ca = category_distribution(r.p, r.ds, prefix, g);
      auto cb = category_distribution(r.p, r.ds, shuffled, g);
      for (std::size_t i = 0; i < ca.size(); ++i) worst = std::max(worst, std::abs(ca[i] - cb[i]));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("later tuples never influence an earlier prefix state") {
  Rig r;
  const Outfit& o = r.ds.outfits()[0];
  TupleSeq seq = as_tuples(o, Granularity::fine);
  ag::Tape tape;
  McanGraph g(r.p, r.ds, tape);
  auto states = g.prefix_states(seq);
  REQUIRE(states.size() == seq.size() - 1);
  for (std::size_t i = 0; i < states.size(); ++i) {
    TupleSeq prefix(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(i + 1));
    auto want = oracle::state(r.p, r.ds, prefix);
    for (std::size_t c = 0; c < want.size(); ++c) CHECK(std::abs(states[i].value()[c] - want[c]) < 1e-12);
  }
}

TEST_CASE("outfit log-likelihood") {
  Rig r;
  for (const auto* o : r.ds.outfits_in(Split::train)) {
    for (Granularity g : {Granularity::fine, Granularity::coarse}) {
      TupleSeq seq = as_tuples(*o, g);
      double got = outfit_loglik(r.p, r.ds, seq, r.pools);
      double want = oracle::outfit_loglik(r.p, r.ds, seq, r.pools);
      CHECK(got <= 0.0);
      CHECK(std::abs(got - want) < 1e-10);
    }
  }
  TupleSeq one{{r.ds.items()[0].id, Granularity::fine}};
  CHECK_THROWS_AS(outfit_loglik(r.p, r.ds, one, r.pools), ContractError);
}

TEST_CASE("singleton pools and one category give zero log-likelihood") {
  Dataset ds(2, CategoryTaxonomy({"a", "b"}, {0, 0}, {"top"}), {{1, {0.5, 1}, 0}, {2, {1, -1}, 1}},
             {{1, Split::train, {1, 2}}});
  ModelConfig cfg = model_config_for(ds, 4);
  cfg.d_c = 2;
  McanParams p = test::random_params(cfg, 3);
  CandidatePools pools(ds);
  TupleSeq coarse = as_tuples(ds.outfit(1), Granularity::coarse);
  // One coarse category makes the category term log 1; a singleton pool does the same for items.
  CandidatePools single({{1}, {2}}, {{2}});
  CHECK(outfit_loglik(p, ds, coarse, single) == doctest::Approx(0.0).epsilon(1e-15));
  ModelConfig man = cfg;
  man.use_cpl = false;
  McanParams q = test::random_params(man, 3);
  TupleSeq fine = as_tuples(ds.outfit(1), Granularity::fine);
  CHECK(outfit_loglik(q, ds, fine, pools) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("MAN drops the category term") {
  Rig r;
  ModelConfig man = r.cfg;
  man.use_cpl = false;
  McanParams q = r.p;
  q.config = man;
  TupleSeq seq = as_tuples(r.ds.outfits()[0], Granularity::fine);
  double with = outfit_loglik(r.p, r.ds, seq, r.pools);
  double without = outfit_loglik(q, r.ds, seq, r.pools);
  double cat_terms = 0.0;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    TupleSeq prefix(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(i));
    cat_terms += std::log(category_distribution(r.p, r.ds, prefix, Granularity::fine)
                              [r.ds.category_of(seq[i].item, Granularity::fine)]);
  }
  CHECK(std::abs(with - (without + cat_terms)) < 1e-10);
}

TEST_CASE("gradients of the full objective match finite differences") {
  Rig r;
  r.p = test::random_params(r.cfg, 23, 0.4);
  const Outfit& o = *r.ds.outfits_in(Split::train)[0];
  std::vector<TupleSeq> fine{as_tuples(o, Granularity::fine)};
  std::vector<TupleSeq> coarse{as_tuples(o, Granularity::coarse)};
  REQUIRE(fine[0].size() == 3);
  Rng rng(9);
  TripletBatch trip = make_triplets(r.ds, rng, o, Granularity::fine, SamplingLevel::hard);
  std::vector<ag::Tensor*> params = r.p.tensors();

  SUBCASE("outfit log-likelihood") {
    double err = test::max_fd_error(params, [&](ag::Tape& t) {
      McanGraph g(r.p, r.ds, t);
      return g.outfit_loglik(fine[0], r.pools);
    });
    CHECK(err < 1e-4);
  }
  SUBCASE("total loss") {
    double err = test::max_fd_error(params, [&](ag::Tape& t) {
      McanGraph g(r.p, r.ds, t);
      return total_loss(loss_fine(g, fine, r.pools), loss_coarse(g, coarse, r.pools), loss_triplet(g, trip, 0.05),
                        0.1, 0.1);
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("checkpoint round trip") {
  Rig r;
  test::TempDir dir;
  save_checkpoint(r.p, dir / "m.ckpt");
  McanParams back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.config == r.p.config);
  auto a = std::as_const(r.p).named();
  auto b = std::as_const(back).named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }
  TupleSeq probe = as_tuples(r.ds.outfits()[1], Granularity::fine);
  CHECK(std::abs(outfit_loglik(back, r.ds, probe, r.pools) - outfit_loglik(r.p, r.ds, probe, r.pools)) < 1e-12);

  std::ostringstream os;
  write_checkpoint(r.p, os);
  std::ostringstream os2;
  write_checkpoint(back, os2);
  CHECK(os.str() == os2.str());
}

TEST_CASE("checkpoint corruption is detected") {
  Rig r;
  std::ostringstream os;
  write_checkpoint(r.p, os);
  const std::string text = os.str();
  auto load = [](const std::string& s) {
    std::istringstream is(s);
    return read_checkpoint(is);
  };
  CHECK_THROWS_AS(load(text.substr(0, text.size() / 2)), CheckpointError);
  CHECK_THROWS_AS(load(text.substr(0, text.rfind("end"))), CheckpointError);
  const std::string wrong_version = "mcan-checkpoint 99" + text.substr(text.find('\n'));
  CHECK_THROWS_AS(load(wrong_version), CheckpointError);
  CHECK_THROWS_AS(load("garbage\n"), CheckpointError);
  CHECK_THROWS_AS(load(""), CheckpointError);
  test::TempDir dir;
  CHECK_THROWS(load_checkpoint(dir / "absent.ckpt"));
}

TEST_CASE("graph checks dataset compatibility") {
  Rig r;
  Dataset other = test::small_dataset();
  ModelConfig cfg = r.cfg;
  cfg.d_img += 1;
  McanParams p = McanParams::zeros(cfg);
  ag::Tape tape;
  CHECK_THROWS_AS(McanGraph(p, other, tape), DimensionError);
}
