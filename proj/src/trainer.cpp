#include "mcan/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iterator>
#include <optional>
#include <ostream>

#include <json.hpp>

#include "mcan/errors.hpp"
#include "mcan/evaluator.hpp"
#include "mcan/util.hpp"

namespace mcan {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(mu >= 0.0)) throw ConfigError("mu must be non-negative");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("lambda1 and lambda2 must be non-negative");
  if (lr_decay_every > 0 && !(lr_decay_gamma > 0.0)) throw ConfigError("lr_decay_gamma must be positive");
  if (d == 0 || d_c == 0 || hidden_a == 0 || hidden_f == 0 || hidden_s == 0) {
    throw ConfigError("model widths must all be positive");
  }
}

ModelConfig TrainConfig::model_config(const Dataset& ds) const {
  ModelConfig m = model_config_for(ds, d);
  m.d_c = d_c;
  m.hidden_a = hidden_a;
  m.hidden_f = hidden_f;
  m.hidden_s = hidden_s;
  m.use_cpl = use_cpl;
  m.seed = seed;
  return m;
}

CandidatePools sampled_pools(const Dataset& ds, std::span<const Outfit* const> batch, std::size_t k, Rng& rng) {
  const auto& tax = ds.taxonomy();
  std::vector<std::vector<ItemId>> fine(tax.num_fine()), coarse(tax.num_coarse());
  for (const Outfit* o : batch) {
    for (ItemId id : o->item_ids) {
      fine[ds.category_of(id, Granularity::fine)].push_back(id);
      coarse[ds.category_of(id, Granularity::coarse)].push_back(id);
    }
  }
  auto fill = [&](std::vector<std::vector<ItemId>>& pools, Granularity g) {
    for (CategoryId c = 0; c < pools.size(); ++c) {
      const auto& all = ds.category_subset(c, g);
      for (std::size_t j = 0; j < k && !all.empty(); ++j) pools[c].push_back(all[rng.index(all.size())]);
      std::sort(pools[c].begin(), pools[c].end());
      pools[c].erase(std::unique(pools[c].begin(), pools[c].end()), pools[c].end());
    }
  };
  fill(fine, Granularity::fine);
  fill(coarse, Granularity::coarse);
  return CandidatePools(std::move(fine), std::move(coarse));
}

TrainResult train(const TrainConfig& cfg, const Dataset& ds, EpochCallback cb, void* cb_ctx) {
  cfg.validate();
  auto train_outfits = ds.outfits_in(Split::train);
  if (train_outfits.empty()) throw ConfigError("training split is empty");

  TrainResult out{McanParams::init(cfg.model_config(ds)), {}};
  McanParams& params = out.params;
  const CandidatePools full_pools(ds);

  Rng order_rng(derive_seed(cfg.seed, "train/order"));
  Rng triplet_rng(derive_seed(cfg.seed, "train/triplet"));
  Rng pool_rng(derive_seed(cfg.seed, "train/pools"));

  std::vector<FitbQuestion> val_questions;
  if (cfg.eval_every > 0 && !ds.outfits_in(Split::val).empty()) {
    val_questions = build_fitb(ds, Split::val, SamplingLevel::hard, derive_seed(cfg.seed, "train/val"), cfg.granularity);
  }

  std::vector<ag::Tensor*> all_params = params.tensors();
  double lr = cfg.lr;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (cfg.lr_decay_every > 0 && epoch > 0 && epoch % cfg.lr_decay_every == 0) lr *= cfg.lr_decay_gamma;
    const SamplingLevel level = schedule_level(epoch, cfg.epochs);

    std::vector<const Outfit*> order(train_outfits.begin(), train_outfits.end());
    order_rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.level = level;
    rec.lr = lr;
    std::size_t batches = 0;

    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::span<const Outfit* const> batch(order.data() + b, std::min(cfg.batch_size, order.size() - b));

      std::vector<TupleSeq> fine_seqs, coarse_seqs;
      TripletBatch triplets;
      for (const Outfit* o : batch) {
        fine_seqs.push_back(as_tuples(*o, Granularity::fine));
        coarse_seqs.push_back(as_tuples(*o, Granularity::coarse));
        if (cfg.triplet_enabled) {
          auto t = make_triplets(ds, triplet_rng, *o, cfg.granularity, level);
          std::move(t.begin(), t.end(), std::back_inserter(triplets));
        }
      }
      std::optional<CandidatePools> sampled;
      if (cfg.sampled_candidates > 0) sampled = sampled_pools(ds, batch, cfg.sampled_candidates, pool_rng);
      const CandidatePools& pools = sampled ? *sampled : full_pools;

      ag::Tape tape;
      McanGraph graph(params, ds, tape);
      ag::Var lf = loss_fine(graph, fine_seqs, pools);
      ag::Var lc = loss_coarse(graph, coarse_seqs, pools);
      ag::Var lt = cfg.triplet_enabled ? loss_triplet(graph, triplets, cfg.mu) : tape.constant(ag::Tensor::scalar(0.0));
      ag::Var total = total_loss(lf, lc, lt, cfg.lambda1, cfg.lambda2);

      ag::GradMap grads = tape.backward(total);
      std::vector<ag::Tensor*> touched;
      for (ag::Tensor* t : all_params)
        if (grads.count(t)) touched.push_back(t);
      ag::sgd_step(touched, grads, lr);

      rec.loss_fine += lf.value()[0];
      rec.loss_coarse += lc.value()[0];
      rec.loss_triplet += lt.value()[0];
      rec.loss_total += total.value()[0];
      ++batches;
    }

    const double nb = static_cast<double>(batches);
    rec.loss_fine /= nb;
    rec.loss_coarse /= nb;
    rec.loss_triplet /= nb;
    rec.loss_total /= nb;
    if (!val_questions.empty() && (epoch + 1) % cfg.eval_every == 0) {
      rec.val_fitb = fitb_accuracy(params, ds, val_questions);
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.log.push_back(rec);
    if (cb) cb(out.log.back(), cb_ctx);
  }
  return out;
}

void write_epoch_record(std::ostream& os, const EpochRecord& r, bool include_time) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss_fine"] = r.loss_fine;
  j["loss_coarse"] = r.loss_coarse;
  j["loss_triplet"] = r.loss_triplet;
  j["loss_total"] = r.loss_total;
  j["level"] = std::string(to_string(r.level));
  j["lr"] = r.lr;
  if (r.val_fitb >= 0.0) {
    j["val_fitb"] = r.val_fitb;
  } else {
    j["val_fitb"] = nullptr;
  }
  if (include_time) j["wall_seconds"] = r.wall_seconds;
  os << j.dump() << '\n';
}

void write_train_log(std::ostream& os, const TrainLog& log, bool include_time) {
  for (const auto& r : log) write_epoch_record(os, r, include_time);
}

}  // namespace mcan
