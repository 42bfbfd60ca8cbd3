#include "mcan/objectives.hpp"

#include <algorithm>
#include <optional>

#include "mcan/errors.hpp"

namespace mcan {

using ag::Var;

std::string_view to_string(SamplingLevel level) {
  switch (level) {
    case SamplingLevel::easy: return "easy";
    case SamplingLevel::semi_hard: return "semi_hard";
    case SamplingLevel::hard: return "hard";
  }
  return "easy";
}

SamplingLevel parse_level(std::string_view s) {
  if (s == "easy") return SamplingLevel::easy;
  if (s == "semi_hard" || s == "semi-hard") return SamplingLevel::semi_hard;
  if (s == "hard") return SamplingLevel::hard;
  throw ParseError("unknown sampling level '" + std::string(s) + "'");
}

std::vector<ItemId> negative_pool(const Dataset& ds, OutfitId outfit, std::size_t position, SamplingLevel level) {
  const Outfit& o = ds.outfit(outfit);
  if (position >= o.item_ids.size()) {
    throw ContractError("outfit " + std::to_string(outfit) + " has no position " + std::to_string(position));
  }
  const ItemId target = o.item_ids[position];
  std::vector<ItemId> members(o.item_ids);
  std::sort(members.begin(), members.end());
  auto not_member = [&](ItemId id) { return !std::binary_search(members.begin(), members.end(), id); };

  std::vector<ItemId> out;
  if (level == SamplingLevel::easy) {
    for (const auto& it : ds.items())
      if (not_member(it.id)) out.push_back(it.id);
  } else {
    Granularity g = level == SamplingLevel::hard ? Granularity::fine : Granularity::coarse;
    for (ItemId id : ds.category_subset(ds.category_of(target, g), g))
      if (not_member(id)) out.push_back(id);
  }
  return out;
}

ItemId sample_negative(const Dataset& ds, Rng& rng, OutfitId outfit, std::size_t position, SamplingLevel level) {
  auto pool = negative_pool(ds, outfit, position, level);
  if (pool.empty()) {
    const ItemId target = ds.outfit(outfit).item_ids[position];
    throw SamplingError("no " + std::string(to_string(level)) + " negative for item " + std::to_string(target) +
                        " of outfit " + std::to_string(outfit) + " (fine category " +
                        std::to_string(ds.category_of(target, Granularity::fine)) + ")");
  }
  return pool[rng.index(pool.size())];
}

TripletBatch make_triplets(const Dataset& ds, Rng& rng, const Outfit& outfit, Granularity g, SamplingLevel level) {
  TripletBatch out;
  TupleSeq seq = as_tuples(outfit, g);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    Triplet t;
    t.anchor.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(i));
    t.positive = seq[i].item;
    t.negative = sample_negative(ds, rng, outfit.id, i, level);
    t.category = ds.category_ref(seq[i]);
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

Var granular_loss(McanGraph& g, std::span<const TupleSeq> batch, const CandidatePools& pools, Granularity want,
                  const char* name) {
  if (batch.empty()) throw ContractError(std::string(name) + ": empty batch");
  std::optional<Var> total;
  for (const auto& seq : batch) {
    for (const auto& e : seq) {
      if (e.granularity != want) {
        throw ContractError(std::string(name) + ": sequence contains a " + std::string(to_string(e.granularity)) +
                            " tuple");
      }
    }
    Var ll = g.outfit_loglik(seq, pools);
    total = total ? ag::add(*total, ll) : ll;
  }
  return ag::scale(*total, -1.0 / static_cast<double>(batch.size()));
}

}  // namespace

Var loss_fine(McanGraph& g, std::span<const TupleSeq> batch, const CandidatePools& pools) {
  return granular_loss(g, batch, pools, Granularity::fine, "loss_fine");
}

Var loss_coarse(McanGraph& g, std::span<const TupleSeq> batch, const CandidatePools& pools) {
  return granular_loss(g, batch, pools, Granularity::coarse, "loss_coarse");
}

Var loss_triplet(McanGraph& g, const TripletBatch& batch, double mu) {
  if (batch.empty()) throw ContractError("loss_triplet: empty batch");
  if (!(mu >= 0.0)) throw ContractError("loss_triplet: margin must be non-negative");
  std::optional<Var> total;
  for (const auto& t : batch) {
    const ItemId pair[] = {t.positive, t.negative};
    Var state = g.prefix_state(t.anchor);
    Var scores = g.item_logits(state, g.candidate_tuples(pair, t.category));
    Var gap = ag::sub(ag::pick(scores, 0, 1), ag::pick(scores, 0, 0));
    Var hinge = ag::relu(ag::add_scalar(gap, mu));
    total = total ? ag::add(*total, hinge) : hinge;
  }
  return ag::scale(*total, 1.0 / static_cast<double>(batch.size()));
}

Var total_loss(Var fine, Var coarse, Var triplet, double lambda1, double lambda2) {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ContractError("total_loss: lambdas must be non-negative");
  return ag::add(fine, ag::add(ag::scale(coarse, lambda1), ag::scale(triplet, lambda2)));
}

SamplingLevel schedule_level(std::size_t epoch, std::size_t total_epochs) {
  if (epoch >= total_epochs) {
    throw ContractError("schedule_level: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(total_epochs) + ")");
  }
  return epoch < (total_epochs + 1) / 2 ? SamplingLevel::semi_hard : SamplingLevel::hard;
}

}  // namespace mcan
