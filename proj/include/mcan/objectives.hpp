#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "mcan/autograd.hpp"
#include "mcan/data.hpp"
#include "mcan/model.hpp"
#include "mcan/util.hpp"

namespace mcan {

enum class SamplingLevel { easy, semi_hard, hard };

std::string_view to_string(SamplingLevel level);
SamplingLevel parse_level(std::string_view s);

// Uniform draw of a replacement for outfit position `position`, never from the
// target outfit. easy: any category; semi_hard: same coarse category; hard:
// same fine category.
ItemId sample_negative(const Dataset& ds, Rng& rng, OutfitId outfit, std::size_t position, SamplingLevel level);

// The eligible set sample_negative draws from, ascending by id.
std::vector<ItemId> negative_pool(const Dataset& ds, OutfitId outfit, std::size_t position, SamplingLevel level);

struct Triplet {
  TupleSeq anchor;  // prefix tuples 1..i
  ItemId positive = 0;
  ItemId negative = 0;
  CategoryRef category;  // c_{i+1}, shared by positive and negative
};
using TripletBatch = std::vector<Triplet>;

// One triplet per prediction step of the outfit, negatives drawn at `level`.
TripletBatch make_triplets(const Dataset& ds, Rng& rng, const Outfit& outfit, Granularity g, SamplingLevel level);

// Mean over the batch of -outfit_loglik; every sequence must be all-fine
// (loss_fine) or all-coarse (loss_coarse).
ag::Var loss_fine(McanGraph& g, std::span<const TupleSeq> batch, const CandidatePools& pools);
ag::Var loss_coarse(McanGraph& g, std::span<const TupleSeq> batch, const CandidatePools& pools);

// Mean of max(0, s(t_a, t_n) - s(t_a, t_p) + mu).
ag::Var loss_triplet(McanGraph& g, const TripletBatch& batch, double mu);

ag::Var total_loss(ag::Var fine, ag::Var coarse, ag::Var triplet, double lambda1, double lambda2);

// semi_hard for the first ceil(total/2) epochs, hard afterwards.
SamplingLevel schedule_level(std::size_t epoch, std::size_t total_epochs);

}  // namespace mcan
