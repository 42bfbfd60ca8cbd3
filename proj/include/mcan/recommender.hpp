#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mcan/data.hpp"
#include "mcan/model.hpp"

namespace mcan {

// Top-k items of `category`'s pool by item probability; ties to the lowest id.
std::vector<std::pair<ItemId, double>> recommend_item(const McanParams& p, const Dataset& ds,
                                                      std::span<const TupleEntry> given, CategoryRef category,
                                                      const CandidatePools& pools, std::size_t k,
                                                      std::span<const ItemId> exclude = {});

// All categories of granularity g ranked by CPL probability; ties to the lowest id.
std::vector<std::pair<CategoryId, double>> recommend_category(const McanParams& p, const Dataset& ds,
                                                              std::span<const TupleEntry> given, Granularity g);

struct PlanStep {
  std::optional<CategoryId> category;  // empty: wildcard
  Granularity granularity = Granularity::fine;

  friend bool operator==(const PlanStep&, const PlanStep&) = default;
};

struct Query {
  TupleSeq given;
  std::vector<PlanStep> plan;
  std::size_t max_len = 0;

  void validate() const;
  friend bool operator==(const Query&, const Query&) = default;
};

struct CompletionStep {
  TupleEntry tuple;
  CategoryId category = 0;
  double category_probability = 1.0;  // 1 when the category was given
  double item_probability = 0.0;
};

struct Completion {
  TupleSeq outfit;  // given ++ completed steps
  std::vector<CompletionStep> steps;
};

// Greedy left-to-right decoding. Items already in the outfit are never
// recommended again; wildcard steps skip categories already used at the step's
// granularity.
Completion complete_outfit(const McanParams& p, const Dataset& ds, const Query& q, const CandidatePools& pools);

// Query text:
//   M <max_len>
//   G <item_id> <fine|coarse>         one per given tuple, in order
//   S <category_id|*> <fine|coarse>   one per plan step, in order
Query read_query(std::istream& is);
Query load_query(const std::filesystem::path& path);
void write_query(std::ostream& os, const Query& q);

// Completion text: one G line per given tuple, then per step
//   R <item_id> <granularity> <category_id> <category_probability> <item_probability>
void write_completion(std::ostream& os, const Completion& c, std::size_t given_count);

}  // namespace mcan
