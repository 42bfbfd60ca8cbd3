#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mcan/data.hpp"
#include "mcan/model.hpp"
#include "mcan/objectives.hpp"

namespace mcan {

struct FitbQuestion {
  OutfitId outfit = 0;
  std::size_t blank_position = 0;  // 0-based; never 0
  TupleSeq prefix;                 // outfit with the blank removed, stored order
  CategoryRef blank_category;
  std::array<ItemId, 4> choices{};  // ascending item id
  std::size_t answer_index = 0;
};

std::vector<FitbQuestion> build_fitb(const Dataset& ds, Split split, SamplingLevel level, std::uint64_t seed,
                                     Granularity g = Granularity::fine);

// Item softmax restricted to the four choices: a choice outside the blank's
// category has probability 0; ties go to the lowest item id.
std::size_t answer_fitb(const McanParams& p, const Dataset& ds, const FitbQuestion& q);
double fitb_accuracy(const McanParams& p, const Dataset& ds, std::span<const FitbQuestion> questions);

struct CompatTask {
  SamplingLevel level = SamplingLevel::easy;
  std::vector<TupleSeq> positives;
  std::vector<TupleSeq> negatives;  // negatives[i] perturbs positives[i]
};

CompatTask build_compat(const Dataset& ds, Split split, SamplingLevel level, std::uint64_t seed,
                        Granularity g = Granularity::fine);

// Length-normalized log-likelihood: outfit_loglik / (N - 1).
double compat_score(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> seq,
                    const CandidatePools& pools);

// Mann-Whitney statistic: P(pos > neg) with ties counted one half.
double auc(std::span<const double> pos, std::span<const double> neg);

double compat_auc(const McanParams& p, const Dataset& ds, const CompatTask& task, const CandidatePools& pools);

struct Metrics {
  double fitb_accuracy = 0.0;
  double compat_auc = 0.0;
  std::size_t fitb_n = 0;
  std::size_t compat_n = 0;
};

struct ShuffleResult {
  Metrics ordered;
  Metrics shuffled;
};

// Same questions and compatibility pairs scored twice: stored order, then with
// each sequence's tuples jointly permuted.
ShuffleResult shuffle_eval(const McanParams& p, const Dataset& ds, Split split, SamplingLevel level,
                           std::uint64_t seed, Granularity g = Granularity::fine);

// Applies the permutation drawn from rng to every question prefix / sequence.
void shuffle_questions(std::vector<FitbQuestion>& qs, Rng& rng);
void shuffle_sequences(std::vector<TupleSeq>& seqs, Rng& rng);

struct MetricRecord {
  std::string task;    // fitb | compat
  std::string level;   // easy | semi_hard | hard
  std::string order;   // ordered | shuffled
  std::string metric;  // accuracy | auc
  double value = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

void write_metric(std::ostream& os, const MetricRecord& r);

// FITB accuracy and compatibility AUC per level, ordered and optionally
// shuffled. Questions for every level derive from `seed`; records carry it.
std::vector<MetricRecord> evaluate_report(const McanParams& p, const Dataset& ds, Split split,
                                          std::span<const SamplingLevel> levels, std::uint64_t seed, bool shuffled,
                                          Granularity g = Granularity::fine);

}  // namespace mcan
