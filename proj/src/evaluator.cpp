#include "mcan/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "mcan/errors.hpp"
#include "mcan/util.hpp"

namespace mcan {

std::vector<FitbQuestion> build_fitb(const Dataset& ds, Split split, SamplingLevel level, std::uint64_t seed,
                                     Granularity g) {
  auto outfits = ds.outfits_in(split);
  if (outfits.empty()) throw ContractError("build_fitb: split '" + std::string(to_string(split)) + "' is empty");
  Rng rng(derive_seed(seed, "fitb"));
  std::vector<FitbQuestion> out;
  out.reserve(outfits.size());
  for (const Outfit* o : outfits) {
    FitbQuestion q;
    q.outfit = o->id;
    q.blank_position = 1 + rng.index(o->item_ids.size() - 1);
    const ItemId truth = o->item_ids[q.blank_position];
    for (std::size_t i = 0; i < o->item_ids.size(); ++i)
      if (i != q.blank_position) q.prefix.push_back({o->item_ids[i], g});
    q.blank_category = {ds.category_of(truth, g), g};

    auto pool = negative_pool(ds, o->id, q.blank_position, level);
    if (pool.size() < 3) {
      throw SamplingError("outfit " + std::to_string(o->id) + ": only " + std::to_string(pool.size()) + " " +
                          std::string(to_string(level)) + " negatives for item " + std::to_string(truth));
    }
    // Three distinct draws: partial Fisher-Yates over the eligible set.
    for (std::size_t k = 0; k < 3; ++k) std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
    q.choices = {truth, pool[0], pool[1], pool[2]};
    std::sort(q.choices.begin(), q.choices.end());
    q.answer_index = static_cast<std::size_t>(std::find(q.choices.begin(), q.choices.end(), truth) - q.choices.begin());
    out.push_back(std::move(q));
  }
  return out;
}

std::size_t answer_fitb(const McanParams& p, const Dataset& ds, const FitbQuestion& q) {
  auto logits = candidate_logits(p, ds, q.prefix, q.blank_category, q.choices);
  std::size_t best = q.choices.size();
  for (std::size_t i = 0; i < q.choices.size(); ++i) {
    if (ds.category_of(q.choices[i], q.blank_category.granularity) != q.blank_category.id) continue;
    if (best == q.choices.size() || logits[i] > logits[best] ||
        (logits[i] == logits[best] && q.choices[i] < q.choices[best])) {
      best = i;
    }
  }
  if (best == q.choices.size()) throw ContractError("answer_fitb: no choice belongs to the blank's category");
  return best;
}

double fitb_accuracy(const McanParams& p, const Dataset& ds, std::span<const FitbQuestion> questions) {
  if (questions.empty()) throw ContractError("fitb_accuracy: no questions");
  std::size_t correct = 0;
  for (const auto& q : questions)
    if (answer_fitb(p, ds, q) == q.answer_index) ++correct;
  return static_cast<double>(correct) / static_cast<double>(questions.size());
}

CompatTask build_compat(const Dataset& ds, Split split, SamplingLevel level, std::uint64_t seed, Granularity g) {
  auto outfits = ds.outfits_in(split);
  if (outfits.empty()) throw ContractError("build_compat: split '" + std::string(to_string(split)) + "' is empty");
  Rng rng(derive_seed(seed, "compat"));
  CompatTask task;
  task.level = level;
  for (const Outfit* o : outfits) {
    task.positives.push_back(as_tuples(*o, g));
    TupleSeq neg;
    for (std::size_t i = 0; i < o->item_ids.size(); ++i) {
      try {
        neg.push_back({sample_negative(ds, rng, o->id, i, level), g});
      } catch (const SamplingError& e) {
        throw SamplingError("compatibility task, outfit " + std::to_string(o->id) + ": " + e.what());
      }
    }
    task.negatives.push_back(std::move(neg));
  }
  return task;
}

double compat_score(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> seq,
                    const CandidatePools& pools) {
  if (seq.size() < 2) throw ContractError("compat_score: sequence needs at least 2 tuples");
  return outfit_loglik(p, ds, seq, pools) / static_cast<double>(seq.size() - 1);
}

double auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw ContractError("auc: both score lists must be non-empty");
  struct Entry {
    double v;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(pos.size() + neg.size());
  for (double v : pos) all.push_back({v, true});
  for (double v : neg) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.v < b.v; });
  // Midranks (1-based) summed over the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].positive) rank_sum += mid;
    i = j;
  }
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double compat_auc(const McanParams& p, const Dataset& ds, const CompatTask& task, const CandidatePools& pools) {
  std::vector<double> pos, neg;
  for (const auto& s : task.positives) pos.push_back(compat_score(p, ds, s, pools));
  for (const auto& s : task.negatives) neg.push_back(compat_score(p, ds, s, pools));
  return auc(pos, neg);
}

void shuffle_questions(std::vector<FitbQuestion>& qs, Rng& rng) {
  for (auto& q : qs) rng.shuffle(q.prefix);
}

void shuffle_sequences(std::vector<TupleSeq>& seqs, Rng& rng) {
  for (auto& s : seqs) rng.shuffle(s);
}

ShuffleResult shuffle_eval(const McanParams& p, const Dataset& ds, Split split, SamplingLevel level,
                           std::uint64_t seed, Granularity g) {
  CandidatePools pools(ds);
  auto questions = build_fitb(ds, split, level, seed, g);
  auto task = build_compat(ds, split, level, seed, g);

  ShuffleResult r;
  r.ordered = {fitb_accuracy(p, ds, questions), compat_auc(p, ds, task, pools), questions.size(),
               task.positives.size()};

  Rng rng(derive_seed(seed, "shuffle"));
  shuffle_questions(questions, rng);
  shuffle_sequences(task.positives, rng);
  shuffle_sequences(task.negatives, rng);
  r.shuffled = {fitb_accuracy(p, ds, questions), compat_auc(p, ds, task, pools), questions.size(),
                task.positives.size()};
  return r;
}

void write_metric(std::ostream& os, const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["level"] = r.level;
  j["order"] = r.order;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["n"] = r.n;
  j["seed"] = r.seed;
  os << j.dump() << '\n';
}

std::vector<MetricRecord> evaluate_report(const McanParams& p, const Dataset& ds, Split split,
                                          std::span<const SamplingLevel> levels, std::uint64_t seed, bool shuffled,
                                          Granularity g) {
  std::vector<MetricRecord> out;
  for (SamplingLevel level : levels) {
    const std::string lv(to_string(level));
    const std::uint64_t level_seed = derive_seed(seed, "eval/" + lv);
    auto add = [&](const Metrics& m, const char* order) {
      out.push_back({"fitb", lv, order, "accuracy", m.fitb_accuracy, m.fitb_n, seed});
      out.push_back({"compat", lv, order, "auc", m.compat_auc, m.compat_n, seed});
    };
    if (shuffled) {
      ShuffleResult r = shuffle_eval(p, ds, split, level, level_seed, g);
      add(r.ordered, "ordered");
      add(r.shuffled, "shuffled");
    } else {
      CandidatePools pools(ds);
      auto questions = build_fitb(ds, split, level, level_seed, g);
      auto task = build_compat(ds, split, level, level_seed, g);
      add({fitb_accuracy(p, ds, questions), compat_auc(p, ds, task, pools), questions.size(), task.positives.size()},
          "ordered");
    }
  }
  return out;
}

}  // namespace mcan
