#include "mcan/recommender.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "mcan/errors.hpp"
#include "mcan/util.hpp"

namespace mcan {

std::vector<std::pair<ItemId, double>> recommend_item(const McanParams& p, const Dataset& ds,
                                                      std::span<const TupleEntry> given, CategoryRef category,
                                                      const CandidatePools& pools, std::size_t k,
                                                      std::span<const ItemId> exclude) {
  if (k == 0) throw ContractError("recommend_item: k must be at least 1");
  std::vector<ItemId> candidates;
  for (ItemId id : pools.of(category))
    if (std::find(exclude.begin(), exclude.end(), id) == exclude.end()) candidates.push_back(id);
  if (candidates.empty()) {
    throw LookupError("no candidate items for " + std::string(to_string(category.granularity)) + " category " +
                      std::to_string(category.id));
  }
  auto probs = item_distribution(p, ds, given, category, candidates);
  std::vector<std::pair<ItemId, double>> ranked;
  ranked.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) ranked.emplace_back(candidates[i], probs[i]);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

std::vector<std::pair<CategoryId, double>> recommend_category(const McanParams& p, const Dataset& ds,
                                                              std::span<const TupleEntry> given, Granularity g) {
  auto probs = category_distribution(p, ds, given, g);
  std::vector<std::pair<CategoryId, double>> ranked;
  for (CategoryId c = 0; c < probs.size(); ++c) ranked.emplace_back(c, probs[c]);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return ranked;
}

void Query::validate() const {
  if (given.empty()) throw ValidationError("query: at least one given tuple is required");
  if (plan.empty()) throw ValidationError("query: plan must have at least one step");
  if (max_len < given.size() + plan.size()) {
    throw ValidationError("query: max_len " + std::to_string(max_len) + " is shorter than given + plan (" +
                          std::to_string(given.size() + plan.size()) + ")");
  }
}

Completion complete_outfit(const McanParams& p, const Dataset& ds, const Query& q, const CandidatePools& pools) {
  q.validate();
  for (const auto& e : q.given) {
    if (!ds.has_item(e.item)) throw LookupError("query: unknown item " + std::to_string(e.item));
  }
  Completion out;
  out.outfit = q.given;
  for (const PlanStep& step : q.plan) {
    if (out.outfit.size() >= q.max_len) break;
    std::vector<ItemId> used;
    for (const auto& e : out.outfit) used.push_back(e.item);

    CompletionStep cs;
    if (step.category) {
      if (*step.category >= ds.taxonomy().count(step.granularity)) {
        throw LookupError("query: unknown " + std::string(to_string(step.granularity)) + " category " +
                          std::to_string(*step.category));
      }
      cs.category = *step.category;
    } else {
      std::vector<CategoryId> taken;
      for (const auto& e : out.outfit) taken.push_back(ds.category_of(e.item, step.granularity));
      bool found = false;
      for (const auto& [c, prob] : recommend_category(p, ds, out.outfit, step.granularity)) {
        if (std::find(taken.begin(), taken.end(), c) != taken.end()) continue;
        cs.category = c;
        cs.category_probability = prob;
        found = true;
        break;
      }
      if (!found) {
        throw CompletionError("wildcard step: every " + std::string(to_string(step.granularity)) +
                              " category is already used in the outfit");
      }
    }

    const CategoryRef cat{cs.category, step.granularity};
    std::vector<ItemId> remaining;
    for (ItemId id : pools.of(cat))
      if (std::find(used.begin(), used.end(), id) == used.end()) remaining.push_back(id);
    if (remaining.empty()) {
      throw CompletionError("no unused item left in " + std::string(to_string(step.granularity)) + " category " +
                            std::to_string(cs.category));
    }
    auto top = recommend_item(p, ds, out.outfit, cat, pools, 1, used);
    cs.tuple = {top.front().first, step.granularity};
    cs.item_probability = top.front().second;
    out.outfit.push_back(cs.tuple);
    out.steps.push_back(cs);
  }
  return out;
}

Query read_query(std::istream& is) {
  Query q;
  bool have_m = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty() || toks[0].front() == '#') continue;
    auto fail = [&](const std::string& msg) -> ParseError {
      return ParseError("line " + std::to_string(lineno) + ": " + msg);
    };
    try {
      if (toks[0] == "M") {
        if (toks.size() != 2) throw fail("expected 'M <max_len>'");
        if (have_m) throw fail("duplicate M record");
        q.max_len = parse_index(toks[1]);
        have_m = true;
      } else if (toks[0] == "G") {
        if (toks.size() != 3) throw fail("expected 'G <item_id> <granularity>'");
        q.given.push_back({parse_int(toks[1]), parse_granularity(toks[2])});
      } else if (toks[0] == "S") {
        if (toks.size() != 3) throw fail("expected 'S <category_id|*> <granularity>'");
        PlanStep s;
        if (toks[1] != "*") s.category = parse_index(toks[1]);
        s.granularity = parse_granularity(toks[2]);
        q.plan.push_back(s);
      } else {
        throw fail("unknown record '" + std::string(toks[0]) + "'");
      }
    } catch (const ParseError& e) {
      std::string msg = e.what();
      if (msg.rfind("line ", 0) == 0) throw;
      throw fail(msg);
    }
  }
  if (!have_m) {
    q.max_len = q.given.size() + q.plan.size();
  }
  q.validate();
  return q;
}

Query load_query(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open query file '" + path.string() + "'");
  return read_query(in);
}

void write_query(std::ostream& os, const Query& q) {
  os << "M " << q.max_len << '\n';
  for (const auto& e : q.given) os << "G " << e.item << ' ' << to_string(e.granularity) << '\n';
  for (const auto& s : q.plan) {
    os << "S ";
    if (s.category) {
      os << *s.category;
    } else {
      os << '*';
    }
    os << ' ' << to_string(s.granularity) << '\n';
  }
}

void write_completion(std::ostream& os, const Completion& c, std::size_t given_count) {
  for (std::size_t i = 0; i < given_count && i < c.outfit.size(); ++i) {
    os << "G " << c.outfit[i].item << ' ' << to_string(c.outfit[i].granularity) << '\n';
  }
  for (const auto& s : c.steps) {
    os << "R " << s.tuple.item << ' ' << to_string(s.tuple.granularity) << ' ' << s.category << ' '
       << format_real(s.category_probability) << ' ' << format_real(s.item_probability) << '\n';
  }
}

}  // namespace mcan
