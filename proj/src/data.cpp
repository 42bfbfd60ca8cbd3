#include "mcan/data.hpp"

#include <algorithm>
#include <fstream>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "mcan/errors.hpp"
#include "mcan/util.hpp"

namespace mcan {

std::string_view to_string(Granularity g) { return g == Granularity::fine ? "fine" : "coarse"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::none: return "none";
  }
  return "none";
}

Granularity parse_granularity(std::string_view s) {
  if (s == "fine") return Granularity::fine;
  if (s == "coarse") return Granularity::coarse;
  throw ParseError("unknown granularity '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "none") return Split::none;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

namespace {

void check_names(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty() || n.find_first_of(" \t\r\n") != std::string::npos) {
      throw ValidationError(std::string(what) + " category name '" + n + "' is empty or has whitespace");
    }
    if (!seen.insert(n).second) throw ValidationError(std::string(what) + " category name '" + n + "' is duplicated");
  }
}

}  // namespace

CategoryTaxonomy::CategoryTaxonomy(std::vector<std::string> fine_names,
                                   std::vector<CategoryId> fine_to_coarse,
                                   std::vector<std::string> coarse_names)
    : fine_names_(std::move(fine_names)),
      fine_to_coarse_(std::move(fine_to_coarse)),
      coarse_names_(std::move(coarse_names)) {
  if (fine_names_.size() != fine_to_coarse_.size()) {
    throw ValidationError("taxonomy: fine name count differs from fine-to-coarse map size");
  }
  check_names(fine_names_, "fine");
  check_names(coarse_names_, "coarse");
  for (std::size_t f = 0; f < fine_to_coarse_.size(); ++f) {
    if (fine_to_coarse_[f] >= coarse_names_.size()) {
      throw ValidationError("taxonomy: fine category " + std::to_string(f) + " maps to unknown coarse " +
                            std::to_string(fine_to_coarse_[f]));
    }
  }
}

CategoryId CategoryTaxonomy::coarse_of(CategoryId fine) const {
  if (fine >= fine_to_coarse_.size()) throw LookupError("unknown fine category " + std::to_string(fine));
  return fine_to_coarse_[fine];
}

TupleSeq as_tuples(const Outfit& o, Granularity g) {
  TupleSeq seq;
  seq.reserve(o.item_ids.size());
  for (ItemId id : o.item_ids) seq.push_back({id, g});
  return seq;
}

Dataset::Dataset(std::size_t d_img, CategoryTaxonomy taxonomy, std::vector<Item> items,
                 std::vector<Outfit> outfits)
    : d_img_(d_img), taxonomy_(std::move(taxonomy)), items_(std::move(items)), outfits_(std::move(outfits)) {
  if (d_img_ == 0) throw ValidationError("feature dimension must be positive");
  std::sort(items_.begin(), items_.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
  std::sort(outfits_.begin(), outfits_.end(), [](const Outfit& a, const Outfit& b) { return a.id < b.id; });

  fine_pools_.assign(taxonomy_.num_fine(), {});
  coarse_pools_.assign(taxonomy_.num_coarse(), {});
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Item& it = items_[i];
    if (!item_index_.emplace(it.id, i).second) throw ValidationError("item " + std::to_string(it.id) + " is duplicated");
    if (it.features.size() != d_img_) {
      throw ValidationError("item " + std::to_string(it.id) + " has " + std::to_string(it.features.size()) +
                            " features, expected " + std::to_string(d_img_));
    }
    for (double v : it.features) {
      if (!std::isfinite(v)) throw ValidationError("item " + std::to_string(it.id) + " has a non-finite feature");
    }
    if (it.fine_category >= taxonomy_.num_fine()) {
      throw ValidationError("item " + std::to_string(it.id) + " has unknown fine category " +
                            std::to_string(it.fine_category));
    }
    fine_pools_[it.fine_category].push_back(it.id);
    coarse_pools_[taxonomy_.coarse_of(it.fine_category)].push_back(it.id);
  }

  for (std::size_t i = 0; i < outfits_.size(); ++i) {
    const Outfit& o = outfits_[i];
    const std::string name = "outfit " + std::to_string(o.id);
    if (!outfit_index_.emplace(o.id, i).second) throw ValidationError(name + " is duplicated");
    if (o.item_ids.size() < 2) throw ValidationError(name + " has fewer than 2 items");
    std::set<CategoryId> fines;
    std::set<ItemId> ids;
    for (ItemId id : o.item_ids) {
      auto it = item_index_.find(id);
      if (it == item_index_.end()) throw ValidationError(name + " references unknown item " + std::to_string(id));
      if (!ids.insert(id).second) throw ValidationError(name + " repeats item " + std::to_string(id));
      if (!fines.insert(items_[it->second].fine_category).second) {
        throw ValidationError(name + " has two items of fine category " +
                              std::to_string(items_[it->second].fine_category));
      }
      item_outfits_[id].push_back(o.id);
    }
  }
}

const Item& Dataset::item(ItemId id) const {
  auto it = item_index_.find(id);
  if (it == item_index_.end()) throw LookupError("unknown item " + std::to_string(id));
  return items_[it->second];
}

const Outfit& Dataset::outfit(OutfitId id) const {
  auto it = outfit_index_.find(id);
  if (it == outfit_index_.end()) throw LookupError("unknown outfit " + std::to_string(id));
  return outfits_[it->second];
}

CategoryId Dataset::category_of(ItemId id, Granularity g) const {
  CategoryId fine = item(id).fine_category;
  return g == Granularity::fine ? fine : taxonomy_.coarse_of(fine);
}

const std::vector<ItemId>& Dataset::category_subset(CategoryId category, Granularity g) const {
  const auto& pools = g == Granularity::fine ? fine_pools_ : coarse_pools_;
  if (category >= pools.size()) {
    throw LookupError("unknown " + std::string(to_string(g)) + " category " + std::to_string(category));
  }
  return pools[category];
}

std::vector<const Outfit*> Dataset::outfits_in(Split s) const {
  std::vector<const Outfit*> out;
  for (const auto& o : outfits_)
    if (o.split == s) out.push_back(&o);
  return out;
}

const std::vector<OutfitId>& Dataset::outfits_of(ItemId id) const {
  static const std::vector<OutfitId> none;
  auto it = item_outfits_.find(id);
  return it == item_outfits_.end() ? none : it->second;
}

void write_dataset(const Dataset& d, std::ostream& os) {
  const auto& tax = d.taxonomy();
  os << "H " << d.d_img() << '\n';
  for (std::size_t c = 0; c < tax.num_coarse(); ++c) os << "T coarse " << c << ' ' << tax.coarse_name(c) << '\n';
  for (std::size_t f = 0; f < tax.num_fine(); ++f)
    os << "T fine " << f << ' ' << tax.fine_name(f) << ' ' << tax.coarse_of(f) << '\n';
  for (const auto& it : d.items()) {
    os << "I " << it.id << ' ' << it.fine_category;
    for (double v : it.features) os << ' ' << format_real(v);
    os << '\n';
  }
  for (const auto& o : d.outfits()) {
    os << "O " << o.id << ' ' << to_string(o.split);
    for (ItemId id : o.item_ids) os << ' ' << id;
    os << '\n';
  }
}

namespace {

struct PendingTaxonomy {
  std::map<CategoryId, std::pair<std::string, CategoryId>> fine;
  std::map<CategoryId, std::string> coarse;
};

template <typename Map>
void require_dense(const Map& m, const char* what) {
  std::size_t expect = 0;
  for (const auto& [id, _] : m) {
    if (id != expect) throw ValidationError(std::string(what) + " category ids are not dense from 0 (missing " + std::to_string(expect) + ")");
    ++expect;
  }
}

}  // namespace

Dataset read_dataset(std::istream& is) {
  std::optional<std::size_t> d_img;
  PendingTaxonomy tax;
  std::vector<Item> items;
  std::vector<Outfit> outfits;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    try {
      if (tok[0] == "H") {
        if (tok.size() != 2) throw ParseError("header expects 1 field");
        if (d_img) throw ParseError("duplicate header");
        d_img = parse_index(tok[1]);
      } else if (tok[0] == "T") {
        if (tok.size() < 2) throw ParseError("taxonomy record missing kind");
        if (tok[1] == "fine") {
          if (tok.size() != 5) throw ParseError("fine taxonomy record expects 3 fields");
          auto id = parse_index(tok[2]);
          if (!tax.fine.emplace(id, std::pair{std::string(tok[3]), parse_index(tok[4])}).second)
            throw ParseError("duplicate fine category " + std::to_string(id));
        } else if (tok[1] == "coarse") {
          if (tok.size() != 4) throw ParseError("coarse taxonomy record expects 2 fields");
          auto id = parse_index(tok[2]);
          if (!tax.coarse.emplace(id, std::string(tok[3])).second)
            throw ParseError("duplicate coarse category " + std::to_string(id));
        } else {
          throw ParseError("unknown taxonomy kind '" + std::string(tok[1]) + "'");
        }
      } else if (tok[0] == "I") {
        if (!d_img) throw ParseError("item record before header");
        if (tok.size() != 3 + *d_img) {
          throw ParseError("item record expects " + std::to_string(2 + *d_img) + " fields, got " +
                           std::to_string(tok.size() - 1));
        }
        Item it;
        it.id = parse_int(tok[1]);
        it.fine_category = parse_index(tok[2]);
        it.features.reserve(*d_img);
        for (std::size_t k = 3; k < tok.size(); ++k) it.features.push_back(parse_real(tok[k]));
        items.push_back(std::move(it));
      } else if (tok[0] == "O") {
        if (tok.size() < 3) throw ParseError("outfit record expects an id and a split");
        Outfit o;
        o.id = parse_int(tok[1]);
        o.split = parse_split(tok[2]);
        for (std::size_t k = 3; k < tok.size(); ++k) o.item_ids.push_back(parse_int(tok[k]));
        outfits.push_back(std::move(o));
      } else {
        throw ParseError("unknown record kind '" + std::string(tok[0]) + "'");
      }
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!d_img) throw ParseError("missing header record");
  require_dense(tax.fine, "fine");
  require_dense(tax.coarse, "coarse");
  std::vector<std::string> fine_names, coarse_names;
  std::vector<CategoryId> f2c;
  for (auto& [id, v] : tax.fine) {
    fine_names.push_back(v.first);
    f2c.push_back(v.second);
  }
  for (auto& [id, n] : tax.coarse) coarse_names.push_back(n);
  return Dataset(*d_img, CategoryTaxonomy(std::move(fine_names), std::move(f2c), std::move(coarse_names)),
                 std::move(items), std::move(outfits));
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return read_dataset(in);
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset " + path.string());
  write_dataset(d, out);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace mcan
