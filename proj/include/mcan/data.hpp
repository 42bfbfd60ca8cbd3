#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mcan {

using ItemId = std::int64_t;
using OutfitId = std::int64_t;
using CategoryId = std::size_t;

enum class Granularity { fine, coarse };
enum class Split { train, val, test, none };

std::string_view to_string(Granularity g);
std::string_view to_string(Split s);
Granularity parse_granularity(std::string_view s);
Split parse_split(std::string_view s);

struct CategoryRef {
  CategoryId id = 0;
  Granularity granularity = Granularity::fine;

  friend bool operator==(const CategoryRef&, const CategoryRef&) = default;
};

// Fine categories map many-to-one onto coarse ones; ids are dense and 0-based.
class CategoryTaxonomy {
 public:
  CategoryTaxonomy() = default;
  CategoryTaxonomy(std::vector<std::string> fine_names, std::vector<CategoryId> fine_to_coarse,
                   std::vector<std::string> coarse_names);

  std::size_t num_fine() const { return fine_names_.size(); }
  std::size_t num_coarse() const { return coarse_names_.size(); }
  std::size_t count(Granularity g) const { return g == Granularity::fine ? num_fine() : num_coarse(); }
  CategoryId coarse_of(CategoryId fine) const;
  const std::string& fine_name(CategoryId id) const { return fine_names_.at(id); }
  const std::string& coarse_name(CategoryId id) const { return coarse_names_.at(id); }
  const std::vector<CategoryId>& fine_to_coarse() const { return fine_to_coarse_; }

  friend bool operator==(const CategoryTaxonomy&, const CategoryTaxonomy&) = default;

 private:
  std::vector<std::string> fine_names_;
  std::vector<CategoryId> fine_to_coarse_;
  std::vector<std::string> coarse_names_;
};

struct Item {
  ItemId id = 0;
  std::vector<double> features;
  CategoryId fine_category = 0;

  friend bool operator==(const Item&, const Item&) = default;
};

struct Outfit {
  OutfitId id = 0;
  Split split = Split::none;
  std::vector<ItemId> item_ids;

  friend bool operator==(const Outfit&, const Outfit&) = default;
};

struct TupleEntry {
  ItemId item = 0;
  Granularity granularity = Granularity::fine;

  friend bool operator==(const TupleEntry&, const TupleEntry&) = default;
};

// The model's input unit: an ordered run of (item, granularity) tuples.
using TupleSeq = std::vector<TupleEntry>;

TupleSeq as_tuples(const Outfit& o, Granularity g);

// Immutable, validated collection of taxonomy, items and outfits. Construction
// enforces every invariant; a Dataset that exists is a valid one.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t d_img, CategoryTaxonomy taxonomy, std::vector<Item> items,
          std::vector<Outfit> outfits);

  std::size_t d_img() const { return d_img_; }
  const CategoryTaxonomy& taxonomy() const { return taxonomy_; }
  const std::vector<Item>& items() const { return items_; }
  const std::vector<Outfit>& outfits() const { return outfits_; }

  const Item& item(ItemId id) const;
  const Outfit& outfit(OutfitId id) const;
  bool has_item(ItemId id) const { return item_index_.count(id) != 0; }

  CategoryId category_of(ItemId id, Granularity g) const;
  CategoryRef category_ref(const TupleEntry& e) const { return {category_of(e.item, e.granularity), e.granularity}; }

  // Items of the category, ascending by id.
  const std::vector<ItemId>& category_subset(CategoryId category, Granularity g) const;
  const std::vector<ItemId>& category_subset(CategoryRef c) const { return category_subset(c.id, c.granularity); }

  // Outfits of a split, ascending by id.
  std::vector<const Outfit*> outfits_in(Split s) const;
  // Outfit ids that contain the item.
  const std::vector<OutfitId>& outfits_of(ItemId id) const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.d_img_ == b.d_img_ && a.taxonomy_ == b.taxonomy_ && a.items_ == b.items_ &&
           a.outfits_ == b.outfits_;
  }

 private:
  std::size_t d_img_ = 0;
  CategoryTaxonomy taxonomy_;
  std::vector<Item> items_;
  std::vector<Outfit> outfits_;
  std::map<ItemId, std::size_t> item_index_;
  std::map<OutfitId, std::size_t> outfit_index_;
  std::map<ItemId, std::vector<OutfitId>> item_outfits_;
  std::vector<std::vector<ItemId>> fine_pools_;
  std::vector<std::vector<ItemId>> coarse_pools_;
};

// Canonical line format: H, T coarse, T fine, I, O records, each block sorted by id.
void write_dataset(const Dataset& d, std::ostream& os);
Dataset read_dataset(std::istream& is);
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& d, const std::filesystem::path& path);

}  // namespace mcan
