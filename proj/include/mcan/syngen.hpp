#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "mcan/data.hpp"

namespace mcan {

struct GenConfig {
  std::size_t num_coarse = 3;
  std::size_t fines_per_coarse = 2;
  std::size_t items_per_fine = 40;
  std::size_t num_outfits = 400;
  std::size_t outfit_len = 4;
  std::size_t style_dim = 4;
  std::size_t d_img = 16;
  double noise_sigma = 0.05;
  // Standard deviation of the entries of M_c and p_c.
  double feature_scale = 1.0;
  std::uint64_t seed = 0;
  // Degenerate rig: M_c = I and p_c = 0 (requires style_dim == d_img).
  bool identity_maps = false;

  void validate() const;
};

// Ground truth planted by the generator. Styles are unit vectors in R^k;
// item features are prototype[c] + maps[c] * style + noise.
struct LatentRecord {
  std::size_t style_dim = 0;
  std::size_t d_img = 0;
  std::map<OutfitId, std::vector<double>> outfit_styles;
  std::map<ItemId, std::vector<double>> item_styles;
  // Row-major d_img x k per fine category.
  std::vector<std::vector<double>> maps;
  std::vector<std::vector<double>> prototypes;

  const std::vector<double>& style(ItemId id) const;

  friend bool operator==(const LatentRecord&, const LatentRecord&) = default;
};

std::pair<Dataset, LatentRecord> generate(const GenConfig& cfg);

// Candidate whose style best matches the mean prefix style; ties go to the
// lowest item id.
ItemId oracle_best_item(const LatentRecord& lat, const Dataset& ds, std::span<const ItemId> prefix,
                        CategoryRef category, std::span<const ItemId> candidates);

// Mean pairwise dot product of item styles.
double oracle_compat(const LatentRecord& lat, std::span<const ItemId> items);

void write_latent(const LatentRecord& lat, std::ostream& os);
LatentRecord read_latent(std::istream& is);
void save_latent(const LatentRecord& lat, const std::filesystem::path& path);
LatentRecord load_latent(const std::filesystem::path& path);

}  // namespace mcan
