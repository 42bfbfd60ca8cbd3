#include "mcan/syngen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "mcan/errors.hpp"
#include "mcan/util.hpp"

namespace mcan {

void GenConfig::validate() const {
  if (num_coarse == 0 || fines_per_coarse == 0 || items_per_fine == 0 || num_outfits == 0 ||
      outfit_len == 0 || style_dim == 0 || d_img == 0) {
    throw ConfigError("generator counts must all be positive");
  }
  if (outfit_len < 2) throw ConfigError("outfit_len must be at least 2");
  if (outfit_len > num_coarse * fines_per_coarse) {
    throw ConfigError("outfit_len " + std::to_string(outfit_len) + " exceeds the " +
                      std::to_string(num_coarse * fines_per_coarse) + " available fine categories");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (!(feature_scale > 0.0) || !std::isfinite(feature_scale)) throw ConfigError("feature_scale must be positive");
  if (identity_maps && style_dim != d_img) throw ConfigError("identity_maps requires style_dim == d_img");
}

const std::vector<double>& LatentRecord::style(ItemId id) const {
  auto it = item_styles.find(id);
  if (it == item_styles.end()) throw LookupError("no latent style for item " + std::to_string(id));
  return it->second;
}

namespace {

std::vector<double> unit_vector(Rng& rng, std::size_t k) {
  std::vector<double> v(k);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal(0.0, 1.0);
      norm += x * x;
    }
  } while (norm < 1e-24);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::vector<double> render(const LatentRecord& lat, CategoryId fine, const std::vector<double>& style,
                           double sigma, Rng& noise) {
  const std::size_t d = lat.d_img, k = lat.style_dim;
  const auto& m = lat.maps[fine];
  std::vector<double> out(lat.prototypes[fine]);
  for (std::size_t r = 0; r < d; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) acc += m[r * k + c] * style[c];
    out[r] += acc;
    if (sigma > 0.0) out[r] += noise.normal(0.0, sigma);
  }
  return out;
}

}  // namespace

std::pair<Dataset, LatentRecord> generate(const GenConfig& cfg) {
  cfg.validate();
  const std::size_t num_fine = cfg.num_coarse * cfg.fines_per_coarse;
  Rng map_rng(derive_seed(cfg.seed, "syngen/maps"));
  Rng outfit_rng(derive_seed(cfg.seed, "syngen/outfits"));
  Rng distractor_rng(derive_seed(cfg.seed, "syngen/distractors"));
  Rng noise_rng(derive_seed(cfg.seed, "syngen/noise"));

  std::vector<std::string> coarse_names, fine_names;
  std::vector<CategoryId> f2c;
  for (std::size_t c = 0; c < cfg.num_coarse; ++c) {
    coarse_names.push_back("coarse" + std::to_string(c));
    for (std::size_t j = 0; j < cfg.fines_per_coarse; ++j) {
      fine_names.push_back("fine" + std::to_string(c) + "_" + std::to_string(j));
      f2c.push_back(c);
    }
  }

  LatentRecord lat;
  lat.style_dim = cfg.style_dim;
  lat.d_img = cfg.d_img;
  for (std::size_t f = 0; f < num_fine; ++f) {
    std::vector<double> m(cfg.d_img * cfg.style_dim, 0.0);
    std::vector<double> p(cfg.d_img, 0.0);
    if (cfg.identity_maps) {
      for (std::size_t r = 0; r < cfg.d_img; ++r) m[r * cfg.style_dim + r] = 1.0;
    } else {
      for (auto& x : m) x = map_rng.normal(0.0, cfg.feature_scale);
      for (auto& x : p) x = map_rng.normal(0.0, cfg.feature_scale);
    }
    lat.maps.push_back(std::move(m));
    lat.prototypes.push_back(std::move(p));
  }

  std::vector<Item> items;
  std::vector<Outfit> outfits;
  std::vector<std::size_t> per_fine(num_fine, 0);
  ItemId next_item = 0;

  const std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.70 * cfg.num_outfits)));
  const std::size_t n_val = std::min(cfg.num_outfits - std::min(cfg.num_outfits, n_train),
                                     static_cast<std::size_t>(std::llround(0.15 * cfg.num_outfits)));

  std::vector<CategoryId> fines(num_fine);
  for (std::size_t o = 0; o < cfg.num_outfits; ++o) {
    Outfit outfit;
    outfit.id = static_cast<OutfitId>(o);
    outfit.split = o < n_train ? Split::train : (o < n_train + n_val ? Split::val : Split::test);
    auto u = unit_vector(outfit_rng, cfg.style_dim);
    for (std::size_t f = 0; f < num_fine; ++f) fines[f] = f;
    // Partial Fisher-Yates: the first outfit_len entries become the categories.
    for (std::size_t i = 0; i < cfg.outfit_len; ++i) std::swap(fines[i], fines[i + outfit_rng.index(num_fine - i)]);
    for (std::size_t i = 0; i < cfg.outfit_len; ++i) {
      Item it{next_item++, render(lat, fines[i], u, cfg.noise_sigma, noise_rng), fines[i]};
      lat.item_styles.emplace(it.id, u);
      outfit.item_ids.push_back(it.id);
      ++per_fine[fines[i]];
      items.push_back(std::move(it));
    }
    lat.outfit_styles.emplace(outfit.id, std::move(u));
    outfits.push_back(std::move(outfit));
  }

  for (std::size_t f = 0; f < num_fine; ++f) {
    while (per_fine[f] < cfg.items_per_fine) {
      auto v = unit_vector(distractor_rng, cfg.style_dim);
      bool clash = std::any_of(lat.outfit_styles.begin(), lat.outfit_styles.end(),
                               [&](const auto& kv) { return kv.second == v; });
      if (clash) continue;
      Item it{next_item++, render(lat, f, v, cfg.noise_sigma, noise_rng), f};
      lat.item_styles.emplace(it.id, std::move(v));
      ++per_fine[f];
      items.push_back(std::move(it));
    }
  }

  Dataset ds(cfg.d_img, CategoryTaxonomy(std::move(fine_names), std::move(f2c), std::move(coarse_names)),
             std::move(items), std::move(outfits));
  return {std::move(ds), std::move(lat)};
}

namespace {
double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
}  // namespace

ItemId oracle_best_item(const LatentRecord& lat, const Dataset& ds, std::span<const ItemId> prefix,
                        CategoryRef category, std::span<const ItemId> candidates) {
  if (candidates.empty()) throw ContractError("oracle_best_item: empty candidate set");
  if (prefix.empty()) throw ContractError("oracle_best_item: empty prefix");
  for (ItemId c : candidates) {
    if (ds.category_of(c, category.granularity) != category.id) {
      throw ContractError("oracle_best_item: candidate " + std::to_string(c) + " is not in the requested category");
    }
  }
  std::vector<double> mean(lat.style_dim, 0.0);
  for (ItemId id : prefix) {
    const auto& s = lat.style(id);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s[i];
  }
  for (auto& x : mean) x /= static_cast<double>(prefix.size());
  ItemId best = candidates[0];
  double best_score = dot(lat.style(best), mean);
  for (ItemId c : candidates.subspan(1)) {
    double s = dot(lat.style(c), mean);
    if (s > best_score || (s == best_score && c < best)) {
      best = c;
      best_score = s;
    }
  }
  return best;
}

double oracle_compat(const LatentRecord& lat, std::span<const ItemId> items) {
  if (items.size() < 2) throw ContractError("oracle_compat: need at least 2 items");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      total += dot(lat.style(items[i]), lat.style(items[j]));
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

void write_latent(const LatentRecord& lat, std::ostream& os) {
  os << "L " << lat.style_dim << ' ' << lat.d_img << ' ' << lat.maps.size() << '\n';
  for (std::size_t f = 0; f < lat.maps.size(); ++f) {
    os << "M " << f;
    for (double v : lat.maps[f]) os << ' ' << format_real(v);
    os << '\n';
    os << "P " << f;
    for (double v : lat.prototypes[f]) os << ' ' << format_real(v);
    os << '\n';
  }
  for (const auto& [id, u] : lat.outfit_styles) {
    os << "U " << id;
    for (double v : u) os << ' ' << format_real(v);
    os << '\n';
  }
  for (const auto& [id, s] : lat.item_styles) {
    os << "S " << id;
    for (double v : s) os << ' ' << format_real(v);
    os << '\n';
  }
}

LatentRecord read_latent(std::istream& is) {
  LatentRecord lat;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  auto reals = [](const std::vector<std::string_view>& tok, std::size_t expect) {
    if (tok.size() != 2 + expect) {
      throw ParseError("expected " + std::to_string(expect) + " values, got " + std::to_string(tok.size() - 2));
    }
    std::vector<double> v;
    v.reserve(expect);
    for (std::size_t i = 2; i < tok.size(); ++i) v.push_back(parse_real(tok[i]));
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    try {
      if (tok[0] == "L") {
        if (tok.size() != 4) throw ParseError("latent header expects 3 fields");
        lat.style_dim = parse_index(tok[1]);
        lat.d_img = parse_index(tok[2]);
        std::size_t nf = parse_index(tok[3]);
        lat.maps.assign(nf, {});
        lat.prototypes.assign(nf, {});
        have_header = true;
      } else if (!have_header) {
        throw ParseError("record before latent header");
      } else if (tok[0] == "M" || tok[0] == "P") {
        if (tok.size() < 2) throw ParseError("missing category id");
        std::size_t f = parse_index(tok[1]);
        if (f >= lat.maps.size()) throw ParseError("category " + std::to_string(f) + " out of range");
        if (tok[0] == "M") lat.maps[f] = reals(tok, lat.d_img * lat.style_dim);
        else lat.prototypes[f] = reals(tok, lat.d_img);
      } else if (tok[0] == "U") {
        if (tok.size() < 2) throw ParseError("missing outfit id");
        lat.outfit_styles[parse_int(tok[1])] = reals(tok, lat.style_dim);
      } else if (tok[0] == "S") {
        if (tok.size() < 2) throw ParseError("missing item id");
        lat.item_styles[parse_int(tok[1])] = reals(tok, lat.style_dim);
      } else {
        throw ParseError("unknown record kind '" + std::string(tok[0]) + "'");
      }
    } catch (const ParseError& e) {
      throw ParseError("latent line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw ParseError("latent file has no header");
  return lat;
}

void save_latent(const LatentRecord& lat, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write latent record " + path.string());
  write_latent(lat, out);
  if (!out) throw IoError("write failed for " + path.string());
}

LatentRecord load_latent(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open latent record " + path.string());
  return read_latent(in);
}

}  // namespace mcan
