#include "mcan/model.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "mcan/errors.hpp"
#include "mcan/util.hpp"

namespace mcan {

using ag::Tensor;
using ag::Var;

void ModelConfig::validate() const {
  if (d == 0 || d_img == 0 || d_c == 0 || hidden_a == 0 || hidden_f == 0 || hidden_s == 0) {
    throw ConfigError("model widths must all be positive");
  }
  if (num_fine == 0 || num_coarse == 0) throw ConfigError("model needs at least one fine and one coarse category");
}

ModelConfig model_config_for(const Dataset& ds, std::size_t d) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.d_img = ds.d_img();
  cfg.num_fine = ds.taxonomy().num_fine();
  cfg.num_coarse = ds.taxonomy().num_coarse();
  return cfg;
}

McanParams McanParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  McanParams p;
  p.config = cfg;
  p.e_fine = Tensor::zeros({cfg.num_fine, cfg.d_c}, true);
  p.e_coarse = Tensor::zeros({cfg.num_coarse, cfg.d_c}, true);
  p.w_f = Tensor::zeros({cfg.d, cfg.d_img}, true);
  p.w_g = Tensor::zeros({cfg.d, cfg.d_img}, true);
  p.w_h = Tensor::zeros({cfg.d, cfg.d_img}, true);
  const std::size_t attn[] = {2 * cfg.d, cfg.hidden_a, 1};
  const std::size_t mixw[] = {cfg.d + cfg.d_c, cfg.hidden_f, cfg.d};
  const std::size_t score[] = {2 * cfg.d, cfg.hidden_s, 1};
  const std::size_t cplf[] = {cfg.d, cfg.num_fine};
  const std::size_t cplc[] = {cfg.d, cfg.num_coarse};
  p.attn = ag::make_ffn(attn);
  p.mix_fine = ag::make_ffn(mixw);
  p.mix_coarse = ag::make_ffn(mixw);
  p.scorer = ag::make_ffn(score);
  p.cpl_fine = ag::make_ffn(cplf);
  p.cpl_coarse = ag::make_ffn(cplc);
  return p;
}

McanParams McanParams::init(const ModelConfig& cfg) {
  McanParams p = zeros(cfg);
  Rng rng(derive_seed(cfg.seed, "model/init"));
  for (auto& [name, t] : p.named()) {
    if (name.find(".b") != std::string::npos) continue;
    for (auto& v : t->values()) v = rng.uniform(-0.05, 0.05);
  }
  return p;
}

namespace {
template <typename Self, typename Ptr>
std::vector<std::pair<std::string, Ptr>> named_impl(Self& p) {
  std::vector<std::pair<std::string, Ptr>> out{
      {"e_fine", &p.e_fine}, {"e_coarse", &p.e_coarse}, {"w_f", &p.w_f}, {"w_g", &p.w_g}, {"w_h", &p.w_h}};
  auto add = [&](const std::string& prefix, auto& net) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      out.emplace_back(prefix + ".w" + std::to_string(l), &net.weights[l]);
      out.emplace_back(prefix + ".b" + std::to_string(l), &net.biases[l]);
    }
  };
  add("attn", p.attn);
  add("mix_fine", p.mix_fine);
  add("mix_coarse", p.mix_coarse);
  add("scorer", p.scorer);
  add("cpl_fine", p.cpl_fine);
  add("cpl_coarse", p.cpl_coarse);
  return out;
}
}  // namespace

std::vector<std::pair<std::string, Tensor*>> McanParams::named() { return named_impl<McanParams, Tensor*>(*this); }

std::vector<std::pair<std::string, const Tensor*>> McanParams::named() const {
  return named_impl<const McanParams, const Tensor*>(*this);
}

std::vector<Tensor*> McanParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& [_, t] : named()) out.push_back(t);
  return out;
}

CandidatePools::CandidatePools(const Dataset& ds) {
  for (std::size_t f = 0; f < ds.taxonomy().num_fine(); ++f) fine_.push_back(ds.category_subset(f, Granularity::fine));
  for (std::size_t c = 0; c < ds.taxonomy().num_coarse(); ++c)
    coarse_.push_back(ds.category_subset(c, Granularity::coarse));
}

CandidatePools::CandidatePools(std::vector<std::vector<ItemId>> fine, std::vector<std::vector<ItemId>> coarse)
    : fine_(std::move(fine)), coarse_(std::move(coarse)) {
  for (auto* pools : {&fine_, &coarse_})
    for (auto& p : *pools) std::sort(p.begin(), p.end());
}

const std::vector<ItemId>& CandidatePools::of(CategoryRef c) const {
  const auto& pools = c.granularity == Granularity::fine ? fine_ : coarse_;
  if (c.id >= pools.size()) {
    throw LookupError("no candidate pool for " + std::string(to_string(c.granularity)) + " category " +
                      std::to_string(c.id));
  }
  return pools[c.id];
}

// ---- graph ----------------------------------------------------------------

McanGraph::McanGraph(const McanParams& params, ag::Tape& tape) : params_(params), tape_(tape) {}

McanGraph::McanGraph(const McanParams& params, const Dataset& ds, ag::Tape& tape)
    : params_(params), ds_(&ds), tape_(tape) {
  if (ds.d_img() != params.config.d_img) {
    throw DimensionError("model expects " + std::to_string(params.config.d_img) + " features, dataset has " +
                         std::to_string(ds.d_img()));
  }
  if (ds.taxonomy().num_fine() != params.config.num_fine || ds.taxonomy().num_coarse() != params.config.num_coarse) {
    throw DimensionError("model category counts do not match the dataset taxonomy");
  }
}

const Dataset& McanGraph::dataset() const {
  if (!ds_) throw ContractError("model graph was built without a dataset");
  return *ds_;
}

Var McanGraph::features(std::span<const ItemId> items) {
  if (items.empty()) throw ContractError("features: empty item list");
  const Dataset& ds = dataset();
  const std::size_t d = ds.d_img();
  std::vector<double> v;
  v.reserve(items.size() * d);
  for (ItemId id : items) {
    const auto& f = ds.item(id).features;
    v.insert(v.end(), f.begin(), f.end());
  }
  return tape_.constant(Tensor({items.size(), d}, std::move(v)));
}

Var McanGraph::embed(std::span<const CategoryId> ids, Granularity g) {
  const Tensor& table = params_.embeddings(g);
  for (CategoryId id : ids) {
    if (id >= table.rows()) {
      throw LookupError("unknown " + std::string(to_string(g)) + " category " + std::to_string(id));
    }
  }
  return ag::gather_rows(tape_.param(table), ids);
}

Var McanGraph::attend(Var x, AttentionMask mask, Var* alpha_out) {
  const auto& cfg = params_.config;
  if (x.cols() != cfg.d_img) {
    throw DimensionError("attend: expected " + std::to_string(cfg.d_img) + " feature columns, got " +
                         std::to_string(x.cols()));
  }
  const std::size_t n = x.rows();
  Var f = ag::matmul_nt(x, tape_.param(params_.w_f));
  Var g = ag::matmul_nt(x, tape_.param(params_.w_g));
  // First layer of a on [F_i, G_k] split into its F and G column blocks so
  // the n^2 pairs only need an add.
  Var w0 = tape_.param(params_.attn.weights[0]);
  Var fa = ag::matmul_nt(f, ag::slice_cols(w0, 0, cfg.d));
  Var gb = ag::matmul_nt(g, ag::slice_cols(w0, cfg.d, 2 * cfg.d));
  std::vector<std::size_t> rows(n * n), cols(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      rows[i * n + k] = i;
      cols[i * n + k] = k;
    }
  Var pre = ag::add_row(ag::add(ag::gather_rows(fa, rows), ag::gather_rows(gb, cols)),
                        tape_.param(params_.attn.biases[0]));
  Var e = ag::reshape(ag::ffn_tail(params_.attn, pre), {n, n});
  Var alpha = mask == AttentionMask::causal ? ag::softmax_rows(e, ag::causal_mask(n)) : ag::softmax_rows(e);
  if (alpha_out) *alpha_out = alpha;
  return ag::matmul(alpha, g);
}

Var McanGraph::mix(Var h, Var c, Granularity g) {
  const auto& cfg = params_.config;
  if (h.cols() != cfg.d || c.cols() != cfg.d_c) {
    throw DimensionError("mix: expected widths " + std::to_string(cfg.d) + " and " + std::to_string(cfg.d_c) +
                         ", got " + std::to_string(h.cols()) + " and " + std::to_string(c.cols()));
  }
  return ag::ffn_apply(params_.mixer(g), ag::concat_cols(h, c));
}

Var McanGraph::prefix_state(std::span<const TupleEntry> prefix) {
  if (prefix.empty()) throw ContractError("prefix_state: empty prefix");
  const std::size_t n = prefix.size();
  std::vector<ItemId> items;
  for (const auto& e : prefix) items.push_back(e.item);
  Var h = attend(features(items), AttentionMask::none);

  std::optional<Var> pooled;
  for (Granularity g : {Granularity::fine, Granularity::coarse}) {
    std::vector<std::size_t> rows;
    std::vector<CategoryId> cats;
    for (std::size_t j = 0; j < n; ++j) {
      if (prefix[j].granularity != g) continue;
      rows.push_back(j);
      cats.push_back(dataset().category_of(prefix[j].item, g));
    }
    if (rows.empty()) continue;
    Var hg = rows.size() == n ? h : ag::gather_rows(h, rows);
    Var part = ag::mean_rows(mix(hg, embed(cats, g), g));
    if (rows.size() != n) part = ag::scale(part, static_cast<double>(rows.size()) / static_cast<double>(n));
    pooled = pooled ? ag::add(*pooled, part) : part;
  }
  return *pooled;
}

std::vector<Var> McanGraph::prefix_states(std::span<const TupleEntry> seq) {
  std::vector<Var> out;
  for (std::size_t i = 1; i < seq.size(); ++i) out.push_back(prefix_state(seq.first(i)));
  return out;
}

Var McanGraph::candidate_tuples(std::span<const ItemId> items, CategoryRef category) {
  Var proj = ag::matmul_nt(features(items), tape_.param(params_.w_h));
  std::vector<CategoryId> cats(items.size(), category.id);
  return mix(proj, embed(cats, category.granularity), category.granularity);
}

Var McanGraph::pool_tuples(const CandidatePools& pools, CategoryRef category) {
  auto key = std::make_tuple(&pools, category.granularity, category.id);
  if (auto it = pool_cache_.find(key); it != pool_cache_.end()) return it->second.first;
  const auto& items = pools.of(category);
  if (items.empty()) {
    throw LookupError("empty candidate pool for " + std::string(to_string(category.granularity)) + " category " +
                      std::to_string(category.id));
  }
  Var t = candidate_tuples(items, category);
  pool_cache_.emplace(key, std::pair{t, scorer_hidden_from_tuples(t)});
  return t;
}

Var McanGraph::scorer_hidden_from_tuples(Var tuples) {
  const std::size_t d = params_.config.d;
  return ag::matmul_nt(tuples, ag::slice_cols(tape_.param(params_.scorer.weights[0]), d, 2 * d));
}

Var McanGraph::item_logits(Var state, Var tuples) {
  const std::size_t d = params_.config.d;
  if (state.cols() != d || tuples.cols() != d) throw DimensionError("item_logits: state and tuples must have width d");
  std::optional<Var> tproj;
  for (const auto& [_, cached] : pool_cache_) {
    if (cached.first.id == tuples.id) {
      tproj = cached.second;
      break;
    }
  }
  if (!tproj) tproj = scorer_hidden_from_tuples(tuples);
  Var sproj = ag::add(ag::matmul_nt(state, ag::slice_cols(tape_.param(params_.scorer.weights[0]), 0, d)),
                      tape_.param(params_.scorer.biases[0]));
  Var out = ag::ffn_tail(params_.scorer, ag::add_row(*tproj, sproj));
  return ag::reshape(out, {1, tuples.rows()});
}

Var McanGraph::category_logits(Var state, Granularity g) {
  if (!params_.config.use_cpl) throw AblationError("category prediction layer is disabled (use_cpl = false)");
  return ag::ffn_apply(params_.cpl(g), state);
}

Var McanGraph::outfit_loglik(std::span<const TupleEntry> seq, const CandidatePools& pools) {
  if (seq.size() < 2) throw ContractError("outfit_loglik: sequence needs at least 2 tuples");
  auto states = prefix_states(seq);
  std::optional<Var> total;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    const TupleEntry& next = seq[i + 1];
    CategoryRef cat = dataset().category_ref(next);
    const auto& pool = pools.of(cat);
    auto pos = std::lower_bound(pool.begin(), pool.end(), next.item);
    if (pos == pool.end() || *pos != next.item) {
      throw ContractError("outfit_loglik: item " + std::to_string(next.item) + " is not in its candidate pool");
    }
    Var logp = ag::log_softmax_rows(item_logits(states[i], pool_tuples(pools, cat)));
    Var term = ag::pick(logp, 0, static_cast<std::size_t>(pos - pool.begin()));
    if (params_.config.use_cpl) {
      term = ag::add(term, ag::pick(ag::log_softmax_rows(category_logits(states[i], cat.granularity)), 0, cat.id));
    }
    total = total ? ag::add(*total, term) : term;
  }
  return *total;
}

// ---- value-level API ------------------------------------------------------

Tensor embed_categories(const McanParams& p, std::span<const CategoryId> ids, Granularity g) {
  const Tensor& table = p.embeddings(g);
  std::vector<double> v;
  for (CategoryId id : ids) {
    if (id >= table.rows()) throw LookupError("unknown " + std::string(to_string(g)) + " category " + std::to_string(id));
    auto row = table.values().subspan(id * table.cols(), table.cols());
    v.insert(v.end(), row.begin(), row.end());
  }
  if (ids.empty()) throw ContractError("embed_categories: empty id list");
  return Tensor({ids.size(), table.cols()}, std::move(v));
}

Attention attend(const McanParams& p, const Tensor& x, AttentionMask mask) {
  ag::Tape tape;
  McanGraph g(p, tape);
  Var alpha;
  Var h = g.attend(tape.constant(x), mask, &alpha);
  return {alpha.value(), h.value()};
}

Tensor mix(const McanParams& p, const Tensor& h, const Tensor& c, Granularity gran) {
  ag::Tape tape;
  McanGraph g(p, tape);
  return g.mix(tape.constant(h), tape.constant(c), gran).value();
}

std::vector<double> candidate_logits(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> prefix,
                                     CategoryRef next_cat, std::span<const ItemId> candidates) {
  if (prefix.empty()) throw ContractError("candidate_logits: empty prefix");
  if (candidates.empty()) throw ContractError("candidate_logits: empty candidate set");
  ag::Tape tape;
  McanGraph g(p, ds, tape);
  Var logits = g.item_logits(g.prefix_state(prefix), g.candidate_tuples(candidates, next_cat));
  auto v = logits.value().values();
  return {v.begin(), v.end()};
}

std::vector<double> item_distribution(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> prefix,
                                      CategoryRef next_cat, std::span<const ItemId> candidates) {
  if (candidates.empty()) throw ContractError("item_distribution: empty candidate set");
  for (ItemId c : candidates) {
    if (ds.category_of(c, next_cat.granularity) != next_cat.id) {
      throw ContractError("item_distribution: candidate " + std::to_string(c) + " is not in " +
                          std::string(to_string(next_cat.granularity)) + " category " + std::to_string(next_cat.id));
    }
  }
  auto logits = candidate_logits(p, ds, prefix, next_cat, candidates);
  ag::Tape tape;
  Var probs = ag::softmax_rows(tape.constant(Tensor({1, logits.size()}, logits)));
  auto v = probs.value().values();
  return {v.begin(), v.end()};
}

std::vector<double> category_distribution(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> prefix,
                                          Granularity gran) {
  if (!p.config.use_cpl) throw AblationError("category prediction layer is disabled (use_cpl = false)");
  if (prefix.empty()) throw ContractError("category_distribution: empty prefix");
  ag::Tape tape;
  McanGraph g(p, ds, tape);
  Var probs = ag::softmax_rows(g.category_logits(g.prefix_state(prefix), gran));
  auto v = probs.value().values();
  return {v.begin(), v.end()};
}

double outfit_loglik(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> seq,
                     const CandidatePools& pools) {
  ag::Tape tape;
  McanGraph g(p, ds, tape);
  return g.outfit_loglik(seq, pools).value()[0];
}

// ---- checkpoints ----------------------------------------------------------

namespace {
constexpr std::string_view kCheckpointMagic = "mcan-checkpoint";
constexpr int kCheckpointVersion = 1;

std::vector<std::pair<std::string, std::string>> config_fields(const ModelConfig& c) {
  return {{"d", std::to_string(c.d)},
          {"d_img", std::to_string(c.d_img)},
          {"d_c", std::to_string(c.d_c)},
          {"hidden_a", std::to_string(c.hidden_a)},
          {"hidden_f", std::to_string(c.hidden_f)},
          {"hidden_s", std::to_string(c.hidden_s)},
          {"num_fine", std::to_string(c.num_fine)},
          {"num_coarse", std::to_string(c.num_coarse)},
          {"use_cpl", c.use_cpl ? "1" : "0"},
          {"seed", std::to_string(c.seed)}};
}
}  // namespace

void write_checkpoint(const McanParams& p, std::ostream& os) {
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [k, v] : config_fields(p.config)) os << "config " << k << ' ' << v << '\n';
  auto named = p.named();
  for (const auto& [name, t] : named) {
    os << "param " << name << ' ' << t->rows() << ' ' << t->cols();
    for (double v : t->values()) os << ' ' << format_real(v);
    os << '\n';
  }
  os << "end " << named.size() << '\n';
}

McanParams read_checkpoint(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> CheckpointError {
    return CheckpointError("checkpoint line " + std::to_string(lineno) + ": " + msg);
  };
  if (!std::getline(is, line)) throw CheckpointError("checkpoint is empty");
  ++lineno;
  auto head = split_ws(line);
  if (head.size() != 2 || head[0] != kCheckpointMagic) throw fail("not an mcan checkpoint");
  if (head[1] != std::to_string(kCheckpointVersion)) throw fail("unsupported checkpoint version " + std::string(head[1]));

  std::map<std::string, std::string> cfg_fields;
  std::map<std::string, std::pair<std::pair<std::size_t, std::size_t>, std::vector<double>>> tensors;
  bool ended = false;
  try {
    while (std::getline(is, line)) {
      ++lineno;
      auto tok = split_ws(line);
      if (tok.empty()) continue;
      if (ended) throw fail("data after end marker");
      if (tok[0] == "config") {
        if (tok.size() != 3) throw fail("config record expects key and value");
        cfg_fields[std::string(tok[1])] = std::string(tok[2]);
      } else if (tok[0] == "param") {
        if (tok.size() < 4) throw fail("param record truncated");
        std::size_t r = parse_index(tok[2]), c = parse_index(tok[3]);
        if (tok.size() != 4 + r * c) throw fail("param " + std::string(tok[1]) + " has the wrong value count");
        std::vector<double> v;
        v.reserve(r * c);
        for (std::size_t i = 4; i < tok.size(); ++i) v.push_back(parse_real(tok[i]));
        tensors[std::string(tok[1])] = {{r, c}, std::move(v)};
      } else if (tok[0] == "end") {
        if (tok.size() != 2 || parse_index(tok[1]) != tensors.size()) throw fail("end marker does not match param count");
        ended = true;
      } else {
        throw fail("unknown record '" + std::string(tok[0]) + "'");
      }
    }
  } catch (const ParseError& e) {
    throw fail(e.what());
  }
  if (!ended) throw CheckpointError("checkpoint is truncated (no end marker)");

  ModelConfig cfg;
  auto get = [&](const std::string& k) -> std::size_t {
    auto it = cfg_fields.find(k);
    if (it == cfg_fields.end()) throw CheckpointError("checkpoint config lacks '" + k + "'");
    try {
      return parse_index(it->second);
    } catch (const ParseError& e) {
      throw CheckpointError("checkpoint config '" + k + "': " + e.what());
    }
  };
  cfg.d = get("d");
  cfg.d_img = get("d_img");
  cfg.d_c = get("d_c");
  cfg.hidden_a = get("hidden_a");
  cfg.hidden_f = get("hidden_f");
  cfg.hidden_s = get("hidden_s");
  cfg.num_fine = get("num_fine");
  cfg.num_coarse = get("num_coarse");
  cfg.use_cpl = get("use_cpl") != 0;
  {
    auto it = cfg_fields.find("seed");
    if (it == cfg_fields.end()) throw CheckpointError("checkpoint config lacks 'seed'");
    cfg.seed = std::stoull(it->second);
  }
  McanParams p;
  try {
    p = McanParams::zeros(cfg);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  for (auto& [name, t] : p.named()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks parameter " + name);
    const auto& [shape, values] = it->second;
    if (shape.first != t->rows() || shape.second != t->cols()) {
      throw CheckpointError("checkpoint parameter " + name + " has shape " + std::to_string(shape.first) + "x" +
                            std::to_string(shape.second) + ", expected " + ag::shape_str(t->shape()));
    }
    std::copy(values.begin(), values.end(), t->values().begin());
    tensors.erase(it);
  }
  if (!tensors.empty()) throw CheckpointError("checkpoint has unexpected parameter " + tensors.begin()->first);
  return p;
}

void save_checkpoint(const McanParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(p, out);
  if (!out) throw IoError("write failed for " + path.string());
}

McanParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace mcan
