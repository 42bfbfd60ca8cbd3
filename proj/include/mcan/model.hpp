#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mcan/autograd.hpp"
#include "mcan/data.hpp"

namespace mcan {

struct ModelConfig {
  std::size_t d = 512;        // compatibility space width
  std::size_t d_img = 0;      // item feature width
  std::size_t d_c = 32;       // category embedding width
  std::size_t hidden_a = 64;  // attention scorer
  std::size_t hidden_f = 128; // mixers f and f'
  std::size_t hidden_s = 128; // item scorer
  std::size_t num_fine = 0;
  std::size_t num_coarse = 0;
  bool use_cpl = true;  // false: MAN ablation, no category prediction layer
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

ModelConfig model_config_for(const Dataset& ds, std::size_t d = 512);

// All learnable weights. Tensor addresses are stable for the lifetime of the
// object, which is what the autograd tape keys gradients on; copying produces
// an independent parameter set.
struct McanParams {
  ModelConfig config;
  ag::Tensor e_fine;    // |fine| x d_c
  ag::Tensor e_coarse;  // |coarse| x d_c
  ag::Tensor w_f;       // d x d_img
  ag::Tensor w_g;       // d x d_img
  ag::Tensor w_h;       // d x d_img
  ag::Ffn attn;         // a: 2d -> hidden_a -> 1
  ag::Ffn mix_fine;     // f: d + d_c -> hidden_f -> d
  ag::Ffn mix_coarse;   // f': d + d_c -> hidden_f -> d
  ag::Ffn scorer;       // s: 2d -> hidden_s -> 1
  ag::Ffn cpl_fine;     // d -> |fine|
  ag::Ffn cpl_coarse;   // d -> |coarse|

  // Zero-valued tensors of the configured shapes.
  static McanParams zeros(const ModelConfig& cfg);
  // Weights uniform in [-0.05, 0.05], biases zero, drawn from cfg.seed.
  static McanParams init(const ModelConfig& cfg);

  // Canonical parameter order, shared by the optimizer and checkpoints.
  std::vector<std::pair<std::string, ag::Tensor*>> named();
  std::vector<std::pair<std::string, const ag::Tensor*>> named() const;
  std::vector<ag::Tensor*> tensors();

  const ag::Tensor& embeddings(Granularity g) const { return g == Granularity::fine ? e_fine : e_coarse; }
  const ag::Ffn& mixer(Granularity g) const { return g == Granularity::fine ? mix_fine : mix_coarse; }
  const ag::Ffn& cpl(Granularity g) const { return g == Granularity::fine ? cpl_fine : cpl_coarse; }
};

enum class AttentionMask {
  causal,  // row i attends to k <= i
  none,    // every row attends to the whole set
};

// Item lists that bound the item softmax, one per category and granularity.
class CandidatePools {
 public:
  explicit CandidatePools(const Dataset& ds);
  CandidatePools(std::vector<std::vector<ItemId>> fine, std::vector<std::vector<ItemId>> coarse);

  const std::vector<ItemId>& of(CategoryRef c) const;

 private:
  std::vector<std::vector<ItemId>> fine_;
  std::vector<std::vector<ItemId>> coarse_;
};

// Builds the MCAN computation on a tape. Candidate-tuple projections for full
// pools are cached per graph, so one graph per mini-batch shares them.
//
// A prefix is encoded as a set: the self-attention runs unmasked over the
// prefix tuples, each attended row is mixed with its own category embedding,
// and the mixed tuples are mean-pooled. No positional signal enters, so any
// joint permutation of the prefix leaves the state unchanged, and tuples after
// the prefix never influence it.
class McanGraph {
 public:
  McanGraph(const McanParams& params, const Dataset& ds, ag::Tape& tape);
  // Without a dataset only the tensor-level pieces (attend, mix, logits) work.
  McanGraph(const McanParams& params, ag::Tape& tape);

  ag::Tape& tape() { return tape_; }
  const McanParams& params() const { return params_; }
  const Dataset& dataset() const;

  ag::Var features(std::span<const ItemId> items);
  ag::Var embed(std::span<const CategoryId> ids, Granularity g);
  // X: N x d_img -> H: N x d. alpha_out, when given, receives the N x N weights.
  ag::Var attend(ag::Var x, AttentionMask mask, ag::Var* alpha_out = nullptr);
  // [h, c] -> f or f' by granularity; h: m x d, c: m x d_c.
  ag::Var mix(ag::Var h, ag::Var c, Granularity g);

  // 1 x d state summarizing the prefix.
  ag::Var prefix_state(std::span<const TupleEntry> prefix);
  // States for every proper prefix of seq: result[i] encodes seq[0..i].
  std::vector<ag::Var> prefix_states(std::span<const TupleEntry> seq);

  // m x d candidate tuples f([W_H x, c]) for the given items bundled with the category.
  ag::Var candidate_tuples(std::span<const ItemId> items, CategoryRef category);
  ag::Var pool_tuples(const CandidatePools& pools, CategoryRef category);

  // 1 x m scores s([state, tuple_j]).
  ag::Var item_logits(ag::Var state, ag::Var tuples);
  // 1 x |categories| CPL logits.
  ag::Var category_logits(ag::Var state, Granularity g);

  // Sum over steps of log P(x_{i+1} | prefix, c_{i+1}) + log P(c_{i+1} | prefix).
  ag::Var outfit_loglik(std::span<const TupleEntry> seq, const CandidatePools& pools);

 private:
  ag::Var scorer_hidden_from_tuples(ag::Var tuples);

  const McanParams& params_;
  const Dataset* ds_ = nullptr;
  ag::Tape& tape_;
  std::map<std::tuple<const CandidatePools*, Granularity, CategoryId>, std::pair<ag::Var, ag::Var>> pool_cache_;
};

// ---- value-level API ------------------------------------------------------

ag::Tensor embed_categories(const McanParams& p, std::span<const CategoryId> ids, Granularity g);

struct Attention {
  ag::Tensor alpha;  // N x N
  ag::Tensor h;      // N x d
};
Attention attend(const McanParams& p, const ag::Tensor& x, AttentionMask mask = AttentionMask::causal);

ag::Tensor mix(const McanParams& p, const ag::Tensor& h, const ag::Tensor& c, Granularity g);

// Softmax over candidates, all of which must belong to next_cat.
std::vector<double> item_distribution(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> prefix,
                                      CategoryRef next_cat, std::span<const ItemId> candidates);
// Raw scores for arbitrary candidates bundled with next_cat; no category check.
std::vector<double> candidate_logits(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> prefix,
                                     CategoryRef next_cat, std::span<const ItemId> candidates);
std::vector<double> category_distribution(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> prefix,
                                          Granularity g);
double outfit_loglik(const McanParams& p, const Dataset& ds, std::span<const TupleEntry> seq,
                     const CandidatePools& pools);

// ---- checkpoints ----------------------------------------------------------

void write_checkpoint(const McanParams& p, std::ostream& os);
McanParams read_checkpoint(std::istream& is);
void save_checkpoint(const McanParams& p, const std::filesystem::path& path);
McanParams load_checkpoint(const std::filesystem::path& path);

}  // namespace mcan
