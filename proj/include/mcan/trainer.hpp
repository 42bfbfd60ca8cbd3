#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "mcan/data.hpp"
#include "mcan/model.hpp"
#include "mcan/objectives.hpp"

namespace mcan {

struct TrainConfig {
  double lr = 0.01;
  std::size_t batch_size = 20;
  std::size_t epochs = 10;
  double mu = 0.05;
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0: no validation FITB
  bool use_cpl = true;
  bool triplet_enabled = true;
  Granularity granularity = Granularity::fine;  // tuples of L_triplet and of the validation FITB
  // 0: exact softmax over the full category pool. Otherwise each batch scores
  // against its own targets plus this many uniform draws per category.
  std::size_t sampled_candidates = 0;
  std::size_t lr_decay_every = 0;  // 0: constant learning rate
  double lr_decay_gamma = 0.5;

  std::size_t d = 512;
  std::size_t d_c = 32;
  std::size_t hidden_a = 64;
  std::size_t hidden_f = 128;
  std::size_t hidden_s = 128;

  void validate() const;
  ModelConfig model_config(const Dataset& ds) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_fine = 0.0;
  double loss_coarse = 0.0;
  double loss_triplet = 0.0;
  double loss_total = 0.0;
  SamplingLevel level = SamplingLevel::semi_hard;
  double lr = 0.0;
  double val_fitb = -1.0;  // negative when not evaluated this epoch
  double wall_seconds = 0.0;
};

using TrainLog = std::vector<EpochRecord>;

struct TrainResult {
  McanParams params;
  TrainLog log;
};

// Optional per-epoch hook, called after each record is appended.
using EpochCallback = void (*)(const EpochRecord&, void*);

TrainResult train(const TrainConfig& cfg, const Dataset& ds, EpochCallback cb = nullptr, void* cb_ctx = nullptr);

// Pools holding every target of `batch` plus k uniform draws per category.
CandidatePools sampled_pools(const Dataset& ds, std::span<const Outfit* const> batch, std::size_t k, Rng& rng);

void write_epoch_record(std::ostream& os, const EpochRecord& r, bool include_time = true);
void write_train_log(std::ostream& os, const TrainLog& log, bool include_time = true);

}  // namespace mcan
