#include "mcan/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcan/errors.hpp"
#include "mcan/evaluator.hpp"
#include "mcan/recommender.hpp"
#include "mcan/syngen.hpp"
#include "mcan/trainer.hpp"
#include "mcan/util.hpp"

namespace mcan::cli {

namespace {

struct Options {
  std::uint64_t seed = 0;
  bool quiet = false;

  // gen
  GenConfig gen;
  std::string out_path;
  std::string latent_path;

  // shared inputs
  std::string data_path;
  std::string checkpoint_path;
  std::string split = "test";
  std::string granularity = "fine";

  // train
  TrainConfig train;
  std::string log_path;
  bool no_cpl = false;
  bool no_triplet = false;

  // eval / fitb
  std::vector<std::string> levels;
  bool shuffled = false;
  std::string level = "hard";
  std::size_t rounds = 1;

  // recommend
  std::string query_path;
};

class Echo {
 public:
  Echo(std::ostream& os, bool quiet, const char* cmd) : os_(os), quiet_(quiet) {
    if (!quiet_) os_ << "# mcan " << cmd << '\n';
  }
  template <typename T>
  Echo& operator()(const char* key, const T& v) {
    if (!quiet_) os_ << "#   " << key << " = " << v << '\n';
    return *this;
  }
  Echo& operator()(const char* key, double v) {
    if (!quiet_) os_ << "#   " << key << " = " << format_real(v) << '\n';
    return *this;
  }
  Echo& operator()(const char* key, bool v) {
    if (!quiet_) os_ << "#   " << key << " = " << (v ? "true" : "false") << '\n';
    return *this;
  }

 private:
  std::ostream& os_;
  bool quiet_;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  return f;
}

void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path)) throw IoError(std::string(what) + " '" + path + "' does not exist");
}

void require_parent(const std::string& path) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw IoError("output directory '" + parent.string() + "' does not exist");
  }
}

int cmd_gen(Options& o, std::ostream& out, std::ostream& err) {
  o.gen.seed = derive_seed(o.seed, "gen");
  o.gen.validate();
  require_parent(o.out_path);
  if (!o.latent_path.empty()) require_parent(o.latent_path);
  Echo(err, o.quiet, "gen")("seed", o.seed)("coarse", o.gen.num_coarse)("fines_per_coarse", o.gen.fines_per_coarse)(
      "items_per_fine", o.gen.items_per_fine)("outfits", o.gen.num_outfits)("outfit_len", o.gen.outfit_len)(
      "style_dim", o.gen.style_dim)("d_img", o.gen.d_img)("noise", o.gen.noise_sigma)("feature_scale", o.gen.feature_scale)(
      "identity_maps", o.gen.identity_maps)("out", o.out_path)("latent", o.latent_path.empty() ? "-" : o.latent_path);
  auto [ds, lat] = generate(o.gen);
  save_dataset(ds, o.out_path);
  if (!o.latent_path.empty()) save_latent(lat, o.latent_path);
  if (!o.quiet) {
    out << "items " << ds.items().size() << " outfits " << ds.outfits().size() << '\n';
  }
  return ok;
}

void echo_train(Echo& e, const TrainConfig& c) {
  e("lr", c.lr)("batch_size", c.batch_size)("epochs", c.epochs)("mu", c.mu)("lambda1", c.lambda1)(
      "lambda2", c.lambda2)("eval_every", c.eval_every)("use_cpl", c.use_cpl)("triplet", c.triplet_enabled)(
      "granularity", to_string(c.granularity))("sampled_candidates", c.sampled_candidates)(
      "lr_decay_every", c.lr_decay_every)("lr_decay_gamma", c.lr_decay_gamma)("d", c.d)("d_c", c.d_c)(
      "hidden_a", c.hidden_a)("hidden_f", c.hidden_f)("hidden_s", c.hidden_s);
}

struct EpochPrinter {
  std::ostream* out;
  std::ostream* log;
};

void on_epoch(const EpochRecord& r, void* ctx) {
  auto* p = static_cast<EpochPrinter*>(ctx);
  if (p->log) {
    write_epoch_record(*p->log, r);
    p->log->flush();
  }
  if (p->out) write_epoch_record(*p->out, r);
}

int cmd_train(Options& o, std::ostream& out, std::ostream& err) {
  require_file(o.data_path, "dataset");
  require_parent(o.checkpoint_path);
  if (!o.log_path.empty()) require_parent(o.log_path);
  o.train.seed = derive_seed(o.seed, "train");
  o.train.use_cpl = !o.no_cpl;
  o.train.triplet_enabled = !o.no_triplet;
  o.train.granularity = parse_granularity(o.granularity);
  o.train.validate();
  Echo e(err, o.quiet, "train");
  e("seed", o.seed)("data", o.data_path)("checkpoint", o.checkpoint_path)("log", o.log_path.empty() ? "-" : o.log_path);
  echo_train(e, o.train);

  Dataset ds = load_dataset(o.data_path);
  std::ofstream log_file;
  if (!o.log_path.empty()) log_file = open_out(o.log_path);
  EpochPrinter printer{o.quiet ? nullptr : &out, o.log_path.empty() ? nullptr : &log_file};
  TrainResult r = train(o.train, ds, on_epoch, &printer);
  save_checkpoint(r.params, o.checkpoint_path);
  return ok;
}

std::vector<SamplingLevel> resolve_levels(const std::vector<std::string>& names) {
  if (names.empty()) return {SamplingLevel::easy, SamplingLevel::semi_hard, SamplingLevel::hard};
  std::vector<SamplingLevel> out;
  for (const auto& n : names) out.push_back(parse_level(n));
  return out;
}

int cmd_eval(Options& o, std::ostream& out, std::ostream& err) {
  require_file(o.data_path, "dataset");
  require_file(o.checkpoint_path, "checkpoint");
  require_parent(o.out_path);
  auto levels = resolve_levels(o.levels);
  const Split split = parse_split(o.split);
  const Granularity g = parse_granularity(o.granularity);
  std::string level_list;
  for (auto l : levels) level_list += (level_list.empty() ? "" : ",") + std::string(to_string(l));
  Echo(err, o.quiet, "eval")("seed", o.seed)("data", o.data_path)("checkpoint", o.checkpoint_path)(
      "out", o.out_path)("split", o.split)("levels", level_list)("shuffled", o.shuffled)("granularity", o.granularity);

  Dataset ds = load_dataset(o.data_path);
  McanParams p = load_checkpoint(o.checkpoint_path);
  auto records = evaluate_report(p, ds, split, levels, o.seed, o.shuffled, g);
  std::ofstream f = open_out(o.out_path);
  for (const auto& r : records) {
    write_metric(f, r);
    if (!o.quiet) write_metric(out, r);
  }
  return ok;
}

int cmd_fitb(Options& o, std::ostream& out, std::ostream& err) {
  require_file(o.data_path, "dataset");
  require_file(o.checkpoint_path, "checkpoint");
  if (o.rounds == 0) throw ConfigError("--rounds must be at least 1");
  const SamplingLevel level = parse_level(o.level);
  const Split split = parse_split(o.split);
  const Granularity g = parse_granularity(o.granularity);
  Echo(err, o.quiet, "fitb")("seed", o.seed)("data", o.data_path)("checkpoint", o.checkpoint_path)(
      "split", o.split)("level", to_string(level))("rounds", o.rounds)("granularity", o.granularity);

  Dataset ds = load_dataset(o.data_path);
  McanParams p = load_checkpoint(o.checkpoint_path);
  std::vector<FitbQuestion> questions;
  for (std::size_t r = 0; r < o.rounds; ++r) {
    auto qs = build_fitb(ds, split, level, derive_seed(o.seed, "fitb/round" + std::to_string(r)), g);
    std::move(qs.begin(), qs.end(), std::back_inserter(questions));
  }
  const double acc = fitb_accuracy(p, ds, questions);
  out << "accuracy " << format_real(acc) << " n " << questions.size() << '\n';
  return ok;
}

int cmd_recommend(Options& o, std::ostream& out, std::ostream& err) {
  require_file(o.data_path, "dataset");
  require_file(o.checkpoint_path, "checkpoint");
  require_file(o.query_path, "query");
  Echo(err, o.quiet, "recommend")("seed", o.seed)("data", o.data_path)("checkpoint", o.checkpoint_path)(
      "query", o.query_path);
  Dataset ds = load_dataset(o.data_path);
  McanParams p = load_checkpoint(o.checkpoint_path);
  Query q = load_query(o.query_path);
  Completion c = complete_outfit(p, ds, q, CandidatePools(ds));
  write_completion(out, c, q.given.size());
  return ok;
}

int cmd_inspect(Options& o, std::ostream& out, std::ostream& err) {
  if (o.data_path.empty() && o.checkpoint_path.empty()) throw ConfigError("inspect needs --data and/or --checkpoint");
  if (!o.data_path.empty()) require_file(o.data_path, "dataset");
  if (!o.checkpoint_path.empty()) require_file(o.checkpoint_path, "checkpoint");
  Echo(err, o.quiet, "inspect")("data", o.data_path.empty() ? "-" : o.data_path)(
      "checkpoint", o.checkpoint_path.empty() ? "-" : o.checkpoint_path);
  if (!o.data_path.empty()) {
    Dataset ds = load_dataset(o.data_path);
    const auto& tax = ds.taxonomy();
    out << "dataset " << o.data_path << '\n';
    out << "  d_img " << ds.d_img() << '\n';
    out << "  coarse_categories " << tax.num_coarse() << '\n';
    out << "  fine_categories " << tax.num_fine() << '\n';
    out << "  items " << ds.items().size() << '\n';
    out << "  outfits " << ds.outfits().size() << '\n';
    for (Split s : {Split::train, Split::val, Split::test, Split::none}) {
      out << "  split " << to_string(s) << ' ' << ds.outfits_in(s).size() << '\n';
    }
    for (CategoryId c = 0; c < tax.num_fine(); ++c) {
      out << "  fine " << c << ' ' << tax.fine_name(c) << " coarse " << tax.coarse_of(c) << " items "
          << ds.category_subset(c, Granularity::fine).size() << '\n';
    }
  }
  if (!o.checkpoint_path.empty()) {
    McanParams p = load_checkpoint(o.checkpoint_path);
    const auto& c = p.config;
    std::size_t count = 0;
    for (const auto& [name, t] : std::as_const(p).named()) count += t->size();
    out << "checkpoint " << o.checkpoint_path << '\n';
    out << "  d " << c.d << " d_img " << c.d_img << " d_c " << c.d_c << '\n';
    out << "  hidden_a " << c.hidden_a << " hidden_f " << c.hidden_f << " hidden_s " << c.hidden_s << '\n';
    out << "  fine " << c.num_fine << " coarse " << c.num_coarse << " use_cpl " << (c.use_cpl ? "true" : "false")
        << '\n';
    out << "  parameters " << count << '\n';
  }
  return ok;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"MCAN outfit compatibility: generate, train, evaluate, recommend"};
  app.require_subcommand(1, 1);
  Options o;
  app.add_option("--seed", o.seed, "Root seed; every stage derives its own sub-seed")->capture_default_str();
  app.add_flag("--quiet", o.quiet, "Suppress configuration echo and progress output");

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--out", o.out_path, "Dataset file to write")->required();
  gen->add_option("--latent", o.latent_path, "Latent style file to write");
  gen->add_option("--coarse", o.gen.num_coarse)->capture_default_str();
  gen->add_option("--fines-per-coarse", o.gen.fines_per_coarse)->capture_default_str();
  gen->add_option("--items-per-fine", o.gen.items_per_fine)->capture_default_str();
  gen->add_option("--outfits", o.gen.num_outfits)->capture_default_str();
  gen->add_option("--outfit-len", o.gen.outfit_len)->capture_default_str();
  gen->add_option("--style-dim", o.gen.style_dim)->capture_default_str();
  gen->add_option("--d-img", o.gen.d_img)->capture_default_str();
  gen->add_option("--noise", o.gen.noise_sigma)->capture_default_str();
  gen->add_option("--feature-scale", o.gen.feature_scale, "Std of the style map and prototype entries")
      ->capture_default_str();
  gen->add_flag("--identity-maps", o.gen.identity_maps, "Identity style maps and zero prototypes");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--data", o.data_path)->required();
  tr->add_option("--out", o.checkpoint_path, "Checkpoint file to write")->required();
  tr->add_option("--log", o.log_path, "Per-epoch JSON lines log");
  tr->add_option("--epochs", o.train.epochs)->capture_default_str();
  tr->add_option("--lr", o.train.lr)->capture_default_str();
  tr->add_option("--batch-size", o.train.batch_size)->capture_default_str();
  tr->add_option("--mu", o.train.mu)->capture_default_str();
  tr->add_option("--lambda1", o.train.lambda1)->capture_default_str();
  tr->add_option("--lambda2", o.train.lambda2)->capture_default_str();
  tr->add_option("--eval-every", o.train.eval_every)->capture_default_str();
  tr->add_option("--sampled-candidates", o.train.sampled_candidates)->capture_default_str();
  tr->add_option("--lr-decay-every", o.train.lr_decay_every)->capture_default_str();
  tr->add_option("--lr-decay-gamma", o.train.lr_decay_gamma)->capture_default_str();
  tr->add_option("--d", o.train.d)->capture_default_str();
  tr->add_option("--d-c", o.train.d_c)->capture_default_str();
  tr->add_option("--hidden-a", o.train.hidden_a)->capture_default_str();
  tr->add_option("--hidden-f", o.train.hidden_f)->capture_default_str();
  tr->add_option("--hidden-s", o.train.hidden_s)->capture_default_str();
  tr->add_option("--granularity", o.granularity, "Tuple granularity of the triplet loss")->capture_default_str();
  tr->add_flag("--no-cpl", o.no_cpl, "Disable the category prediction layer");
  tr->add_flag("--no-triplet", o.no_triplet, "Disable the triplet loss");

  auto* ev = app.add_subcommand("eval", "Write a metrics report");
  ev->add_option("--data", o.data_path)->required();
  ev->add_option("--checkpoint", o.checkpoint_path)->required();
  ev->add_option("--out", o.out_path, "Metrics file to write")->required();
  ev->add_option("--level", o.levels, "easy, semi_hard or hard; repeatable (default: all)");
  ev->add_option("--split", o.split)->capture_default_str();
  ev->add_option("--granularity", o.granularity)->capture_default_str();
  ev->add_flag("--shuffled", o.shuffled, "Also score with each outfit's tuples permuted");

  auto* fb = app.add_subcommand("fitb", "Answer FITB questions and print the accuracy");
  fb->add_option("--data", o.data_path)->required();
  fb->add_option("--checkpoint", o.checkpoint_path)->required();
  fb->add_option("--level", o.level)->capture_default_str();
  fb->add_option("--split", o.split)->capture_default_str();
  fb->add_option("--granularity", o.granularity)->capture_default_str();
  fb->add_option("--rounds", o.rounds, "Question sets drawn per outfit, each with its own seed")->capture_default_str();

  auto* rc = app.add_subcommand("recommend", "Complete an outfit from a query file");
  rc->add_option("--data", o.data_path)->required();
  rc->add_option("--checkpoint", o.checkpoint_path)->required();
  rc->add_option("--query", o.query_path)->required();

  auto* in = app.add_subcommand("inspect", "Summarize a dataset and/or checkpoint");
  in->add_option("--data", o.data_path);
  in->add_option("--checkpoint", o.checkpoint_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return ok;
    err << app.help();
    return usage;
  }
  auto fail = [&](const std::exception& e, ExitCode code) {
    err << "error: " << e.what() << '\n';
    return code;
  };

  try {
    if (*gen) return cmd_gen(o, out, err);
    if (*tr) return cmd_train(o, out, err);
    if (*ev) return cmd_eval(o, out, err);
    if (*fb) return cmd_fitb(o, out, err);
    if (*rc) return cmd_recommend(o, out, err);
    if (*in) return cmd_inspect(o, out, err);
  } catch (const ParseError& e) {
    return fail(e, data);
  } catch (const ValidationError& e) {
    return fail(e, data);
  } catch (const IoError& e) {
    return fail(e, data);
  } catch (const CheckpointError& e) {
    return fail(e, data);
  } catch (const ConfigError& e) {
    return fail(e, data);
  } catch (const LookupError& e) {
    return fail(e, data);
  } catch (const SamplingError& e) {
    return fail(e, data);
  } catch (const AblationError& e) {
    return fail(e, data);
  } catch (const CompletionError& e) {
    return fail(e, data);
  } catch (const std::exception& e) {
    return fail(e, runtime);
  }
  return usage;
}

}  // namespace mcan::cli
