// pramface: data generation, training, embedding, evaluation and gradient checks.
//
// Exit codes: 0 ok, 1 unexpected error, 2 bad flags or config, 3 I/O failure,
// 4 non-finite loss, 5 evaluation protocol violation, 6 gradient check failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "pram/evaluation.hpp"
#include "pram/gradcheck_suite.hpp"
#include "pram/synthdata.hpp"
#include "pram/trainer.hpp"

namespace fs = std::filesystem;
using namespace pram;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kBadInput = 2, kIo = 3, kNonFinite = 4, kProtocol = 5, kGradcheck = 6 };

struct GradcheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_far_list(const std::string& s) {
  Config c;
  c.set("eval.far", s);
  const auto fars = c.get_doubles("eval.far");
  for (double f : fars)
    if (!(f > 0 && f < 1)) throw ConfigError("--far values must lie in (0, 1), got " + std::to_string(f));
  return fars;
}

// ---- gen-data ------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::size_t ids = 20;
  std::size_t test_ids = 0;
  std::size_t per_id = 4;
  std::uint64_t seed = 7;
  std::string level = "mild";
};

int run_gen_data(const GenArgs& a) {
  synth::GenerateOptions opt;
  opt.num_ids = a.ids;
  opt.test_ids = a.test_ids;
  opt.per_id = a.per_id;
  opt.seed = a.seed;
  opt.level = synth::parse_level(a.level);
  const auto s = synth::generate_dataset(a.out, opt);
  std::cout << "generated ids=" << s.identities << " samples=" << s.train_samples + s.test_samples
            << " (train " << s.train_samples << ", test " << s.test_samples << ")"
            << " empty_component_masks=" << s.empty_masks << " level=" << a.level << " -> " << a.out << '\n';
  return kOk;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::string precision = "f32";
  std::size_t log_every = 50;
  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::Option*> override_opts;
};

void echo_config(const TrainConfig& t) {
  std::cout << "config lr=" << t.lr << " wd=" << t.weight_decay << " batch=" << t.batch_size
            << " m=" << t.loss.margin << " s=" << t.loss.softmax_scale << " steps=" << t.steps
            << " pram_on=" << (t.pram_on ? "true" : "false") << " cat_on="
            << (t.cat_on == TripletMode::CAT ? "CAT" : t.cat_on == TripletMode::PlainC ? "plain_C" : "off")
            << " embed_dim=" << t.embed_dim << " seed=" << t.seed << '\n';
}

template <typename T>
int train_loop(Trainer<T>& trainer, std::size_t target, const fs::path& out, std::size_t log_every, bool append) {
  const fs::path ckpt = out / "checkpoint.pramck", loss_csv = out / "loss.csv";
  std::vector<StepLog> log;
  try {
    while (trainer.steps_done() < target) {
      log.push_back(trainer.step());
      const auto& s = log.back();
      if (log_every && (s.step % log_every == 0 || s.step == target))
        std::cout << "step " << s.step << " l_softmax=" << s.l_softmax << " l_cat=" << s.l_cat
                  << " l_total=" << s.l_total << " mean_lambda=" << s.mean_lambda << '\n';
    }
  } catch (const NonFiniteError&) {
    write_loss_log(loss_csv, log, append);
    throw;
  }
  write_loss_log(loss_csv, log, append);
  trainer.save(ckpt);
  if (!log.empty()) {
    const auto& s = log.back();
    std::cout << "final step " << s.step << " l_softmax=" << s.l_softmax << " l_cat=" << s.l_cat
              << " l_total=" << s.l_total << '\n';
  }
  std::cout << "checkpoint " << ckpt.string() << "\nloss log " << loss_csv.string() << '\n';
  return kOk;
}

template <typename T>
int run_train_typed(TrainArgs& a, const Dataset& train) {
  const fs::path out = a.out;
  if (!a.resume.empty()) {
    auto trainer = Trainer<T>::resume(a.resume, train);
    std::size_t target = trainer->config().steps;
    if (a.override_opts.at("train.steps")->count()) {
      Config c;
      c.set("train.steps", a.overrides["train.steps"]);
      target = c.get_uint("train.steps");
    }
    echo_config(trainer->config());
    std::cout << "resumed at step " << trainer->steps_done() << ", training to step " << target << '\n';
    return train_loop(*trainer, target, out, a.log_every, fs::exists(out / "loss.csv"));
  }
  Config cfg;
  if (!a.config.empty()) cfg.merge_file(a.config);
  for (const auto& [key, opt] : a.override_opts)
    if (opt->count()) cfg.set(key, a.overrides[key]);
  Trainer<T> trainer(cfg, train);
  echo_config(trainer.config());
  return train_loop(trainer, trainer.config().steps, out, a.log_every, false);
}

int run_train(TrainArgs& a) {
  if (!a.resume.empty()) {
    for (const auto& [key, opt] : a.override_opts)
      if (opt->count() && key != "train.steps")
        throw ConfigError("--" + key + " cannot be combined with --resume (the checkpoint carries its config)");
    if (!a.config.empty()) throw ConfigError("--config cannot be combined with --resume");
  }
  const Dataset train = load_dataset(a.data, "train");
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());
  bool f64 = a.precision == "f64";
  if (!a.resume.empty()) {
    const auto data = read_checkpoint(a.resume);
    f64 = !data.tensors.empty() && data.tensors.front().dtype == DType::F64;
  }
  return f64 ? run_train_typed<double>(a, train) : run_train_typed<float>(a, train);
}

// ---- embed / eval --------------------------------------------------------

std::vector<EmbeddingRecord> embed_from_checkpoint(const std::string& ckpt_path, const std::string& data,
                                                   const std::string& split) {
  const auto ckpt = read_checkpoint(ckpt_path);
  const Dataset ds = load_dataset(data, split);
  if (!ckpt.tensors.empty() && ckpt.tensors.front().dtype == DType::F64) {
    const auto m = load_model<double>(ckpt);
    return embed_dataset(*m.model, ds, m.config.image_size, m.config.crop_size);
  }
  const auto m = load_model<float>(ckpt);
  return embed_dataset(*m.model, ds, m.config.image_size, m.config.crop_size);
}

void check_widths(const std::vector<EmbeddingRecord>& records, const std::string& source) {
  if (records.empty()) throw IoError(source + " holds no embeddings");
  const std::size_t width = records.front().embedding.size();
  for (const auto& r : records)
    if (r.embedding.size() != width || width == 0)
      throw IoError(source + ": embedding of " + r.sample_id + " has width " + std::to_string(r.embedding.size()) +
                    ", expected " + std::to_string(width));
}

struct EmbedArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string out;
};

int run_embed(const EmbedArgs& a) {
  const auto records = embed_from_checkpoint(a.checkpoint, a.data, a.split);
  write_embeddings(a.out, records);
  std::cout << "embedded " << records.size() << " samples (width " << records.front().embedding.size() << ") -> "
            << a.out << '\n';
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string embeddings;
  std::string data;
  std::string split = "test";
  std::string far = "0.01,0.001";
  std::size_t max_rank = 10;
  std::string out;
};

int run_eval(const EvalArgs& a) {
  const auto fars = parse_far_list(a.far);
  std::vector<EmbeddingRecord> records;
  fs::path out = a.out;
  if (!a.embeddings.empty()) {
    records = read_embeddings(a.embeddings);
    check_widths(records, a.embeddings);
    if (out.empty()) out = fs::path(a.embeddings).parent_path();
  } else {
    if (a.data.empty()) throw ConfigError("--data is required with --checkpoint");
    records = embed_from_checkpoint(a.checkpoint, a.data, a.split);
    if (out.empty()) out = fs::path(a.checkpoint).parent_path();
  }
  if (out.empty()) out = ".";
  const EvalReport r = evaluate(records, fars, a.max_rank);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  write_metrics(out, r);
  std::cout << "gallery=" << r.gallery << " probes=" << r.probes << '\n' << std::fixed << std::setprecision(6);
  std::cout << "rank1," << r.rank1 << '\n';
  for (const auto& v : r.vr) std::cout << far_label(v.far_target) << ',' << v.vr << '\n';
  std::cout << "metrics " << (out / "metrics.csv").string() << "\ncmc " << (out / "cmc.csv").string() << '\n';
  return kOk;
}

// ---- gradcheck -----------------------------------------------------------

struct GradcheckArgs {
  std::string scope = "full";
  double tolerance = 0;  // 0: scope default
  double epsilon = 1e-5;
  std::uint64_t seed = 1;
};

int run_gradcheck(const GradcheckArgs& a) {
  const auto scope = parse_gradcheck_scope(a.scope);
  const double tol = a.tolerance > 0 ? a.tolerance : default_tolerance(scope);
  const auto r = run_gradcheck_suite(scope, tol, a.epsilon, a.seed);
  std::cout << std::left << std::setw(34) << "case" << std::setw(20) << "parameter" << std::right << std::setw(9)
            << "elements" << std::setw(16) << "max_rel_error" << "  status\n";
  for (const auto& c : r.cases)
    for (const auto& p : c.report.params)
      std::cout << std::left << std::setw(34) << c.label << std::setw(20) << p.name << std::right << std::setw(9)
                << p.elements << std::setw(16) << std::scientific << std::setprecision(3) << p.max_rel_error
                << std::defaultfloat << "  " << (p.passed ? "ok" : "FAIL") << '\n';
  std::ostringstream summary;
  summary << "gradcheck " << a.scope << ": max relative error " << std::scientific << std::setprecision(3)
          << r.max_error() << ", tolerance " << tol << ", epsilon " << a.epsilon << ", " << std::defaultfloat
          << std::setprecision(3) << r.seconds << " s";
  if (!r.passed())
    throw GradcheckFailure(summary.str() + "\nFAILED: at least one parameter exceeds the tolerance" +
                           (tol < 1e-10 ? " (the tolerance is below finite-difference rounding noise)" : ""));
  std::cout << summary.str() << "\nPASSED\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pramface: part relation attention for cross-domain face matching"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic two-domain face dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--ids", gen.ids, "Training identities");
  gen_cmd->add_option("--test-ids", gen.test_ids, "Additional held-out identities (split 'test')");
  gen_cmd->add_option("--per-id", gen.per_id, "Samples per identity per domain");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--level", gen.level, "Perturbation level")->check(CLI::IsMember({"none", "mild", "severe"}));

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model; every config key is also a flag, e.g. --train.steps");
  train_cmd->add_option("--config", tr.config, "Config file of key = value lines");
  train_cmd->add_option("--data", tr.data, "Dataset directory (uses split 'train')")->required();
  train_cmd->add_option("--out", tr.out, "Output directory for checkpoint.pramck and loss.csv")->required();
  train_cmd->add_option("--resume", tr.resume, "Continue from a checkpoint (its config is reused)");
  train_cmd->add_option("--precision", tr.precision, "Arithmetic width")->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_option("--log-every", tr.log_every, "Print losses every N steps (0: only the final line)");
  for (const auto& k : config_keys()) {
    tr.overrides[k.name] = k.default_value;
    tr.override_opts[k.name] = train_cmd->add_option("--" + k.name, tr.overrides[k.name], k.help)
                                   ->default_str(k.default_value);
  }

  EmbedArgs em;
  auto* embed_cmd = app.add_subcommand("embed", "Write embeddings of a dataset split as TSV");
  embed_cmd->add_option("--checkpoint", em.checkpoint, "Checkpoint written by train")->required();
  embed_cmd->add_option("--data", em.data, "Dataset directory")->required();
  embed_cmd->add_option("--split", em.split, "Manifest split");
  embed_cmd->add_option("--out", em.out, "Output TSV file")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Rank-1, CMC and VR@FAR of NIR probes against a VIS gallery");
  auto* ev_ckpt = eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by train");
  auto* ev_emb = eval_cmd->add_option("--embeddings", ev.embeddings, "Embedding TSV written by embed");
  ev_ckpt->excludes(ev_emb);
  eval_cmd->add_option("--data", ev.data, "Dataset directory (with --checkpoint)");
  eval_cmd->add_option("--split", ev.split, "Manifest split");
  eval_cmd->add_option("--far", ev.far, "Comma-separated false accept rates");
  eval_cmd->add_option("--max-rank", ev.max_rank, "CMC curve length");
  eval_cmd->add_option("--out", ev.out, "Directory for metrics.csv and cmc.csv (default: next to the input)");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "64-bit finite-difference gradient checks");
  gc_cmd->add_option("--scope", gc.scope, "What to check")->check(CLI::IsMember({"ops", "pram", "losses", "full"}));
  gc_cmd->add_option("--tolerance", gc.tolerance, "Max relative error; 0 means 1e-6 for ops, 1e-4 otherwise");
  gc_cmd->add_option("--epsilon", gc.epsilon, "Central difference step, within [1e-7, 1e-3]");
  gc_cmd->add_option("--seed", gc.seed, "Seed for the random check points");

  try {
    app.parse(argc, argv);
    if (*eval_cmd && !*ev_ckpt && !*ev_emb) throw CLI::ValidationError("eval", "needs --checkpoint or --embeddings");
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kBadInput;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*embed_cmd) return run_embed(em);
    if (*eval_cmd) return run_eval(ev);
    if (*gc_cmd) return run_gradcheck(gc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kBadInput;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const NonFiniteError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kNonFinite;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << '\n';
    return kProtocol;
  } catch (const GradcheckFailure& e) {
    std::cout << e.what() << '\n';
    return kGradcheck;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUnexpected;
}
