#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pram/checkpoint.hpp"
#include "pram/config.hpp"
#include "pram/losses.hpp"
#include "pram/model.hpp"
#include "pram/sampler.hpp"

namespace pram {

enum class TripletMode { Off, PlainC, CAT };

inline TripletMode parse_triplet_mode(const std::string& s) {
  if (s == "off") return TripletMode::Off;
  if (s == "plain_C") return TripletMode::PlainC;
  if (s == "CAT") return TripletMode::CAT;
  throw ConfigError("unknown train.cat_on '" + s + "' (off|plain_C|CAT)");
}

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 5e-4;
  std::size_t batch_size = 16;
  std::size_t steps = 500;
  std::uint64_t seed = 7;
  std::size_t freeze_below = 0;
  std::size_t embed_dim = 512;
  std::size_t head_dim = 128;
  std::size_t part_size = 64;
  std::vector<ConvStage> trunk = default_stages();
  bool pram_on = true;
  TripletMode cat_on = TripletMode::CAT;
  NegativeDomain negative_domain = NegativeDomain::SameAsAnchor;
  bool batch_hard = false;
  LossConfig loss;
  std::size_t image_size = 144;
  std::size_t crop_size = 128;

  static TrainConfig from(const Config& c) {
    TrainConfig t;
    t.lr = c.get_double("train.lr");
    t.weight_decay = c.get_double("train.weight_decay");
    t.batch_size = c.get_uint("train.batch_size");
    t.steps = c.get_uint("train.steps");
    t.seed = c.get_uint("train.seed");
    t.freeze_below = c.get_uint("train.freeze_below");
    t.embed_dim = c.get_uint("train.embed_dim");
    t.head_dim = c.get_uint("train.head_dim");
    t.part_size = c.get_uint("train.part_size");
    try {
      t.trunk = parse_stages(c.get("train.trunk"));
      t.negative_domain = parse_negative_domain(c.get("train.negative_domain"));
      t.loss.scale_mode = parse_scale_mode(c.get("loss.scale_mode"));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    t.pram_on = c.get_bool("train.pram_on");
    t.cat_on = parse_triplet_mode(c.get("train.cat_on"));
    t.batch_hard = c.get_bool("train.batch_hard");
    t.loss.margin = c.get_double("loss.margin");
    t.loss.softmax_scale = c.get_double("loss.softmax_scale");
    t.image_size = c.get_uint("data.image_size");
    t.crop_size = c.get_uint("data.crop_size");
    t.validate();
    return t;
  }

  void validate() const {
    if (!(lr >= 0)) throw ConfigError("train.lr must be >= 0");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (crop_size > image_size) throw ConfigError("data.crop_size exceeds data.image_size");
    try {
      loss.validate();
      backbone().validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  BackboneConfig backbone() const {
    BackboneConfig b;
    b.face_size = crop_size;
    b.part_size = part_size;
    b.stages = trunk;
    b.head_dim = head_dim;
    b.freeze_below = freeze_below;
    return b;
  }

  ModelConfig model(std::size_t num_classes) const { return {backbone(), embed_dim, pram_on, num_classes}; }
};

struct StepLog {
  std::size_t step = 0;
  double l_softmax = 0;
  double l_cat = 0;
  double l_total = 0;
  double mean_lambda = 0;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Names the earliest non-finite tensor in the graph feeding `root`. Leaves
/// found in `params` are reported by parameter name.
template <typename T>
std::string first_non_finite(const Tensor<T>& root, const ParameterStore<T>* params = nullptr) {
  for (const Node<T>* n : graph_nodes(root))
    for (T v : n->value)
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "op '" << n->op << "' shape " << shape_str(n->shape) << " (node #" << n->seq << ")";
        if (params)
          for (const auto& p : params->all())
            if (&p->tensor.node() == n) os << " parameter " << p->name;
        return os.str();
      }
  return "none";
}

/// Loss terms of one batch.
template <typename T>
struct BatchLoss {
  Tensor<T> softmax;
  Tensor<T> triplet;  // undefined when the triplet term is off
  Tensor<T> total;
  double mean_lambda = 0;
};

/// Builds the full training objective for an assembled batch.
template <typename T>
BatchLoss<T> batch_loss(const Model<T>& model, const Batch& batch, const TrainConfig& cfg) {
  const auto inputs = make_inputs<T>(batch.samples, model.config().backbone);
  const auto out = model.forward(inputs);
  BatchLoss<T> loss;
  loss.softmax =
      scaled_softmax_loss(out.embedding, batch.labels, model.classifier(), cfg.loss.softmax_scale, cfg.loss.scale_mode);
  auto lambdas = batch.lambdas();
  double lam_sum = 0;
  for (const auto& l : lambdas)
    for (double v : l) lam_sum += v;
  loss.mean_lambda = lam_sum / static_cast<double>(lambdas.size() * kNumParts);
  loss.total = loss.softmax;
  if (cfg.cat_on != TripletMode::Off) {
    if (cfg.cat_on == TripletMode::PlainC)
      for (auto& l : lambdas) l.fill(1.0);
    const std::size_t B = batch.triplets;
    std::vector<std::size_t> a_rows(B), p_rows(B), n_rows(B);
    for (std::size_t b = 0; b < B; ++b) {
      a_rows[b] = batch.anchor(b);
      p_rows[b] = batch.positive(b);
      n_rows[b] = batch.negative(b);
    }
    if (cfg.batch_hard) n_rows = batch_hard_negatives(batch, out.parts[0], cfg.negative_domain);
    PartFeatureSet<T> a, p, n;
    for (std::size_t i = 0; i < kNumParts; ++i) {
      a[i] = select_rows(out.parts[i], a_rows);
      p[i] = select_rows(out.parts[i], p_rows);
      n[i] = select_rows(out.parts[i], n_rows);
    }
    loss.triplet = component_adaptive_triplet(a, p, n, std::span<const ComponentWeights>(lambdas), cfg.loss.margin);
    loss.total = total_loss(loss.softmax, loss.triplet);
  }
  return loss;
}

/// Sampler -> backbone -> relation attention -> losses -> SGD.
template <typename T>
class Trainer {
 public:
  Trainer(const Config& config, const Dataset& train)
      : config_(config),
        cfg_(TrainConfig::from(config)),
        data_(train),
        sampler_(train, cfg_.negative_domain),
        model_(std::make_unique<Model<T>>(cfg_.model(train.identities().size()), cfg_.seed)),
        rng_(cfg_.seed ^ 0x5EEDF00Dull) {}

  const TrainConfig& config() const { return cfg_; }
  Model<T>& model() { return *model_; }
  const Model<T>& model() const { return *model_; }
  std::size_t steps_done() const { return step_; }

  StepLog step() {
    const auto triplets = sampler_.sample(cfg_.batch_size, rng_);
    const Batch batch = assemble_batch(data_, triplets, &rng_, cfg_.image_size, cfg_.crop_size);
    std::optional<BatchLoss<T>> computed;
    try {
      computed.emplace(batch_loss(*model_, batch, cfg_));
    } catch (const std::domain_error& e) {
      // a diverged model can collapse every feature to zero
      throw NonFiniteError("training diverged at step " + std::to_string(step_ + 1) + ": " + e.what());
    }
    BatchLoss<T>& loss = *computed;
    if (!std::isfinite(loss.total.item()))
      throw NonFiniteError("non-finite loss at step " + std::to_string(step_ + 1) +
                           "; first non-finite tensor: " + first_non_finite(loss.total, &model_->parameters()));
    auto& store = model_->parameters();
    store.zero_grad();
    backward(loss.total);
    if (cfg_.lr > 0) sgd_step(store, cfg_.lr, cfg_.weight_decay);
    ++step_;
    return {step_, static_cast<double>(loss.softmax.item()),
            loss.triplet.defined() ? static_cast<double>(loss.triplet.item()) : 0.0,
            static_cast<double>(loss.total.item()), loss.mean_lambda};
  }

  std::vector<StepLog> train(std::size_t steps) {
    std::vector<StepLog> log;
    for (std::size_t i = 0; i < steps; ++i) log.push_back(step());
    return log;
  }

  /// Config snapshot, state.* lines (step, rng, optimizer) and parameters.
  void save(const std::filesystem::path& path) const {
    std::ostringstream text;
    text << config_.to_text();
    text << "state.num_classes = " << model_->config().num_classes << '\n';
    text << "state.step = " << step_ << '\n';
    text << "state.optimizer = sgd\n";
    text << "state.rng = " << rng_ << '\n';
    write_checkpoint(path, text.str(), model_->parameters());
  }

  /// Restores a checkpoint written by save(); training continues bit-exactly.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& path, const Dataset& train) {
    auto data = read_checkpoint(path);
    auto parsed = parse_checkpoint_text(data.text);
    auto trainer = std::make_unique<Trainer>(parsed.config, train);
    if (parsed.num_classes != trainer->model_->config().num_classes)
      throw IoError("checkpoint was trained with " + std::to_string(parsed.num_classes) +
                    " identities, dataset has " + std::to_string(trainer->model_->config().num_classes));
    load_parameters(data, trainer->model_->parameters());
    trainer->step_ = parsed.step;
    std::istringstream rng_text(parsed.rng);
    rng_text >> trainer->rng_;
    if (!rng_text) throw IoError("checkpoint has a corrupt rng state");
    return trainer;
  }

  struct CheckpointText {
    Config config;
    std::size_t num_classes = 0;
    std::size_t step = 0;
    std::string rng;
  };

  static CheckpointText parse_checkpoint_text(const std::string& text) {
    CheckpointText out;
    std::ostringstream config_lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("state.", 0) != 0) {
        config_lines << line << '\n';
        continue;
      }
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw IoError("malformed checkpoint state line");
      const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
      if (key == "state.num_classes") out.num_classes = std::stoul(value);
      else if (key == "state.step") out.step = std::stoul(value);
      else if (key == "state.rng") out.rng = value;
      else if (key != "state.optimizer") throw IoError("unknown checkpoint state key " + key);
    }
    out.config.merge_text(config_lines.str());
    return out;
  }

 private:
  Config config_;
  TrainConfig cfg_;
  const Dataset& data_;
  TripletSampler sampler_;
  std::unique_ptr<Model<T>> model_;
  std::mt19937_64 rng_;
  std::size_t step_ = 0;
};

template <typename T>
struct LoadedModel {
  TrainConfig config;
  std::unique_ptr<Model<T>> model;
};

/// Rebuilds the model stored in a checkpoint written by Trainer::save.
template <typename T>
LoadedModel<T> load_model(const CheckpointData& data) {
  const auto parsed = Trainer<T>::parse_checkpoint_text(data.text);
  if (parsed.num_classes == 0) throw IoError("checkpoint lacks state.num_classes");
  LoadedModel<T> out{TrainConfig::from(parsed.config), nullptr};
  out.model = std::make_unique<Model<T>>(out.config.model(parsed.num_classes), out.config.seed);
  load_parameters(data, out.model->parameters());
  return out;
}

inline void write_loss_log(const std::filesystem::path& path, const std::vector<StepLog>& log, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  if (!append) out << "step,l_softmax,l_cat,l_total,mean_lambda\n";
  out << std::setprecision(9);
  for (const auto& s : log)
    out << s.step << ',' << s.l_softmax << ',' << s.l_cat << ',' << s.l_total << ',' << s.mean_lambda << '\n';
}

struct EmbeddingRecord {
  std::string sample_id;
  int identity = 0;
  Domain domain = Domain::VIS;
  std::vector<float> embedding;
};

/// Centre-crop inference over a dataset split.
template <typename T>
std::vector<EmbeddingRecord> embed_dataset(const Model<T>& model, const Dataset& ds, std::size_t image_size = 144,
                                           std::size_t crop_size = 128, std::size_t chunk = 32) {
  NoGradGuard no_grad;
  std::vector<EmbeddingRecord> out;
  for (std::size_t start = 0; start < ds.samples.size(); start += chunk) {
    const std::size_t end = std::min(ds.samples.size(), start + chunk);
    std::vector<CroppedSample> crops;
    for (std::size_t i = start; i < end; ++i)
      crops.push_back(random_crop(ds.samples[i].image, ds.samples[i].masks, nullptr, image_size, crop_size));
    const auto emb = model.forward(make_inputs<T>(crops, model.config().backbone)).embedding;
    const std::size_t E = emb.dim(1);
    for (std::size_t i = start; i < end; ++i) {
      EmbeddingRecord r{ds.samples[i].sample_id, ds.samples[i].identity, ds.samples[i].domain, {}};
      for (std::size_t e = 0; e < E; ++e) r.embedding.push_back(static_cast<float>(emb.values()[(i - start) * E + e]));
      out.push_back(std::move(r));
    }
  }
  return out;
}

/// One record per line: sample_id, identity, domain, then the embedding values,
/// tab-separated.
inline void write_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(9);
  for (const auto& r : records) {
    out << r.sample_id << '\t' << r.identity << '\t' << to_string(r.domain);
    for (float v : r.embedding) out << '\t' << v;
    out << '\n';
  }
}

inline std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<EmbeddingRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    EmbeddingRecord r;
    std::string domain, value;
    std::getline(ss, r.sample_id, '\t');
    std::getline(ss, value, '\t');
    r.identity = std::stoi(value);
    std::getline(ss, domain, '\t');
    r.domain = parse_domain(domain);
    while (std::getline(ss, value, '\t')) r.embedding.push_back(std::stof(value));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace pram
