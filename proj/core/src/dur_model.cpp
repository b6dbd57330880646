#include "rhythmvec/dur_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "rhythmvec/error.hpp"

namespace rhythmvec {

using nn::Matrix;
using nn::Tape;
using nn::Var;

LinguisticSequence build_linguistic_vector(std::span<const std::size_t> phonemes,
                                           const PhonemeInventory& inventory) {
  if (phonemes.empty()) throw ValidationError("linguistic vector: empty phoneme sequence");
  const auto k = static_cast<Eigen::Index>(inventory.size());
  const auto t_len = static_cast<Eigen::Index>(phonemes.size());
  LinguisticSequence out{Matrix::Zero(t_len, linguistic_dim(inventory.size()))};
  auto index = [&](Eigen::Index t) {
    const std::size_t p = phonemes[static_cast<std::size_t>(t)];
    if (p >= inventory.size()) {
      throw ValidationError("linguistic vector: phoneme index " + std::to_string(p) +
                            " out of range");
    }
    return static_cast<Eigen::Index>(p);
  };
  for (Eigen::Index t = 0; t < t_len; ++t) {
    out.rows(t, index(t)) = 1.0;
    if (t > 0) out.rows(t, k + index(t - 1)) = 1.0;
    if (t + 1 < t_len) out.rows(t, 2 * k + index(t + 1)) = 1.0;
    out.rows(t, 3 * k) = static_cast<double>(t + 1) / static_cast<double>(t_len);
    out.rows(t, 3 * k + 1) = static_cast<double>(t_len) / kLengthScale;
  }
  return out;
}

LinguisticSequence build_linguistic_vector(const Utterance& utterance,
                                           const PhonemeInventory& inventory) {
  validate_utterance(utterance, inventory.size());
  return build_linguistic_vector(utterance.phonemes, inventory);
}

void DurModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("duration config: " + what); };
  if (n_blocks < 0) fail("n_blocks must be >= 0");
  if (model_dim < 1 || n_heads < 1) fail("model_dim and n_heads must be positive");
  if (model_dim % n_heads != 0) fail("model_dim must be divisible by n_heads");
  if (ffn_dim < 1) fail("ffn_dim must be positive");
  if (embed_dim < 1) fail("embed_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

nlohmann::json to_json(const DurModelConfig& c) {
  return {{"n_blocks", c.n_blocks},   {"model_dim", c.model_dim},   {"n_heads", c.n_heads},
          {"ffn_dim", c.ffn_dim},     {"embed_dim", c.embed_dim},   {"log_target", c.log_target},
          {"dropout", c.dropout}};
}

DurModelConfig dur_model_config_from_json(const nlohmann::json& j) {
  DurModelConfig c;
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.log_target = j.value("log_target", c.log_target);
  c.dropout = j.value("dropout", c.dropout);
  c.validate();
  return c;
}

nlohmann::json to_json(const DurTrainerOptions& o) {
  return {{"max_epochs", o.max_epochs},       {"batch_utterances", o.batch_utterances},
          {"eval_every", o.eval_every},       {"patience", o.patience},
          {"learning_rate", o.learning_rate}, {"clip_norm", o.clip_norm},
          {"seed", o.seed}};
}

DurTrainerOptions dur_trainer_options_from_json(const nlohmann::json& j) {
  DurTrainerOptions o;
  o.max_epochs = j.value("max_epochs", o.max_epochs);
  o.batch_utterances = j.value("batch_utterances", o.batch_utterances);
  o.eval_every = j.value("eval_every", o.eval_every);
  o.patience = j.value("patience", o.patience);
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.clip_norm = j.value("clip_norm", o.clip_norm);
  o.seed = j.value("seed", o.seed);
  return o;
}

// ---------------------------------------------------------------------------
// DurationModel

DurationModel::DurationModel(DurModelConfig config, PhonemeInventory inventory,
                             std::uint64_t init_seed)
    : config_(config), inventory_(std::move(inventory)) {
  config_.validate();
  Rng rng(init_seed);
  nn::init_linear(params_, "input", linguistic_dim(inventory_.size()) + config_.embed_dim,
                  config_.model_dim, rng);
  for (int l = 0; l < config_.n_blocks; ++l) {
    nn::init_transformer_block(params_, "enc." + std::to_string(l), config_.model_dim,
                               config_.ffn_dim, rng);
  }
  nn::init_layer_norm(params_, "enc.norm", config_.model_dim);
  nn::init_linear(params_, "out", config_.model_dim, 1, rng);
}

DurationModel DurationModel::from_checkpoint(const ModelCheckpoint& ck) {
  if (ck.kind != "duration") {
    throw ValidationError("checkpoint kind '" + ck.kind + "' is not a duration model");
  }
  DurationModel model;
  model.config_ = dur_model_config_from_json(ck.config.at("duration_model"));
  model.inventory_ = PhonemeInventory(ck.inventory);
  DurationModel reference(model.config_, model.inventory_, 0);
  if (reference.params_.size() != ck.parameters.size()) {
    throw ValidationError("duration checkpoint: parameter count does not match config");
  }
  for (std::size_t i = 0; i < ck.parameters.size(); ++i) {
    const auto& a = reference.params_[i];
    const auto& b = ck.parameters[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      throw ValidationError("duration checkpoint: parameter '" + b.name +
                            "' does not match config");
    }
  }
  model.params_ = ck.parameters;
  return model;
}

ModelCheckpoint DurationModel::to_checkpoint(nlohmann::json training_meta) const {
  ModelCheckpoint ck;
  ck.kind = "duration";
  ck.config = {{"duration_model", to_json(config_)}};
  ck.inventory = inventory_.symbols();
  ck.parameters = params_;
  ck.training_meta = std::move(training_meta);
  return ck;
}

Matrix DurationModel::prepare(std::span<const std::size_t> phonemes,
                              const Embedding& embedding) const {
  if (embedding.dim() != config_.embed_dim) {
    throw ShapeError("duration model: embedding dimension " + std::to_string(embedding.dim()) +
                     " does not match configured " + std::to_string(config_.embed_dim));
  }
  const LinguisticSequence ling = build_linguistic_vector(phonemes, inventory_);
  Matrix input(ling.length(), ling.dim() + config_.embed_dim);
  input.leftCols(ling.dim()) = ling.rows;
  input.rightCols(config_.embed_dim) = embedding.values.transpose().replicate(ling.length(), 1);
  return input;
}

Var DurationModel::forward(Tape& tape, const Matrix& input, const nn::Dropout& drop) const {
  const Eigen::Index expected = linguistic_dim(inventory_.size()) + config_.embed_dim;
  if (input.cols() != expected) {
    throw ShapeError("duration model: input dimension " + std::to_string(input.cols()) +
                     " does not match " + std::to_string(expected));
  }
  Var h = nn::linear(tape, params_, "input", tape.constant(input));
  h = nn::add(h, tape.constant(nn::sinusoidal_positions(input.rows(), config_.model_dim)));
  for (int l = 0; l < config_.n_blocks; ++l) {
    h = nn::transformer_block(tape, params_, "enc." + std::to_string(l), h, config_.n_heads,
                              input.rows(), drop);
  }
  h = nn::layer_norm(tape, params_, "enc.norm", h);
  return nn::linear(tape, params_, "out", h);
}

std::vector<double> DurationModel::predict(std::span<const std::size_t> phonemes,
                                           const Embedding& embedding) const {
  Tape tape(false);
  Var out = forward(tape, prepare(phonemes, embedding));
  std::vector<double> durations(phonemes.size());
  for (std::size_t t = 0; t < durations.size(); ++t) {
    const double raw = out.value()(static_cast<Eigen::Index>(t), 0);
    const double seconds = config_.log_target ? std::exp(raw) : raw;
    durations[t] = std::max(kMinDuration, seconds);
  }
  return durations;
}

std::vector<double> predict_durations(const ModelCheckpoint& checkpoint,
                                      std::span<const std::size_t> phonemes,
                                      const Embedding& speaker_embedding) {
  return DurationModel::from_checkpoint(checkpoint).predict(phonemes, speaker_embedding);
}

// ---------------------------------------------------------------------------
// Training

namespace {

const Embedding& embedding_for(const SpeakerEmbeddings& embeddings, const std::string& speaker) {
  auto it = embeddings.find(speaker);
  if (it == embeddings.end()) {
    throw ValidationError("no speaker embedding for speaker '" + speaker + "'");
  }
  return it->second;
}

}  // namespace

double duration_mse(const DurationModel& model, const Corpus& corpus,
                    const SpeakerEmbeddings& embeddings) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const Utterance& u : corpus.utterances()) {
    const auto pred = model.predict(u.phonemes, embedding_for(embeddings, u.speaker_id));
    for (std::size_t t = 0; t < pred.size(); ++t) {
      const double diff = pred[t] - u.durations[t];
      sum += diff * diff;
    }
    n += pred.size();
  }
  if (n == 0) throw ValidationError("duration_mse: empty corpus");
  return sum / static_cast<double>(n);
}

ModelCheckpoint train_duration_model(const Corpus& train, const SpeakerEmbeddings& embeddings,
                                     const Corpus& valid, const DurModelConfig& config,
                                     const DurTrainerOptions& options,
                                     const std::function<void(const DurEvalRecord&)>& on_eval) {
  std::vector<Embedding> per_utterance;
  per_utterance.reserve(train.size());
  for (const Utterance& u : train.utterances()) {
    per_utterance.push_back(embedding_for(embeddings, u.speaker_id));
  }
  return train_duration_model(train, per_utterance, valid, embeddings, config, options, on_eval);
}

ModelCheckpoint train_duration_model(const Corpus& train,
                                     std::span<const Embedding> utterance_embeddings,
                                     const Corpus& valid, const SpeakerEmbeddings& valid_embeddings,
                                     const DurModelConfig& config,
                                     const DurTrainerOptions& options,
                                     const std::function<void(const DurEvalRecord&)>& on_eval) {
  config.validate();
  if (train.empty()) throw ValidationError("duration training: empty training corpus");
  if (valid.empty()) throw ValidationError("duration training: empty validation corpus");
  if (!(train.inventory() == valid.inventory())) {
    throw ValidationError("duration training: train and valid inventories differ");
  }
  if (options.batch_utterances < 1 || options.max_epochs < 1 || options.eval_every < 1) {
    throw ValidationError("duration training: batch size, epochs and eval cadence must be >= 1");
  }
  if (utterance_embeddings.size() != train.size()) {
    throw ShapeError("duration training: " + std::to_string(utterance_embeddings.size()) +
                     " embeddings for " + std::to_string(train.size()) + " utterances");
  }
  for (const auto& s : valid.speakers()) embedding_for(valid_embeddings, s);

  DurationModel model(config, train.inventory(), mix_seed(options.seed, 21));

  std::vector<Matrix> inputs;
  std::vector<Eigen::VectorXd> targets;
  double target_sum = 0.0;
  std::size_t target_count = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Utterance& u = train.utterance(i);
    inputs.push_back(model.prepare(u.phonemes, utterance_embeddings[i]));
    Eigen::VectorXd y(static_cast<Eigen::Index>(u.length()));
    for (std::size_t t = 0; t < u.length(); ++t) {
      y(static_cast<Eigen::Index>(t)) = config.log_target ? std::log(u.durations[t]) : u.durations[t];
    }
    target_sum += y.sum();
    target_count += u.length();
    targets.push_back(std::move(y));
  }
  // Start as the constant mean-target predictor.
  model.parameters().at("out.W").value.setZero();
  model.parameters().at("out.b").value(0, 0) = target_sum / static_cast<double>(target_count);

  Rng order_rng(mix_seed(options.seed, 22));
  Rng dropout_rng(mix_seed(options.seed, 23));
  const nn::Dropout drop{config.dropout, &dropout_rng};
  nn::Adam adam(model.parameters(),
                {options.learning_rate, 0.9, 0.999, 1e-8, options.clip_norm});

  nn::ParameterStore best_params = model.parameters();
  double best_mse = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stale = 0;
  int epochs_run = 0;
  nlohmann::json history = nlohmann::json::array();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(options.batch_utterances);

  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double sq_sum = 0.0;
    std::size_t sq_count = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      std::size_t phonemes = 0;
      for (std::size_t i = start; i < stop; ++i) phonemes += static_cast<std::size_t>(targets[order[i]].size());

      nn::Gradients grads = nn::Gradients::zeros_like(model.parameters());
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t idx = order[i];
        Tape tape(true);
        Var out = model.forward(tape, inputs[idx], drop);
        const Eigen::VectorXd residual = out.value().col(0) - targets[idx];
        sq_sum += residual.squaredNorm();
        tape.backward(out, (2.0 / static_cast<double>(phonemes)) * residual);
        tape.collect(grads);
      }
      sq_count += phonemes;
      adam.step(model.parameters(), grads);
    }
    epochs_run = epoch;

    if (epoch % options.eval_every == 0 || epoch == options.max_epochs) {
      DurEvalRecord record;
      record.epoch = epoch;
      record.train_mse = sq_sum / static_cast<double>(sq_count);
      record.valid_mse = duration_mse(model, valid, valid_embeddings);
      history.push_back(
          {{"epoch", epoch}, {"train_mse", record.train_mse}, {"valid_mse", record.valid_mse}});
      if (on_eval) on_eval(record);
      if (record.valid_mse < best_mse) {
        best_mse = record.valid_mse;
        best_epoch = epoch;
        best_params = model.parameters();
        stale = 0;
      } else if (options.patience > 0 && ++stale >= options.patience) {
        break;
      }
    }
  }

  model.parameters() = best_params;
  return model.to_checkpoint({{"seed", options.seed},
                              {"epochs_run", epochs_run},
                              {"best_epoch", best_epoch},
                              {"best_valid_mse", best_mse},
                              {"history", history},
                              {"trainer", to_json(options)}});
}

}  // namespace rhythmvec
