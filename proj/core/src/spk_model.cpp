#include "rhythmvec/spk_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "rhythmvec/error.hpp"
#include "rhythmvec/metrics.hpp"

namespace rhythmvec {

using nn::Matrix;
using nn::Tape;
using nn::Var;

// ---------------------------------------------------------------------------
// Config

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("encoder config: " + what); };
  if (n_layers < 0) fail("n_layers must be >= 0");
  if (model_dim < 1 || n_heads < 1) fail("model_dim and n_heads must be positive");
  if (model_dim % n_heads != 0) fail("model_dim must be divisible by n_heads");
  if (hidden_dim < 1) fail("hidden_dim must be positive");
  if (embed_dim < 1) fail("embed_dim must be >= 1");
  if (attn_hidden < 1) fail("attn_hidden must be positive");
  if (bundle.n_pre < 0 || bundle.n_follow < 0) fail("bundle sizes must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"n_layers", c.n_layers},
          {"model_dim", c.model_dim},
          {"n_heads", c.n_heads},
          {"hidden_dim", c.hidden_dim},
          {"bundle", {{"n_pre", c.bundle.n_pre}, {"n_follow", c.bundle.n_follow}}},
          {"embed_dim", c.embed_dim},
          {"attn_hidden", c.attn_hidden},
          {"positional_encoding", c.positional_encoding},
          {"dropout", c.dropout},
          {"feature_mode", to_string(c.feature_mode)},
          {"normalize_durations", c.normalize_durations}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  if (j.contains("bundle")) {
    c.bundle.n_pre = j.at("bundle").value("n_pre", c.bundle.n_pre);
    c.bundle.n_follow = j.at("bundle").value("n_follow", c.bundle.n_follow);
  }
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.attn_hidden = j.value("attn_hidden", c.attn_hidden);
  c.positional_encoding = j.value("positional_encoding", c.positional_encoding);
  c.dropout = j.value("dropout", c.dropout);
  c.feature_mode = feature_mode_from_string(j.value("feature_mode", std::string("full")));
  c.normalize_durations = j.value("normalize_durations", c.normalize_durations);
  c.validate();
  return c;
}

nlohmann::json to_json(const SpeakerTrainerOptions& o) {
  return {{"batch_speakers", o.batch_speakers}, {"batch_utterances", o.batch_utterances},
          {"max_epochs", o.max_epochs},         {"eval_every", o.eval_every},
          {"patience", o.patience},             {"learning_rate", o.learning_rate},
          {"clip_norm", o.clip_norm},           {"init_scale", o.init_scale},
          {"init_bias", o.init_bias},           {"valid_same", o.valid_same},
          {"valid_diff", o.valid_diff},         {"seed", o.seed}};
}

SpeakerTrainerOptions speaker_trainer_options_from_json(const nlohmann::json& j) {
  SpeakerTrainerOptions o;
  o.batch_speakers = j.value("batch_speakers", o.batch_speakers);
  o.batch_utterances = j.value("batch_utterances", o.batch_utterances);
  o.max_epochs = j.value("max_epochs", o.max_epochs);
  o.eval_every = j.value("eval_every", o.eval_every);
  o.patience = j.value("patience", o.patience);
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.clip_norm = j.value("clip_norm", o.clip_norm);
  o.init_scale = j.value("init_scale", o.init_scale);
  o.init_bias = j.value("init_bias", o.init_bias);
  o.valid_same = j.value("valid_same", o.valid_same);
  o.valid_diff = j.value("valid_diff", o.valid_diff);
  o.seed = j.value("seed", o.seed);
  return o;
}

// ---------------------------------------------------------------------------
// Attentive pooling, direct evaluation

PoolResult attentive_pool(const FeatureSequence& hidden, const AttentionParams& params) {
  const Eigen::Index t_len = hidden.length();
  const Eigen::Index d = hidden.dim();
  if (t_len == 0) throw ValidationError("attentive_pool: empty sequence");
  if (params.W.rows() != d || params.W.cols() != params.b.size() ||
      params.b.size() != params.mu.size()) {
    throw ShapeError("attentive_pool: parameter shapes do not match input dimension " +
                     std::to_string(d));
  }
  Eigen::VectorXd scores(t_len);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const Eigen::RowVectorXd h = (hidden.rows.row(t) * params.W + params.b).array().tanh().matrix();
    scores(t) = h.dot(params.mu);
  }
  const double peak = scores.maxCoeff();
  Eigen::VectorXd weights = (scores.array() - peak).exp().matrix();
  weights /= weights.sum();
  PoolResult result;
  result.weights = weights;
  result.output = weights.transpose() * hidden.rows;
  return result;
}

// ---------------------------------------------------------------------------
// SpeakerModel

SpeakerModel::SpeakerModel(EncoderConfig config, PhonemeInventory inventory,
                           std::uint64_t init_seed, DurationNorm norm)
    : config_(config), inventory_(std::move(inventory)), norm_(norm) {
  config_.validate();
  Rng rng(init_seed);
  const Eigen::Index in_dim =
      feature_dim(config_.feature_mode, inventory_.size()) * config_.bundle.width();
  nn::init_linear(params_, "input", in_dim, config_.model_dim, rng);
  for (int l = 0; l < config_.n_layers; ++l) {
    nn::init_transformer_block(params_, "enc." + std::to_string(l), config_.model_dim,
                               config_.hidden_dim, rng);
  }
  nn::init_layer_norm(params_, "enc.norm", config_.model_dim);
  nn::init_attentive_pool(params_, "pool", config_.model_dim, config_.attn_hidden, rng);
  nn::init_linear(params_, "fc1", config_.model_dim, config_.hidden_dim, rng);
  nn::init_linear(params_, "fc2", config_.hidden_dim, config_.embed_dim, rng);
  params_.add("loss.scale", Matrix::Constant(1, 1, 10.0));
  params_.add("loss.bias", Matrix::Constant(1, 1, -5.0));
}

SpeakerModel SpeakerModel::from_checkpoint(const ModelCheckpoint& ck) {
  if (ck.kind != "speaker") {
    throw ValidationError("checkpoint kind '" + ck.kind + "' is not a speaker model");
  }
  SpeakerModel model;
  model.config_ = encoder_config_from_json(ck.config.at("encoder"));
  model.inventory_ = PhonemeInventory(ck.inventory);
  model.norm_.mean = ck.config.at("duration_norm").at("mean").get<double>();
  model.norm_.scale = ck.config.at("duration_norm").at("scale").get<double>();
  model.params_ = ck.parameters;
  // Shape check against a freshly initialized model of the same config.
  SpeakerModel reference(model.config_, model.inventory_, 0, model.norm_);
  if (reference.params_.size() != model.params_.size()) {
    throw ValidationError("speaker checkpoint: parameter count does not match config");
  }
  for (std::size_t i = 0; i < model.params_.size(); ++i) {
    const auto& a = reference.params_[i];
    const auto& b = model.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      throw ValidationError("speaker checkpoint: parameter '" + b.name +
                            "' does not match config");
    }
  }
  return model;
}

ModelCheckpoint SpeakerModel::to_checkpoint(nlohmann::json training_meta) const {
  ModelCheckpoint ck;
  ck.kind = "speaker";
  ck.config = {{"encoder", to_json(config_)},
               {"duration_norm", {{"mean", norm_.mean}, {"scale", norm_.scale}}}};
  ck.inventory = inventory_.symbols();
  ck.parameters = params_;
  ck.training_meta = std::move(training_meta);
  return ck;
}

AttentionParams SpeakerModel::attention_params() const {
  AttentionParams p;
  p.W = params_.at("pool.W").value;
  p.b = params_.at("pool.b").value.row(0);
  p.mu = params_.at("pool.mu").value.row(0);
  return p;
}

double SpeakerModel::loss_scale() const { return params_.at("loss.scale").value(0, 0); }
double SpeakerModel::loss_bias() const { return params_.at("loss.bias").value(0, 0); }

FeatureSequence SpeakerModel::prepare(const Utterance& utterance) const {
  return bundle(encode_features(utterance, inventory_, config_.feature_mode, norm_),
                config_.bundle);
}

Var SpeakerModel::encode(Tape& tape, const FeatureSequence& bundled, Eigen::Index valid_len,
                         const nn::Dropout& drop) const {
  const Eigen::Index expected =
      feature_dim(config_.feature_mode, inventory_.size()) * config_.bundle.width();
  if (bundled.dim() != expected) {
    throw ShapeError("encoder_forward: feature dimension " + std::to_string(bundled.dim()) +
                     " does not match configured " + std::to_string(expected));
  }
  if (valid_len < 1 || valid_len > bundled.length()) {
    throw ShapeError("encoder_forward: invalid valid length");
  }
  Var h = nn::linear(tape, params_, "input", tape.constant(bundled.rows));
  if (config_.positional_encoding) {
    h = nn::add(h, tape.constant(nn::sinusoidal_positions(bundled.length(), config_.model_dim)));
  }
  for (int l = 0; l < config_.n_layers; ++l) {
    h = nn::transformer_block(tape, params_, "enc." + std::to_string(l), h, config_.n_heads,
                              valid_len, drop);
  }
  return nn::layer_norm(tape, params_, "enc.norm", h);
}

Var SpeakerModel::embed(Tape& tape, const FeatureSequence& bundled, Eigen::Index valid_len,
                        const nn::Dropout& drop) const {
  Var hidden = encode(tape, bundled, valid_len, drop);
  Var pooled = nn::attentive_pool(tape, params_, "pool", hidden, valid_len);
  Var z = nn::dropout(nn::relu(nn::linear(tape, params_, "fc1", pooled)), drop);
  return nn::linear(tape, params_, "fc2", z);
}

Embedding SpeakerModel::embed(const Utterance& utterance) const {
  const FeatureSequence x = prepare(utterance);
  Tape tape(false);
  Var e = embed(tape, x, x.length());
  return {e.value().row(0).transpose()};
}

std::vector<Embedding> SpeakerModel::embed_padded(std::span<const Utterance> utterances) const {
  std::vector<FeatureSequence> inputs;
  Eigen::Index longest = 0;
  for (const Utterance& u : utterances) {
    inputs.push_back(prepare(u));
    longest = std::max(longest, inputs.back().length());
  }
  std::vector<Embedding> out;
  out.reserve(inputs.size());
  for (const FeatureSequence& x : inputs) {
    FeatureSequence padded{Matrix::Zero(longest, x.dim())};
    padded.rows.topRows(x.length()) = x.rows;
    Tape tape(false);
    Var e = embed(tape, padded, x.length());
    out.push_back({e.value().row(0).transpose()});
  }
  return out;
}

FeatureSequence encoder_forward(const SpeakerModel& model, const FeatureSequence& bundled) {
  Tape tape(false);
  Var h = model.encode(tape, bundled, bundled.length());
  return {h.value()};
}

Embedding extract_embedding(const SpeakerModel& model, const Utterance& utterance,
                            const PhonemeInventory& inventory) {
  validate_utterance(utterance, inventory.size());
  if (inventory == model.inventory()) return model.embed(utterance);
  Utterance mapped = utterance;
  for (auto& p : mapped.phonemes) {
    const std::string& symbol = inventory.symbol(p);
    if (!model.inventory().contains(symbol)) {
      throw ValidationError("phoneme '" + symbol + "' is not in the model inventory");
    }
    p = model.inventory().index_of(symbol);
  }
  return model.embed(mapped);
}

Embedding extract_embedding(const ModelCheckpoint& checkpoint, const Utterance& utterance,
                            const PhonemeInventory& inventory) {
  return extract_embedding(SpeakerModel::from_checkpoint(checkpoint), utterance, inventory);
}

std::vector<Embedding> extract_embeddings(const SpeakerModel& model, const Corpus& corpus) {
  std::vector<Embedding> out;
  out.reserve(corpus.size());
  for (const Utterance& u : corpus.utterances()) {
    out.push_back(extract_embedding(model, u, corpus.inventory()));
  }
  return out;
}

Embedding average_embedding(std::span<const Embedding> embeddings) {
  if (embeddings.empty()) throw ValidationError("average_embedding: empty list");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(embeddings.front().dim());
  for (const Embedding& e : embeddings) {
    if (e.dim() != sum.size()) throw ShapeError("average_embedding: mixed dimensions");
    sum += e.values;
  }
  return {sum / static_cast<double>(embeddings.size())};
}

// ---------------------------------------------------------------------------
// Angular prototypical loss

AngularProtoResult angular_prototypical_loss(
    const std::vector<std::vector<Eigen::VectorXd>>& batch, double scale, double bias) {
  const std::size_t n = batch.size();
  if (n < 2) throw ValidationError("angular prototypical loss: need at least 2 speakers");
  const std::size_t m = batch.front().size();
  if (m < 2) throw ValidationError("angular prototypical loss: need at least 2 utterances");
  const Eigen::Index dim = batch.front().front().size();
  for (const auto& group : batch) {
    if (group.size() != m) throw ShapeError("angular prototypical loss: ragged batch");
    for (const auto& e : group) {
      if (e.size() != dim) throw ShapeError("angular prototypical loss: mixed dimensions");
    }
  }

  std::vector<Eigen::VectorXd> protos(n), queries(n);
  std::vector<double> proto_norm(n), query_norm(n);
  for (std::size_t k = 0; k < n; ++k) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
    for (std::size_t u = 0; u + 1 < m; ++u) sum += batch[k][u];
    protos[k] = sum / static_cast<double>(m - 1);
    queries[k] = batch[k][m - 1];
    proto_norm[k] = protos[k].norm();
    query_norm[k] = queries[k].norm();
    if (proto_norm[k] == 0.0 || query_norm[k] == 0.0) {
      throw ValidationError("angular prototypical loss: zero-norm embedding");
    }
  }

  const double w = std::max(scale, kMinLossScale);
  Eigen::MatrixXd cos(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      cos(j, k) = queries[j].dot(protos[k]) / (query_norm[j] * proto_norm[k]);
    }
  }
  const Eigen::MatrixXd logits = (w * cos).array() + bias;

  AngularProtoResult result;
  Eigen::MatrixXd g(n, n);  // dL/dS
  for (std::size_t j = 0; j < n; ++j) {
    const double peak = logits.row(j).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(j).array() - peak).exp().matrix();
    const double total = e.sum();
    result.loss += std::log(total) + peak - logits(j, j);
    g.row(j) = e / total;
    g(j, j) -= 1.0;
  }
  const auto nd = static_cast<double>(n);
  result.loss /= nd;
  g /= nd;

  result.grad_scale = scale > kMinLossScale ? (g.cwiseProduct(cos)).sum() : 0.0;
  result.grad_bias = g.sum();
  const Eigen::MatrixXd dcos = w * g;

  std::vector<Eigen::VectorXd> d_query(n, Eigen::VectorXd::Zero(dim));
  std::vector<Eigen::VectorXd> d_proto(n, Eigen::VectorXd::Zero(dim));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      const double c = dcos(j, k);
      d_query[j] += c * (protos[k] / (query_norm[j] * proto_norm[k]) -
                         cos(j, k) * queries[j] / (query_norm[j] * query_norm[j]));
      d_proto[k] += c * (queries[j] / (query_norm[j] * proto_norm[k]) -
                         cos(j, k) * protos[k] / (proto_norm[k] * proto_norm[k]));
    }
  }
  result.grad_embeddings.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    result.grad_embeddings[k].resize(m);
    for (std::size_t u = 0; u + 1 < m; ++u) {
      result.grad_embeddings[k][u] = d_proto[k] / static_cast<double>(m - 1);
    }
    result.grad_embeddings[k][m - 1] = d_query[k];
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training

namespace {

using Episode = std::vector<std::vector<std::size_t>>;  // [speaker][utterance] corpus indices

// One epoch of episodes. Every speaker's utterances are shuffled and cut
// into groups of `per_speaker`; episodes take one group from each of the
// `speakers` speakers with the most groups left.
std::vector<Episode> plan_epoch(const Corpus& corpus, int speakers, int per_speaker, Rng& rng) {
  const auto& by_speaker = corpus.utterances_by_speaker();
  const std::size_t n_spk = by_speaker.size();
  std::vector<std::vector<std::vector<std::size_t>>> groups(n_spk);
  for (std::size_t s = 0; s < n_spk; ++s) {
    std::vector<std::size_t> utts = by_speaker[s];
    rng.shuffle(std::span<std::size_t>(utts));
    for (std::size_t start = 0; start + static_cast<std::size_t>(per_speaker) <= utts.size();
         start += static_cast<std::size_t>(per_speaker)) {
      groups[s].emplace_back(utts.begin() + static_cast<std::ptrdiff_t>(start),
                             utts.begin() + static_cast<std::ptrdiff_t>(start) + per_speaker);
    }
  }
  std::vector<std::size_t> tie_break(n_spk);
  std::iota(tie_break.begin(), tie_break.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(tie_break));
  std::vector<std::size_t> rank(n_spk);
  for (std::size_t i = 0; i < n_spk; ++i) rank[tie_break[i]] = i;

  std::vector<Episode> episodes;
  while (true) {
    std::vector<std::size_t> candidates;
    for (std::size_t s = 0; s < n_spk; ++s) {
      if (!groups[s].empty()) candidates.push_back(s);
    }
    if (candidates.size() < static_cast<std::size_t>(speakers)) break;
    std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
      if (groups[a].size() != groups[b].size()) return groups[a].size() > groups[b].size();
      return rank[a] < rank[b];
    });
    Episode episode;
    for (int i = 0; i < speakers; ++i) {
      auto& g = groups[candidates[static_cast<std::size_t>(i)]];
      episode.push_back(std::move(g.back()));
      g.pop_back();
    }
    episodes.push_back(std::move(episode));
  }
  return episodes;
}

}  // namespace

EERResult evaluate_eer(const SpeakerModel& model, const Corpus& corpus, const TrialSet& trials) {
  const std::vector<Embedding> embeddings = extract_embeddings(model, corpus);
  std::vector<double> scores;
  scores.reserve(trials.pairs.size());
  for (const TrialPair& p : trials.pairs) {
    scores.push_back(cosine_similarity(embeddings[p.a].values, embeddings[p.b].values));
  }
  return compute_eer(trials, scores);
}

ModelCheckpoint train_speaker_model(const Corpus& train, const Corpus& valid,
                                    const EncoderConfig& config,
                                    const SpeakerTrainerOptions& options,
                                    const SpeakerEvalCallback& on_eval) {
  config.validate();
  if (options.batch_speakers < 2 || options.batch_utterances < 2) {
    throw ValidationError("speaker training: batches need >= 2 speakers x >= 2 utterances");
  }
  if (options.max_epochs < 1 || options.eval_every < 1) {
    throw ValidationError("speaker training: max_epochs and eval_every must be >= 1");
  }
  if (valid.speakers().size() < 2) {
    throw ValidationError("speaker training: validation corpus needs >= 2 speakers");
  }
  if (!(train.inventory() == valid.inventory())) {
    throw ValidationError("speaker training: train and valid inventories differ");
  }
  std::size_t eligible = 0;
  for (const auto& idx : train.utterances_by_speaker()) {
    if (idx.size() >= static_cast<std::size_t>(options.batch_utterances)) ++eligible;
  }
  if (eligible < static_cast<std::size_t>(options.batch_speakers)) {
    throw ValidationError("speaker training: corpus too small for a " +
                          std::to_string(options.batch_speakers) + " x " +
                          std::to_string(options.batch_utterances) + " batch (" +
                          std::to_string(eligible) + " eligible speakers)");
  }

  const DurationNorm norm = config.normalize_durations ? fit_duration_norm(train) : DurationNorm{};
  SpeakerModel model(config, train.inventory(), mix_seed(options.seed, 11), norm);
  model.parameters().at("loss.scale").value(0, 0) = options.init_scale;
  model.parameters().at("loss.bias").value(0, 0) = options.init_bias;

  const auto [avail_same, avail_diff] = available_trial_pairs(valid);
  const TrialSet valid_trials =
      make_trial_pairs(valid, std::min(options.valid_same, avail_same),
                       std::min(options.valid_diff, avail_diff), mix_seed(options.seed, 12));

  std::vector<FeatureSequence> inputs;
  inputs.reserve(train.size());
  for (const Utterance& u : train.utterances()) inputs.push_back(model.prepare(u));

  Rng sampler(mix_seed(options.seed, 13));
  Rng dropout_rng(mix_seed(options.seed, 14));
  const nn::Dropout drop{config.dropout, &dropout_rng};
  nn::Adam adam(model.parameters(),
                {options.learning_rate, 0.9, 0.999, 1e-8, options.clip_norm});
  const std::size_t scale_index = model.parameters().index_of("loss.scale");
  const std::size_t bias_index = model.parameters().index_of("loss.bias");

  nn::ParameterStore best_params = model.parameters();
  double best_eer = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stale_evals = 0;
  int epochs_run = 0;
  nlohmann::json history = nlohmann::json::array();

  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (const Episode& episode : plan_epoch(train, options.batch_speakers,
                                             options.batch_utterances, sampler)) {
      std::vector<std::unique_ptr<Tape>> tapes;
      std::vector<std::vector<Var>> outputs(episode.size());
      std::vector<std::vector<Eigen::VectorXd>> values(episode.size());
      for (std::size_t k = 0; k < episode.size(); ++k) {
        for (std::size_t idx : episode[k]) {
          tapes.push_back(std::make_unique<Tape>(true));
          const FeatureSequence& x = inputs[idx];
          Var e = model.embed(*tapes.back(), x, x.length(), drop);
          outputs[k].push_back(e);
          values[k].push_back(e.value().row(0).transpose());
        }
      }
      const AngularProtoResult loss =
          angular_prototypical_loss(values, model.loss_scale(), model.loss_bias());
      nn::Gradients grads = nn::Gradients::zeros_like(model.parameters());
      for (std::size_t k = 0; k < episode.size(); ++k) {
        for (std::size_t u = 0; u < episode[k].size(); ++u) {
          Var e = outputs[k][u];
          e.tape().backward(e, loss.grad_embeddings[k][u].transpose());
          e.tape().collect(grads);
        }
      }
      grads.values[scale_index](0, 0) += loss.grad_scale;
      grads.values[bias_index](0, 0) += loss.grad_bias;
      adam.step(model.parameters(), grads);
      auto& scale = model.parameters()[scale_index].value(0, 0);
      scale = std::max(scale, kMinLossScale);
      loss_sum += loss.loss;
      ++steps;
    }
    epochs_run = epoch;

    if (epoch % options.eval_every == 0 || epoch == options.max_epochs) {
      SpeakerEvalRecord record;
      record.epoch = epoch;
      record.train_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
      record.valid_eer = evaluate_eer(model, valid, valid_trials).eer;
      history.push_back(
          {{"epoch", epoch}, {"train_loss", record.train_loss}, {"valid_eer", record.valid_eer}});
      if (on_eval) on_eval(record);
      if (record.valid_eer < best_eer) {
        best_eer = record.valid_eer;
        best_epoch = epoch;
        best_params = model.parameters();
        stale_evals = 0;
      } else if (options.patience > 0 && ++stale_evals >= options.patience) {
        break;
      }
    }
  }

  model.parameters() = best_params;
  return model.to_checkpoint({{"seed", options.seed},
                              {"epochs_run", epochs_run},
                              {"best_epoch", best_epoch},
                              {"best_valid_eer", best_eer},
                              {"history", history},
                              {"trainer", to_json(options)}});
}

}  // namespace rhythmvec
