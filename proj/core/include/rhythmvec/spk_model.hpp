#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "rhythmvec/checkpoint.hpp"
#include "rhythmvec/corpus.hpp"
#include "rhythmvec/embedding.hpp"
#include "rhythmvec/features.hpp"
#include "rhythmvec/layers.hpp"
#include "rhythmvec/metrics.hpp"

namespace rhythmvec {

/// Speaker-identification network: bundle -> input projection (+ sinusoidal
/// positions) -> Transformer encoder -> attentive pooling -> two-layer
/// fully-connected block ending in the bottleneck embedding.
struct EncoderConfig {
  int n_layers = 2;
  int model_dim = 64;
  int n_heads = 8;
  /// Feed-forward width inside each encoder block and of the FC block.
  int hidden_dim = 300;
  BundleConfig bundle{2, 2};
  int embed_dim = 32;
  int attn_hidden = 64;
  bool positional_encoding = true;
  double dropout = 0.0;
  FeatureMode feature_mode = FeatureMode::full;
  bool normalize_durations = false;

  void validate() const;
};

nlohmann::json to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

/// Parameters of the temporal attention block.
struct AttentionParams {
  Eigen::MatrixXd W;     // d x M
  Eigen::RowVectorXd b;  // M
  Eigen::RowVectorXd mu; // M
};

struct PoolResult {
  Eigen::RowVectorXd output;
  Eigen::VectorXd weights;
};

/// h_t = tanh(x_t W + b); w = softmax_t(h_t mu^T); output = sum_t w_t x_t.
PoolResult attentive_pool(const FeatureSequence& hidden, const AttentionParams& params);

class SpeakerModel {
 public:
  SpeakerModel(EncoderConfig config, PhonemeInventory inventory, std::uint64_t init_seed,
               DurationNorm norm = {});

  static SpeakerModel from_checkpoint(const ModelCheckpoint& checkpoint);
  ModelCheckpoint to_checkpoint(nlohmann::json training_meta) const;

  const EncoderConfig& config() const noexcept { return config_; }
  const PhonemeInventory& inventory() const noexcept { return inventory_; }
  const DurationNorm& duration_norm() const noexcept { return norm_; }
  const nn::ParameterStore& parameters() const noexcept { return params_; }
  nn::ParameterStore& parameters() noexcept { return params_; }
  AttentionParams attention_params() const;

  /// Encoded and bundled model input for an utterance over inventory().
  FeatureSequence prepare(const Utterance& utterance) const;

  /// Encoder output (T x model_dim) for bundled features whose first
  /// valid_len rows are real and the rest padding.
  nn::Var encode(nn::Tape& tape, const FeatureSequence& bundled, Eigen::Index valid_len,
                 const nn::Dropout& drop = {}) const;
  /// Full network, 1 x embed_dim.
  nn::Var embed(nn::Tape& tape, const FeatureSequence& bundled, Eigen::Index valid_len,
                const nn::Dropout& drop = {}) const;

  Embedding embed(const Utterance& utterance) const;
  /// Right-pads every utterance to the longest one and masks the padding.
  std::vector<Embedding> embed_padded(std::span<const Utterance> utterances) const;

  /// Learnable scale and offset of the angular prototypical loss.
  double loss_scale() const;
  double loss_bias() const;

 private:
  SpeakerModel() = default;

  EncoderConfig config_;
  PhonemeInventory inventory_;
  DurationNorm norm_;
  nn::ParameterStore params_;
};

/// Encoder forward pass in inference mode over already-bundled features.
FeatureSequence encoder_forward(const SpeakerModel& model, const FeatureSequence& bundled);

/// Maps the utterance's phoneme indices from `inventory` onto the model's
/// inventory by symbol, then runs the full network.
Embedding extract_embedding(const ModelCheckpoint& checkpoint, const Utterance& utterance,
                            const PhonemeInventory& inventory);
Embedding extract_embedding(const SpeakerModel& model, const Utterance& utterance,
                            const PhonemeInventory& inventory);
/// One embedding per corpus utterance.
std::vector<Embedding> extract_embeddings(const SpeakerModel& model, const Corpus& corpus);

/// Arithmetic mean without renormalization.
Embedding average_embedding(std::span<const Embedding> embeddings);

inline constexpr double kMinLossScale = 1e-4;

struct AngularProtoResult {
  double loss = 0.0;
  /// Same layout as the batch.
  std::vector<std::vector<Eigen::VectorXd>> grad_embeddings;
  double grad_scale = 0.0;
  double grad_bias = 0.0;
};

/// batch[k][m] is utterance m of speaker k (N >= 2 speakers, M >= 2 each).
/// Prototype c_k averages utterances 0..M-2, query q_k is utterance M-1,
/// S_jk = max(scale, 1e-4) cos(q_j, c_k) + bias, and the loss is the mean
/// softmax cross-entropy of each row of S against its own speaker.
AngularProtoResult angular_prototypical_loss(
    const std::vector<std::vector<Eigen::VectorXd>>& batch, double scale, double bias);

struct SpeakerTrainerOptions {
  int batch_speakers = 8;
  int batch_utterances = 3;
  int max_epochs = 1000;
  int eval_every = 10;
  /// Evaluations without improvement before stopping; 0 disables.
  int patience = 10;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  double init_scale = 10.0;
  double init_bias = -5.0;
  std::size_t valid_same = 2700;
  std::size_t valid_diff = 2700;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const SpeakerTrainerOptions& options);
SpeakerTrainerOptions speaker_trainer_options_from_json(const nlohmann::json& j);

struct SpeakerEvalRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_eer = 0.0;
};

using SpeakerEvalCallback = std::function<void(const SpeakerEvalRecord&)>;

/// Episodic training with validation EER every eval_every epochs. Returns
/// the checkpoint with the lowest validation EER (earliest on ties).
ModelCheckpoint train_speaker_model(const Corpus& train, const Corpus& valid,
                                    const EncoderConfig& config,
                                    const SpeakerTrainerOptions& options,
                                    const SpeakerEvalCallback& on_eval = {});

/// Validation EER of a model on a trial set drawn from `corpus`.
EERResult evaluate_eer(const SpeakerModel& model, const Corpus& corpus, const TrialSet& trials);

}  // namespace rhythmvec
