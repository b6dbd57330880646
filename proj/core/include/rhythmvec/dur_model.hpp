#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rhythmvec/checkpoint.hpp"
#include "rhythmvec/corpus.hpp"
#include "rhythmvec/embedding.hpp"
#include "rhythmvec/layers.hpp"

namespace rhythmvec {

/// Divisor applied to the utterance length in the last linguistic column.
inline constexpr double kLengthScale = 100.0;
/// Lower bound on any predicted duration, seconds.
inline constexpr double kMinDuration = 0.001;

/// Per-phoneme linguistic context, T x (3K + 2).
struct LinguisticSequence {
  Eigen::MatrixXd rows;

  Eigen::Index length() const noexcept { return rows.rows(); }
  Eigen::Index dim() const noexcept { return rows.cols(); }
};

inline Eigen::Index linguistic_dim(std::size_t k) { return 3 * static_cast<Eigen::Index>(k) + 2; }

/// Row t = one-hot(p_t) ++ one-hot(p_{t-1}) ++ one-hot(p_{t+1}) ++ [t/T, T/100],
/// with t counted from 1 and missing neighbours left as zeros.
LinguisticSequence build_linguistic_vector(std::span<const std::size_t> phonemes,
                                           const PhonemeInventory& inventory);
LinguisticSequence build_linguistic_vector(const Utterance& utterance,
                                           const PhonemeInventory& inventory);

struct DurModelConfig {
  int n_blocks = 6;
  int model_dim = 64;
  int n_heads = 8;
  int ffn_dim = 256;
  int embed_dim = 32;
  /// Regress log-seconds instead of seconds.
  bool log_target = false;
  double dropout = 0.0;

  void validate() const;
};

nlohmann::json to_json(const DurModelConfig& config);
DurModelConfig dur_model_config_from_json(const nlohmann::json& j);

/// Transformer regressor from (linguistic row ++ speaker embedding) to a
/// per-phoneme duration.
class DurationModel {
 public:
  DurationModel(DurModelConfig config, PhonemeInventory inventory, std::uint64_t init_seed);

  static DurationModel from_checkpoint(const ModelCheckpoint& checkpoint);
  ModelCheckpoint to_checkpoint(nlohmann::json training_meta) const;

  const DurModelConfig& config() const noexcept { return config_; }
  const PhonemeInventory& inventory() const noexcept { return inventory_; }
  const nn::ParameterStore& parameters() const noexcept { return params_; }
  nn::ParameterStore& parameters() noexcept { return params_; }

  /// Model input: linguistic rows with the embedding appended to each row.
  Eigen::MatrixXd prepare(std::span<const std::size_t> phonemes, const Embedding& embedding) const;
  /// Raw regression output, T x 1, in the target space.
  nn::Var forward(nn::Tape& tape, const Eigen::MatrixXd& input,
                  const nn::Dropout& drop = {}) const;
  /// Durations in seconds, clamped to >= 1 ms.
  std::vector<double> predict(std::span<const std::size_t> phonemes,
                              const Embedding& embedding) const;

 private:
  DurationModel() = default;

  DurModelConfig config_;
  PhonemeInventory inventory_;
  nn::ParameterStore params_;
};

std::vector<double> predict_durations(const ModelCheckpoint& checkpoint,
                                      std::span<const std::size_t> phonemes,
                                      const Embedding& speaker_embedding);

struct DurTrainerOptions {
  int max_epochs = 1000;
  int batch_utterances = 16;
  int eval_every = 1;
  /// Evaluations without improvement before stopping; 0 disables.
  int patience = 10;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const DurTrainerOptions& options);
DurTrainerOptions dur_trainer_options_from_json(const nlohmann::json& j);

using SpeakerEmbeddings = std::map<std::string, Embedding>;

struct DurEvalRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double valid_mse = 0.0;
};

/// Minimizes per-phoneme MSE and returns the checkpoint with the lowest
/// validation MSE (seconds^2). Every speaker of `train` and `valid` needs an
/// entry in `embeddings`.
ModelCheckpoint train_duration_model(const Corpus& train, const SpeakerEmbeddings& embeddings,
                                     const Corpus& valid, const DurModelConfig& config,
                                     const DurTrainerOptions& options,
                                     const std::function<void(const DurEvalRecord&)>& on_eval = {});

/// As above with a separate conditioning embedding for every training
/// utterance, in corpus order. Validation uses one embedding per speaker.
ModelCheckpoint train_duration_model(const Corpus& train,
                                     std::span<const Embedding> utterance_embeddings,
                                     const Corpus& valid, const SpeakerEmbeddings& valid_embeddings,
                                     const DurModelConfig& config,
                                     const DurTrainerOptions& options,
                                     const std::function<void(const DurEvalRecord&)>& on_eval = {});

/// Mean squared error in seconds^2 over all phonemes of `corpus`.
double duration_mse(const DurationModel& model, const Corpus& corpus,
                    const SpeakerEmbeddings& embeddings);

}  // namespace rhythmvec
