#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rhythmvec/checkpoint.hpp"
#include "rhythmvec/corpus.hpp"
#include "rhythmvec/dur_model.hpp"
#include "rhythmvec/metrics.hpp"
#include "rhythmvec/spk_model.hpp"

namespace rhythmvec {

struct DurationProtocol {
  /// Utterances averaged into each speaker's conditioning embedding.
  std::size_t enroll_utterances = 5;
  /// Maximum held-out utterances scored per test speaker.
  std::size_t eval_utterances = 10;
  /// Utterances per training speaker reserved for early stopping.
  std::size_t holdout_utterances = 5;
};

struct SweepConfig {
  std::vector<FeatureMode> ablations;
  std::vector<std::size_t> train_speakers;
  std::vector<std::uint64_t> seeds;
};

/// Everything one pipeline run needs. Serializes to a single JSON document.
struct ExperimentConfig {
  /// Either {"path": "..."} or {"synthetic": {...generator fields...}}.
  nlohmann::json corpus;
  std::size_t train_speakers = 40;
  std::size_t valid_speakers = 8;
  std::size_t test_speakers = 8;
  EncoderConfig encoder;
  SpeakerTrainerOptions speaker_trainer;
  DurModelConfig duration_model;
  DurTrainerOptions duration_trainer;
  std::size_t test_same = 2000;
  std::size_t test_diff = 2000;
  DurationProtocol duration;
  SweepConfig sweep;
  RelationOptions relation;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// "ablation" is accepted as an alias of encoder.feature_mode; both set and
/// different is an error.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// 64-bit FNV-1a of the canonical JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

Corpus load_experiment_corpus(const ExperimentConfig& config);
CorpusSplit split_experiment_corpus(const ExperimentConfig& config, const Corpus& corpus);
/// Valid and test speakers together: the speakers the speaker model never trained on.
Corpus held_out_corpus(const CorpusSplit& split);

/// Fixed test trials shared by every run of one config.
TrialSet experiment_test_trials(const ExperimentConfig& config, const Corpus& test);

// ---------------------------------------------------------------------------
// Speaker identification

struct SpeakerRunResult {
  FeatureMode mode = FeatureMode::full;
  std::size_t n_train_speakers = 0;
  std::uint64_t seed = 0;
  double test_eer = 0.0;
  double best_valid_eer = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  ModelCheckpoint checkpoint;
};

/// Trains on the first `n_train_speakers` of a seeded speaker order (0 = all)
/// and scores the shared test trials.
SpeakerRunResult run_speaker_training(const ExperimentConfig& config, const CorpusSplit& split,
                                      FeatureMode mode, std::size_t n_train_speakers,
                                      std::uint64_t seed, const SpeakerEvalCallback& on_eval = {});

struct SpeakerCountSummary {
  std::size_t n_train_speakers = 0;
  std::vector<double> test_eers;
  double mean_test_eer = 0.0;
};

struct SpeakerExperimentResult {
  SpeakerRunResult main;
  std::vector<SpeakerRunResult> ablations;
  std::vector<SpeakerRunResult> count_runs;
  std::vector<SpeakerCountSummary> count_summary;
};

/// Writes <out>/speaker/{checkpoint.rvec, report.json}, one report per
/// ablation mode and a speaker-count sweep summary when configured.
SpeakerExperimentResult run_speaker_experiment(const ExperimentConfig& config,
                                               const SpeakerEvalCallback& on_eval = {});

// ---------------------------------------------------------------------------
// Duration prediction

struct SpeakerDurationRow {
  std::string speaker;
  double rmse_ms = 0.0;
  double corr = 0.0;
  double rate_pred = 0.0;
  double rate_ref = 0.0;
  std::size_t n_utterances = 0;
};

struct BoxStats {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Linear-interpolated quartiles.
BoxStats box_stats(std::vector<double> values);

/// One-sided binomial tail P(X >= wins) for X ~ Bin(n, 1/2).
double sign_test_p(std::size_t wins, std::size_t n);

struct DurationEvalResult {
  std::vector<SpeakerDurationRow> correct;
  std::vector<SpeakerDurationRow> shuffled;
  /// Speakers whose RMSE is lower with their own embedding.
  std::size_t wins = 0;
  double sign_p = 1.0;
  double rate_pearson = 0.0;
  BoxStats rate_pred_box;
  BoxStats rate_ref_box;
};

/// Utterance order per speaker used to pick enrollment and evaluation sets.
std::vector<std::size_t> speaker_utterance_order(const Corpus& corpus, const std::string& speaker,
                                                 std::uint64_t seed);

/// Trains on the speaker model's training speakers. Each training utterance
/// is conditioned on the average embedding of a random enrollment-sized
/// subset of its speaker's training utterances. Writes <out>/duration/{checkpoint.rvec, train_report.json}.
ModelCheckpoint run_duration_training(const ExperimentConfig& config,
                                      const ModelCheckpoint& speaker_checkpoint,
                                      const std::function<void(const DurEvalRecord&)>& on_eval = {});

/// Scores held-out speakers with their own and with deranged embeddings.
/// Writes per_speaker.csv, per_speaker_shuffled.csv, rate_box.json and report.json.
DurationEvalResult run_duration_evaluation(const ExperimentConfig& config,
                                           const ModelCheckpoint& speaker_checkpoint,
                                           const ModelCheckpoint& duration_checkpoint);

struct DurationExperimentResult {
  ModelCheckpoint checkpoint;
  DurationEvalResult eval;
};

DurationExperimentResult run_duration_experiment(const ExperimentConfig& config,
                                                 const ModelCheckpoint& speaker_checkpoint);

// ---------------------------------------------------------------------------
// Embedding space

struct SpaceAnalysisResult {
  std::vector<std::string> utterance_ids;
  std::vector<std::string> speaker_ids;
  std::vector<Point2> projection;
  ScatterReport trained;
  /// Same analysis with a freshly initialized network.
  ScatterReport untrained;
};

/// Runs on held-out speakers. Writes projection.csv, relation.csv,
/// relation_untrained.csv and report.json under <out>/space.
SpaceAnalysisResult run_space_analysis(const ExperimentConfig& config,
                                       const ModelCheckpoint& speaker_checkpoint);

// ---------------------------------------------------------------------------
// Output helpers

/// {"metric", "value", "n", "config_hash", "seed"} plus `extra`.
nlohmann::json make_report(const ExperimentConfig& config, const std::string& metric,
                           double value, std::size_t n, nlohmann::json extra = nlohmann::json::object());
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace rhythmvec
