#pragma once

#include <Eigen/Dense>
#include <string>

#include "rhythmvec/corpus.hpp"

namespace rhythmvec {

/// T rows of D-dimensional per-phoneme features.
struct FeatureSequence {
  Eigen::MatrixXd rows;

  Eigen::Index length() const noexcept { return rows.rows(); }
  Eigen::Index dim() const noexcept { return rows.cols(); }
};

/// Which parts of the (phoneme, duration) pair enter the features.
enum class FeatureMode { full, phonemes_only, duration_only };

std::string to_string(FeatureMode mode);
/// Accepts "full", "phonemes_only", "duration_only".
FeatureMode feature_mode_from_string(const std::string& name);

/// Optional z-scoring of the duration column. Identity by default.
struct DurationNorm {
  double mean = 0.0;
  double scale = 1.0;

  double apply(double seconds) const { return (seconds - mean) / scale; }
};

/// Corpus-level mean and standard deviation of phoneme durations.
DurationNorm fit_duration_norm(const Corpus& corpus);

/// Number of feature columns for an inventory of size k.
Eigen::Index feature_dim(FeatureMode mode, std::size_t k);

/// Row t = one-hot(phoneme_t) ++ [duration_t], restricted by `mode`.
FeatureSequence encode_features(const Utterance& utterance, const PhonemeInventory& inventory,
                                FeatureMode mode = FeatureMode::full,
                                const DurationNorm& norm = {});

struct BundleConfig {
  int n_pre = 2;
  int n_follow = 2;

  int width() const noexcept { return n_pre + n_follow + 1; }
};

/// Splices each row with its n_pre predecessors and n_follow successors.
/// Positions outside the sequence contribute zero vectors.
FeatureSequence bundle(const FeatureSequence& features, const BundleConfig& config);

}  // namespace rhythmvec
