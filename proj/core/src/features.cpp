#include "rhythmvec/features.hpp"

#include <cmath>

#include "rhythmvec/error.hpp"

namespace rhythmvec {

std::string to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::full:
      return "full";
    case FeatureMode::phonemes_only:
      return "phonemes_only";
    case FeatureMode::duration_only:
      return "duration_only";
  }
  return "full";
}

FeatureMode feature_mode_from_string(const std::string& name) {
  if (name == "full") return FeatureMode::full;
  if (name == "phonemes_only") return FeatureMode::phonemes_only;
  if (name == "duration_only") return FeatureMode::duration_only;
  throw ValidationError("unknown feature mode '" + name + "'");
}

DurationNorm fit_duration_norm(const Corpus& corpus) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const Utterance& u : corpus.utterances()) {
    for (double d : u.durations) {
      sum += d;
      sum_sq += d * d;
      ++n;
    }
  }
  if (n == 0) throw ValidationError("cannot fit duration normalization on an empty corpus");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
  return {mean, var > 0.0 ? std::sqrt(var) : 1.0};
}

Eigen::Index feature_dim(FeatureMode mode, std::size_t k) {
  const auto kk = static_cast<Eigen::Index>(k);
  switch (mode) {
    case FeatureMode::full:
      return kk + 1;
    case FeatureMode::phonemes_only:
      return kk;
    case FeatureMode::duration_only:
      return 1;
  }
  return kk + 1;
}

FeatureSequence encode_features(const Utterance& utterance, const PhonemeInventory& inventory,
                                FeatureMode mode, const DurationNorm& norm) {
  validate_utterance(utterance, inventory.size());
  const auto t_len = static_cast<Eigen::Index>(utterance.length());
  const auto k = static_cast<Eigen::Index>(inventory.size());
  FeatureSequence out{Eigen::MatrixXd::Zero(t_len, feature_dim(mode, inventory.size()))};
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const auto p = static_cast<Eigen::Index>(utterance.phonemes[static_cast<std::size_t>(t)]);
    const double d = norm.apply(utterance.durations[static_cast<std::size_t>(t)]);
    switch (mode) {
      case FeatureMode::full:
        out.rows(t, p) = 1.0;
        out.rows(t, k) = d;
        break;
      case FeatureMode::phonemes_only:
        out.rows(t, p) = 1.0;
        break;
      case FeatureMode::duration_only:
        out.rows(t, 0) = d;
        break;
    }
  }
  return out;
}

FeatureSequence bundle(const FeatureSequence& features, const BundleConfig& config) {
  if (config.n_pre < 0 || config.n_follow < 0) {
    throw ValidationError("bundle: n_pre and n_follow must be non-negative");
  }
  if (features.length() == 0) throw ValidationError("bundle: empty feature sequence");
  const Eigen::Index t_len = features.length();
  const Eigen::Index d = features.dim();
  FeatureSequence out{Eigen::MatrixXd::Zero(t_len, d * config.width())};
  for (int offset = -config.n_pre; offset <= config.n_follow; ++offset) {
    const Eigen::Index block = offset + config.n_pre;
    const Eigen::Index first = std::max<Eigen::Index>(0, -offset);
    const Eigen::Index last = std::min<Eigen::Index>(t_len, t_len - offset);
    if (last <= first) continue;
    out.rows.block(first, block * d, last - first, d) =
        features.rows.middleRows(first + offset, last - first);
  }
  return out;
}

}  // namespace rhythmvec
