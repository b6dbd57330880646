#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rhythmvec/corpus.hpp"
#include "rhythmvec/embedding.hpp"

namespace rhythmvec {

/// Cosine of the angle between two vectors. Throws on a zero vector or a
/// dimension mismatch.
double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b);

struct EERResult {
  double eer = 0.0;
  double threshold = 0.0;
  std::size_t n_target = 0;
  std::size_t n_impostor = 0;
};

/// Equal error rate of a verification score list.
///
/// FAR(t) is the fraction of impostor scores >= t and FRR(t) the fraction of
/// target scores < t, evaluated at every distinct score and at +inf. The
/// EER is read at the first sign change of FAR - FRR, linearly interpolated
/// between the two neighbouring operating points.
EERResult compute_eer(std::span<const double> target_scores,
                      std::span<const double> impostor_scores);

/// Scores are parallel to trials.pairs; higher means "same speaker".
EERResult compute_eer(const TrialSet& trials, std::span<const double> scores);

/// Root mean square difference in milliseconds (inputs in seconds).
double duration_rmse(std::span<const double> predicted, std::span<const double> reference);

/// Pearson correlation. Requires equal lengths >= 2 and non-zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation of two duration sequences of the same phoneme string.
double duration_correlation(std::span<const double> a, std::span<const double> b);

/// Phonemes (or weighted units) per second. `units_per_symbol`, when
/// non-empty, maps each inventory index to a unit count, e.g. morae.
double speaking_rate(const Utterance& utterance, std::span<const double> units_per_symbol = {});

struct MicOptions {
  /// Grids satisfy x_bins * y_bins <= max(4, n^alpha).
  double alpha = 0.6;
  /// An optimized axis is reduced to at most clump_factor * x_bins superclumps.
  double clump_factor = 15.0;
};

/// Maximal information coefficient in [0, 1]. Requires n >= 10.
/// One axis is equipartitioned and the other optimized by dynamic
/// programming, in both orientations. Constant input yields 0.
double mic(std::span<const double> xs, std::span<const double> ys, const MicOptions& options = {});

using Point2 = std::array<double, 2>;

/// Centered projection onto the top two principal directions. The sign of
/// each direction makes its largest-magnitude loading positive.
std::vector<Point2> project_embeddings_2d(std::span<const Embedding> embeddings);

struct ScatterReport {
  std::vector<Point2> points;
  /// Utterance indices of each point.
  std::vector<std::array<std::size_t, 2>> pairs;
  double pearson_r = 0.0;
  /// Absent when fewer than 10 points.
  std::optional<double> mic;
  /// Eligible pairs dropped because a duration sequence had zero variance.
  std::size_t skipped = 0;
};

struct RelationOptions {
  bool within_speaker = true;
  bool cross_speaker = true;
};

/// One point per pair of utterances with identical phoneme sequences:
/// x = cosine similarity of their embeddings, y = duration correlation.
/// `embeddings` is parallel to corpus.utterances().
ScatterReport rhythm_relation_report(const Corpus& corpus, std::span<const Embedding> embeddings,
                                     const RelationOptions& options = {});

}  // namespace rhythmvec
