#include "rhythmvec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "rhythmvec/error.hpp"

namespace rhythmvec {

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: dimension mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine_similarity: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

EERResult compute_eer(std::span<const double> target_scores,
                      std::span<const double> impostor_scores) {
  if (target_scores.empty() || impostor_scores.empty()) {
    throw ValidationError("compute_eer: need at least one target and one impostor score");
  }
  std::vector<double> targets(target_scores.begin(), target_scores.end());
  std::vector<double> impostors(impostor_scores.begin(), impostor_scores.end());
  std::sort(targets.begin(), targets.end());
  std::sort(impostors.begin(), impostors.end());

  std::vector<double> thresholds;
  thresholds.reserve(targets.size() + impostors.size() + 1);
  std::merge(targets.begin(), targets.end(), impostors.begin(), impostors.end(),
             std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const double nt = static_cast<double>(targets.size());
  const double ni = static_cast<double>(impostors.size());
  auto operating_point = [&](double threshold) {
    const auto below_t = std::lower_bound(targets.begin(), targets.end(), threshold) - targets.begin();
    const auto below_i =
        std::lower_bound(impostors.begin(), impostors.end(), threshold) - impostors.begin();
    const double far = (ni - static_cast<double>(below_i)) / ni;
    const double frr = static_cast<double>(below_t) / nt;
    return std::pair{far, frr};
  };

  EERResult result;
  result.n_target = targets.size();
  result.n_impostor = impostors.size();
  auto [prev_far, prev_frr] = operating_point(thresholds.front());
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const auto [far, frr] = operating_point(thresholds[i]);
    const double diff = far - frr;
    if (diff > 0.0) {
      prev_far = far;
      prev_frr = frr;
      continue;
    }
    if (diff == 0.0 || i == 0) {
      result.eer = far;
      result.threshold = thresholds[i];
      return result;
    }
    const double prev_diff = prev_far - prev_frr;
    const double t = prev_diff / (prev_diff - diff);
    result.eer = prev_far + t * (far - prev_far);
    const double lo = thresholds[i - 1];
    const double hi = thresholds[i];
    result.threshold = std::isfinite(hi) ? lo + t * (hi - lo) : lo;
    return result;
  }
  // Unreachable: at +inf FAR = 0 and FRR = 1.
  result.eer = 0.5;
  return result;
}

EERResult compute_eer(const TrialSet& trials, std::span<const double> scores) {
  if (scores.size() != trials.pairs.size()) {
    throw ShapeError("compute_eer: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(trials.pairs.size()) + " trials");
  }
  std::vector<double> targets, impostors;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (trials.pairs[i].same_speaker ? targets : impostors).push_back(scores[i]);
  }
  return compute_eer(targets, impostors);
}

double duration_rmse(std::span<const double> predicted, std::span<const double> reference) {
  if (predicted.size() != reference.size()) {
    throw ShapeError("duration_rmse: length mismatch");
  }
  if (predicted.empty()) throw ValidationError("duration_rmse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double diff = predicted[i] - reference[i];
    sum += diff * diff;
  }
  return std::sqrt(sum / static_cast<double>(predicted.size())) * 1000.0;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("pearson: length mismatch");
  if (xs.size() < 2) throw ValidationError("pearson: need at least 2 points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double duration_correlation(std::span<const double> a, std::span<const double> b) {
  return pearson(a, b);
}

double speaking_rate(const Utterance& utterance, std::span<const double> units_per_symbol) {
  const double total = utterance.total_duration();
  if (!(total > 0.0)) throw ValidationError("speaking_rate: total duration must be positive");
  if (units_per_symbol.empty()) return static_cast<double>(utterance.length()) / total;
  double units = 0.0;
  for (std::size_t p : utterance.phonemes) {
    if (p >= units_per_symbol.size()) {
      throw ValidationError("speaking_rate: unit table does not cover phoneme " +
                            std::to_string(p));
    }
    units += units_per_symbol[p];
  }
  return units / total;
}

std::vector<Point2> project_embeddings_2d(std::span<const Embedding> embeddings) {
  if (embeddings.size() < 3) {
    throw ValidationError("project_embeddings_2d: need at least 3 embeddings");
  }
  const Eigen::Index dim = embeddings.front().dim();
  const auto n = static_cast<Eigen::Index>(embeddings.size());
  Eigen::MatrixXd data(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = embeddings[static_cast<std::size_t>(i)];
    if (e.dim() != dim) throw ShapeError("project_embeddings_2d: mixed embedding dimensions");
    data.row(i) = e.values.transpose();
  }
  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;

  std::vector<Point2> points(embeddings.size(), Point2{0.0, 0.0});
  if (data.squaredNorm() == 0.0) return points;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinV);
  Eigen::MatrixXd directions = svd.matrixV().leftCols(std::min<Eigen::Index>(2, svd.matrixV().cols()));
  for (Eigen::Index c = 0; c < directions.cols(); ++c) {
    Eigen::Index arg = 0;
    directions.col(c).cwiseAbs().maxCoeff(&arg);
    if (directions(arg, c) < 0.0) directions.col(c) *= -1.0;
  }
  const Eigen::MatrixXd projected = data * directions;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < projected.cols(); ++c) {
      points[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = projected(i, c);
    }
  }
  return points;
}

ScatterReport rhythm_relation_report(const Corpus& corpus, std::span<const Embedding> embeddings,
                                     const RelationOptions& options) {
  if (embeddings.size() != corpus.size()) {
    throw ShapeError("rhythm_relation_report: one embedding per utterance required");
  }
  // Groups of identical phoneme strings, in order of first appearance.
  std::map<std::vector<std::size_t>, std::size_t> group_of;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto [it, inserted] = group_of.emplace(corpus.utterance(i).phonemes, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }

  ScatterReport report;
  for (const auto& group : groups) {
    for (std::size_t a = 0; a < group.size(); ++a) {
      for (std::size_t b = a + 1; b < group.size(); ++b) {
        const Utterance& ua = corpus.utterance(group[a]);
        const Utterance& ub = corpus.utterance(group[b]);
        const bool same = ua.speaker_id == ub.speaker_id;
        if ((same && !options.within_speaker) || (!same && !options.cross_speaker)) continue;
        if (ua.length() < 2) {
          ++report.skipped;
          continue;
        }
        double corr = 0.0;
        try {
          corr = duration_correlation(ua.durations, ub.durations);
        } catch (const ValidationError&) {
          ++report.skipped;
          continue;
        }
        const double cos = cosine_similarity(embeddings[group[a]].values,
                                             embeddings[group[b]].values);
        report.points.push_back({cos, corr});
        report.pairs.push_back({group[a], group[b]});
      }
    }
  }
  if (report.points.empty()) {
    throw ValidationError("rhythm_relation_report: no utterance pairs share a phoneme sequence");
  }
  std::vector<double> xs, ys;
  xs.reserve(report.points.size());
  ys.reserve(report.points.size());
  for (const auto& p : report.points) {
    xs.push_back(p[0]);
    ys.push_back(p[1]);
  }
  report.pearson_r = pearson(xs, ys);
  if (xs.size() >= 10) report.mic = mic(xs, ys);
  return report;
}

}  // namespace rhythmvec
