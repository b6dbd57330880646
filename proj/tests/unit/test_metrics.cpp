#include <doctest.h>

#include <chrono>

#include "oracles.hpp"
#include "rhythmvec/error.hpp"
#include "rhythmvec/metrics.hpp"
#include "rhythmvec/rng.hpp"

using namespace rhythmvec;

TEST_CASE("cosine similarity") {
  Eigen::VectorXd v(3), a(2), b(2);
  v << 1, 2, 3;
  a << 1, 0;
  b << 0, 1;
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == 0.0);
  Eigen::VectorXd p(3), q(3);
  p << 1, 2, 3;
  q << 4, 5, 6;
  CHECK(std::abs(cosine_similarity(p, q) - oracle::naive_cosine({1, 2, 3}, {4, 5, 6})) < 1e-12);
  CHECK_THROWS_AS(cosine_similarity(Eigen::VectorXd::Zero(3), v), ValidationError);
  CHECK_THROWS_AS(cosine_similarity(a, v), ShapeError);
}

TEST_CASE("eer: perfect and inverted separation") {
  const std::vector<double> hi(4, 0.9), lo(4, 0.1);
  CHECK(compute_eer(hi, lo).eer == 0.0);
  CHECK(compute_eer(lo, hi).eer == 1.0);
  CHECK_THROWS_AS(compute_eer(std::vector<double>{}, lo), ValidationError);
}

TEST_CASE("eer: interleaved example matches the sweep oracle") {
  const std::vector<double> t{0.9, 0.7, 0.4, 0.2}, i{0.8, 0.5, 0.3, 0.1};
  const EERResult r = compute_eer(t, i);
  const oracle::Eer o = oracle::brute_force_eer(t, i);
  CHECK(std::abs(r.eer - o.eer) <= 1e-12);
  // at threshold 0.5 both rates are 2/4
  CHECK(r.eer == doctest::Approx(0.5));
  CHECK(r.threshold == 0.5);
  CHECK(r.n_target == 4);
  CHECK(r.n_impostor == 4);
}

TEST_CASE("eer equals the brute-force sweep on random instances") {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const auto nt = 1 + rng.below(10), ni = 1 + rng.below(10);
    std::vector<double> t, i;
    // coarse grid so ties are common
    const bool coarse = rng.uniform() < 0.5;
    auto draw = [&](double shift) {
      const double v = rng.normal() + shift;
      return coarse ? std::round(v * 4.0) / 4.0 : v;
    };
    for (std::uint64_t k = 0; k < nt; ++k) t.push_back(draw(0.7));
    for (std::uint64_t k = 0; k < ni; ++k) i.push_back(draw(0.0));
    const EERResult r = compute_eer(t, i);
    const oracle::Eer o = oracle::brute_force_eer(t, i);
    CHECK(std::abs(r.eer - o.eer) <= 1e-12);
    CHECK(r.eer >= 0.0);
    CHECK(r.eer <= 1.0);
  }
}

TEST_CASE("eer is invariant under strictly monotone score transforms") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> t, i, tt, ti;
    for (int k = 0; k < 12; ++k) t.push_back(rng.normal() + 0.5);
    for (int k = 0; k < 9; ++k) i.push_back(rng.normal());
    for (double v : t) tt.push_back(std::exp(3.0 * v) - 2.0);
    for (double v : i) ti.push_back(std::exp(3.0 * v) - 2.0);
    CHECK(compute_eer(t, i).eer == doctest::Approx(compute_eer(tt, ti).eer).epsilon(1e-12));
  }
}

TEST_CASE("eer over a trial set") {
  TrialSet trials;
  trials.pairs = {{0, 1, true}, {0, 2, false}, {1, 2, false}};
  const std::vector<double> scores{0.9, 0.1, 0.2};
  CHECK(compute_eer(trials, scores).eer == 0.0);
  CHECK_THROWS_AS(compute_eer(trials, std::vector<double>{0.1}), ShapeError);
}

TEST_CASE("eer on 500 instances runs well within budget") {
  Rng rng(99);
  const auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> t(10), i(10);
    for (auto& v : t) v = rng.normal();
    for (auto& v : i) v = rng.normal();
    (void)compute_eer(t, i);
  }
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 5.0);
}

TEST_CASE("duration rmse in milliseconds") {
  const std::vector<double> ref{0.1, 0.2, 0.05};
  CHECK(duration_rmse(ref, ref) == 0.0);
  std::vector<double> shifted = ref;
  for (double& v : shifted) v += 0.010;
  CHECK(duration_rmse(shifted, ref) == doctest::Approx(10.0));
  Rng rng(8);
  std::vector<double> a(30), b(30);
  double sum = 0;
  for (std::size_t k = 0; k < 30; ++k) {
    a[k] = rng.uniform();
    b[k] = rng.uniform();
    sum += (a[k] - b[k]) * (a[k] - b[k]);
  }
  CHECK(duration_rmse(a, b) == doctest::Approx(std::sqrt(sum / 30) * 1000).epsilon(1e-12));
  CHECK_THROWS_AS(duration_rmse(a, ref), ShapeError);
}

TEST_CASE("pearson and duration correlation") {
  const std::vector<double> x{0.1, 0.3, 0.2, 0.5};
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v + 2.0);
  CHECK(duration_correlation(x, x) == doctest::Approx(1.0));
  CHECK(duration_correlation(x, neg) == doctest::Approx(-1.0));
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(15), b(15);
    for (std::size_t k = 0; k < 15; ++k) {
      a[k] = rng.normal();
      b[k] = 0.5 * a[k] + rng.normal();
    }
    CHECK(std::abs(pearson(a, b) - oracle::covariance_pearson(a, b)) < 1e-12);
  }
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{0.1, 0.3, 0.2}), ValidationError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{2}), ValidationError);
}

TEST_CASE("speaking rate") {
  Utterance u{"s", "u", {}, {}};
  for (int k = 0; k < 10; ++k) {
    u.phonemes.push_back(0);
    u.durations.push_back(0.125);
  }
  CHECK(speaking_rate(u) == doctest::Approx(8.0));
  CHECK(speaking_rate({"s", "u", {0}, {0.5}}) == 2.0);
  const std::vector<double> mora{2.0};
  CHECK(speaking_rate(u, mora) == doctest::Approx(16.0));
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Utterance v{"s", "u", {}, {}};
    const auto n = 1 + rng.below(30);
    for (std::uint64_t k = 0; k < n; ++k) {
      v.phonemes.push_back(0);
      v.durations.push_back(0.01 + rng.uniform());
    }
    CHECK(speaking_rate(v) * v.total_duration() == doctest::Approx(static_cast<double>(n)));
  }
}

namespace {

std::vector<Embedding> to_embeddings(const Eigen::MatrixXd& rows) {
  std::vector<Embedding> out;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out.push_back({rows.row(i).transpose()});
  return out;
}

double sq_dist(const Point2& a, const Point2& b) {
  return (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]);
}

}  // namespace

TEST_CASE("projection preserves distances of planar data") {
  Rng rng(6);
  Eigen::MatrixXd basis(2, 32);
  for (Eigen::Index c = 0; c < 32; ++c) {
    basis(0, c) = rng.normal();
    basis(1, c) = rng.normal();
  }
  Eigen::MatrixXd coords(12, 2);
  for (Eigen::Index r = 0; r < 12; ++r) coords.row(r) << rng.normal(), rng.normal();
  const Eigen::MatrixXd data = (coords * basis).rowwise() + Eigen::RowVectorXd::Constant(32, 3.0);
  const auto pts = project_embeddings_2d(to_embeddings(data));
  for (Eigen::Index a = 0; a < 12; ++a) {
    for (Eigen::Index b = a + 1; b < 12; ++b) {
      const double d = (data.row(a) - data.row(b)).squaredNorm();
      CHECK(std::abs(sq_dist(pts[static_cast<std::size_t>(a)], pts[static_cast<std::size_t>(b)]) - d) <= 1e-9 * std::max(1.0, d));
    }
  }
}

TEST_CASE("projection of identical points is the origin") {
  const Eigen::MatrixXd data = Eigen::MatrixXd::Constant(5, 4, 2.5);
  for (const auto& p : project_embeddings_2d(to_embeddings(data))) {
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 0.0);
  }
  CHECK_THROWS_AS(project_embeddings_2d(to_embeddings(data.topRows(2))), ValidationError);
}

TEST_CASE("projection residual equals the discarded covariance eigenvalues") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd data(20, 6);
    for (Eigen::Index r = 0; r < 20; ++r)
      for (Eigen::Index c = 0; c < 6; ++c) data(r, c) = rng.normal() * static_cast<double>(c + 1);
    const auto pts = project_embeddings_2d(to_embeddings(data));
    const Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
    double kept = 0;
    for (const auto& p : pts) kept += p[0] * p[0] + p[1] * p[1];
    const double residual = centered.squaredNorm() - kept;
    CHECK(residual == doctest::Approx(oracle::residual_variance(data)).epsilon(1e-9));
    // deterministic sign convention
    CHECK(project_embeddings_2d(to_embeddings(data)) == pts);
  }
}

TEST_CASE("relation report counts same-script pairs") {
  const PhonemeInventory inv({"a", "b", "c"});
  std::vector<Utterance> utts;
  Rng rng(10);
  for (int s = 0; s < 3; ++s) {
    for (int u = 0; u < 4; ++u) {
      Utterance x{"s" + std::to_string(s), "s" + std::to_string(s) + "_" + std::to_string(u),
                  {0, 1, 2, 1},
                  {}};
      for (int t = 0; t < 4; ++t) x.durations.push_back(0.05 + 0.1 * rng.uniform());
      utts.push_back(x);
    }
  }
  utts.push_back({"s0", "odd", {2, 2}, {0.1, 0.2}});
  const Corpus corpus(inv, utts);
  std::vector<Embedding> embs;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Eigen::VectorXd v(3);
    v << rng.normal(), rng.normal(), rng.normal();
    embs.push_back({v});
  }
  const ScatterReport all = rhythm_relation_report(corpus, embs);
  CHECK(all.points.size() == 66);  // C(12, 2)
  REQUIRE(all.mic.has_value());
  CHECK(*all.mic >= 0.0);
  CHECK(*all.mic <= 1.0);
  CHECK(rhythm_relation_report(corpus, embs, {true, false}).points.size() == 18);
  CHECK(rhythm_relation_report(corpus, embs, {false, true}).points.size() == 48);
  const ScatterReport again = rhythm_relation_report(corpus, embs);
  CHECK(again.points == all.points);
  CHECK(again.pearson_r == all.pearson_r);
  for (std::size_t k = 0; k < all.points.size(); ++k) {
    const auto [a, b] = all.pairs[k];
    CHECK(corpus.utterance(a).phonemes == corpus.utterance(b).phonemes);
    CHECK(all.points[k][1] == doctest::Approx(
                                  pearson(corpus.utterance(a).durations, corpus.utterance(b).durations)));
  }
}

TEST_CASE("relation report needs a shared script") {
  const PhonemeInventory inv({"a", "b"});
  const Corpus corpus(inv, {{"s", "u1", {0, 1}, {0.1, 0.2}}, {"t", "u2", {1, 0}, {0.1, 0.2}}});
  const std::vector<Embedding> embs{{Eigen::VectorXd::Ones(2)}, {Eigen::VectorXd::Ones(2)}};
  CHECK_THROWS_AS(rhythm_relation_report(corpus, embs), ValidationError);
}
