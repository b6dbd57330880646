#include <doctest.h>

#include "oracles.hpp"
#include "rhythmvec/error.hpp"
#include "rhythmvec/metrics.hpp"
#include "rhythmvec/rng.hpp"
#include "rhythmvec/spk_model.hpp"

using namespace rhythmvec;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

AttentionParams random_attention(Rng& rng, Eigen::Index d, Eigen::Index m) {
  return {random_matrix(rng, d, m), random_matrix(rng, 1, m), random_matrix(rng, 1, m)};
}

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.n_layers = 1;
  c.model_dim = 16;
  c.n_heads = 2;
  c.hidden_dim = 24;
  c.attn_hidden = 8;
  c.embed_dim = 6;
  c.bundle = {1, 1};
  return c;
}

Utterance random_utterance(Rng& rng, std::size_t k, std::size_t len, std::string id = "u") {
  Utterance u{"s", std::move(id), {}, {}};
  for (std::size_t t = 0; t < len; ++t) {
    u.phonemes.push_back(static_cast<std::size_t>(rng.below(k)));
    u.durations.push_back(0.03 + 0.1 * rng.uniform());
  }
  return u;
}

using Batch = std::vector<std::vector<Eigen::VectorXd>>;

Batch random_batch(Rng& rng, std::size_t n, std::size_t m, Eigen::Index dim) {
  Batch b(n, std::vector<Eigen::VectorXd>(m));
  for (auto& group : b)
    for (auto& e : group) e = random_matrix(rng, dim, 1);
  return b;
}

}  // namespace

TEST_CASE("attentive pooling hand example") {
  AttentionParams p;
  p.W = Eigen::MatrixXd(2, 1);
  p.W << 1, 0;
  p.b = Eigen::RowVectorXd::Zero(1);
  p.mu = Eigen::RowVectorXd::Ones(1);
  FeatureSequence x{Eigen::MatrixXd::Identity(2, 2)};
  const PoolResult r = attentive_pool(x, p);
  const double e = std::exp(std::tanh(1.0));
  CHECK(r.weights(0) == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
  CHECK(r.weights(0) == doctest::Approx(0.6817).epsilon(1e-4));
  CHECK(r.weights(1) == doctest::Approx(0.3183).epsilon(1e-4));
  CHECK(r.output(0) == doctest::Approx(r.weights(0)));
  CHECK(r.output(1) == doctest::Approx(r.weights(1)));
}

TEST_CASE("attentive pooling of one frame or identical frames returns the frame") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const AttentionParams p = random_attention(rng, 5, 3);
    const Eigen::MatrixXd frame = random_matrix(rng, 1, 5);
    CHECK(attentive_pool({frame}, p).output == frame);
    const Eigen::MatrixXd same = frame.replicate(7, 1);
    CHECK((attentive_pool({same}, p).output - frame).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("attentive pooling weights form a distribution") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto t_len = static_cast<Eigen::Index>(1 + rng.below(30));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    const AttentionParams p = random_attention(rng, d, 1 + static_cast<Eigen::Index>(rng.below(6)));
    const PoolResult r = attentive_pool({3.0 * random_matrix(rng, t_len, d)}, p);
    REQUIRE(r.weights.size() == t_len);
    CHECK(r.weights.minCoeff() >= 0.0);
    CHECK(std::abs(r.weights.sum() - 1.0) <= 1e-6);
  }
}

TEST_CASE("attentive pooling rejects mismatched parameters") {
  Rng rng(3);
  const AttentionParams p = random_attention(rng, 4, 2);
  CHECK_THROWS_AS(attentive_pool({random_matrix(rng, 3, 5)}, p), ShapeError);
  CHECK_THROWS_AS(attentive_pool({Eigen::MatrixXd(0, 4)}, p), ValidationError);
}

TEST_CASE("angular prototypical loss hand example") {
  const Eigen::Vector2d e0(1, 0), e1(0, 1);
  const Batch b{{e0, e0}, {e1, e1}};
  const AngularProtoResult r = angular_prototypical_loss(b, 1.0, 0.0);
  CHECK(r.loss == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("angular prototypical loss is invariant to speaker order and scale") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Batch b = random_batch(rng, 4, 3, 5);
    const double base = angular_prototypical_loss(b, 7.0, -2.0).loss;
    Batch scaled = b;
    for (auto& g : scaled)
      for (auto& e : g) e *= 3.0;
    CHECK(std::abs(angular_prototypical_loss(scaled, 7.0, -2.0).loss - base) <= 1e-12);
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
    CHECK(std::abs(angular_prototypical_loss(b, 7.0, -2.0).loss - base) <= 1e-12);
  }
}

TEST_CASE("angular prototypical loss gradients match finite differences") {
  Rng rng(5);
  for (int config = 0; config < 20; ++config) {
    const std::size_t n = 2 + rng.below(3);
    const std::size_t m = 2 + rng.below(3);
    const auto dim = static_cast<Eigen::Index>(2 + rng.below(5));
    const Batch b = random_batch(rng, n, m, dim);
    const double scale = 1.0 + 9.0 * rng.uniform();
    const double bias = rng.normal();
    const AngularProtoResult r = angular_prototypical_loss(b, scale, bias);
    INFO("config " << config);

    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t u = 0; u < m; ++u) {
        auto f = [&](const Eigen::MatrixXd& v) {
          Batch p = b;
          p[k][u] = v;
          return angular_prototypical_loss(p, scale, bias).loss;
        };
        const Eigen::MatrixXd numeric = oracle::numeric_gradient(f, b[k][u]);
        CHECK(oracle::relative_error(r.grad_embeddings[k][u], numeric) <= 1e-4);
      }
    }
    auto fs = [&](const Eigen::MatrixXd& v) { return angular_prototypical_loss(b, v(0, 0), bias).loss; };
    auto fb = [&](const Eigen::MatrixXd& v) { return angular_prototypical_loss(b, scale, v(0, 0)).loss; };
    const Eigen::MatrixXd s0 = Eigen::MatrixXd::Constant(1, 1, scale);
    const Eigen::MatrixXd b0 = Eigen::MatrixXd::Constant(1, 1, bias);
    CHECK(oracle::relative_error(Eigen::MatrixXd::Constant(1, 1, r.grad_scale),
                                 oracle::numeric_gradient(fs, s0)) <= 1e-4);
    // a shared offset on every logit leaves each row softmax unchanged
    CHECK(std::abs(r.grad_bias) <= 1e-12);
    CHECK(oracle::numeric_gradient(fb, b0).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("angular prototypical loss input errors") {
  Rng rng(6);
  CHECK_THROWS_AS(angular_prototypical_loss(random_batch(rng, 1, 3, 4), 1.0, 0.0), ValidationError);
  CHECK_THROWS_AS(angular_prototypical_loss(random_batch(rng, 3, 1, 4), 1.0, 0.0), ValidationError);
  Batch zero = random_batch(rng, 2, 2, 4);
  zero[1][1].setZero();
  CHECK_THROWS_AS(angular_prototypical_loss(zero, 1.0, 0.0), ValidationError);
}

TEST_CASE("encoder output shape and permutation equivariance without positions") {
  EncoderConfig c = tiny_encoder();
  c.positional_encoding = false;
  const SpeakerModel model(c, PhonemeInventory::numbered(5), 11);
  Rng rng(7);
  const FeatureSequence one{random_matrix(rng, 1, 18)};
  CHECK(encoder_forward(model, one).rows.rows() == 1);
  CHECK(encoder_forward(model, one).rows.cols() == 16);

  const FeatureSequence x{random_matrix(rng, 6, 18)};
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  const Eigen::MatrixXd a = perm * encoder_forward(model, x).rows;
  const Eigen::MatrixXd b = encoder_forward(model, {perm * x.rows}).rows;
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(encoder_forward(model, {random_matrix(rng, 4, 7)}), ShapeError);
}

TEST_CASE("embedding is deterministic and 32-dimensional by default") {
  const SpeakerModel model(EncoderConfig{}, PhonemeInventory::numbered(56), 3);
  Rng rng(8);
  const Utterance u = random_utterance(rng, 56, 12);
  const Embedding a = extract_embedding(model, u, model.inventory());
  CHECK(a.dim() == 32);
  CHECK(a.values == extract_embedding(model, u, model.inventory()).values);
  CHECK(a.values == SpeakerModel(EncoderConfig{}, PhonemeInventory::numbered(56), 3).embed(u).values);
}

TEST_CASE("identical utterances from a zero-variance speaker have cosine one") {
  SynthSpec s;
  s.n_speakers = 2;
  s.utterances_per_speaker = 4;
  s.inventory_size = 10;
  s.speaker_rate_sd = s.phoneme_class_bias_sd = s.utterance_jitter_sd = s.frame_noise_sd = 0.0;
  s.script_pool = {{1, 2, 3, 4, 5, 6, 7, 8}};
  const Corpus c = generate_synthetic_corpus(s);
  const SpeakerModel model(tiny_encoder(), c.inventory(), 4);
  const auto e = extract_embeddings(model, c);
  CHECK(cosine_similarity(e[0].values, e[1].values) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("padding does not change an embedding") {
  const SpeakerModel model(tiny_encoder(), PhonemeInventory::numbered(8), 5);
  Rng rng(9);
  std::vector<Utterance> batch;
  for (std::size_t len : {5u, 17u, 9u, 1u}) batch.push_back(random_utterance(rng, 8, len));
  const auto padded = model.embed_padded(batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK((padded[i].values - model.embed(batch[i]).values).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("embedding maps phonemes across inventories by symbol") {
  const SpeakerModel model(tiny_encoder(), PhonemeInventory({"a", "b", "c"}), 6);
  const PhonemeInventory other({"c", "a", "b"});
  const Utterance in_model{"s", "u", {0, 2, 1}, {0.1, 0.05, 0.2}};
  const Utterance in_other{"s", "u", {1, 0, 2}, {0.1, 0.05, 0.2}};
  CHECK(extract_embedding(model, in_other, other).values == model.embed(in_model).values);
  CHECK_THROWS(extract_embedding(model, in_other, PhonemeInventory({"c", "a", "z"})));
}

TEST_CASE("average embedding") {
  std::vector<Embedding> es{{Eigen::Vector2d(1, 2)}, {Eigen::Vector2d(3, -2)}};
  CHECK(average_embedding(es).values == Eigen::Vector2d(2, 0));
  CHECK_THROWS(average_embedding(std::span<const Embedding>{}));
}

TEST_CASE("speaker training beats chance and is deterministic") {
  SynthSpec s;
  s.n_speakers = 12;
  s.utterances_per_speaker = 12;
  s.inventory_size = 12;
  s.speaker_rate_sd = 0.3;
  s.script_pool = random_script_pool(4, 8, 12, 12, 1);
  s.seed = 2;
  const Corpus c = generate_synthetic_corpus(s);
  const CorpusSplit split = split_corpus(c, 6, 3, 3, 1);

  EncoderConfig ec = tiny_encoder();
  ec.normalize_durations = true;
  SpeakerTrainerOptions o;
  o.batch_speakers = 4;
  o.batch_utterances = 2;
  o.max_epochs = 6;
  o.eval_every = 2;
  o.patience = 0;
  o.valid_same = 100;
  o.valid_diff = 100;
  o.seed = 3;
  int evals = 0;
  const ModelCheckpoint a =
      train_speaker_model(split.train, split.valid, ec, o, [&](const SpeakerEvalRecord&) { ++evals; });
  CHECK(evals == 3);
  const ModelCheckpoint b = train_speaker_model(split.train, split.valid, ec, o);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));

  const SpeakerModel model = SpeakerModel::from_checkpoint(a);
  const TrialSet trials = make_trial_pairs(split.test, 100, 100, 4);
  CHECK(evaluate_eer(model, split.test, trials).eer < 0.5);
}

TEST_CASE("speaker checkpoint round trip preserves the forward pass bitwise") {
  const SpeakerModel model(tiny_encoder(), PhonemeInventory::numbered(8), 7, {0.1, 0.05});
  const ModelCheckpoint ck = model.to_checkpoint({{"note", "x"}});
  const SpeakerModel back = SpeakerModel::from_checkpoint(deserialize_checkpoint(serialize_checkpoint(ck)));
  Rng rng(10);
  const Utterance u = random_utterance(rng, 8, 11);
  CHECK(back.embed(u).values == model.embed(u).values);
  CHECK(back.duration_norm().mean == 0.1);
  CHECK(back.config().model_dim == 16);

  ModelCheckpoint wrong = ck;
  wrong.kind = "duration";
  CHECK_THROWS(SpeakerModel::from_checkpoint(wrong));
}

TEST_CASE("encoder and trainer config json round trip") {
  EncoderConfig c = tiny_encoder();
  c.feature_mode = FeatureMode::phonemes_only;
  c.dropout = 0.1;
  CHECK(to_json(encoder_config_from_json(to_json(c))) == to_json(c));
  SpeakerTrainerOptions o;
  o.max_epochs = 17;
  CHECK(speaker_trainer_options_from_json(to_json(o)).max_epochs == 17);
  CHECK_THROWS_AS(encoder_config_from_json({{"model_dim", 30}, {"n_heads", 4}}), ValidationError);
}
