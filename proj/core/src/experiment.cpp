#include "rhythmvec/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "rhythmvec/error.hpp"
#include "rhythmvec/rng.hpp"

namespace rhythmvec {

namespace fs = std::filesystem;

namespace {

template <class F>
auto in_stage(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

nlohmann::json box_json(const BoxStats& b) {
  return {{"min", b.min}, {"q1", b.q1}, {"median", b.median}, {"q3", b.q3}, {"max", b.max}};
}

nlohmann::json without_seed(nlohmann::json j) {
  j.erase("seed");
  return j;
}

// Order of the training speakers used to pick nested subsets.
std::vector<std::string> training_speaker_order(const ExperimentConfig& config,
                                                const Corpus& train) {
  std::vector<std::string> order = train.speakers();
  Rng rng(mix_seed(config.seed, 32));
  rng.shuffle(std::span<std::string>(order));
  return order;
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

bool has_variance(std::span<const double> xs) {
  return std::any_of(xs.begin(), xs.end(), [&](double v) { return v != xs.front(); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("experiment config: " + what); };
  if (!corpus.is_object() || (corpus.contains("path") == corpus.contains("synthetic"))) {
    fail("corpus must hold exactly one of \"path\" or \"synthetic\"");
  }
  if (train_speakers < 2 || valid_speakers < 2 || test_speakers < 2) {
    fail("each split needs at least 2 speakers");
  }
  if (duration.enroll_utterances < 1) fail("duration.enroll_utterances must be >= 1");
  if (duration.eval_utterances < 1) fail("duration.eval_utterances must be >= 1");
  if (duration.holdout_utterances < 1) fail("duration.holdout_utterances must be >= 1");
  encoder.validate();
  duration_model.validate();
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json sweep = {{"ablations", nlohmann::json::array()},
                          {"train_speakers", c.sweep.train_speakers},
                          {"seeds", c.sweep.seeds}};
  for (FeatureMode m : c.sweep.ablations) sweep["ablations"].push_back(to_string(m));
  return {{"corpus", c.corpus},
          {"split", {{"train", c.train_speakers}, {"valid", c.valid_speakers}, {"test", c.test_speakers}}},
          {"encoder", to_json(c.encoder)},
          {"speaker_trainer", without_seed(to_json(c.speaker_trainer))},
          {"duration_model", to_json(c.duration_model)},
          {"duration_trainer", without_seed(to_json(c.duration_trainer))},
          {"trials", {{"test_same", c.test_same}, {"test_diff", c.test_diff}}},
          {"duration",
           {{"enroll_utterances", c.duration.enroll_utterances},
            {"eval_utterances", c.duration.eval_utterances},
            {"holdout_utterances", c.duration.holdout_utterances}}},
          {"sweep", sweep},
          {"relation",
           {{"within_speaker", c.relation.within_speaker},
            {"cross_speaker", c.relation.cross_speaker}}},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("experiment config: expected a JSON object");
  ExperimentConfig c;
  c.corpus = j.value("corpus", nlohmann::json::object());
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.train_speakers = s.value("train", c.train_speakers);
    c.valid_speakers = s.value("valid", c.valid_speakers);
    c.test_speakers = s.value("test", c.test_speakers);
  }
  if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
  if (j.contains("ablation")) {
    const FeatureMode mode = feature_mode_from_string(j.at("ablation").get<std::string>());
    if (j.contains("encoder") && j.at("encoder").contains("feature_mode") &&
        mode != c.encoder.feature_mode) {
      throw ValidationError("experiment config: ablation '" + to_string(mode) +
                            "' contradicts encoder.feature_mode '" +
                            to_string(c.encoder.feature_mode) + "'");
    }
    c.encoder.feature_mode = mode;
  }
  if (j.contains("speaker_trainer")) {
    c.speaker_trainer = speaker_trainer_options_from_json(j.at("speaker_trainer"));
  }
  if (j.contains("duration_model")) {
    c.duration_model = dur_model_config_from_json(j.at("duration_model"));
  }
  if (j.contains("duration_trainer")) {
    c.duration_trainer = dur_trainer_options_from_json(j.at("duration_trainer"));
  }
  if (j.contains("trials")) {
    c.test_same = j.at("trials").value("test_same", c.test_same);
    c.test_diff = j.at("trials").value("test_diff", c.test_diff);
  }
  if (j.contains("duration")) {
    const auto& d = j.at("duration");
    c.duration.enroll_utterances = d.value("enroll_utterances", c.duration.enroll_utterances);
    c.duration.eval_utterances = d.value("eval_utterances", c.duration.eval_utterances);
    c.duration.holdout_utterances = d.value("holdout_utterances", c.duration.holdout_utterances);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    for (const auto& m : s.value("ablations", nlohmann::json::array())) {
      c.sweep.ablations.push_back(feature_mode_from_string(m.get<std::string>()));
    }
    c.sweep.train_speakers = s.value("train_speakers", c.sweep.train_speakers);
    c.sweep.seeds = s.value("seeds", c.sweep.seeds);
  }
  if (j.contains("relation")) {
    c.relation.within_speaker = j.at("relation").value("within_speaker", true);
    c.relation.cross_speaker = j.at("relation").value("cross_speaker", true);
  }
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir.string());
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config '") + path.string() + "': " + e.what());
  }
  return experiment_config_from_json(j);
}

std::string config_hash(const ExperimentConfig& config) {
  nlohmann::json j = to_json(config);
  j.erase("output_dir");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Corpus load_experiment_corpus(const ExperimentConfig& config) {
  return in_stage("corpus", [&] {
    if (config.corpus.contains("path")) {
      return load_corpus(config.corpus.at("path").get<std::string>());
    }
    return generate_synthetic_corpus(synth_spec_from_json(config.corpus.at("synthetic")));
  });
}

CorpusSplit split_experiment_corpus(const ExperimentConfig& config, const Corpus& corpus) {
  return in_stage("split", [&] {
    return split_corpus(corpus, config.train_speakers, config.valid_speakers,
                        config.test_speakers, mix_seed(config.seed, 30));
  });
}

Corpus held_out_corpus(const CorpusSplit& split) {
  std::vector<Utterance> utts = split.valid.utterances();
  utts.insert(utts.end(), split.test.utterances().begin(), split.test.utterances().end());
  return Corpus(split.valid.inventory(), std::move(utts));
}

TrialSet experiment_test_trials(const ExperimentConfig& config, const Corpus& test) {
  const auto [same, diff] = available_trial_pairs(test);
  return make_trial_pairs(test, std::min(config.test_same, same), std::min(config.test_diff, diff),
                          mix_seed(config.seed, 31));
}

// ---------------------------------------------------------------------------
// Speaker identification

SpeakerRunResult run_speaker_training(const ExperimentConfig& config, const CorpusSplit& split,
                                      FeatureMode mode, std::size_t n_train_speakers,
                                      std::uint64_t seed, const SpeakerEvalCallback& on_eval) {
  SpeakerRunResult result;
  result.mode = mode;
  result.seed = seed;

  Corpus train = split.train;
  if (n_train_speakers > 0 && n_train_speakers < train.speakers().size()) {
    std::vector<std::string> subset = training_speaker_order(config, train);
    subset.resize(n_train_speakers);
    train = train.select_speakers(subset);
  }
  result.n_train_speakers = train.speakers().size();

  EncoderConfig encoder = config.encoder;
  encoder.feature_mode = mode;
  SpeakerTrainerOptions options = config.speaker_trainer;
  options.seed = seed;

  const std::string stage = "train-spk/" + to_string(mode) + "/n" +
                            std::to_string(result.n_train_speakers) + "/seed" + std::to_string(seed);
  result.checkpoint = in_stage(stage, [&] {
    return train_speaker_model(train, split.valid, encoder, options, on_eval);
  });
  const auto& meta = result.checkpoint.training_meta;
  result.best_valid_eer = meta.at("best_valid_eer").get<double>();
  result.best_epoch = meta.at("best_epoch").get<int>();
  result.epochs_run = meta.at("epochs_run").get<int>();

  result.test_eer = in_stage(stage + "/test", [&] {
    const SpeakerModel model = SpeakerModel::from_checkpoint(result.checkpoint);
    return evaluate_eer(model, split.test, experiment_test_trials(config, split.test)).eer;
  });
  return result;
}

namespace {

nlohmann::json speaker_run_report(const ExperimentConfig& config, const SpeakerRunResult& r,
                                  std::size_t n_trials) {
  return make_report(config, "test_eer", r.test_eer, n_trials,
                     {{"feature_mode", to_string(r.mode)},
                      {"n_train_speakers", r.n_train_speakers},
                      {"run_seed", r.seed},
                      {"best_epoch", r.best_epoch},
                      {"best_valid_eer", r.best_valid_eer},
                      {"epochs_run", r.epochs_run},
                      {"valid_eer_trajectory", r.checkpoint.training_meta.at("history")}});
}

}  // namespace

SpeakerExperimentResult run_speaker_experiment(const ExperimentConfig& config,
                                               const SpeakerEvalCallback& on_eval) {
  config.validate();
  const Corpus corpus = load_experiment_corpus(config);
  const CorpusSplit split = split_experiment_corpus(config, corpus);
  const std::size_t n_trials = experiment_test_trials(config, split.test).pairs.size();
  const fs::path dir = config.output_dir / "speaker";

  SpeakerExperimentResult out;
  out.main = run_speaker_training(config, split, config.encoder.feature_mode, 0, config.seed, on_eval);
  save_checkpoint(dir / "checkpoint.rvec", out.main.checkpoint);
  write_json_file(dir / "report.json", speaker_run_report(config, out.main, n_trials));

  if (!config.sweep.ablations.empty()) {
    nlohmann::json modes = nlohmann::json::object();
    for (FeatureMode mode : config.sweep.ablations) {
      SpeakerRunResult r = mode == out.main.mode
                               ? out.main
                               : run_speaker_training(config, split, mode, 0, config.seed);
      write_json_file(dir / ("ablation_" + to_string(mode) + ".json"),
                      speaker_run_report(config, r, n_trials));
      modes[to_string(mode)] = r.test_eer;
      out.ablations.push_back(std::move(r));
    }
    write_json_file(dir / "ablation.json",
                    make_report(config, "test_eer_by_feature_mode", out.main.test_eer, n_trials,
                                {{"test_eer", modes}}));
  }

  if (!config.sweep.train_speakers.empty()) {
    std::vector<std::uint64_t> seeds = config.sweep.seeds;
    if (seeds.empty()) seeds.push_back(config.seed);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t n : config.sweep.train_speakers) {
      SpeakerCountSummary summary;
      for (std::uint64_t s : seeds) {
        const bool reuse = s == config.seed && n >= split.train.speakers().size();
        SpeakerRunResult r = reuse ? out.main
                                   : run_speaker_training(config, split, config.encoder.feature_mode,
                                                          n, s);
        summary.n_train_speakers = r.n_train_speakers;
        summary.test_eers.push_back(r.test_eer);
        out.count_runs.push_back(std::move(r));
      }
      summary.mean_test_eer = mean_of(summary.test_eers);
      rows.push_back({{"n_train_speakers", summary.n_train_speakers},
                      {"seeds", seeds},
                      {"test_eer", summary.test_eers},
                      {"mean_test_eer", summary.mean_test_eer}});
      out.count_summary.push_back(std::move(summary));
    }
    write_json_file(dir / "count_sweep.json",
                    make_report(config, "mean_test_eer_by_train_speakers",
                                out.count_summary.back().mean_test_eer, n_trials,
                                {{"rows", rows}}));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Duration prediction

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw ValidationError("box_stats: empty input");
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {values.front(), quantile(0.25), quantile(0.5), quantile(0.75), values.back()};
}

double sign_test_p(std::size_t wins, std::size_t n) {
  if (wins > n) throw ValidationError("sign_test_p: wins exceed trials");
  double tail = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    const double log_c = std::lgamma(static_cast<double>(n) + 1.0) -
                         std::lgamma(static_cast<double>(k) + 1.0) -
                         std::lgamma(static_cast<double>(n - k) + 1.0);
    tail += std::exp(log_c - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(1.0, tail);
}

std::vector<std::size_t> speaker_utterance_order(const Corpus& corpus, const std::string& speaker,
                                                 std::uint64_t seed) {
  std::vector<std::size_t> order = corpus.utterances_of(speaker);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

namespace {

Embedding enrollment_embedding(const SpeakerModel& model, const Corpus& corpus,
                               std::span<const std::size_t> indices) {
  std::vector<Embedding> embs;
  embs.reserve(indices.size());
  for (std::size_t i : indices) {
    embs.push_back(extract_embedding(model, corpus.utterance(i), corpus.inventory()));
  }
  return average_embedding(embs);
}

DurModelConfig duration_config_for(const ExperimentConfig& config, const SpeakerModel& spk) {
  DurModelConfig c = config.duration_model;
  c.embed_dim = spk.config().embed_dim;
  return c;
}

SpeakerDurationRow score_speaker(const DurationModel& model, const Corpus& corpus,
                                 const std::string& speaker, std::span<const std::size_t> eval,
                                 const Embedding& embedding) {
  SpeakerDurationRow row;
  row.speaker = speaker;
  row.n_utterances = eval.size();
  std::vector<double> pred_all;
  std::vector<double> ref_all;
  std::vector<double> corrs;
  for (std::size_t i : eval) {
    const Utterance& u = corpus.utterance(i);
    const std::vector<std::size_t> phonemes = [&] {
      std::vector<std::size_t> mapped;
      mapped.reserve(u.length());
      for (std::size_t p : u.phonemes) {
        mapped.push_back(model.inventory().index_of(corpus.inventory().symbol(p)));
      }
      return mapped;
    }();
    const std::vector<double> pred = model.predict(phonemes, embedding);
    pred_all.insert(pred_all.end(), pred.begin(), pred.end());
    ref_all.insert(ref_all.end(), u.durations.begin(), u.durations.end());
    if (u.length() >= 2 && has_variance(pred) && has_variance(u.durations)) {
      corrs.push_back(duration_correlation(pred, u.durations));
    }
  }
  row.rmse_ms = duration_rmse(pred_all, ref_all);
  row.corr = mean_of(corrs);
  const auto count = static_cast<double>(pred_all.size());
  row.rate_pred = count / std::accumulate(pred_all.begin(), pred_all.end(), 0.0);
  row.rate_ref = count / std::accumulate(ref_all.begin(), ref_all.end(), 0.0);
  return row;
}

std::string rows_csv(const std::vector<SpeakerDurationRow>& rows) {
  std::string out = "speaker,rmse_ms,corr,rate_pred,rate_ref\n";
  for (const auto& r : rows) {
    out += r.speaker + "," + fmt(r.rmse_ms) + "," + fmt(r.corr) + "," + fmt(r.rate_pred) + "," +
           fmt(r.rate_ref) + "\n";
  }
  return out;
}

}  // namespace

ModelCheckpoint run_duration_training(const ExperimentConfig& config,
                                      const ModelCheckpoint& speaker_checkpoint,
                                      const std::function<void(const DurEvalRecord&)>& on_eval) {
  config.validate();
  const Corpus corpus = load_experiment_corpus(config);
  const CorpusSplit split = split_experiment_corpus(config, corpus);
  const SpeakerModel spk =
      in_stage("train-dur/load", [&] { return SpeakerModel::from_checkpoint(speaker_checkpoint); });

  SpeakerEmbeddings embeddings;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> valid_idx;
  std::map<std::size_t, Embedding> draws;
  in_stage("train-dur/embed", [&] {
    const std::size_t holdout = config.duration.holdout_utterances;
    const std::vector<Embedding> single = extract_embeddings(spk, split.train);
    Rng draw_rng(mix_seed(config.seed, 44));
    for (const std::string& s : split.train.speakers()) {
      const auto order = speaker_utterance_order(split.train, s, mix_seed(config.seed, 40));
      if (order.size() <= holdout) {
        throw ValidationError("speaker '" + s + "' has " + std::to_string(order.size()) +
                              " utterances; needs more than the " + std::to_string(holdout) +
                              " held out");
      }
      const std::size_t fit = order.size() - holdout;
      const std::size_t enroll = std::min(config.duration.enroll_utterances, fit);
      std::vector<Embedding> first;
      for (std::size_t k = 0; k < enroll; ++k) first.push_back(single[order[k]]);
      embeddings[s] = average_embedding(first);
      // Every training utterance gets its own average over a random subset
      // of the speaker's training utterances.
      std::vector<std::size_t> pool(order.begin(), order.begin() + static_cast<long>(fit));
      for (std::size_t k = 0; k < fit; ++k) {
        draw_rng.shuffle(std::span<std::size_t>(pool));
        std::vector<Embedding> subset;
        for (std::size_t j = 0; j < enroll; ++j) subset.push_back(single[pool[j]]);
        draws[order[k]] = average_embedding(subset);
      }
      train_idx.insert(train_idx.end(), order.begin(), order.begin() + static_cast<long>(fit));
      valid_idx.insert(valid_idx.end(), order.begin() + static_cast<long>(fit), order.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(valid_idx.begin(), valid_idx.end());
    return 0;
  });

  std::vector<Embedding> train_embeddings;
  for (std::size_t i : train_idx) train_embeddings.push_back(draws.at(i));
  DurTrainerOptions options = config.duration_trainer;
  options.seed = mix_seed(config.seed, 41);
  ModelCheckpoint ck = in_stage("train-dur", [&] {
    return train_duration_model(split.train.select_utterances(train_idx), train_embeddings,
                                split.train.select_utterances(valid_idx), embeddings,
                                duration_config_for(config, spk), options, on_eval);
  });

  std::size_t valid_phonemes = 0;
  for (std::size_t i : valid_idx) valid_phonemes += split.train.utterance(i).length();
  const fs::path dir = config.output_dir / "duration";
  save_checkpoint(dir / "checkpoint.rvec", ck);
  write_json_file(dir / "train_report.json",
                  make_report(config, "best_valid_mse", ck.training_meta.at("best_valid_mse"),
                              valid_phonemes,
                              {{"best_epoch", ck.training_meta.at("best_epoch")},
                               {"epochs_run", ck.training_meta.at("epochs_run")},
                               {"history", ck.training_meta.at("history")}}));
  return ck;
}

DurationEvalResult run_duration_evaluation(const ExperimentConfig& config,
                                           const ModelCheckpoint& speaker_checkpoint,
                                           const ModelCheckpoint& duration_checkpoint) {
  config.validate();
  const Corpus corpus = load_experiment_corpus(config);
  const CorpusSplit split = split_experiment_corpus(config, corpus);
  const Corpus held = held_out_corpus(split);

  return in_stage("eval-dur", [&] {
    const SpeakerModel spk = SpeakerModel::from_checkpoint(speaker_checkpoint);
    const DurationModel dur = DurationModel::from_checkpoint(duration_checkpoint);
    const std::vector<std::string>& speakers = held.speakers();
    const std::size_t n = speakers.size();

    std::vector<Embedding> embeddings;
    std::vector<std::vector<std::size_t>> eval_sets;
    for (const std::string& s : speakers) {
      const auto order = speaker_utterance_order(held, s, mix_seed(config.seed, 42));
      const std::size_t enroll = config.duration.enroll_utterances;
      if (order.size() <= enroll) {
        throw ValidationError("speaker '" + s + "' has no utterances left after enrollment");
      }
      embeddings.push_back(
          enrollment_embedding(spk, held, std::span<const std::size_t>(order.data(), enroll)));
      const std::size_t stop = std::min(order.size(), enroll + config.duration.eval_utterances);
      eval_sets.emplace_back(order.begin() + static_cast<long>(enroll),
                             order.begin() + static_cast<long>(stop));
    }

    // A shuffled cycle is a derangement: nobody keeps their own embedding.
    std::vector<std::size_t> cycle(n);
    std::iota(cycle.begin(), cycle.end(), std::size_t{0});
    Rng rng(mix_seed(config.seed, 43));
    rng.shuffle(std::span<std::size_t>(cycle));
    std::vector<std::size_t> donor(n);
    for (std::size_t i = 0; i < n; ++i) donor[cycle[i]] = cycle[(i + 1) % n];

    DurationEvalResult result;
    for (std::size_t i = 0; i < n; ++i) {
      result.correct.push_back(score_speaker(dur, held, speakers[i], eval_sets[i], embeddings[i]));
      result.shuffled.push_back(
          score_speaker(dur, held, speakers[i], eval_sets[i], embeddings[donor[i]]));
      if (result.correct.back().rmse_ms < result.shuffled.back().rmse_ms) ++result.wins;
    }
    result.sign_p = sign_test_p(result.wins, n);

    std::vector<double> rate_pred;
    std::vector<double> rate_ref;
    std::vector<double> rmse;
    std::vector<double> rmse_shuffled;
    std::vector<double> corr;
    for (std::size_t i = 0; i < n; ++i) {
      rate_pred.push_back(result.correct[i].rate_pred);
      rate_ref.push_back(result.correct[i].rate_ref);
      rmse.push_back(result.correct[i].rmse_ms);
      rmse_shuffled.push_back(result.shuffled[i].rmse_ms);
      corr.push_back(result.correct[i].corr);
    }
    result.rate_pearson =
        has_variance(rate_pred) && has_variance(rate_ref) ? pearson(rate_pred, rate_ref) : 0.0;
    result.rate_pred_box = box_stats(rate_pred);
    result.rate_ref_box = box_stats(rate_ref);

    const fs::path dir = config.output_dir / "duration";
    write_text_file(dir / "per_speaker.csv", rows_csv(result.correct));
    write_text_file(dir / "per_speaker_shuffled.csv", rows_csv(result.shuffled));
    write_json_file(dir / "rate_box.json",
                    make_report(config, "speaking_rate_pearson", result.rate_pearson, n,
                                {{"unit", "phonemes_per_second"},
                                 {"predicted", box_json(result.rate_pred_box)},
                                 {"reference", box_json(result.rate_ref_box)},
                                 {"rate_pred", rate_pred},
                                 {"rate_ref", rate_ref}}));
    write_json_file(dir / "report.json",
                    make_report(config, "mean_rmse_ms", mean_of(rmse), n,
                                {{"mean_rmse_ms_shuffled", mean_of(rmse_shuffled)},
                                 {"mean_corr", mean_of(corr)},
                                 {"wins", result.wins},
                                 {"sign_test_p", result.sign_p},
                                 {"speaking_rate_pearson", result.rate_pearson}}));
    return result;
  });
}

DurationExperimentResult run_duration_experiment(const ExperimentConfig& config,
                                                 const ModelCheckpoint& speaker_checkpoint) {
  DurationExperimentResult out;
  out.checkpoint = run_duration_training(config, speaker_checkpoint);
  out.eval = run_duration_evaluation(config, speaker_checkpoint, out.checkpoint);
  return out;
}

// ---------------------------------------------------------------------------
// Embedding space

namespace {

std::string scatter_csv(const ScatterReport& report, const Corpus& corpus) {
  std::string out = "utterance_a,utterance_b,cosine,duration_corr\n";
  for (std::size_t i = 0; i < report.points.size(); ++i) {
    const auto& [a, b] = report.pairs[i];
    out += corpus.utterance(a).utterance_id + "," + corpus.utterance(b).utterance_id + "," +
           fmt(report.points[i][0]) + "," + fmt(report.points[i][1]) + "\n";
  }
  return out;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

SpaceAnalysisResult run_space_analysis(const ExperimentConfig& config,
                                       const ModelCheckpoint& speaker_checkpoint) {
  config.validate();
  const Corpus corpus = load_experiment_corpus(config);
  const CorpusSplit split = split_experiment_corpus(config, corpus);
  const Corpus held = held_out_corpus(split);

  return in_stage("analyze-space", [&] {
    const SpeakerModel model = SpeakerModel::from_checkpoint(speaker_checkpoint);
    const SpeakerModel untrained(model.config(), model.inventory(), mix_seed(config.seed, 50),
                                 model.duration_norm());

    SpaceAnalysisResult result;
    for (const Utterance& u : held.utterances()) {
      result.utterance_ids.push_back(u.utterance_id);
      result.speaker_ids.push_back(u.speaker_id);
    }
    const std::vector<Embedding> embs = extract_embeddings(model, held);
    result.projection = project_embeddings_2d(embs);
    result.trained = rhythm_relation_report(held, embs, config.relation);
    result.untrained = rhythm_relation_report(held, extract_embeddings(untrained, held), config.relation);

    const fs::path dir = config.output_dir / "space";
    std::string proj = "utterance,speaker,pc1,pc2\n";
    for (std::size_t i = 0; i < result.projection.size(); ++i) {
      proj += result.utterance_ids[i] + "," + result.speaker_ids[i] + "," +
              fmt(result.projection[i][0]) + "," + fmt(result.projection[i][1]) + "\n";
    }
    write_text_file(dir / "projection.csv", proj);
    write_text_file(dir / "relation.csv", scatter_csv(result.trained, held));
    write_text_file(dir / "relation_untrained.csv", scatter_csv(result.untrained, held));
    write_json_file(dir / "report.json",
                    make_report(config, "relation_pearson_r", result.trained.pearson_r,
                                result.trained.points.size(),
                                {{"mic", optional_json(result.trained.mic)},
                                 {"skipped_pairs", result.trained.skipped},
                                 {"untrained_pearson_r", result.untrained.pearson_r},
                                 {"untrained_mic", optional_json(result.untrained.mic)},
                                 {"projection", "pca"},
                                 {"n_utterances", held.size()}}));
    return result;
  });
}

// ---------------------------------------------------------------------------
// Output helpers

nlohmann::json make_report(const ExperimentConfig& config, const std::string& metric, double value,
                           std::size_t n, nlohmann::json extra) {
  nlohmann::json j = std::move(extra);
  j["metric"] = metric;
  j["value"] = value;
  j["n"] = n;
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed;
  return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace rhythmvec
