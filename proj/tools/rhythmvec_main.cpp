// rhythmvec: command-line driver for the rhythm embedding experiments.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rhythmvec/checkpoint.hpp"
#include "rhythmvec/corpus.hpp"
#include "rhythmvec/error.hpp"
#include "rhythmvec/experiment.hpp"
#include "rhythmvec/metrics.hpp"
#include "rhythmvec/spk_model.hpp"

namespace fs = std::filesystem;
using namespace rhythmvec;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig resolve_config(const GlobalOptions& g) {
  ExperimentConfig config;
  if (!g.config_path.empty()) config = load_experiment_config(g.config_path);
  if (g.seed) config.seed = *g.seed;
  if (!g.out.empty()) config.output_dir = g.out;
  return config;
}

template <class F>
void stage(const std::string& name, F&& body) {
  try {
    body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

void log_speaker_eval(const SpeakerEvalRecord& r) {
  std::cerr << "  epoch " << r.epoch << "  loss " << r.train_loss << "  valid_eer " << r.valid_eer
            << '\n';
}

void log_duration_eval(const DurEvalRecord& r) {
  std::cerr << "  epoch " << r.epoch << "  train_mse " << r.train_mse << "  valid_mse "
            << r.valid_mse << '\n';
}

fs::path default_path(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

Corpus corpus_for(const std::string& corpus_path, const ExperimentConfig& config) {
  if (!corpus_path.empty()) return load_corpus(corpus_path);
  return load_experiment_corpus(config);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rhythm-based speaker embeddings from phoneme and duration sequences"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the experiment seed");
  app.add_option("--out", g.out, "Output directory (gen-corpus: output file)");

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus as JSONL");
  std::string spec_path;
  gen->add_option("--spec", spec_path, "Generator parameters (JSON)")->check(CLI::ExistingFile);

  auto* train_spk = app.add_subcommand("train-spk", "Train the speaker model and score the test split");

  auto* extract = app.add_subcommand("extract", "Write one embedding per utterance");
  std::string extract_ck, extract_corpus;
  extract->add_option("--checkpoint", extract_ck, "Speaker checkpoint");
  extract->add_option("--corpus", extract_corpus, "Corpus JSONL (default: config corpus)");

  auto* eval_eer = app.add_subcommand("eval-eer", "Equal error rate of a checkpoint on trial pairs");
  std::string eer_ck, eer_corpus;
  eval_eer->add_option("--checkpoint", eer_ck, "Speaker checkpoint");
  eval_eer->add_option("--corpus", eer_corpus, "Corpus JSONL (default: config test split)");

  auto* train_dur = app.add_subcommand("train-dur", "Train the embedding-conditioned duration model");
  std::string dur_spk_ck;
  train_dur->add_option("--spk-checkpoint", dur_spk_ck, "Speaker checkpoint");

  auto* eval_dur = app.add_subcommand("eval-dur", "Per-speaker duration RMSE, correlation and rate");
  std::string eval_spk_ck, eval_dur_ck;
  eval_dur->add_option("--spk-checkpoint", eval_spk_ck, "Speaker checkpoint");
  eval_dur->add_option("--dur-checkpoint", eval_dur_ck, "Duration checkpoint");

  auto* space = app.add_subcommand("analyze-space", "Projection and rhythm relation analysis");
  std::string space_ck;
  space->add_option("--spk-checkpoint", space_ck, "Speaker checkpoint");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      stage("gen-corpus", [&] {
        SynthSpec spec;
        if (!spec_path.empty()) {
          std::ifstream in(spec_path);
          spec = synth_spec_from_json(nlohmann::json::parse(in));
        } else {
          const ExperimentConfig config = resolve_config({g.config_path, g.seed, ""});
          if (!config.corpus.contains("synthetic")) {
            throw ValidationError("need --spec or a config with corpus.synthetic");
          }
          spec = synth_spec_from_json(config.corpus.at("synthetic"));
        }
        if (g.seed && spec_path.empty()) spec.seed = *g.seed;
        const fs::path out = g.out.empty() ? fs::path("corpus.jsonl") : fs::path(g.out);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        save_corpus(out, generate_synthetic_corpus(spec));
        std::cout << "wrote " << out.string() << '\n';
      });
      return 0;
    }

    ExperimentConfig config;
    stage("config", [&] { config = resolve_config(g); });
    const fs::path spk_default = config.output_dir / "speaker" / "checkpoint.rvec";
    const fs::path dur_default = config.output_dir / "duration" / "checkpoint.rvec";

    if (*train_spk) {
      stage("train-spk", [&] {
        const SpeakerExperimentResult r = run_speaker_experiment(config, log_speaker_eval);
        std::cout << "test_eer " << r.main.test_eer << "  best_valid_eer " << r.main.best_valid_eer
                  << "  best_epoch " << r.main.best_epoch << '\n';
        for (const auto& a : r.ablations) {
          std::cout << "ablation " << to_string(a.mode) << " test_eer " << a.test_eer << '\n';
        }
        for (const auto& c : r.count_summary) {
          std::cout << "train_speakers " << c.n_train_speakers << " mean_test_eer "
                    << c.mean_test_eer << '\n';
        }
      });
    } else if (*extract) {
      stage("extract", [&] {
        const SpeakerModel model =
            SpeakerModel::from_checkpoint(load_checkpoint(default_path(extract_ck, spk_default)));
        const Corpus corpus = corpus_for(extract_corpus, config);
        const auto embs = extract_embeddings(model, corpus);
        std::string text;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
          const nlohmann::json row = {
              {"speaker", corpus.utterance(i).speaker_id},
              {"utterance", corpus.utterance(i).utterance_id},
              {"embedding", std::vector<double>(embs[i].values.data(),
                                                embs[i].values.data() + embs[i].dim())}};
          text += row.dump() + "\n";
        }
        write_text_file(config.output_dir / "embeddings.jsonl", text);
        std::cout << "wrote " << corpus.size() << " embeddings to "
                  << (config.output_dir / "embeddings.jsonl").string() << '\n';
      });
    } else if (*eval_eer) {
      stage("eval-eer", [&] {
        const SpeakerModel model =
            SpeakerModel::from_checkpoint(load_checkpoint(default_path(eer_ck, spk_default)));
        Corpus corpus;
        if (!eer_corpus.empty()) {
          corpus = load_corpus(eer_corpus);
        } else {
          corpus = split_experiment_corpus(config, load_experiment_corpus(config)).test;
        }
        const TrialSet trials = experiment_test_trials(config, corpus);
        const EERResult r = evaluate_eer(model, corpus, trials);
        write_json_file(config.output_dir / "eer_report.json",
                        make_report(config, "eer", r.eer, trials.pairs.size(),
                                    {{"threshold", r.threshold},
                                     {"n_target", r.n_target},
                                     {"n_impostor", r.n_impostor}}));
        std::cout << "eer " << r.eer << "  threshold " << r.threshold << "  trials "
                  << trials.pairs.size() << '\n';
      });
    } else if (*train_dur) {
      stage("train-dur", [&] {
        const ModelCheckpoint spk = load_checkpoint(default_path(dur_spk_ck, spk_default));
        const ModelCheckpoint ck = run_duration_training(config, spk, log_duration_eval);
        std::cout << "best_valid_mse " << ck.training_meta.at("best_valid_mse").get<double>()
                  << "  best_epoch " << ck.training_meta.at("best_epoch").get<int>() << '\n';
      });
    } else if (*eval_dur) {
      stage("eval-dur", [&] {
        const ModelCheckpoint spk = load_checkpoint(default_path(eval_spk_ck, spk_default));
        const ModelCheckpoint dur = load_checkpoint(default_path(eval_dur_ck, dur_default));
        const DurationEvalResult r = run_duration_evaluation(config, spk, dur);
        std::cout << "speakers " << r.correct.size() << "  wins " << r.wins << "  sign_test_p "
                  << r.sign_p << "  rate_pearson " << r.rate_pearson << '\n';
      });
    } else if (*space) {
      stage("analyze-space", [&] {
        const ModelCheckpoint spk = load_checkpoint(default_path(space_ck, spk_default));
        const SpaceAnalysisResult r = run_space_analysis(config, spk);
        std::cout << "pairs " << r.trained.points.size() << "  pearson_r " << r.trained.pearson_r
                  << "  untrained_pearson_r " << r.untrained.pearson_r << '\n';
      });
    }
  } catch (const std::exception& e) {
    std::cerr << "rhythmvec: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
