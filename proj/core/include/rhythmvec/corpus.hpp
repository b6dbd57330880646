#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace rhythmvec {

/// Ordered set of phoneme labels. The index of a symbol is its identity.
class PhonemeInventory {
 public:
  PhonemeInventory() = default;
  /// Throws ValidationError on duplicates or fewer than two symbols.
  explicit PhonemeInventory(std::vector<std::string> symbols);

  /// Symbols "p00", "p01", ... of the given size.
  static PhonemeInventory numbered(std::size_t k);

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }
  const std::string& symbol(std::size_t index) const { return symbols_.at(index); }
  bool contains(const std::string& symbol) const { return index_.contains(symbol); }
  /// Throws ValidationError for an unknown symbol.
  std::size_t index_of(const std::string& symbol) const;

  bool operator==(const PhonemeInventory& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One utterance: phoneme indices and per-phoneme durations in seconds.
struct Utterance {
  std::string speaker_id;
  std::string utterance_id;
  std::vector<std::size_t> phonemes;
  std::vector<double> durations;

  std::size_t length() const noexcept { return phonemes.size(); }
  double total_duration() const;

  bool operator==(const Utterance&) const = default;
};

/// Throws ValidationError unless the utterance is non-empty, has matching
/// lengths, positive durations, and indices below `k`.
void validate_utterance(const Utterance& utterance, std::size_t k);

/// An immutable collection of utterances over one inventory.
class Corpus {
 public:
  Corpus() = default;
  /// Validates every utterance against the inventory.
  Corpus(PhonemeInventory inventory, std::vector<Utterance> utterances);

  const PhonemeInventory& inventory() const noexcept { return inventory_; }
  const std::vector<Utterance>& utterances() const noexcept { return utterances_; }
  const Utterance& utterance(std::size_t i) const { return utterances_.at(i); }
  std::size_t size() const noexcept { return utterances_.size(); }
  bool empty() const noexcept { return utterances_.empty(); }

  /// Speaker ids in order of first appearance.
  const std::vector<std::string>& speakers() const noexcept { return speakers_; }
  /// Utterance indices of each speaker, parallel to speakers().
  const std::vector<std::vector<std::size_t>>& utterances_by_speaker() const noexcept {
    return by_speaker_;
  }
  /// Utterance indices of one speaker; throws ValidationError if absent.
  const std::vector<std::size_t>& utterances_of(const std::string& speaker) const;

  /// Subset containing only the given speakers (in corpus order).
  Corpus select_speakers(const std::vector<std::string>& speakers) const;
  /// Subset containing the given utterance indices, in the given order.
  Corpus select_utterances(const std::vector<std::size_t>& indices) const;

  bool operator==(const Corpus& other) const {
    return inventory_ == other.inventory_ && utterances_ == other.utterances_;
  }

 private:
  PhonemeInventory inventory_;
  std::vector<Utterance> utterances_;
  std::vector<std::string> speakers_;
  std::vector<std::vector<std::size_t>> by_speaker_;
  std::unordered_map<std::string, std::size_t> speaker_index_;
};

/// Parameters of the multiplicative-lognormal rhythm generator.
///
/// d(p) = intrinsic(p) / mean_rate * speaker_mult(speaker, class(p))
///        * utterance_jitter * frame_noise
///
/// intrinsic(p) = exp(intrinsic_sd * z_p),
/// speaker_mult = exp(rate + style_bias[style][class] + bias[class]).
/// Classes are index stripes: class(p) = p % n_classes. Speaker s has style
/// s % n_styles; with n_styles = 0 there is no style term. Durations are
/// rounded to whole milliseconds (minimum 1 ms).
struct SynthSpec {
  std::size_t n_speakers = 10;
  std::size_t utterances_per_speaker = 20;
  std::size_t inventory_size = 56;
  double mean_rate = 8.0;
  double speaker_rate_sd = 0.15;
  double phoneme_class_bias_sd = 0.1;
  double utterance_jitter_sd = 0.05;
  double frame_noise_sd = 0.1;
  double intrinsic_sd = 0.3;
  std::size_t n_classes = 4;
  /// Rhythm styles shared by groups of speakers.
  std::size_t n_styles = 0;
  double style_bias_sd = 0.0;
  std::vector<std::vector<std::size_t>> script_pool;
  bool shared_scripts = true;
  std::uint64_t seed = 0;

  /// Throws ValidationError on any violated invariant.
  void validate() const;
};

/// Random scripts of uniform length in [min_len, max_len] over k symbols.
std::vector<std::vector<std::size_t>> random_script_pool(std::size_t count, std::size_t min_len,
                                                         std::size_t max_len, std::size_t k,
                                                         std::uint64_t seed);

/// Reads a SynthSpec from JSON. Accepts an explicit "script_pool" (lists of
/// indices) or "random_scripts": {"count", "min_len", "max_len"}.
SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);

Corpus generate_synthetic_corpus(const SynthSpec& spec);

/// JSON-lines corpus I/O. The first line carries the inventory.
void write_corpus(std::ostream& out, const Corpus& corpus);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);
/// Throws ParseError naming the offending line.
Corpus read_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);

struct CorpusSplit {
  Corpus train;
  Corpus valid;
  Corpus test;
};

/// Speaker-disjoint split; speakers are shuffled with `seed`.
CorpusSplit split_corpus(const Corpus& corpus, std::size_t train_speakers,
                         std::size_t valid_speakers, std::size_t test_speakers,
                         std::uint64_t seed);

struct TrialPair {
  std::size_t a;
  std::size_t b;
  bool same_speaker;

  bool operator==(const TrialPair&) const = default;
};

/// Verification trials over utterance indices of one corpus.
struct TrialSet {
  std::vector<TrialPair> pairs;
  std::size_t n_same = 0;
  std::size_t n_diff = 0;
};

/// Samples distinct unordered pairs without replacement. Throws
/// ValidationError naming the feasible maximum when a count is too large.
TrialSet make_trial_pairs(const Corpus& corpus, std::size_t n_same, std::size_t n_diff,
                          std::uint64_t seed);

/// Number of available (same-speaker, different-speaker) unordered pairs.
std::pair<std::size_t, std::size_t> available_trial_pairs(const Corpus& corpus);

}  // namespace rhythmvec
