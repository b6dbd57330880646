#include "rhythmvec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "rhythmvec/error.hpp"
#include "rhythmvec/rng.hpp"

namespace rhythmvec {

PhonemeInventory::PhonemeInventory(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.size() < 2) {
    throw ValidationError("phoneme inventory needs at least 2 symbols, got " +
                          std::to_string(symbols_.size()));
  }
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!index_.emplace(symbols_[i], i).second) {
      throw ValidationError("duplicate phoneme symbol '" + symbols_[i] + "'");
    }
  }
}

PhonemeInventory PhonemeInventory::numbered(std::size_t k) {
  std::vector<std::string> symbols;
  symbols.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "p%02zu", i);
    symbols.emplace_back(buf);
  }
  return PhonemeInventory(std::move(symbols));
}

std::size_t PhonemeInventory::index_of(const std::string& symbol) const {
  auto it = index_.find(symbol);
  if (it == index_.end()) throw ValidationError("unknown phoneme '" + symbol + "'");
  return it->second;
}

double Utterance::total_duration() const {
  double total = 0.0;
  for (double d : durations) total += d;
  return total;
}

void validate_utterance(const Utterance& u, std::size_t k) {
  const std::string where = "utterance '" + u.utterance_id + "': ";
  if (u.phonemes.empty()) throw ValidationError(where + "empty phoneme sequence");
  if (u.phonemes.size() != u.durations.size()) {
    throw ValidationError(where + "phoneme/duration length mismatch");
  }
  for (std::size_t t = 0; t < u.phonemes.size(); ++t) {
    if (u.phonemes[t] >= k) {
      throw ValidationError(where + "phoneme index " + std::to_string(u.phonemes[t]) +
                            " out of range for inventory of " + std::to_string(k));
    }
    if (!(u.durations[t] > 0.0) || !std::isfinite(u.durations[t])) {
      throw ValidationError(where + "non-positive duration at position " + std::to_string(t));
    }
  }
}

Corpus::Corpus(PhonemeInventory inventory, std::vector<Utterance> utterances)
    : inventory_(std::move(inventory)), utterances_(std::move(utterances)) {
  for (std::size_t i = 0; i < utterances_.size(); ++i) {
    const Utterance& u = utterances_[i];
    validate_utterance(u, inventory_.size());
    auto [it, inserted] = speaker_index_.emplace(u.speaker_id, speakers_.size());
    if (inserted) {
      speakers_.push_back(u.speaker_id);
      by_speaker_.emplace_back();
    }
    by_speaker_[it->second].push_back(i);
  }
}

const std::vector<std::size_t>& Corpus::utterances_of(const std::string& speaker) const {
  auto it = speaker_index_.find(speaker);
  if (it == speaker_index_.end()) throw ValidationError("unknown speaker '" + speaker + "'");
  return by_speaker_[it->second];
}

Corpus Corpus::select_speakers(const std::vector<std::string>& speakers) const {
  std::unordered_set<std::string> wanted(speakers.begin(), speakers.end());
  std::vector<Utterance> kept;
  for (const Utterance& u : utterances_) {
    if (wanted.contains(u.speaker_id)) kept.push_back(u);
  }
  return Corpus(inventory_, std::move(kept));
}

Corpus Corpus::select_utterances(const std::vector<std::size_t>& indices) const {
  std::vector<Utterance> kept;
  kept.reserve(indices.size());
  for (std::size_t i : indices) kept.push_back(utterances_.at(i));
  return Corpus(inventory_, std::move(kept));
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthSpec::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("synth spec: " + what); };
  if (n_speakers < 2) fail("n_speakers must be >= 2");
  if (utterances_per_speaker < 1) fail("utterances_per_speaker must be >= 1");
  if (inventory_size < 2) fail("inventory_size must be >= 2");
  if (!(mean_rate > 0.0) || !std::isfinite(mean_rate)) fail("mean_rate must be positive");
  for (double sd : {speaker_rate_sd, phoneme_class_bias_sd, utterance_jitter_sd, frame_noise_sd,
                    intrinsic_sd, style_bias_sd}) {
    if (!(sd >= 0.0) || !std::isfinite(sd)) fail("standard deviations must be >= 0");
  }
  if (n_classes < 1) fail("n_classes must be >= 1");
  if (script_pool.empty()) fail("script pool is empty");
  for (const auto& script : script_pool) {
    if (script.empty()) fail("script pool contains an empty script");
    for (std::size_t p : script) {
      if (p >= inventory_size) fail("script phoneme index out of range");
    }
  }
}

std::vector<std::vector<std::size_t>> random_script_pool(std::size_t count, std::size_t min_len,
                                                         std::size_t max_len, std::size_t k,
                                                         std::uint64_t seed) {
  if (count == 0 || min_len == 0 || max_len < min_len || k == 0) {
    throw ValidationError("random scripts: need count >= 1 and 1 <= min_len <= max_len");
  }
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> pool(count);
  for (auto& script : pool) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    script.resize(len);
    for (auto& p : script) p = rng.below(k);
  }
  return pool;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.n_speakers = j.value("n_speakers", s.n_speakers);
  s.utterances_per_speaker = j.value("utterances_per_speaker", s.utterances_per_speaker);
  s.inventory_size = j.value("inventory_size", s.inventory_size);
  s.mean_rate = j.value("mean_rate", s.mean_rate);
  s.speaker_rate_sd = j.value("speaker_rate_sd", s.speaker_rate_sd);
  s.phoneme_class_bias_sd = j.value("phoneme_class_bias_sd", s.phoneme_class_bias_sd);
  s.utterance_jitter_sd = j.value("utterance_jitter_sd", s.utterance_jitter_sd);
  s.frame_noise_sd = j.value("frame_noise_sd", s.frame_noise_sd);
  s.intrinsic_sd = j.value("intrinsic_sd", s.intrinsic_sd);
  s.n_classes = j.value("n_classes", s.n_classes);
  s.n_styles = j.value("n_styles", s.n_styles);
  s.style_bias_sd = j.value("style_bias_sd", s.style_bias_sd);
  s.shared_scripts = j.value("shared_scripts", s.shared_scripts);
  s.seed = j.value("seed", s.seed);
  if (j.contains("script_pool")) {
    s.script_pool = j.at("script_pool").get<std::vector<std::vector<std::size_t>>>();
  } else if (j.contains("random_scripts")) {
    const auto& r = j.at("random_scripts");
    s.script_pool = random_script_pool(r.value("count", std::size_t{10}),
                                       r.value("min_len", std::size_t{15}),
                                       r.value("max_len", std::size_t{25}), s.inventory_size,
                                       mix_seed(s.seed, 7));
  }
  return s;
}

nlohmann::json synth_spec_to_json(const SynthSpec& s) {
  return {{"n_speakers", s.n_speakers},
          {"utterances_per_speaker", s.utterances_per_speaker},
          {"inventory_size", s.inventory_size},
          {"mean_rate", s.mean_rate},
          {"speaker_rate_sd", s.speaker_rate_sd},
          {"phoneme_class_bias_sd", s.phoneme_class_bias_sd},
          {"utterance_jitter_sd", s.utterance_jitter_sd},
          {"frame_noise_sd", s.frame_noise_sd},
          {"intrinsic_sd", s.intrinsic_sd},
          {"n_classes", s.n_classes},
          {"n_styles", s.n_styles},
          {"style_bias_sd", s.style_bias_sd},
          {"shared_scripts", s.shared_scripts},
          {"seed", s.seed},
          {"script_pool", s.script_pool}};
}

namespace {

std::string numbered_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
  return buf;
}

}  // namespace

Corpus generate_synthetic_corpus(const SynthSpec& spec) {
  spec.validate();
  const std::size_t k = spec.inventory_size;

  Rng intrinsic_rng(mix_seed(spec.seed, 0));
  std::vector<double> intrinsic(k);
  for (auto& v : intrinsic) v = std::exp(spec.intrinsic_sd * intrinsic_rng.normal());

  Rng style_rng(mix_seed(spec.seed, 1));
  std::vector<std::vector<double>> style_bias(spec.n_styles, std::vector<double>(spec.n_classes));
  for (auto& style : style_bias)
    for (auto& b : style) b = spec.style_bias_sd * style_rng.normal();

  std::vector<Utterance> utterances;
  utterances.reserve(spec.n_speakers * spec.utterances_per_speaker);
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    Rng rng(mix_seed(spec.seed, 1000 + s));
    const double rate_log = spec.speaker_rate_sd * rng.normal();
    std::vector<double> class_mult(spec.n_classes);
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
      const double style = spec.n_styles > 0 ? style_bias[s % spec.n_styles][c] : 0.0;
      class_mult[c] = std::exp(rate_log + style + spec.phoneme_class_bias_sd * rng.normal());
    }

    const std::string speaker = numbered_id("spk", s);
    for (std::size_t u = 0; u < spec.utterances_per_speaker; ++u) {
      const auto& script = spec.shared_scripts
                               ? spec.script_pool[u % spec.script_pool.size()]
                               : spec.script_pool[rng.below(spec.script_pool.size())];
      const double jitter = std::exp(spec.utterance_jitter_sd * rng.normal());
      Utterance utt;
      utt.speaker_id = speaker;
      utt.utterance_id = speaker + "_" + numbered_id("u", u);
      utt.phonemes = script;
      utt.durations.reserve(script.size());
      for (std::size_t p : script) {
        const double noise = std::exp(spec.frame_noise_sd * rng.normal());
        const double seconds =
            intrinsic[p] / spec.mean_rate * class_mult[p % spec.n_classes] * jitter * noise;
        const long long ms = std::max(1LL, std::llround(seconds * 1000.0));
        utt.durations.push_back(static_cast<double>(ms) / 1000.0);
      }
      utterances.push_back(std::move(utt));
    }
  }
  return Corpus(PhonemeInventory::numbered(k), std::move(utterances));
}

// ---------------------------------------------------------------------------
// JSON-lines I/O

void write_corpus(std::ostream& out, const Corpus& corpus) {
  nlohmann::ordered_json header;
  header["inventory"] = corpus.inventory().symbols();
  out << header.dump() << '\n';
  for (const Utterance& u : corpus.utterances()) {
    nlohmann::ordered_json rec;
    rec["speaker"] = u.speaker_id;
    rec["utterance"] = u.utterance_id;
    auto& phonemes = rec["phonemes"] = nlohmann::ordered_json::array();
    for (std::size_t p : u.phonemes) phonemes.push_back(corpus.inventory().symbol(p));
    auto& durations = rec["durations_ms"] = nlohmann::ordered_json::array();
    for (double d : u.durations) durations.push_back(std::llround(d * 1000.0));
    out << rec.dump() << '\n';
  }
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_corpus(out, corpus);
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

namespace {

struct RawRecord {
  std::size_t line;
  std::string speaker;
  std::string utterance;
  std::vector<std::string> phonemes;
  std::vector<long long> durations_ms;
};

RawRecord parse_record(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError(line, "record is not a JSON object");
  auto string_field = [&](const char* key) {
    if (!j.contains(key) || !j.at(key).is_string()) {
      throw ParseError(line, std::string("missing or non-string field '") + key + "'");
    }
    return j.at(key).get<std::string>();
  };
  RawRecord r;
  r.line = line;
  r.speaker = string_field("speaker");
  r.utterance = string_field("utterance");
  if (!j.contains("phonemes") || !j.at("phonemes").is_array()) {
    throw ParseError(line, "missing or non-array field 'phonemes'");
  }
  if (!j.contains("durations_ms") || !j.at("durations_ms").is_array()) {
    throw ParseError(line, "missing or non-array field 'durations_ms'");
  }
  for (const auto& p : j.at("phonemes")) {
    if (!p.is_string()) throw ParseError(line, "phoneme entries must be strings");
    r.phonemes.push_back(p.get<std::string>());
  }
  for (const auto& d : j.at("durations_ms")) {
    if (!d.is_number_integer()) throw ParseError(line, "durations_ms entries must be integers");
    const long long ms = d.get<long long>();
    if (ms <= 0) throw ParseError(line, "non-positive duration " + std::to_string(ms) + " ms");
    r.durations_ms.push_back(ms);
  }
  if (r.phonemes.empty()) throw ParseError(line, "empty phoneme sequence");
  if (r.phonemes.size() != r.durations_ms.size()) {
    throw ParseError(line, "phonemes and durations_ms differ in length");
  }
  return r;
}

}  // namespace

Corpus read_corpus(std::istream& in) {
  std::vector<std::string> declared;
  bool have_header = false;
  std::vector<RawRecord> records;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line, std::string("invalid JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("inventory")) {
      if (have_header || !records.empty()) {
        throw ParseError(line, "inventory header must be the first record");
      }
      if (!j.at("inventory").is_array()) throw ParseError(line, "inventory must be an array");
      for (const auto& s : j.at("inventory")) {
        if (!s.is_string()) throw ParseError(line, "inventory entries must be strings");
        declared.push_back(s.get<std::string>());
      }
      have_header = true;
      continue;
    }
    records.push_back(parse_record(j, line));
  }

  PhonemeInventory inventory;
  if (have_header) {
    try {
      inventory = PhonemeInventory(declared);
    } catch (const ValidationError& e) {
      throw ParseError(1, e.what());
    }
  } else {
    std::vector<std::string> seen;
    std::unordered_set<std::string> known;
    for (const auto& r : records) {
      for (const auto& p : r.phonemes) {
        if (known.insert(p).second) seen.push_back(p);
      }
    }
    try {
      inventory = PhonemeInventory(seen);
    } catch (const ValidationError& e) {
      throw ParseError(std::string("cannot infer inventory: ") + e.what());
    }
  }

  std::vector<Utterance> utterances;
  utterances.reserve(records.size());
  for (auto& r : records) {
    Utterance u;
    u.speaker_id = std::move(r.speaker);
    u.utterance_id = std::move(r.utterance);
    for (const auto& p : r.phonemes) {
      if (!inventory.contains(p)) throw ParseError(r.line, "unknown phoneme '" + p + "'");
      u.phonemes.push_back(inventory.index_of(p));
    }
    for (long long ms : r.durations_ms) u.durations.push_back(static_cast<double>(ms) / 1000.0);
    utterances.push_back(std::move(u));
  }
  return Corpus(std::move(inventory), std::move(utterances));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file '" + path.string() + "'");
  return read_corpus(in);
}

// ---------------------------------------------------------------------------
// Splits and trials

CorpusSplit split_corpus(const Corpus& corpus, std::size_t train_speakers,
                         std::size_t valid_speakers, std::size_t test_speakers,
                         std::uint64_t seed) {
  std::vector<std::string> speakers = corpus.speakers();
  const std::size_t wanted = train_speakers + valid_speakers + test_speakers;
  if (wanted > speakers.size()) {
    throw ValidationError("split needs " + std::to_string(wanted) + " speakers but corpus has " +
                          std::to_string(speakers.size()));
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(speakers));
  auto take = [&](std::size_t begin, std::size_t count) {
    return corpus.select_speakers(
        {speakers.begin() + static_cast<std::ptrdiff_t>(begin),
         speakers.begin() + static_cast<std::ptrdiff_t>(begin + count)});
  };
  return {take(0, train_speakers), take(train_speakers, valid_speakers),
          take(train_speakers + valid_speakers, test_speakers)};
}

std::pair<std::size_t, std::size_t> available_trial_pairs(const Corpus& corpus) {
  std::size_t same = 0;
  for (const auto& idx : corpus.utterances_by_speaker()) same += idx.size() * (idx.size() - 1) / 2;
  const std::size_t n = corpus.size();
  const std::size_t all = n < 2 ? 0 : n * (n - 1) / 2;
  return {same, all - same};
}

namespace {

constexpr std::size_t kEnumerateLimit = 2'000'000;

template <class T>
std::vector<T> sample_without_replacement(std::vector<T> items, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(count);
  return items;
}

}  // namespace

TrialSet make_trial_pairs(const Corpus& corpus, std::size_t n_same, std::size_t n_diff,
                          std::uint64_t seed) {
  if (corpus.speakers().size() < 2) {
    throw ValidationError("trial pairs need at least 2 speakers");
  }
  const auto [max_same, max_diff] = available_trial_pairs(corpus);
  if (n_same > max_same) {
    throw ValidationError("requested " + std::to_string(n_same) +
                          " same-speaker pairs but the maximum feasible is " +
                          std::to_string(max_same));
  }
  if (n_diff > max_diff) {
    throw ValidationError("requested " + std::to_string(n_diff) +
                          " different-speaker pairs but the maximum feasible is " +
                          std::to_string(max_diff));
  }

  Rng same_rng(mix_seed(seed, 1));
  Rng diff_rng(mix_seed(seed, 2));
  TrialSet trials;

  std::vector<TrialPair> same;
  same.reserve(max_same);
  for (const auto& idx : corpus.utterances_by_speaker()) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = i + 1; j < idx.size(); ++j) same.push_back({idx[i], idx[j], true});
    }
  }
  trials.pairs = sample_without_replacement(std::move(same), n_same, same_rng);

  const auto& utts = corpus.utterances();
  const std::size_t n = utts.size();
  if (max_diff <= kEnumerateLimit) {
    std::vector<TrialPair> diff;
    diff.reserve(max_diff);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (utts[i].speaker_id != utts[j].speaker_id) diff.push_back({i, j, false});
      }
    }
    auto picked = sample_without_replacement(std::move(diff), n_diff, diff_rng);
    trials.pairs.insert(trials.pairs.end(), picked.begin(), picked.end());
  } else {
    std::unordered_set<std::uint64_t> used;
    std::size_t added = 0;
    while (added < n_diff) {
      std::size_t a = diff_rng.below(n);
      std::size_t b = diff_rng.below(n);
      if (a == b || utts[a].speaker_id == utts[b].speaker_id) continue;
      if (a > b) std::swap(a, b);
      if (!used.insert(static_cast<std::uint64_t>(a) * n + b).second) continue;
      trials.pairs.push_back({a, b, false});
      ++added;
    }
  }
  trials.n_same = n_same;
  trials.n_diff = n_diff;
  return trials;
}

}  // namespace rhythmvec
