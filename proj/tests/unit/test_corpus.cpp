#include <doctest.h>

#include <set>
#include <sstream>

#include "oracles.hpp"
#include "rhythmvec/corpus.hpp"
#include "rhythmvec/error.hpp"
#include "rhythmvec/metrics.hpp"
#include "rhythmvec/rng.hpp"

using namespace rhythmvec;

namespace {

SynthSpec small_spec(std::uint64_t seed = 4) {
  SynthSpec s;
  s.n_speakers = 6;
  s.utterances_per_speaker = 8;
  s.inventory_size = 12;
  s.script_pool = random_script_pool(3, 5, 9, 12, 11);
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("rng streams are reproducible and independent") {
  Rng a(42), b(42), c(mix_seed(42, 1));
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng d(42);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += d.next_u64() == c.next_u64() ? 1 : 0;
  CHECK(equal == 0);
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}

TEST_CASE("rng below stays in range and covers it") {
  Rng r(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = r.below(7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("inventory lookup") {
  const PhonemeInventory inv({"a", "b", "c"});
  CHECK(inv.size() == 3);
  CHECK(inv.index_of("c") == 2);
  CHECK_THROWS_AS(inv.index_of("z"), ValidationError);
  CHECK_THROWS_AS(PhonemeInventory({"a", "a"}), ValidationError);
  CHECK(PhonemeInventory::numbered(56).symbol(55) == "p55");
}

TEST_CASE("utterance validation") {
  Utterance u{"s", "s_u", {0, 1}, {0.1, 0.2}};
  CHECK_NOTHROW(validate_utterance(u, 2));
  CHECK_THROWS_AS(validate_utterance(u, 1), ValidationError);
  u.durations = {0.1};
  CHECK_THROWS_AS(validate_utterance(u, 2), ValidationError);
  u.durations = {0.1, 0.0};
  CHECK_THROWS_AS(validate_utterance(u, 2), ValidationError);
  u.phonemes.clear();
  u.durations.clear();
  CHECK_THROWS_AS(validate_utterance(u, 2), ValidationError);
}

TEST_CASE("generator shape and determinism") {
  const SynthSpec spec = small_spec();
  const Corpus a = generate_synthetic_corpus(spec);
  const Corpus b = generate_synthetic_corpus(spec);
  CHECK(a == b);
  CHECK(a.size() == 48);
  CHECK(a.speakers().size() == 6);
  CHECK(a.inventory().size() == 12);
  for (const Utterance& u : a.utterances()) {
    CHECK_NOTHROW(validate_utterance(u, 12));
    for (double d : u.durations) {
      CHECK(d >= 0.001);
      // whole milliseconds
      CHECK(std::abs(d * 1000.0 - std::round(d * 1000.0)) < 1e-9);
    }
  }
  CHECK_FALSE(generate_synthetic_corpus(small_spec(5)) == a);
}

TEST_CASE("shared scripts cycle through the pool") {
  const SynthSpec spec = small_spec();
  const Corpus c = generate_synthetic_corpus(spec);
  for (const auto& idx : c.utterances_by_speaker()) {
    for (std::size_t u = 0; u < idx.size(); ++u) {
      CHECK(c.utterance(idx[u]).phonemes == spec.script_pool[u % spec.script_pool.size()]);
    }
  }
}

TEST_CASE("zero-variance generator speaks at the mean rate") {
  SynthSpec s = small_spec();
  s.speaker_rate_sd = s.phoneme_class_bias_sd = s.utterance_jitter_sd = 0.0;
  s.frame_noise_sd = s.intrinsic_sd = 0.0;
  s.mean_rate = 8.0;
  const Corpus c = generate_synthetic_corpus(s);
  for (const Utterance& u : c.utterances()) CHECK(speaking_rate(u) == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("speaker rates separate speakers (F statistic)") {
  SynthSpec s = small_spec();
  s.n_speakers = 10;
  s.utterances_per_speaker = 20;
  s.speaker_rate_sd = 0.3;
  const Corpus c = generate_synthetic_corpus(s);
  std::vector<std::vector<double>> groups;
  for (const auto& idx : c.utterances_by_speaker()) {
    groups.emplace_back();
    for (std::size_t i : idx) groups.back().push_back(std::log(speaking_rate(c.utterance(i))));
  }
  CHECK(oracle::f_statistic(groups) > 10.0);

  s.speaker_rate_sd = 0.0;
  s.phoneme_class_bias_sd = 0.0;
  const Corpus flat = generate_synthetic_corpus(s);
  groups.clear();
  for (const auto& idx : flat.utterances_by_speaker()) {
    groups.emplace_back();
    for (std::size_t i : idx) groups.back().push_back(std::log(speaking_rate(flat.utterance(i))));
  }
  CHECK(oracle::f_statistic(groups) < 3.0);
}

TEST_CASE("speakers sharing a style share their class multipliers") {
  SynthSpec s = small_spec();
  s.speaker_rate_sd = s.phoneme_class_bias_sd = s.utterance_jitter_sd = 0.0;
  s.frame_noise_sd = 0.0;
  s.n_styles = 2;
  s.style_bias_sd = 0.5;
  const Corpus c = generate_synthetic_corpus(s);
  const auto by = c.utterances_by_speaker();
  for (std::size_t u = 0; u < by[0].size(); ++u) {
    CHECK(c.utterance(by[0][u]).durations == c.utterance(by[2][u]).durations);
    CHECK(c.utterance(by[1][u]).durations == c.utterance(by[3][u]).durations);
    CHECK_FALSE(c.utterance(by[0][u]).durations == c.utterance(by[1][u]).durations);
  }

  // no styles: the spread has no effect
  SynthSpec off = small_spec();
  SynthSpec off_spread = off;
  off_spread.style_bias_sd = 0.5;
  CHECK(generate_synthetic_corpus(off) == generate_synthetic_corpus(off_spread));
  s.style_bias_sd = -1.0;
  CHECK_THROWS_AS(generate_synthetic_corpus(s), ValidationError);
}

TEST_CASE("synth spec json round trip") {
  SynthSpec s = small_spec();
  s.shared_scripts = false;
  s.n_styles = 3;
  s.style_bias_sd = 0.2;
  const SynthSpec back = synth_spec_from_json(synth_spec_to_json(s));
  CHECK(generate_synthetic_corpus(back) == generate_synthetic_corpus(s));

  const nlohmann::json j = {{"n_speakers", 3},
                            {"utterances_per_speaker", 2},
                            {"random_scripts", {{"count", 2}, {"min_len", 3}, {"max_len", 4}}}};
  const SynthSpec r = synth_spec_from_json(j);
  CHECK(r.script_pool.size() == 2);
  for (const auto& script : r.script_pool) CHECK((script.size() >= 3 && script.size() <= 4));
}

TEST_CASE("invalid synth spec is rejected") {
  SynthSpec s = small_spec();
  s.n_speakers = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(s), ValidationError);
  s = small_spec();
  s.script_pool.clear();
  CHECK_THROWS_AS(generate_synthetic_corpus(s), ValidationError);
  s = small_spec();
  s.script_pool = {{0, 99}};
  CHECK_THROWS_AS(generate_synthetic_corpus(s), ValidationError);
}

TEST_CASE("jsonl round trip") {
  const Corpus c = generate_synthetic_corpus(small_spec());
  std::stringstream ss;
  write_corpus(ss, c);
  const Corpus back = read_corpus(ss);
  CHECK(back == c);
}

TEST_CASE("jsonl without header infers the inventory in order of appearance") {
  std::stringstream ss;
  ss << R"({"speaker":"a","utterance":"a1","phonemes":["x","y"],"durations_ms":[100,50]})" << "\n"
     << R"({"speaker":"b","utterance":"b1","phonemes":["z","x"],"durations_ms":[80,70]})" << "\n";
  const Corpus c = read_corpus(ss);
  CHECK(c.inventory().symbols() == std::vector<std::string>{"x", "y", "z"});
  CHECK(c.utterance(1).phonemes == std::vector<std::size_t>{2, 0});
  CHECK(c.utterance(0).durations[0] == doctest::Approx(0.1));
}

TEST_CASE("jsonl parse errors carry the line number") {
  std::stringstream ss;
  ss << R"({"inventory":["a","b"]})" << "\n"
     << R"({"speaker":"s","utterance":"u","phonemes":["a"],"durations_ms":[10]})" << "\n"
     << R"({"speaker":"s","utterance":"v","phonemes":["a","q"],"durations_ms":[10,20]})" << "\n";
  try {
    read_corpus(ss);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::stringstream bad;
  bad << R"({"speaker":"s","utterance":"u","phonemes":["a"],"durations_ms":[0]})" << "\n";
  CHECK_THROWS_AS(read_corpus(bad), ParseError);
  std::stringstream garbage;
  garbage << "{not json\n";
  CHECK_THROWS_AS(read_corpus(garbage), ParseError);
}

TEST_CASE("split is disjoint, sized and deterministic") {
  SynthSpec s = small_spec();
  s.n_speakers = 10;
  const Corpus c = generate_synthetic_corpus(s);
  const CorpusSplit a = split_corpus(c, 5, 3, 2, 9);
  const CorpusSplit b = split_corpus(c, 5, 3, 2, 9);
  CHECK(a.train == b.train);
  CHECK(a.train.speakers().size() == 5);
  CHECK(a.valid.speakers().size() == 3);
  CHECK(a.test.speakers().size() == 2);
  std::set<std::string> all;
  for (const auto* part : {&a.train, &a.valid, &a.test}) {
    for (const auto& spk : part->speakers()) CHECK(all.insert(spk).second);
  }
  CHECK_THROWS_AS(split_corpus(c, 8, 2, 2, 1), ValidationError);
}

TEST_CASE("trial pairs: labels, uniqueness, counts and feasibility") {
  const Corpus c = generate_synthetic_corpus(small_spec());
  const auto [max_same, max_diff] = available_trial_pairs(c);
  CHECK(max_same == 6 * 28);
  CHECK(max_diff == 48 * 47 / 2 - 6 * 28);

  const TrialSet t = make_trial_pairs(c, 50, 70, 3);
  CHECK(t.pairs.size() == 120);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::size_t same = 0;
  for (const auto& p : t.pairs) {
    CHECK(p.a != p.b);
    CHECK(p.same_speaker == (c.utterance(p.a).speaker_id == c.utterance(p.b).speaker_id));
    CHECK(seen.insert({std::min(p.a, p.b), std::max(p.a, p.b)}).second);
    same += p.same_speaker ? 1 : 0;
  }
  CHECK(same == 50);
  CHECK(t.n_same == 50);
  CHECK(t.n_diff == 70);
  CHECK(make_trial_pairs(c, 50, 70, 3).pairs == t.pairs);

  try {
    make_trial_pairs(c, max_same + 1, 1, 3);
    FAIL("expected infeasible request to throw");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(std::to_string(max_same)) != std::string::npos);
  }
}
