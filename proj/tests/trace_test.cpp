#include "tlsleak/trace.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tlsleak/error.hpp"
#include "tlsleak/io.hpp"

namespace tlsleak {
namespace {

using testing::make_trace;
using testing::TempDir;

Dataset two_trace_dataset() {
  Dataset ds;
  ds.provenance = {Source::kSynthetic, "abc", 7};
  ds.traces.push_back(make_trace("a", {{0, 10}, {0.5, 20}}, Label::kTarget, "p1"));
  ds.traces.push_back(make_trace("b", {{0, 30}}, Label::kNoise, "p2"));
  ds.traces[1].meta["topic"] = "caf\xc3\xa9";
  return ds;
}

// Random string mixing ASCII, 2/3/4-byte UTF-8 sequences and JSON specials.
std::string random_utf8(Rng& rng) {
  static const std::vector<std::string> pieces = {
      "a", "Z", " ", "\"", "\\", "\n", "\t", "/", "\xc3\xa9", "\xd0\x96",
      "\xe6\xbc\xa2", "\xe2\x82\xac", "\xf0\x9f\x98\x80", "\x7f", "{", "}"};
  std::string s;
  const auto n = rng.below(12);
  for (std::uint64_t i = 0; i < n; ++i) s += pieces[rng.below(pieces.size())];
  return s;
}

TEST(Jsonl, EmptyDatasetWritesZeroLines) {
  TempDir dir("jsonl-empty");
  write_dataset(Dataset{}, dir / "e.jsonl");
  EXPECT_EQ(read_file(dir / "e.jsonl"), "");
  EXPECT_TRUE(read_dataset(dir / "e.jsonl").traces.empty());
}

TEST(Jsonl, TwoTraceRoundTrip) {
  TempDir dir("jsonl-two");
  const Dataset ds = two_trace_dataset();
  write_dataset(ds, dir / "d.jsonl");
  const std::string text = read_file(dir / "d.jsonl");
  // header plus one line per trace
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_EQ(text.substr(0, 2), "# ");
  EXPECT_EQ(read_dataset(dir / "d.jsonl"), ds);
}

TEST(Jsonl, FixedKeyOrder) {
  const std::string line = to_jsonl(two_trace_dataset());
  const auto second = line.find('\n') + 1;
  EXPECT_EQ(line.substr(second, 60),
            std::string(R"({"id":"a","label":"target","prompt_id":"p1","events":[{"dt":)"));
}

TEST(Jsonl, RandomizedRoundTripIsIdentity) {
  Rng rng(11);
  for (int round = 0; round < 200; ++round) {
    Dataset ds;
    ds.provenance = {Source::kTransformed, random_utf8(rng), rng.next_u64()};
    const auto n = rng.below(6);
    for (std::uint64_t i = 0; i < n; ++i) {
      Trace t = testing::random_trace(rng, "id" + std::to_string(i) + random_utf8(rng), 8);
      t.prompt_id = "p" + random_utf8(rng);
      for (int k = 0; k < 3; ++k) t.meta[random_utf8(rng)] = random_utf8(rng);
      ds.traces.push_back(std::move(t));
    }
    const Dataset back = parse_jsonl(to_jsonl(ds));
    if (n == 0) {
      EXPECT_TRUE(back.traces.empty());
    } else {
      ASSERT_EQ(back, ds) << "round " << round;
    }
  }
}

TEST(Jsonl, SizeZeroRejectedWithLineNumber) {
  const std::string text =
      "{\"id\":\"a\",\"label\":\"noise\",\"prompt_id\":\"p\",\"events\":[{\"dt\":0,\"size\":5}],\"meta\":{}}\n"
      "{\"id\":\"b\",\"label\":\"noise\",\"prompt_id\":\"p\",\"events\":[{\"dt\":0,\"size\":0}],\"meta\":{}}\n";
  try {
    parse_jsonl(text, "x.jsonl");
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_NE(std::string(e.what()).find("x.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, NegativeDtAndDuplicateIdRejected) {
  const std::string neg =
      "{\"id\":\"a\",\"label\":\"noise\",\"prompt_id\":\"p\",\"events\":[{\"dt\":-0.1,\"size\":5}],\"meta\":{}}\n";
  EXPECT_THROW(parse_jsonl(neg), Error);
  const std::string dup =
      "{\"id\":\"a\",\"label\":\"noise\",\"prompt_id\":\"p\",\"events\":[{\"dt\":0,\"size\":5}],\"meta\":{}}\n"
      "{\"id\":\"a\",\"label\":\"target\",\"prompt_id\":\"q\",\"events\":[{\"dt\":0,\"size\":6}],\"meta\":{}}\n";
  EXPECT_THROW(parse_jsonl(dup), Error);
}

TEST(Jsonl, TruncatedFinalLineFails) {
  TempDir dir("jsonl-trunc");
  std::string text = to_jsonl(two_trace_dataset());
  text.resize(text.size() - 15);
  {
    std::ofstream f(dir / "t.jsonl", std::ios::binary);
    f << text;
  }
  try {
    read_dataset(dir / "t.jsonl");
    FAIL() << "expected parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, MissingFileIsNotFound) {
  try {
    read_dataset("/nonexistent/tlsleak/none.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNotFound);
  }
}

TEST(Trace, TotalsAndDuration) {
  const Trace t = make_trace("a", {{0, 10}, {0.25, 20}, {0.5, 5}});
  EXPECT_EQ(t.total_bytes(), 35);
  EXPECT_DOUBLE_EQ(t.duration(), 0.75);
}

TEST(Trace, ValidateRejectsEmptyEventsAndPrompt) {
  Trace t = make_trace("a", {});
  EXPECT_THROW(validate(t), Error);
  t = make_trace("a", {{0, 1}});
  t.prompt_id.clear();
  EXPECT_THROW(validate(t), Error);
}

Dataset grid_dataset(int target_prompts, int repeats, int noise) {
  Dataset ds;
  for (int p = 0; p < target_prompts; ++p) {
    for (int r = 0; r < repeats; ++r) {
      ds.traces.push_back(make_trace("t" + std::to_string(p) + "_" + std::to_string(r), {{0, 1}},
                                     Label::kTarget, "target-" + std::to_string(p)));
    }
  }
  for (int i = 0; i < noise; ++i) {
    ds.traces.push_back(make_trace("n" + std::to_string(i), {{0, 1}}));
  }
  return ds;
}

TEST(Split, HoldsOutTwentyPercentOfTargetPrompts) {
  const Dataset ds = grid_dataset(100, 100, 11716);
  const SplitResult s = split_dataset(ds, 0.2, 0.05, 3, 0.0);
  std::set<std::string> prompts;
  std::size_t test_targets = 0;
  const std::vector<Trace> test = select(ds, s.test);
  for (const Trace& t : test) {
    if (t.label == Label::kTarget) {
      ++test_targets;
      prompts.insert(t.prompt_id);
    }
  }
  EXPECT_EQ(prompts.size(), 20u);
  EXPECT_EQ(test_targets, 2000u);
  // 8000 target + 11716 noise remain: round(0.05 * 19716) = 986
  EXPECT_EQ(s.val.size(), 986u);
  EXPECT_EQ(s.train.size() + s.val.size(), 19716u);
}

TEST(Split, DefaultAlsoHoldsOutNoisePrompts) {
  const Dataset ds = grid_dataset(10, 5, 200);
  const SplitResult s = split_dataset(ds, 0.2, 0.05, 1);
  const auto test = select(ds, s.test);
  EXPECT_EQ(std::count_if(test.begin(), test.end(),
                          [](const Trace& t) { return t.label == Label::kNoise; }),
            40);
}

TEST(Split, PartitionPropertyOverRandomDatasets) {
  Rng rng(99);
  for (int round = 0; round < 100; ++round) {
    const int prompts = 2 + static_cast<int>(rng.below(30));
    Dataset ds;
    int serial = 0;
    for (int p = 0; p < prompts; ++p) {
      const auto reps = 1 + rng.below(6);
      for (std::uint64_t r = 0; r < reps; ++r) {
        ds.traces.push_back(make_trace("t" + std::to_string(serial++), {{0, 1}}, Label::kTarget,
                                       "tp" + std::to_string(p)));
      }
    }
    const auto noise = rng.below(50);
    for (std::uint64_t i = 0; i < noise; ++i) {
      ds.traces.push_back(make_trace("n" + std::to_string(i), {{0, 1}}, Label::kNoise,
                                     "np" + std::to_string(rng.below(10))));
    }
    const double holdout = 0.05 + 0.9 * rng.uniform();
    const double val = 0.01 + 0.5 * rng.uniform();
    const std::uint64_t seed = rng.next_u64();
    const SplitResult s = split_dataset(ds, holdout, val, seed);
    EXPECT_EQ(s, split_dataset(ds, holdout, val, seed));

    std::multiset<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    std::multiset<std::string> expected;
    for (const auto& t : ds.traces) expected.insert(t.id);
    ASSERT_EQ(all, expected);

    std::set<std::string> test_prompts, fit_prompts;
    for (const auto& t : select(ds, s.test)) {
      if (t.label == Label::kTarget) test_prompts.insert(t.prompt_id);
    }
    for (const auto* part : {&s.train, &s.val}) {
      for (const auto& t : select(ds, *part)) {
        if (t.label == Label::kTarget) fit_prompts.insert(t.prompt_id);
      }
    }
    for (const auto& p : test_prompts) EXPECT_FALSE(fit_prompts.contains(p)) << p;
    const auto want = static_cast<std::size_t>(std::ceil(holdout * prompts - 1e-9));
    EXPECT_EQ(test_prompts.size(), want);
  }
}

TEST(Split, Errors) {
  const Dataset one = grid_dataset(1, 5, 5);
  EXPECT_THROW(split_dataset(one, 0.2, 0.05, 0), Error);
  const Dataset ds = grid_dataset(5, 2, 5);
  EXPECT_THROW(split_dataset(ds, 0.0, 0.05, 0), Error);
  EXPECT_THROW(split_dataset(ds, 0.2, 1.0, 0), Error);
}

TEST(Perturb, HundredUniqueVariantsOfTenWordPrompt) {
  const std::string prompt = "Is there any way that money laundering could be legal?";
  const auto variants = perturb_prompt(prompt, 100, 5);
  ASSERT_EQ(variants.size(), 100u);
  EXPECT_EQ(std::set<std::string>(variants.begin(), variants.end()).size(), 100u);
  for (const auto& v : variants) {
    EXPECT_EQ(collapse_whitespace(v), prompt);
    const auto extra = std::count(v.begin(), v.end(), ' ') - std::count(prompt.begin(), prompt.end(), ' ');
    EXPECT_GT(extra, 0);
    EXPECT_EQ(v.size(), prompt.size() + static_cast<std::size_t>(extra));
  }
  EXPECT_EQ(perturb_prompt(prompt, 100, 5), variants);
}

TEST(Perturb, NoWhitespace) {
  EXPECT_THROW(perturb_prompt("laundering", 2, 0), Error);
  EXPECT_EQ(perturb_prompt("laundering", 1, 0), std::vector<std::string>{"laundering"});
}

TEST(Perturb, WordsNeverSplit) {
  Rng rng(4);
  for (int round = 0; round < 50; ++round) {
    std::string prompt = "w";
    const auto words = 2 + rng.below(8);
    for (std::uint64_t i = 1; i < words; ++i) prompt += std::string(1 + rng.below(2), ' ') + "word" + std::to_string(i);
    for (const auto& v : perturb_prompt(prompt, 10, rng.next_u64())) {
      EXPECT_EQ(collapse_whitespace(v), collapse_whitespace(prompt));
    }
  }
}

}  // namespace
}  // namespace tlsleak
