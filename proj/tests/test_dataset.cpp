#include <gtest/gtest.h>

#include "biasprobe/dataset.hpp"
#include "support/temp_dir.hpp"

using namespace biasprobe;

namespace {

std::string record(const std::string& id, const std::string& gold = "A", bool focal = true) {
  nlohmann::json j = {{"id", id},
                      {"question", "Is the following sentence plausible? \"" + id + " scored.\""},
                      {"option_a", "plausible"},
                      {"option_b", "implausible"},
                      {"gold", gold}};
  if (focal) j["focal_statement"] = id + " scored";
  return j.dump();
}

std::string corpus_text(std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += record("s" + std::to_string(i), i % 3 ? "A" : "B") + "\n";
  return out;
}

}  // namespace

TEST(LoadBbh, LoadsPaperSizedTaskFiles) {
  TempDir dir;
  auto sports = dir.write("sports.jsonl", corpus_text(300));
  auto causal = dir.write("causal.jsonl", corpus_text(160));
  auto r1 = load_bbh(sports, Task::sports_understanding);
  auto r2 = load_bbh(causal, Task::causal_judgment);
  EXPECT_EQ(r1.samples.size(), 300u);
  EXPECT_EQ(r2.samples.size(), 160u);
  EXPECT_TRUE(r1.rejected.empty());
  EXPECT_EQ(r2.samples.front().task, Task::causal_judgment);
  EXPECT_EQ(r1.samples[0].id, "s0");
  EXPECT_EQ(r1.samples[299].id, "s299");
}

TEST(LoadBbh, EmptyFileYieldsEmptyListWithWarning) {
  TempDir dir;
  auto r = load_bbh(dir.write("empty.jsonl", ""), Task::navigate);
  EXPECT_TRUE(r.samples.empty());
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("empty"), std::string::npos);
}

TEST(LoadBbh, MalformedRecordRejectedWithLineNumber) {
  TempDir dir;
  std::string text = record("a") + "\n" + "{not json\n" + R"({"id":"c","question":"q","option_a":"x","option_b":"y","gold":"C"})" +
                     "\n" + record("d") + "\n";
  auto r = load_bbh(dir.write("bad.jsonl", text), Task::sports_understanding);
  ASSERT_EQ(r.rejected.size(), 2u);
  EXPECT_EQ(r.rejected[0].line, 2u);
  EXPECT_EQ(r.rejected[1].line, 3u);
  EXPECT_EQ(r.rejected[1].id, "c");
  EXPECT_EQ(r.samples.size(), 2u);
  EXPECT_THROW(r.require_clean("bad.jsonl"), Error);
}

TEST(LoadBbh, DuplicateIdFailsTheLoad) {
  TempDir dir;
  auto p = dir.write("dup.jsonl", record("x") + "\n" + record("x") + "\n");
  try {
    load_bbh(p, Task::sports_understanding);
    FAIL() << "expected duplicate id error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate id 'x'"), std::string::npos);
  }
}

TEST(LoadBbh, IdenticalOptionsAndEmptyQuestionRejected) {
  TempDir dir;
  std::string text = R"({"id":"a","question":"q","option_a":"same","option_b":"same","gold":"A"})" "\n"
                     R"({"id":"b","question":"  ","option_a":"x","option_b":"y","gold":"A"})" "\n";
  auto r = load_bbh(dir.write("c.jsonl", text), Task::navigate);
  ASSERT_EQ(r.rejected.size(), 2u);
  EXPECT_EQ(r.rejected[0].reason, "option texts are identical");
  EXPECT_EQ(r.rejected[1].reason, "empty question");
}

TEST(LoadBbh, LoadingIsIdempotentAndOrderPreserving) {
  TempDir dir;
  auto p = dir.write("s.jsonl", corpus_text(50));
  auto a = load_bbh(p, Task::sports_understanding).samples;
  auto b = load_bbh(p, Task::sports_understanding).samples;
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].id, "s" + std::to_string(i));
}

TEST(LoadFinqa, MapsYesNoAndBuildsContext) {
  TempDir dir;
  std::string text =
      R"({"id":"f1","question":"Did revenue grow?","gold":"Yes","pre_text":["Revenue rose."],"table":[["item","2019","2020"],["revenue","10","12"]],"post_text":"End."})"
      "\n"
      R"({"id":"f2","question":"Did costs grow?","gold":" no ","context":"costs: 5"})"
      "\n";
  auto r = load_finqa(dir.write("fin.jsonl", text));
  ASSERT_EQ(r.samples.size(), 2u);
  EXPECT_EQ(r.samples[0].gold, Letter::A);
  EXPECT_EQ(r.samples[1].gold, Letter::B);
  EXPECT_EQ(r.samples[0].option_a_text, "Yes");
  EXPECT_EQ(r.samples[0].option_b_text, "No");
  EXPECT_EQ(*r.samples[0].context_text, "Revenue rose.\nitem: revenue; 2019: 10; 2020: 12\nEnd.");
  EXPECT_EQ(*r.samples[1].context_text, "costs: 5");
}

TEST(LoadFinqa, NonYesNoGoldRejectedWithId) {
  TempDir dir;
  auto r = load_finqa(dir.write("fin.jsonl", R"({"id":"f9","question":"q?","gold":"maybe","context":"c"})" "\n"));
  ASSERT_EQ(r.rejected.size(), 1u);
  EXPECT_EQ(r.rejected[0].id, "f9");
  EXPECT_NE(r.rejected[0].reason.find("f9"), std::string::npos);
}

TEST(LoadFinqa, CuratedSubsetOf144) {
  TempDir dir;
  std::string text;
  for (int i = 0; i < 144; ++i)
    text += nlohmann::json{{"id", "fin" + std::to_string(i)},
                           {"question", "Question " + std::to_string(i) + "?"},
                           {"gold", i % 2 ? "Yes" : "No"},
                           {"context", "x: 1"}}
                .dump() +
            "\n";
  EXPECT_EQ(load_finqa(dir.write("fin.jsonl", text)).samples.size(), 144u);
}

TEST(LoadFinqa, YesNoMappingIsABijection) {
  ASSERT_EQ(yes_no_to_letter("Yes"), Letter::A);
  ASSERT_EQ(yes_no_to_letter("No"), Letter::B);
  for (Letter l : {Letter::A, Letter::B}) EXPECT_EQ(yes_no_to_letter(letter_to_yes_no(l)), l);
  EXPECT_NE(*yes_no_to_letter("yes"), *yes_no_to_letter("no"));
}

TEST(LinearizeTable, HeaderValueClausesJoinedBySemicolons) {
  EXPECT_EQ(linearize_table({{"year", "sales"}, {"2019", "5"}, {"2020", ""}}), "year: 2019; sales: 5; year: 2020");
  EXPECT_EQ(linearize_table({}), "");
}

TEST(ValidateCorpus, CleanCorpusReportsAllOk) {
  auto samples = make_synthetic_corpus(300, Task::sports_understanding, std::nullopt, 3);
  auto rep = validate_corpus(samples);
  EXPECT_EQ(rep.per_task[Task::sports_understanding].ok, 300u);
  EXPECT_EQ(rep.per_task[Task::sports_understanding].defects, 0u);
  EXPECT_TRUE(rep.clean());
}

TEST(ValidateCorpus, FlagsDuplicatesAndMissingFocal) {
  auto samples = make_synthetic_corpus(5, Task::sports_understanding, Letter::A);
  samples[3].id = samples[1].id;
  samples[4].focal_statement.reset();
  auto rep = validate_corpus(samples);
  ASSERT_EQ(rep.duplicate_ids.size(), 1u);
  EXPECT_EQ(rep.duplicate_ids[0], samples[1].id);
  ASSERT_EQ(rep.availability_ineligible.size(), 1u);
  EXPECT_EQ(rep.availability_ineligible[0], samples[4].id);
  EXPECT_EQ(rep.per_task[Task::sports_understanding].missing_focal, 1u);
}

// Reference checker for availability eligibility, applied independently of
// validate_corpus.
TEST(ValidateCorpus, AvailabilityIneligibleMatchesReferenceChecker) {
  auto samples = make_synthetic_corpus(40, Task::sports_understanding, std::nullopt, 9);
  std::mt19937 rng(4);
  for (auto& s : samples)
    if (rng() % 4 == 0) s.focal_statement.reset();
  std::vector<std::string> expected;
  for (const auto& s : samples)
    if (!s.focal_statement.has_value()) expected.push_back(s.id);
  EXPECT_EQ(validate_corpus(samples).availability_ineligible, expected);
}

// Property: randomized corruptions never slip through the loader.
TEST(LoadBbh, RandomlyCorruptedRecordsNeverLoadAsInvalidSamples) {
  TempDir dir;
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    nlohmann::json j = {{"id", "r" + std::to_string(trial)},
                        {"question", "q"},
                        {"option_a", "x"},
                        {"option_b", "y"},
                        {"gold", "A"}};
    switch (rng() % 7) {
      case 0: j.erase("question"); break;
      case 1: j["gold"] = "Z"; break;
      case 2: j["option_b"] = "x"; break;
      case 3: j["question"] = ""; break;
      case 4: j["gold"] = 3; break;
      case 5: j["option_a"] = nullptr; break;
      default: break;  // valid
    }
    auto r = load_bbh(dir.write("p.jsonl", j.dump() + "\n"), Task::navigate);
    EXPECT_EQ(r.samples.size() + r.rejected.size(), 1u);
    for (const auto& s : r.samples) {
      EXPECT_FALSE(detail::trim(s.question_text).empty());
      EXPECT_NE(s.option_a_text, s.option_b_text);
      EXPECT_FALSE(s.option_a_text.empty());
    }
  }
}

TEST(ConvertBbh, SportsUpstreamBecomesPlausibleImplausibleWithFocal) {
  std::string upstream = R"({"examples":[
    {"input":"Is the following sentence plausible? \"Derek Carr hit the screen pass in the Superbowl.\"","target":"no"},
    {"input":"Is the following sentence plausible? \"Joao Moutinho caught the screen pass in the NFC championship.\"","target":"yes"}]})";
  auto out = convert_bbh_upstream(upstream, Task::sports_understanding);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].id, "sports_understanding-0001");
  EXPECT_EQ(out[0].gold, Letter::B);
  EXPECT_EQ(*out[0].focal_statement, "Derek Carr hit the screen pass in the Superbowl");
  EXPECT_EQ(out[0].option_a_text, "plausible");
}

TEST(ConvertBbh, OptionsBlockStrippedForYesNoTasks) {
  std::string upstream =
      R"({"examples":[{"input":"If you follow these instructions, do you return to the starting point? Take 1 step.\nOptions:\n- Yes\n- No","target":"No"}]})";
  auto out = convert_bbh_upstream(upstream, Task::navigate);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].question_text, "If you follow these instructions, do you return to the starting point? Take 1 step.");
  EXPECT_EQ(out[0].gold, Letter::B);
  EXPECT_FALSE(out[0].focal_statement);
}
