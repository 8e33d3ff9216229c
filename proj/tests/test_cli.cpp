#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "recal/calibrate_global.hpp"
#include "recal/calibrate_local.hpp"
#include "recal/cli.hpp"
#include "recal/metrics.hpp"
#include "recal/synth.hpp"
#include "recal/trace_io.hpp"
#include "support.hpp"

using namespace recal;
using nlohmann::json;
using testing_support::slurp;
using testing_support::spit;
using testing_support::TempDir;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "recal");
  return run_cli(args);
}

std::vector<json> read_lines(const std::string& path) {
  std::vector<json> out;
  std::istringstream in(slurp(path));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

std::string trace_line(const std::string& id, bool with_attention, const std::string& extra = "") {
  std::string s = R"({"id":")" + id +
                  R"(","submitted_code":"int a=0;","ground_truth_code":"int a=1;","generated_code":" int  a=1;\n",)"
                  R"("token_probs":[0.9,0.4],"embedding":[1.0,2.0])";
  if (with_attention) s += R"(,"attention":[[[1,0],[0.5,0.5]]])";
  return s + extra + "}\n";
}

}  // namespace

TEST(Cli, ScoreWritesOneLinePerTrace) {
  TempDir dir;
  spit(dir.file("t.jsonl"), trace_line("a", false) + trace_line("b", false) + trace_line("c", false));
  EXPECT_EQ(run({"score", "--traces", dir.file("t.jsonl"), "--score", "min", "--out", dir.file("s.jsonl")}), 0);
  const auto lines = read_lines(dir.file("s.jsonl"));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[1]["id"], "b");
  EXPECT_EQ(lines[1]["kind"], "min");
  EXPECT_EQ(lines[1]["score"], 0.4);
}

TEST(Cli, AttnWWithoutAttentionSkipsRecords) {
  TempDir dir;
  spit(dir.file("none.jsonl"), trace_line("a", false));
  EXPECT_EQ(run({"score", "--traces", dir.file("none.jsonl"), "--score", "attn_w", "--out", dir.file("s0.jsonl")}), 2);
  EXPECT_TRUE(read_lines(dir.file("s0.jsonl")).empty());

  spit(dir.file("mixed.jsonl"), trace_line("a", true) + trace_line("b", false) + trace_line("c", true));
  EXPECT_EQ(run({"score", "--traces", dir.file("mixed.jsonl"), "--score", "attn_w", "--out", dir.file("s1.jsonl")}), 2);
  const auto lines = read_lines(dir.file("s1.jsonl"));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0]["id"], "a");
  EXPECT_EQ(lines[1]["id"], "c");
  EXPECT_EQ(lines[0]["score"], 0.4);
}

TEST(Cli, Labels) {
  TempDir dir;
  const std::string same =
      R"({"id":"s","submitted_code":"x","ground_truth_code":"x","generated_code":"y","token_probs":[0.5]})"
      "\n";
  spit(dir.file("t.jsonl"), trace_line("a", false, R"(,"labels":{"cp":false})") + same);

  EXPECT_EQ(run({"labels", "--traces", dir.file("t.jsonl"), "--metric", "em", "--out", dir.file("em.jsonl")}), 0);
  const auto em = read_lines(dir.file("em.jsonl"));
  ASSERT_EQ(em.size(), 2u);
  EXPECT_EQ(em[0]["correct"], true);
  EXPECT_FALSE(em[0].contains("ep_value"));

  EXPECT_EQ(run({"labels", "--traces", dir.file("t.jsonl"), "--metric", "ep-plus", "--out", dir.file("ep.jsonl")}), 2);
  const auto ep = read_lines(dir.file("ep.jsonl"));
  ASSERT_EQ(ep.size(), 1u);
  EXPECT_EQ(ep[0]["id"], "a");
  EXPECT_EQ(ep[0]["metric"], "ep-plus");
  EXPECT_TRUE(ep[0].contains("ep_value"));

  EXPECT_EQ(run({"labels", "--traces", dir.file("t.jsonl"), "--metric", "cp", "--out", dir.file("cp.jsonl")}), 2);
  const auto cp = read_lines(dir.file("cp.jsonl"));
  ASSERT_EQ(cp.size(), 1u);
  EXPECT_EQ(cp[0]["correct"], false);
}

TEST(Cli, ParseErrorsExitOneAndWriteNothing) {
  TempDir dir;
  spit(dir.file("bad.jsonl"), trace_line("a", false) + "{oops\n");
  EXPECT_EQ(run({"score", "--traces", dir.file("bad.jsonl"), "--score", "min", "--out", dir.file("s.jsonl")}), 1);
  EXPECT_FALSE(std::filesystem::exists(dir.file("s.jsonl")));
  EXPECT_EQ(run({"score", "--traces", dir.file("missing.jsonl"), "--score", "min", "--out", dir.file("s.jsonl")}), 1);
  EXPECT_EQ(run({"score", "--traces", dir.file("bad.jsonl"), "--score", "bogus", "--out", dir.file("s.jsonl")}), 1);
  EXPECT_EQ(run({"no-such-command"}), 1);
  EXPECT_EQ(run({"--help"}), 0);
}

class CliPipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    SynthOptions options;
    options.count = 400;
    options.seed = 5;
    std::ostringstream out;
    write_traces(out, synthesize_traces(options));
    spit(dir.file("t.jsonl"), out.str());
    ASSERT_EQ(run({"score", "--traces", dir.file("t.jsonl"), "--score", "sl_norm", "--out", dir.file("s.jsonl")}), 0);
    ASSERT_EQ(run({"labels", "--traces", dir.file("t.jsonl"), "--metric", "em", "--out", dir.file("l.jsonl")}), 0);
  }
  TempDir dir;
};

TEST_F(CliPipeline, FitGlobalThenApplyMatchesLibrary) {
  ASSERT_EQ(run({"fit-global", "--scores", dir.file("s.jsonl"), "--labels", dir.file("l.jsonl"), "--l2", "0.5",
                 "--out", dir.file("g.json")}),
            0);
  const json model = json::parse(slurp(dir.file("g.json")));
  EXPECT_EQ(model["kind"], "global");
  EXPECT_EQ(model["score_kind"], "sl_norm");
  EXPECT_EQ(model["l2"], 0.5);
  const auto cal = global_calibrator_from_json(model);
  ASSERT_EQ(run({"apply", "--model", dir.file("g.json"), "--scores", dir.file("s.jsonl"), "--out", dir.file("c.jsonl")}), 0);
  for (const auto& line : read_lines(dir.file("c.jsonl"))) {
    EXPECT_EQ(line["calibrated"].get<double>(), predict_global(cal, line["score"].get<double>()));
  }
}

TEST_F(CliPipeline, ApplyRejectsMismatchedScoreKind) {
  ASSERT_EQ(run({"fit-global", "--scores", dir.file("s.jsonl"), "--labels", dir.file("l.jsonl"), "--out", dir.file("g.json")}), 0);
  ASSERT_EQ(run({"score", "--traces", dir.file("t.jsonl"), "--score", "avg", "--out", dir.file("avg.jsonl")}), 0);
  EXPECT_EQ(run({"apply", "--model", dir.file("g.json"), "--scores", dir.file("avg.jsonl"), "--out", dir.file("c.jsonl")}), 1);
}

TEST_F(CliPipeline, LocalModelNeedsEmbeddings) {
  ASSERT_EQ(run({"fit-local", "--traces", dir.file("t.jsonl"), "--scores", dir.file("s.jsonl"), "--labels",
                 dir.file("l.jsonl"), "--min-cluster-size", "50", "--min-samples", "5", "--backoff", "global",
                 "--n", "20", "--out", dir.file("m.json")}),
            0);
  EXPECT_EQ(json::parse(slurp(dir.file("m.json")))["kind"], "local");
  EXPECT_EQ(run({"apply", "--model", dir.file("m.json"), "--scores", dir.file("s.jsonl"), "--out", dir.file("c.jsonl")}), 1);
  EXPECT_FALSE(std::filesystem::exists(dir.file("c.jsonl")));

  std::ostringstream no_emb;
  for (auto t : load_traces(dir.file("t.jsonl"))) {
    t.embedding.reset();
    no_emb << serialize_trace(t) << "\n";
  }
  spit(dir.file("noemb.jsonl"), no_emb.str());
  EXPECT_EQ(run({"apply", "--model", dir.file("m.json"), "--scores", dir.file("s.jsonl"), "--traces",
                 dir.file("noemb.jsonl"), "--out", dir.file("c.jsonl")}),
            1);
  EXPECT_EQ(run({"apply", "--model", dir.file("m.json"), "--scores", dir.file("s.jsonl"), "--traces",
                 dir.file("t.jsonl"), "--out", dir.file("c.jsonl")}),
            0);
  EXPECT_EQ(read_lines(dir.file("c.jsonl")).size(), 400u);
}

TEST_F(CliPipeline, EvalWritesReportAndCsv) {
  ASSERT_EQ(run({"fit-global", "--scores", dir.file("s.jsonl"), "--labels", dir.file("l.jsonl"), "--out", dir.file("g.json")}), 0);
  ASSERT_EQ(run({"apply", "--model", dir.file("g.json"), "--scores", dir.file("s.jsonl"), "--out", dir.file("c.jsonl")}), 0);
  ASSERT_EQ(run({"eval", "--calibrated", dir.file("c.jsonl"), "--labels", dir.file("l.jsonl"), "--bins", "10", "--out",
                 dir.file("e.json"), "--csv", dir.file("e.csv")}),
            0);
  const json report = json::parse(slurp(dir.file("e.json")));
  EXPECT_EQ(report["n"], 400);
  EXPECT_FALSE(report.contains("note"));
  const std::string csv = slurp(dir.file("e.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  EXPECT_EQ(csv.rfind("index,lower,upper,count,mean_confidence,accuracy\n", 0), 0u);
}

TEST_F(CliPipeline, StatsReportsAllFields) {
  ASSERT_EQ(run({"stats", "--scores", dir.file("s.jsonl"), "--labels", dir.file("l.jsonl"), "--traces",
                 dir.file("t.jsonl"), "--out", dir.file("st.json")}),
            0);
  const json stats = json::parse(slurp(dir.file("st.json")));
  for (const char* key : {"median_skewness", "w1", "tau_b", "n_correct", "n_incorrect"}) EXPECT_TRUE(stats.contains(key));
  EXPECT_TRUE(stats["median_skewness"].is_number());
  EXPECT_EQ(stats["n_correct"].get<int>() + stats["n_incorrect"].get<int>(), 400);
}

TEST_F(CliPipeline, JoinDropsUnmatchedIds) {
  auto labels = read_lines(dir.file("l.jsonl"));
  labels.resize(100);
  std::string text;
  for (const auto& l : labels) text += l.dump() + "\n";
  spit(dir.file("l100.jsonl"), text);
  ASSERT_EQ(run({"fit-global", "--scores", dir.file("s.jsonl"), "--labels", dir.file("l100.jsonl"), "--out", dir.file("g.json")}), 0);
  EXPECT_EQ(json::parse(slurp(dir.file("g.json")))["train_meta"]["n"], 100);
}

TEST_F(CliPipeline, SingleCombinationGridEqualsFitLocalPlusEval) {
  ASSERT_EQ(run({"grid-search", "--traces", dir.file("t.jsonl"), "--scores", dir.file("s.jsonl"), "--labels",
                 dir.file("l.jsonl"), "--valid-traces", dir.file("t.jsonl"), "--valid-scores", dir.file("s.jsonl"),
                 "--valid-labels", dir.file("l.jsonl"), "--min-cluster-sizes", "75", "--min-samples-grid", "20",
                 "--backoffs", "uncalibrated", "--out", dir.file("gs.json")}),
            0);
  ASSERT_EQ(run({"fit-local", "--traces", dir.file("t.jsonl"), "--scores", dir.file("s.jsonl"), "--labels",
                 dir.file("l.jsonl"), "--min-cluster-size", "75", "--min-samples", "20", "--backoff", "uncalibrated",
                 "--out", dir.file("m.json")}),
            0);
  ASSERT_EQ(run({"apply", "--model", dir.file("m.json"), "--scores", dir.file("s.jsonl"), "--traces", dir.file("t.jsonl"),
                 "--out", dir.file("c.jsonl")}),
            0);
  const int code = run({"eval", "--calibrated", dir.file("c.jsonl"), "--labels", dir.file("l.jsonl"), "--out", dir.file("e.json")});
  ASSERT_TRUE(code == 0 || code == 3);
  const json grid = json::parse(slurp(dir.file("gs.json")));
  const json eval = json::parse(slurp(dir.file("e.json")));
  EXPECT_EQ(grid["best_report"]["ece"], eval["ece"]);
  EXPECT_EQ(grid["best_report"]["brier"], eval["brier"]);
  EXPECT_EQ(grid["best_report"]["bin_coverage"], eval["bin_coverage"]);
}

TEST_F(CliPipeline, GridSearchHashSplit) {
  ASSERT_EQ(run({"--threads", "4", "grid-search", "--traces", dir.file("t.jsonl"), "--scores", dir.file("s.jsonl"),
                 "--labels", dir.file("l.jsonl"), "--min-cluster-sizes", "50,75", "--min-samples-grid", "5",
                 "--out", dir.file("gs.json"), "--model-out", dir.file("best.json")}),
            0);
  const json grid = json::parse(slurp(dir.file("gs.json")));
  EXPECT_EQ(grid["n_valid"], 80);
  EXPECT_EQ(grid["n_train"], 320);
  EXPECT_EQ(grid["table"].size(), 4u);
  EXPECT_EQ(json::parse(slurp(dir.file("best.json")))["kind"], "local");
}

TEST(Cli, DegenerateEvalExitsThree) {
  TempDir dir;
  std::string scores, labels;
  for (int i = 0; i < 20; ++i) {
    scores += R"({"id":"i)" + std::to_string(i) + R"(","kind":"min","score":0.55})" + "\n";
    labels += R"({"id":"i)" + std::to_string(i) + R"(","metric":"em","correct":)" + (i % 2 ? "true" : "false") + "}\n";
  }
  spit(dir.file("s.jsonl"), scores);
  spit(dir.file("l.jsonl"), labels);
  EXPECT_EQ(run({"eval", "--calibrated", dir.file("s.jsonl"), "--labels", dir.file("l.jsonl"), "--out", dir.file("e.json")}), 3);
  const json report = json::parse(slurp(dir.file("e.json")));
  EXPECT_EQ(report["bin_coverage"], 1);
  EXPECT_TRUE(report["degenerate"].get<bool>());
  EXPECT_NE(report["note"].get<std::string>().find("ignored per protocol"), std::string::npos);
}

TEST(Cli, SynthIsSeedDeterministic) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--n", "50", "--seed", "9", "--out", dir.file("a.jsonl")}), 0);
  ASSERT_EQ(run({"synth", "--n", "50", "--seed", "9", "--out", dir.file("b.jsonl")}), 0);
  ASSERT_EQ(run({"synth", "--n", "50", "--seed", "10", "--out", dir.file("c.jsonl")}), 0);
  EXPECT_EQ(slurp(dir.file("a.jsonl")), slurp(dir.file("b.jsonl")));
  EXPECT_NE(slurp(dir.file("a.jsonl")), slurp(dir.file("c.jsonl")));
  EXPECT_EQ(load_traces(dir.file("a.jsonl")).size(), 50u);
}
