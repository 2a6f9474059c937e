#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <regex>
#include <sys/wait.h>

#ifndef PERFTS_CLI
#error "PERFTS_CLI must point at the perfts executable"
#endif

namespace {

struct Result {
    int code = -1;
    std::string out, err;
};

// Runs the CLI with `args` (shell words) inside `dir`.
Result run(const testutil::TempDir& dir, const std::string& args) {
    auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    std::string cmd = "cd '" + dir.path().string() + "' && '" PERFTS_CLI "' " + args + " >'" + out.string() + "' 2>'" +
                      err.string() + "'";
    int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = testutil::read_file(out);
    r.err = testutil::read_file(err);
    return r;
}

const char* kQuickTrain = "--epochs 3 --f-hidden 4 --g-hidden 4 -L 8 -H 4";

}  // namespace

TEST(Cli, SynthThenAlignRecoversPlantedDelay) {
    testutil::TempDir dir;
    auto s = run(dir, "synth --d2 3 --sigma 0 --seed 7 -o data");
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "data/data.csv"));
    EXPECT_TRUE(std::filesystem::exists(dir / "data/dataset.json"));
    auto a = run(dir, "align --data data -o alignment.json");
    ASSERT_EQ(a.code, 0) << a.err;
    std::smatch m;
    ASSERT_TRUE(std::regex_search(a.out, m, std::regex(R"(\nx\s+(\d+)\s)"))) << a.out;
    EXPECT_EQ(m[1], "5");
    auto j = perfts::data::read_json_file(dir / "alignment.json");
    EXPECT_EQ(j["features"][0]["tau"], 5);
}

TEST(Cli, GradcheckPasses) {
    testutil::TempDir dir;
    auto r = run(dir, "gradcheck --configs 8 --seed 2");
    EXPECT_EQ(r.code, 0) << r.err;
    std::smatch m;
    ASSERT_TRUE(std::regex_search(r.out, m, std::regex(R"(\nmax_rel_error=([0-9.e+-]+))")));
    EXPECT_LT(std::stod(m[1]), 1e-4);
}

TEST(Cli, ReportDetectsTamperedRecords) {
    testutil::TempDir dir;
    ASSERT_EQ(run(dir, "synth --T 300 --seed 1 --d1 1 --d2 2 -H 4 -L 8 -o data").code, 0);
    auto e = run(dir, std::string("eval --data data ") + kQuickTrain + " -o run");
    ASSERT_EQ(e.code, 0) << e.err;
    auto ok = run(dir, "report --run run");
    EXPECT_EQ(ok.code, 0) << ok.err;
    EXPECT_NE(ok.out.find("summary verified"), std::string::npos);

    // Change one prediction value in place.
    std::string csv = testutil::read_file(dir / "run/records.csv");
    auto line2 = csv.find('\n', csv.find('\n') + 1);
    auto comma = csv.rfind(',', line2);
    csv.replace(comma + 1, line2 - comma - 1, "12345.678");
    testutil::write_file(dir / "run/records.csv", csv);
    auto bad = run(dir, "report --run run");
    EXPECT_NE(bad.code, 0);
    EXPECT_NE(bad.err.find("aggregate mismatch"), std::string::npos) << bad.err;
}

TEST(Cli, ManifestReplaysTheRun) {
    testutil::TempDir dir;
    ASSERT_EQ(run(dir, "synth --T 300 --seed 4 --d1 1 --d2 2 -H 4 -L 8 -o data").code, 0);
    ASSERT_EQ(run(dir, std::string("eval --data data --seed 9 ") + kQuickTrain + " -o first").code, 0);
    for (const char* f : {"config.json", "manifest.json", "alignment.json", "records.csv", "summary.json", "plot.csv"})
        EXPECT_TRUE(std::filesystem::exists(dir / "first" / f)) << f;
    auto replay = run(dir, "eval --config first/config.json -o second");
    ASSERT_EQ(replay.code, 0) << replay.err;
    EXPECT_EQ(testutil::read_file(dir / "first/records.csv"), testutil::read_file(dir / "second/records.csv"));
    auto a = perfts::data::read_json_file(dir / "first/config.json");
    auto b = perfts::data::read_json_file(dir / "second/config.json");
    a.erase("output");
    b.erase("output");
    EXPECT_EQ(a, b);
}

TEST(Cli, RealtimeAndOracleRuns) {
    testutil::TempDir dir;
    ASSERT_EQ(run(dir, "synth --T 200 --seed 2 --d1 1 --d2 2 -H 4 -L 8 -o data").code, 0);
    auto rt = run(dir, std::string("realtime --data data ") + kQuickTrain +
                           " --start 170 --stride 8 --retrain-epochs 1 -o rt");
    ASSERT_EQ(rt.code, 0) << rt.err;
    EXPECT_EQ(run(dir, "report --run rt").code, 0);
    auto man = perfts::data::read_json_file(dir / "rt/manifest.json");
    EXPECT_EQ(man["schedule"].size(), 4u);  // 170, 178, 186, 194

    auto orc = run(dir, std::string("oracle --data data ") + kQuickTrain + " -o orc");
    ASSERT_EQ(orc.code, 0) << orc.err;
    auto sum = perfts::data::read_json_file(dir / "orc/summary.json");
    for (const char* m : {"erm", "fps", "oracle"}) EXPECT_TRUE(sum["test"].contains(m)) << m;
}

TEST(Cli, TrainWritesCheckpoints) {
    testutil::TempDir dir;
    ASSERT_EQ(run(dir, "synth --T 200 --seed 2 --d1 1 --d2 2 -H 4 -L 8 -o data").code, 0);
    auto r = run(dir, std::string("train --method fps --data data ") + kQuickTrain + " -o tr");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "tr/manifest.json"));
    EXPECT_FALSE(std::filesystem::is_empty(dir / "tr/checkpoints"));
}

TEST(Cli, ErrorsUseDistinctExitCodes) {
    testutil::TempDir dir;
    auto usage = run(dir, "eval --no-such-flag");
    EXPECT_EQ(usage.code, 2);
    EXPECT_TRUE(std::regex_search(usage.err, std::regex(R"(^error kind=usage code=2 message=.+)")));
    EXPECT_EQ(run(dir, "frobnicate").code, 2);
    auto io = run(dir, "eval --data missing.csv -o out");
    EXPECT_EQ(io.code, 3) << io.err;
    testutil::write_file(dir / "bad.csv", "time,y,x\n0,1\n");
    testutil::write_file(dir / "bad.json", R"({"target": "y", "performative": ["x"]})");
    auto data = run(dir, "align --data bad.csv --dataset-config bad.json");
    EXPECT_EQ(data.code, 4) << data.err;
    testutil::write_file(dir / "cfg.json", R"({"L": 8, "unknown_key": 1})");
    EXPECT_EQ(run(dir, "eval --config cfg.json -o out").code, 2);
    auto unstable = run(dir, "synth --a 1.5 -o u");
    EXPECT_EQ(unstable.code, 6) << unstable.err;
}

TEST(Cli, HelpEnumeratesEveryFlag) {
    testutil::TempDir dir;
    const std::vector<std::string> run_flags{"--config", "--data", "--dataset-config", "--synthetic", "--lookback",
                                             "--horizon", "--metric", "--seed", "--ensemble", "--epochs", "--lr",
                                             "--batch-size", "--optimizer", "--clip", "--lambda1", "--lambda2",
                                             "--patience", "--f-hidden", "--g-hidden", "--two-phase",
                                             "--pretrain-epochs", "--output"};
    std::map<std::string, std::vector<std::string>> expected{
        {"synth",
         {"--T", "--d1", "--d2", "--a", "--b", "--c", "--g", "--sigma", "--sigma-x", "--snr", "--seed", "--burn-in",
          "--flip-step", "--flip-coupling", "--horizon", "--lookback", "--output"}},
        {"align", {"--data", "--dataset-config", "--synthetic", "--lookback", "--horizon", "--metric", "--output"}},
        {"train", run_flags},
        {"eval", run_flags},
        {"oracle", run_flags},
        {"realtime", run_flags},
        {"gradcheck", {"--configs", "--seed"}},
        {"report", {"--run", "--records", "--summary"}}};
    expected["train"].push_back("--method");
    for (const char* f : {"--methods"}) {
        expected["eval"].push_back(f);
        expected["realtime"].push_back(f);
    }
    for (const char* f : {"--start", "--stride", "--retrain-epochs", "--val-fraction", "--cold-start", "--frozen-tau"})
        expected["realtime"].push_back(f);

    auto top = run(dir, "--help");
    EXPECT_EQ(top.code, 0);
    EXPECT_NE(top.out.find("Exit codes"), std::string::npos);
    for (const auto& [cmd, flags] : expected) {
        EXPECT_NE(top.out.find(cmd), std::string::npos) << cmd;
        auto h = run(dir, cmd + " --help");
        EXPECT_EQ(h.code, 0) << cmd;
        std::set<std::string> listed;
        std::regex flag(R"((--[a-zA-Z0-9-]+))");
        for (auto it = std::sregex_iterator(h.out.begin(), h.out.end(), flag); it != std::sregex_iterator(); ++it)
            listed.insert((*it)[1]);
        listed.erase("--help");
        std::set<std::string> want(flags.begin(), flags.end());
        EXPECT_EQ(listed, want) << cmd;
    }
}
