// SPDX-License-Identifier: Apache-2.0
#include <recheck/cli.hpp>
#include <recheck/eval.hpp>

#include <test_support.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace recheck;
namespace fs = std::filesystem;

namespace
{

struct Result
{
    int code = -1;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args)
{
    args.insert(args.begin(), "recheck");
    std::vector<const char*> argv;
    for (const auto& a: args)
        argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    Result r;
    r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path fresh_dir(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("recheck_cli_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

const std::string image = rt::source_path("fixtures/images/gradient_64x48.png");
const std::string fork_backend = "scripted:" + rt::source_path("fixtures/fork/fixture.json");

} // namespace

TEST(Cli, RunWritesTraceAndExitsZero)
{
    const auto dir = fresh_dir("run");
    const auto r = invoke({"run", "--backend", fork_backend, "--image", image, "--question",
                           "Is there a fork in the image?", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.substr(0, 3), "No\n");
    const auto trace = json::parse(slurp(dir / "run.trace.json")).get<RefinementTrace>();
    EXPECT_EQ(trace.final_response, "No");
    EXPECT_EQ(trace.stop_reason, StopReason::converged_below_threshold);
}

TEST(Cli, MissingBackendIsAUsageError)
{
    const auto r = invoke({"run", "--image", image, "--question", "Is there a fork?"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--backend"), std::string::npos);
    EXPECT_EQ(invoke({}).code, 1);
    EXPECT_EQ(invoke({"run", "--backend", "telepathy:1", "--image", image, "--question", "q"}).code, 1);
}

TEST(Cli, UnscriptedQueryIsABackendFailure)
{
    const auto dir = fresh_dir("miss");
    const auto r = invoke({"run", "--backend", fork_backend, "--image", image, "--question",
                           "Is there a giraffe in the image?", "--out", dir.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("unscripted"), std::string::npos);
}

TEST(Cli, MissingImageIsAUsageError)
{
    const auto r = invoke({"run", "--backend", fork_backend, "--image", "/nonexistent.png", "--question", "q"});
    EXPECT_EQ(r.code, 1);
}

TEST(Cli, BenchWritesMetricsAndIsReproducible)
{
    const auto a = fresh_dir("bench_a");
    const auto b = fresh_dir("bench_b");
    const std::vector<std::string> common {"bench", "--backend", "synth:42", "--n", "20", "--split", "popular"};
    auto args_a = common;
    args_a.insert(args_a.end(), {"--out", a.string()});
    auto args_b = common;
    args_b.insert(args_b.end(), {"--out", b.string(), "--parallel", "3"});
    const auto ra = invoke(args_a);
    ASSERT_EQ(ra.code, 0) << ra.err;
    ASSERT_EQ(invoke(args_b).code, 0);

    const auto metrics = json::parse(slurp(a / "metrics.json"));
    for (const char* key: {"accuracy", "precision", "recall", "f1", "yes_ratio", "tp", "fp", "tn", "fn"})
        EXPECT_TRUE(metrics.contains(key)) << key;
    EXPECT_EQ(metrics.at("valid").get<int>(), 20);
    EXPECT_NO_THROW((void) metrics.get<eval::PopeMetrics>());
    for (const char* file: {"metrics.json", "traces.json", "report.md", "report.json"})
        EXPECT_EQ(slurp(a / file), slurp(b / file)) << file;
}

TEST(Cli, BenchNeedsCasesForNonSynthBackends)
{
    EXPECT_EQ(invoke({"bench", "--backend", fork_backend, "--out", fresh_dir("nocases").string()}).code, 1);
}

TEST(Cli, ReportRendersStoredTraces)
{
    const auto dir = fresh_dir("report");
    ASSERT_EQ(invoke({"run", "--backend", fork_backend, "--image", image, "--question",
                      "Is there a fork in the image?", "--out", dir.string()})
                  .code,
              0);
    const auto r = invoke({"report", dir.string(), "--format", "markdown", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("### Convergence"), std::string::npos);
    EXPECT_EQ(slurp(dir / "report.md"), r.out);
    EXPECT_EQ(invoke({"report", dir.string(), "--format", "xml"}).code, 1);
}

TEST(Cli, ConfigFileOverridesDefaultsAndIsValidated)
{
    const auto dir = fresh_dir("config");
    fs::create_directories(dir);
    {
        std::ofstream bad(dir / "bad.json");
        bad << R"({"alpha": [0.5, 0.5, 0.5, 0.5]})";
    }
    const auto r = invoke({"run", "--backend", fork_backend, "--image", image, "--question",
                           "Is there a fork in the image?", "--config", (dir / "bad.json").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("sum to 1"), std::string::npos);
}

TEST(Cli, HelpExitsZero)
{
    const auto r = invoke({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("bench"), std::string::npos);
}
