// End-to-end tests of the psf binary: spawns the real executable and checks
// outputs, file formats, and exit codes.

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "psf/measurement.hpp"
#include "psf/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    const std::string cmd = std::string(PSF_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    CmdResult res;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return res;
    while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) res.output.append(buf.data(), n);
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("psf_cli_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GenerateWritesExpectedShapeAndIsByteDeterministic) {
    const std::string args = "generate --buses 6 --steps 2000 --seed 7 --out " + path("a");
    ASSERT_EQ(run_cli(args).exit_code, 0);

    std::ifstream is(path("a") + "/series.csv");
    std::string line;
    std::size_t rows = 0, cols = 0;
    while (std::getline(is, line)) {
        if (rows == 0) {
            cols = 1 + std::count(line.begin(), line.end(), ',');
        }
        ++rows;
    }
    EXPECT_EQ(rows, 2001u); // header + 2000 rows
    EXPECT_EQ(cols, 13u);   // t + 12 state columns

    ASSERT_EQ(run_cli("generate --buses 6 --steps 2000 --seed 7 --out " + path("b")).exit_code, 0);
    EXPECT_EQ(slurp(path("a") + "/series.csv"), slurp(path("b") + "/series.csv"));
}

TEST_F(CliTest, GenerateRejectsZeroSteps) {
    EXPECT_EQ(run_cli("generate --steps 0 --out " + path("x")).exit_code, 2);
}

TEST_F(CliTest, TrainWritesReportWithFiniteTestNrmse) {
    ASSERT_EQ(run_cli("generate --buses 2 --steps 200 --seed 5 --out " + path("d")).exit_code, 0);
    const CmdResult r = run_cli("train --data " + path("d") + "/series.csv" +
                                " --arch bigru --seq-len 5 --horizon 2 --hidden 6 --depth 1" +
                                " --epochs 2 --quiet --seed 3 --out " + path("m"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const json report = json::parse(slurp(path("m") + "/report.json"));
    EXPECT_TRUE(report.at("test_nrmse").is_number());
    EXPECT_TRUE(std::isfinite(report.at("test_nrmse").get<double>()));
    EXPECT_EQ(report.at("seed").get<int>(), 3);
}

TEST_F(CliTest, TrainAcceptsAllPaperSequenceLengths) {
    ASSERT_EQ(run_cli("generate --buses 2 --steps 600 --seed 6 --out " + path("d")).exit_code, 0);
    for (int l : {5, 10, 15, 20}) {
        const CmdResult r = run_cli("train --data " + path("d") + "/series.csv" +
                                    " --arch rnn --seq-len " + std::to_string(l) +
                                    " --horizon 1 --hidden 4 --depth 1 --epochs 1 --quiet" +
                                    " --out " + path("m" + std::to_string(l)));
        EXPECT_EQ(r.exit_code, 0) << "l=" << l << "\n" << r.output;
    }
}

TEST_F(CliTest, CorruptCsvRowFailsWithParseExitNamingLine) {
    std::ofstream os(path("bad.csv"));
    os << "t,x_r_1,x_i_1\n0,0.9,0.1\n1,not_a_number,0.2\n";
    os.close();
    const CmdResult r = run_cli("train --data " + path("bad.csv") + " --epochs 1 --quiet --out " +
                                path("m"));
    EXPECT_EQ(r.exit_code, 3);
    EXPECT_NE(r.output.find("line 3"), std::string::npos) << r.output;
}

TEST_F(CliTest, EvaluateReproducesReportTestNrmseExactly) {
    ASSERT_EQ(run_cli("generate --buses 2 --steps 250 --seed 9 --out " + path("d")).exit_code, 0);
    ASSERT_EQ(run_cli("train --data " + path("d") + "/series.csv --arch gru --seq-len 4" +
                      " --horizon 2 --hidden 5 --depth 1 --epochs 2 --quiet --seed 4 --out " +
                      path("m"))
                  .exit_code,
              0);
    const CmdResult r = run_cli("evaluate --checkpoint " + path("m") + "/checkpoint.bin" +
                                " --data " + path("d") + "/series.csv --out " + path("e"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const json report = json::parse(slurp(path("m") + "/report.json"));
    const json eval = json::parse(slurp(path("e") + "/eval.json"));
    EXPECT_EQ(eval.at("overall_nrmse").get<double>(), report.at("test_nrmse").get<double>());
}

TEST_F(CliTest, EvaluateMissingCheckpointExitsFour) {
    ASSERT_EQ(run_cli("generate --buses 2 --steps 100 --seed 2 --out " + path("d")).exit_code, 0);
    EXPECT_EQ(run_cli("evaluate --checkpoint " + path("nope.bin") + " --data " + path("d") +
                      "/series.csv --out " + path("e"))
                  .exit_code,
              4);
}

TEST_F(CliTest, EvaluateDimensionMismatchExitsFour) {
    ASSERT_EQ(run_cli("generate --buses 2 --steps 200 --seed 2 --out " + path("d2")).exit_code, 0);
    ASSERT_EQ(run_cli("generate --buses 3 --steps 200 --seed 2 --out " + path("d3")).exit_code, 0);
    ASSERT_EQ(run_cli("train --data " + path("d2") + "/series.csv --seq-len 4 --horizon 1" +
                      " --hidden 4 --depth 1 --epochs 1 --quiet --out " + path("m"))
                  .exit_code,
              0);
    const CmdResult r = run_cli("evaluate --checkpoint " + path("m") + "/checkpoint.bin" +
                                " --data " + path("d3") + "/series.csv --out " + path("e"));
    EXPECT_EQ(r.exit_code, 4);
    EXPECT_NE(r.output.find("dim"), std::string::npos);
}

TEST_F(CliTest, ForecastEmitsHorizonRows) {
    ASSERT_EQ(run_cli("generate --buses 2 --steps 150 --seed 8 --out " + path("d")).exit_code, 0);
    ASSERT_EQ(run_cli("train --data " + path("d") + "/series.csv --seq-len 5 --horizon 2" +
                      " --hidden 4 --depth 1 --epochs 1 --quiet --out " + path("m"))
                  .exit_code,
              0);
    const CmdResult r = run_cli("forecast --checkpoint " + path("m") + "/checkpoint.bin" +
                                " --data " + path("d") + "/series.csv --horizon 50 --out " +
                                path("f"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const psf::StateSeries fc = psf::read_state_series_csv_file(path("f") + "/forecast.csv");
    EXPECT_EQ(fc.steps(), 50u);
    EXPECT_EQ(fc.bus_count, 2u);
}

TEST_F(CliTest, TrainIsByteDeterministicUpToWallClock) {
    ASSERT_EQ(run_cli("generate --buses 2 --steps 220 --seed 12 --out " + path("d")).exit_code, 0);
    const std::string train_args = "train --data " + path("d") + "/series.csv --arch bigru" +
                                   " --seq-len 5 --horizon 2 --hidden 5 --depth 2 --epochs 3" +
                                   " --quiet --seed 77 --out ";
    ASSERT_EQ(run_cli(train_args + path("r1")).exit_code, 0);
    ASSERT_EQ(run_cli(train_args + path("r2")).exit_code, 0);
    EXPECT_EQ(slurp(path("r1") + "/checkpoint.bin"), slurp(path("r2") + "/checkpoint.bin"));

    json a = json::parse(slurp(path("r1") + "/report.json"));
    json b = json::parse(slurp(path("r2") + "/report.json"));
    a["wall_clock_seconds"] = 0.0; // timing is the one nondeterministic field
    b["wall_clock_seconds"] = 0.0;
    EXPECT_EQ(a.dump(), b.dump());
}

TEST_F(CliTest, GradcheckPassesAndThresholdZeroFails) {
    const CmdResult ok = run_cli("gradcheck --arch gru --trials 3 --seed 5");
    EXPECT_EQ(ok.exit_code, 0) << ok.output;
    EXPECT_NE(ok.output.find("PASS"), std::string::npos);
    const CmdResult bad = run_cli("gradcheck --arch gru --trials 1 --threshold 0");
    EXPECT_EQ(bad.exit_code, 1);
    EXPECT_NE(bad.output.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, BenchmarkEmitsTableShapedCsv) {
    ASSERT_EQ(run_cli("generate --buses 2 --steps 250 --seed 13 --out " + path("d")).exit_code, 0);
    const CmdResult r = run_cli("benchmark --data " + path("d") + "/series.csv" +
                                " --archs rnn,bigru --seq-lens 4,6 --reps 2 --epochs 1" +
                                " --horizon 1 --hidden 4 --depth 1 --quiet --jobs 2 --out " +
                                path("b"));
    ASSERT_EQ(r.exit_code, 0) << r.output;

    std::ifstream table(path("b") + "/benchmark.csv");
    std::string line;
    std::getline(table, line);
    EXPECT_EQ(line, "model,l=4,l=6");
    std::size_t rows = 0;
    while (std::getline(table, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2);
    }
    EXPECT_EQ(rows, 2u); // one per architecture

    std::ifstream log(path("b") + "/benchmark_runs.csv");
    std::getline(log, line);
    EXPECT_EQ(line, "run_index,arch,seq_len,rep,seed,test_nrmse,stopped_epoch,wall_clock_seconds");
    rows = 0;
    while (std::getline(log, line)) ++rows;
    EXPECT_EQ(rows, 8u); // 2 archs x 2 lens x 2 reps
}

TEST_F(CliTest, ConfigFileValuesAreOverriddenByFlags) {
    {
        std::ofstream os(path("gen.json"));
        os << R"({"buses": 2, "steps": 40, "seed": 5, "out": ")" << path("cfg_out") << R"("})";
    }
    ASSERT_EQ(run_cli("generate --config " + path("gen.json")).exit_code, 0);
    {
        const psf::StateSeries s =
            psf::read_state_series_csv_file(path("cfg_out") + "/series.csv");
        EXPECT_EQ(s.steps(), 40u);
    }
    // flag wins over config
    ASSERT_EQ(run_cli("generate --config " + path("gen.json") + " --steps 25").exit_code, 0);
    const psf::StateSeries s = psf::read_state_series_csv_file(path("cfg_out") + "/series.csv");
    EXPECT_EQ(s.steps(), 25u);
}

TEST_F(CliTest, UnknownConfigKeyRejected) {
    {
        std::ofstream os(path("gen.json"));
        os << R"({"busses": 4})"; // typo'd key
    }
    const CmdResult r = run_cli("generate --config " + path("gen.json"));
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.output.find("unknown config key"), std::string::npos) << r.output;
}
