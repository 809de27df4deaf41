// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int status = -1;
  std::string out;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("heapctl_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CmdResult heapctl(const std::string& args) {
    const std::string cmd =
        std::string(HEAPCTL_PATH) + " --dir '" + dir_.string() + "' " + args + " 2>&1";
    CmdResult r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
    const int st = pclose(p);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
  }

  nlohmann::json machine(const std::string& args, int expect_status = 0) {
    auto r = heapctl("--machine " + args);
    EXPECT_EQ(r.status, expect_status) << r.out;
    try {
      return nlohmann::json::parse(r.out);
    } catch (const std::exception& e) {
      ADD_FAILURE() << "not JSON: " << r.out;
      return {};
    }
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, CreateThenValidateEmptyHeap) {
  auto c = machine("create --name jimmy --size 1M");
  EXPECT_EQ(c["result"], "pass");
  EXPECT_TRUE(fs::exists(dir_ / "heaps.manifest"));
  auto v = machine("validate --name jimmy");
  EXPECT_EQ(v["result"], "pass");
  EXPECT_EQ(v["objects"], 0);
  EXPECT_EQ(v["errors"], 0);
}

TEST_F(CliTest, InfoReportsLayout) {
  machine("create --name h --size 4M");
  auto i = machine("info --name h");
  EXPECT_EQ(i["size"], 4 << 20);
  EXPECT_EQ(i["top"], i["data_start"]);
  EXPECT_EQ(i["gc_in_progress"], false);
  auto z = machine("info --name h --safety zero");
  EXPECT_EQ(z["load_nullified"], 0);
}

TEST_F(CliTest, TextOutputIsKeyValue) {
  auto r = heapctl("create --name t --size 2M");
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("name=t\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("result=pass"), std::string::npos);
}

TEST_F(CliTest, RootsAndGcOnFreshHeap) {
  machine("create --name h --size 4M");
  auto roots = machine("roots --name h");
  EXPECT_EQ(roots["roots"], 0);
  auto gc = machine("gc --name h");
  EXPECT_EQ(gc["live_objects"], 0);
  EXPECT_EQ(gc["reclaimed_bytes"], 0);
}

TEST_F(CliTest, ErrorsExitNonZero) {
  machine("create --name h --size 4M");
  auto dup = machine("create --name h --size 4M", 1);
  EXPECT_EQ(dup["error"], "NameExists");
  auto missing = machine("info --name nope", 1);
  EXPECT_EQ(missing["error"], "UnknownHeap");
  auto tiny = machine("create --name small --size 4K", 1);
  EXPECT_EQ(tiny["error"], "SizeTooSmall");
  EXPECT_NE(heapctl("").status, 0);
  EXPECT_NE(heapctl("frobnicate").status, 0);
  EXPECT_NE(heapctl("create --name x --size lots").status, 0);
  EXPECT_NE(heapctl("crashtest --workload nope").status, 0);
}

TEST_F(CliTest, CrashtestCreateAndAlloc) {
  auto c = machine("crashtest --workload create");
  EXPECT_EQ(c["result"], "pass");
  EXPECT_EQ(c["failed"], 0);
  auto a = machine("crashtest --workload alloc1k --objects 200");
  EXPECT_EQ(a["result"], "pass");
  EXPECT_EQ(a["points"], a["passed"]);
  EXPECT_GT(a["points"].get<int>(), 200);
}

TEST_F(CliTest, BenchMicroRuns) {
  auto r = heapctl("bench --suite micro --objects 300");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("test=tuple"), std::string::npos);
  EXPECT_NE(r.out.find("test=map"), std::string::npos);
  auto j = machine("bench --suite micro --objects 300");
  EXPECT_TRUE(j.contains("rows"));
}
