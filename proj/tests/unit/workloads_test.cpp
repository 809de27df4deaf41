// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pjh/gc.hpp"
#include "pjh/runtime.hpp"
#include "pjh/storage.hpp"
#include "pjh/validate.hpp"
#include "pjh/workloads.hpp"

using namespace pjh;
using namespace pjh::workloads;

namespace {

// R^2 from the fitted line's residuals, computed independently of the
// correlation form used by the library.
double r2_by_residuals(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / n;
  const double my = sy / n;
  double res = 0, tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = slope * x[i] + icpt;
    res += (y[i] - f) * (y[i] - f);
    tot += (y[i] - my) * (y[i] - my);
  }
  return 1.0 - res / tot;
}

}  // namespace

TEST(Workloads, LinearR2MatchesResidualForm) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x, y;
    const int n = 3 + t % 10;
    for (int i = 0; i < n; ++i) {
      x.push_back(i * 10.0 + (rng() % 5));
      y.push_back(2.5 * x.back() + 7 + noise(rng));
    }
    EXPECT_NEAR(linear_r2(x, y), r2_by_residuals(x, y), 1e-9);
  }
  EXPECT_DOUBLE_EQ(linear_r2({1, 2, 3, 4}, {3, 5, 7, 9}), 1.0);
  EXPECT_EQ(linear_r2({1}, {1}), 0.0);
}

TEST(Workloads, MakeTypesAreWellFormed) {
  auto types = make_types(20);
  ASSERT_EQ(types.size(), 20u);
  for (const auto& t : types) {
    EXPECT_NO_THROW(t.check_well_formed());
    EXPECT_TRUE(t.has_references());
  }
}

TEST(Workloads, SignatureIgnoresHeapAddress) {
  auto build = [](std::uint64_t skip) {
    auto storage = std::make_shared<SimulatedStorage>();
    Runtime rt(storage);
    // Occupy address slots so the second heap lands elsewhere.
    for (std::uint64_t i = 0; i < skip; ++i) rt.create_heap("pad" + std::to_string(i), 1 << 20);
    AllocOptions ao;
    ao.objects = 500;
    Heap& h = rt.create_heap("h", alloc_heap_size(ao));
    run_alloc_workload(h, ao);
    return std::make_pair(traversal_signature(h), h.base());
  };
  auto [a, base_a] = build(0);
  auto [b, base_b] = build(2);
  EXPECT_NE(base_a, base_b);
  EXPECT_EQ(a, b);
  EXPECT_GT(a.objects, 0u);
  EXPECT_LE(a.objects, 500u);
}

TEST(Workloads, SignatureSeesScalarChanges) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  AllocOptions ao;
  ao.objects = 100;
  Heap& h = rt.create_heap("h", alloc_heap_size(ao));
  run_alloc_workload(h, ao);
  const auto before = traversal_signature(h);
  ObjRef r = h.get_root(h.roots().front().first);
  h.set_scalar(r, "id", h.get_scalar(r, "id") + 1);
  EXPECT_NE(traversal_signature(h), before);
}

TEST(Workloads, RootLogFollowsFences) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  AllocOptions ao;
  ao.objects = 300;
  Heap& h = rt.create_heap("h", alloc_heap_size(ao));
  FenceTrace trace;
  trace.attach(h.device());
  auto log = run_alloc_workload(h, ao, &trace);
  trace.detach();
  ASSERT_EQ(log.size(), ao.roots);
  for (std::size_t i = 1; i < log.size(); ++i) EXPECT_LT(log[i - 1].second, log[i].second);
  EXPECT_LE(log.back().second, trace.fence_count());
}

TEST(Workloads, GcGraphHasExactLiveCount) {
  for (double garbage : {0.0, 0.4, 0.9}) {
    Runtime rt(std::make_shared<SimulatedStorage>());
    GraphOptions go;
    go.objects = 1000;
    go.garbage = garbage;
    Heap& h = rt.create_heap("h", gc_heap_size(go));
    const auto live = build_gc_graph(h, go);
    EXPECT_EQ(live, static_cast<std::size_t>(std::llround(1000 * (1 - garbage))));
    EXPECT_EQ(Collector(h, GcOptions{}).mark({}).marked_count(), live);
    EXPECT_EQ(traversal_signature(h).objects, live);
  }
}

TEST(Workloads, BasicTransactionsAreDeterministic) {
  auto run = [] {
    Runtime rt(std::make_shared<SimulatedStorage>());
    Heap& h = rt.create_heap("h", 16 << 20);
    pjo::EntityManager em(rt, h);
    TxnOptions to;
    to.commits = 60;
    run_basic_transactions(em, to);
    return em.dump("Person");
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  // 24 create commits of 5, 12 single removals.
  EXPECT_EQ(a.size(), 24u * 5 - 12);
}

TEST(Workloads, SweepNamesAreKnown) {
  auto names = sweep_workloads();
  for (const char* n : {"alloc1k", "alloc10k", "gc", "txn", "create", "remap"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
  }
  EXPECT_THROW(run_sweep("nope"), std::exception);
}

TEST(Workloads, SmallSweepsPass) {
  SweepOptions so;
  so.objects = 150;
  for (const char* n : {"alloc1k", "create", "remap"}) {
    auto r = run_sweep(n, so);
    EXPECT_TRUE(r.ok()) << n << ": " << (r.failures.empty() ? "" : r.failures.front().detail);
  }
  SweepOptions txn;
  txn.commits = 40;
  txn.sampled_commits = 5;
  auto r = run_sweep("txn", txn);
  EXPECT_TRUE(r.ok()) << (r.failures.empty() ? "" : r.failures.front().detail);
  EXPECT_EQ(r.counters["diff_violations"], 0u);
}

TEST(Workloads, GcOverheadSmallHeap) {
  auto o = gc_overhead(4 << 20);
  EXPECT_TRUE(o.isomorphic);
  EXPECT_TRUE(std::isfinite(o.pause_ratio));
  EXPECT_GT(o.with_fences.fences_issued, o.without_fences.fences_issued);
}
