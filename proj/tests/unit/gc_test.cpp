// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "../support/graphs.hpp"
#include "pjh/errors.hpp"
#include "pjh/gc.hpp"
#include "pjh/runtime.hpp"
#include "pjh/storage.hpp"
#include "pjh/validate.hpp"
#include "pjh/workloads.hpp"

using namespace pjh;

namespace {

Geometry geometry_for(const MarkBitmap& bm) {
  Geometry g;
  g.data_start = bm.data_start();
  g.region_count = (bm.words() * 8 + kRegionSize - 1) / kRegionSize;
  return g;
}

}  // namespace

TEST(MarkBitmap, MarkSetsBothPlanes) {
  MarkBitmap bm(1 << 16, 1024);
  bm.mark((1 << 16) + 64, 32);
  EXPECT_TRUE(bm.is_marked((1 << 16) + 64));
  EXPECT_FALSE(bm.is_marked((1 << 16) + 72));
  EXPECT_EQ(bm.marked_count(), 1u);
  EXPECT_EQ(bm.marked_offsets(), std::vector<std::uint64_t>{(1 << 16) + 64});
  auto back = MarkBitmap::from_planes(bm.data_start(), bm.words(), bm.begin_bytes(), bm.end_bytes());
  EXPECT_EQ(back, bm);
}

TEST(Summarize, IdempotentAndPure) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    auto bm = testgraphs::random_bitmap(rng, kRegionSize, 1 + rng() % 40000, 0.1 + 0.8 * (i % 10) / 10.0);
    const auto copy = bm;
    const auto geo = geometry_for(bm);
    const auto a = summarize(bm, geo);
    const auto b = summarize(bm, geo);
    EXPECT_EQ(a.serialize(), b.serialize());
    EXPECT_EQ(bm, copy);
  }
}

TEST(Summarize, SlidesLiveDataDownInOrder) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    auto bm = testgraphs::random_bitmap(rng, kRegionSize, 20000);
    const auto s = summarize(bm, geometry_for(bm));
    std::uint64_t dest = kRegionSize;
    std::uint64_t live = 0;
    for (const auto& e : s.objects) {
      EXPECT_EQ(e.dest, dest);
      EXPECT_LE(e.dest, e.source);
      EXPECT_EQ(s.forward(e.source), e.dest);
      dest += e.size;
      live += e.size;
    }
    EXPECT_EQ(s.live_bytes, live);
    EXPECT_EQ(s.new_top, kRegionSize + live);
    EXPECT_EQ(s.objects.size(), bm.marked_count());
    std::uint64_t region_live = 0;
    for (const auto& r : s.regions) region_live += r.live_bytes;
    EXPECT_EQ(region_live, live);
  }
}

TEST(Summarize, ForwardRejectsNonObjects) {
  MarkBitmap bm(kRegionSize, 100);
  bm.mark(kRegionSize + 16, 16);
  const auto s = summarize(bm, geometry_for(bm));
  EXPECT_EQ(s.forward(kRegionSize + 16), kRegionSize);
  EXPECT_THROW(s.forward(kRegionSize + 24), Error);
}

TEST(Summarize, UnpairedBeginRunsToBitmapEnd) {
  MarkBitmap bm(kRegionSize, 10);
  bm.set_begin_bit(4);
  const auto s = summarize(bm, geometry_for(bm));
  ASSERT_EQ(s.objects.size(), 1u);
  EXPECT_EQ(s.objects[0].size, 6u * 8);
}

TEST(Mark, MatchesBfsOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 40; ++i) {
    Runtime rt(std::make_shared<SimulatedStorage>());
    Heap& heap = rt.create_heap("h", 4 << 20);
    const std::size_t n = 1 + rng() % 3000;
    auto g = testgraphs::build_random_graph(heap, n, rng);
    auto bm = Collector(heap, GcOptions{}).mark({});
    const auto marked = bm.marked_offsets();
    const auto oracle = testgraphs::bfs_reachable(heap, g);
    ASSERT_EQ(std::set<std::uint64_t>(marked.begin(), marked.end()), oracle) << "graph " << i;
  }
}

TEST(Mark, ExtraRootsAndProvidersCount) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& heap = rt.create_heap("h", 4 << 20);
  const auto& t = testgraphs::node_array(heap);
  ObjRef a = heap.allocate(t, 0);
  ObjRef b = heap.allocate(t, 0);
  heap.allocate(t, 0);
  ObjRef provided = b;
  auto id = heap.add_root_provider([&](const RootVisitor& v) { v(provided); });
  std::vector<ObjRef> extra{a};
  auto bm = Collector(heap, GcOptions{}).mark(extra);
  EXPECT_EQ(bm.marked_count(), 2u);
  heap.remove_root_provider(id);
  EXPECT_EQ(Collector(heap, GcOptions{}).mark({}).marked_count(), 0u);
}

TEST(Mark, InteriorReferenceIsCorrupt) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& heap = rt.create_heap("h", 4 << 20);
  const auto& t = testgraphs::node_array(heap);
  ObjRef a = heap.allocate(t, 2);
  heap.set_root("a", a);
  heap.set_element_word(a, 0, a.address + 8);
  try {
    heap.collect();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CorruptReference);
  }
}

TEST(Collect, PreservesGraphAndReclaims) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  workloads::GraphOptions go;
  go.objects = 3000;
  Heap& heap = rt.create_heap("h", workloads::gc_heap_size(go));
  const auto live = workloads::build_gc_graph(heap, go);
  const auto sig = workloads::traversal_signature(heap);
  const auto top = heap.top();
  auto stats = heap.collect();
  EXPECT_EQ(stats.live_objects, live);
  EXPECT_EQ(workloads::traversal_signature(heap), sig);
  EXPECT_GT(stats.reclaimed_bytes, 0u);
  EXPECT_EQ(heap.top(), heap.data_start() + stats.live_bytes);
  EXPECT_EQ(top - heap.top(), stats.reclaimed_bytes);
  EXPECT_GT(stats.fences_issued, 0u);
  auto v = validate(heap);
  EXPECT_TRUE(v.ok()) << (v.errors.empty() ? "" : v.errors.front());
  EXPECT_EQ(v.objects, live);

  // A second collection has nothing to do.
  auto again = heap.collect();
  EXPECT_EQ(again.reclaimed_bytes, 0u);
  EXPECT_EQ(workloads::traversal_signature(heap), sig);

  // Reload and compare once more.
  rt.close_heap("h");
  Heap& r = rt.load_heap("h");
  EXPECT_EQ(workloads::traversal_signature(r), sig);
}

TEST(Collect, ProviderSlotsAreForwarded) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& heap = rt.create_heap("h", 4 << 20);
  const auto& t = testgraphs::node_array(heap);
  for (int i = 0; i < 100; ++i) heap.allocate(t, 1);  // garbage below
  ObjRef held = heap.allocate(t, 1);
  auto id = heap.add_root_provider([&](const RootVisitor& v) { v(held); });
  heap.collect();
  EXPECT_EQ(heap.offset_of(held.address), heap.data_start());
  EXPECT_EQ(heap.array_length(held), 1u);
  heap.remove_root_provider(id);
}

TEST(Collect, NoFenceModeMatches) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  workloads::GraphOptions go;
  go.objects = 1000;
  Heap& heap = rt.create_heap("h", workloads::gc_heap_size(go));
  workloads::build_gc_graph(heap, go);
  const auto sig = workloads::traversal_signature(heap);
  auto stats = heap.collect(GcOptions{false});
  EXPECT_EQ(workloads::traversal_signature(heap), sig);
  EXPECT_LE(stats.fences_issued, 1u);
  EXPECT_TRUE(validate(heap).ok());
}

TEST(Collect, SmallCrashSweep) {
  workloads::SweepOptions so;
  so.objects = 300;
  auto report = workloads::run_sweep("gc", so);
  EXPECT_TRUE(report.ok()) << (report.failures.empty() ? "" : report.failures.front().detail);
  EXPECT_GT(report.points, 10u);
}

// Crash inside the collection, then crash again inside its recovery.
TEST(Collect, CrashDuringRecoveryIsRecoverable) {
  workloads::GraphOptions go;
  go.objects = 400;
  auto make = [&](SimulatedStorage& storage, Runtime& rt) -> Heap& {
    (void)storage;
    Heap& heap = rt.create_heap("h", workloads::gc_heap_size(go));
    workloads::build_gc_graph(heap, go);
    return heap;
  };

  workloads::Signature expect;
  std::uint64_t collect_points = 0;
  {
    auto storage = std::make_shared<SimulatedStorage>();
    Runtime rt(storage);
    Heap& heap = make(*storage, rt);
    const auto before = heap.device().persist_point_count();
    heap.collect();
    collect_points = heap.device().persist_point_count() - before;
    expect = workloads::traversal_signature(heap);
  }
  ASSERT_GT(collect_points, 4u);

  for (std::uint64_t first : {collect_points / 3, collect_points / 2, collect_points - 2}) {
    auto storage = std::make_shared<SimulatedStorage>();
    Runtime rt(storage);
    Heap& heap = make(*storage, rt);
    auto dev = storage->device("h");
    dev->set_crash_policy(CrashPolicy{dev->persist_point_count() + first});
    EXPECT_THROW(heap.collect(), InjectedCrash);
    rt.simulate_crash();

    // Recovery runs inside load; interrupt it after two of its own fences.
    dev->set_crash_policy(CrashPolicy{dev->persist_point_count() + 2});
    bool crashed = false;
    try {
      rt.load_heap("h");
    } catch (const InjectedCrash&) {
      crashed = true;
    }
    dev->set_crash_policy(std::nullopt);
    rt.simulate_crash();
    Heap& r = rt.load_heap("h");
    EXPECT_EQ(workloads::traversal_signature(r), expect) << "first crash " << first
                                                         << (crashed ? " (recovery crashed)" : "");
    auto v = validate(r);
    EXPECT_TRUE(v.ok()) << (v.errors.empty() ? "" : v.errors.front());
  }
}
