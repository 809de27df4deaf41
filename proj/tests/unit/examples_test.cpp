// SPDX-License-Identifier: Apache-2.0
// Small worked cases for individual operations.
#include <gtest/gtest.h>

#include <random>

#include "../support/graphs.hpp"
#include "pjh/crash_sweep.hpp"
#include "pjh/errors.hpp"
#include "pjh/gc.hpp"
#include "pjh/runtime.hpp"
#include "pjh/storage.hpp"
#include "pjh/validate.hpp"
#include "pjh/workloads.hpp"

using namespace pjh;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::InvalidArgument;
}

}  // namespace

// ------------------------------------------------------------------ device

TEST(DeviceExamples, FreshDeviceReadsZero) {
  PersistentDevice dev(65536);
  EXPECT_EQ(dev.read(0, 8), std::vector<std::uint8_t>(8, 0));
  EXPECT_EQ(code_of([] { PersistentDevice d(0); }), Errc::InvalidCapacity);
  EXPECT_EQ(code_of([] { PersistentDevice d(100); }), Errc::InvalidCapacity);
  auto snap = dev.crash();
  EXPECT_TRUE(std::all_of(snap.durable_snapshot.begin(), snap.durable_snapshot.end(),
                          [](std::uint8_t b) { return b == 0; }));
}

TEST(DeviceExamples, WriteSpanningTwoLines) {
  // Every subset of {line 0, line 1} flushed: only the full flush persists both.
  const std::vector<std::uint8_t> data{1, 2, 3, 4, 5, 6, 7, 8};
  for (int mask = 0; mask < 4; ++mask) {
    PersistentDevice dev(256);
    dev.write(60, data);
    if (mask & 1) dev.flush(60, 4);
    if (mask & 2) dev.flush(64, 4);
    dev.fence();
    dev.crash();
    const auto got = dev.read(60, 8);
    for (int i = 0; i < 8; ++i) {
      const bool line0 = i < 4;
      const bool durable = line0 ? (mask & 1) : (mask & 2);
      EXPECT_EQ(got[i], durable ? data[i] : 0) << "mask " << mask << " byte " << i;
    }
  }
  PersistentDevice dev(256);
  dev.write(60, data);
  dev.flush(60, 8);
  dev.fence();
  dev.crash();
  EXPECT_EQ(dev.read(60, 8), data);
}

TEST(DeviceExamples, FlushOfCleanRangeAddsNothing) {
  PersistentDevice dev(4096);
  dev.flush(0, 4096);
  EXPECT_FALSE(dev.has_unpersisted_lines());
  EXPECT_EQ(dev.flush_count(), 0u);
}

TEST(DeviceExamples, CrashAtThirdPersist) {
  PersistentDevice dev(4096);
  dev.set_crash_policy(CrashPolicy{3});
  std::uint64_t thrown_at = 0;
  try {
    for (std::uint64_t i = 0; i < 5; ++i) {
      dev.write_u64(i * 64, i + 1);
      dev.flush(i * 64, 8);
      dev.fence();
    }
  } catch (const InjectedCrash& c) {
    thrown_at = c.persist_point();
  }
  EXPECT_EQ(thrown_at, 3u);
  dev.crash();
  for (std::uint64_t i = 0; i < 5; ++i) EXPECT_EQ(dev.read_u64(i * 64), i < 3 ? i + 1 : 0);
}

TEST(DeviceExamples, ReadsAndWritesDoNotCountPoints) {
  PersistentDevice dev(4096);
  dev.write_u64(0, 1);
  dev.read_u64(0);
  EXPECT_EQ(dev.persist_point_count(), 0u);
  dev.fence();
  EXPECT_EQ(dev.persist_point_count(), 1u);
}

TEST(DeviceExamples, IdenticalTracesGiveIdenticalSnapshots) {
  auto run = [] {
    PersistentDevice dev(4096);
    dev.set_crash_policy(CrashPolicy{4});
    std::mt19937_64 rng(3);
    try {
      for (int i = 0; i < 100; ++i) {
        const auto off = (rng() % 512) * 8;
        dev.write_u64(off, rng());
        dev.flush(off, 8);
        if (i % 7 == 0) dev.fence();
      }
    } catch (const InjectedCrash&) {
    }
    return dev.crash().durable_snapshot;
  };
  EXPECT_EQ(run(), run());
}

// -------------------------------------------------------------------- heap

TEST(HeapExamples, CreateCrashLoadIsEmpty) {
  auto storage = std::make_shared<SimulatedStorage>();
  Runtime rt(storage);
  rt.create_heap("Jimmy", 1 << 20);
  EXPECT_TRUE(rt.exists_heap("Jimmy"));
  rt.simulate_crash();
  Heap& h = rt.load_heap("Jimmy");
  EXPECT_EQ(h.top(), h.data_start());
  EXPECT_EQ(validate(h).objects, 0u);
  EXPECT_FALSE(rt.exists_heap("Unknown"));
}

TEST(HeapExamples, ThreeObjectsSurviveCleanClose) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("Jimmy", 1 << 20);
  h.register_type(TypeDescriptor::instance("Person").scalar("id").scalar("age", 4).reference("next"));
  std::vector<ObjRef> p;
  for (std::uint64_t i = 0; i < 3; ++i) {
    p.push_back(h.allocate("Person"));
    h.set_scalar(p[i], "id", 100 + i);
    h.set_scalar(p[i], "age", 30 + i);
    if (i) h.set_ref(p[i], "next", p[i - 1]);
    h.flush_object(p[i]);
  }
  h.set_root("Jimmy_info", p[2]);
  EXPECT_EQ(h.get_root("Jimmy_info"), p[2]);
  rt.close_heap("Jimmy");
  Heap& r = rt.load_heap("Jimmy");
  ObjRef cur = r.get_root("Jimmy_info");
  for (std::uint64_t i = 3; i-- > 0;) {
    ASSERT_FALSE(cur.is_null());
    EXPECT_EQ(r.get_scalar(cur, "id"), 100 + i);
    EXPECT_EQ(r.get_scalar(cur, "age"), 30 + i);
    cur = r.get_ref(cur, "next");
  }
  EXPECT_TRUE(cur.is_null());
}

TEST(HeapExamples, RemapEmptyHeapChangesOnlyHint) {
  auto storage = std::make_shared<SimulatedStorage>();
  Runtime rt(storage);
  Heap& h = rt.create_heap("h", 1 << 20);
  const auto old_hint = h.metadata().address_hint;
  rt.close_heap("h");
  const auto before = storage->device("h")->read(0, 1 << 20);
  LoadOptions lo;
  lo.deny_hint = true;
  Heap& r = rt.load_heap("h", lo);
  EXPECT_NE(r.metadata().address_hint, old_hint);
  rt.close_heap("h");
  const auto after = storage->device("h")->read(0, 1 << 20);
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (i >= meta::kAddressHint && i < meta::kAddressHint + 8) continue;
    ASSERT_EQ(before[i], after[i]) << "byte " << i;
  }
}

TEST(HeapExamples, SelfReferenceMovesByBaseDelta) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 1 << 20);
  h.register_type(TypeDescriptor::instance("Self").reference("me"));
  ObjRef o = h.allocate("Self");
  h.set_ref(o, "me", o);
  h.flush_object(o);
  h.set_root("o", o);
  const auto old_base = h.base();
  const auto old_word = h.read_word(o.address + 16);
  rt.close_heap("h");
  LoadOptions lo;
  lo.deny_hint = true;
  Heap& r = rt.load_heap("h", lo);
  ObjRef n = r.get_root("o");
  EXPECT_EQ(r.read_word(n.address + 16) - old_word, r.base() - old_base);
  EXPECT_EQ(r.get_ref(n, "me"), n);
}

TEST(HeapExamples, LinkedListRemapKeepsValueSequence) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 1 << 20);
  h.register_type(TypeDescriptor::instance("L").scalar("v").reference("next"));
  ObjRef head;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    ObjRef n = h.allocate("L");
    h.set_scalar(n, "v", i * 7);
    h.set_ref(n, "next", head);
    h.flush_object(n);
    head = n;
  }
  h.set_root("head", head);
  rt.close_heap("h");
  LoadOptions lo;
  lo.deny_hint = true;
  Heap& r = rt.load_heap("h", lo);
  std::uint64_t expect = 999;
  for (ObjRef c = r.get_root("head"); !c.is_null(); c = r.get_ref(c, "next")) {
    ASSERT_EQ(r.get_scalar(c, "v"), expect * 7);
    --expect;
  }
  EXPECT_EQ(expect, ~std::uint64_t{0});
}

TEST(HeapExamples, SetRootCrashSweep) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 1 << 20);
  h.register_type(TypeDescriptor::instance("N").scalar("v"));
  ObjRef a = h.allocate("N");
  ObjRef b = h.allocate("N");
  h.set_root("r", a);
  FenceTrace trace;
  trace.attach(h.device());
  h.set_root("r", b);
  h.set_root("fresh", a);
  trace.detach();
  const auto a_off = h.offset_of(a.address);
  const auto b_off = h.offset_of(b.address);
  auto results = replay_sweep(
      trace, [](std::size_t) { return true; },
      [&](const std::shared_ptr<PersistentDevice>& dev) -> std::string {
        auto st = std::make_shared<SimulatedStorage>();
        st->adopt("h", dev);
        Runtime r(st);
        Heap& x = r.load_heap("h");
        const auto off = x.offset_of(x.get_root("r").address);
        if (off != a_off && off != b_off) return "root r names neither binding";
        if (x.has_root("fresh") && x.offset_of(x.get_root("fresh").address) != a_off) {
          return "fresh root torn";
        }
        if (x.has_root("fresh") && off != b_off) return "later root durable before earlier one";
        return {};
      });
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.detail;
}

TEST(HeapExamples, AllocateBumpsByAlignedSize) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 1 << 20);
  const auto& t = h.register_type(TypeDescriptor::instance("P").scalar("x", 4));
  EXPECT_EQ(t.object_size(), 24u);
  const auto top = h.top();
  h.allocate(t);
  EXPECT_EQ(h.top(), top + 24);
}

TEST(HeapExamples, CrashBeforeTopPersistTruncates) {
  auto storage = std::make_shared<SimulatedStorage>();
  Runtime rt(storage);
  Heap& h = rt.create_heap("h", 1 << 20);
  const auto& t = h.register_type(TypeDescriptor::instance("P").scalar("x"));
  h.allocate(t);
  const auto top = h.top();
  auto dev = storage->device("h");
  // First fence of the next allocation journals its start; top is not durable yet.
  dev->set_crash_policy(CrashPolicy{dev->persist_point_count() + 1});
  EXPECT_THROW(h.allocate(t), InjectedCrash);
  dev->set_crash_policy(std::nullopt);
  rt.simulate_crash();
  Heap& r = rt.load_heap("h");
  EXPECT_EQ(r.top(), top);
  EXPECT_TRUE(validate(r).ok());
}

TEST(HeapExamples, FlushObjectOnCleanObjectStillFences) {
  auto storage = std::make_shared<SimulatedStorage>();
  Runtime rt(storage);
  Heap& h = rt.create_heap("h", 1 << 20);
  auto d = TypeDescriptor::instance("F");
  for (int i = 0; i < 5; ++i) d.scalar("f" + std::to_string(i));
  ObjRef o = h.allocate(h.register_type(d));
  h.set_root("o", o);
  for (int i = 0; i < 5; ++i) h.set_scalar(o, "f" + std::to_string(i), 10 + i);
  auto count = h.device().persist_point_count();
  h.flush_object(o);
  EXPECT_EQ(h.device().persist_point_count(), count + 1);
  count = h.device().persist_point_count();
  h.flush_object(o);
  EXPECT_EQ(h.device().persist_point_count(), count + 1);
  rt.simulate_crash();
  Heap& r = rt.load_heap("h");
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(r.get_scalar(r.get_root("o"), "f" + std::to_string(i)), 10u + i);
  }
}

TEST(HeapExamples, ZeroingCountsExactlyTheOutEdges) {
  std::mt19937_64 rng(21);
  for (int round = 0; round < 5; ++round) {
    Runtime rt(std::make_shared<SimulatedStorage>());
    Heap& h = rt.create_heap("h", 4 << 20);
    const auto& t = h.register_type(TypeDescriptor::instance("N").reference("a").reference("b"));
    const auto& vt = rt.register_volatile_type(TypeDescriptor::instance("N").reference("a").reference("b"));
    std::vector<ObjRef> nodes;
    for (int i = 0; i < 300; ++i) nodes.push_back(h.allocate(t));
    std::uint64_t k = 0;
    for (auto& n : nodes) {
      for (const char* f : {"a", "b"}) {
        switch (rng() % 3) {
          case 0:
            h.set_ref(n, f, rt.volatile_space().allocate(vt));
            ++k;
            break;
          case 1:
            h.set_ref(n, f, nodes[rng() % nodes.size()]);
            break;
          default:
            break;
        }
      }
    }
    h.set_root("n0", nodes[0]);
    const auto persistent_refs = validate(h).references;
    EXPECT_EQ(h.zeroing_scan(), k);
    EXPECT_EQ(h.zeroing_scan(), 0u);
    auto v = validate(h);
    EXPECT_EQ(v.foreign_references, 0u);
    EXPECT_EQ(v.references, persistent_refs);
  }
}

// ------------------------------------------------------------------- types

TEST(TypeExamples, ReinitializeCountsDescriptors) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 1 << 20);
  EXPECT_EQ(h.reinitialize_types(), 0u);
  for (int i = 0; i < 9; ++i) {
    h.register_type(TypeDescriptor::instance("C" + std::to_string(i)).scalar("x"));
  }
  EXPECT_EQ(h.reinitialize_types(), 9u);
}

TEST(TypeExamples, KlassWordsStableAcrossReload) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  workloads::AllocOptions ao;
  ao.objects = 500;
  Heap& h = rt.create_heap("h", workloads::alloc_heap_size(ao));
  workloads::run_alloc_workload(h, ao);
  std::vector<std::uint64_t> words;
  h.for_each_object([&](std::uint64_t off, const TypeDescriptor&, std::uint64_t) {
    words.push_back(h.device().read_u64(off));
  });
  rt.close_heap("h");
  Heap& r = rt.load_heap("h");
  std::vector<std::uint64_t> after;
  r.for_each_object([&](std::uint64_t off, const TypeDescriptor& d, std::uint64_t) {
    after.push_back(r.device().read_u64(off));
    EXPECT_TRUE(d.runtime_bound());
  });
  EXPECT_EQ(words, after);
}

TEST(TypeExamples, RegisterCrashLeavesNameAbsentOrComplete) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 1 << 20);
  const auto proto = TypeDescriptor::instance("Person").scalar("id").reference("friend");
  FenceTrace trace;
  trace.attach(h.device());
  h.register_type(proto);
  trace.detach();
  ASSERT_GE(trace.fence_count(), 2u);
  auto results = replay_sweep(
      trace, [](std::size_t) { return true; },
      [&](const std::shared_ptr<PersistentDevice>& dev) -> std::string {
        auto st = std::make_shared<SimulatedStorage>();
        st->adopt("h", dev);
        Runtime r(st);
        Heap& x = r.load_heap("h");
        const auto* k = x.find_klass("Person");
        if (k && !k->same_layout(proto)) return "partially visible descriptor";
        // Registering again must work whether or not the first attempt landed.
        const auto& again = x.register_type(proto);
        if (!again.same_layout(proto)) return "re-registration failed";
        return validate(x).ok() ? "" : "invalid heap";
      });
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.detail;
}

// ---------------------------------------------------------------------- gc

TEST(GcExamples, FullyLiveHeapIsUnchanged) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 1 << 20);
  h.register_type(TypeDescriptor::instance("L").scalar("v").reference("next"));
  ObjRef head;
  for (int i = 0; i < 100; ++i) {
    ObjRef n = h.allocate("L");
    h.set_scalar(n, "v", i);
    h.set_ref(n, "next", head);
    head = n;
  }
  h.set_root("head", head);
  const auto top = h.top();
  const auto sig = workloads::traversal_signature(h);
  auto s = h.collect();
  EXPECT_EQ(s.reclaimed_bytes, 0u);
  EXPECT_EQ(h.top(), top);
  EXPECT_EQ(h.get_root("head"), head);
  EXPECT_EQ(workloads::traversal_signature(h), sig);
}

TEST(GcExamples, NoRootsEmptiesHeap) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 1 << 20);
  h.register_type(TypeDescriptor::instance("L").scalar("v"));
  for (int i = 0; i < 100; ++i) h.allocate("L");
  h.collect();
  EXPECT_EQ(h.top(), h.data_start());
  EXPECT_TRUE(validate(h).ok());
}

TEST(GcExamples, SingleRootAndCycle) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 1 << 20);
  h.register_type(TypeDescriptor::instance("C").reference("next"));
  ObjRef lone = h.allocate("C");
  h.set_root("lone", lone);
  EXPECT_EQ(Collector(h, GcOptions{}).mark({}).marked_count(), 1u);

  ObjRef a = h.allocate("C");
  ObjRef b = h.allocate("C");
  ObjRef c = h.allocate("C");
  h.set_ref(a, "next", b);
  h.set_ref(b, "next", c);
  h.set_ref(c, "next", a);
  h.set_root("lone", ObjRef::null());
  h.set_root("cycle", b);
  EXPECT_EQ(Collector(h, GcOptions{}).mark({}).marked_count(), 3u);
}

TEST(GcExamples, SummaryOfEmptyAndFullBitmaps) {
  const std::uint64_t start = kRegionSize;
  MarkBitmap empty(start, 4096);
  Geometry g{start, kRegionSize, 1};
  auto s = summarize(empty, g);
  EXPECT_TRUE(s.objects.empty());
  EXPECT_EQ(s.new_top, start);

  MarkBitmap full(start, 4096);
  for (std::uint64_t w = 0; w < 4096; w += 4) full.mark(start + w * 8, 32);
  auto f = summarize(full, g);
  ASSERT_EQ(f.objects.size(), 1024u);
  for (const auto& e : f.objects) EXPECT_EQ(e.dest, e.source);
}

TEST(GcExamples, RandomGraphReachabilityWithGarbage) {
  Runtime rt(std::make_shared<SimulatedStorage>());
  Heap& h = rt.create_heap("h", 8 << 20);
  std::mt19937_64 rng(77);
  auto g = testgraphs::build_random_graph(h, 10000, rng, 2, 3);
  const auto oracle = testgraphs::bfs_reachable(h, g);
  const auto marked = Collector(h, GcOptions{}).mark({}).marked_offsets();
  EXPECT_EQ(std::set<std::uint64_t>(marked.begin(), marked.end()), oracle);
  auto stats = h.collect();
  EXPECT_EQ(stats.live_objects, oracle.size());
  EXPECT_TRUE(validate(h).ok());
}

// ------------------------------------------------------------------- undo

TEST(UndoExamples, CrashDuringRollbackCompletes) {
  PersistentDevice dev(4096);
  constexpr std::uint64_t kLogSize = UndoLog::kHeaderSize + 8 * UndoLog::kRecordSize;
  UndoLog log(dev, 0, kLogSize);
  for (std::uint64_t i = 0; i < 4; ++i) dev.write_u64(1024 + 64 * i, i);
  dev.persist_all();
  for (std::uint64_t i = 0; i < 4; ++i) {
    log.append(1, 1024 + 64 * i);
    dev.write_u64(1024 + 64 * i, 100 + i);
    dev.flush(1024 + 64 * i, 8);
  }
  dev.fence();
  FenceTrace trace;
  trace.attach(dev);
  log.rollback();
  trace.detach();
  auto results = replay_sweep(
      trace, [](std::size_t) { return true; },
      [](const std::shared_ptr<PersistentDevice>& d) -> std::string {
        UndoLog l(*d, 0, kLogSize);
        l.recover();
        for (std::uint64_t i = 0; i < 4; ++i) {
          if (d->read_u64(1024 + 64 * i) != i) return "word " + std::to_string(i) + " not restored";
        }
        return l.empty() ? "" : "log not clean";
      });
  EXPECT_GE(results.size(), 2u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.detail;
}
