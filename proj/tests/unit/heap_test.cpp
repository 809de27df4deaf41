// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "pjh/errors.hpp"
#include "pjh/runtime.hpp"
#include "pjh/storage.hpp"
#include "pjh/validate.hpp"
#include "pjh/workloads.hpp"

using namespace pjh;

namespace {

constexpr std::uint64_t kSize = 4 << 20;

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::InvalidArgument;
}

TypeDescriptor node_type() {
  return TypeDescriptor::instance("Node").scalar("v").reference("next").scalar("tag", 2);
}

struct Fixture : ::testing::Test {
  std::shared_ptr<SimulatedStorage> storage = std::make_shared<SimulatedStorage>();
  std::unique_ptr<Runtime> rt = std::make_unique<Runtime>(storage);

  Heap& reload(const LoadOptions& opts = {}) {
    rt->close_heap("h");
    return rt->load_heap("h", opts);
  }
  Heap& crash_reload(const LoadOptions& opts = {}) {
    rt->simulate_crash();
    return rt->load_heap("h", opts);
  }
};

using HeapTest = Fixture;

}  // namespace

TEST_F(HeapTest, CreateRejectsDuplicatesAndTinySizes) {
  rt->create_heap("h", kSize);
  EXPECT_TRUE(rt->exists_heap("h"));
  EXPECT_EQ(code_of([&] { rt->create_heap("h", kSize); }), Errc::NameExists);
  EXPECT_EQ(code_of([&] { rt->create_heap("tiny", minimum_heap_size() - 1); }), Errc::SizeTooSmall);
  EXPECT_NO_THROW(rt->create_heap("min", minimum_heap_size()));
}

TEST_F(HeapTest, FreshHeapIsEmptyAndValid) {
  Heap& h = rt->create_heap("h", kSize);
  EXPECT_EQ(h.top(), h.data_start());
  EXPECT_EQ(h.data_start() % kRegionSize, 0u);
  EXPECT_LE(h.data_end(), h.size());
  auto r = validate(h);
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.objects, 0u);
}

TEST_F(HeapTest, AllocateWritesHeaderAndBumpsTop) {
  Heap& h = rt->create_heap("h", kSize);
  const auto& t = h.register_type(node_type());
  const auto top = h.top();
  ObjRef a = h.allocate(t);
  EXPECT_EQ(h.offset_of(a.address), top);
  EXPECT_EQ(h.top(), top + t.object_size());
  EXPECT_EQ(&h.descriptor_of(a), &t);
  EXPECT_EQ(h.get_scalar(a, "v"), 0u);
  EXPECT_TRUE(h.get_ref(a, "next").is_null());

  const auto& arr = h.register_type(TypeDescriptor::array_of("u32[]", FieldKind::Scalar, 4));
  ObjRef b = h.allocate(arr, 10);
  EXPECT_EQ(h.array_length(b), 10u);
  EXPECT_EQ(h.object_size(b), align_up(24 + 40, 8));
}

TEST_F(HeapTest, AllocationErrors) {
  Heap& h = rt->create_heap("h", minimum_heap_size());
  h.set_auto_gc(false);
  const auto& arr = h.register_type(TypeDescriptor::array_of("bytes", FieldKind::Scalar, 1));
  EXPECT_EQ(code_of([&] { h.allocate(arr, kMaxObjectSize); }), Errc::ObjectTooLarge);
  EXPECT_EQ(code_of([&] { h.allocate(arr); }), Errc::InvalidArgument);
  EXPECT_EQ(code_of([&] { h.allocate("Missing"); }), Errc::UnknownKlass);
  Errc last = Errc::InvalidArgument;
  for (int i = 0; i < 10000; ++i) {
    try {
      h.allocate(arr, 4000);
    } catch (const Error& e) {
      last = e.code();
      break;
    }
  }
  EXPECT_EQ(last, Errc::OutOfMemory);
  EXPECT_TRUE(validate(h).ok());
}

TEST_F(HeapTest, RegisterTypeIsIdempotentPerName) {
  Heap& h = rt->create_heap("h", kSize);
  const auto& a = h.register_type(node_type());
  const auto& b = h.register_type(node_type());
  EXPECT_EQ(&a, &b);
  EXPECT_EQ(code_of([&] { h.register_type(TypeDescriptor::instance("Node").scalar("v")); }),
            Errc::LayoutMismatch);
  EXPECT_EQ(code_of([&] { h.register_type(TypeDescriptor::instance("$mine")); }),
            Errc::InvalidArgument);
  EXPECT_EQ(h.klasses().size(), 1u);
}

TEST_F(HeapTest, TypesSurviveReloadAndReinitialize) {
  Heap& h = rt->create_heap("h", kSize);
  h.register_type(node_type());
  h.register_type(TypeDescriptor::array_of("refs", FieldKind::Reference));
  Heap& r = reload();
  ASSERT_EQ(r.klasses().size(), 2u);
  const auto* n = r.find_klass("Node");
  ASSERT_NE(n, nullptr);
  EXPECT_TRUE(n->same_layout(node_type()));
  EXPECT_TRUE(n->runtime_bound());
  const auto top = r.klass_top();
  EXPECT_EQ(r.reinitialize_types(), 2u);
  EXPECT_EQ(r.klass_top(), top);
  EXPECT_NE(r.find_klass("refs"), nullptr);
}

TEST_F(HeapTest, RootsBindAndSurviveCrash) {
  Heap& h = rt->create_heap("h", kSize);
  h.register_type(node_type());
  ObjRef a = h.allocate("Node");
  h.set_scalar(a, "v", 77);
  h.flush_object(a);
  h.set_root("a", a);
  EXPECT_EQ(h.get_root("a"), a);
  EXPECT_EQ(code_of([&] { h.get_root("b"); }), Errc::NoSuchRoot);

  Heap& r = crash_reload();
  ObjRef back = r.get_root("a");
  EXPECT_EQ(r.get_scalar(back, "v"), 77u);
  r.set_root("a", ObjRef::null());
  EXPECT_TRUE(r.get_root("a").is_null());
}

TEST_F(HeapTest, RootRejectsVolatileAndForeignReferences) {
  Heap& h = rt->create_heap("h", kSize);
  const auto& vt = rt->register_volatile_type(node_type());
  ObjRef v = rt->volatile_space().allocate(vt);
  EXPECT_EQ(code_of([&] { h.set_root("v", v); }), Errc::VolatileRef);
  EXPECT_EQ(code_of([&] { h.set_root("x", h.ref_at(h.data_start())); }), Errc::InvalidArgument);
}

TEST_F(HeapTest, UnflushedFieldsAreLostOnCrash) {
  Heap& h = rt->create_heap("h", kSize);
  h.register_type(node_type());
  ObjRef a = h.allocate("Node");
  h.set_root("a", a);
  h.set_scalar(a, "v", 5);
  h.flush_scalar(a, "v");
  h.set_scalar(a, "tag", 9);
  Heap& r = crash_reload();
  ObjRef back = r.get_root("a");
  EXPECT_EQ(r.get_scalar(back, "v"), 5u);
  EXPECT_EQ(r.get_scalar(back, "tag"), 0u);
}

TEST_F(HeapTest, FlushScalarRejectsWideFields) {
  Heap& h = rt->create_heap("h", kSize);
  const auto& t =
      h.register_type(TypeDescriptor::instance("W").scalar("a").embedded("blob", 12).scalar("b", 1));
  ObjRef o = h.allocate(t);
  EXPECT_NO_THROW(h.flush_scalar(o, "a"));
  EXPECT_NO_THROW(h.flush_scalar(o, "b"));
  EXPECT_EQ(code_of([&] { h.flush_scalar(o, "blob"); }), Errc::TooWide);
  EXPECT_EQ(code_of([&] { h.flush_scalar(o, "none"); }), Errc::UnknownField);
  EXPECT_EQ(code_of([&] { h.flush_scalar(o, std::size_t{9}); }), Errc::UnknownField);
}

TEST_F(HeapTest, FlushObjectIssuesOneFence) {
  Heap& h = rt->create_heap("h", kSize);
  auto big = TypeDescriptor::instance("Big");
  for (int i = 0; i < 40; ++i) big.scalar("f" + std::to_string(i));
  ObjRef o = h.allocate(h.register_type(big));
  for (int i = 0; i < 40; ++i) h.set_scalar(o, "f" + std::to_string(i), i);
  const auto before = h.device().persist_point_count();
  h.flush_object(o);
  EXPECT_EQ(h.device().persist_point_count() - before, 1u);
}

TEST_F(HeapTest, FlushArrayElement) {
  Heap& h = rt->create_heap("h", kSize);
  const auto& arr = h.register_type(TypeDescriptor::array_of("u64[]", FieldKind::Scalar, 8));
  ObjRef a = h.allocate(arr, 4);
  h.set_root("a", a);
  h.set_element(a, 2, 123);
  h.flush_array_element(a, 2);
  h.set_element(a, 3, 456);
  EXPECT_EQ(code_of([&] { h.flush_array_element(a, 4); }), Errc::OutOfBounds);
  Heap& r = crash_reload();
  ObjRef b = r.get_root("a");
  EXPECT_EQ(r.get_element(b, 2), 123u);
  EXPECT_EQ(r.get_element(b, 3), 0u);
}

TEST_F(HeapTest, HeapBusyAndUnknownHeap) {
  rt->create_heap("h", kSize);
  EXPECT_EQ(code_of([&] { rt->load_heap("h"); }), Errc::HeapBusy);
  EXPECT_EQ(code_of([&] { rt->load_heap("nope"); }), Errc::UnknownHeap);
  EXPECT_EQ(code_of([&] { rt->close_heap("nope"); }), Errc::UnknownHeap);
}

TEST_F(HeapTest, LoadAtHintDoesNotRemap) {
  Heap& h = rt->create_heap("h", kSize);
  const auto base = h.base();
  Heap& r = reload();
  EXPECT_EQ(r.base(), base);
  EXPECT_FALSE(r.load_report().remapped);
}

TEST_F(HeapTest, RemapPreservesGraph) {
  Heap& h = rt->create_heap("h", 8 << 20);
  workloads::AllocOptions ao;
  ao.objects = 2000;
  workloads::run_alloc_workload(h, ao);
  const auto sig = workloads::traversal_signature(h);
  const auto base = h.base();
  LoadOptions lo;
  lo.deny_hint = true;
  Heap& r = reload(lo);
  EXPECT_NE(r.base(), base);
  EXPECT_TRUE(r.load_report().remapped);
  EXPECT_EQ(r.metadata().address_hint, r.base());
  EXPECT_EQ(workloads::traversal_signature(r), sig);
  EXPECT_TRUE(validate(r).ok());
  // Every stored reference now lies inside the new mapping.
  r.for_each_object([&](std::uint64_t off, const TypeDescriptor& d, std::uint64_t size) {
    r.for_each_slot(off, d, size, [&](std::uint64_t slot) {
      const auto w = r.device().read_u64(slot);
      if (w) {
        EXPECT_TRUE(r.contains(w));
      }
    });
  });
}

TEST_F(HeapTest, ZeroingNullifiesForeignReferences) {
  Heap& h = rt->create_heap("h", kSize);
  const auto& t = h.register_type(node_type());
  const auto& vt = rt->register_volatile_type(node_type());
  ObjRef a = h.allocate(t);
  ObjRef b = h.allocate(t);
  ObjRef v = rt->volatile_space().allocate(vt);
  h.set_ref(a, "next", v);
  h.set_ref(b, "next", a);
  h.flush_object(a);
  h.flush_object(b);
  h.set_root("a", a);
  h.set_root("b", b);

  Heap& ug = reload();
  EXPECT_EQ(ug.load_report().nullified, 0u);
  EXPECT_EQ(ug.get_ref(ug.get_root("a"), "next").space, Space::Volatile);

  LoadOptions zero;
  zero.safety = SafetyLevel::Zeroing;
  Heap& z = reload(zero);
  EXPECT_EQ(z.load_report().nullified, 1u);
  EXPECT_TRUE(z.get_ref(z.get_root("a"), "next").is_null());
  EXPECT_EQ(z.get_ref(z.get_root("b"), "next"), z.get_root("a"));
  Heap& again = reload(zero);
  EXPECT_EQ(again.load_report().nullified, 0u);
}

TEST_F(HeapTest, TornAllocationBecomesFiller) {
  Heap& h = rt->create_heap("h", kSize);
  const auto& t = h.register_type(node_type());
  ObjRef keep = h.allocate(t);
  h.set_root("keep", keep);
  auto dev = storage->device("h");
  // Crash right after top is persisted but before the header is.
  const auto point = dev->persist_point_count();
  dev->set_crash_policy(CrashPolicy{point + 2});
  EXPECT_THROW(h.allocate(t), InjectedCrash);
  dev->set_crash_policy(std::nullopt);
  Heap& r = crash_reload();
  EXPECT_TRUE(r.load_report().gap_repaired);
  auto v = validate(r);
  EXPECT_TRUE(v.ok()) << (v.errors.empty() ? "" : v.errors.front());
  EXPECT_EQ(v.objects, 1u);
  EXPECT_EQ(v.fillers, 1u);
  EXPECT_NO_THROW(r.allocate("Node"));
}

TEST_F(HeapTest, WalkerVisitsObjectsInOrder) {
  Heap& h = rt->create_heap("h", kSize);
  const auto& t = h.register_type(node_type());
  std::vector<std::uint64_t> offsets;
  for (int i = 0; i < 50; ++i) offsets.push_back(h.offset_of(h.allocate(t).address));
  std::vector<std::uint64_t> seen;
  h.for_each_object([&](std::uint64_t off, const TypeDescriptor&, std::uint64_t size) {
    seen.push_back(off);
    EXPECT_EQ(size, t.object_size());
  });
  EXPECT_EQ(seen, offsets);
}

TEST(Storage, DirectoryStoragePersistsAcrossRuntimes) {
  const auto dir = std::filesystem::temp_directory_path() / "pjh_heap_dir_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    Runtime rt(std::make_shared<DirectoryStorage>(dir.string()));
    Heap& h = rt.create_heap("disk", kSize);
    h.register_type(node_type());
    ObjRef a = h.allocate("Node");
    h.set_scalar(a, "v", 31337);
    h.flush_object(a);
    h.set_root("a", a);
  }
  {
    auto storage = std::make_shared<DirectoryStorage>(dir.string());
    EXPECT_EQ(storage->names(), std::vector<std::string>{"disk"});
    Runtime rt(storage);
    Heap& h = rt.load_heap("disk");
    EXPECT_EQ(h.get_scalar(h.get_root("a"), "v"), 31337u);
  }
  std::filesystem::remove_all(dir);
}

TEST(Storage, UnregisteredCreateIsInvisible) {
  auto storage = std::make_shared<SimulatedStorage>();
  storage->create_device("ghost", minimum_heap_size());
  EXPECT_FALSE(storage->exists("ghost"));
  Runtime rt(storage);
  EXPECT_EQ(code_of([&] { rt.load_heap("ghost"); }), Errc::UnknownHeap);
  EXPECT_NO_THROW(rt.create_heap("ghost", minimum_heap_size()));
}
