// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "pjh/crash_sweep.hpp"
#include "pjh/device.hpp"
#include "pjh/errors.hpp"
#include "pjh/name_table.hpp"

using namespace pjh;

namespace {
constexpr std::uint64_t kSlots = 16;
constexpr std::uint64_t kLoc = 0;
}  // namespace

TEST(NameTable, InsertFindAndReload) {
  PersistentDevice dev(kSlots * 64);
  NameTable t(dev, kLoc, kSlots);
  t.load();
  t.insert(EntryKind::Klass, "Point", 0x100);
  t.insert(EntryKind::Root, "Point", 0x2000);
  ASSERT_NE(t.find(EntryKind::Klass, "Point"), nullptr);
  EXPECT_EQ(t.find(EntryKind::Klass, "Point")->address, 0x100u);
  EXPECT_EQ(t.find(EntryKind::Root, "Point")->address, 0x2000u);
  EXPECT_EQ(t.find(EntryKind::Root, "Nope"), nullptr);

  dev.crash();
  NameTable again(dev, kLoc, kSlots);
  again.load();
  EXPECT_EQ(again.entries(EntryKind::Klass).size(), 1u);
  EXPECT_EQ(again.find(EntryKind::Root, "Point")->address, 0x2000u);
}

TEST(NameTable, InsertUsesTwoFences) {
  PersistentDevice dev(kSlots * 64);
  NameTable t(dev, kLoc, kSlots);
  t.load();
  const auto before = dev.persist_point_count();
  t.insert(EntryKind::Root, "r", 8);
  EXPECT_EQ(dev.persist_point_count() - before, 2u);
}

TEST(NameTable, CrashDuringInsertIsAllOrNothing) {
  PersistentDevice dev(kSlots * 64);
  NameTable t(dev, kLoc, kSlots);
  t.load();
  t.insert(EntryKind::Root, "keep", 16);
  FenceTrace trace;
  trace.attach(dev);
  t.insert(EntryKind::Root, "new", 0xABCD);
  trace.detach();

  auto results = replay_sweep(
      trace, [](std::size_t) { return true; },
      [](const std::shared_ptr<PersistentDevice>& d) -> std::string {
        NameTable r(*d, kLoc, kSlots);
        r.load();
        if (!r.find(EntryKind::Root, "keep")) return "lost an older entry";
        const auto* e = r.find(EntryKind::Root, "new");
        if (e && e->address != 0xABCD) return "entry visible with a torn address";
        return {};
      });
  ASSERT_EQ(results.size(), 3u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.detail;
}

TEST(NameTable, CollidingNamesProbe) {
  PersistentDevice dev(kSlots * 64);
  NameTable t(dev, kLoc, kSlots);
  t.load();
  // Enough names to force collisions in a 16-slot table.
  for (int i = 0; i < 12; ++i) t.insert(EntryKind::Root, "n" + std::to_string(i), 8u * (i + 1));
  for (int i = 0; i < 12; ++i) {
    const auto* e = t.find(EntryKind::Root, "n" + std::to_string(i));
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->address, 8u * (i + 1));
  }
}

TEST(NameTable, Errors) {
  PersistentDevice dev(4 * 64);
  NameTable t(dev, kLoc, 4);
  t.load();
  auto code = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::InvalidArgument;
  };
  EXPECT_EQ(code([&] { t.insert(EntryKind::Root, std::string(48, 'a'), 1); }), Errc::NameTooLong);
  EXPECT_NO_THROW(t.insert(EntryKind::Root, std::string(47, 'a'), 1));
  EXPECT_EQ(code([&] { t.insert(EntryKind::Root, std::string(47, 'a'), 2); }), Errc::NameExists);
  t.insert(EntryKind::Root, "b", 1);
  t.insert(EntryKind::Root, "c", 1);
  t.insert(EntryKind::Root, "d", 1);
  EXPECT_EQ(code([&] { t.insert(EntryKind::Root, "e", 1); }), Errc::NameTableFull);
}

TEST(NameTable, SetAddressPersists) {
  PersistentDevice dev(kSlots * 64);
  NameTable t(dev, kLoc, kSlots);
  t.load();
  auto slot = t.insert(EntryKind::Root, "r", 8);
  t.set_address(slot, 64);
  dev.crash();
  NameTable r(dev, kLoc, kSlots);
  r.load();
  EXPECT_EQ(r.find(EntryKind::Root, "r")->address, 64u);
}
