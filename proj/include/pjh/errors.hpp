// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pjh {

enum class Errc {
  InvalidCapacity,
  OutOfBounds,
  InvalidArgument,
  IoError,
  NameExists,
  NameTooLong,
  NameTableFull,
  SizeTooSmall,
  UnknownHeap,
  HeapBusy,
  CorruptImage,
  VolatileRef,
  NoSuchRoot,
  OutOfMemory,
  ObjectTooLarge,
  UnknownKlass,
  UnknownField,
  TooWide,
  SegmentFull,
  LayoutMismatch,
  CorruptDescriptor,
  CorruptReference,
  GcInProgress,
  ClassCast,
  NestedTransaction,
  InactiveTransaction,
  UnregisteredType,
  TransactionTooLarge,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Thrown by PersistentDevice::fence when the configured crash point is
/// reached. The fence has already committed; the harness is expected to
/// call crash() and reopen from the durable image.
class InjectedCrash : public std::exception {
 public:
  explicit InjectedCrash(std::uint64_t point)
      : point_(point), what_("injected crash at persist point " + std::to_string(point)) {}

  std::uint64_t persist_point() const noexcept { return point_; }
  const char* what() const noexcept override { return what_.c_str(); }

 private:
  std::uint64_t point_;
  std::string what_;
};

}  // namespace pjh
