// SPDX-License-Identifier: Apache-2.0
#include "pjh/errors.hpp"

namespace pjh {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidCapacity: return "InvalidCapacity";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
    case Errc::NameExists: return "NameExists";
    case Errc::NameTooLong: return "NameTooLong";
    case Errc::NameTableFull: return "NameTableFull";
    case Errc::SizeTooSmall: return "SizeTooSmall";
    case Errc::UnknownHeap: return "UnknownHeap";
    case Errc::HeapBusy: return "HeapBusy";
    case Errc::CorruptImage: return "CorruptImage";
    case Errc::VolatileRef: return "VolatileRef";
    case Errc::NoSuchRoot: return "NoSuchRoot";
    case Errc::OutOfMemory: return "OutOfMemory";
    case Errc::ObjectTooLarge: return "ObjectTooLarge";
    case Errc::UnknownKlass: return "UnknownKlass";
    case Errc::UnknownField: return "UnknownField";
    case Errc::TooWide: return "TooWide";
    case Errc::SegmentFull: return "SegmentFull";
    case Errc::LayoutMismatch: return "LayoutMismatch";
    case Errc::CorruptDescriptor: return "CorruptDescriptor";
    case Errc::CorruptReference: return "CorruptReference";
    case Errc::GcInProgress: return "GcInProgress";
    case Errc::ClassCast: return "ClassCast";
    case Errc::NestedTransaction: return "NestedTransaction";
    case Errc::InactiveTransaction: return "InactiveTransaction";
    case Errc::UnregisteredType: return "UnregisteredType";
    case Errc::TransactionTooLarge: return "TransactionTooLarge";
  }
  return "Unknown";
}

}  // namespace pjh
