// SPDX-License-Identifier: Apache-2.0
#include "pjh/undo_log.hpp"

#include "pjh/device.hpp"
#include "pjh/errors.hpp"

namespace pjh {

namespace {
constexpr std::uint64_t kIdWord = 0;
constexpr std::uint64_t kCountWord = 8;
constexpr std::uint64_t kCommittedWord = 16;
}  // namespace

UndoLog::UndoLog(PersistentDevice& device, std::uint64_t location, std::uint64_t size)
    : device_(device), location_(location), size_(size) {}

std::uint64_t UndoLog::txn_id() const { return device_.read_u64(location_ + kIdWord); }

std::uint64_t UndoLog::record_count() const { return device_.read_u64(location_ + kCountWord); }

bool UndoLog::committed() const { return device_.read_u64(location_ + kCommittedWord) != 0; }

void UndoLog::append(std::uint64_t txn_id, std::uint64_t heap_offset) {
  const std::uint64_t n = record_count();
  if (n >= capacity()) {
    throw Error(Errc::TransactionTooLarge,
                "undo log holds at most " + std::to_string(capacity()) + " records");
  }
  const std::uint64_t at = record_offset(n);
  device_.write_u64(at, heap_offset);
  device_.write_u64(at + 8, device_.read_u64(heap_offset));
  device_.flush(at, kRecordSize);
  if (n == 0) {
    device_.write_u64(location_ + kIdWord, txn_id);
    device_.flush(location_ + kIdWord, 8);
  }
  device_.fence();
  device_.write_u64(location_ + kCountWord, n + 1);
  device_.flush(location_ + kCountWord, 8);
  device_.fence();
}

void UndoLog::commit() {
  device_.write_u64(location_ + kCommittedWord, 1);
  device_.flush(location_ + kCommittedWord, 8);
  device_.fence();
}

void UndoLog::truncate() {
  device_.write_u64(location_ + kCountWord, 0);
  device_.flush(location_ + kCountWord, 8);
  device_.fence();
  device_.write_u64(location_ + kCommittedWord, 0);
  device_.write_u64(location_ + kIdWord, 0);
  device_.flush(location_, kHeaderSize);
  device_.fence();
}

void UndoLog::rollback() {
  const std::uint64_t n = record_count();
  if (n > capacity()) throw Error(Errc::CorruptImage, "undo log record count exceeds capacity");
  for (std::uint64_t i = n; i-- > 0;) {
    const std::uint64_t at = record_offset(i);
    const std::uint64_t target = device_.read_u64(at);
    if (target % 8 != 0 || target + 8 > device_.capacity()) {
      throw Error(Errc::CorruptImage, "undo record points outside the heap");
    }
    device_.write_u64(target, device_.read_u64(at + 8));
    device_.flush(target, 8);
  }
  if (n > 0) device_.fence();
  truncate();
}

UndoLog::Recovery UndoLog::recover() {
  if (committed()) {
    truncate();
    return Recovery::Truncated;
  }
  if (record_count() > 0) {
    rollback();
    return Recovery::RolledBack;
  }
  if (txn_id() != 0) truncate();
  return Recovery::Clean;
}

}  // namespace pjh
