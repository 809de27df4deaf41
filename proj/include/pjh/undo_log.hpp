// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace pjh {

class PersistentDevice;

/// Word-granularity undo log in its own heap area.
///
/// Layout: a 32-byte header {txn id, record count, committed, reserved}
/// followed by 16-byte records {heap offset, old word}. A record counts
/// once the record count covering it is durable; the committed word is the
/// single commit point of a transaction.
class UndoLog {
 public:
  static constexpr std::uint64_t kHeaderSize = 32;
  static constexpr std::uint64_t kRecordSize = 16;

  enum class Recovery { Clean, RolledBack, Truncated };

  UndoLog(PersistentDevice& device, std::uint64_t location, std::uint64_t size);

  std::uint64_t txn_id() const;
  std::uint64_t record_count() const;
  bool committed() const;
  bool empty() const { return record_count() == 0 && !committed(); }
  std::uint64_t capacity() const noexcept { return (size_ - kHeaderSize) / kRecordSize; }

  /// Logs the current word at `heap_offset`: persists the record, then the
  /// new count. Throws TransactionTooLarge when the log is full.
  void append(std::uint64_t txn_id, std::uint64_t heap_offset);
  /// Persists the committed word.
  void commit();
  /// Clears the record count, then the committed word and txn id.
  void truncate();
  /// Restores every logged word, newest first, then truncates.
  void rollback();
  /// Brings the log to a clean state after a crash.
  Recovery recover();

 private:
  std::uint64_t record_offset(std::uint64_t i) const noexcept {
    return location_ + kHeaderSize + i * kRecordSize;
  }

  PersistentDevice& device_;
  std::uint64_t location_;
  std::uint64_t size_;
};

}  // namespace pjh
