// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pjh {

inline constexpr std::uint64_t kLineSize = 64;

using Line = std::array<std::uint8_t, kLineSize>;

/// One cache line as it became durable at a fence.
struct CommittedLine {
  std::uint64_t index;
  Line bytes;
};

struct CrashPolicy {
  std::uint64_t crash_at_point;
};

struct CrashReport {
  std::uint64_t persist_point;
  std::vector<std::uint8_t> durable_snapshot;
};

/// Simulated byte-addressable persistent memory.
///
/// Stores land in a volatile view. flush() captures the current content of
/// every dirty line it covers; fence() makes those captured lines durable,
/// all at once, and counts one persist point. crash() throws away
/// everything that is not durable. A line is the unit of durability: it is
/// never torn.
///
/// A device opened on a file writes every fenced line through to the file,
/// so the file always holds the durable image.
class PersistentDevice {
 public:
  using FenceHook = std::function<void(std::uint64_t point, std::span<const CommittedLine>)>;

  explicit PersistentDevice(std::uint64_t capacity);
  PersistentDevice(const PersistentDevice&) = delete;
  PersistentDevice& operator=(const PersistentDevice&) = delete;
  ~PersistentDevice();

  /// Device whose durable image starts as `image`.
  static std::unique_ptr<PersistentDevice> from_image(std::span<const std::uint8_t> image);
  /// Formats a new backing file (existing file is replaced).
  static std::unique_ptr<PersistentDevice> create_file(const std::string& path,
                                                       std::uint64_t capacity);
  static std::unique_ptr<PersistentDevice> open_file(const std::string& path);

  std::uint64_t capacity() const noexcept { return capacity_; }
  bool file_backed() const noexcept { return fd_ >= 0; }

  void write(std::uint64_t offset, std::span<const std::uint8_t> data);
  void read_into(std::uint64_t offset, std::span<std::uint8_t> out) const;
  std::vector<std::uint8_t> read(std::uint64_t offset, std::uint64_t len) const;

  std::uint64_t read_u64(std::uint64_t offset) const;
  void write_u64(std::uint64_t offset, std::uint64_t value);
  void fill(std::uint64_t offset, std::uint64_t len, std::uint8_t value);
  /// True when every byte of the range currently reads as zero.
  bool all_zero(std::uint64_t offset, std::uint64_t len) const;

  void flush(std::uint64_t offset, std::uint64_t len);
  std::uint64_t fence();
  /// Flushes every dirty line and fences once (a clean shutdown).
  std::uint64_t persist_all();

  CrashReport crash();

  std::uint64_t persist_point_count() const noexcept { return persist_points_; }
  std::uint64_t flush_count() const noexcept { return flushed_lines_; }
  bool has_unpersisted_lines() const noexcept;

  void set_crash_policy(std::optional<CrashPolicy> policy);
  void set_fence_hook(FenceHook hook) { fence_hook_ = std::move(hook); }

  /// Read-only view of what would survive a crash right now.
  std::span<const std::uint8_t> durable_image() const noexcept { return durable_; }
  /// Reads from the durable image only.
  std::vector<std::uint8_t> durable_read(std::uint64_t offset, std::uint64_t len) const;

  /// Installs committed lines directly into the durable image (trace replay).
  /// The device must hold no dirty or pending lines.
  void apply_committed(std::span<const CommittedLine> lines);

  /// Starts recording pre-images of every line a later fence changes, so
  /// restore_checkpoint() can undo all effects after the checkpoint.
  void mark_checkpoint();
  void restore_checkpoint();

  /// Writes the durable image in the device file format.
  void save_image(const std::string& path) const;
  static std::unique_ptr<PersistentDevice> load_image(const std::string& path);

 private:
  enum LineState : std::uint8_t { kDirty = 1, kTouched = 2, kSaved = 4 };

  void check_range(std::uint64_t offset, std::uint64_t len) const;
  void mark_written(std::uint64_t offset, std::uint64_t len);
  void write_through(std::span<const CommittedLine> lines);

  std::uint64_t capacity_;
  std::vector<std::uint8_t> durable_;
  std::vector<std::uint8_t> current_;
  std::vector<std::uint8_t> state_;
  std::vector<std::uint64_t> dirty_lines_;
  std::vector<std::uint64_t> touched_lines_;
  std::vector<std::int32_t> pending_slot_;
  std::vector<CommittedLine> pending_;
  std::uint64_t persist_points_ = 0;
  std::uint64_t flushed_lines_ = 0;
  std::optional<CrashPolicy> crash_policy_;
  FenceHook fence_hook_;

  bool checkpoint_active_ = false;
  std::vector<CommittedLine> checkpoint_preimages_;
  std::size_t dirty_compact_mark_ = 1024;

  int fd_ = -1;
};

/// Magic and header size of the device image file format.
inline constexpr char kDeviceMagic[8] = {'P', 'J', 'H', 'D', 'E', 'V', '0', '1'};
inline constexpr std::uint64_t kDeviceFileHeader = 16;

}  // namespace pjh
