// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pjh/device.hpp"

namespace pjh {

/// Records the line sets committed by every fence of a device, on top of
/// the durable image the device had when recording started.
///
/// Because a device's durable image only changes at fences, replaying the
/// first k recorded fences over the base image yields exactly the image a
/// crash anywhere between fence k and fence k+1 would leave behind.
class FenceTrace {
 public:
  void attach(PersistentDevice& device);
  void detach();

  std::size_t fence_count() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  /// Persist point number reported by the device for recorded fence `i` (1-based).
  std::uint64_t persist_point(std::size_t i) const noexcept { return first_point_ + i - 1; }
  const std::vector<std::uint8_t>& base_image() const noexcept { return base_; }
  std::span<const CommittedLine> fence_lines(std::size_t i) const;

  /// Durable image after the first `fences` recorded fences.
  std::vector<std::uint8_t> image_after(std::size_t fences) const;

 private:
  PersistentDevice* device_ = nullptr;
  std::vector<std::uint8_t> base_;
  std::vector<CommittedLine> lines_;
  std::vector<std::size_t> offsets_;
  std::uint64_t first_point_ = 0;
};

struct PointResult {
  std::size_t fences_applied;
  std::uint64_t persist_point;
  bool passed;
  std::string detail;
};

/// Returns an empty string when the crashed image passes, otherwise a diagnostic.
using CrashCheck = std::function<std::string(const std::shared_ptr<PersistentDevice>&)>;

/// Runs `check` once for every selected crash point of `trace` (0 means a
/// crash before the first recorded fence). Each check sees a freshly crashed
/// device; whatever it writes is rolled back before the next point.
std::vector<PointResult> replay_sweep(const FenceTrace& trace,
                                      const std::function<bool(std::size_t)>& select,
                                      const CrashCheck& check);

}  // namespace pjh
