// SPDX-License-Identifier: Apache-2.0
#include "pjh/crash_sweep.hpp"

#include <cstring>

#include "pjh/errors.hpp"

namespace pjh {

void FenceTrace::attach(PersistentDevice& device) {
  if (device.has_unpersisted_lines()) {
    throw Error(Errc::InvalidArgument, "trace must start on a quiescent device");
  }
  device_ = &device;
  auto image = device.durable_image();
  base_.assign(image.begin(), image.end());
  lines_.clear();
  offsets_.assign(1, 0);
  first_point_ = device.persist_point_count() + 1;
  device.set_fence_hook([this](std::uint64_t, std::span<const CommittedLine> lines) {
    lines_.insert(lines_.end(), lines.begin(), lines.end());
    offsets_.push_back(lines_.size());
  });
}

void FenceTrace::detach() {
  if (device_) device_->set_fence_hook({});
  device_ = nullptr;
}

std::span<const CommittedLine> FenceTrace::fence_lines(std::size_t i) const {
  if (i == 0 || i > fence_count()) throw Error(Errc::OutOfBounds, "no such recorded fence");
  return std::span<const CommittedLine>(lines_).subspan(offsets_[i - 1],
                                                        offsets_[i] - offsets_[i - 1]);
}

std::vector<std::uint8_t> FenceTrace::image_after(std::size_t fences) const {
  if (fences > fence_count()) throw Error(Errc::OutOfBounds, "no such recorded fence");
  std::vector<std::uint8_t> image = base_;
  for (std::size_t i = 0; i < offsets_[fences]; ++i) {
    std::memcpy(image.data() + lines_[i].index * kLineSize, lines_[i].bytes.data(), kLineSize);
  }
  return image;
}

std::vector<PointResult> replay_sweep(const FenceTrace& trace,
                                      const std::function<bool(std::size_t)>& select,
                                      const CrashCheck& check) {
  std::shared_ptr<PersistentDevice> device = PersistentDevice::from_image(trace.base_image());
  std::vector<PointResult> results;
  for (std::size_t applied = 0; applied <= trace.fence_count(); ++applied) {
    if (applied > 0) device->apply_committed(trace.fence_lines(applied));
    if (!select(applied)) continue;
    PointResult result{applied, applied == 0 ? 0 : trace.persist_point(applied), true, {}};
    device->mark_checkpoint();
    try {
      result.detail = check(device);
      result.passed = result.detail.empty();
    } catch (const std::exception& e) {
      result.passed = false;
      result.detail = std::string("exception: ") + e.what();
    }
    device->set_crash_policy(std::nullopt);
    device->restore_checkpoint();
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace pjh
