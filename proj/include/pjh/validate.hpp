// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pjh {

class Heap;

struct ValidationReport {
  std::vector<std::string> errors;
  std::uint64_t objects = 0;
  std::uint64_t fillers = 0;
  std::uint64_t object_bytes = 0;
  std::uint64_t klasses = 0;
  std::uint64_t roots = 0;
  std::uint64_t references = 0;
  std::uint64_t foreign_references = 0;
  std::uint64_t undo_records = 0;

  bool ok() const noexcept { return errors.empty(); }
};

/// Offline consistency check of a loaded heap: metadata, name table,
/// descriptors, a header walk that must end exactly at top, reference
/// targets, timestamps, the zeroed tail, bitmap state and the undo log.
ValidationReport validate(const Heap& heap);

}  // namespace pjh
