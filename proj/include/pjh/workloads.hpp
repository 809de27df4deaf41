// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pjh/crash_sweep.hpp"
#include "pjh/heap.hpp"
#include "pjh/pjo.hpp"

namespace pjh {
class Runtime;
class SimulatedStorage;
}  // namespace pjh

/// Deterministic workloads shared by the crash sweeps, the benchmarks, the
/// acceptance binary and heapctl.
namespace pjh::workloads {

/// Address-independent digest of the graph reachable from the roots,
/// visited breadth-first with roots in name order.
struct Signature {
  std::uint64_t hash = 0;
  std::uint64_t objects = 0;
  std::uint64_t bytes = 0;
  bool operator==(const Signature&) const = default;
};
Signature traversal_signature(const Heap& heap);

/// `count` instance types "W<i>" mixing scalar and reference fields.
std::vector<TypeDescriptor> make_types(std::size_t count);
void register_types(Heap& heap, const std::vector<TypeDescriptor>& types);

// ------------------------------------------------------------ allocation

struct AllocOptions {
  std::size_t objects = 10000;
  std::size_t types = 5;
  std::size_t roots = 10;
  std::uint64_t seed = 1;
};

/// Fence count of the trace at the moment each root binding became durable.
using RootLog = std::vector<std::pair<std::string, std::size_t>>;

/// Registers the types, allocates objects whose references point to earlier
/// objects, flushes each one, and binds roots evenly through the run. When
/// `trace` is given, the root log records its fence count after each bind.
RootLog run_alloc_workload(Heap& heap, const AllocOptions& options,
                           const FenceTrace* trace = nullptr);
std::uint64_t alloc_heap_size(const AllocOptions& options);

// -------------------------------------------------------------- GC graph

struct GraphOptions {
  std::size_t objects = 5000;
  double garbage = 0.4;
  std::size_t types = 5;
  std::size_t roots = 10;
  std::uint64_t seed = 7;
};

/// Builds a graph where exactly round(objects * (1 - garbage)) objects are
/// reachable; garbage objects are interleaved with live ones.
/// Returns the number of live objects.
std::size_t build_gc_graph(Heap& heap, const GraphOptions& options);
std::uint64_t gc_heap_size(const GraphOptions& options);

// ---------------------------------------------------------- transactions

/// Person entity of the BasicTest analog.
pjo::EntityDescriptor person_descriptor();

struct TxnOptions {
  std::size_t commits = 1000;
  std::size_t batch = 5;
  std::uint64_t seed = 11;
};

/// Called around each commit; `index` counts commits from 0.
struct CommitHooks {
  std::function<void(std::size_t index, pjo::Transaction&)> before;
  std::function<void(std::size_t index, pjo::Transaction&)> after;
};

/// BasicTest analog: create, update and delete commits over Person
/// entities in a fixed deterministic order.
void run_basic_transactions(pjo::EntityManager& em, const TxnOptions& options,
                            const CommitHooks& hooks = {});

// ---------------------------------------------------------------- sweeps

struct SweepOptions {
  std::size_t objects = 0;        // 0 keeps the workload default
  std::uint64_t seed = 1;
  std::size_t commits = 1000;     // txn workload
  std::size_t sampled_commits = 50;
  std::size_t max_failures = 10;  // failures kept in the report
  bool record_points = false;     // keep every point result, not only failures
};

struct SweepReport {
  std::string workload;
  std::size_t points = 0;
  std::size_t passed = 0;
  std::size_t fences = 0;
  std::vector<PointResult> failures;
  std::vector<PointResult> point_results;  // filled when record_points is set
  double seconds = 0;
  /// Extra counters specific to a workload (for example field-diff checks).
  std::map<std::string, std::uint64_t> counters;

  bool ok() const noexcept { return points > 0 && passed == points; }
};

/// Names accepted by run_sweep.
std::vector<std::string> sweep_workloads();
/// Crashes at every persist point of the named workload, recovers each image
/// and checks it against the workload's oracle.
SweepReport run_sweep(const std::string& workload, const SweepOptions& options = {});

// ------------------------------------------------------------ benchmarks

struct LoadRow {
  std::size_t objects = 0;
  double ug_ms = 0;
  double zero_ms = 0;
  std::uint64_t nullified = 0;
};

/// Median load times for heaps of each object count, for both safety levels.
std::vector<LoadRow> load_bench(const std::vector<std::size_t>& counts, std::size_t types,
                                std::size_t repetitions = 9, std::uint64_t seed = 3);

/// Coefficient of determination of the least-squares line through (x, y).
double linear_r2(const std::vector<double>& x, const std::vector<double>& y);

struct GcOverhead {
  GcStats with_fences;
  GcStats without_fences;
  bool isomorphic = false;
  double pause_ratio = 0;
  std::uint64_t heap_bytes = 0;
};

/// Collects two copies of one heap image, with and without fences.
GcOverhead gc_overhead(std::uint64_t heap_bytes, std::uint64_t seed = 5);

struct BenchRow {
  std::string suite;
  std::string name;
  std::string phase;
  std::uint64_t operations = 0;
  double ms = 0;
  std::uint64_t fences = 0;
};

std::vector<BenchRow> micro_bench(std::size_t operations, std::uint64_t seed = 1);
std::vector<BenchRow> jpab_bench(std::size_t entities, std::uint64_t seed = 1);

}  // namespace pjh::workloads
